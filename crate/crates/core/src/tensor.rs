//! Dense row-major f64 matrices and the layer primitives built on them.
//!
//! Everything is 64-bit and pure: an operation on the same inputs returns a
//! bit-identical result on every platform. Shapes are validated eagerly and
//! all public entry points reject non-finite outputs.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Row-major 2-D tensor of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::ZeroDim { rows, cols });
        }
        Ok(Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::ZeroDim { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                expected: format!("{} values", rows * cols),
                got: format!("{}", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_finite(self, op: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite(op))
        }
    }

    /// `self (r×k) · other (k×c)` with the inner loop over k, row-major
    /// friendly on both operands. Accumulation order is fixed (k ascending),
    /// so results are bit-stable.
    pub fn matmul(&self, other: &Tensor2) -> Result<Tensor2> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                expected: format!("inner dim {}", self.cols),
                got: format!("{}x{}", other.rows, other.cols),
            });
        }
        let mut out = Tensor2::zeros(self.rows, other.cols)?;
        for i in 0..self.rows {
            let a_row = self.row(i);
            let o_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = other.row(k);
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out.check_finite("matmul")
    }

    /// `self · otherᵀ`, used for attention scores.
    pub fn matmul_transposed(&self, other: &Tensor2) -> Result<Tensor2> {
        if self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                op: "matmul_transposed",
                expected: format!("inner dim {}", self.cols),
                got: format!("{}x{}", other.rows, other.cols),
            });
        }
        let mut out = Tensor2::zeros(self.rows, other.rows)?;
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                let b_row = other.row(j);
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                out.data[i * other.rows + j] = acc;
            }
        }
        out.check_finite("matmul_transposed")
    }

    pub fn add(&self, other: &Tensor2) -> Result<Tensor2> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                expected: format!("{}x{}", self.rows, self.cols),
                got: format!("{}x{}", other.rows, other.cols),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data,
        }
        .check_finite("add")
    }

    pub fn scale(&self, s: f64) -> Result<Tensor2> {
        let data = self.data.iter().map(|a| a * s).collect();
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data,
        }
        .check_finite("scale")
    }

    /// Copy of columns `lo..hi` of every row.
    pub fn slice_cols(&self, lo: usize, hi: usize) -> Result<Tensor2> {
        if lo >= hi || hi > self.cols {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                expected: format!("0 <= lo < hi <= {}", self.cols),
                got: format!("{lo}..{hi}"),
            });
        }
        let mut out = Tensor2::zeros(self.rows, hi - lo)?;
        for r in 0..self.rows {
            out.row_mut(r).copy_from_slice(&self.row(r)[lo..hi]);
        }
        Ok(out)
    }

    /// Write `block` into columns `lo..` of every row.
    pub fn write_cols(&mut self, lo: usize, block: &Tensor2) -> Result<()> {
        if block.rows != self.rows || lo + block.cols > self.cols {
            return Err(Error::ShapeMismatch {
                op: "write_cols",
                expected: format!("{} rows, cols <= {}", self.rows, self.cols - lo),
                got: format!("{}x{}", block.rows, block.cols),
            });
        }
        for r in 0..self.rows {
            self.row_mut(r)[lo..lo + block.cols].copy_from_slice(block.row(r));
        }
        Ok(())
    }

    /// Max absolute elementwise difference; shapes must already match.
    pub fn max_abs_diff(&self, other: &Tensor2) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Deterministic matrix fill: entries are drawn row by row, left to right,
/// uniformly from [-scale, scale) out of a [`SplitMix64`] stream seeded with
/// `seed`. The (seed, rows, cols, scale) tuple fully determines every bit.
pub fn seeded_init(seed: u64, rows: usize, cols: usize, scale: f64) -> Result<Tensor2> {
    if rows == 0 || cols == 0 {
        return Err(Error::ZeroDim { rows, cols });
    }
    if !(scale > 0.0) {
        return Err(Error::NonPositiveScale(scale));
    }
    let mut rng = SplitMix64::new(seed);
    let data = (0..rows * cols)
        .map(|_| rng.next_symmetric(scale))
        .collect();
    Ok(Tensor2 { rows, cols, data })
}

/// Row-wise layer normalization with affine output.
///
/// Each row is shifted to zero mean and scaled to unit variance (population
/// variance, stabilized by `eps`), then multiplied by `gain` and offset by
/// `bias` elementwise.
pub fn layer_norm(x: &Tensor2, gain: &[f64], bias: &[f64], eps: f64) -> Result<Tensor2> {
    if gain.len() != x.cols() || bias.len() != x.cols() {
        return Err(Error::ShapeMismatch {
            op: "layer_norm",
            expected: format!("gain/bias of length {}", x.cols()),
            got: format!("{}/{}", gain.len(), bias.len()),
        });
    }
    if !(eps > 0.0) {
        return Err(Error::NonPositiveScale(eps));
    }
    let n = x.cols() as f64;
    let mut out = Tensor2::zeros(x.rows(), x.cols())?;
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        for (c, &v) in row.iter().enumerate() {
            out.set(r, c, (v - mean) * inv * gain[c] + bias[c]);
        }
    }
    out.check_finite("layer_norm")
}

/// Row-wise softmax, stabilized by subtracting each row's maximum.
pub fn softmax_rows(x: &Tensor2) -> Result<Tensor2> {
    if !x.is_finite() {
        return Err(Error::NonFinite("softmax_rows input"));
    }
    let mut out = Tensor2::zeros(x.rows(), x.cols())?;
    for r in 0..x.rows() {
        let row = x.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let out_row = out.row_mut(r);
        let mut sum = 0.0;
        for (o, &v) in out_row.iter_mut().zip(row) {
            *o = (v - max).exp();
            sum += *o;
        }
        for o in out_row.iter_mut() {
            *o /= sum;
        }
    }
    out.check_finite("softmax_rows")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_init_is_deterministic() {
        let a = seeded_init(7, 2, 2, 0.1).unwrap();
        let b = seeded_init(7, 2, 2, 0.1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn seeded_init_seeds_differ() {
        let a = seeded_init(7, 3, 3, 0.1).unwrap();
        let b = seeded_init(8, 3, 3, 0.1).unwrap();
        assert!(a.data().iter().zip(b.data()).any(|(x, y)| x != y));
    }

    #[test]
    fn seeded_init_rejects_bad_args() {
        assert!(matches!(
            seeded_init(7, 2, 2, 0.0),
            Err(Error::NonPositiveScale(_))
        ));
        assert!(matches!(seeded_init(7, 0, 2, 1.0), Err(Error::ZeroDim { .. })));
        assert!(matches!(
            seeded_init(7, 2, 2, f64::NAN),
            Err(Error::NonPositiveScale(_))
        ));
    }

    #[test]
    fn layer_norm_constant_row_maps_to_bias() {
        let x = Tensor2::from_vec(1, 3, vec![3.0, 3.0, 3.0]).unwrap();
        let y = layer_norm(&x, &[1.0; 3], &[0.0; 3], 1e-12).unwrap();
        for &v in y.data() {
            assert!(v.abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_identity_on_normalized_row() {
        let x = Tensor2::from_vec(1, 2, vec![1.0, -1.0]).unwrap();
        let y = layer_norm(&x, &[1.0; 2], &[0.0; 2], 1e-15).unwrap();
        assert!((y.get(0, 0) - 1.0).abs() < 1e-7);
        assert!((y.get(0, 1) + 1.0).abs() < 1e-7);
    }

    #[test]
    fn layer_norm_standardizes_random_rows() {
        let x = seeded_init(11, 4, 16, 2.0).unwrap();
        let y = layer_norm(&x, &[1.0; 16], &[0.0; 16], 1e-12).unwrap();
        for r in 0..y.rows() {
            let row = y.row(r);
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-9, "row mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "row var {var}");
        }
    }

    #[test]
    fn layer_norm_rejects_length_mismatch() {
        let x = Tensor2::zeros(1, 3).unwrap();
        assert!(layer_norm(&x, &[1.0; 2], &[0.0; 3], 1e-9).is_err());
    }

    #[test]
    fn softmax_uniform_row() {
        let x = Tensor2::from_vec(1, 4, vec![0.0; 4]).unwrap();
        let y = softmax_rows(&x).unwrap();
        for &v in y.data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_survives_large_logits() {
        let x = Tensor2::from_vec(1, 2, vec![1000.0, 0.0]).unwrap();
        let y = softmax_rows(&x).unwrap();
        assert!((y.get(0, 0) - 1.0).abs() < 1e-12);
        assert!(y.get(0, 1).abs() < 1e-12);
    }

    #[test]
    fn matmul_known_product() {
        let a = Tensor2::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor2::from_vec(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_transposed_matches_matmul() {
        let a = seeded_init(1, 3, 5, 1.0).unwrap();
        let b = seeded_init(2, 4, 5, 1.0).unwrap();
        // bᵀ built by hand
        let mut bt = Tensor2::zeros(5, 4).unwrap();
        for r in 0..4 {
            for c in 0..5 {
                bt.set(c, r, b.get(r, c));
            }
        }
        let via_t = a.matmul_transposed(&b).unwrap();
        let via_m = a.matmul(&bt).unwrap();
        assert!(via_t.max_abs_diff(&via_m) < 1e-12);
    }
}
