//! Multi-head attention with per-head capture/substitution hooks.
//!
//! The hook point is fixed for the whole crate: each head's output is taken
//! after attention-weighted value aggregation and any planted additive term,
//! but before concatenation and the output projection. `Record` copies that
//! matrix out, `Substitute` replaces it, `Passthrough` leaves it alone.
//! Because head contributions enter the layer output linearly through the
//! output projection, this is the cleanest point at which heads act as
//! mediators.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{softmax_rows, Tensor2};

/// The four attention-bearing components of the model.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum ModuleId {
    TextEnc,
    ImageEnc,
    /// Fusion sublayer where text queries attend to image features.
    FusionTextPart,
    /// Fusion sublayer where image queries attend to text features.
    FusionImagePart,
}

impl ModuleId {
    pub const ALL: [ModuleId; 4] = [
        ModuleId::TextEnc,
        ModuleId::ImageEnc,
        ModuleId::FusionTextPart,
        ModuleId::FusionImagePart,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModuleId::TextEnc => "text_enc",
            ModuleId::ImageEnc => "image_enc",
            ModuleId::FusionTextPart => "fusion_text_part",
            ModuleId::FusionImagePart => "fusion_image_part",
        }
    }
}

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModuleId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text_enc" => Ok(ModuleId::TextEnc),
            "image_enc" => Ok(ModuleId::ImageEnc),
            "fusion_text_part" => Ok(ModuleId::FusionTextPart),
            "fusion_image_part" => Ok(ModuleId::FusionImagePart),
            other => Err(Error::BadExperimentConfig {
                field: "module".into(),
                message: format!(
                    "unknown module {other:?} (expected text_enc, image_enc, \
                     fusion_text_part, or fusion_image_part)"
                ),
            }),
        }
    }
}

/// Address of one attention head: (module, layer, head), all 0-based.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct HeadAddress {
    pub module: ModuleId,
    pub layer: usize,
    pub head: usize,
}

impl HeadAddress {
    pub fn new(module: ModuleId, layer: usize, head: usize) -> Self {
        Self { module, layer, head }
    }
}

impl fmt::Display for HeadAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.layer{}.head{}", self.module, self.layer, self.head)
    }
}

/// What a hook does when the forward pass reaches its head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HookMode {
    Passthrough,
    /// Copy the head output into the hook's buffer.
    Record,
    /// Replace the head output with the hook's buffer.
    Substitute,
}

/// A capture/patch slot for one head.
#[derive(Debug, Clone)]
pub struct HeadHook {
    pub mode: HookMode,
    pub buffer: Option<Tensor2>,
}

impl HeadHook {
    pub fn record() -> Self {
        Self {
            mode: HookMode::Record,
            buffer: None,
        }
    }

    pub fn substitute(buffer: Tensor2) -> Self {
        Self {
            mode: HookMode::Substitute,
            buffer: Some(buffer),
        }
    }
}

/// Hooks for a forward pass, keyed by head address. Owned by the caller;
/// recorded buffers land back here.
#[derive(Debug, Clone, Default)]
pub struct HookMap {
    hooks: HashMap<HeadAddress, HeadHook>,
}

impl HookMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record hooks on every address in `addrs`.
    pub fn recording<I: IntoIterator<Item = HeadAddress>>(addrs: I) -> Self {
        let hooks = addrs
            .into_iter()
            .map(|a| (a, HeadHook::record()))
            .collect();
        Self { hooks }
    }

    pub fn insert(&mut self, addr: HeadAddress, hook: HeadHook) {
        self.hooks.insert(addr, hook);
    }

    pub fn get(&self, addr: &HeadAddress) -> Option<&HeadHook> {
        self.hooks.get(addr)
    }

    pub fn is_empty(&self) -> bool {
        self.hooks.is_empty()
    }

    pub fn len(&self) -> usize {
        self.hooks.len()
    }

    pub fn addresses(&self) -> impl Iterator<Item = &HeadAddress> {
        self.hooks.keys()
    }

    /// Turn every recorded buffer into a substitution for a second pass.
    /// Fails if any hook never captured.
    pub fn into_substituting(self) -> Result<Self> {
        let mut hooks = HashMap::with_capacity(self.hooks.len());
        for (addr, hook) in self.hooks {
            match hook.buffer {
                Some(buf) => {
                    hooks.insert(addr, HeadHook::substitute(buf));
                }
                None => return Err(Error::MissingBuffer { addr }),
            }
        }
        Ok(Self { hooks })
    }

    fn hook_mut(&mut self, addr: &HeadAddress) -> Option<&mut HeadHook> {
        self.hooks.get_mut(addr)
    }
}

/// Additive term planted at one head of the current layer: `coeff * dir` is
/// added to the head output at every position before the hook acts.
#[derive(Debug, Clone)]
pub struct HeadAdditive {
    pub head: usize,
    pub coeff: f64,
    pub dir: Vec<f64>,
}

/// Projection weights for one attention layer. All matrices are `d×d`; the
/// head count divides `d`.
#[derive(Debug, Clone)]
pub struct MhaWeights {
    pub w_q: Tensor2,
    pub w_k: Tensor2,
    pub w_v: Tensor2,
    pub w_o: Tensor2,
    pub heads: usize,
}

impl MhaWeights {
    pub fn validate(&self) -> Result<()> {
        let d = self.w_q.rows();
        for (name, m) in [
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("w_o", &self.w_o),
        ] {
            if m.shape() != (d, d) {
                return Err(Error::ShapeMismatch {
                    op: "MhaWeights",
                    expected: format!("{d}x{d} {name}"),
                    got: format!("{}x{}", m.rows(), m.cols()),
                });
            }
        }
        if self.heads == 0 || d % self.heads != 0 {
            return Err(Error::BadModelConfig(format!(
                "model dim {d} not divisible by {} heads",
                self.heads
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }
}

/// Multi-head attention forward pass.
///
/// Queries come from `x_q`, keys and values from `x_kv` (pass the same
/// tensor for self-attention). Scores are scaled by 1/sqrt(head_dim). For
/// each head, any additive term in `adds` is applied first, then the hook
/// for `(module, layer, head)` acts. Returns the concatenated head outputs
/// times the output projection; no residual is added here.
///
/// Terms with `coeff == 0.0` are skipped entirely, so a zero-strength
/// additive leaves the pass bit-identical to one without it.
pub fn mha_forward(
    x_q: &Tensor2,
    x_kv: &Tensor2,
    weights: &MhaWeights,
    module: ModuleId,
    layer: usize,
    adds: &[HeadAdditive],
    hooks: &mut HookMap,
) -> Result<Tensor2> {
    weights.validate()?;
    let d = weights.dim();
    if x_q.cols() != d || x_kv.cols() != d {
        return Err(Error::ShapeMismatch {
            op: "mha_forward",
            expected: format!("inputs with {d} cols"),
            got: format!("{} / {}", x_q.cols(), x_kv.cols()),
        });
    }
    let dh = weights.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let q = x_q.matmul(&weights.w_q)?;
    let k = x_kv.matmul(&weights.w_k)?;
    let v = x_kv.matmul(&weights.w_v)?;

    let mut concat = Tensor2::zeros(x_q.rows(), d)?;
    for h in 0..weights.heads {
        let lo = h * dh;
        let hi = lo + dh;
        let q_h = q.slice_cols(lo, hi)?;
        let k_h = k.slice_cols(lo, hi)?;
        let v_h = v.slice_cols(lo, hi)?;

        let scores = q_h.matmul_transposed(&k_h)?.scale(scale)?;
        let attn = softmax_rows(&scores)?;
        let mut head_out = attn.matmul(&v_h)?;

        for add in adds.iter().filter(|a| a.head == h && a.coeff != 0.0) {
            if add.dir.len() != dh {
                return Err(Error::ShapeMismatch {
                    op: "head additive",
                    expected: format!("direction of length {dh}"),
                    got: format!("{}", add.dir.len()),
                });
            }
            for r in 0..head_out.rows() {
                let row = head_out.row_mut(r);
                for (o, &u) in row.iter_mut().zip(&add.dir) {
                    *o += add.coeff * u;
                }
            }
        }

        let addr = HeadAddress::new(module, layer, h);
        if let Some(hook) = hooks.hook_mut(&addr) {
            match hook.mode {
                HookMode::Passthrough => {}
                HookMode::Record => hook.buffer = Some(head_out.clone()),
                HookMode::Substitute => {
                    let buf = hook
                        .buffer
                        .as_ref()
                        .ok_or(Error::MissingBuffer { addr })?;
                    if buf.shape() != head_out.shape() {
                        return Err(Error::BufferShape {
                            addr,
                            expected: format!("{:?}", head_out.shape()),
                            got: format!("{:?}", buf.shape()),
                        });
                    }
                    head_out = buf.clone();
                }
            }
        }

        concat.write_cols(lo, &head_out)?;
    }

    concat.matmul(&weights.w_o)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::seeded_init;

    fn identity(d: usize) -> Tensor2 {
        let mut m = Tensor2::zeros(d, d).unwrap();
        for i in 0..d {
            m.set(i, i, 1.0);
        }
        m
    }

    fn random_weights(seed: u64, d: usize, heads: usize) -> MhaWeights {
        MhaWeights {
            w_q: seeded_init(seed, d, d, 0.3).unwrap(),
            w_k: seeded_init(seed + 1, d, d, 0.3).unwrap(),
            w_v: seeded_init(seed + 2, d, d, 0.3).unwrap(),
            w_o: seeded_init(seed + 3, d, d, 0.3).unwrap(),
            heads,
        }
    }

    #[test]
    fn single_token_identity_projections() {
        let d = 4;
        let w = MhaWeights {
            w_q: identity(d),
            w_k: identity(d),
            w_v: identity(d),
            w_o: identity(d),
            heads: 1,
        };
        let x = Tensor2::from_vec(1, d, vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let mut hooks = HookMap::new();
        let y = mha_forward(&x, &x, &w, ModuleId::TextEnc, 0, &[], &mut hooks).unwrap();
        // Attention over one position is that position's value vector.
        assert!(y.max_abs_diff(&x) < 1e-15);
    }

    #[test]
    fn record_then_substitute_is_identity() {
        let d = 8;
        let heads = 2;
        let w = random_weights(40, d, heads);
        let x = seeded_init(50, 5, d, 1.0).unwrap();

        let mut plain = HookMap::new();
        let base = mha_forward(&x, &x, &w, ModuleId::ImageEnc, 1, &[], &mut plain).unwrap();

        let addrs =
            (0..heads).map(|h| HeadAddress::new(ModuleId::ImageEnc, 1, h));
        let mut rec = HookMap::recording(addrs);
        let recorded =
            mha_forward(&x, &x, &w, ModuleId::ImageEnc, 1, &[], &mut rec).unwrap();
        assert_eq!(base, recorded);

        let mut sub = rec.into_substituting().unwrap();
        let patched = mha_forward(&x, &x, &w, ModuleId::ImageEnc, 1, &[], &mut sub).unwrap();
        assert_eq!(base, patched);
    }

    #[test]
    fn substituting_zeros_removes_head_contribution() {
        let d = 8;
        let heads = 2;
        let w = random_weights(60, d, heads);
        let x = seeded_init(61, 4, d, 1.0).unwrap();
        let target = HeadAddress::new(ModuleId::TextEnc, 0, 1);

        let mut plain = HookMap::new();
        let base = mha_forward(&x, &x, &w, ModuleId::TextEnc, 0, &[], &mut plain).unwrap();

        // Capture the head, compute its contribution through w_o by hand.
        let mut rec = HookMap::recording([target]);
        mha_forward(&x, &x, &w, ModuleId::TextEnc, 0, &[], &mut rec).unwrap();
        let head_out = rec.get(&target).unwrap().buffer.clone().unwrap();
        let dh = d / heads;
        let mut padded = Tensor2::zeros(4, d).unwrap();
        padded.write_cols(1 * dh, &head_out).unwrap();
        let contribution = padded.matmul(&w.w_o).unwrap();

        let zeros = Tensor2::zeros(4, dh).unwrap();
        let mut sub = HookMap::new();
        sub.insert(target, HeadHook::substitute(zeros));
        let patched = mha_forward(&x, &x, &w, ModuleId::TextEnc, 0, &[], &mut sub).unwrap();

        let expected = base.add(&contribution.scale(-1.0).unwrap()).unwrap();
        assert!(patched.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn substitute_rejects_shape_mismatch() {
        let d = 8;
        let w = random_weights(70, d, 2);
        let x = seeded_init(71, 4, d, 1.0).unwrap();
        let addr = HeadAddress::new(ModuleId::TextEnc, 0, 0);
        let mut hooks = HookMap::new();
        hooks.insert(addr, HeadHook::substitute(Tensor2::zeros(3, 4).unwrap()));
        let err = mha_forward(&x, &x, &w, ModuleId::TextEnc, 0, &[], &mut hooks);
        assert!(matches!(err, Err(Error::BufferShape { .. })));
    }

    #[test]
    fn zero_coeff_additive_is_bit_exact_noop() {
        let d = 8;
        let w = random_weights(80, d, 2);
        let x = seeded_init(81, 4, d, 1.0).unwrap();
        let mut h1 = HookMap::new();
        let base = mha_forward(&x, &x, &w, ModuleId::ImageEnc, 0, &[], &mut h1).unwrap();
        let adds = vec![HeadAdditive {
            head: 0,
            coeff: 0.0,
            dir: vec![1.0; d / 2],
        }];
        let mut h2 = HookMap::new();
        let with = mha_forward(&x, &x, &w, ModuleId::ImageEnc, 0, &adds, &mut h2).unwrap();
        assert_eq!(base, with);
    }
}
