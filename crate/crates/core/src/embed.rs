//! Feature layout shared by the text and image streams.
//!
//! The model dimension is split into two regions:
//!
//! * **content coordinates** `0 .. d-r` — category blocks, the person
//!   block, the period word, and one margin coordinate. Attention reads
//!   and writes these.
//! * **carrier coordinates** `d-r .. d` (`r` = half the head dim) — the
//!   subspace where category signatures and planted bias terms live.
//!   Every attention projection has zero rows there, so carrier content
//!   rides the residual stream untouched and is read only by the
//!   word–region scoring dot product at the end.
//!
//! The split is what makes planted bias exactly attributable: two forward
//! passes that differ only in planted-term signs have bit-identical
//! attention everywhere, so patching a head is equivalent to re-running
//! with that head's planted term re-signed.
//!
//! Content coordinates, low to high: category blocks (equal width, one per
//! category), idle padding, the gender coordinate (used only in entangled
//! mode), the period coordinate, two person coordinates, and the margin
//! coordinate. The margin coordinate carries `+margin_image` on every cell
//! and `-margin_text` on every category word, which places all mismatched
//! cell–word dots below zero by a fixed offset.
//!
//! Category `i` gets the signature `sign * sig_scale * e_(i mod r)` with
//! `sign = +1` for `i / r` even and `-1` odd, so categories `i` and `i + r`
//! carry opposite signatures: one planted term pushes them toward opposite
//! genders, the planted analogue of the indoor/outdoor asymmetry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inputs::{CellContent, Gender, Vocab};

/// How gender reaches the computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GenderMode {
    /// Gender exists only in the side channel; `man`/`woman`/`person`
    /// embeddings and person appearances are identical, so every
    /// gender-dependent bit of output is attributable to planted terms.
    #[default]
    SideChannel,
    /// Gender is additionally folded into the embeddings (distinct
    /// `man`/`woman` vectors, gendered person appearance). More realistic,
    /// but without an exact oracle.
    Entangled,
}

/// Coordinate layout and embedding constructor.
#[derive(Debug, Clone)]
pub struct EmbedLayout {
    pub d: usize,
    /// Carrier width r (also the per-head carrier width).
    pub carrier: usize,
    pub n_categories: usize,
    pub block_width: usize,
    pub feat_scale: f64,
    pub margin_text: f64,
    pub margin_image: f64,
    pub sig_scale: f64,
    pub gender_delta: f64,
    pub mode: GenderMode,
}

impl EmbedLayout {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        d: usize,
        head_dim: usize,
        n_categories: usize,
        feat_scale: f64,
        margin_text: f64,
        margin_image: f64,
        sig_scale: f64,
        gender_delta: f64,
        mode: GenderMode,
    ) -> Result<Self> {
        if head_dim < 2 {
            return Err(Error::BadModelConfig(format!(
                "head dim {head_dim} too small to reserve carrier coordinates"
            )));
        }
        let carrier = head_dim / 2;
        let content = d
            .checked_sub(carrier + 5)
            .ok_or_else(|| Error::BadModelConfig(format!("model dim {d} too small")))?;
        let block_width = content / n_categories;
        if block_width == 0 {
            return Err(Error::BadModelConfig(format!(
                "model dim {d} leaves no room for {n_categories} category blocks"
            )));
        }
        for (name, v) in [
            ("feat_scale", feat_scale),
            ("sig_scale", sig_scale),
        ] {
            if !(v > 0.0) {
                return Err(Error::BadModelConfig(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [
            ("margin_text", margin_text),
            ("margin_image", margin_image),
            ("gender_delta", gender_delta),
        ] {
            if !(v >= 0.0) {
                return Err(Error::BadModelConfig(format!(
                    "{name} must be >= 0, got {v}"
                )));
            }
        }
        Ok(Self {
            d,
            carrier,
            n_categories,
            block_width,
            feat_scale,
            margin_text,
            margin_image,
            sig_scale,
            gender_delta,
            mode,
        })
    }

    pub fn carrier_start(&self) -> usize {
        self.d - self.carrier
    }

    pub fn margin_coord(&self) -> usize {
        self.d - self.carrier - 1
    }

    pub fn person_coords(&self) -> [usize; 2] {
        [self.d - self.carrier - 3, self.d - self.carrier - 2]
    }

    pub fn period_coord(&self) -> usize {
        self.d - self.carrier - 4
    }

    pub fn gender_coord(&self) -> usize {
        self.d - self.carrier - 5
    }

    /// Carrier coordinate and sign of category `i`'s signature.
    pub fn signature(&self, category: usize) -> (usize, f64) {
        let coord = self.carrier_start() + category % self.carrier;
        let sign = if (category / self.carrier) % 2 == 0 {
            1.0
        } else {
            -1.0
        };
        (coord, sign)
    }

    fn category_block(&self, out: &mut [f64], category: usize) {
        let start = category * self.block_width;
        let v = self.feat_scale / (self.block_width as f64).sqrt();
        for slot in &mut out[start..start + self.block_width] {
            *slot = v;
        }
    }

    fn person_block(&self, out: &mut [f64]) {
        let v = self.feat_scale / (2.0f64).sqrt();
        for c in self.person_coords() {
            out[c] = v;
        }
    }

    /// Text embedding for one vocabulary word.
    pub fn text_embedding(&self, vocab: &Vocab, token: usize) -> Vec<f64> {
        let mut e = vec![0.0; self.d];
        if vocab.is_category(token) {
            self.category_block(&mut e, token);
            e[self.margin_coord()] = -self.margin_text;
            let (coord, sign) = self.signature(token);
            e[coord] = sign * self.sig_scale;
        } else if token == vocab.period_id() {
            e[self.period_coord()] = 0.5 * self.feat_scale;
        } else {
            // person / man / woman share the person block; entangled mode
            // separates man and woman along the gender coordinate.
            self.person_block(&mut e);
            if self.mode == GenderMode::Entangled {
                if token == vocab.man_id() {
                    e[self.gender_coord()] = self.gender_delta;
                } else if token == vocab.woman_id() {
                    e[self.gender_coord()] = -self.gender_delta;
                }
            }
        }
        e
    }

    /// Appearance vector for a cell, before any generator jitter.
    ///
    /// `gender` matters only in entangled mode, where the person appearance
    /// carries a gendered offset. In side-channel mode the person
    /// appearance equals [`EmbedLayout::mask_vector`] exactly.
    pub fn appearance(&self, content: CellContent, gender: Option<Gender>) -> Vec<f64> {
        let mut a = vec![0.0; self.d];
        a[self.margin_coord()] = self.margin_image;
        match content {
            CellContent::Empty => {}
            CellContent::Object(c) => {
                self.category_block(&mut a, c);
                let (coord, sign) = self.signature(c);
                a[coord] = sign * self.sig_scale;
            }
            CellContent::Person => {
                self.person_block(&mut a);
                if self.mode == GenderMode::Entangled {
                    if let Some(g) = gender {
                        a[self.gender_coord()] = g.sign() * self.gender_delta;
                    }
                }
            }
        }
        a
    }

    /// The masked-person appearance substituted by the mask-gender
    /// intervention: a gender-free person cell.
    pub fn mask_vector(&self) -> Vec<f64> {
        let mut a = vec![0.0; self.d];
        a[self.margin_coord()] = self.margin_image;
        self.person_block(&mut a);
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> EmbedLayout {
        EmbedLayout::new(32, 8, 8, 3.0, 1.5, 2.0, 1.3, 0.8, GenderMode::SideChannel).unwrap()
    }

    #[test]
    fn regions_do_not_overlap() {
        let l = layout();
        let mut used = vec![0u32; l.d];
        for c in 0..l.n_categories {
            for i in c * l.block_width..(c + 1) * l.block_width {
                used[i] += 1;
            }
        }
        for c in [l.gender_coord(), l.period_coord(), l.margin_coord()] {
            used[c] += 1;
        }
        for c in l.person_coords() {
            used[c] += 1;
        }
        // signatures share carrier coords by design; count the region once
        for c in l.carrier_start()..l.d {
            used[c] += 1;
        }
        assert!(used.iter().all(|&u| u <= 1), "overlapping coords: {used:?}");
    }

    #[test]
    fn paired_categories_have_opposite_signatures() {
        let l = layout();
        let (c0, s0) = l.signature(0);
        let (c4, s4) = l.signature(4);
        assert_eq!(c0, c4);
        assert_eq!(s0, -s4);
    }

    #[test]
    fn side_channel_gender_words_are_identical() {
        let l = layout();
        let v = Vocab::new(&(0..8).map(|i| format!("c{i}")).collect::<Vec<_>>()).unwrap();
        let man = l.text_embedding(&v, v.man_id());
        let woman = l.text_embedding(&v, v.woman_id());
        let person = l.text_embedding(&v, v.person_id());
        assert_eq!(man, woman);
        assert_eq!(man, person);
    }

    #[test]
    fn entangled_gender_words_differ() {
        let mut l = layout();
        l.mode = GenderMode::Entangled;
        let v = Vocab::new(&(0..8).map(|i| format!("c{i}")).collect::<Vec<_>>()).unwrap();
        assert_ne!(l.text_embedding(&v, v.man_id()), l.text_embedding(&v, v.woman_id()));
    }

    #[test]
    fn person_appearance_is_mask_vector_in_side_channel_mode() {
        let l = layout();
        assert_eq!(
            l.appearance(CellContent::Person, Some(Gender::Female)),
            l.mask_vector()
        );
    }

    #[test]
    fn rejects_cramped_dims() {
        assert!(EmbedLayout::new(
            8,
            2,
            8,
            3.0,
            1.5,
            2.0,
            1.3,
            0.8,
            GenderMode::SideChannel
        )
        .is_err());
    }
}
