//! The model under study: a dual-stream grounded detector with planted,
//! exactly-known gender bias.
//!
//! Architecture: word embeddings -> text self-attention stack; cell
//! appearance -> image self-attention stack; a deep-fusion stack whose
//! layers update both streams with cross-attention (image queries attend
//! to text, text queries attend to image, both reading the layer's input
//! states); and a word–region head that scores every (cell, category word)
//! pair with a scaled dot product.
//!
//! Blocks are residual attention without normalization, which keeps
//! planted carrier content additive along the residual stream (see
//! [`crate::embed`]). Planted bias terms are added at designated head
//! outputs, scaled by the gender sign of the modality that supplies the
//! head's queries; hooks capture or substitute the head output after the
//! planted term has acted.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::attention::{
    mha_forward, HeadAdditive, HeadAddress, HookMap, MhaWeights, ModuleId,
};
use crate::embed::{EmbedLayout, GenderMode};
use crate::error::{Error, Result};
use crate::inputs::{Gender, LabeledSample, SceneInput, TextInput, Vocab};
use crate::rng::SplitMix64;
use crate::tensor::Tensor2;

fn default_d() -> usize {
    32
}
fn default_heads() -> usize {
    4
}
fn default_enc_layers() -> usize {
    4
}
fn default_fusion_layers() -> usize {
    2
}
fn default_grid() -> usize {
    4
}
fn default_tau() -> f64 {
    0.5
}
fn default_seed() -> u64 {
    42
}
fn default_feat_scale() -> f64 {
    3.0
}
fn default_margin_text() -> f64 {
    1.5
}
fn default_margin_image() -> f64 {
    2.0
}
fn default_sig_scale() -> f64 {
    1.3
}
fn default_attn_scale() -> f64 {
    0.12
}
fn default_gender_delta() -> f64 {
    0.8
}

/// Default category list: four indoor-style objects followed by their four
/// outdoor-style partners (category `i` pairs with `i + 4`).
pub fn default_categories() -> Vec<String> {
    ["cat", "couch", "lamp", "book", "car", "bike", "boat", "kite"]
        .into_iter()
        .map(str::to_string)
        .collect()
}

/// Model architecture and scales.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub heads: usize,
    pub layers_text: usize,
    pub layers_image: usize,
    pub layers_fusion: usize,
    pub grid: usize,
    pub categories: Vec<String>,
    /// Detection threshold on the sigmoid of the alignment score.
    pub tau: f64,
    pub seed: u64,
    pub gender_mode: GenderMode,
    pub feat_scale: f64,
    pub margin_text: f64,
    pub margin_image: f64,
    pub sig_scale: f64,
    pub attn_scale: f64,
    pub gender_delta: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: default_d(),
            heads: default_heads(),
            layers_text: default_enc_layers(),
            layers_image: default_enc_layers(),
            layers_fusion: default_fusion_layers(),
            grid: default_grid(),
            categories: default_categories(),
            tau: default_tau(),
            seed: default_seed(),
            gender_mode: GenderMode::SideChannel,
            feat_scale: default_feat_scale(),
            margin_text: default_margin_text(),
            margin_image: default_margin_image(),
            sig_scale: default_sig_scale(),
            attn_scale: default_attn_scale(),
            gender_delta: default_gender_delta(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::BadModelConfig(format!(
                "model dim {} not divisible by {} heads",
                self.d, self.heads
            )));
        }
        if self.grid == 0 {
            return Err(Error::BadModelConfig("grid must be >= 1".into()));
        }
        for (name, v) in [
            ("layers_text", self.layers_text),
            ("layers_image", self.layers_image),
            ("layers_fusion", self.layers_fusion),
        ] {
            if v == 0 {
                return Err(Error::BadModelConfig(format!("{name} must be >= 1")));
            }
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::BadModelConfig(format!(
                "tau must lie in (0, 1), got {}",
                self.tau
            )));
        }
        if !(self.attn_scale > 0.0) {
            return Err(Error::BadModelConfig("attn_scale must be > 0".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    pub fn module_depth(&self, module: ModuleId) -> usize {
        match module {
            ModuleId::TextEnc => self.layers_text,
            ModuleId::ImageEnc => self.layers_image,
            ModuleId::FusionTextPart | ModuleId::FusionImagePart => self.layers_fusion,
        }
    }
}

/// Declarative planted-bias term. Either an explicit unit `direction` in
/// head-output space is given, or one is derived from the target's
/// signature so that the targeted category's score rises for the `boost`
/// gender (and falls for the other).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionSpec {
    pub module: ModuleId,
    pub layer: usize,
    pub head: usize,
    pub alpha: f64,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boost: Option<Gender>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Vec<f64>>,
}

/// Resolved planted-bias term at one attention head.
#[derive(Debug, Clone)]
pub struct BiasInjection {
    pub at: HeadAddress,
    pub alpha: f64,
    /// Unit vector in the head's output space.
    pub direction: Vec<f64>,
    /// Category id this term targets (bookkeeping for oracles/reports).
    pub target: usize,
}

impl BiasInjection {
    /// Which modality's gender sign this term reads: the modality that
    /// supplies the head's queries.
    pub fn reads_image_sign(&self) -> bool {
        matches!(
            self.at.module,
            ModuleId::ImageEnc | ModuleId::FusionImagePart
        )
    }
}

/// Detection scores for one (scene, prompt) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionOutput {
    /// Alignment logits, cells x categories-in-prompt.
    pub scores: Tensor2,
    /// Category ids, in prompt order (one column each).
    pub categories: Vec<usize>,
    pub tau: f64,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl DetectionOutput {
    pub fn predicted(&self, cell: usize, k: usize) -> bool {
        sigmoid(self.scores.get(cell, k)) > self.tau
    }

    /// Image-level confidence for prompt column `k`: sigmoid of the best
    /// cell score.
    pub fn image_confidence(&self, k: usize) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for cell in 0..self.scores.rows() {
            best = best.max(self.scores.get(cell, k));
        }
        sigmoid(best)
    }

    pub fn image_predicted(&self, k: usize) -> bool {
        self.image_confidence(k) > self.tau
    }

    /// Confidences indexed by category id; categories absent from the
    /// prompt get 0.
    pub fn confidences_by_category(&self, n_categories: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_categories];
        for (k, &cat) in self.categories.iter().enumerate() {
            out[cat] = self.image_confidence(k);
        }
        out
    }
}

/// Full forward result: detection plus the final per-position features of
/// both streams.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub detection: DetectionOutput,
    pub text_features: Tensor2,
    pub image_features: Tensor2,
}

/// The assembled model: immutable weights, embeddings, and planted terms.
#[derive(Debug, Clone)]
pub struct ToyVlm {
    cfg: ModelConfig,
    vocab: Vocab,
    layout: EmbedLayout,
    text_emb: Vec<Vec<f64>>,
    text_layers: Vec<MhaWeights>,
    image_layers: Vec<MhaWeights>,
    fusion_text_layers: Vec<MhaWeights>,
    fusion_image_layers: Vec<MhaWeights>,
    injections: Vec<BiasInjection>,
    /// (module, layer) -> indices into `injections`.
    by_layer: HashMap<(ModuleId, usize), Vec<usize>>,
}

/// Build one attention layer's projections with the carrier structure:
/// query/key/value projections have zero rows on carrier coordinates and
/// zero columns on per-head carrier outputs; the output projection routes
/// each head's carrier outputs one-to-one onto the carrier coordinates and
/// its content outputs onto content coordinates. Random entries are drawn
/// row-major, skipping structural zeros.
fn structured_weights(seed: u64, label: &str, cfg: &ModelConfig) -> MhaWeights {
    let d = cfg.d;
    let dh = cfg.head_dim();
    let r = dh / 2;
    let content_rows = d - r;

    let draw = |rng: &mut SplitMix64| rng.next_symmetric(cfg.attn_scale);
    let is_carrier_col = |j: usize| (j % dh) >= dh - r;

    let build_qkv = |name: &str| {
        let mut rng = SplitMix64::derive(seed, &format!("{label}.{name}"));
        let mut m = Tensor2::zeros(d, d).expect("validated dims");
        for i in 0..content_rows {
            for j in 0..d {
                if !is_carrier_col(j) {
                    m.set(i, j, draw(&mut rng));
                }
            }
        }
        m
    };
    let w_q = build_qkv("w_q");
    let w_k = build_qkv("w_k");
    let w_v = build_qkv("w_v");

    let mut rng = SplitMix64::derive(seed, &format!("{label}.w_o"));
    let mut w_o = Tensor2::zeros(d, d).expect("validated dims");
    for i in 0..content_rows {
        for j in 0..d {
            if !is_carrier_col(j) {
                w_o.set(i, j, draw(&mut rng));
            }
        }
    }
    for h in 0..cfg.heads {
        for k in 0..r {
            let col = h * dh + (dh - r) + k;
            w_o.set(content_rows + k, col, 1.0);
        }
    }

    MhaWeights {
        w_q,
        w_k,
        w_v,
        w_o,
        heads: cfg.heads,
    }
}

impl ToyVlm {
    pub fn new(cfg: ModelConfig, injections: &[InjectionSpec]) -> Result<Self> {
        cfg.validate()?;
        let vocab = Vocab::new(&cfg.categories)?;
        let layout = EmbedLayout::new(
            cfg.d,
            cfg.head_dim(),
            vocab.n_categories(),
            cfg.feat_scale,
            cfg.margin_text,
            cfg.margin_image,
            cfg.sig_scale,
            cfg.gender_delta,
            cfg.gender_mode,
        )?;
        let text_emb = (0..vocab.len())
            .map(|t| layout.text_embedding(&vocab, t))
            .collect();

        let stack = |module: ModuleId, depth: usize| {
            (0..depth)
                .map(|l| structured_weights(cfg.seed, &format!("{module}.{l}"), &cfg))
                .collect::<Vec<_>>()
        };
        let text_layers = stack(ModuleId::TextEnc, cfg.layers_text);
        let image_layers = stack(ModuleId::ImageEnc, cfg.layers_image);
        let fusion_text_layers = stack(ModuleId::FusionTextPart, cfg.layers_fusion);
        let fusion_image_layers = stack(ModuleId::FusionImagePart, cfg.layers_fusion);

        let mut model = Self {
            cfg,
            vocab,
            layout,
            text_emb,
            text_layers,
            image_layers,
            fusion_text_layers,
            fusion_image_layers,
            injections: Vec::new(),
            by_layer: HashMap::new(),
        };
        let resolved = injections
            .iter()
            .map(|spec| model.resolve_injection(spec))
            .collect::<Result<Vec<_>>>()?;
        model.set_injections(resolved)?;
        Ok(model)
    }

    /// All-default model with the standard planted-bias set: strong
    /// selective terms in the image encoder and the image part of fusion
    /// (covering all four category pairs), weaker terms in the text encoder
    /// and the text part of fusion. Indoor-style targets are boosted for
    /// female, which by signature pairing boosts their outdoor partners for
    /// male.
    pub fn default_planted() -> Result<Self> {
        Self::new(ModelConfig::default(), &Self::default_injection_specs())
    }

    pub fn default_injection_specs() -> Vec<InjectionSpec> {
        let spec = |module, layer, head, alpha, target: &str, boost| InjectionSpec {
            module,
            layer,
            head,
            alpha,
            target: target.to_string(),
            boost: Some(boost),
            direction: None,
        };
        vec![
            spec(ModuleId::ImageEnc, 1, 0, 1.0, "cat", Gender::Female),
            spec(ModuleId::ImageEnc, 3, 1, 1.0, "couch", Gender::Female),
            spec(ModuleId::FusionImagePart, 0, 2, 0.8, "lamp", Gender::Female),
            spec(ModuleId::FusionImagePart, 1, 3, 0.8, "book", Gender::Female),
            spec(ModuleId::TextEnc, 1, 0, 0.5, "car", Gender::Male),
            spec(ModuleId::TextEnc, 3, 1, 0.5, "bike", Gender::Male),
            spec(ModuleId::FusionTextPart, 0, 2, 0.4, "boat", Gender::Male),
            spec(ModuleId::FusionTextPart, 1, 3, 0.4, "kite", Gender::Male),
        ]
    }

    fn resolve_injection(&self, spec: &InjectionSpec) -> Result<BiasInjection> {
        let at = HeadAddress::new(spec.module, spec.layer, spec.head);
        self.check_address(&at)?;
        let target = self.vocab.id(&spec.target)?;
        if !self.vocab.is_category(target) {
            return Err(Error::BadInjection(format!(
                "target {:?} is not a category",
                spec.target
            )));
        }
        if !spec.alpha.is_finite() {
            return Err(Error::BadInjection("alpha must be finite".into()));
        }
        let dh = self.cfg.head_dim();
        let direction = match (&spec.direction, spec.boost) {
            (Some(dir), None) => {
                if dir.len() != dh {
                    return Err(Error::BadInjection(format!(
                        "direction has length {}, head output space is {dh}",
                        dir.len()
                    )));
                }
                let norm: f64 = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-9 {
                    return Err(Error::BadInjection(format!(
                        "direction must be a unit vector (norm {norm})"
                    )));
                }
                dir.clone()
            }
            (None, Some(boost)) => {
                let (coord, sig_sign) = self.layout.signature(target);
                let carrier_slot = coord - self.layout.carrier_start();
                let mut u = vec![0.0; dh];
                u[dh - self.layout.carrier + carrier_slot] = sig_sign * boost.sign();
                u
            }
            _ => {
                return Err(Error::BadInjection(
                    "give exactly one of `boost` or `direction`".into(),
                ))
            }
        };
        Ok(BiasInjection {
            at,
            alpha: spec.alpha,
            direction,
            target,
        })
    }

    fn set_injections(&mut self, injections: Vec<BiasInjection>) -> Result<()> {
        let mut by_layer: HashMap<(ModuleId, usize), Vec<usize>> = HashMap::new();
        for (i, inj) in injections.iter().enumerate() {
            self.check_address(&inj.at)?;
            by_layer
                .entry((inj.at.module, inj.at.layer))
                .or_default()
                .push(i);
        }
        self.injections = injections;
        self.by_layer = by_layer;
        Ok(())
    }

    /// Copy of this model keeping only the planted terms `keep` accepts.
    /// This is the clamp lever: disabling a term is exactly equivalent to
    /// its gender sign being zeroed.
    pub fn with_filtered_injections<F: Fn(&BiasInjection) -> bool>(&self, keep: F) -> Self {
        let mut m = self.clone();
        let kept: Vec<BiasInjection> =
            self.injections.iter().filter(|i| keep(i)).cloned().collect();
        m.set_injections(kept).expect("addresses already validated");
        m
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn layout(&self) -> &EmbedLayout {
        &self.layout
    }

    pub fn injections(&self) -> &[BiasInjection] {
        &self.injections
    }

    pub fn check_address(&self, addr: &HeadAddress) -> Result<()> {
        let depth = self.cfg.module_depth(addr.module);
        if addr.layer >= depth || addr.head >= self.cfg.heads {
            return Err(Error::BadAddress {
                addr: *addr,
                module: addr.module.to_string(),
                depth,
                heads: self.cfg.heads,
            });
        }
        Ok(())
    }

    /// Gender sign read by text-side planted terms.
    pub fn gender_sign_text(&self, text: &TextInput) -> Result<f64> {
        self.vocab.gender_sign_text(text)
    }

    fn additives(&self, module: ModuleId, layer: usize, sign: f64) -> Vec<HeadAdditive> {
        match self.by_layer.get(&(module, layer)) {
            None => Vec::new(),
            Some(idxs) => idxs
                .iter()
                .map(|&i| {
                    let inj = &self.injections[i];
                    HeadAdditive {
                        head: inj.at.head,
                        coeff: inj.alpha * sign,
                        dir: inj.direction.clone(),
                    }
                })
                .collect(),
        }
    }

    fn embed_text(&self, text: &TextInput) -> Result<Tensor2> {
        text.validate(&self.vocab)?;
        if text.tokens.is_empty() {
            return Err(Error::Internal("empty token sequence".into()));
        }
        let mut x = Tensor2::zeros(text.tokens.len(), self.cfg.d)?;
        for (row, &t) in text.tokens.iter().enumerate() {
            x.row_mut(row).copy_from_slice(&self.text_emb[t]);
        }
        Ok(x)
    }

    /// Text encoder: embedding plus the self-attention stack.
    pub fn encode_text(&self, text: &TextInput, hooks: &mut HookMap) -> Result<Tensor2> {
        let sign = self.gender_sign_text(text)?;
        let mut x = self.embed_text(text)?;
        for (l, w) in self.text_layers.iter().enumerate() {
            let adds = self.additives(ModuleId::TextEnc, l, sign);
            let a = mha_forward(&x, &x, w, ModuleId::TextEnc, l, &adds, hooks)?;
            x = x.add(&a)?;
        }
        Ok(x)
    }

    /// Image encoder: appearance features plus the self-attention stack.
    /// The gender channel is never embedded; planted terms read its sign.
    pub fn encode_image(&self, scene: &SceneInput, hooks: &mut HookMap) -> Result<Tensor2> {
        scene.validate()?;
        if scene.grid != self.cfg.grid {
            return Err(Error::ShapeMismatch {
                op: "encode_image",
                expected: format!("grid {}", self.cfg.grid),
                got: format!("{}", scene.grid),
            });
        }
        if scene.appearance.cols() != self.cfg.d {
            return Err(Error::ShapeMismatch {
                op: "encode_image",
                expected: format!("appearance dim {}", self.cfg.d),
                got: format!("{}", scene.appearance.cols()),
            });
        }
        let sign = scene.gender_sign();
        let mut x = scene.appearance.clone();
        for (l, w) in self.image_layers.iter().enumerate() {
            let adds = self.additives(ModuleId::ImageEnc, l, sign);
            let a = mha_forward(&x, &x, w, ModuleId::ImageEnc, l, &adds, hooks)?;
            x = x.add(&a)?;
        }
        Ok(x)
    }

    /// Deep fusion and detection on already-encoded streams. `s_text` and
    /// `s_img` are the gender signs the fusion-part planted terms read.
    pub fn fuse_and_detect(
        &self,
        mut txt: Tensor2,
        mut img: Tensor2,
        s_text: f64,
        s_img: f64,
        text: &TextInput,
        hooks: &mut HookMap,
    ) -> Result<ForwardOutput> {
        for l in 0..self.cfg.layers_fusion {
            let img_adds = self.additives(ModuleId::FusionImagePart, l, s_img);
            let txt_adds = self.additives(ModuleId::FusionTextPart, l, s_text);
            let img_attn = mha_forward(
                &img,
                &txt,
                &self.fusion_image_layers[l],
                ModuleId::FusionImagePart,
                l,
                &img_adds,
                hooks,
            )?;
            let txt_attn = mha_forward(
                &txt,
                &img,
                &self.fusion_text_layers[l],
                ModuleId::FusionTextPart,
                l,
                &txt_adds,
                hooks,
            )?;
            img = img.add(&img_attn)?;
            txt = txt.add(&txt_attn)?;
        }

        let cat_positions = text.category_positions(&self.vocab);
        if cat_positions.is_empty() {
            return Err(Error::Internal("prompt contains no category words".into()));
        }
        let cells = img.rows();
        let mut scores = Tensor2::zeros(cells, cat_positions.len())?;
        let inv_sqrt_d = 1.0 / (self.cfg.d as f64).sqrt();
        for cell in 0..cells {
            let img_row = img.row(cell);
            for (k, &(pos, _)) in cat_positions.iter().enumerate() {
                let txt_row = txt.row(pos);
                let dot: f64 = img_row.iter().zip(txt_row).map(|(a, b)| a * b).sum();
                scores.set(cell, k, dot * inv_sqrt_d);
            }
        }
        if !scores.is_finite() {
            return Err(Error::NonFinite("detection scores"));
        }

        Ok(ForwardOutput {
            detection: DetectionOutput {
                scores,
                categories: cat_positions.iter().map(|&(_, c)| c).collect(),
                tau: self.cfg.tau,
            },
            text_features: txt,
            image_features: img,
        })
    }

    /// Full forward pass. Hooks fire at every addressed head; recorded
    /// buffers are left in `hooks`.
    pub fn forward(
        &self,
        scene: &SceneInput,
        text: &TextInput,
        hooks: &mut HookMap,
    ) -> Result<ForwardOutput> {
        for addr in hooks.addresses() {
            self.check_address(addr)?;
        }
        let s_text = self.gender_sign_text(text)?;
        let s_img = scene.gender_sign();
        let txt = self.encode_text(text, hooks)?;
        let img = self.encode_image(scene, hooks)?;
        self.fuse_and_detect(txt, img, s_text, s_img, text, hooks)
    }

    /// Plain forward without hooks.
    pub fn detect(&self, scene: &SceneInput, text: &TextInput) -> Result<DetectionOutput> {
        let mut hooks = HookMap::new();
        Ok(self.forward(scene, text, &mut hooks)?.detection)
    }
}

/// Per-category average precision report.
#[derive(Debug, Clone)]
pub struct ApReport {
    /// Mean over categories that appear in ground truth.
    pub mean: f64,
    /// AP by category id; `None` for skipped categories.
    pub per_category: Vec<Option<f64>>,
    /// Categories never present in ground truth, excluded from the mean.
    pub skipped: Vec<usize>,
}

/// Tie-aware average precision of image-level scores against presence.
///
/// Images are sorted by descending score; equal scores form one block and
/// every relevant image in a block receives the precision measured at the
/// block's end. Under this convention a constant ranker scores exactly the
/// category's prevalence.
pub fn average_precision_by_category(
    image_scores: &[Vec<f64>],
    truths: &[std::collections::BTreeSet<usize>],
    n_categories: usize,
) -> Result<ApReport> {
    if image_scores.is_empty() || image_scores.len() != truths.len() {
        return Err(Error::DatasetTooSmall {
            need: 1,
            got: image_scores.len().min(truths.len()),
        });
    }
    let n = image_scores.len();
    let mut per_category = vec![None; n_categories];
    let mut skipped = Vec::new();
    let mut sum = 0.0;
    let mut counted = 0usize;

    for c in 0..n_categories {
        let total_rel = truths.iter().filter(|t| t.contains(&c)).count();
        if total_rel == 0 {
            skipped.push(c);
            continue;
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            image_scores[b][c]
                .partial_cmp(&image_scores[a][c])
                .expect("finite scores")
                .then(a.cmp(&b))
        });
        let mut ap = 0.0;
        let mut seen = 0usize;
        let mut rel_seen = 0usize;
        let mut i = 0;
        while i < n {
            let mut j = i;
            let mut rel_in_block = 0usize;
            while j < n && image_scores[order[j]][c] == image_scores[order[i]][c] {
                if truths[order[j]].contains(&c) {
                    rel_in_block += 1;
                }
                j += 1;
            }
            seen += j - i;
            rel_seen += rel_in_block;
            ap += rel_in_block as f64 * (rel_seen as f64 / seen as f64);
            i = j;
        }
        let ap = ap / total_rel as f64;
        per_category[c] = Some(ap);
        sum += ap;
        counted += 1;
    }

    let mean = if counted > 0 { sum / counted as f64 } else { 0.0 };
    Ok(ApReport {
        mean,
        per_category,
        skipped,
    })
}

/// Detection quality of the model over a dataset: mean average precision
/// of image-level scores against ground-truth presence.
pub fn toy_average_precision(model: &ToyVlm, samples: &[LabeledSample]) -> Result<ApReport> {
    if samples.is_empty() {
        return Err(Error::DatasetTooSmall { need: 1, got: 0 });
    }
    let n_cat = model.vocab().n_categories();
    let mut scores = Vec::with_capacity(samples.len());
    let mut truths = Vec::with_capacity(samples.len());
    for s in samples {
        let det = model.detect(&s.scene, &s.text)?;
        scores.push(det.confidences_by_category(n_cat));
        truths.push(s.truth.clone());
    }
    average_precision_by_category(&scores, &truths, n_cat)
}
