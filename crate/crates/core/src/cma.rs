//! Causal mediation analysis: input interventions, mediator selection,
//! two-pass capture/patch execution, and effect computation.
//!
//! For a bias score y, an intervention i, and a mediator set M:
//!
//! * `y_O` — no intervention anywhere (baseline);
//! * `y_E` — i applied to the input (intervention effect `E = y_E - y_O`);
//! * `y_D` — i applied to the input while M is held in its baseline state
//!   (direct effect `DE = y_D - y_O`);
//! * `y_I` — input left alone while M is set to its state under i
//!   (indirect effect `IE = y_I - y_O`).
//!
//! Holding or setting a mediator is realized by activation patching: pass
//! one runs on the mediator-state input recording the mediator heads, pass
//! two runs on the input-state input substituting those recordings.
//! Percentages are reported as `-X / y_O * 100`, so a bias reduction is a
//! positive percentage.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{HeadAddress, HookMap, ModuleId};
use crate::error::{Error, Result};
use crate::inputs::LabeledSample;
use crate::metrics::{bias_from_records, BiasScore, DetectionRecord};
use crate::model::{ModelConfig, ToyVlm};

/// Input-level counterfactual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    /// Identity.
    Null,
    /// Gender word in the text becomes `person`.
    ReplaceGender,
    /// Person cell loses its gender channel and takes the mask appearance.
    MaskGender,
    /// Both of the above.
    Both,
}

impl InterventionKind {
    /// The modality-appropriate intervention for a module sweep.
    pub fn for_module(module: ModuleId) -> Self {
        match module {
            ModuleId::TextEnc | ModuleId::FusionTextPart => InterventionKind::ReplaceGender,
            ModuleId::ImageEnc | ModuleId::FusionImagePart => InterventionKind::MaskGender,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InterventionKind::Null => "null",
            InterventionKind::ReplaceGender => "replace_gender",
            InterventionKind::MaskGender => "mask_gender",
            InterventionKind::Both => "both",
        }
    }
}

/// Apply an intervention to one sample. Only the targeted modality changes;
/// token count, scene shape, and the ground-truth label are preserved.
pub fn apply_intervention(
    sample: &LabeledSample,
    kind: InterventionKind,
    model: &ToyVlm,
) -> LabeledSample {
    let mut out = sample.clone();
    let replace_text = matches!(
        kind,
        InterventionKind::ReplaceGender | InterventionKind::Both
    );
    let mask_image = matches!(kind, InterventionKind::MaskGender | InterventionKind::Both);

    if replace_text {
        let vocab = model.vocab();
        for t in &mut out.text.tokens {
            if *t == vocab.man_id() || *t == vocab.woman_id() {
                *t = vocab.person_id();
            }
        }
    }
    if mask_image {
        if let Some(cell) = out.scene.person_cell() {
            out.scene.gender_channel[cell] = 0;
            out.scene
                .appearance
                .row_mut(cell)
                .copy_from_slice(&model.layout().mask_vector());
        }
    }
    out
}

/// An addressed set of attention heads to patch.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MediatorSet {
    addrs: BTreeSet<HeadAddress>,
}

impl MediatorSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_addresses<I: IntoIterator<Item = HeadAddress>>(addrs: I) -> Self {
        Self {
            addrs: addrs.into_iter().collect(),
        }
    }

    /// Every head of layers `0..=k` of one module.
    pub fn layers_up_to(cfg: &ModelConfig, module: ModuleId, k: usize) -> Result<Self> {
        let depth = cfg.module_depth(module);
        if k >= depth {
            return Err(Error::BadAddress {
                addr: HeadAddress::new(module, k, 0),
                module: module.to_string(),
                depth,
                heads: cfg.heads,
            });
        }
        Ok(Self::from_addresses((0..=k).flat_map(|l| {
            (0..cfg.heads).map(move |h| HeadAddress::new(module, l, h))
        })))
    }

    /// Every head of the first `n` layers of one module (`n >= 1`).
    pub fn first_layers(cfg: &ModelConfig, module: ModuleId, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Internal("first_layers needs n >= 1".into()));
        }
        Self::layers_up_to(cfg, module, n - 1)
    }

    /// Every head of every module.
    pub fn all_heads(cfg: &ModelConfig) -> Self {
        Self::from_addresses(ModuleId::ALL.into_iter().flat_map(|m| {
            (0..cfg.module_depth(m)).flat_map(move |l| {
                (0..cfg.heads).map(move |h| HeadAddress::new(m, l, h))
            })
        }))
    }

    /// Exactly the heads bearing planted terms.
    pub fn injection_bearing(model: &ToyVlm) -> Self {
        Self::from_addresses(model.injections().iter().map(|i| i.at))
    }

    pub fn union(&self, other: &MediatorSet) -> Self {
        Self {
            addrs: self.addrs.union(&other.addrs).copied().collect(),
        }
    }

    pub fn contains(&self, addr: &HeadAddress) -> bool {
        self.addrs.contains(addr)
    }

    pub fn addresses(&self) -> impl Iterator<Item = &HeadAddress> {
        self.addrs.iter()
    }

    pub fn len(&self) -> usize {
        self.addrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.addrs.is_empty()
    }

    pub fn validate(&self, model: &ToyVlm) -> Result<()> {
        for addr in &self.addrs {
            model.check_address(addr)?;
        }
        Ok(())
    }
}

/// Bias values and effects for one (intervention, mediator) configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectReport {
    pub y_o: f64,
    pub y_e: f64,
    pub y_d: f64,
    pub y_i: f64,
    pub e: f64,
    pub de: f64,
    pub ie: f64,
    /// `-E / y_O * 100`; `None` when y_O is 0.
    pub pct_e: Option<f64>,
    pub pct_de: Option<f64>,
    pub pct_ie: Option<f64>,
    pub config_fingerprint: String,
}

impl EffectReport {
    fn from_values(y_o: f64, y_e: f64, y_d: f64, y_i: f64, fingerprint: &str) -> Self {
        let pct = |x: f64| {
            if y_o > 0.0 {
                Some(-x / y_o * 100.0)
            } else {
                None
            }
        };
        let (e, de, ie) = (y_e - y_o, y_d - y_o, y_i - y_o);
        Self {
            y_o,
            y_e,
            y_d,
            y_i,
            e,
            de,
            ie,
            pct_e: pct(e),
            pct_de: pct(de),
            pct_ie: pct(ie),
            config_fingerprint: fingerprint.to_string(),
        }
    }
}

/// The three-way comparison of vision, language, and combined
/// interventions at a matched mediator depth fraction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CombinedReport {
    pub fraction: f64,
    pub vision: EffectReport,
    pub language: EffectReport,
    pub both: EffectReport,
}

/// Mediation runner over a fixed model and dataset.
///
/// Bias is always measured on the gendered subset of the dataset against
/// the original (never intervened) ground truth and gender labels. Samples
/// are independent, so passes fan out across threads; records are reduced
/// in dataset order, keeping every result identical at any thread count.
pub struct CmaEngine<'a> {
    model: &'a ToyVlm,
    samples: Vec<&'a LabeledSample>,
    objects: Vec<String>,
    tau: f64,
    fingerprint: String,
}

impl<'a> CmaEngine<'a> {
    pub fn new(model: &'a ToyVlm, samples: &'a [LabeledSample]) -> Result<Self> {
        let gendered: Vec<&LabeledSample> =
            samples.iter().filter(|s| s.gender.is_some()).collect();
        if gendered.is_empty() {
            return Err(Error::DatasetTooSmall { need: 1, got: 0 });
        }
        Ok(Self {
            model,
            samples: gendered,
            objects: model.vocab().categories().to_vec(),
            tau: model.config().tau,
            fingerprint: String::new(),
        })
    }

    pub fn with_fingerprint(mut self, fingerprint: &str) -> Self {
        self.fingerprint = fingerprint.to_string();
        self
    }

    pub fn gendered_len(&self) -> usize {
        self.samples.len()
    }

    fn record_for(
        &self,
        sample: &LabeledSample,
        input_state: InterventionKind,
        mediator: &MediatorSet,
        mediator_state: InterventionKind,
    ) -> Result<DetectionRecord> {
        let gender = sample
            .gender
            .ok_or_else(|| Error::Internal("ungendered sample in bias pass".into()))?;
        let detection = if mediator.is_empty() {
            let s_in = apply_intervention(sample, input_state, self.model);
            self.model.detect(&s_in.scene, &s_in.text)?
        } else {
            let s_med = apply_intervention(sample, mediator_state, self.model);
            let mut hooks = HookMap::recording(mediator.addresses().copied());
            self.model.forward(&s_med.scene, &s_med.text, &mut hooks)?;
            let mut hooks = hooks.into_substituting()?;
            let s_in = apply_intervention(sample, input_state, self.model);
            self.model
                .forward(&s_in.scene, &s_in.text, &mut hooks)?
                .detection
        };
        Ok(DetectionRecord {
            gender,
            truth: sample.truth.clone(),
            confidences: detection.confidences_by_category(self.objects.len()),
        })
    }

    /// Detection records for the whole dataset under one configuration.
    pub fn records(
        &self,
        input_state: InterventionKind,
        mediator: &MediatorSet,
        mediator_state: InterventionKind,
    ) -> Result<Vec<DetectionRecord>> {
        mediator.validate(self.model)?;
        self.samples
            .par_iter()
            .map(|s| self.record_for(s, input_state, mediator, mediator_state))
            .collect()
    }

    /// Bias score with the input in `input_state` and the mediator heads
    /// patched to their `mediator_state` values. With an empty mediator a
    /// single pass on the input state suffices.
    pub fn measure_y(
        &self,
        input_state: InterventionKind,
        mediator: &MediatorSet,
        mediator_state: InterventionKind,
    ) -> Result<BiasScore> {
        let records = self.records(input_state, mediator, mediator_state)?;
        bias_from_records(&records, &self.objects, self.tau)
    }

    /// Full effect decomposition for intervention `i` mediated by `mediator`.
    pub fn effects(&self, i: InterventionKind, mediator: &MediatorSet) -> Result<EffectReport> {
        let y_o = self
            .measure_y(InterventionKind::Null, &MediatorSet::empty(), InterventionKind::Null)?
            .value;
        let y_e = self
            .measure_y(i, &MediatorSet::empty(), InterventionKind::Null)?
            .value;
        self.effects_given(y_o, y_e, i, mediator)
    }

    fn effects_given(
        &self,
        y_o: f64,
        y_e: f64,
        i: InterventionKind,
        mediator: &MediatorSet,
    ) -> Result<EffectReport> {
        let (y_d, y_i) = if mediator.is_empty() {
            // Holding nothing: the direct effect is the whole effect and
            // nothing flows indirectly.
            (y_e, y_o)
        } else {
            let y_d = self.measure_y(i, mediator, InterventionKind::Null)?.value;
            let y_i = self.measure_y(InterventionKind::Null, mediator, i)?.value;
            (y_d, y_i)
        };
        Ok(EffectReport::from_values(y_o, y_e, y_d, y_i, &self.fingerprint))
    }

    /// One effect report per inclusive layer prefix `0..=k` for each `k` in
    /// `depths`, with the baseline and intervention-only passes shared.
    pub fn layer_sweep(
        &self,
        module: ModuleId,
        i: InterventionKind,
        depths: &[usize],
    ) -> Result<Vec<(usize, EffectReport)>> {
        let y_o = self
            .measure_y(InterventionKind::Null, &MediatorSet::empty(), InterventionKind::Null)?
            .value;
        let y_e = self
            .measure_y(i, &MediatorSet::empty(), InterventionKind::Null)?
            .value;
        let mut out = Vec::with_capacity(depths.len());
        for &k in depths {
            let mediator = MediatorSet::layers_up_to(self.model.config(), module, k)?;
            out.push((k, self.effects_given(y_o, y_e, i, &mediator)?));
        }
        Ok(out)
    }

    /// Vision-only, language-only, and combined interventions with a
    /// matched fraction of mediator layers: vision patches the first
    /// `ceil(f * L_image)` image-encoder layers under mask-gender, language
    /// the first `ceil(f * L_text)` text-encoder layers under
    /// replace-gender, and the combined run patches the union under both.
    pub fn combined_sweep(&self, fraction: f64) -> Result<CombinedReport> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::BadExperimentConfig {
                field: "fraction".into(),
                message: format!("must lie in (0, 1], got {fraction}"),
            });
        }
        let cfg = self.model.config();
        let n_img = (fraction * cfg.layers_image as f64).ceil() as usize;
        let n_txt = (fraction * cfg.layers_text as f64).ceil() as usize;
        let image_set = MediatorSet::first_layers(cfg, ModuleId::ImageEnc, n_img)?;
        let text_set = MediatorSet::first_layers(cfg, ModuleId::TextEnc, n_txt)?;

        let y_o = self
            .measure_y(InterventionKind::Null, &MediatorSet::empty(), InterventionKind::Null)?
            .value;
        let eff = |i: InterventionKind, m: &MediatorSet| -> Result<EffectReport> {
            let y_e = self
                .measure_y(i, &MediatorSet::empty(), InterventionKind::Null)?
                .value;
            self.effects_given(y_o, y_e, i, m)
        };
        Ok(CombinedReport {
            fraction,
            vision: eff(InterventionKind::MaskGender, &image_set)?,
            language: eff(InterventionKind::ReplaceGender, &text_set)?,
            both: eff(InterventionKind::Both, &image_set.union(&text_set))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inputs::Gender;
    use crate::model::ModelConfig;
    use crate::scene::{generate, GenConfig};

    fn fixture() -> (ToyVlm, Vec<LabeledSample>) {
        let model = ToyVlm::default_planted().unwrap();
        let cfg = GenConfig {
            n_images: 40,
            ..GenConfig::default()
        };
        let samples = generate(&cfg, &model).unwrap();
        (model, samples)
    }

    #[test]
    fn null_intervention_is_bit_identical() {
        let (model, samples) = fixture();
        let s = &samples[0];
        let out = apply_intervention(s, InterventionKind::Null, &model);
        assert_eq!(out.scene, s.scene);
        assert_eq!(out.text, s.text);
    }

    #[test]
    fn replace_gender_swaps_word() {
        let (model, samples) = fixture();
        let s = samples
            .iter()
            .find(|s| s.gender == Some(Gender::Female))
            .unwrap();
        let out = apply_intervention(s, InterventionKind::ReplaceGender, &model);
        let v = model.vocab();
        assert!(out.text.tokens.iter().all(|&t| t != v.woman_id()));
        assert!(out.text.tokens.contains(&v.person_id()));
        assert_eq!(out.text.tokens.len(), s.text.tokens.len());
        assert_eq!(model.gender_sign_text(&out.text).unwrap(), 0.0);
    }

    #[test]
    fn mask_gender_zeroes_channel_and_installs_mask() {
        let (model, samples) = fixture();
        let s = samples
            .iter()
            .find(|s| s.gender == Some(Gender::Male))
            .unwrap();
        let out = apply_intervention(s, InterventionKind::MaskGender, &model);
        assert_eq!(out.scene.gender_sign(), 0.0);
        let cell = out.scene.person_cell().unwrap();
        assert_eq!(
            out.scene.appearance.row(cell),
            model.layout().mask_vector().as_slice()
        );
    }

    #[test]
    fn layers_up_to_bounds_checked() {
        let cfg = ModelConfig::default();
        let m = MediatorSet::layers_up_to(&cfg, ModuleId::FusionTextPart, 1).unwrap();
        assert_eq!(m.len(), 2 * cfg.heads);
        assert!(MediatorSet::layers_up_to(&cfg, ModuleId::FusionTextPart, 2).is_err());
    }

    #[test]
    fn empty_mediator_collapses_effects() {
        let (model, samples) = fixture();
        let engine = CmaEngine::new(&model, &samples).unwrap();
        let r = engine
            .effects(InterventionKind::MaskGender, &MediatorSet::empty())
            .unwrap();
        assert_eq!(r.de, r.e);
        assert_eq!(r.ie, 0.0);
    }

    #[test]
    fn null_effects_are_exactly_zero() {
        let (model, samples) = fixture();
        let engine = CmaEngine::new(&model, &samples).unwrap();
        let mediator =
            MediatorSet::layers_up_to(model.config(), ModuleId::ImageEnc, 1).unwrap();
        let r = engine.effects(InterventionKind::Null, &mediator).unwrap();
        assert_eq!(r.e, 0.0);
        assert_eq!(r.de, 0.0);
        assert_eq!(r.ie, 0.0);
    }

    #[test]
    fn gender_blind_model_shows_no_effects() {
        let cfg = GenConfig {
            n_images: 30,
            ..GenConfig::default()
        };
        let model = ToyVlm::new(ModelConfig::default(), &[]).unwrap();
        let samples = generate(&cfg, &model).unwrap();
        let engine = CmaEngine::new(&model, &samples).unwrap();
        let mediator = MediatorSet::all_heads(model.config());
        let r = engine.effects(InterventionKind::Both, &mediator).unwrap();
        assert_eq!(r.y_o, r.y_e);
        assert_eq!(r.y_o, r.y_d);
        assert_eq!(r.y_o, r.y_i);
    }
}
