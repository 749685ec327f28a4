//! Feature-averaging debiasing.
//!
//! Each fair encoder builds an anti-gender counterpart of its input —
//! gender word swapped for the text stream, person appearance swapped and
//! gender channel flipped for the image stream — encodes both, and returns
//! the elementwise mean. Averaging happens at the encoder output boundary,
//! before fusion, so bias arising inside fusion is deliberately left in
//! place. Inputs without a gender signal pass through unchanged.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::HookMap;
use crate::error::{Error, Result};
use crate::inputs::{Gender, LabeledSample, SceneInput, TextInput};
use crate::metrics::{bias_from_records, BiasScore, DetectionRecord};
use crate::model::{average_precision_by_category, ForwardOutput, ToyVlm};
use crate::tensor::Tensor2;

/// Which encoder(s) get the fair treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MitigationTarget {
    #[default]
    None,
    TextFair,
    ImageFair,
    BothFair,
}

impl MitigationTarget {
    pub const ALL: [MitigationTarget; 4] = [
        MitigationTarget::None,
        MitigationTarget::TextFair,
        MitigationTarget::ImageFair,
        MitigationTarget::BothFair,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MitigationTarget::None => "none",
            MitigationTarget::TextFair => "text_fair",
            MitigationTarget::ImageFair => "image_fair",
            MitigationTarget::BothFair => "both_fair",
        }
    }

    fn text(self) -> bool {
        matches!(self, MitigationTarget::TextFair | MitigationTarget::BothFair)
    }

    fn image(self) -> bool {
        matches!(self, MitigationTarget::ImageFair | MitigationTarget::BothFair)
    }
}

/// Replacement person appearances for the counterfactual scene, keyed by
/// the original person's gender.
#[derive(Debug, Clone)]
pub struct AntiGenderTemplates {
    pub for_male: Vec<f64>,
    pub for_female: Vec<f64>,
}

impl AntiGenderTemplates {
    /// The natural templates for a model: the appearance the opposite
    /// gender's person would have. In side-channel mode both equal the
    /// mask appearance.
    pub fn for_model(model: &ToyVlm) -> Self {
        let layout = model.layout();
        Self {
            for_male: layout.appearance(crate::inputs::CellContent::Person, Some(Gender::Female)),
            for_female: layout.appearance(crate::inputs::CellContent::Person, Some(Gender::Male)),
        }
    }

    pub fn validate(&self, model: &ToyVlm) -> Result<()> {
        let d = model.config().d;
        if self.for_male.len() != d || self.for_female.len() != d {
            return Err(Error::ShapeMismatch {
                op: "anti-gender templates",
                expected: format!("appearance dim {d}"),
                got: format!("{}/{}", self.for_male.len(), self.for_female.len()),
            });
        }
        Ok(())
    }
}

/// Mitigation setup: target plus templates.
#[derive(Debug, Clone)]
pub struct MitigationConfig {
    pub target: MitigationTarget,
    pub templates: AntiGenderTemplates,
}

impl MitigationConfig {
    pub fn new(target: MitigationTarget, model: &ToyVlm) -> Self {
        Self {
            target,
            templates: AntiGenderTemplates::for_model(model),
        }
    }
}

fn mean_features(a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    a.add(b)?.scale(0.5)
}

/// Text encoder output with gender representation blurred: the mean of the
/// original and gender-swapped encodings. Texts without a gender word pass
/// through the plain encoder.
pub fn text_fair_features(model: &ToyVlm, text: &TextInput) -> Result<Tensor2> {
    let sign = model.gender_sign_text(text)?;
    let mut hooks = HookMap::new();
    let original = model.encode_text(text, &mut hooks)?;
    if sign == 0.0 {
        return Ok(original);
    }
    let vocab = model.vocab();
    let mut anti = text.clone();
    for t in &mut anti.tokens {
        if *t == vocab.man_id() {
            *t = vocab.woman_id();
        } else if *t == vocab.woman_id() {
            *t = vocab.man_id();
        }
    }
    let mut hooks = HookMap::new();
    let swapped = model.encode_text(&anti, &mut hooks)?;
    mean_features(&original, &swapped)
}

/// Image encoder output with gender representation blurred: the mean of
/// the original encoding and the encoding of the counterfactual scene
/// (person appearance replaced by the anti-gender template, gender channel
/// flipped). Scenes without a gendered person pass through.
pub fn image_fair_features(
    model: &ToyVlm,
    scene: &SceneInput,
    templates: &AntiGenderTemplates,
) -> Result<Tensor2> {
    templates.validate(model)?;
    let mut hooks = HookMap::new();
    let original = model.encode_image(scene, &mut hooks)?;
    let sign = scene.gender_sign();
    if sign == 0.0 {
        return Ok(original);
    }
    let cell = scene
        .person_cell()
        .ok_or_else(|| Error::Internal("gender sign without person cell".into()))?;
    let mut counter = scene.clone();
    counter.gender_channel[cell] = -scene.gender_channel[cell];
    let template = if sign > 0.0 {
        &templates.for_male
    } else {
        &templates.for_female
    };
    counter.appearance.row_mut(cell).copy_from_slice(template);
    let mut hooks = HookMap::new();
    let swapped = model.encode_image(&counter, &mut hooks)?;
    mean_features(&original, &swapped)
}

/// Forward pass with the configured fair encoder(s) in place of the plain
/// ones. Fusion still reads the original inputs' gender signs; mitigation
/// acts strictly at the encoder boundary.
pub fn forward_mitigated(
    model: &ToyVlm,
    scene: &SceneInput,
    text: &TextInput,
    cfg: &MitigationConfig,
) -> Result<ForwardOutput> {
    let s_text = model.gender_sign_text(text)?;
    let s_img = scene.gender_sign();
    let mut hooks = HookMap::new();
    let txt = if cfg.target.text() {
        text_fair_features(model, text)?
    } else {
        model.encode_text(text, &mut hooks)?
    };
    let img = if cfg.target.image() {
        image_fair_features(model, scene, &cfg.templates)?
    } else {
        model.encode_image(scene, &mut hooks)?
    };
    model.fuse_and_detect(txt, img, s_text, s_img, text, &mut hooks)
}

/// Before/after comparison for one mitigation target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MitigationReport {
    pub target: MitigationTarget,
    pub bias_before: BiasScore,
    pub bias_after: BiasScore,
    /// `(before - after) / before * 100`; `None` when before is 0.
    pub pct_mitigated: Option<f64>,
    pub ap_before: f64,
    pub ap_after: f64,
}

/// Run detection with and without mitigation over a dataset; bias over the
/// gendered subset, average precision over everything.
pub fn evaluate_mitigation(
    model: &ToyVlm,
    samples: &[LabeledSample],
    cfg: &MitigationConfig,
) -> Result<MitigationReport> {
    if samples.is_empty() {
        return Err(Error::DatasetTooSmall { need: 1, got: 0 });
    }
    let n_cat = model.vocab().n_categories();
    let objects = model.vocab().categories().to_vec();
    let tau = model.config().tau;

    let run = |mitigated: bool| -> Result<(Vec<Vec<f64>>, f64)> {
        let confidences: Vec<Vec<f64>> = samples
            .par_iter()
            .map(|s| -> Result<Vec<f64>> {
                let det = if mitigated {
                    forward_mitigated(model, &s.scene, &s.text, cfg)?.detection
                } else {
                    model.detect(&s.scene, &s.text)?
                };
                Ok(det.confidences_by_category(n_cat))
            })
            .collect::<Result<_>>()?;
        let truths: Vec<_> = samples.iter().map(|s| s.truth.clone()).collect();
        let ap = average_precision_by_category(&confidences, &truths, n_cat)?.mean;
        Ok((confidences, ap))
    };

    let (conf_before, ap_before) = run(false)?;
    let (conf_after, ap_after) = run(true)?;

    let gendered_records = |confs: &[Vec<f64>]| -> Vec<DetectionRecord> {
        samples
            .iter()
            .zip(confs)
            .filter_map(|(s, c)| {
                s.gender.map(|g| DetectionRecord {
                    gender: g,
                    truth: s.truth.clone(),
                    confidences: c.clone(),
                })
            })
            .collect()
    };
    let bias_before = bias_from_records(&gendered_records(&conf_before), &objects, tau)?;
    let bias_after = bias_from_records(&gendered_records(&conf_after), &objects, tau)?;
    let pct_mitigated = if bias_before.value > 0.0 {
        Some((bias_before.value - bias_after.value) / bias_before.value * 100.0)
    } else {
        None
    };
    Ok(MitigationReport {
        target: cfg.target,
        bias_before,
        bias_after,
        pct_mitigated,
        ap_before,
        ap_after,
    })
}
