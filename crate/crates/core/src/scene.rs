//! Synthetic benchmark generator with controllable gender–object
//! co-occurrence, plus caption-based gender labeling.
//!
//! Generation is sequential and fully determined by the seed. Per image the
//! draw order is fixed: person presence, gender, person cell, one presence
//! draw per category in declared order, one cell draw per present category,
//! then one jitter draw per content coordinate per cell (row-major).

use serde::{Deserialize, Serialize};

use crate::embed::GenderMode;
use crate::error::{Error, Result};
use crate::inputs::{CellContent, Gender, LabeledSample, SceneInput, TextInput};
use crate::model::ToyVlm;
use crate::rng::SplitMix64;
use crate::tensor::Tensor2;

fn default_n_images() -> usize {
    2000
}
fn default_skew() -> f64 {
    0.8
}
fn default_person_rate() -> f64 {
    0.6
}
fn default_gender_balance() -> f64 {
    0.5
}
fn default_base_presence() -> f64 {
    0.3
}
fn default_jitter() -> f64 {
    0.7
}
fn default_gen_seed() -> u64 {
    7
}

/// Corpus generation parameters.
///
/// With a person of gender g in the scene, an indoor category is present
/// with probability `base_presence * (1 + skew)` when g is female and
/// `base_presence * (1 - skew)` when male; outdoor categories mirror this;
/// unlisted categories and person-free scenes use `base_presence`. The
/// female-minus-male presence margin therefore converges to
/// `2 * cooccur_skew * base_presence` per category.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_images: usize,
    pub categories: Vec<String>,
    pub indoor: Vec<String>,
    pub outdoor: Vec<String>,
    /// Co-occurrence skew in [0, 1]: 0 is gender-independent composition.
    pub cooccur_skew: f64,
    /// Fraction of scenes containing a person.
    pub person_rate: f64,
    /// Fraction male among person scenes.
    pub gender_balance: f64,
    /// Baseline per-category presence probability.
    pub base_presence: f64,
    /// Scale of per-cell appearance noise on content coordinates.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        let categories = crate::model::default_categories();
        let (indoor, outdoor) = categories.split_at(4);
        Self {
            n_images: default_n_images(),
            categories: categories.clone(),
            indoor: indoor.to_vec(),
            outdoor: outdoor.to_vec(),
            cooccur_skew: default_skew(),
            person_rate: default_person_rate(),
            gender_balance: default_gender_balance(),
            base_presence: default_base_presence(),
            jitter: default_jitter(),
            seed: default_gen_seed(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.categories.is_empty() {
            return Err(Error::BadGenConfig("category list is empty".into()));
        }
        if self.n_images == 0 {
            return Err(Error::BadGenConfig("n_images must be >= 1".into()));
        }
        for (name, v) in [
            ("cooccur_skew", self.cooccur_skew),
            ("person_rate", self.person_rate),
            ("gender_balance", self.gender_balance),
            ("base_presence", self.base_presence),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::BadGenConfig(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        if self.base_presence * (1.0 + self.cooccur_skew) > 1.0 {
            return Err(Error::BadGenConfig(format!(
                "base_presence * (1 + cooccur_skew) = {} exceeds 1",
                self.base_presence * (1.0 + self.cooccur_skew)
            )));
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::BadGenConfig("jitter must be >= 0".into()));
        }
        for name in self.indoor.iter().chain(&self.outdoor) {
            if !self.categories.contains(name) {
                return Err(Error::BadGenConfig(format!(
                    "indoor/outdoor name {name:?} is not a category"
                )));
            }
        }
        if self.indoor.iter().any(|n| self.outdoor.contains(n)) {
            return Err(Error::BadGenConfig(
                "indoor and outdoor sets must be disjoint".into(),
            ));
        }
        Ok(())
    }

    fn presence_prob(&self, indoor: bool, outdoor: bool, gender: Option<Gender>) -> f64 {
        let lean = match gender {
            Some(Gender::Female) if indoor => 1.0 + self.cooccur_skew,
            Some(Gender::Female) if outdoor => 1.0 - self.cooccur_skew,
            Some(Gender::Male) if indoor => 1.0 - self.cooccur_skew,
            Some(Gender::Male) if outdoor => 1.0 + self.cooccur_skew,
            _ => 1.0,
        };
        self.base_presence * lean
    }
}

/// Generate a corpus against the model's vocabulary and feature layout.
///
/// The generator's categories must match the model's. In side-channel mode
/// person cells take the mask appearance verbatim and carry no jitter, so
/// the mask-gender intervention is a bit-level no-op on appearance.
pub fn generate(cfg: &GenConfig, model: &ToyVlm) -> Result<Vec<LabeledSample>> {
    cfg.validate()?;
    let vocab = model.vocab();
    if cfg.categories != vocab.categories() {
        return Err(Error::BadGenConfig(format!(
            "generator categories {:?} do not match model categories {:?}",
            cfg.categories,
            vocab.categories()
        )));
    }
    let layout = model.layout();
    let grid = model.config().grid;
    let n_cells = grid * grid;
    if n_cells < 2 {
        return Err(Error::BadGenConfig("grid too small to place objects".into()));
    }

    let indoor: Vec<usize> = cfg
        .indoor
        .iter()
        .map(|n| vocab.id(n))
        .collect::<Result<_>>()?;
    let outdoor: Vec<usize> = cfg
        .outdoor
        .iter()
        .map(|n| vocab.id(n))
        .collect::<Result<_>>()?;

    let mut rng = SplitMix64::derive(cfg.seed, "corpus");
    let mut samples = Vec::with_capacity(cfg.n_images);
    for _ in 0..cfg.n_images {
        let has_person = rng.next_bool(cfg.person_rate);
        let gender = if has_person {
            Some(if rng.next_bool(cfg.gender_balance) {
                Gender::Male
            } else {
                Gender::Female
            })
        } else {
            None
        };

        let mut cells = vec![CellContent::Empty; n_cells];
        let mut gender_channel = vec![0i8; n_cells];
        let mut free: Vec<usize> = (0..n_cells).collect();
        if let Some(g) = gender {
            let slot = rng.next_index(free.len());
            let cell = free.swap_remove(slot);
            cells[cell] = CellContent::Person;
            gender_channel[cell] = g.sign() as i8;
        }

        for c in 0..vocab.n_categories() {
            let p = cfg.presence_prob(indoor.contains(&c), outdoor.contains(&c), gender);
            if rng.next_bool(p) && !free.is_empty() {
                let slot = rng.next_index(free.len());
                let cell = free.swap_remove(slot);
                cells[cell] = CellContent::Object(c);
            }
        }

        let mut appearance = Tensor2::zeros(n_cells, layout.d)?;
        for (cell, content) in cells.iter().enumerate() {
            let base = layout.appearance(*content, gender);
            appearance.row_mut(cell).copy_from_slice(&base);
            let jitter_free = matches!(content, CellContent::Person)
                && layout.mode == GenderMode::SideChannel;
            for coord in 0..layout.carrier_start() {
                let noise = rng.next_symmetric(cfg.jitter);
                if !jitter_free {
                    appearance.row_mut(cell)[coord] += noise;
                }
            }
        }

        let scene = SceneInput {
            grid,
            cells,
            gender_channel,
            appearance,
        };
        scene.validate()?;
        let truth = scene.object_set();
        let text = TextInput::prompt(vocab, gender);
        samples.push(LabeledSample {
            scene,
            text,
            truth,
            gender,
        });
    }
    Ok(samples)
}

/// Gender label derived from free-text captions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenderLabel {
    Male,
    Female,
    /// Both genders mentioned, or neither.
    Excluded,
}

const MALE_KEYWORDS: [&str; 6] = ["male", "males", "man", "men", "boy", "boys"];
const FEMALE_KEYWORDS: [&str; 6] = ["female", "females", "woman", "women", "girl", "girls"];

fn mentions_any(caption: &str, keywords: &[&str]) -> bool {
    caption
        .split(|ch: char| !ch.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .any(|w| {
            let w = w.to_lowercase();
            keywords.iter().any(|k| *k == w)
        })
}

/// Keyword gender labeling over a set of captions. Matching is
/// case-insensitive on whole words, so "mango" never matches "man".
/// Images whose captions mention both genders, or neither, are excluded.
pub fn label_gender_from_captions<S: AsRef<str>>(captions: &[S]) -> GenderLabel {
    let male = captions.iter().any(|c| mentions_any(c.as_ref(), &MALE_KEYWORDS));
    let female = captions
        .iter()
        .any(|c| mentions_any(c.as_ref(), &FEMALE_KEYWORDS));
    match (male, female) {
        (true, false) => GenderLabel::Male,
        (false, true) => GenderLabel::Female,
        _ => GenderLabel::Excluded,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model() -> ToyVlm {
        ToyVlm::new(crate::model::ModelConfig::default(), &[]).unwrap()
    }

    #[test]
    fn generation_is_deterministic() {
        let model = small_model();
        let cfg = GenConfig {
            n_images: 20,
            ..GenConfig::default()
        };
        let a = generate(&cfg, &model).unwrap();
        let b = generate(&cfg, &model).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.scene, y.scene);
            assert_eq!(x.text, y.text);
            assert_eq!(x.truth, y.truth);
            assert_eq!(x.gender, y.gender);
        }
    }

    #[test]
    fn truth_matches_cells_and_gender_matches_channel() {
        let model = small_model();
        let cfg = GenConfig {
            n_images: 50,
            ..GenConfig::default()
        };
        for s in generate(&cfg, &model).unwrap() {
            assert_eq!(s.truth, s.scene.object_set());
            let sign = s.scene.gender_sign();
            match s.gender {
                Some(g) => assert_eq!(sign, g.sign()),
                None => assert_eq!(sign, 0.0),
            }
        }
    }

    #[test]
    fn full_skew_separates_indoor_frequencies() {
        let model = small_model();
        let cfg = GenConfig {
            n_images: 2000,
            cooccur_skew: 1.0,
            ..GenConfig::default()
        };
        let samples = generate(&cfg, &model).unwrap();
        let vocab = model.vocab();
        for name in &cfg.indoor {
            let id = vocab.id(name).unwrap();
            let count = |g: Gender| {
                let imgs: Vec<_> = samples.iter().filter(|s| s.gender == Some(g)).collect();
                let with = imgs.iter().filter(|s| s.truth.contains(&id)).count();
                (with as f64, imgs.len() as f64)
            };
            let (f_with, f_total) = count(Gender::Female);
            let (m_with, m_total) = count(Gender::Male);
            assert!(
                f_with / f_total > m_with / m_total,
                "indoor {name}: female rate {} <= male rate {}",
                f_with / f_total,
                m_with / m_total
            );
        }
    }

    #[test]
    fn zero_skew_passes_independence_test() {
        let model = small_model();
        let cfg = GenConfig {
            n_images: 2000,
            cooccur_skew: 0.0,
            seed: 17,
            ..GenConfig::default()
        };
        let samples = generate(&cfg, &model).unwrap();
        let gendered: Vec<_> = samples.iter().filter(|s| s.gender.is_some()).collect();
        // chi-square with 1 dof per category, critical value at alpha=0.01
        let critical = 6.635;
        for c in 0..model.vocab().n_categories() {
            let count = |g, with| {
                gendered
                    .iter()
                    .filter(|s| s.gender == Some(g) && s.truth.contains(&c) == with)
                    .count() as f64
            };
            let table = [
                [count(Gender::Female, true), count(Gender::Female, false)],
                [count(Gender::Male, true), count(Gender::Male, false)],
            ];
            let total: f64 = table.iter().flatten().sum();
            let mut chi2 = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    let row: f64 = table[i].iter().sum();
                    let col: f64 = table[0][j] + table[1][j];
                    let expected = row * col / total;
                    chi2 += (table[i][j] - expected).powi(2) / expected;
                }
            }
            assert!(chi2 < critical, "category {c}: chi2 = {chi2}");
        }
    }

    #[test]
    fn empty_categories_rejected() {
        let cfg = GenConfig {
            categories: vec![],
            indoor: vec![],
            outdoor: vec![],
            ..GenConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn caption_labeling_keyword_rules() {
        assert_eq!(
            label_gender_from_captions(&["a man riding a horse"]),
            GenderLabel::Male
        );
        assert_eq!(
            label_gender_from_captions(&["a woman", "a man"]),
            GenderLabel::Excluded
        );
        assert_eq!(
            label_gender_from_captions(&["a dog on grass"]),
            GenderLabel::Excluded
        );
        assert_eq!(
            label_gender_from_captions(&["Two Girls at the beach"]),
            GenderLabel::Female
        );
        // substrings must not match
        assert_eq!(
            label_gender_from_captions(&["a mango and a manatee"]),
            GenderLabel::Excluded
        );
        // "female" contains "male" but is a female keyword
        assert_eq!(
            label_gender_from_captions(&["a female cyclist"]),
            GenderLabel::Female
        );
    }

    #[test]
    fn caption_labeling_order_invariant_and_idempotent() {
        let a = ["a man", "a dog"];
        let b = ["a dog", "a man"];
        assert_eq!(
            label_gender_from_captions(&a),
            label_gender_from_captions(&b)
        );
        assert_eq!(label_gender_from_captions(&a), GenderLabel::Male);
        assert_eq!(label_gender_from_captions(&a), GenderLabel::Male);
    }
}
