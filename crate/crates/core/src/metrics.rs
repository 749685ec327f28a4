//! The measurement core: per-(object, gender) false-positive rates, the
//! bias score summed over objects, the same-gender split significance
//! baseline, and per-object reports.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inputs::Gender;
use crate::rng::SplitMix64;

/// Image-level detection record: everything the metrics need to know about
/// one image.
#[derive(Debug, Clone)]
pub struct DetectionRecord {
    pub gender: Gender,
    /// Ground-truth category ids.
    pub truth: BTreeSet<usize>,
    /// Confidence per category id, in [0, 1]; missing categories are 0.
    pub confidences: Vec<f64>,
}

/// Counts behind one (object, gender) false-positive rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FprCell {
    pub false_positives: usize,
    /// Images of that gender whose ground truth lacks the object.
    pub eligible: usize,
}

impl FprCell {
    pub fn rate(&self) -> f64 {
        if self.eligible == 0 {
            0.0
        } else {
            self.false_positives as f64 / self.eligible as f64
        }
    }
}

/// Per-(object, gender) false-positive rates over a dataset.
#[derive(Debug, Clone)]
pub struct FprTable {
    /// Object names, indexed by object id.
    pub objects: Vec<String>,
    pub male: Vec<FprCell>,
    pub female: Vec<FprCell>,
}

impl FprTable {
    pub fn cell(&self, object: usize, gender: Gender) -> &FprCell {
        match gender {
            Gender::Male => &self.male[object],
            Gender::Female => &self.female[object],
        }
    }

    /// Objects with zero eligible images for at least one gender.
    pub fn skipped(&self) -> Vec<usize> {
        (0..self.objects.len())
            .filter(|&o| self.male[o].eligible == 0 || self.female[o].eligible == 0)
            .collect()
    }
}

/// The summed absolute FPR gap between genders.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiasScore {
    pub value: f64,
    /// |FPR_male - FPR_female| per object id; skipped objects contribute 0.
    pub per_object: Vec<f64>,
    /// Objects with zero eligible images for either gender.
    pub skipped: Vec<usize>,
}

/// False-positive rates thresholded at `tau`.
///
/// An image counts as a false positive for object `o` when its ground
/// truth lacks `o` and its confidence for `o` exceeds `tau`. Objects that
/// are present in every image of some gender have no eligible images for
/// it and are marked skipped rather than erroring.
pub fn fpr_table(
    records: &[DetectionRecord],
    objects: &[String],
    tau: f64,
) -> Result<FprTable> {
    if objects.is_empty() {
        return Err(Error::Internal("fpr_table needs a nonempty object list".into()));
    }
    let n = objects.len();
    let mut male = vec![
        FprCell {
            false_positives: 0,
            eligible: 0
        };
        n
    ];
    let mut female = male.clone();
    for rec in records {
        if rec.confidences.len() != n {
            return Err(Error::Internal(format!(
                "record has {} confidences for {} objects",
                rec.confidences.len(),
                n
            )));
        }
        let side = match rec.gender {
            Gender::Male => &mut male,
            Gender::Female => &mut female,
        };
        for o in 0..n {
            if rec.truth.contains(&o) {
                continue;
            }
            side[o].eligible += 1;
            if rec.confidences[o] > tau {
                side[o].false_positives += 1;
            }
        }
    }
    Ok(FprTable {
        objects: objects.to_vec(),
        male,
        female,
    })
}

/// Sum over objects of the absolute male/female FPR difference. Objects
/// skipped for missing eligibility contribute zero and are listed.
pub fn bias_vl(table: &FprTable) -> BiasScore {
    let skipped = table.skipped();
    let mut per_object = vec![0.0; table.objects.len()];
    let mut value = 0.0;
    for o in 0..table.objects.len() {
        if skipped.contains(&o) {
            continue;
        }
        let diff = (table.male[o].rate() - table.female[o].rate()).abs();
        per_object[o] = diff;
        value += diff;
    }
    BiasScore {
        value,
        per_object,
        skipped,
    }
}

/// Convenience: threshold, count, and sum in one step.
pub fn bias_from_records(
    records: &[DetectionRecord],
    objects: &[String],
    tau: f64,
) -> Result<BiasScore> {
    Ok(bias_vl(&fpr_table(records, objects, tau)?))
}

/// Mean and spread of the bias score over random same-gender splits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitBaseline {
    pub mean: f64,
    /// Sample standard deviation over trials (0 for a single trial).
    pub std_dev: f64,
    pub n_trials: usize,
    pub values: Vec<f64>,
}

/// Same-gender split control: per trial, shuffle the images of one gender,
/// halve them (sizes differing by one when odd), relabel the halves as
/// pseudo-genders, and measure the bias score. A model with gender-blind
/// behavior keeps this near zero, so a gendered split scoring far above it
/// indicates real gender dependence.
pub fn split_baseline(
    records: &[DetectionRecord],
    objects: &[String],
    tau: f64,
    seed: u64,
    n_trials: usize,
) -> Result<SplitBaseline> {
    if records.len() < 2 {
        return Err(Error::DatasetTooSmall {
            need: 2,
            got: records.len(),
        });
    }
    if n_trials == 0 {
        return Err(Error::Internal("split_baseline needs n_trials >= 1".into()));
    }
    let mut rng = SplitMix64::derive(seed, "split_baseline");
    let mut values = Vec::with_capacity(n_trials);
    for _ in 0..n_trials {
        let mut order: Vec<usize> = (0..records.len()).collect();
        rng.shuffle(&mut order);
        let half = records.len() / 2;
        let relabeled: Vec<DetectionRecord> = order
            .iter()
            .enumerate()
            .map(|(pos, &i)| {
                let mut r = records[i].clone();
                r.gender = if pos < half {
                    Gender::Male
                } else {
                    Gender::Female
                };
                r
            })
            .collect();
        values.push(bias_from_records(&relabeled, objects, tau)?.value);
    }
    let mean = values.iter().sum::<f64>() / n_trials as f64;
    let std_dev = if n_trials < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (n_trials - 1) as f64;
        var.sqrt()
    };
    Ok(SplitBaseline {
        mean,
        std_dev,
        n_trials,
        values,
    })
}

/// One row of the per-object report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectFprRow {
    pub object: String,
    pub fpr_male: f64,
    pub fpr_female: f64,
    /// fpr_male - fpr_female.
    pub diff: f64,
}

/// Per-object FPR rows, sorted by signed difference (most female-leaning
/// first).
pub fn per_object_report(table: &FprTable) -> Vec<ObjectFprRow> {
    let mut rows: Vec<ObjectFprRow> = (0..table.objects.len())
        .map(|o| {
            let m = table.male[o].rate();
            let f = table.female[o].rate();
            ObjectFprRow {
                object: table.objects[o].clone(),
                fpr_male: m,
                fpr_female: f,
                diff: m - f,
            }
        })
        .collect();
    rows.sort_by(|a, b| a.diff.partial_cmp(&b.diff).expect("finite rates"));
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("obj{i}")).collect()
    }

    fn record(gender: Gender, truth: &[usize], conf: Vec<f64>) -> DetectionRecord {
        DetectionRecord {
            gender,
            truth: truth.iter().copied().collect(),
            confidences: conf,
        }
    }

    #[test]
    fn silent_detector_has_zero_rates() {
        let recs = vec![
            record(Gender::Male, &[0], vec![0.0, 0.0]),
            record(Gender::Female, &[], vec![0.0, 0.0]),
        ];
        let t = fpr_table(&recs, &names(2), 0.5).unwrap();
        for o in 0..2 {
            assert_eq!(t.male[o].false_positives, 0);
            assert_eq!(t.female[o].false_positives, 0);
        }
        assert_eq!(bias_vl(&t).value, 0.0);
    }

    #[test]
    fn quarter_rate_from_one_false_fire() {
        // 4 female images lack object 0; the detector falsely fires on 1.
        let mut recs: Vec<DetectionRecord> = (0..4)
            .map(|_| record(Gender::Female, &[], vec![0.0]))
            .collect();
        recs[2].confidences[0] = 0.9;
        recs.push(record(Gender::Male, &[], vec![0.0]));
        let t = fpr_table(&recs, &names(1), 0.5).unwrap();
        assert_eq!(t.female[0].eligible, 4);
        assert_eq!(t.female[0].false_positives, 1);
        assert_eq!(t.female[0].rate(), 0.25);
    }

    #[test]
    fn always_firing_detector_has_unit_rates() {
        let recs = vec![
            record(Gender::Male, &[], vec![1.0, 1.0]),
            record(Gender::Female, &[], vec![1.0, 1.0]),
        ];
        let t = fpr_table(&recs, &names(2), 0.5).unwrap();
        for o in 0..2 {
            assert_eq!(t.male[o].rate(), 1.0);
            assert_eq!(t.female[o].rate(), 1.0);
        }
    }

    #[test]
    fn bias_vl_direct_arithmetic() {
        // male rates {0.2, 0.5}, female {0.1, 0.3} -> 0.1 + 0.2 = 0.3
        let mut recs = Vec::new();
        for i in 0..10 {
            recs.push(record(
                Gender::Male,
                &[],
                vec![if i < 2 { 1.0 } else { 0.0 }, if i < 5 { 1.0 } else { 0.0 }],
            ));
            recs.push(record(
                Gender::Female,
                &[],
                vec![if i < 1 { 1.0 } else { 0.0 }, if i < 3 { 1.0 } else { 0.0 }],
            ));
        }
        let score = bias_from_records(&recs, &names(2), 0.5).unwrap();
        assert!((score.value - 0.3).abs() < 1e-15);
    }

    #[test]
    fn bias_vl_zero_for_identical_rates() {
        let recs = vec![
            record(Gender::Male, &[], vec![0.9, 0.1]),
            record(Gender::Female, &[], vec![0.9, 0.1]),
        ];
        assert_eq!(bias_from_records(&recs, &names(2), 0.5).unwrap().value, 0.0);
    }

    #[test]
    fn ever_present_object_is_skipped() {
        let recs = vec![
            record(Gender::Male, &[0], vec![0.9, 0.0]),
            record(Gender::Female, &[], vec![0.9, 0.0]),
        ];
        let t = fpr_table(&recs, &names(2), 0.5).unwrap();
        let score = bias_vl(&t);
        assert_eq!(score.skipped, vec![0]);
        assert_eq!(score.per_object[0], 0.0);
    }

    #[test]
    fn identical_behavior_gives_zero_baseline() {
        let recs: Vec<DetectionRecord> = (0..10)
            .map(|_| record(Gender::Female, &[], vec![0.9, 0.1]))
            .collect();
        let b = split_baseline(&recs, &names(2), 0.5, 1, 5).unwrap();
        assert_eq!(b.mean, 0.0);
        assert_eq!(b.std_dev, 0.0);
    }

    #[test]
    fn single_trial_is_reproducible() {
        let recs: Vec<DetectionRecord> = (0..9)
            .map(|i| {
                record(
                    Gender::Female,
                    &[],
                    vec![if i % 3 == 0 { 0.9 } else { 0.1 }, 0.2 * i as f64 / 9.0],
                )
            })
            .collect();
        let a = split_baseline(&recs, &names(2), 0.5, 99, 1).unwrap();
        let b = split_baseline(&recs, &names(2), 0.5, 99, 1).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.std_dev, 0.0);
    }

    #[test]
    fn report_rows_sorted_by_diff() {
        let recs = vec![
            record(Gender::Male, &[], vec![1.0, 0.0]),
            record(Gender::Female, &[], vec![0.0, 1.0]),
        ];
        let t = fpr_table(&recs, &names(2), 0.5).unwrap();
        let rows = per_object_report(&t);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].object, "obj1");
        assert!((rows[0].diff - -1.0).abs() < 1e-15);
        assert!((rows[1].diff - 1.0).abs() < 1e-15);
    }
}
