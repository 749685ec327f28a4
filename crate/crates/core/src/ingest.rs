//! Ingestion of external detection results for standalone auditing.
//!
//! Three files describe a run (documented minimal subset of the
//! COCO-style formats; unknown extra fields are ignored, bboxes are
//! accepted and ignored):
//!
//! * annotations: `{"images": [{"id": N}], "annotations": [{"image_id": N,
//!   "category_id": C}], "categories": [{"id": C, "name": "car"}]}`
//! * results: `[{"image_id": N, "category_id": C, "score": S}])`
//! * gender labels: either a two-column text file `<image_id>
//!   <male|female|excluded>`, or a caption file `{"annotations":
//!   [{"image_id": N, "caption": "..."}]}` labeled by gender keywords.
//!
//! Images labeled `excluded` (both genders mentioned, neither mentioned,
//! or simply unlisted) are dropped and counted.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inputs::Gender;
use crate::metrics::DetectionRecord;
use crate::scene::{label_gender_from_captions, GenderLabel};

#[derive(Debug, Serialize, Deserialize)]
struct CocoImage {
    id: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoAnnotation {
    image_id: u64,
    category_id: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoAnnotationsFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoResult {
    image_id: u64,
    category_id: u64,
    score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bbox: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CaptionAnnotation {
    image_id: u64,
    caption: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CaptionsFile {
    annotations: Vec<CaptionAnnotation>,
}

/// Per-image joined record from external files.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalImage {
    pub id: u64,
    pub gender: Gender,
    /// Ground-truth category indices (dense, into `categories`).
    pub truth: BTreeSet<usize>,
    /// (category index, score) detections.
    pub detections: Vec<(usize, f64)>,
}

/// Joined external dataset, gender-excluded images removed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalDetections {
    /// Category names by dense index, in declared id order.
    pub categories: Vec<String>,
    /// Images in ascending id order.
    pub images: Vec<ExternalImage>,
    /// How many images were dropped for an excluded/unknown gender.
    pub dropped_excluded: usize,
}

/// Where gender labels come from.
#[derive(Debug, Clone)]
pub enum GenderSource<'a> {
    /// Two-column text file.
    LabelFile(&'a Path),
    /// COCO-style caption file, labeled with the gender keyword rule.
    Captions(&'a Path),
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn read_gender_labels(path: &Path) -> Result<HashMap<u64, GenderLabel>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (id, label) = match (parts.next(), parts.next(), parts.next()) {
            (Some(id), Some(label), None) => (id, label),
            _ => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    message: format!("line {}: expected `<image_id> <label>`", lineno + 1),
                })
            }
        };
        let id: u64 = id.parse().map_err(|_| Error::Parse {
            path: path.display().to_string(),
            message: format!("line {}: bad image id {id:?}", lineno + 1),
        })?;
        let label = match label {
            "male" => GenderLabel::Male,
            "female" => GenderLabel::Female,
            "excluded" => GenderLabel::Excluded,
            other => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    message: format!("line {}: unknown gender label {other:?}", lineno + 1),
                })
            }
        };
        if out.insert(id, label).is_some() {
            return Err(Error::Ingest(format!("duplicate gender entry for image {id}")));
        }
    }
    Ok(out)
}

fn gender_labels_from_captions(path: &Path) -> Result<HashMap<u64, GenderLabel>> {
    let file: CaptionsFile = read_json(path)?;
    let mut grouped: BTreeMap<u64, Vec<String>> = BTreeMap::new();
    for ann in file.annotations {
        grouped.entry(ann.image_id).or_default().push(ann.caption);
    }
    Ok(grouped
        .into_iter()
        .map(|(id, captions)| (id, label_gender_from_captions(&captions)))
        .collect())
}

/// Join results, annotations, and gender labels into per-image records.
///
/// Fails on duplicate image ids, on category ids not declared in the
/// annotations file, on detections for images without ground truth, and on
/// non-finite scores; every error names the offending record. Images whose
/// gender comes out excluded (or is simply missing) are dropped and
/// counted in `dropped_excluded`.
pub fn ingest_external(
    results_path: &Path,
    annotations_path: &Path,
    genders: GenderSource<'_>,
) -> Result<ExternalDetections> {
    let ann_file: CocoAnnotationsFile = read_json(annotations_path)?;
    let results: Vec<CocoResult> = read_json(results_path)?;
    let labels = match genders {
        GenderSource::LabelFile(p) => read_gender_labels(p)?,
        GenderSource::Captions(p) => gender_labels_from_captions(p)?,
    };

    let mut categories = ann_file.categories;
    categories.sort_by_key(|c| c.id);
    let mut cat_index: HashMap<u64, usize> = HashMap::new();
    for (i, c) in categories.iter().enumerate() {
        if cat_index.insert(c.id, i).is_some() {
            return Err(Error::Ingest(format!("duplicate category id {}", c.id)));
        }
    }

    let mut truth: BTreeMap<u64, BTreeSet<usize>> = BTreeMap::new();
    for img in &ann_file.images {
        if truth.insert(img.id, BTreeSet::new()).is_some() {
            return Err(Error::Ingest(format!("duplicate image id {}", img.id)));
        }
    }
    for ann in &ann_file.annotations {
        let cat = *cat_index.get(&ann.category_id).ok_or_else(|| {
            Error::Ingest(format!(
                "annotation for image {} references undeclared category id {}",
                ann.image_id, ann.category_id
            ))
        })?;
        truth
            .get_mut(&ann.image_id)
            .ok_or_else(|| {
                Error::Ingest(format!(
                    "annotation references unknown image id {}",
                    ann.image_id
                ))
            })?
            .insert(cat);
    }

    let mut detections: BTreeMap<u64, Vec<(usize, f64)>> = BTreeMap::new();
    for (i, r) in results.iter().enumerate() {
        let cat = *cat_index.get(&r.category_id).ok_or_else(|| {
            Error::Ingest(format!(
                "result #{i} (image {}) references undeclared category id {}",
                r.image_id, r.category_id
            ))
        })?;
        if !truth.contains_key(&r.image_id) {
            return Err(Error::Ingest(format!(
                "result #{i} references image id {} with no ground truth",
                r.image_id
            )));
        }
        if !r.score.is_finite() {
            return Err(Error::Ingest(format!(
                "result #{i} (image {}, category {}) has non-finite score",
                r.image_id, r.category_id
            )));
        }
        detections.entry(r.image_id).or_default().push((cat, r.score));
    }

    let mut images = Vec::new();
    let mut dropped = 0usize;
    for (id, truth_set) in truth {
        let gender = match labels.get(&id) {
            Some(GenderLabel::Male) => Gender::Male,
            Some(GenderLabel::Female) => Gender::Female,
            Some(GenderLabel::Excluded) | None => {
                dropped += 1;
                continue;
            }
        };
        images.push(ExternalImage {
            id,
            gender,
            truth: truth_set,
            detections: detections.remove(&id).unwrap_or_default(),
        });
    }

    Ok(ExternalDetections {
        categories: categories.into_iter().map(|c| c.name).collect(),
        images,
        dropped_excluded: dropped,
    })
}

impl ExternalDetections {
    /// Image-level records for the metrics: per category, the maximum
    /// detection score (0 when undetected).
    pub fn to_detection_records(&self) -> Vec<DetectionRecord> {
        self.images
            .iter()
            .map(|img| {
                let mut confidences = vec![0.0; self.categories.len()];
                for &(cat, score) in &img.detections {
                    if score > confidences[cat] {
                        confidences[cat] = score;
                    }
                }
                DetectionRecord {
                    gender: img.gender,
                    truth: img.truth.clone(),
                    confidences,
                }
            })
            .collect()
    }

    /// Drop categories co-occurring with gendered images fewer than
    /// `min_count` times (count = images whose ground truth contains the
    /// category). Returns the filtered dataset and the removed names.
    pub fn filter_min_cooccurrence(&self, min_count: usize) -> (ExternalDetections, Vec<String>) {
        let mut counts = vec![0usize; self.categories.len()];
        for img in &self.images {
            for &c in &img.truth {
                counts[c] += 1;
            }
        }
        let keep: Vec<bool> = counts.iter().map(|&c| c >= min_count).collect();
        let remap: Vec<Option<usize>> = {
            let mut next = 0usize;
            keep.iter()
                .map(|&k| {
                    if k {
                        let i = next;
                        next += 1;
                        Some(i)
                    } else {
                        None
                    }
                })
                .collect()
        };
        let images = self
            .images
            .iter()
            .map(|img| ExternalImage {
                id: img.id,
                gender: img.gender,
                truth: img.truth.iter().filter_map(|&c| remap[c]).collect(),
                detections: img
                    .detections
                    .iter()
                    .filter_map(|&(c, s)| remap[c].map(|c2| (c2, s)))
                    .collect(),
            })
            .collect();
        let removed = self
            .categories
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| !k)
            .map(|(n, _)| n.clone())
            .collect();
        let categories = self
            .categories
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(n, _)| n.clone())
            .collect();
        (
            ExternalDetections {
                categories,
                images,
                dropped_excluded: self.dropped_excluded,
            },
            removed,
        )
    }

    /// Write the dataset back out in the ingestible formats (results +
    /// annotations + gender labels). Category ids are the dense indices.
    pub fn write_files(
        &self,
        results_path: &Path,
        annotations_path: &Path,
        gender_path: &Path,
    ) -> Result<()> {
        let ann = CocoAnnotationsFile {
            images: self.images.iter().map(|i| CocoImage { id: i.id }).collect(),
            annotations: self
                .images
                .iter()
                .flat_map(|i| {
                    i.truth.iter().map(|&c| CocoAnnotation {
                        image_id: i.id,
                        category_id: c as u64,
                    })
                })
                .collect(),
            categories: self
                .categories
                .iter()
                .enumerate()
                .map(|(i, name)| CocoCategory {
                    id: i as u64,
                    name: name.clone(),
                })
                .collect(),
        };
        let results: Vec<CocoResult> = self
            .images
            .iter()
            .flat_map(|i| {
                i.detections.iter().map(|&(c, s)| CocoResult {
                    image_id: i.id,
                    category_id: c as u64,
                    score: s,
                    bbox: None,
                })
            })
            .collect();
        let genders: String = self
            .images
            .iter()
            .map(|i| format!("{} {}\n", i.id, i.gender.as_str()))
            .collect();

        let write = |path: &Path, contents: String| -> Result<()> {
            std::fs::write(path, contents).map_err(|e| Error::io(path, e))
        };
        write(
            annotations_path,
            serde_json::to_string_pretty(&ann).expect("serializable"),
        )?;
        write(
            results_path,
            serde_json::to_string_pretty(&results).expect("serializable"),
        )?;
        write(gender_path, genders)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, contents: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, contents).unwrap();
        p
    }

    const ANNOTATIONS: &str = r#"{
        "images": [{"id": 1}, {"id": 2}, {"id": 3}],
        "annotations": [
            {"image_id": 1, "category_id": 10},
            {"image_id": 2, "category_id": 20}
        ],
        "categories": [{"id": 10, "name": "cat"}, {"id": 20, "name": "car"}]
    }"#;

    #[test]
    fn joins_and_drops_excluded() {
        let dir = tempfile::tempdir().unwrap();
        let ann = write(dir.path(), "ann.json", ANNOTATIONS);
        let res = write(
            dir.path(),
            "res.json",
            r#"[{"image_id": 1, "category_id": 20, "score": 0.9},
                {"image_id": 1, "category_id": 20, "score": 0.4},
                {"image_id": 2, "category_id": 10, "score": 0.8}]"#,
        );
        let gen = write(dir.path(), "gender.txt", "1 female\n2 male\n3 excluded\n");
        let data = ingest_external(&res, &ann, GenderSource::LabelFile(&gen)).unwrap();
        assert_eq!(data.categories, vec!["cat", "car"]);
        assert_eq!(data.images.len(), 2);
        assert_eq!(data.dropped_excluded, 1);
        let recs = data.to_detection_records();
        // max over duplicate detections
        assert_eq!(recs[0].confidences, vec![0.0, 0.9]);
    }

    #[test]
    fn empty_results_file_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let ann = write(dir.path(), "ann.json", ANNOTATIONS);
        let res = write(dir.path(), "res.json", "[]");
        let gen = write(dir.path(), "gender.txt", "1 female\n2 male\n3 male\n");
        let data = ingest_external(&res, &ann, GenderSource::LabelFile(&gen)).unwrap();
        assert_eq!(data.images.len(), 3);
        assert!(data.images.iter().all(|i| i.detections.is_empty()));
    }

    #[test]
    fn undeclared_category_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let ann = write(dir.path(), "ann.json", ANNOTATIONS);
        let res = write(
            dir.path(),
            "res.json",
            r#"[{"image_id": 1, "category_id": 99, "score": 0.9}]"#,
        );
        let gen = write(dir.path(), "gender.txt", "1 female\n");
        let err = ingest_external(&res, &ann, GenderSource::LabelFile(&gen)).unwrap_err();
        assert!(err.to_string().contains("99"), "error: {err}");
    }

    #[test]
    fn duplicate_image_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ann = write(
            dir.path(),
            "ann.json",
            r#"{"images": [{"id": 1}, {"id": 1}], "annotations": [], "categories": []}"#,
        );
        let res = write(dir.path(), "res.json", "[]");
        let gen = write(dir.path(), "gender.txt", "1 male\n");
        let err = ingest_external(&res, &ann, GenderSource::LabelFile(&gen)).unwrap_err();
        assert!(err.to_string().contains("duplicate image id"), "error: {err}");
    }

    #[test]
    fn captions_label_genders() {
        let dir = tempfile::tempdir().unwrap();
        let ann = write(dir.path(), "ann.json", ANNOTATIONS);
        let res = write(dir.path(), "res.json", "[]");
        let cap = write(
            dir.path(),
            "cap.json",
            r#"{"annotations": [
                {"image_id": 1, "caption": "A woman with a cat"},
                {"image_id": 2, "caption": "a man and a woman"},
                {"image_id": 3, "caption": "three boys playing"}
            ]}"#,
        );
        let data = ingest_external(&res, &ann, GenderSource::Captions(&cap)).unwrap();
        assert_eq!(data.images.len(), 2);
        assert_eq!(data.dropped_excluded, 1);
        assert_eq!(data.images[0].gender, Gender::Female);
        assert_eq!(data.images[1].gender, Gender::Male);
    }

    #[test]
    fn round_trip_write_then_ingest() {
        let dir = tempfile::tempdir().unwrap();
        let ann = write(dir.path(), "ann.json", ANNOTATIONS);
        let res = write(
            dir.path(),
            "res.json",
            r#"[{"image_id": 2, "category_id": 10, "score": 0.75}]"#,
        );
        let gen = write(dir.path(), "gender.txt", "1 female\n2 male\n3 female\n");
        let data = ingest_external(&res, &ann, GenderSource::LabelFile(&gen)).unwrap();

        let (r2, a2, g2) = (
            dir.path().join("res2.json"),
            dir.path().join("ann2.json"),
            dir.path().join("gender2.txt"),
        );
        data.write_files(&r2, &a2, &g2).unwrap();
        let reread = ingest_external(&r2, &a2, GenderSource::LabelFile(&g2)).unwrap();
        assert_eq!(
            ExternalDetections {
                dropped_excluded: 0,
                ..data
            },
            reread
        );
    }

    #[test]
    fn min_cooccurrence_filter_drops_rare_categories() {
        let dir = tempfile::tempdir().unwrap();
        let ann = write(dir.path(), "ann.json", ANNOTATIONS);
        let res = write(dir.path(), "res.json", "[]");
        let gen = write(dir.path(), "gender.txt", "1 female\n2 male\n3 male\n");
        let data = ingest_external(&res, &ann, GenderSource::LabelFile(&gen)).unwrap();
        // "cat" and "car" each co-occur once; threshold 2 drops both
        let (filtered, removed) = data.filter_min_cooccurrence(2);
        assert!(filtered.categories.is_empty());
        assert_eq!(removed, vec!["cat", "car"]);
        let (kept, removed) = data.filter_min_cooccurrence(1);
        assert_eq!(kept.categories.len(), 2);
        assert!(removed.is_empty());
    }
}
