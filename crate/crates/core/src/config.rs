//! Declarative experiment configuration.
//!
//! One JSON file per experiment. Every field of `model` and
//! `data.generate` is optional and falls back to the documented default;
//! `schema_version` and `experiment` are required. See `configs/` for a
//! validated example of each experiment kind.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::ModuleId;
use crate::cma::InterventionKind;
use crate::error::{Error, Result};
use crate::mitigation::MitigationTarget;
use crate::model::{InjectionSpec, ModelConfig};
use crate::scene::GenConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Eval,
    SplitBaseline,
    Cma,
    Sweep,
    Combined,
    Mitigate,
    Ingest,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Eval => "eval",
            ExperimentKind::SplitBaseline => "split_baseline",
            ExperimentKind::Cma => "cma",
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::Combined => "combined",
            ExperimentKind::Mitigate => "mitigate",
            ExperimentKind::Ingest => "ingest",
        }
    }
}

/// Exactly one data source: a generated corpus or external files.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<GenConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external: Option<ExternalSpec>,
}

/// External file paths, relative to the config file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSpec {
    pub results: String,
    pub annotations: String,
    /// Two-column gender label file. Give this or `captions`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genders: Option<String>,
    /// COCO-style caption file labeled by gender keywords.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub captions: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmaParams {
    pub intervention: InterventionKind,
    pub module: ModuleId,
    /// Inclusive layer prefix: heads of layers `0..=depth` are mediated.
    pub depth: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepParams {
    pub modules: Vec<ModuleId>,
    /// Override the modality-matched intervention for every module.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intervention: Option<InterventionKind>,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            modules: ModuleId::ALL.to_vec(),
            intervention: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CombinedParams {
    /// Fraction of each encoder's layers used as mediators, in (0, 1].
    pub fraction: f64,
}

impl Default for CombinedParams {
    fn default() -> Self {
        Self { fraction: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MitigateParams {
    pub targets: Vec<MitigationTarget>,
}

impl Default for MitigateParams {
    fn default() -> Self {
        Self {
            targets: MitigationTarget::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitBaselineParams {
    pub n_trials: usize,
    pub trial_seed: u64,
}

impl Default for SplitBaselineParams {
    fn default() -> Self {
        Self {
            n_trials: 20,
            trial_seed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestParams {
    /// Keep categories co-occurring with gendered images at least this
    /// many times; 0 disables the filter.
    pub min_cooccur: usize,
    /// Confidence threshold for the false-positive counts.
    pub tau: f64,
}

impl Default for IngestParams {
    fn default() -> Self {
        Self {
            min_cooccur: 100,
            tau: 0.5,
        }
    }
}

/// Root config file structure.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub injections: Vec<InjectionSpec>,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cma: Option<CmaParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combined: Option<CombinedParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mitigate: Option<MitigateParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_baseline: Option<SplitBaselineParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingest: Option<IngestParams>,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut de = serde_json::Deserializer::from_str(&text);
        let cfg: ExperimentConfig =
            serde_path_to_error::deserialize(&mut de).map_err(|e| Error::BadExperimentConfig {
                field: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        Ok(cfg)
    }

    /// Cross-field validation; every failure names the offending field.
    pub fn validate(&self) -> Result<()> {
        let field_err = |field: &str, message: String| {
            Err(Error::BadExperimentConfig {
                field: field.to_string(),
                message,
            })
        };
        if self.schema_version != SCHEMA_VERSION {
            return field_err(
                "schema_version",
                format!("unrecognized version {} (expected {SCHEMA_VERSION})", self.schema_version),
            );
        }
        match (&self.data.generate, &self.data.external) {
            (Some(_), Some(_)) => {
                return field_err("data", "give exactly one of `generate` or `external`".into())
            }
            (None, None) => {
                return field_err("data", "missing data source (`generate` or `external`)".into())
            }
            _ => {}
        }
        let is_ingest = self.experiment == ExperimentKind::Ingest;
        if is_ingest && self.data.external.is_none() {
            return field_err("data.external", "ingest runs on external files".into());
        }
        if !is_ingest && self.data.generate.is_none() {
            return field_err(
                "data.generate",
                "model experiments run on a generated corpus".into(),
            );
        }
        if let Some(ext) = &self.data.external {
            match (&ext.genders, &ext.captions) {
                (Some(_), Some(_)) => {
                    return field_err(
                        "data.external",
                        "give exactly one of `genders` or `captions`".into(),
                    )
                }
                (None, None) => {
                    return field_err(
                        "data.external",
                        "missing gender source (`genders` or `captions`)".into(),
                    )
                }
                _ => {}
            }
        }
        if let Some(gen) = &self.data.generate {
            gen.validate().map_err(|e| Error::BadExperimentConfig {
                field: "data.generate".into(),
                message: e.to_string(),
            })?;
            if gen.categories != self.model.categories {
                return field_err(
                    "data.generate.categories",
                    "generator categories must match model.categories".into(),
                );
            }
        }
        if !is_ingest {
            self.model.validate().map_err(|e| Error::BadExperimentConfig {
                field: "model".into(),
                message: e.to_string(),
            })?;
        }
        match self.experiment {
            ExperimentKind::Cma if self.cma.is_none() => {
                return field_err("cma", "missing parameters for the cma experiment".into())
            }
            _ => {}
        }
        if let Some(c) = &self.combined {
            if !(c.fraction > 0.0 && c.fraction <= 1.0) {
                return field_err("combined.fraction", format!("must lie in (0, 1], got {}", c.fraction));
            }
        }
        if let Some(s) = &self.split_baseline {
            if s.n_trials == 0 {
                return field_err("split_baseline.n_trials", "must be >= 1".into());
            }
        }
        if let Some(s) = &self.sweep {
            if s.modules.is_empty() {
                return field_err("sweep.modules", "must name at least one module".into());
            }
        }
        if let Some(m) = &self.mitigate {
            if m.targets.is_empty() {
                return field_err("mitigate.targets", "must name at least one target".into());
            }
        }
        if let Some(i) = &self.ingest {
            if !(i.tau > 0.0 && i.tau < 1.0) {
                return field_err("ingest.tau", format!("must lie in (0, 1), got {}", i.tau));
            }
        }
        Ok(())
    }

    /// Overwrite every seed with one value (the `--seed-override` flag).
    pub fn override_seeds(&mut self, seed: u64) {
        self.model.seed = seed;
        if let Some(gen) = &mut self.data.generate {
            gen.seed = seed;
        }
        if let Some(sb) = &mut self.split_baseline {
            sb.trial_seed = seed;
        }
    }

    /// The seeds that determine this run's outputs.
    pub fn seeds(&self) -> BTreeMap<String, u64> {
        let mut m = BTreeMap::new();
        if self.experiment != ExperimentKind::Ingest {
            m.insert("model".to_string(), self.model.seed);
        }
        if let Some(gen) = &self.data.generate {
            m.insert("data".to_string(), gen.seed);
        }
        if let Some(sb) = &self.split_baseline {
            m.insert("trials".to_string(), sb.trial_seed);
        }
        m
    }

    /// Content hash of the effective config: the SHA-256 of its canonical
    /// JSON serialization. Identical content gives an identical
    /// fingerprint; any content change changes it.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(64);
        for b in digest {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    }

    /// Resolve a path in the config relative to the config file location.
    pub fn resolve_path(config_path: &Path, relative: &str) -> PathBuf {
        let p = Path::new(relative);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            config_path
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join(p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(kind: &str) -> String {
        format!(
            r#"{{
                "schema_version": 1,
                "experiment": "{kind}",
                "data": {{ "generate": {{ "n_images": 10 }} }}
            }}"#
        )
    }

    fn parse(text: &str) -> Result<ExperimentConfig> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.json");
        std::fs::write(&p, text).unwrap();
        ExperimentConfig::from_file(&p)
    }

    #[test]
    fn minimal_eval_config_validates() {
        let cfg = parse(&minimal("eval")).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.model.d, 32);
    }

    #[test]
    fn missing_data_source_names_field() {
        let cfg = parse(
            r#"{"schema_version": 1, "experiment": "eval", "data": {}}"#,
        )
        .unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("data"), "error: {err}");
        assert!(err.to_string().contains("missing data source"), "error: {err}");
    }

    #[test]
    fn unknown_field_is_reported_with_path() {
        let err = parse(
            r#"{"schema_version": 1, "experiment": "eval",
                "data": {"generate": {"n_imagez": 3}}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("n_imagez"), "error: {err}");
    }

    #[test]
    fn unrecognized_schema_version_rejected() {
        let cfg = parse(&minimal("eval").replace("\"schema_version\": 1", "\"schema_version\": 9"));
        let err = cfg.unwrap().validate().unwrap_err();
        assert!(err.to_string().contains("schema_version"));
    }

    #[test]
    fn cma_requires_params() {
        let cfg = parse(&minimal("cma")).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn fingerprint_changes_iff_content_changes() {
        let a = parse(&minimal("eval")).unwrap();
        let b = parse(&minimal("eval")).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let mut c = parse(&minimal("eval")).unwrap();
        c.override_seeds(1234);
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn seed_override_touches_every_seed() {
        let mut cfg = parse(&minimal("split_baseline")).unwrap();
        cfg.split_baseline = Some(SplitBaselineParams::default());
        cfg.override_seeds(77);
        assert_eq!(cfg.model.seed, 77);
        assert_eq!(cfg.data.generate.as_ref().unwrap().seed, 77);
        assert_eq!(cfg.split_baseline.as_ref().unwrap().trial_seed, 77);
    }
}
