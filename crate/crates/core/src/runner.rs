//! Experiment execution, report files, and the run manifest.
//!
//! Reports are fixed-name CSVs in the output directory plus
//! `manifest.json`. A run is fully determined by its config: re-running an
//! identical config reproduces every output byte for byte (the manifest's
//! wall-clock field excepted), at any thread count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cma::{CmaEngine, CombinedReport, EffectReport, InterventionKind, MediatorSet};
use crate::config::{ExperimentConfig, ExperimentKind, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::ingest::{ingest_external, GenderSource};
use crate::inputs::LabeledSample;
use crate::metrics::{
    bias_vl, fpr_table, per_object_report, split_baseline, BiasScore, DetectionRecord, FprTable,
    SplitBaseline,
};
use crate::mitigation::{evaluate_mitigation, MitigationConfig, MitigationReport};
use crate::model::{toy_average_precision, ToyVlm};
use crate::scene::generate;

/// Machine-readable record of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub artifact_version: String,
    pub experiment: String,
    pub config_fingerprint: String,
    pub seeds: BTreeMap<String, u64>,
    pub wall_clock_ms: u128,
    pub outputs: Vec<String>,
    pub notes: Vec<String>,
}

/// Flags accompanying a run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub seed_override: Option<u64>,
    pub threads: Option<usize>,
}

/// A parsed, validated experiment, ready to execute.
pub struct PreparedRun {
    config: ExperimentConfig,
    config_dir_anchor: PathBuf,
    opts: RunOptions,
}

/// Load and validate; all failures here are configuration errors
/// (CLI exit code 2).
pub fn prepare(config_path: &Path, opts: RunOptions) -> Result<PreparedRun> {
    let mut config = ExperimentConfig::from_file(config_path)?;
    if let Some(seed) = opts.seed_override {
        config.override_seeds(seed);
    }
    config.validate()?;
    if let Some(n) = opts.threads {
        if n == 0 {
            return Err(Error::BadExperimentConfig {
                field: "--threads".into(),
                message: "must be >= 1".into(),
            });
        }
    }
    Ok(PreparedRun {
        config,
        config_dir_anchor: config_path.to_path_buf(),
        opts,
    })
}

impl PreparedRun {
    pub fn experiment(&self) -> ExperimentKind {
        self.config.experiment
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    /// Execute and write reports; failures here are runtime errors
    /// (CLI exit code 1).
    pub fn execute(self) -> Result<RunManifest> {
        let started = Instant::now();
        match self.opts.threads {
            None => self.execute_inner(started),
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
                pool.install(|| self.execute_inner(started))
            }
        }
    }

    fn execute_inner(self, started: Instant) -> Result<RunManifest> {
        let out_dir = &self.opts.out_dir;
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

        let mut files = ReportFiles::new(out_dir);
        let mut notes = Vec::new();
        match self.config.experiment {
            ExperimentKind::Ingest => self.run_ingest(&mut files, &mut notes)?,
            _ => self.run_model_experiment(&mut files, &mut notes)?,
        }

        let manifest = RunManifest {
            schema_version: SCHEMA_VERSION,
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            experiment: self.config.experiment.as_str().to_string(),
            config_fingerprint: self.config.fingerprint(),
            seeds: self.config.seeds(),
            wall_clock_ms: started.elapsed().as_millis(),
            outputs: files.written(),
            notes,
        };
        let manifest_path = out_dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
        Ok(manifest)
    }

    fn build_model(&self) -> Result<ToyVlm> {
        ToyVlm::new(self.config.model.clone(), &self.config.injections)
    }

    fn build_corpus(&self, model: &ToyVlm) -> Result<Vec<LabeledSample>> {
        let gen = self
            .config
            .data
            .generate
            .as_ref()
            .ok_or_else(|| Error::Internal("generate experiment without generator".into()))?;
        generate(gen, model)
    }

    fn run_model_experiment(&self, files: &mut ReportFiles, notes: &mut Vec<String>) -> Result<()> {
        let model = self.build_model()?;
        let samples = self.build_corpus(&model)?;
        let engine = CmaEngine::new(&model, &samples)?.with_fingerprint(&self.config.fingerprint());
        let objects = model.vocab().categories().to_vec();
        let tau = model.config().tau;

        match self.config.experiment {
            ExperimentKind::Eval => {
                let records = engine.records(
                    InterventionKind::Null,
                    &MediatorSet::empty(),
                    InterventionKind::Null,
                )?;
                let table = fpr_table(&records, &objects, tau)?;
                let bias = bias_vl(&table);
                let ap = toy_average_precision(&model, &samples)?;
                notes.push(format!("gendered_images={}", records.len()));
                files.bias_csv(&bias, Some(ap.mean), None)?;
                files.fpr_csv(&table)?;
            }
            ExperimentKind::SplitBaseline => {
                let params = self.config.split_baseline.clone().unwrap_or_default();
                let records = engine.records(
                    InterventionKind::Null,
                    &MediatorSet::empty(),
                    InterventionKind::Null,
                )?;
                let table = fpr_table(&records, &objects, tau)?;
                let bias = bias_vl(&table);
                let by_gender = |g| -> Vec<DetectionRecord> {
                    records.iter().filter(|r| r.gender == g).cloned().collect()
                };
                let male = split_baseline(
                    &by_gender(crate::inputs::Gender::Male),
                    &objects,
                    tau,
                    params.trial_seed,
                    params.n_trials,
                )?;
                let female = split_baseline(
                    &by_gender(crate::inputs::Gender::Female),
                    &objects,
                    tau,
                    params.trial_seed.wrapping_add(1),
                    params.n_trials,
                )?;
                files.bias_csv(&bias, None, Some((&male, &female)))?;
                files.fpr_csv(&table)?;
            }
            ExperimentKind::Cma => {
                let params = self
                    .config
                    .cma
                    .as_ref()
                    .ok_or_else(|| Error::Internal("validated cma without params".into()))?;
                let mediator =
                    MediatorSet::layers_up_to(model.config(), params.module, params.depth)?;
                let report = engine.effects(params.intervention, &mediator)?;
                files.effects_csv(
                    "effects.csv",
                    &[(params.module.as_str(), params.depth, &report)],
                )?;
            }
            ExperimentKind::Sweep => {
                let params = self.config.sweep.clone().unwrap_or_default();
                for module in &params.modules {
                    let i = params
                        .intervention
                        .unwrap_or_else(|| InterventionKind::for_module(*module));
                    let depths: Vec<usize> =
                        (0..model.config().module_depth(*module)).collect();
                    let runs = engine.layer_sweep(*module, i, &depths)?;
                    let rows: Vec<(&str, usize, &EffectReport)> = runs
                        .iter()
                        .map(|(k, r)| (module.as_str(), *k, r))
                        .collect();
                    files.effects_csv(&format!("sweep_{}.csv", module.as_str()), &rows)?;
                }
            }
            ExperimentKind::Combined => {
                let params = self.config.combined.clone().unwrap_or_default();
                let report = engine.combined_sweep(params.fraction)?;
                files.combined_csv(&report)?;
            }
            ExperimentKind::Mitigate => {
                let params = self.config.mitigate.clone().unwrap_or_default();
                let reports: Vec<MitigationReport> = params
                    .targets
                    .iter()
                    .map(|t| {
                        evaluate_mitigation(&model, &samples, &MitigationConfig::new(*t, &model))
                    })
                    .collect::<Result<_>>()?;
                files.mitigation_csv(&reports)?;
            }
            ExperimentKind::Ingest => unreachable!("dispatched separately"),
        }
        Ok(())
    }

    fn run_ingest(&self, files: &mut ReportFiles, notes: &mut Vec<String>) -> Result<()> {
        let ext = self
            .config
            .data
            .external
            .as_ref()
            .ok_or_else(|| Error::Internal("validated ingest without external".into()))?;
        let params = self.config.ingest.clone().unwrap_or_default();
        let anchor = &self.config_dir_anchor;
        let results = ExperimentConfig::resolve_path(anchor, &ext.results);
        let annotations = ExperimentConfig::resolve_path(anchor, &ext.annotations);
        let gender_file;
        let caption_file;
        let source = match (&ext.genders, &ext.captions) {
            (Some(g), None) => {
                gender_file = ExperimentConfig::resolve_path(anchor, g);
                GenderSource::LabelFile(&gender_file)
            }
            (None, Some(c)) => {
                caption_file = ExperimentConfig::resolve_path(anchor, c);
                GenderSource::Captions(&caption_file)
            }
            _ => return Err(Error::Internal("validated ingest without gender source".into())),
        };
        let data = ingest_external(&results, &annotations, source)?;
        notes.push(format!("dropped_excluded={}", data.dropped_excluded));
        let (data, removed) = if params.min_cooccur > 0 {
            data.filter_min_cooccurrence(params.min_cooccur)
        } else {
            (data, Vec::new())
        };
        if !removed.is_empty() {
            notes.push(format!("filtered_categories={}", removed.join("|")));
        }
        if data.categories.is_empty() {
            return Err(Error::Ingest(
                "no categories left after the co-occurrence filter".into(),
            ));
        }
        let records = data.to_detection_records();
        let table = fpr_table(&records, &data.categories, params.tau)?;
        let bias = bias_vl(&table);
        files.bias_csv(&bias, None, None)?;
        files.fpr_csv(&table)?;
        Ok(())
    }
}

/// Everything `prepare` + `execute` in one call.
pub fn run(config_path: &Path, opts: RunOptions) -> Result<RunManifest> {
    prepare(config_path, opts)?.execute()
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => fmt_f64(v),
        None => "NA".to_string(),
    }
}

struct ReportFiles {
    dir: PathBuf,
    written: Vec<String>,
}

impl ReportFiles {
    fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        }
    }

    fn written(&self) -> Vec<String> {
        self.written.clone()
    }

    fn write(&mut self, name: &str, contents: String) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn bias_csv(
        &mut self,
        bias: &BiasScore,
        ap: Option<f64>,
        splits: Option<(&SplitBaseline, &SplitBaseline)>,
    ) -> Result<()> {
        let mut s = String::from("metric,value\n");
        let _ = writeln!(s, "bias_vl,{}", fmt_f64(bias.value));
        let _ = writeln!(s, "skipped_objects,{}", bias.skipped.len());
        if let Some(ap) = ap {
            let _ = writeln!(s, "ap,{}", fmt_f64(ap));
        }
        if let Some((male, female)) = splits {
            let _ = writeln!(s, "split_male_mean,{}", fmt_f64(male.mean));
            let _ = writeln!(s, "split_male_std,{}", fmt_f64(male.std_dev));
            let _ = writeln!(s, "split_female_mean,{}", fmt_f64(female.mean));
            let _ = writeln!(s, "split_female_std,{}", fmt_f64(female.std_dev));
        }
        self.write("bias.csv", s)
    }

    fn fpr_csv(&mut self, table: &FprTable) -> Result<()> {
        let mut s = String::from("object,fpr_male,fpr_female,diff\n");
        for row in per_object_report(table) {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                row.object,
                fmt_f64(row.fpr_male),
                fmt_f64(row.fpr_female),
                fmt_f64(row.diff)
            );
        }
        self.write("fpr_by_object.csv", s)
    }

    fn effects_csv(&mut self, name: &str, rows: &[(&str, usize, &EffectReport)]) -> Result<()> {
        let mut s = String::from("module,depth,y_O,y_E,y_D,y_I,E,DE,IE,pct_IE\n");
        for (module, depth, r) in rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                module,
                depth,
                fmt_f64(r.y_o),
                fmt_f64(r.y_e),
                fmt_f64(r.y_d),
                fmt_f64(r.y_i),
                fmt_f64(r.e),
                fmt_f64(r.de),
                fmt_f64(r.ie),
                fmt_opt(r.pct_ie)
            );
        }
        self.write(name, s)
    }

    fn combined_csv(&mut self, report: &CombinedReport) -> Result<()> {
        let mut s = String::from("setting,y_O,y_E,y_D,y_I,E,DE,IE,pct_IE\n");
        for (label, r) in [
            ("V", &report.vision),
            ("L", &report.language),
            ("L+V", &report.both),
        ] {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                label,
                fmt_f64(r.y_o),
                fmt_f64(r.y_e),
                fmt_f64(r.y_d),
                fmt_f64(r.y_i),
                fmt_f64(r.e),
                fmt_f64(r.de),
                fmt_f64(r.ie),
                fmt_opt(r.pct_ie)
            );
        }
        self.write("combined.csv", s)
    }

    fn mitigation_csv(&mut self, reports: &[MitigationReport]) -> Result<()> {
        let mut s = String::from("method,ap,bias,bias_mitigated_pct\n");
        for r in reports {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                r.target.as_str(),
                fmt_f64(r.ap_after),
                fmt_f64(r.bias_after.value),
                fmt_opt(r.pct_mitigated)
            );
        }
        self.write("mitigation.csv", s)
    }
}

/// Parse one of the emitted CSV reports back into header and rows. The
/// emitted files never contain quoted fields, so a comma split is exact.
pub fn parse_report_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            message: "empty report".into(),
        })?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    Ok((header, rows))
}
