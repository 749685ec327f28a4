//! Desk-scale study of gender bias in a dual-stream vision-language
//! detector: a planted-bias toy model, a summed false-positive-rate bias
//! metric, causal mediation analysis over attention-head mediators, and
//! feature-averaging mitigation — all deterministic and oracle-checkable.

pub mod attention;
pub mod cma;
pub mod config;
pub mod embed;
pub mod error;
pub mod ingest;
pub mod inputs;
pub mod metrics;
pub mod mitigation;
pub mod model;
pub mod rng;
pub mod runner;
pub mod scene;
pub mod tensor;

pub use attention::{HeadAddress, HeadHook, HookMap, HookMode, ModuleId};
pub use cma::{
    apply_intervention, CmaEngine, CombinedReport, EffectReport, InterventionKind, MediatorSet,
};
pub use config::{ExperimentConfig, ExperimentKind};
pub use embed::GenderMode;
pub use error::{Error, Result};
pub use ingest::{ingest_external, ExternalDetections, GenderSource};
pub use inputs::{CellContent, Gender, LabeledSample, SceneInput, TextInput, Vocab};
pub use metrics::{
    bias_from_records, bias_vl, fpr_table, per_object_report, split_baseline, BiasScore,
    DetectionRecord, FprTable,
};
pub use mitigation::{
    evaluate_mitigation, forward_mitigated, image_fair_features, text_fair_features,
    MitigationConfig, MitigationReport, MitigationTarget,
};
pub use model::{
    toy_average_precision, BiasInjection, DetectionOutput, ForwardOutput, InjectionSpec,
    ModelConfig, ToyVlm,
};
pub use runner::{run, RunManifest, RunOptions};
pub use scene::{generate, label_gender_from_captions, GenConfig, GenderLabel};
pub use tensor::{layer_norm, seeded_init, softmax_rows, Tensor2};
