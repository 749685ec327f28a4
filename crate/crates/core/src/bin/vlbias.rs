//! Command-line entry point: one subcommand per experiment kind, one
//! config file per run.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vlbias::config::ExperimentKind;
use vlbias::runner::{prepare, RunOptions};

#[derive(Parser)]
#[command(
    name = "vlbias",
    version,
    about = "Gender-bias measurement, mediation analysis, and mitigation for a toy vision-language detector"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for reports and manifest.
    #[arg(long, default_value = "vlbias_out")]
    out: PathBuf,
    /// Replace every seed in the config with this value.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Cap dataset-parallel worker threads; results are identical at any
    /// thread count.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Bias and detection quality of the configured model on a corpus.
    Eval(CommonArgs),
    /// Gendered bias against random same-gender split baselines.
    SplitBaseline(CommonArgs),
    /// One effect decomposition for a chosen intervention and mediator.
    Cma(CommonArgs),
    /// Indirect/direct effect curves over mediator layer prefixes.
    Sweep(CommonArgs),
    /// Vision vs language vs combined interventions at matched depth.
    Combined(CommonArgs),
    /// Feature-averaging debiasing, before/after comparison.
    Mitigate(CommonArgs),
    /// Audit external COCO-style detection results.
    Ingest(CommonArgs),
}

impl Command {
    fn parts(self) -> (ExperimentKind, CommonArgs) {
        match self {
            Command::Eval(a) => (ExperimentKind::Eval, a),
            Command::SplitBaseline(a) => (ExperimentKind::SplitBaseline, a),
            Command::Cma(a) => (ExperimentKind::Cma, a),
            Command::Sweep(a) => (ExperimentKind::Sweep, a),
            Command::Combined(a) => (ExperimentKind::Combined, a),
            Command::Mitigate(a) => (ExperimentKind::Mitigate, a),
            Command::Ingest(a) => (ExperimentKind::Ingest, a),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = cli.command.parts();

    let opts = RunOptions {
        out_dir: args.out,
        seed_override: args.seed_override,
        threads: args.threads,
    };
    let prepared = match prepare(&args.config, opts) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    if prepared.experiment() != kind {
        eprintln!(
            "config error: experiment: config declares {:?}, subcommand expects {:?}",
            prepared.experiment().as_str(),
            kind.as_str()
        );
        return ExitCode::from(2);
    }
    match prepared.execute() {
        Ok(manifest) => {
            println!(
                "{} finished in {} ms; wrote {} file(s) (fingerprint {})",
                manifest.experiment,
                manifest.wall_clock_ms,
                manifest.outputs.len(),
                &manifest.config_fingerprint[..12]
            );
            for f in &manifest.outputs {
                println!("  {f}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("run failed: {e}");
            ExitCode::from(1)
        }
    }
}
