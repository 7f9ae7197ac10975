use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};
use lowsnr::experiments::{execute, ExperimentConfig, ExperimentKind};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Experiment {
    Figure1,
    CltWhitenoise,
    CltGeneral,
    CoverageMc,
    VarianceOrder,
    SparseThreshold,
    Diagnose,
}

impl From<Experiment> for ExperimentKind {
    fn from(e: Experiment) -> Self {
        match e {
            Experiment::Figure1 => ExperimentKind::Figure1,
            Experiment::CltWhitenoise => ExperimentKind::CltWhitenoise,
            Experiment::CltGeneral => ExperimentKind::CltGeneral,
            Experiment::CoverageMc => ExperimentKind::CoverageMc,
            Experiment::VarianceOrder => ExperimentKind::VarianceOrder,
            Experiment::SparseThreshold => ExperimentKind::SparseThreshold,
            Experiment::Diagnose => ExperimentKind::Diagnose,
        }
    }
}

/// Mean-field and Gibbs experiments for low-SNR Bayesian regression.
#[derive(Parser, Debug)]
#[command(name = "lowsnr", version)]
struct Cli {
    experiment: Experiment,
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Base seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<String>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
}

fn real_main(cli: Cli) -> Result<bool> {
    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build_global()?;
    }
    let text = std::fs::read_to_string(&cli.config)
        .with_context(|| format!("reading {}", cli.config.display()))?;
    let cfg = ExperimentConfig::from_json(&text)?.resolve(cli.experiment.into(), cli.seed, cli.out)?;
    let (outcome, files) = execute(&cfg)?;
    for w in &outcome.warnings {
        log::warn!("{w}");
    }
    for f in &files {
        println!("{}", f.display());
    }
    Ok(outcome.assumption_failure)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match real_main(Cli::parse()) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("assumption check failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
