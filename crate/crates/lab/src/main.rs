use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use gwi_lab::config::ExperimentKind;
use gwi_lab::{presets, run, ExperimentConfig, LabError, RunOptions};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Experiment {
    Simulate,
    Estimate,
    EstimatorLaw,
    LimitLaw,
    Diagnose,
}

impl From<Experiment> for ExperimentKind {
    fn from(e: Experiment) -> Self {
        match e {
            Experiment::Simulate => ExperimentKind::Simulate,
            Experiment::Estimate => ExperimentKind::Estimate,
            Experiment::EstimatorLaw => ExperimentKind::EstimatorLaw,
            Experiment::LimitLaw => ExperimentKind::LimitLaw,
            Experiment::Diagnose => ExperimentKind::Diagnose,
        }
    }
}

/// Monte Carlo experiments for branching processes with immigration.
#[derive(Debug, Parser)]
#[command(name = "gwi-lab", version)]
struct Cli {
    experiment: Experiment,
    /// JSON experiment configuration.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration by name.
    #[arg(long, value_parser = presets::names().collect::<Vec<_>>())]
    preset: Option<String>,
    /// Master seed; overrides the config's `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; outputs do not depend on this.
    #[arg(long)]
    workers: Option<usize>,
    /// Exit with status 4 when a tolerance check fails.
    #[arg(long)]
    check: bool,
    /// Output directory; overrides the config's `run.out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(cli: &Cli) -> Result<(ExperimentConfig, RunOptions), LabError> {
    let config = match (&cli.config, &cli.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|source| LabError::Io { path: path.display().to_string(), source })?;
            ExperimentConfig::from_json(&text)?
        }
        (None, Some(name)) => presets::preset(name).ok_or_else(|| LabError::Config(format!("unknown preset {name}")))?,
        (None, None) => return Err(LabError::Config("need --config or --preset".into())),
    };
    let kind = ExperimentKind::from(cli.experiment);
    if config.experiment != kind {
        return Err(LabError::Config(format!(
            "config describes a {} experiment, not {}",
            config.experiment.as_str(),
            kind.as_str()
        )));
    }
    let seed = cli
        .seed
        .or(config.run.seed)
        .ok_or_else(|| LabError::Config("no seed: pass --seed or set run.seed".into()))?;
    let workers = cli
        .workers
        .or(config.run.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(LabError::Config("--workers must be at least 1".into()));
    }
    let out = cli.out.clone().or_else(|| config.run.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    Ok((config, RunOptions { seed, workers, out }))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load(&cli).and_then(|(config, opts)| run(&config, &opts).map(|s| (s, opts)));
    match result {
        Ok((summary, opts)) => {
            for c in &summary.checks {
                let verdict = if c.pass { "PASS" } else { "FAIL" };
                println!("{verdict} {}: {} (bound {})", c.name, c.statistic, c.bound);
            }
            println!("wrote {}", opts.out.display());
            if cli.check && summary.pass == Some(false) {
                ExitCode::from(4)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("gwi-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
