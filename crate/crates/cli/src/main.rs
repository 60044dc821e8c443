use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use encircle_core::config::PRESETS;
use encircle_core::engine::{run_with, summarize, ultimate_bound};
use encircle_core::report::check_acceptance;
use encircle_core::trace::{read_summary, write_summary, TraceWriter};
use encircle_core::{ConfigError, EngineError, ExecMode, ScenarioConfig};

/// Distributed target enclosing with a team of planar UAVs.
#[derive(Parser)]
#[command(name = "encircle", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write `trace.csv` and `summary.json`.
    Run {
        #[command(flatten)]
        source: Source,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
        /// Override the noise seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Zero every noise source in the simulated world.
        #[arg(long)]
        no_noise: bool,
        /// Override the duration in seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Run per-UAV stages on all cores.
        #[arg(long)]
        parallel: bool,
    },
    /// Compare a summary against a criteria file.
    Check {
        #[arg(long)]
        summary: PathBuf,
        #[arg(long)]
        criteria: PathBuf,
    },
    /// Print the ultimate-bound report for a scenario.
    Bound {
        #[command(flatten)]
        source: Source,
        /// Use this estimation-error level instead of measuring it from a run.
        #[arg(long)]
        eta: Option<f64>,
    },
    /// List bundled scenarios.
    Presets,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Scenario file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bundled scenario name (see `presets`).
    #[arg(long)]
    preset: Option<String>,
}

impl Source {
    fn load(&self) -> Result<ScenarioConfig, ConfigError> {
        match (&self.config, &self.preset) {
            (Some(path), _) => ScenarioConfig::from_file(path),
            (None, Some(name)) => ScenarioConfig::preset(name),
            (None, None) => unreachable!("clap enforces one source"),
        }
    }
}

const EXIT_CRITERIA: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

enum Failure {
    Config(anyhow::Error),
    Diverged(anyhow::Error),
    Criteria,
    Other(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.into())
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Config(c) => Failure::Config(c.into()),
            other => Failure::Diverged(other.into()),
        }
    }
}

fn run(
    source: &Source,
    out: &Path,
    seed: Option<u64>,
    no_noise: bool,
    duration: Option<f64>,
    parallel: bool,
) -> Result<(), Failure> {
    let mut cfg = source.load()?;
    if let Some(s) = seed {
        cfg.noise.seed = s;
    }
    if no_noise {
        cfg.flags.noise_on = false;
    }
    if let Some(d) = duration {
        cfg.duration = d;
    }
    cfg.validate()?;
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(Failure::Other)?;

    let trace_path = out.join("trace.csv");
    let mut writer = TraceWriter::create(&trace_path, cfg.n).map_err(|e| Failure::Other(e.into()))?;
    let mut write_err = None;
    let mode = if parallel { ExecMode::Parallel } else { ExecMode::Serial };
    let output = run_with(&cfg, mode, |r| {
        if write_err.is_none() {
            write_err = writer.write(r).err();
        }
    })?;
    if let Some(e) = write_err {
        return Err(Failure::Other(e.into()));
    }
    writer.finish().map_err(|e| Failure::Other(e.into()))?;

    let blocks = cfg.blocks().map_err(ConfigError::from)?;
    let summary = summarize(&cfg, &blocks, &output.records);
    let summary_path = out.join("summary.json");
    write_summary(&summary, &summary_path).map_err(|e| Failure::Other(e.into()))?;
    println!(
        "{}: {} steps, final e_t = {:.3e}, steady |e|_inf = {:.3e}, bound = {:.3e}",
        cfg.name, summary.steps, summary.final_e_t, summary.steady.max_e_inf, summary.bound.bound
    );
    println!("wrote {} and {}", trace_path.display(), summary_path.display());
    Ok(())
}

fn check(summary: &Path, criteria: &Path) -> Result<(), Failure> {
    let doc = read_summary(summary).map_err(|e| Failure::Config(e.into()))?;
    let text = std::fs::read_to_string(criteria)
        .with_context(|| format!("reading {}", criteria.display()))
        .map_err(Failure::Config)?;
    let report = check_acceptance(&doc, &text).map_err(|e| Failure::Config(e.into()))?;
    print!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Criteria)
    }
}

fn bound(source: &Source, eta: Option<f64>) -> Result<(), Failure> {
    let cfg = source.load()?;
    let blocks = cfg.blocks().map_err(ConfigError::from)?;
    let report = match eta {
        Some(eta) => ultimate_bound(&blocks, &cfg.gains, cfg.dt, cfg.target.u0, eta),
        None => {
            let out = run_with(&cfg, ExecMode::Serial, |_| {})?;
            out.summary.bound
        }
    };
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { source, out, seed, no_noise, duration, parallel } => {
            run(source, out, *seed, *no_noise, *duration, *parallel)
        }
        Command::Check { summary, criteria } => check(summary, criteria),
        Command::Bound { source, eta } => bound(source, *eta),
        Command::Presets => {
            for (name, _) in PRESETS {
                println!("{name}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Criteria) => ExitCode::from(EXIT_CRITERIA),
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Diverged(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_DIVERGED)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
