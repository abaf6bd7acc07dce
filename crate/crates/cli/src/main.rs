//! `trsdirac`: batch front-end. Each command writes one results file (`--out`)
//! and a run manifest next to it (`<out>.manifest.json`).

mod commands;
mod grid;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, ValueEnum};
use serde::Serialize;
use trsdirac::model::DisorderConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Lyapunov spectrum on an energy grid (CSV).
    Lyapunov,
    /// Weyl-Titchmarsh matrices M_± at the base point (JSON).
    Weyl,
    /// Orbit-averaged spectral density Tr Im Ĝ / (2Lπ) at E + iε (CSV).
    Dos,
    /// The four Kotani identities (JSON); fails if any residual reaches 3 units.
    Kotani,
    /// Randomized checks of the Lie-algebra and group layer (JSON).
    GroupSelftest,
    /// Finite-interval eigenvalue histogram against the smoothed density (CSV).
    OracleCompare,
}

#[derive(Debug, Clone, Parser, Serialize)]
#[command(name = "trsdirac", version, about = "Random quasi-one-dimensional Dirac operators with time-reversal symmetry")]
pub struct RunSpec {
    #[arg(long, value_enum)]
    pub command: Command,
    /// Disorder configuration (JSON). Not needed for group-selftest.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub e_start: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub e_stop: Option<f64>,
    /// Number of grid points; 0 gives a header-only table.
    #[arg(long)]
    pub e_count: Option<usize>,
    /// Complex energies `re,im;re,im;...` (instead of the real grid).
    #[arg(long, allow_hyphen_values = true)]
    pub z: Option<String>,
    #[arg(long, default_value_t = 100_000)]
    pub cells: usize,
    #[arg(long, default_value_t = 1)]
    pub realizations: usize,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    /// Realization seed; defaults to the configuration's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = one per core). Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// oracle-compare: fail if the relative sup-norm difference exceeds this.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// What a command hands back to `main` besides its results file.
#[derive(Debug, Default)]
pub struct Outcome {
    pub seeds: Vec<u64>,
    pub failures: Vec<serde_json::Value>,
    pub extra_files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    run: &'a RunSpec,
    config: Option<serde_json::Value>,
    seeds: &'a [u64],
    results: &'a PathBuf,
    extra_files: &'a [PathBuf],
    wall_time_s: f64,
    status: &'static str,
    failures: &'a [serde_json::Value],
    error: Option<String>,
}

fn load_config(spec: &RunSpec) -> anyhow::Result<Option<DisorderConfig>> {
    let Some(path) = &spec.config else {
        return Ok(None);
    };
    let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    let cfg = DisorderConfig::from_json(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    Ok(Some(cfg))
}

fn main() -> ExitCode {
    let spec = RunSpec::parse();
    let start = Instant::now();
    let config = load_config(&spec);
    let result = config.as_ref().map_err(|e| anyhow::anyhow!("{e}")).and_then(|cfg| {
        trsdirac::with_threads(spec.threads, || commands::run(&spec, cfg.as_ref()))
    });
    let (status, outcome, error) = match result {
        Ok(o) if o.failures.is_empty() => ("pass", o, None),
        Ok(o) => ("fail", o, None),
        Err(e) => ("error", Outcome::default(), Some(format!("{e:#}"))),
    };
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        run: &spec,
        config: config.ok().flatten().and_then(|c| serde_json::to_value(c).ok()),
        seeds: &outcome.seeds,
        results: &spec.out,
        extra_files: &outcome.extra_files,
        wall_time_s: start.elapsed().as_secs_f64(),
        status,
        failures: &outcome.failures,
        error: error.clone(),
    };
    let path = output::manifest_path(&spec.out);
    let written = serde_json::to_string_pretty(&manifest)
        .map_err(anyhow::Error::from)
        .and_then(|s| std::fs::write(&path, s + "\n").map_err(|e| anyhow::anyhow!("{}: {e}", path.display())));
    if let Err(e) = written {
        eprintln!("error: cannot write manifest: {e:#}");
        return ExitCode::from(2);
    }
    match status {
        "pass" => ExitCode::SUCCESS,
        "fail" => {
            for f in &outcome.failures {
                eprintln!("assertion failed: {f}");
            }
            ExitCode::from(1)
        }
        _ => {
            eprintln!("error: {}", error.unwrap_or_default());
            ExitCode::from(2)
        }
    }
}
