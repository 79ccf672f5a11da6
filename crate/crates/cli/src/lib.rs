//! Implementation of the `edgectx` command-line tool.

pub mod client;
pub mod registry;
pub mod report;
pub mod serve;
pub mod train;

use std::fs;
use std::path::Path;

use edgectx_core::sim::bench::write_bench_csv;
use edgectx_core::sim::{bench_execution, run_scenario, Algorithm, BenchConfig, BenchRow, ScenarioConfig};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_THRESHOLD: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] edgectx_core::Error),
    #[error("threshold not met: {0}")]
    Threshold(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::Threshold(_) => EXIT_THRESHOLD,
        }
    }
}

/// True when the rows show LCL < ADCL < CL training < DCL training.
pub fn bench_ordering_holds(rows: &[BenchRow]) -> bool {
    let mean = |a: Algorithm| rows.iter().find(|r| r.algorithm == a).map(|r| r.mean_us);
    match (mean(Algorithm::Lcl), mean(Algorithm::Adcl), mean(Algorithm::Cl), mean(Algorithm::Dcl)) {
        (Some(l), Some(a), Some(c), Some(d)) => l < a && a < c && c < d,
        _ => false,
    }
}

pub fn cmd_bench(cfg: &BenchConfig, out: Option<&Path>, check: bool) -> Result<Vec<BenchRow>, CliError> {
    let rows = bench_execution(cfg)?;
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            write_bench_csv(&rows, fs::File::create(p)?)?
        }
        None => write_bench_csv(&rows, std::io::stdout().lock())?,
    }
    if check && !bench_ordering_holds(&rows) {
        return Err(CliError::Threshold("expected mean LCL < ADCL < CL train < DCL train".into()));
    }
    Ok(rows)
}

/// Runs a scenario and writes `ticks.csv` and `summary.csv` into `out_dir`.
pub fn cmd_simulate(cfg: &ScenarioConfig, out_dir: &Path) -> Result<edgectx_core::sim::ScenarioResult, CliError> {
    let result = run_scenario(cfg)?;
    fs::create_dir_all(out_dir)?;
    result.write_ticks_csv(fs::File::create(out_dir.join("ticks.csv"))?)?;
    result.write_summary_csv(fs::File::create(out_dir.join("summary.csv"))?)?;
    fs::write(
        out_dir.join("scenario.toml"),
        cfg.to_toml_string()?,
    )?;
    let t = &result.totals;
    log::info!(
        "emitted {} readings, client sent {}, server received {}, {} publishes",
        t.readings_emitted,
        t.client_sent,
        t.server_received,
        t.publishes
    );
    Ok(result)
}
