//! Config-driven experiment runner for off-policy estimator selection.
//!
//! Three experiments share one TOML config format ([`config`]):
//!
//! * `select`: estimator selection for each evaluation policy, scored
//!   against Monte-Carlo ground truth;
//! * `ops`: policy selection among twenty learned candidate policies;
//! * `oracle`: the ground-truth tables alone.
//!
//! [`run`] executes one experiment on a dedicated thread pool and writes its
//! tables and manifest.

pub mod config;
pub mod error;
pub mod output;
pub mod runner;

use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Select,
    Ops,
    Oracle,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Select => "select",
            Experiment::Ops => "ops",
            Experiment::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub outputs: Vec<PathBuf>,
    pub row_errors: usize,
}

fn output_path(config: &ExperimentConfig, out_dir: &Path, suffix: &str) -> PathBuf {
    out_dir.join(format!("{}_{suffix}", config.output.prefix))
}

/// Worker count from the config, else the number of available cores.
pub fn default_workers(config: &ExperimentConfig) -> usize {
    config
        .run
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `experiment` with `workers` threads and writes its outputs to
/// `out_dir` (the config's directory when `None`).
pub fn run(
    experiment: Experiment,
    config: &ExperimentConfig,
    out_dir: Option<&Path>,
    workers: usize,
) -> CliResult<RunSummary> {
    config.validate()?;
    if workers == 0 {
        return Err(CliError::Config("workers must be at least 1".into()));
    }
    let out_dir = out_dir.unwrap_or(&config.output.dir);
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Io(out_dir.to_path_buf(), e))?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    let start = Instant::now();
    log::info!(
        "{}: {} simulations on {workers} workers",
        experiment.name(),
        config.run.n_sims
    );

    let mut outputs = Vec::new();
    let row_errors = match experiment {
        Experiment::Select => {
            let rows = pool.install(|| runner::run_select(config));
            let detail = output_path(config, out_dir, "select.csv");
            let aggregate = output_path(config, out_dir, "select_aggregate.csv");
            output::write_csv(&detail, &rows, &output::SELECT_HEADER)?;
            output::write_csv(
                &aggregate,
                &output::aggregate_select(&rows),
                &output::SELECT_AGGREGATE_HEADER,
            )?;
            outputs.extend([detail, aggregate]);
            rows.iter().filter(|r| r.error.is_some()).count()
        }
        Experiment::Ops => {
            let rows = pool.install(|| runner::run_ops(config));
            let detail = output_path(config, out_dir, "ops.csv");
            let aggregate = output_path(config, out_dir, "ops_aggregate.csv");
            output::write_csv(&detail, &rows, &output::OPS_HEADER)?;
            output::write_csv(
                &aggregate,
                &output::aggregate_ops(&rows),
                &output::OPS_AGGREGATE_HEADER,
            )?;
            outputs.extend([detail, aggregate]);
            rows.iter().filter(|r| r.error.is_some()).count()
        }
        Experiment::Oracle => {
            let rows = pool.install(|| runner::run_oracle(config))?;
            let table = output_path(config, out_dir, "oracle.csv");
            output::write_csv(&table, &rows, &output::ORACLE_HEADER)?;
            outputs.push(table);
            0
        }
    };

    let manifest_path = output_path(config, out_dir, &format!("{}_manifest.json", experiment.name()));
    let manifest = output::Manifest {
        command: experiment.name(),
        version: env!("CARGO_PKG_VERSION"),
        config,
        sim_seeds: runner::sim_seeds(config),
        workers,
        wall_time_secs: start.elapsed().as_secs_f64(),
        row_errors,
        outputs: outputs.clone(),
    };
    output::write_manifest(&manifest_path, &manifest)?;
    outputs.push(manifest_path);
    log::info!(
        "{} finished in {:.1}s with {row_errors} row errors",
        experiment.name(),
        manifest.wall_time_secs
    );
    Ok(RunSummary { outputs, row_errors })
}
