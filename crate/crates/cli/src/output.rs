//! CSV tables, aggregates and the JSON run manifest.
//!
//! Detail tables have fixed headers given by the row structs in
//! [`crate::runner`]. Aggregates summarize error-free rows with the mean and
//! the sample standard deviation (`n − 1` denominator, empty for `n < 2`).

use std::path::{Path, PathBuf};

use opesel_core::Method;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::runner::{OpsRow, SelectRow};

/// Mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (Some(mean), Some(var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectAggregate {
    pub method: Method,
    pub beta_e: f64,
    pub n: usize,
    pub n_errors: usize,
    pub rregret_e_mean: Option<f64>,
    pub rregret_e_sd: Option<f64>,
    pub rank_corr_e_mean: Option<f64>,
    pub rank_corr_e_sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpsAggregate {
    pub method: Method,
    pub n: usize,
    pub n_errors: usize,
    pub rregret_p_mean: Option<f64>,
    pub rregret_p_sd: Option<f64>,
    pub rank_corr_p_mean: Option<f64>,
    pub rank_corr_p_sd: Option<f64>,
}

/// Groups in first-appearance order.
fn groups<T, K: PartialEq + Copy>(rows: &[T], key: impl Fn(&T) -> K) -> Vec<(K, Vec<&T>)> {
    let mut out: Vec<(K, Vec<&T>)> = Vec::new();
    for row in rows {
        let k = key(row);
        match out.iter_mut().find(|(g, _)| *g == k) {
            Some((_, members)) => members.push(row),
            None => out.push((k, vec![row])),
        }
    }
    out
}

pub fn aggregate_select(rows: &[SelectRow]) -> Vec<SelectAggregate> {
    groups(rows, |r| (r.method, r.beta_e))
        .into_iter()
        .map(|((method, beta_e), members)| {
            let ok: Vec<&&SelectRow> = members.iter().filter(|r| r.error.is_none()).collect();
            let regret: Vec<f64> = ok.iter().filter_map(|r| r.rregret_e).collect();
            let corr: Vec<f64> = ok.iter().filter_map(|r| r.rank_corr_e).collect();
            let (rregret_e_mean, rregret_e_sd) = mean_sd(&regret);
            let (rank_corr_e_mean, rank_corr_e_sd) = mean_sd(&corr);
            SelectAggregate {
                method,
                beta_e,
                n: ok.len(),
                n_errors: members.len() - ok.len(),
                rregret_e_mean,
                rregret_e_sd,
                rank_corr_e_mean,
                rank_corr_e_sd,
            }
        })
        .collect()
}

pub fn aggregate_ops(rows: &[OpsRow]) -> Vec<OpsAggregate> {
    groups(rows, |r| r.method)
        .into_iter()
        .map(|(method, members)| {
            let ok: Vec<&&OpsRow> = members.iter().filter(|r| r.error.is_none()).collect();
            let regret: Vec<f64> = ok.iter().filter_map(|r| r.rregret_p).collect();
            let corr: Vec<f64> = ok.iter().filter_map(|r| r.rank_corr_p).collect();
            let (rregret_p_mean, rregret_p_sd) = mean_sd(&regret);
            let (rank_corr_p_mean, rank_corr_p_sd) = mean_sd(&corr);
            OpsAggregate {
                method,
                n: ok.len(),
                n_errors: members.len() - ok.len(),
                rregret_p_mean,
                rregret_p_sd,
                rank_corr_p_mean,
                rank_corr_p_sd,
            }
        })
        .collect()
}

/// Writes `rows` with a header, even when there are none.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> CliResult<()> {
    let csv_err = |e| CliError::Csv(path.to_path_buf(), e);
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Io(path.to_path_buf(), e))
}

pub const SELECT_HEADER: [&str; 10] = [
    "method",
    "beta_e",
    "seed",
    "selected_candidate",
    "est_mse_selected",
    "true_mse_selected",
    "true_mse_best",
    "rregret_e",
    "rank_corr_e",
    "error",
];

pub const SELECT_AGGREGATE_HEADER: [&str; 8] = [
    "method",
    "beta_e",
    "n",
    "n_errors",
    "rregret_e_mean",
    "rregret_e_sd",
    "rank_corr_e_mean",
    "rank_corr_e_sd",
];

pub const OPS_HEADER: [&str; 9] = [
    "method",
    "seed",
    "n_candidates",
    "selected_policy",
    "true_value_selected",
    "true_value_best",
    "rregret_p",
    "rank_corr_p",
    "error",
];

pub const OPS_AGGREGATE_HEADER: [&str; 7] = [
    "method",
    "n",
    "n_errors",
    "rregret_p_mean",
    "rregret_p_sd",
    "rank_corr_p_mean",
    "rank_corr_p_sd",
];

pub const ORACLE_HEADER: [&str; 5] = ["seed", "beta_e", "candidate", "true_value", "true_mse"];

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub version: &'a str,
    pub config: &'a ExperimentConfig,
    pub sim_seeds: Vec<u64>,
    pub workers: usize,
    pub wall_time_secs: f64,
    pub row_errors: usize,
    pub outputs: Vec<PathBuf>,
}

pub fn write_manifest(path: &Path, manifest: &Manifest<'_>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Io(path.to_path_buf(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_sd() {
        let (m, sd) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, Some(2.5));
        assert!((sd.unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_sd(&[7.0]), (Some(7.0), None));
        assert_eq!(mean_sd(&[]), (None, None));
    }

    #[test]
    fn groups_keep_first_appearance_order() {
        let g = groups(&[3, 1, 3, 2, 1], |&x| x);
        let keys: Vec<i32> = g.iter().map(|(k, _)| *k).collect();
        assert_eq!(keys, vec![3, 1, 2]);
        assert_eq!(g[0].1.len(), 2);
    }
}
