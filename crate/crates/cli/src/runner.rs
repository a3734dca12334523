//! Simulation drivers for the three subcommands.
//!
//! Every simulation `s` derives all of its randomness from
//! `derive_seed(base_seed, s)`, so results do not depend on how simulations
//! are scheduled across workers. Rows are returned in a fixed order.

use opesel_core::estimators::EstimatorCandidate;
use opesel_core::rng::derive_seed;
use opesel_core::selection::{estimate_mse, ops_select};
use opesel_core::{
    build_ops_candidates, ground_truth, make_candidate_set, relative_regret_e, relative_regret_p,
    sample_logged_data, select_estimator, softmax_policy, spearman, true_policy_values, GroundTruth,
    LoggedDataset, Method, Policy, SyntheticEnvironment,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;

const TAG_DATA: u64 = 1;
const TAG_ORACLE: u64 = 2;
const TAG_HEURISTIC: u64 = 3;
const TAG_PASIF: u64 = 4;

/// One row of the estimator-selection detail table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectRow {
    pub method: Method,
    pub beta_e: f64,
    pub seed: u64,
    pub selected_candidate: Option<String>,
    pub est_mse_selected: Option<f64>,
    pub true_mse_selected: Option<f64>,
    pub true_mse_best: Option<f64>,
    pub rregret_e: Option<f64>,
    pub rank_corr_e: Option<f64>,
    pub error: Option<String>,
}

/// One row of the policy-selection detail table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpsRow {
    pub method: Method,
    pub seed: u64,
    pub n_candidates: usize,
    pub selected_policy: Option<String>,
    pub true_value_selected: Option<f64>,
    pub true_value_best: Option<f64>,
    pub rregret_p: Option<f64>,
    pub rank_corr_p: Option<f64>,
    pub error: Option<String>,
}

/// One row of the ground-truth table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRow {
    pub seed: u64,
    pub beta_e: f64,
    pub candidate: String,
    pub true_value: f64,
    pub true_mse: f64,
}

/// Seed of simulation `s`.
pub fn sim_seed(config: &ExperimentConfig, s: usize) -> u64 {
    derive_seed(config.run.base_seed, s as u64)
}

pub fn sim_seeds(config: &ExperimentConfig) -> Vec<u64> {
    (0..config.run.n_sims).map(|s| sim_seed(config, s)).collect()
}

/// Environment, behavior mixture and logged data of one simulation.
pub struct Simulation {
    pub seed: u64,
    pub env: SyntheticEnvironment,
    pub behavior: Policy,
    pub data: LoggedDataset,
}

impl Simulation {
    pub fn new(config: &ExperimentConfig, s: usize) -> opesel_core::Result<Self> {
        let seed = sim_seed(config, s);
        let e = &config.environment;
        let env_seed = if e.vary_per_sim {
            derive_seed(e.seed, s as u64)
        } else {
            e.seed
        };
        let env = SyntheticEnvironment::new(e.dim, e.n_actions, env_seed)?;
        let components = config
            .behavior
            .betas
            .iter()
            .map(|&b| softmax_policy(&env, b))
            .collect::<opesel_core::Result<_>>()?;
        let behavior = Policy::mixture(components, config.behavior_weights())?;
        let data = sample_logged_data(&env, &behavior, config.behavior.n, derive_seed(seed, TAG_DATA))?;
        Ok(Self {
            seed,
            env,
            behavior,
            data,
        })
    }

    pub fn evaluation_policies(&self, betas: &[f64]) -> opesel_core::Result<Vec<Policy>> {
        betas.iter().map(|&b| softmax_policy(&self.env, b)).collect()
    }

    pub fn ground_truth(
        &self,
        config: &ExperimentConfig,
        candidates: &[EstimatorCandidate],
        policies: &[Policy],
    ) -> opesel_core::Result<GroundTruth> {
        ground_truth(
            candidates,
            policies,
            &self.env,
            &self.behavior,
            config.behavior.n,
            config.oracle.n_reps,
            config.oracle.n_mc,
            &config.estimation,
            derive_seed(self.seed, TAG_ORACLE),
        )
    }
}

/// Selected index, relative regret and rank correlation.
fn select_metrics(est: &[f64], true_mse: &[f64]) -> opesel_core::Result<(usize, f64, f64)> {
    let m = select_estimator(est)?;
    Ok((m, relative_regret_e(true_mse, m)?, spearman(true_mse, est)?))
}

fn select_row(
    method: Method,
    beta_e: f64,
    seed: u64,
    candidates: &[EstimatorCandidate],
    est: opesel_core::Result<&[f64]>,
    true_mse: &[f64],
) -> SelectRow {
    let mut row = SelectRow {
        method,
        beta_e,
        seed,
        selected_candidate: None,
        est_mse_selected: None,
        true_mse_selected: None,
        true_mse_best: true_mse.iter().copied().reduce(f64::min),
        rregret_e: None,
        rank_corr_e: None,
        error: None,
    };
    match est.and_then(|est| select_metrics(est, true_mse).map(|r| (est, r))) {
        Ok((est, (m, regret, corr))) => {
            row.selected_candidate = Some(candidates[m].to_string());
            row.est_mse_selected = Some(est[m]);
            row.true_mse_selected = Some(true_mse[m]);
            row.rregret_e = Some(regret);
            row.rank_corr_e = Some(corr);
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

fn failed_select_rows(config: &ExperimentConfig, seed: u64, error: &opesel_core::Error) -> Vec<SelectRow> {
    let mut rows = Vec::new();
    for &method in &config.method.methods {
        for &beta_e in &config.evaluation.betas {
            rows.push(SelectRow {
                method,
                beta_e,
                seed,
                selected_candidate: None,
                est_mse_selected: None,
                true_mse_selected: None,
                true_mse_best: None,
                rregret_e: None,
                rank_corr_e: None,
                error: Some(error.to_string()),
            });
        }
    }
    rows
}

/// Rows of one simulation, ordered by method, then `β_e`.
fn select_simulation(
    config: &ExperimentConfig,
    candidates: &[EstimatorCandidate],
    s: usize,
) -> Vec<SelectRow> {
    let seed = sim_seed(config, s);
    let setup = Simulation::new(config, s).and_then(|sim| {
        let policies = sim.evaluation_policies(&config.evaluation.betas)?;
        let truth = sim.ground_truth(config, candidates, &policies)?;
        Ok((sim, policies, truth))
    });
    let (sim, policies, truth) = match setup {
        Ok(v) => v,
        Err(e) => {
            log::warn!("simulation {s} failed: {e}");
            return failed_select_rows(config, seed, &e);
        }
    };
    let settings = config.settings();
    let betas = &config.evaluation.betas;
    let mut rows = Vec::with_capacity(config.method.methods.len() * betas.len());
    for &method in &config.method.methods {
        let estimates: Vec<opesel_core::Result<Vec<f64>>> = match method {
            // does not depend on the evaluation policy
            Method::Heuristic => {
                let est = estimate_mse(
                    method,
                    candidates,
                    &sim.data,
                    &sim.behavior,
                    &policies[0],
                    &settings,
                    derive_seed(seed, TAG_HEURISTIC),
                );
                vec![est; betas.len()]
            }
            Method::Pasif => policies
                .par_iter()
                .enumerate()
                .map(|(p, pi)| {
                    let run_seed = derive_seed(seed, TAG_PASIF + p as u64);
                    estimate_mse(
                        method,
                        candidates,
                        &sim.data,
                        &sim.behavior,
                        pi,
                        &settings,
                        run_seed,
                    )
                })
                .collect(),
        };
        for (p, est) in estimates.iter().enumerate() {
            let true_mse = truth.mse.row(p).to_vec();
            let est = est.as_deref().map_err(Clone::clone);
            let row = select_row(method, betas[p], seed, candidates, est, &true_mse);
            if let Some(e) = &row.error {
                log::warn!("simulation {s}, {method}, beta_e={}: {e}", betas[p]);
            }
            rows.push(row);
        }
    }
    log::info!("simulation {s} done");
    rows
}

/// Detail rows ordered by method, then `β_e`, then simulation.
pub fn run_select(config: &ExperimentConfig) -> Vec<SelectRow> {
    let candidates = make_candidate_set();
    let per_sim: Vec<Vec<SelectRow>> = (0..config.run.n_sims)
        .into_par_iter()
        .map(|s| select_simulation(config, &candidates, s))
        .collect();
    let per_sim_len = config.method.methods.len() * config.evaluation.betas.len();
    let mut rows = Vec::with_capacity(per_sim_len * config.run.n_sims);
    for i in 0..per_sim_len {
        rows.extend(per_sim.iter().map(|sim_rows| sim_rows[i].clone()));
    }
    rows
}

fn ops_simulation(config: &ExperimentConfig, candidates: &[EstimatorCandidate], s: usize) -> Vec<OpsRow> {
    let seed = sim_seed(config, s);
    let blank = |method, n_candidates, error: String| OpsRow {
        method,
        seed,
        n_candidates,
        selected_policy: None,
        true_value_selected: None,
        true_value_best: None,
        rregret_p: None,
        rank_corr_p: None,
        error: Some(error),
    };
    let setup = Simulation::new(config, s).and_then(|sim| {
        let policies =
            build_ops_candidates(&sim.data, &config.estimation.regressors, &config.ops.classifier)?;
        let plain: Vec<Policy> = policies.iter().map(|p| p.policy.clone()).collect();
        let values = true_policy_values(
            &sim.env,
            &plain,
            config.oracle.n_mc,
            derive_seed(seed, TAG_ORACLE),
        )?;
        Ok((sim, policies, plain, values))
    });
    let (sim, policies, plain, values) = match setup {
        Ok(v) => v,
        Err(e) => {
            log::warn!("simulation {s} failed: {e}");
            return config
                .method
                .methods
                .iter()
                .map(|&m| blank(m, 0, e.to_string()))
                .collect();
        }
    };
    let settings = config.settings();
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    config
        .method
        .methods
        .iter()
        .map(|&method| {
            let tag = match method {
                Method::Heuristic => TAG_HEURISTIC,
                Method::Pasif => TAG_PASIF,
            };
            let outcome = ops_select(
                method,
                candidates,
                &plain,
                &sim.data,
                &sim.behavior,
                &settings,
                derive_seed(seed, tag),
            )
            .and_then(|o| {
                let regret = relative_regret_p(&values, o.chosen)?;
                let corr = spearman(&values, &o.estimated_values)?;
                Ok((o.chosen, regret, corr))
            });
            match outcome {
                Ok((chosen, regret, corr)) => OpsRow {
                    method,
                    seed,
                    n_candidates: policies.len(),
                    selected_policy: Some(policies[chosen].to_string()),
                    true_value_selected: Some(values[chosen]),
                    true_value_best: Some(best),
                    rregret_p: Some(regret),
                    rank_corr_p: Some(corr),
                    error: None,
                },
                Err(e) => {
                    log::warn!("simulation {s}, {method}: {e}");
                    blank(method, policies.len(), e.to_string())
                }
            }
        })
        .collect()
}

/// Policy-selection rows ordered by method, then simulation.
pub fn run_ops(config: &ExperimentConfig) -> Vec<OpsRow> {
    let candidates = make_candidate_set();
    let per_sim: Vec<Vec<OpsRow>> = (0..config.run.n_sims)
        .into_par_iter()
        .map(|s| {
            let rows = ops_simulation(config, &candidates, s);
            log::info!("simulation {s} done");
            rows
        })
        .collect();
    let mut rows = Vec::new();
    for i in 0..config.method.methods.len() {
        rows.extend(per_sim.iter().map(|sim_rows| sim_rows[i].clone()));
    }
    rows
}

/// Ground-truth values and candidate MSEs for every simulation and `β_e`.
pub fn run_oracle(config: &ExperimentConfig) -> opesel_core::Result<Vec<OracleRow>> {
    let candidates = make_candidate_set();
    let per_sim: Vec<opesel_core::Result<Vec<OracleRow>>> = (0..config.run.n_sims)
        .into_par_iter()
        .map(|s| {
            let sim = Simulation::new(config, s)?;
            let policies = sim.evaluation_policies(&config.evaluation.betas)?;
            let truth = sim.ground_truth(config, &candidates, &policies)?;
            let mut rows = Vec::new();
            for (p, &beta_e) in config.evaluation.betas.iter().enumerate() {
                for (m, c) in candidates.iter().enumerate() {
                    rows.push(OracleRow {
                        seed: sim.seed,
                        beta_e,
                        candidate: c.to_string(),
                        true_value: truth.values[p],
                        true_mse: truth.mse[[p, m]],
                    });
                }
            }
            log::info!("simulation {s} done");
            Ok(rows)
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_sim {
        rows.extend(r?);
    }
    Ok(rows)
}
