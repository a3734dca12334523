//! Non-adaptive MSE estimation that treats one data-collection policy as a
//! pseudo evaluation policy.
//!
//! With behavior data pooled from policies `π_1, …, π_l`, the records logged
//! by `π_j` form a pseudo evaluation set whose mean reward is an on-policy
//! value of `π_j`; the remaining records, resampled, form a pseudo behavior
//! set with propensities from the mixture of the remaining policies. Each
//! candidate's squared error at recovering the former from the latter is
//! averaged over bootstrap seeds.

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LoggedDataset;
use crate::error::{Error, Result};
use crate::estimators::{estimate_candidates, EstimationConfig, EstimatorCandidate};
use crate::policy::Policy;
use crate::rng::{derive_seed, rng, stream};

/// Which logged policy plays the pseudo evaluation policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PseudoEvalMode {
    /// Drawn uniformly for every seed.
    #[default]
    Random,
    /// The same index for every seed.
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeuristicConfig {
    pub mode: PseudoEvalMode,
    pub seeds: Vec<u64>,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            mode: PseudoEvalMode::Random,
            seeds: (0..10).collect(),
        }
    }
}

/// Pseudo evaluation index used at bootstrap seed `s`.
pub fn pseudo_eval_index(mode: PseudoEvalMode, n_policies: usize, seed: u64, s: u64) -> usize {
    match mode {
        PseudoEvalMode::Fixed(j) => j,
        PseudoEvalMode::Random => rng(derive_seed(seed, s), stream::PSEUDO_EVAL).random_range(0..n_policies),
    }
}

/// Records logged by policy `j` and all others, in dataset order.
pub fn split_by_policy(dataset: &LoggedDataset, j: usize) -> (Vec<usize>, Vec<usize>) {
    (0..dataset.len()).partition(|&i| dataset.policy_indices()[i] == j)
}

/// Estimated MSE of every candidate. `behavior` must be the mixture that
/// logged `dataset`, with at least two components.
pub fn estimate_mse_nonadaptive(
    candidates: &[EstimatorCandidate],
    dataset: &LoggedDataset,
    behavior: &Policy,
    config: &HeuristicConfig,
    estimation: &EstimationConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let (components, weights) = behavior.components();
    let l = components.len();
    if l < 2 {
        return Err(Error::NotApplicable(
            "the heuristic needs at least two data-collection policies",
        ));
    }
    if candidates.is_empty() {
        return Err(Error::EmptyRequest("no candidate estimators"));
    }
    if config.seeds.is_empty() {
        return Err(Error::InvalidArgument("heuristic seeds must not be empty".into()));
    }
    if let PseudoEvalMode::Fixed(j) = config.mode {
        if j >= l {
            return Err(Error::InvalidArgument(format!(
                "pseudo evaluation index {j} with {l} policies"
            )));
        }
    }
    if let Some(&j) = dataset.policy_indices().iter().find(|&&j| j >= l) {
        return Err(Error::InvalidArgument(format!(
            "record logged by policy {j}, behavior has {l} components"
        )));
    }
    let probs: Vec<Array2<f64>> = components
        .iter()
        .map(|p| p.probabilities(dataset.contexts()))
        .collect();

    let mut sums = vec![0.0; candidates.len()];
    for &s in &config.seeds {
        let j = pseudo_eval_index(config.mode, l, seed, s);
        let (eval_idx, rest_idx) = split_by_policy(dataset, j);
        if eval_idx.is_empty() || rest_idx.is_empty() {
            return Err(Error::DegenerateSplit(format!(
                "policy {j} logged {} of {} records",
                eval_idx.len(),
                dataset.len()
            )));
        }
        let on_policy = dataset.select(&eval_idx).mean_reward();

        let run_seed = derive_seed(seed, s);
        let mut g = rng(run_seed, stream::BOOTSTRAP);
        let boot: Vec<usize> = (0..rest_idx.len())
            .map(|_| rest_idx[g.random_range(0..rest_idx.len())])
            .collect();

        let remaining: f64 = (0..l).filter(|&k| k != j).map(|k| weights[k]).sum();
        if !(remaining > 0.0) {
            return Err(Error::DivisionByZero("mixture weight of the remaining policies"));
        }
        let propensities: Vec<f64> = boot
            .iter()
            .map(|&i| {
                let a = dataset.actions()[i];
                (0..l)
                    .filter(|&k| k != j)
                    .map(|k| weights[k] * probs[k][[i, a]])
                    .sum::<f64>()
                    / remaining
            })
            .collect();
        let pseudo_behavior = dataset.select(&boot).with_propensities(propensities)?;
        let eval_probs = probs[j].select(Axis(0), &boot);
        let values = estimate_candidates(
            candidates,
            &pseudo_behavior,
            eval_probs.view(),
            estimation,
            run_seed,
        )?;
        for (sum, v) in sums.iter_mut().zip(values) {
            *sum += (v - on_policy).powi(2);
        }
    }
    Ok(sums.into_iter().map(|s| s / config.seeds.len() as f64).collect())
}
