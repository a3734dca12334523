//! Logged bandit data and the Monte-Carlo ground truth.

use ndarray::{Array2, ArrayView2, Axis};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;

use crate::env::SyntheticEnvironment;
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::rng::{derive_seed, rng, stream};

/// Immutable array of `(x_i, a_i, r_i, π_b(a_i|x_i), j_i)` records.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedDataset {
    contexts: Array2<f64>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    propensities: Vec<f64>,
    policy_indices: Vec<usize>,
    n_actions: usize,
    r_max: f64,
}

impl LoggedDataset {
    pub fn new(
        contexts: Array2<f64>,
        actions: Vec<usize>,
        rewards: Vec<f64>,
        propensities: Vec<f64>,
        policy_indices: Vec<usize>,
        n_actions: usize,
        r_max: f64,
    ) -> Result<Self> {
        let n = contexts.nrows();
        if [
            actions.len(),
            rewards.len(),
            propensities.len(),
            policy_indices.len(),
        ]
        .iter()
        .any(|&len| len != n)
        {
            return Err(Error::ShapeMismatch(format!(
                "record arrays disagree: {n} contexts, {} actions, {} rewards, {} propensities, {} policy indices",
                actions.len(),
                rewards.len(),
                propensities.len(),
                policy_indices.len()
            )));
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= n_actions) {
            return Err(Error::ActionOutOfRange { action: a, n_actions });
        }
        if let Some(&p) = propensities.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::FullSupportViolation(p));
        }
        if let Some(&r) = rewards.iter().find(|&&r| !(0.0..=r_max).contains(&r)) {
            return Err(Error::InvalidArgument(format!("reward {r} outside [0, {r_max}]")));
        }
        Ok(Self {
            contexts,
            actions,
            rewards,
            propensities,
            policy_indices,
            n_actions,
            r_max,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn contexts(&self) -> ArrayView2<'_, f64> {
        self.contexts.view()
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn propensities(&self) -> &[f64] {
        &self.propensities
    }

    pub fn policy_indices(&self) -> &[usize] {
        &self.policy_indices
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn mean_reward(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.len() as f64
    }

    /// Records at `indices`, in order; repeated indices repeat the record.
    pub fn select(&self, indices: &[usize]) -> LoggedDataset {
        LoggedDataset {
            contexts: self.contexts.select(Axis(0), indices),
            actions: indices.iter().map(|&i| self.actions[i]).collect(),
            rewards: indices.iter().map(|&i| self.rewards[i]).collect(),
            propensities: indices.iter().map(|&i| self.propensities[i]).collect(),
            policy_indices: indices.iter().map(|&i| self.policy_indices[i]).collect(),
            n_actions: self.n_actions,
            r_max: self.r_max,
        }
    }

    /// Same records relabeled with new behavior propensities.
    pub fn with_propensities(&self, propensities: Vec<f64>) -> Result<LoggedDataset> {
        LoggedDataset::new(
            self.contexts.clone(),
            self.actions.clone(),
            self.rewards.clone(),
            propensities,
            self.policy_indices.clone(),
            self.n_actions,
            self.r_max,
        )
    }

    /// `n` indices drawn uniformly with replacement.
    pub fn bootstrap_indices(&self, seed: u64) -> Vec<usize> {
        let mut g = rng(seed, stream::BOOTSTRAP);
        let n = self.len();
        (0..n).map(|_| g.random_range(0..n)).collect()
    }
}

/// Draws `n` records: `x ~ p(x)`, `j ~ p(j)`, `a ~ π_j(·|x)`, `r ~ Bern(q(x,a))`.
///
/// The stored propensity is the mixture `π_b(a|x) = Σ_j p(j) π_j(a|x)`; the
/// realized component `j` is kept as the record's policy index. A non-mixture
/// `behavior` is treated as a single component.
pub fn sample_logged_data(
    env: &SyntheticEnvironment,
    behavior: &Policy,
    n: usize,
    seed: u64,
) -> Result<LoggedDataset> {
    if behavior.n_actions() != env.n_actions() {
        return Err(Error::ShapeMismatch(
            "behavior policy and environment disagree on |A|".into(),
        ));
    }
    let contexts = env.sample_contexts(n, seed)?;
    let q = env.expected_reward_matrix(contexts.view());
    let (components, weights) = behavior.components();
    let component_probs: Vec<Array2<f64>> = components
        .iter()
        .map(|c| c.probabilities(contexts.view()))
        .collect();
    let mixture_index =
        WeightedIndex::new(&weights).map_err(|e| Error::InvalidArgument(format!("mixture weights: {e}")))?;

    let mut g = rng(seed, stream::LOGGING);
    let mut actions = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    let mut propensities = Vec::with_capacity(n);
    let mut policy_indices = Vec::with_capacity(n);
    for i in 0..n {
        let j = mixture_index.sample(&mut g);
        let row = component_probs[j].row(i);
        let u: f64 = g.random();
        let mut acc = 0.0;
        let mut action = row.len() - 1;
        for (a, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                action = a;
                break;
            }
        }
        let propensity: f64 = weights
            .iter()
            .zip(&component_probs)
            .map(|(w, p)| w * p[[i, action]])
            .sum();
        let reward = if g.random::<f64>() < q[[i, action]] {
            1.0
        } else {
            0.0
        };
        actions.push(action);
        rewards.push(reward);
        propensities.push(propensity.min(1.0));
        policy_indices.push(j);
    }
    LoggedDataset::new(
        contexts,
        actions,
        rewards,
        propensities,
        policy_indices,
        env.n_actions(),
        env.r_max(),
    )
}

const MC_CHUNK: usize = 100_000;

/// Monte-Carlo policy value `(1/n_mc) Σ_i Σ_a π(a|x_i) q(x_i, a)` over fresh contexts.
pub fn true_policy_value(env: &SyntheticEnvironment, pi: &Policy, n_mc: usize, seed: u64) -> Result<f64> {
    Ok(true_policy_values(env, std::slice::from_ref(pi), n_mc, seed)?[0])
}

/// [`true_policy_value`] for several policies on a shared context sample.
pub fn true_policy_values(
    env: &SyntheticEnvironment,
    policies: &[Policy],
    n_mc: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_mc == 0 {
        return Err(Error::EmptyRequest("true_policy_value needs n_mc ≥ 1"));
    }
    let mut sums = vec![0.0; policies.len()];
    let mut remaining = n_mc;
    let mut chunk_index = 0u64;
    while remaining > 0 {
        let size = remaining.min(MC_CHUNK);
        let x = env.sample_contexts(size, derive_seed(seed, chunk_index))?;
        let q = env.expected_reward_matrix(x.view());
        for (sum, pi) in sums.iter_mut().zip(policies) {
            let p = pi.probabilities(x.view());
            *sum += (&p * &q).sum();
        }
        remaining -= size;
        chunk_index += 1;
    }
    Ok(sums.into_iter().map(|s| s / n_mc as f64).collect())
}

/// `π_e(a_i|x_i) / π_b(a_i|x_i)` for a single record.
pub fn importance_ratio(eval_probability: f64, propensity: f64) -> Result<f64> {
    if !(propensity > 0.0) {
        return Err(Error::FullSupportViolation(propensity));
    }
    Ok(eval_probability / propensity)
}

/// Importance ratios for every record, given `π_e(·|x_i)` as an `n × |A|` matrix.
pub fn importance_weights(eval_probs: ArrayView2<f64>, dataset: &LoggedDataset) -> Result<Vec<f64>> {
    if eval_probs.dim() != (dataset.len(), dataset.n_actions()) {
        return Err(Error::ShapeMismatch(format!(
            "evaluation probabilities are {:?}, dataset needs ({}, {})",
            eval_probs.dim(),
            dataset.len(),
            dataset.n_actions()
        )));
    }
    dataset
        .actions()
        .iter()
        .zip(dataset.propensities())
        .enumerate()
        .map(|(i, (&a, &p))| importance_ratio(eval_probs[[i, a]], p))
        .collect()
}
