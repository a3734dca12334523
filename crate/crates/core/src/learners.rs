//! Candidate evaluation policies for policy selection.
//!
//! Twenty policies: two learners, each with two base models, each softened
//! at five inverse temperatures `β ∈ {1, 2, 10, 20, 100}` by
//! `π(a|x) ∝ exp(β s(x, a))` over the learned scores `s`.
//!
//! * Q-learner: `s = q̂(x, a)` from a reward regressor (logistic or boosted)
//!   fitted on the logged data.
//! * IPW-learner: `s` are the logits of a multinomial logistic classifier of
//!   the logged action, each record weighted by `r_i / π_b(a_i|x_i)`, on
//!   linear or linear-plus-squared context features.

use std::fmt;
use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::LoggedDataset;
use crate::error::Result;
use crate::policy::{softmax_rows, ActionScorer, Policy};
use crate::reward::{FittedModel, RegressorConfig, RegressorKind, RewardModel};

/// Inverse temperatures applied to every learner.
pub const OPS_BETAS: [f64; 5] = [1.0, 2.0, 10.0, 20.0, 100.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LearnerKind {
    QLogistic,
    QBoosted,
    IpwLinear,
    IpwQuadratic,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 4] = [
        LearnerKind::QLogistic,
        LearnerKind::QBoosted,
        LearnerKind::IpwLinear,
        LearnerKind::IpwQuadratic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::QLogistic => "q-logistic",
            LearnerKind::QBoosted => "q-boosted",
            LearnerKind::IpwLinear => "ipw-linear",
            LearnerKind::IpwQuadratic => "ipw-quadratic",
        }
    }
}

/// `q̂` as action scores.
#[derive(Debug)]
struct RewardScorer {
    model: FittedModel,
    n_actions: usize,
}

impl ActionScorer for RewardScorer {
    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn scores(&self, contexts: ArrayView2<f64>) -> Array2<f64> {
        self.model.predict_matrix(contexts)
    }

    fn describe(&self) -> String {
        "fitted reward model".into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Features {
    Linear,
    Quadratic,
}

fn featurize(contexts: ArrayView2<f64>, features: Features) -> Array2<f64> {
    let (n, d) = contexts.dim();
    let width = match features {
        Features::Linear => 1 + d,
        Features::Quadratic => 1 + 2 * d,
    };
    let mut out = Array2::zeros((n, width));
    out.column_mut(0).fill(1.0);
    out.slice_mut(s![.., 1..1 + d]).assign(&contexts);
    if features == Features::Quadratic {
        out.slice_mut(s![.., 1 + d..]).assign(&contexts.mapv(|v| v * v));
    }
    out
}

/// Multinomial logistic classifier; scores are its logits.
#[derive(Debug, Clone)]
pub struct WeightedClassifier {
    /// `features × |A|`
    coef: Array2<f64>,
    features: Features,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub l2: f64,
    pub learning_rate: f64,
    pub iterations: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            learning_rate: 0.5,
            iterations: 300,
        }
    }
}

impl WeightedClassifier {
    /// Full-batch gradient descent on the weighted cross-entropy
    /// `Σ_i v_i (−log p(a_i|x_i)) / Σ_i v_i + l2 ‖W‖²`. `None` when every
    /// weight is zero.
    fn fit(
        contexts: ArrayView2<f64>,
        actions: &[usize],
        weights: &[f64],
        n_actions: usize,
        features: Features,
        config: &ClassifierConfig,
    ) -> Option<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return None;
        }
        let phi = featurize(contexts, features);
        let v = Array1::from_iter(weights.iter().map(|w| w / total));
        let mut coef = Array2::zeros((phi.ncols(), n_actions));
        for _ in 0..config.iterations {
            let mut probs = phi.dot(&coef);
            softmax_rows(&mut probs, 1.0);
            for (i, &a) in actions.iter().enumerate() {
                probs[[i, a]] -= 1.0;
            }
            probs *= &v.view().insert_axis(Axis(1));
            let mut grad = phi.t().dot(&probs);
            grad.scaled_add(2.0 * config.l2, &coef);
            coef.scaled_add(-config.learning_rate, &grad);
        }
        Some(Self { coef, features })
    }
}

impl ActionScorer for WeightedClassifier {
    fn n_actions(&self) -> usize {
        self.coef.ncols()
    }

    fn scores(&self, contexts: ArrayView2<f64>) -> Array2<f64> {
        featurize(contexts, self.features).dot(&self.coef)
    }

    fn describe(&self) -> String {
        "weighted multinomial classifier".into()
    }
}

/// Constant scores, i.e. the uniform policy at any temperature.
#[derive(Debug)]
struct UniformScorer(usize);

impl ActionScorer for UniformScorer {
    fn n_actions(&self) -> usize {
        self.0
    }

    fn scores(&self, contexts: ArrayView2<f64>) -> Array2<f64> {
        Array2::zeros((contexts.nrows(), self.0))
    }

    fn describe(&self) -> String {
        "uniform".into()
    }
}

#[derive(Debug, Clone)]
pub struct CandidatePolicy {
    pub learner: LearnerKind,
    pub beta: f64,
    pub policy: Policy,
    /// Training degenerated and the policy fell back to uniform.
    pub fallback: bool,
}

impl fmt::Display for CandidatePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(beta={})", self.learner.name(), self.beta)
    }
}

fn learner_scorer(
    kind: LearnerKind,
    dataset: &LoggedDataset,
    regressors: &RegressorConfig,
    classifier: &ClassifierConfig,
) -> Result<Option<Arc<dyn ActionScorer>>> {
    let n_actions = dataset.n_actions();
    let fit_q = |kind| -> Result<Option<Arc<dyn ActionScorer>>> {
        let model = RewardModel::fit(
            kind,
            dataset.contexts(),
            dataset.actions(),
            dataset.rewards(),
            n_actions,
            dataset.r_max(),
            regressors,
        )?;
        if model.degenerate {
            return Ok(None);
        }
        Ok(Some(Arc::new(RewardScorer { model, n_actions })))
    };
    let fit_ipw = |features| -> Option<Arc<dyn ActionScorer>> {
        let weights: Vec<f64> = dataset
            .rewards()
            .iter()
            .zip(dataset.propensities())
            .map(|(r, p)| r / p)
            .collect();
        WeightedClassifier::fit(
            dataset.contexts(),
            dataset.actions(),
            &weights,
            n_actions,
            features,
            classifier,
        )
        .map(|c| Arc::new(c) as Arc<dyn ActionScorer>)
    };
    Ok(match kind {
        LearnerKind::QLogistic => fit_q(RegressorKind::Logistic)?,
        LearnerKind::QBoosted => fit_q(RegressorKind::Boosted)?,
        LearnerKind::IpwLinear => fit_ipw(Features::Linear),
        LearnerKind::IpwQuadratic => fit_ipw(Features::Quadratic),
    })
}

/// The twenty candidate policies learned from `dataset`, ordered by learner,
/// then inverse temperature.
pub fn build_ops_candidates(
    dataset: &LoggedDataset,
    regressors: &RegressorConfig,
    classifier: &ClassifierConfig,
) -> Result<Vec<CandidatePolicy>> {
    let mut out = Vec::with_capacity(LearnerKind::ALL.len() * OPS_BETAS.len());
    for kind in LearnerKind::ALL {
        let scorer = learner_scorer(kind, dataset, regressors, classifier)?;
        let fallback = scorer.is_none();
        if fallback {
            log::warn!(
                "{} training degenerated; its candidates fall back to the uniform policy",
                kind.name()
            );
        }
        let scorer = scorer.unwrap_or_else(|| Arc::new(UniformScorer(dataset.n_actions())));
        for beta in OPS_BETAS {
            out.push(CandidatePolicy {
                learner: kind,
                beta,
                policy: Policy::softmax(beta, scorer.clone())?,
                fallback,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sample_logged_data, true_policy_values};
    use crate::env::SyntheticEnvironment;
    use crate::policy::{check_distribution, softmax_policy};

    fn setup(seed: u64) -> (SyntheticEnvironment, LoggedDataset) {
        let env = SyntheticEnvironment::new(5, 6, seed).unwrap();
        let b = Policy::mixture(
            vec![
                softmax_policy(&env, -2.0).unwrap(),
                softmax_policy(&env, 2.0).unwrap(),
            ],
            vec![0.5, 0.5],
        )
        .unwrap();
        let d = sample_logged_data(&env, &b, 1000, seed).unwrap();
        (env, d)
    }

    #[test]
    fn twenty_full_support_candidates() {
        let (env, d) = setup(0);
        let c = build_ops_candidates(&d, &RegressorConfig::default(), &ClassifierConfig::default()).unwrap();
        assert_eq!(c.len(), 20);
        assert!(c.iter().all(|p| !p.fallback));
        let x = env.sample_contexts(50, 1).unwrap();
        for p in &c {
            assert!(
                check_distribution(p.policy.probabilities(x.view()).view(), 1e-9),
                "{p}"
            );
        }
    }

    #[test]
    fn sharper_q_learner_is_better_on_average() {
        let mut gain = 0.0;
        for seed in 0..5 {
            let (env, d) = setup(seed);
            let c =
                build_ops_candidates(&d, &RegressorConfig::default(), &ClassifierConfig::default()).unwrap();
            let q: Vec<Policy> = c
                .iter()
                .filter(|p| p.learner == LearnerKind::QLogistic && (p.beta == 1.0 || p.beta == 100.0))
                .map(|p| p.policy.clone())
                .collect();
            let v = true_policy_values(&env, &q, 20_000, 3).unwrap();
            gain += v[1] - v[0];
        }
        assert!(gain > 0.0);
    }

    #[test]
    fn zero_rewards_fall_back_to_uniform() {
        let (_, d) = setup(1);
        let zeroed = LoggedDataset::new(
            d.contexts().to_owned(),
            d.actions().to_vec(),
            vec![0.0; d.len()],
            d.propensities().to_vec(),
            d.policy_indices().to_vec(),
            d.n_actions(),
            d.r_max(),
        )
        .unwrap();
        let c =
            build_ops_candidates(&zeroed, &RegressorConfig::default(), &ClassifierConfig::default()).unwrap();
        let ipw: Vec<&CandidatePolicy> = c.iter().filter(|p| p.learner == LearnerKind::IpwLinear).collect();
        assert!(ipw.iter().all(|p| p.fallback));
        let probs = ipw[0].policy.probabilities(d.contexts());
        assert!(probs.iter().all(|&p| (p - 1.0 / 6.0).abs() < 1e-12));
    }
}
