//! Reward regressors `q̂(x, a)` and K-fold cross-fitting.
//!
//! Three in-library regressors provide model diversity across candidate
//! estimators:
//!
//! * [`RegressorKind::Logistic`]: L2-regularized logistic regression on
//!   `(x, one-hot(a), x ⊗ one-hot(a))`, full-batch gradient descent.
//! * [`RegressorKind::Boosted`]: gradient-boosted depth-2 regression trees on
//!   `x` and the action (split as `a == c`).
//! * [`RegressorKind::Knn`]: mean reward of the `k` nearest logged contexts
//!   that took the same action.

mod boosted;
mod knn;
mod logistic;

use std::fmt;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::LoggedDataset;
use crate::error::{Error, Result};
use crate::rng::{rng, stream};

pub use boosted::{BoostedConfig, BoostedModel};
pub use knn::{KnnConfig, KnnModel};
pub use logistic::{LogisticConfig, LogisticModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressorKind {
    Logistic,
    Boosted,
    Knn,
}

impl RegressorKind {
    pub const ALL: [RegressorKind; 3] = [
        RegressorKind::Logistic,
        RegressorKind::Boosted,
        RegressorKind::Knn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegressorKind::Logistic => "logistic",
            RegressorKind::Boosted => "boosted",
            RegressorKind::Knn => "knn",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for RegressorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Hyperparameters of every regressor. Defaults are fixed, not tuned.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressorConfig {
    pub logistic: LogisticConfig,
    pub boosted: BoostedConfig,
    pub knn: KnnConfig,
}

/// A fitted predictor of expected reward.
#[derive(Debug, Clone)]
pub enum RewardModel {
    Constant { value: f64, n_actions: usize },
    Logistic(LogisticModel),
    Boosted(BoostedModel),
    Knn(KnnModel),
}

impl RewardModel {
    pub fn fit(
        kind: RegressorKind,
        contexts: ArrayView2<f64>,
        actions: &[usize],
        rewards: &[f64],
        n_actions: usize,
        r_max: f64,
        config: &RegressorConfig,
    ) -> Result<FittedModel> {
        if actions.is_empty() {
            return Err(Error::EmptyRequest("cannot fit a reward model on zero records"));
        }
        let targets: Vec<f64> = rewards.iter().map(|r| r / r_max).collect();
        let model = match kind {
            RegressorKind::Logistic => {
                let first = targets[0];
                let single_class = targets.iter().all(|&t| t == first) && (first == 0.0 || first == 1.0);
                if single_class {
                    log::warn!(
                        "logistic reward model fitted on a single reward class; using a constant predictor"
                    );
                    return Ok(FittedModel {
                        model: RewardModel::Constant {
                            value: first * r_max,
                            n_actions,
                        },
                        r_max,
                        degenerate: true,
                    });
                }
                RewardModel::Logistic(LogisticModel::fit(
                    contexts,
                    actions,
                    &targets,
                    n_actions,
                    &config.logistic,
                ))
            }
            RegressorKind::Boosted => RewardModel::Boosted(BoostedModel::fit(
                contexts,
                actions,
                &targets,
                n_actions,
                &config.boosted,
            )),
            RegressorKind::Knn => {
                RewardModel::Knn(KnnModel::fit(contexts, actions, &targets, n_actions, &config.knn))
            }
        };
        Ok(FittedModel {
            model,
            r_max,
            degenerate: false,
        })
    }

    /// Predicted normalized reward for every row and action (`n × |A|`).
    fn predict_unit(&self, contexts: ArrayView2<f64>) -> Array2<f64> {
        match self {
            RewardModel::Constant { value, n_actions } => {
                Array2::from_elem((contexts.nrows(), *n_actions), *value)
            }
            RewardModel::Logistic(m) => m.predict_matrix(contexts),
            RewardModel::Boosted(m) => m.predict_matrix(contexts),
            RewardModel::Knn(m) => m.predict_matrix(contexts),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    model: RewardModel,
    r_max: f64,
    /// Set when fitting fell back to a constant predictor.
    pub degenerate: bool,
}

impl FittedModel {
    pub fn model(&self) -> &RewardModel {
        &self.model
    }

    /// `q̂(x_i, a)` for every row of `contexts` and every action.
    pub fn predict_matrix(&self, contexts: ArrayView2<f64>) -> Array2<f64> {
        match self.model {
            RewardModel::Constant { .. } => self.model.predict_unit(contexts),
            _ => self.model.predict_unit(contexts) * self.r_max,
        }
    }
}

/// Random fold of every record: a permutation dealt round-robin, so fold
/// sizes differ by at most one.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng(seed, stream::FOLDS));
    let mut folds = vec![0; n];
    for (position, &i) in order.iter().enumerate() {
        folds[i] = position % k;
    }
    folds
}

/// K reward models, the κ-th fitted on every record outside fold κ.
#[derive(Debug, Clone)]
pub struct CrossFit {
    pub kind: RegressorKind,
    pub folds: Vec<usize>,
    pub models: Vec<FittedModel>,
}

impl CrossFit {
    pub fn n_folds(&self) -> usize {
        self.models.len()
    }

    pub fn any_degenerate(&self) -> bool {
        self.models.iter().any(|m| m.degenerate)
    }

    /// Out-of-fold predictions: record `i` is predicted by the model of its own fold.
    pub fn predictions(&self, dataset: &LoggedDataset) -> Result<Array2<f64>> {
        if dataset.len() != self.folds.len() {
            return Err(Error::ShapeMismatch(
                "cross-fit was built for a different dataset".into(),
            ));
        }
        let mut out = Array2::zeros((dataset.len(), dataset.n_actions()));
        for (kappa, model) in self.models.iter().enumerate() {
            let rows: Vec<usize> = (0..dataset.len()).filter(|&i| self.folds[i] == kappa).collect();
            if rows.is_empty() {
                continue;
            }
            let pred = model.predict_matrix(dataset.contexts().select(Axis(0), &rows).view());
            for (r, &i) in rows.iter().enumerate() {
                out.row_mut(i).assign(&pred.row(r));
            }
        }
        Ok(out)
    }
}

pub fn cross_fit_reward_model(
    dataset: &LoggedDataset,
    kind: RegressorKind,
    k: usize,
    seed: u64,
    config: &RegressorConfig,
) -> Result<CrossFit> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "cross-fitting needs K ≥ 2, got {k}"
        )));
    }
    if dataset.len() < k {
        return Err(Error::InsufficientData {
            needed: k,
            got: dataset.len(),
        });
    }
    let folds = fold_assignment(dataset.len(), k, seed);
    let mut models = Vec::with_capacity(k);
    for kappa in 0..k {
        let train: Vec<usize> = (0..dataset.len()).filter(|&i| folds[i] != kappa).collect();
        let sub = dataset.select(&train);
        models.push(RewardModel::fit(
            kind,
            sub.contexts(),
            sub.actions(),
            sub.rewards(),
            dataset.n_actions(),
            dataset.r_max(),
            config,
        )?);
    }
    Ok(CrossFit { kind, folds, models })
}

/// Out-of-fold reward predictions for each regressor kind on one dataset.
#[derive(Debug, Clone, Default)]
pub struct PredictionSet {
    slots: [Option<Array2<f64>>; 3],
}

impl PredictionSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Cross-fits every kind in `kinds`; all kinds share one fold assignment.
    pub fn cross_fit(
        dataset: &LoggedDataset,
        kinds: &[RegressorKind],
        k: usize,
        seed: u64,
        config: &RegressorConfig,
    ) -> Result<Self> {
        let mut set = Self::new();
        for &kind in kinds {
            if set.get(kind).is_none() {
                let fit = cross_fit_reward_model(dataset, kind, k, seed, config)?;
                set.insert(kind, fit.predictions(dataset)?);
            }
        }
        Ok(set)
    }

    pub fn insert(&mut self, kind: RegressorKind, predictions: Array2<f64>) {
        self.slots[kind.index()] = Some(predictions);
    }

    pub fn get(&self, kind: RegressorKind) -> Option<ArrayView2<'_, f64>> {
        self.slots[kind.index()].as_ref().map(|p| p.view())
    }
}
