//! Off-policy estimators and the candidate pool used for selection.
//!
//! Every estimator here is an average of per-record contributions:
//!
//! * DM: `Σ_a π_e(a|x_i) q̂(x_i, a)`
//! * IPS-type: `T(w_i) r_i`
//! * DR-type: `T(w_i) (r_i − q̂(x_i, a_i)) + Σ_a π_e(a|x_i) q̂(x_i, a)`
//!
//! where `T` is a [`WeightTransform`]. Exposing the contributions lets SLOPE
//! compute confidence widths from the same numbers that make the estimate.

use std::fmt;

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{importance_weights, LoggedDataset};
use crate::error::{Error, Result};
use crate::reward::{PredictionSet, RegressorConfig, RegressorKind};
use crate::slope::{cnf_width, slope_select, TuningProblem};

/// The records of one OPE task together with `π_e(·|x_i)` and the importance ratios.
#[derive(Debug, Clone)]
pub struct OpeInput<'a> {
    actions: &'a [usize],
    rewards: &'a [f64],
    eval_probs: ArrayView2<'a, f64>,
    weights: Vec<f64>,
}

impl<'a> OpeInput<'a> {
    /// `eval_probs` holds `π_e(a|x_i)` for every record (`n × |A|`).
    pub fn new(dataset: &'a LoggedDataset, eval_probs: ArrayView2<'a, f64>) -> Result<Self> {
        let weights = importance_weights(eval_probs, dataset)?;
        Ok(Self {
            actions: dataset.actions(),
            rewards: dataset.rewards(),
            eval_probs,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn rewards(&self) -> &[f64] {
        self.rewards
    }

    fn check_predictions(&self, q_hat: ArrayView2<f64>) -> Result<()> {
        if q_hat.dim() != self.eval_probs.dim() {
            return Err(Error::ShapeMismatch(format!(
                "reward predictions are {:?}, expected {:?}",
                q_hat.dim(),
                self.eval_probs.dim()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WeightTransform {
    Identity,
    /// `min(w, λ)`
    Clip(f64),
    /// `w / mean(w)`
    SelfNormalize,
    /// `w · 1{w ≤ λ}`
    Switch(f64),
    /// `λ w / (w² + λ)`
    OptimisticShrinkage(f64),
    /// `((1 − λ) w^s + λ)^{1/s}`, `λ ∈ [0, 1]`, `s ≤ 1`
    Subgaussian {
        lambda: f64,
        s: f64,
    },
}

/// Exponent of the subgaussian shrinkage used by the candidate pool.
pub const SUBGAUSSIAN_EXPONENT: f64 = -1.0;

fn subgaussian(w: f64, lambda: f64, s: f64) -> f64 {
    if s == -1.0 {
        // closed form avoids 1/w at w = 0
        w / ((1.0 - lambda) + lambda * w)
    } else if s == 0.0 {
        w.powf(1.0 - lambda)
    } else if s < 0.0 && w == 0.0 {
        0.0
    } else {
        ((1.0 - lambda) * w.powf(s) + lambda).powf(1.0 / s)
    }
}

impl WeightTransform {
    fn validate(&self) -> Result<()> {
        let bad = match *self {
            WeightTransform::Clip(l)
            | WeightTransform::Switch(l)
            | WeightTransform::OptimisticShrinkage(l) => !(l >= 0.0),
            WeightTransform::Subgaussian { lambda, s } => !(0.0..=1.0).contains(&lambda) || !(s <= 1.0),
            _ => false,
        };
        if bad {
            return Err(Error::InvalidArgument(format!(
                "invalid weight transform {self:?}"
            )));
        }
        Ok(())
    }

    pub fn apply(&self, weights: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        let out = match *self {
            WeightTransform::Identity => weights.to_vec(),
            WeightTransform::Clip(l) => weights.iter().map(|&w| w.min(l)).collect(),
            WeightTransform::SelfNormalize => {
                let mean = weights.iter().sum::<f64>() / weights.len() as f64;
                if !(mean > 0.0) {
                    return Err(Error::DivisionByZero(
                        "self-normalization with all-zero importance weights",
                    ));
                }
                weights.iter().map(|&w| w / mean).collect()
            }
            WeightTransform::Switch(l) => weights.iter().map(|&w| if w <= l { w } else { 0.0 }).collect(),
            WeightTransform::OptimisticShrinkage(l) => weights
                .iter()
                .map(|&w| {
                    if l.is_infinite() {
                        w
                    } else if w == 0.0 {
                        0.0
                    } else {
                        l * w / (w * w + l)
                    }
                })
                .collect(),
            WeightTransform::Subgaussian { lambda, s } => {
                weights.iter().map(|&w| subgaussian(w, lambda, s)).collect()
            }
        };
        Ok(out)
    }
}

fn dm_terms(input: &OpeInput<'_>, q_hat: ArrayView2<f64>) -> Vec<f64> {
    (&input.eval_probs * &q_hat).sum_axis(Axis(1)).to_vec()
}

fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyRequest("estimate on an empty dataset"));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

pub fn dm_contributions(input: &OpeInput<'_>, q_hat: ArrayView2<f64>) -> Result<Vec<f64>> {
    input.check_predictions(q_hat)?;
    Ok(dm_terms(input, q_hat))
}

pub fn ips_contributions(input: &OpeInput<'_>, transform: WeightTransform) -> Result<Vec<f64>> {
    let tw = transform.apply(&input.weights)?;
    Ok(tw.iter().zip(input.rewards).map(|(w, r)| w * r).collect())
}

pub fn dr_contributions(
    input: &OpeInput<'_>,
    q_hat: ArrayView2<f64>,
    transform: WeightTransform,
) -> Result<Vec<f64>> {
    input.check_predictions(q_hat)?;
    let tw = transform.apply(&input.weights)?;
    let dm = dm_terms(input, q_hat);
    Ok((0..input.len())
        .map(|i| {
            let logged = q_hat[[i, input.actions[i]]];
            tw[i] * (input.rewards[i] - logged) + dm[i]
        })
        .collect())
}

/// `(1/n) Σ_i Σ_a π_e(a|x_i) q̂(x_i, a)` with out-of-fold `q̂`.
pub fn estimate_dm(input: &OpeInput<'_>, q_hat: ArrayView2<f64>) -> Result<f64> {
    mean(&dm_contributions(input, q_hat)?)
}

/// `(1/n) Σ_i T(w_i) r_i`; covers IPS, IPSps, SNIPS and IPS-λ.
pub fn estimate_ips(input: &OpeInput<'_>, transform: WeightTransform) -> Result<f64> {
    mean(&ips_contributions(input, transform)?)
}

/// Covers DR, DRps, SNDR, Switch, DRos and DR-λ.
pub fn estimate_dr(input: &OpeInput<'_>, q_hat: ArrayView2<f64>, transform: WeightTransform) -> Result<f64> {
    mean(&dr_contributions(input, q_hat, transform)?)
}

// ── Candidate pool ──────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorFamily {
    Dm,
    IpsPs,
    DrPs,
    Snips,
    Sndr,
    Switch,
    DrOs,
    IpsLambda,
    DrLambda,
}

/// Clipping/switch/shrinkage thresholds, in SLOPE order (decreasing λ).
pub const THRESHOLD_GRID: [f64; 8] = [f64::INFINITY, 1e5, 5e4, 1e4, 5e3, 1e3, 500.0, 100.0];
/// Subgaussian shrinkage strengths, in SLOPE order (increasing λ).
pub const SUBGAUSSIAN_GRID: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

impl EstimatorFamily {
    pub const ALL: [EstimatorFamily; 9] = [
        EstimatorFamily::Dm,
        EstimatorFamily::IpsPs,
        EstimatorFamily::DrPs,
        EstimatorFamily::Snips,
        EstimatorFamily::Sndr,
        EstimatorFamily::Switch,
        EstimatorFamily::DrOs,
        EstimatorFamily::IpsLambda,
        EstimatorFamily::DrLambda,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorFamily::Dm => "DM",
            EstimatorFamily::IpsPs => "IPSps",
            EstimatorFamily::DrPs => "DRps",
            EstimatorFamily::Snips => "SNIPS",
            EstimatorFamily::Sndr => "SNDR",
            EstimatorFamily::Switch => "Switch",
            EstimatorFamily::DrOs => "DRos",
            EstimatorFamily::IpsLambda => "IPS-lambda",
            EstimatorFamily::DrLambda => "DR-lambda",
        }
    }

    pub fn needs_reward_model(self) -> bool {
        !matches!(
            self,
            EstimatorFamily::IpsPs | EstimatorFamily::Snips | EstimatorFamily::IpsLambda
        )
    }

    /// Hyperparameter grid in SLOPE order, or `None` for untuned families.
    pub fn grid(self) -> Option<&'static [f64]> {
        match self {
            EstimatorFamily::IpsPs
            | EstimatorFamily::DrPs
            | EstimatorFamily::Switch
            | EstimatorFamily::DrOs => Some(&THRESHOLD_GRID),
            EstimatorFamily::IpsLambda | EstimatorFamily::DrLambda => Some(&SUBGAUSSIAN_GRID),
            _ => None,
        }
    }

    /// Weight transform at hyperparameter `lambda` (ignored by untuned families).
    /// `None` for DM, which uses no importance weights.
    pub fn transform(self, lambda: f64) -> Option<WeightTransform> {
        match self {
            EstimatorFamily::Dm => None,
            EstimatorFamily::IpsPs | EstimatorFamily::DrPs => Some(WeightTransform::Clip(lambda)),
            EstimatorFamily::Snips | EstimatorFamily::Sndr => Some(WeightTransform::SelfNormalize),
            EstimatorFamily::Switch => Some(WeightTransform::Switch(lambda)),
            EstimatorFamily::DrOs => Some(WeightTransform::OptimisticShrinkage(lambda)),
            EstimatorFamily::IpsLambda | EstimatorFamily::DrLambda => Some(WeightTransform::Subgaussian {
                lambda,
                s: SUBGAUSSIAN_EXPONENT,
            }),
        }
    }
}

/// An estimator family paired with the regressor backing `q̂` (if any).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EstimatorCandidate {
    pub family: EstimatorFamily,
    pub regressor: Option<RegressorKind>,
}

impl fmt::Display for EstimatorCandidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.regressor {
            Some(kind) => write!(f, "{}({})", self.family.name(), kind),
            None => f.write_str(self.family.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateEstimate {
    pub value: f64,
    /// Hyperparameter chosen by SLOPE, for tuned families.
    pub lambda: Option<f64>,
}

/// Confidence level used by SLOPE inside candidate evaluation.
pub const SLOPE_DELTA: f64 = 0.05;

impl EstimatorCandidate {
    pub fn new(family: EstimatorFamily, regressor: Option<RegressorKind>) -> Result<Self> {
        if family.needs_reward_model() != regressor.is_some() {
            return Err(Error::InvalidArgument(format!(
                "{} {} a reward model",
                family.name(),
                if family.needs_reward_model() {
                    "requires"
                } else {
                    "does not take"
                }
            )));
        }
        Ok(Self { family, regressor })
    }

    /// Per-record contributions at hyperparameter `lambda`.
    pub fn contributions(
        &self,
        input: &OpeInput<'_>,
        predictions: &PredictionSet,
        lambda: f64,
    ) -> Result<Vec<f64>> {
        let q_hat = match self.regressor {
            Some(kind) => Some(predictions.get(kind).ok_or_else(|| {
                Error::InvalidArgument(format!("no {kind} reward predictions for candidate {self}"))
            })?),
            None => None,
        };
        match (self.family.transform(lambda), q_hat) {
            (None, Some(q)) => dm_contributions(input, q),
            (Some(t), None) => ips_contributions(input, t),
            (Some(t), Some(q)) => dr_contributions(input, q, t),
            (None, None) => unreachable!("DM always carries a regressor"),
        }
    }

    /// Point estimate, with the family hyperparameter tuned by SLOPE.
    pub fn evaluate(&self, input: &OpeInput<'_>, predictions: &PredictionSet) -> Result<CandidateEstimate> {
        let Some(grid) = self.family.grid() else {
            return Ok(CandidateEstimate {
                value: mean(&self.contributions(input, predictions, 0.0)?)?,
                lambda: None,
            });
        };
        let mut estimates = Vec::with_capacity(grid.len());
        let mut widths = Vec::with_capacity(grid.len());
        for &lambda in grid {
            let c = self.contributions(input, predictions, lambda)?;
            estimates.push(mean(&c)?);
            widths.push(cnf_width(&c, SLOPE_DELTA)?);
        }
        let chosen = slope_select(&TuningProblem::new(estimates.clone(), widths)?);
        Ok(CandidateEstimate {
            value: estimates[chosen],
            lambda: Some(grid[chosen]),
        })
    }
}

/// The 21-entry pool: every family crossed with every regressor where it takes one.
pub fn make_candidate_set() -> Vec<EstimatorCandidate> {
    let mut out = Vec::with_capacity(21);
    for family in EstimatorFamily::ALL {
        if family.needs_reward_model() {
            for kind in RegressorKind::ALL {
                out.push(EstimatorCandidate {
                    family,
                    regressor: Some(kind),
                });
            }
        } else {
            out.push(EstimatorCandidate {
                family,
                regressor: None,
            });
        }
    }
    out
}

/// Regressor kinds referenced by `candidates`.
pub fn required_regressors(candidates: &[EstimatorCandidate]) -> Vec<RegressorKind> {
    let mut kinds: Vec<RegressorKind> = candidates.iter().filter_map(|c| c.regressor).collect();
    kinds.sort();
    kinds.dedup();
    kinds
}

/// Evaluates every candidate on one task.
pub fn evaluate_all(
    candidates: &[EstimatorCandidate],
    input: &OpeInput<'_>,
    predictions: &PredictionSet,
) -> Result<Vec<CandidateEstimate>> {
    candidates
        .iter()
        .map(|c| c.evaluate(input, predictions))
        .collect()
}

/// How candidate estimates are computed on a dataset: K-fold cross-fitting
/// of every needed regressor, then [`evaluate_all`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationConfig {
    pub n_folds: usize,
    pub regressors: RegressorConfig,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            n_folds: 3,
            regressors: RegressorConfig::default(),
        }
    }
}

/// Point estimates of every candidate for the policy with probabilities
/// `eval_probs` on `dataset`. `seed` fixes the fold assignment.
pub fn estimate_candidates(
    candidates: &[EstimatorCandidate],
    dataset: &LoggedDataset,
    eval_probs: ArrayView2<f64>,
    config: &EstimationConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let input = OpeInput::new(dataset, eval_probs)?;
    let predictions = PredictionSet::cross_fit(
        dataset,
        &required_regressors(candidates),
        config.n_folds,
        seed,
        &config.regressors,
    )?;
    Ok(evaluate_all(candidates, &input, &predictions)?
        .into_iter()
        .map(|e| e.value)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn toy() -> (LoggedDataset, Array2<f64>) {
        // |A| = 2, 5 records
        let x = Array2::zeros((5, 1));
        let d = LoggedDataset::new(
            x,
            vec![0, 1, 1, 0, 1],
            vec![1.0, 0.0, 1.0, 1.0, 0.0],
            vec![0.5, 0.25, 0.8, 0.2, 0.5],
            vec![0; 5],
            2,
            1.0,
        )
        .unwrap();
        let pe = array![[0.5, 0.5], [0.1, 0.9], [0.6, 0.4], [0.3, 0.7], [1.0, 0.0]];
        (d, pe)
    }

    #[test]
    fn transforms_by_hand() {
        let w = [0.0, 0.5, 2.0, 4.0];
        assert_eq!(
            WeightTransform::Clip(1.0).apply(&w).unwrap(),
            vec![0.0, 0.5, 1.0, 1.0]
        );
        assert_eq!(
            WeightTransform::Switch(2.0).apply(&w).unwrap(),
            vec![0.0, 0.5, 2.0, 0.0]
        );
        let sn = WeightTransform::SelfNormalize.apply(&w).unwrap();
        assert!((sn.iter().sum::<f64>() / 4.0 - 1.0).abs() < 1e-15);
        let os = WeightTransform::OptimisticShrinkage(4.0).apply(&w).unwrap();
        assert_eq!(os, vec![0.0, 2.0 / 4.25, 1.0, 0.8]);
        let sg = WeightTransform::Subgaussian { lambda: 0.5, s: -1.0 }
            .apply(&w)
            .unwrap();
        // ((0.5/w) + 0.5)^-1
        assert_eq!(sg, vec![0.0, 1.0 / 1.5, 1.0 / 0.75, 1.0 / 0.625]);
        let generic = WeightTransform::Subgaussian {
            lambda: 0.5,
            s: -0.999_999_999,
        }
        .apply(&w)
        .unwrap();
        for (a, b) in sg.iter().zip(&generic) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(WeightTransform::Subgaussian { lambda: 1.5, s: -1.0 }
            .apply(&w)
            .is_err());
        assert!(WeightTransform::Clip(-1.0).apply(&w).is_err());
        assert!(matches!(
            WeightTransform::SelfNormalize.apply(&[0.0, 0.0]),
            Err(Error::DivisionByZero(_))
        ));
    }

    #[test]
    fn ips_toy_hand_sum() {
        let (d, pe) = toy();
        let input = OpeInput::new(&d, pe.view()).unwrap();
        // w = (0.5/0.5, 0.9/0.25, 0.4/0.8, 0.3/0.2, 0/0.5) = (1, 3.6, 0.5, 1.5, 0)
        for (w, e) in input.weights().iter().zip([1.0, 3.6, 0.5, 1.5, 0.0]) {
            assert!((w - e).abs() < 1e-15);
        }
        let expected = (1.0 + 0.0 + 0.5 + 1.5 + 0.0) / 5.0;
        assert!((estimate_ips(&input, WeightTransform::Identity).unwrap() - expected).abs() < 1e-15);
        let clipped = (1.0 + 0.0 + 0.5 + 1.2 + 0.0) / 5.0;
        assert!((estimate_ips(&input, WeightTransform::Clip(1.2)).unwrap() - clipped).abs() < 1e-15);
    }

    #[test]
    fn dm_and_dr_toy_hand_sum() {
        let (d, pe) = toy();
        let q = array![[0.2, 0.6], [0.5, 0.5], [0.1, 0.9], [0.4, 0.4], [0.3, 0.7]];
        let input = OpeInput::new(&d, pe.view()).unwrap();
        let dm_rows = [0.4, 0.5, 0.42, 0.4, 0.3];
        let dm = dm_rows.iter().sum::<f64>() / 5.0;
        assert!((estimate_dm(&input, q.view()).unwrap() - dm).abs() < 1e-15);
        // residuals r - q(x, a_i): (0.8, -0.5, 0.1, 0.6, -0.7); w = (1, 3.6, 0.5, 1.5, 0)
        let dr = (0.8 - 1.8 + 0.05 + 0.9 + 0.0) / 5.0 + dm;
        assert!((estimate_dr(&input, q.view(), WeightTransform::Identity).unwrap() - dr).abs() < 1e-15);
    }

    #[test]
    fn dm_edge_cases() {
        let (d, pe) = toy();
        let input = OpeInput::new(&d, pe.view()).unwrap();
        let c = Array2::from_elem((5, 2), 0.37);
        assert!((estimate_dm(&input, c.view()).unwrap() - 0.37).abs() < 1e-15);
        assert!(estimate_dm(&input, Array2::zeros((4, 2)).view()).is_err());
    }

    #[test]
    fn candidate_pool_shape() {
        let set = make_candidate_set();
        assert_eq!(set.len(), 21);
        for c in &set {
            assert_eq!(c.family.needs_reward_model(), c.regressor.is_some());
            if c.family == EstimatorFamily::Dm {
                assert!(c.family.transform(1.0).is_none());
            }
            if matches!(
                c.family,
                EstimatorFamily::IpsPs | EstimatorFamily::Snips | EstimatorFamily::IpsLambda
            ) {
                assert!(c.regressor.is_none());
            }
        }
        assert!(EstimatorCandidate::new(EstimatorFamily::Dm, None).is_err());
        assert!(EstimatorCandidate::new(EstimatorFamily::Snips, Some(RegressorKind::Knn)).is_err());
        assert_eq!(set[0].to_string(), "DM(logistic)");
    }

    #[test]
    fn grids_are_in_slope_order() {
        assert!(THRESHOLD_GRID.windows(2).all(|p| p[0] > p[1]));
        assert!(SUBGAUSSIAN_GRID.windows(2).all(|p| p[0] < p[1]));
    }
}
