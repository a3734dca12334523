//! Estimator selection for off-policy evaluation in contextual bandits.
//!
//! Given logged bandit data and an evaluation policy, a pool of 21 candidate
//! estimators (DM, IPS and DR variants) is scored by an estimate of each
//! one's mean squared error, and the lowest is selected. Two MSE estimators
//! are provided:
//!
//! * [`pasif`]: trains a subsampling rule so that splitting the logged data
//!   yields a pseudo evaluation/behavior pair whose importance ratios imitate
//!   those of the real task, then scores candidates on that pair.
//! * [`baseline`]: uses one of the logged data-collection policies as the
//!   pseudo evaluation policy.
//!
//! [`selection`] turns MSE estimates into estimator and policy choices and
//! provides the ground-truth oracle and metrics. The synthetic environment,
//! policies and logged data live in [`env`], [`policy`] and [`data`].

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod data;
pub mod env;
pub mod error;
pub mod estimators;
pub mod gradcheck;
pub mod learners;
pub mod nn;
pub mod pasif;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod selection;
pub mod slope;

pub use baseline::{estimate_mse_nonadaptive, HeuristicConfig, PseudoEvalMode};
pub use data::{sample_logged_data, true_policy_value, true_policy_values, LoggedDataset};
pub use env::SyntheticEnvironment;
pub use error::{Error, Result};
pub use estimators::{
    make_candidate_set, EstimationConfig, EstimatorCandidate, EstimatorFamily, OpeInput, WeightTransform,
};
pub use learners::{build_ops_candidates, CandidatePolicy, ClassifierConfig};
pub use pasif::{estimate_mse_pasif, GradientMode, PasifConfig, SubsamplingRule};
pub use policy::{softmax_policy, Policy};
pub use reward::{RegressorConfig, RegressorKind};
pub use selection::{
    ground_truth, ops_select, relative_regret_e, relative_regret_p, select_estimator, spearman, GroundTruth,
    Method, SelectionSettings,
};
pub use slope::{slope_select, TuningProblem};
