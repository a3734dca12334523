//! Stochastic policies over a finite action set.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};

use crate::env::SyntheticEnvironment;
use crate::error::{Error, Result};

/// Smallest probability a softmax policy assigns to any action.
pub const PROBABILITY_FLOOR: f64 = 1e-300;

/// Produces a real score for every `(context, action)` pair.
pub trait ActionScorer: Send + Sync {
    fn n_actions(&self) -> usize;

    /// Scores for each row of `contexts` (`n × |A|`).
    fn scores(&self, contexts: ArrayView2<f64>) -> Array2<f64>;

    fn describe(&self) -> String;
}

impl ActionScorer for SyntheticEnvironment {
    fn n_actions(&self) -> usize {
        SyntheticEnvironment::n_actions(self)
    }

    fn scores(&self, contexts: ArrayView2<f64>) -> Array2<f64> {
        self.expected_reward_matrix(contexts)
    }

    fn describe(&self) -> String {
        "expected-reward".to_string()
    }
}

#[derive(Clone)]
pub enum Policy {
    /// `π(a|x) ∝ exp(β · score(x, a))`
    Softmax {
        beta: f64,
        scorer: Arc<dyn ActionScorer>,
    },
    /// `π(a|x) = Σ_j p(j) π_j(a|x)`
    Mixture {
        components: Vec<Policy>,
        weights: Vec<f64>,
    },
}

impl fmt::Debug for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Softmax { beta, scorer } => f
                .debug_struct("Softmax")
                .field("beta", beta)
                .field("scorer", &scorer.describe())
                .finish(),
            Policy::Mixture { components, weights } => f
                .debug_struct("Mixture")
                .field("components", components)
                .field("weights", weights)
                .finish(),
        }
    }
}

/// Softmax over the environment's expected rewards with inverse temperature `beta`.
pub fn softmax_policy(env: &SyntheticEnvironment, beta: f64) -> Result<Policy> {
    Policy::softmax(beta, Arc::new(env.clone()))
}

/// Row-wise `softmax(beta * scores)` in place, with every entry floored at
/// [`PROBABILITY_FLOOR`] so the policy keeps full support.
pub fn softmax_rows(scores: &mut Array2<f64>, beta: f64) {
    for mut row in scores.rows_mut() {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(beta * s));
        let mut total = 0.0;
        for s in row.iter_mut() {
            *s = (beta * *s - max).exp();
            total += *s;
        }
        let mut floored = 0.0;
        for s in row.iter_mut() {
            *s = (*s / total).max(PROBABILITY_FLOOR);
            floored += *s;
        }
        row.mapv_inplace(|p| p / floored);
    }
}

impl Policy {
    pub fn softmax(beta: f64, scorer: Arc<dyn ActionScorer>) -> Result<Self> {
        if !beta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "inverse temperature must be finite, got {beta}"
            )));
        }
        Ok(Policy::Softmax { beta, scorer })
    }

    pub fn mixture(components: Vec<Policy>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::EmptyRequest("mixture needs at least one component"));
        }
        if components.len() != weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} components but {} mixture weights",
                components.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(
                "mixture weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        let n_actions = components[0].n_actions();
        if components.iter().any(|c| c.n_actions() != n_actions) {
            return Err(Error::ShapeMismatch(
                "mixture components disagree on action count".into(),
            ));
        }
        Ok(Policy::Mixture { components, weights })
    }

    pub fn n_actions(&self) -> usize {
        match self {
            Policy::Softmax { scorer, .. } => scorer.n_actions(),
            Policy::Mixture { components, .. } => components[0].n_actions(),
        }
    }

    /// `π(a | x_i)` for each row of `contexts` (`n × |A|`).
    pub fn probabilities(&self, contexts: ArrayView2<f64>) -> Array2<f64> {
        match self {
            Policy::Softmax { beta, scorer } => {
                let mut scores = scorer.scores(contexts);
                softmax_rows(&mut scores, *beta);
                scores
            }
            Policy::Mixture { components, weights } => {
                let mut out = Array2::zeros((contexts.nrows(), self.n_actions()));
                for (c, &w) in components.iter().zip(weights) {
                    if w > 0.0 {
                        out.scaled_add(w, &c.probabilities(contexts));
                    }
                }
                out
            }
        }
    }

    /// Mixture components and weights; a non-mixture policy is its own single component.
    pub fn components(&self) -> (Vec<&Policy>, Vec<f64>) {
        match self {
            Policy::Mixture { components, weights } => (components.iter().collect(), weights.clone()),
            other => (vec![other], vec![1.0]),
        }
    }
}

/// Checks row sums and positivity of a probability matrix.
pub fn check_distribution(probs: ArrayView2<f64>, tol: f64) -> bool {
    probs
        .axis_iter(Axis(0))
        .all(|row| (row.sum() - 1.0).abs() <= tol && row.iter().all(|&p| p > 0.0))
}
