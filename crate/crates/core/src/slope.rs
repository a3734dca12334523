//! SLOPE: Lepski-style hyperparameter selection within one estimator family.
//!
//! Candidates are ordered so that bias is non-decreasing and the confidence
//! width non-increasing in the index. The selected index is the last one of
//! the longest prefix in which every candidate stays inside the envelope
//! `|V̂_m − V̂_m'| ≤ CNF_m + (√6 − 1) CNF_m'` of all its predecessors.

use crate::error::{Error, Result};

/// Width of one estimate's high-probability deviation bound (empirical Bernstein).
///
/// `sqrt(2 Var ln(3/δ) / n) + 3 R ln(3/δ) / n`, with `Var` the unbiased
/// sample variance of the per-record contributions and `R` their largest
/// magnitude.
pub fn cnf_width(contributions: &[f64], delta: f64) -> Result<f64> {
    let n = contributions.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level δ must be in (0, 1), got {delta}"
        )));
    }
    let nf = n as f64;
    let mean = contributions.iter().sum::<f64>() / nf;
    let var = contributions.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let range = contributions.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let log_term = (3.0 / delta).ln();
    Ok((2.0 * var * log_term / nf).sqrt() + 3.0 * range * log_term / nf)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningProblem {
    estimates: Vec<f64>,
    widths: Vec<f64>,
}

impl TuningProblem {
    pub fn new(estimates: Vec<f64>, widths: Vec<f64>) -> Result<Self> {
        if estimates.is_empty() {
            return Err(Error::EmptyRequest("tuning problem with no candidates"));
        }
        if estimates.len() != widths.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} estimates but {} widths",
                estimates.len(),
                widths.len()
            )));
        }
        if widths.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidArgument(
                "confidence widths must be nonnegative".into(),
            ));
        }
        Ok(Self { estimates, widths })
    }

    pub fn estimates(&self) -> &[f64] {
        &self.estimates
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    /// Whether the widths are non-increasing in the index.
    pub fn is_monotone(&self) -> bool {
        self.widths.windows(2).all(|p| p[0] >= p[1])
    }
}

const ENVELOPE: f64 = 2.449_489_742_783_178 - 1.0; // √6 − 1

/// Zero-based index chosen by SLOPE. Index 0 is always feasible.
pub fn slope_select(problem: &TuningProblem) -> usize {
    let (v, c) = (&problem.estimates, &problem.widths);
    let mut chosen = 0;
    for m in 1..v.len() {
        let inside = (0..m).all(|p| (v[m] - v[p]).abs() <= c[m] + ENVELOPE * c[p]);
        if !inside {
            break;
        }
        chosen = m;
    }
    chosen
}
