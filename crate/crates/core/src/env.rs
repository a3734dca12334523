//! Synthetic contextual-bandit environment.
//!
//! Contexts are i.i.d. standard normal vectors. The expected reward is
//! `q(x, a) = sigmoid(x · θ_a + b_a)` where every `θ_a` entry and `b_a` are
//! drawn once from `N(0, 1) / sqrt(d)` using the environment seed. Rewards are
//! Bernoulli draws with mean `q(x, a)`, so `r_max = 1`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{rng, stream};

pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[derive(Debug, Clone)]
pub struct SyntheticEnvironment {
    seed: u64,
    dim: usize,
    n_actions: usize,
    /// `n_actions × dim`
    weights: Array2<f64>,
    bias: Array1<f64>,
}

impl SyntheticEnvironment {
    pub fn new(dim: usize, n_actions: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "context dimension must be positive".into(),
            ));
        }
        if n_actions < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 actions, got {n_actions}"
            )));
        }
        let mut g = rng(seed, stream::ENV_PARAMS);
        let scale = 1.0 / (dim as f64).sqrt();
        let weights = Array2::from_shape_fn((n_actions, dim), |_| {
            scale * Distribution::<f64>::sample(&StandardNormal, &mut g)
        });
        let bias = Array1::from_shape_fn(n_actions, |_| {
            scale * Distribution::<f64>::sample(&StandardNormal, &mut g)
        });
        Ok(Self {
            seed,
            dim,
            n_actions,
            weights,
            bias,
        })
    }

    /// Environment with explicit reward parameters (`weights` is `n_actions × dim`).
    pub fn from_parameters(weights: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        let (n_actions, dim) = weights.dim();
        if bias.len() != n_actions {
            return Err(Error::ShapeMismatch(format!(
                "bias has {} entries for {n_actions} actions",
                bias.len()
            )));
        }
        if n_actions < 2 || dim == 0 {
            return Err(Error::InvalidArgument("need ≥ 2 actions and ≥ 1 feature".into()));
        }
        Ok(Self {
            seed: 0,
            dim,
            n_actions,
            weights,
            bias,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn r_max(&self) -> f64 {
        1.0
    }

    /// `n` i.i.d. standard-normal contexts as an `n × d` matrix.
    pub fn sample_contexts(&self, n: usize, seed: u64) -> Result<Array2<f64>> {
        if n == 0 {
            return Err(Error::EmptyRequest("sample_contexts called with n = 0"));
        }
        let mut g = rng(seed, stream::CONTEXTS);
        Ok(Array2::from_shape_fn((n, self.dim), |_| {
            StandardNormal.sample(&mut g)
        }))
    }

    pub fn expected_reward(&self, x: ArrayView1<f64>, action: usize) -> Result<f64> {
        if action >= self.n_actions {
            return Err(Error::ActionOutOfRange {
                action,
                n_actions: self.n_actions,
            });
        }
        if x.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "context has dimension {}, environment expects {}",
                x.len(),
                self.dim
            )));
        }
        Ok(sigmoid(x.dot(&self.weights.row(action)) + self.bias[action]))
    }

    /// `q(x_i, a)` for every row of `contexts` and every action (`n × |A|`).
    pub fn expected_reward_matrix(&self, contexts: ArrayView2<f64>) -> Array2<f64> {
        let mut logits = contexts.dot(&self.weights.t());
        logits += &self.bias.view().insert_axis(Axis(0));
        logits.mapv_inplace(sigmoid);
        logits
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sigmoid_zero_and_limits() {
        let env =
            SyntheticEnvironment::from_parameters(array![[1.0, 0.0], [0.0, 0.0]], array![0.0, 0.0]).unwrap();
        assert_eq!(env.expected_reward(array![0.0, 3.0].view(), 0).unwrap(), 0.5);
        assert_eq!(env.expected_reward(array![1.0e3, 0.0].view(), 0).unwrap(), 1.0);
        assert!(env.expected_reward(array![40.0, 0.0].view(), 0).unwrap() > 1.0 - 1e-15);
    }

    #[test]
    fn reward_is_deterministic_and_in_unit_interval() {
        let env = SyntheticEnvironment::new(10, 10, 3).unwrap();
        let x = env.sample_contexts(50, 1).unwrap();
        let q = env.expected_reward_matrix(x.view());
        for i in 0..50 {
            for a in 0..10 {
                let v = env.expected_reward(x.row(i), a).unwrap();
                assert!((v - q[[i, a]]).abs() < 1e-15);
                assert!(v > 0.0 && v < 1.0);
                assert_eq!(v, env.expected_reward(x.row(i), a).unwrap());
            }
        }
    }

    #[test]
    fn action_out_of_range() {
        let env = SyntheticEnvironment::new(2, 3, 0).unwrap();
        let err = env.expected_reward(array![0.0, 0.0].view(), 3).unwrap_err();
        assert_eq!(
            err,
            Error::ActionOutOfRange {
                action: 3,
                n_actions: 3
            }
        );
    }

    #[test]
    fn context_sampling_errors_and_determinism() {
        let env = SyntheticEnvironment::new(1, 2, 0).unwrap();
        assert!(matches!(env.sample_contexts(0, 1), Err(Error::EmptyRequest(_))));
        let a = env.sample_contexts(1, 99).unwrap();
        let b = env.sample_contexts(1, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn full_scale_shape() {
        let env = SyntheticEnvironment::new(10, 10, 0).unwrap();
        let x = env.sample_contexts(2000, 5).unwrap();
        assert_eq!(x.dim(), (2000, 10));
        for m in x.mean_axis(Axis(0)).unwrap() {
            assert!(m.abs() < 4.0 / (2000f64).sqrt());
        }
    }

    #[test]
    fn empirical_covariance_is_identity() {
        let env = SyntheticEnvironment::new(2, 2, 0).unwrap();
        let x = env.sample_contexts(100_000, 11).unwrap();
        let n = x.nrows() as f64;
        let mean = x.mean_axis(Axis(0)).unwrap();
        let centered = &x - &mean.insert_axis(Axis(0));
        let cov = centered.t().dot(&centered) / n;
        for i in 0..2 {
            for j in 0..2 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (cov[[i, j]] - target).abs() < 0.05,
                    "cov[{i},{j}] = {}",
                    cov[[i, j]]
                );
            }
        }
    }
}
