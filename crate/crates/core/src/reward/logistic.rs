use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::env::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    pub l2: f64,
    pub learning_rate: f64,
    pub iterations: usize,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            learning_rate: 0.5,
            iterations: 300,
        }
    }
}

/// Logistic regression on `(x, one-hot(a), x ⊗ one-hot(a))`.
///
/// The feature vector is sparse: the shared block `x`, a single one-hot entry
/// and the action's own interaction block. Weights are stored per block.
#[derive(Debug, Clone)]
pub struct LogisticModel {
    shared: Array1<f64>,
    action_bias: Array1<f64>,
    /// `|A| × d`
    interaction: Array2<f64>,
    intercept: f64,
}

impl LogisticModel {
    fn logit(&self, x: ArrayView1<f64>, a: usize) -> f64 {
        self.intercept + self.action_bias[a] + x.dot(&self.shared) + x.dot(&self.interaction.row(a))
    }

    pub fn fit(
        contexts: ArrayView2<f64>,
        actions: &[usize],
        targets: &[f64],
        n_actions: usize,
        config: &LogisticConfig,
    ) -> Self {
        let (n, d) = contexts.dim();
        let mut model = LogisticModel {
            shared: Array1::zeros(d),
            action_bias: Array1::zeros(n_actions),
            interaction: Array2::zeros((n_actions, d)),
            intercept: 0.0,
        };
        let inv_n = 1.0 / n as f64;
        let mut g_shared = Array1::zeros(d);
        let mut g_action = Array1::zeros(n_actions);
        let mut g_inter = Array2::zeros((n_actions, d));
        for _ in 0..config.iterations {
            g_shared.fill(0.0);
            g_action.fill(0.0);
            g_inter.fill(0.0);
            let mut g_intercept = 0.0;
            for i in 0..n {
                let x = contexts.row(i);
                let a = actions[i];
                let residual = (sigmoid(model.logit(x, a)) - targets[i]) * inv_n;
                g_intercept += residual;
                g_action[a] += residual;
                g_shared.scaled_add(residual, &x);
                g_inter.row_mut(a).scaled_add(residual, &x);
            }
            let lr = config.learning_rate;
            let l2 = config.l2;
            model.intercept -= lr * g_intercept;
            model
                .action_bias
                .zip_mut_with(&g_action, |w, g| *w -= lr * (g + l2 * *w));
            model
                .shared
                .zip_mut_with(&g_shared, |w, g| *w -= lr * (g + l2 * *w));
            model
                .interaction
                .zip_mut_with(&g_inter, |w, g| *w -= lr * (g + l2 * *w));
        }
        model
    }

    pub fn predict_matrix(&self, contexts: ArrayView2<f64>) -> Array2<f64> {
        let n_actions = self.action_bias.len();
        let mut out = Array2::zeros((contexts.nrows(), n_actions));
        for (i, x) in contexts.rows().into_iter().enumerate() {
            for a in 0..n_actions {
                out[[i, a]] = sigmoid(self.logit(x, a));
            }
        }
        out
    }
}
