use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnConfig {
    pub k: usize,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self { k: 20 }
    }
}

/// Mean target of the `k` nearest (Euclidean) training contexts that took the
/// same action. Falls back to all same-action records when fewer than `k`
/// exist, and to the global mean when none do.
#[derive(Debug, Clone)]
pub struct KnnModel {
    k: usize,
    per_action: Vec<(Array2<f64>, Vec<f64>)>,
    global_mean: f64,
}

impl KnnModel {
    pub fn fit(
        contexts: ArrayView2<f64>,
        actions: &[usize],
        targets: &[f64],
        n_actions: usize,
        config: &KnnConfig,
    ) -> Self {
        let per_action = (0..n_actions)
            .map(|a| {
                let rows: Vec<usize> = (0..actions.len()).filter(|&i| actions[i] == a).collect();
                (
                    contexts.select(Axis(0), &rows),
                    rows.iter().map(|&i| targets[i]).collect(),
                )
            })
            .collect();
        let global_mean = targets.iter().sum::<f64>() / targets.len() as f64;
        Self {
            k: config.k.max(1),
            per_action,
            global_mean,
        }
    }

    pub fn predict_matrix(&self, contexts: ArrayView2<f64>) -> Array2<f64> {
        let n_actions = self.per_action.len();
        let mut out = Array2::zeros((contexts.nrows(), n_actions));
        let mut dist: Vec<(f64, f64)> = Vec::new();
        for (i, x) in contexts.rows().into_iter().enumerate() {
            for (a, (train, y)) in self.per_action.iter().enumerate() {
                if y.is_empty() {
                    out[[i, a]] = self.global_mean;
                    continue;
                }
                dist.clear();
                dist.extend(train.rows().into_iter().zip(y).map(|(t, &v)| {
                    let d2: f64 = t.iter().zip(x.iter()).map(|(p, q)| (p - q) * (p - q)).sum();
                    (d2, v)
                }));
                let k = self.k.min(dist.len());
                if k < dist.len() {
                    // total_cmp plus the target value makes ties resolve deterministically
                    dist.select_nth_unstable_by(k - 1, |p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));
                }
                out[[i, a]] = dist[..k].iter().map(|p| p.1).sum::<f64>() / k as f64;
            }
        }
        out
    }
}
