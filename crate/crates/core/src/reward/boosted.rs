use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostedConfig {
    pub rounds: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
}

impl Default for BoostedConfig {
    fn default() -> Self {
        Self {
            rounds: 40,
            learning_rate: 0.1,
            min_leaf: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Split {
    /// `x[feature] <= threshold` goes left
    Feature { feature: usize, threshold: f64 },
    /// `a == action` goes left
    Action(usize),
}

impl Split {
    fn goes_left(&self, x: ArrayView1<f64>, a: usize) -> bool {
        match *self {
            Split::Feature { feature, threshold } => x[feature] <= threshold,
            Split::Action(c) => a == c,
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf(f64),
    Split {
        split: Split,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    fn predict(&self, x: ArrayView1<f64>, a: usize) -> f64 {
        match self {
            Node::Leaf(v) => *v,
            Node::Split { split, left, right } => {
                if split.goes_left(x, a) {
                    left.predict(x, a)
                } else {
                    right.predict(x, a)
                }
            }
        }
    }
}

/// Squared-loss gradient boosting with depth-2 trees.
#[derive(Debug, Clone)]
pub struct BoostedModel {
    base: f64,
    learning_rate: f64,
    trees: Vec<Node>,
    n_actions: usize,
}

struct Grower<'a> {
    contexts: ArrayView2<'a, f64>,
    actions: &'a [usize],
    n_actions: usize,
    /// training rows sorted by each feature
    sorted: Vec<Vec<usize>>,
    min_leaf: usize,
}

impl Grower<'_> {
    fn best_split(&self, members: &[bool], residual: &[f64]) -> Option<(Split, f64)> {
        let (count, total) = members
            .iter()
            .zip(residual)
            .filter(|(m, _)| **m)
            .fold((0usize, 0.0), |(c, s), (_, r)| (c + 1, s + r));
        if count < 2 * self.min_leaf {
            return None;
        }
        let parent = total * total / count as f64;
        let mut best: Option<(Split, f64)> = None;
        let mut consider = |split: Split, left_n: usize, left_sum: f64| {
            let right_n = count - left_n;
            if left_n < self.min_leaf || right_n < self.min_leaf {
                return;
            }
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / left_n as f64 + right_sum * right_sum / right_n as f64 - parent;
            if gain > 1e-12 && best.is_none_or(|(_, g)| gain > g) {
                best = Some((split, gain));
            }
        };

        for (feature, order) in self.sorted.iter().enumerate() {
            let mut left_sum = 0.0;
            let mut prev: Option<usize> = None;
            for (left_n, &i) in order.iter().filter(|&&i| members[i]).enumerate() {
                if let Some(p) = prev {
                    let (xp, xi) = (self.contexts[[p, feature]], self.contexts[[i, feature]]);
                    if xi > xp {
                        consider(
                            Split::Feature {
                                feature,
                                threshold: 0.5 * (xp + xi),
                            },
                            left_n,
                            left_sum,
                        );
                    }
                }
                left_sum += residual[i];
                prev = Some(i);
            }
        }

        let mut action_n = vec![0usize; self.n_actions];
        let mut action_sum = vec![0.0; self.n_actions];
        for (i, &a) in self.actions.iter().enumerate() {
            if members[i] {
                action_n[a] += 1;
                action_sum[a] += residual[i];
            }
        }
        for c in 0..self.n_actions {
            consider(Split::Action(c), action_n[c], action_sum[c]);
        }
        best
    }

    fn leaf(&self, members: &[bool], residual: &[f64]) -> Node {
        let (c, s) = members
            .iter()
            .zip(residual)
            .filter(|(m, _)| **m)
            .fold((0usize, 0.0), |(c, s), (_, r)| (c + 1, s + r));
        Node::Leaf(if c == 0 { 0.0 } else { s / c as f64 })
    }

    fn grow(&self, members: &[bool], residual: &[f64], depth: usize) -> Node {
        if depth == 0 {
            return self.leaf(members, residual);
        }
        match self.best_split(members, residual) {
            None => self.leaf(members, residual),
            Some((split, _)) => {
                let mut left = members.to_vec();
                let mut right = members.to_vec();
                for i in 0..members.len() {
                    if members[i] {
                        let goes_left = split.goes_left(self.contexts.row(i), self.actions[i]);
                        left[i] = goes_left;
                        right[i] = !goes_left;
                    }
                }
                Node::Split {
                    split,
                    left: Box::new(self.grow(&left, residual, depth - 1)),
                    right: Box::new(self.grow(&right, residual, depth - 1)),
                }
            }
        }
    }
}

impl BoostedModel {
    pub fn fit(
        contexts: ArrayView2<f64>,
        actions: &[usize],
        targets: &[f64],
        n_actions: usize,
        config: &BoostedConfig,
    ) -> Self {
        let (n, d) = contexts.dim();
        let base = targets.iter().sum::<f64>() / n as f64;
        let sorted = (0..d)
            .map(|j| {
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&p, &q| contexts[[p, j]].total_cmp(&contexts[[q, j]]).then(p.cmp(&q)));
                order
            })
            .collect();
        let grower = Grower {
            contexts,
            actions,
            n_actions,
            sorted,
            min_leaf: config.min_leaf.max(1),
        };
        let members = vec![true; n];
        let mut fitted = vec![base; n];
        let mut residual = vec![0.0; n];
        let mut trees = Vec::with_capacity(config.rounds);
        for _ in 0..config.rounds {
            for i in 0..n {
                residual[i] = targets[i] - fitted[i];
            }
            let tree = grower.grow(&members, &residual, 2);
            for i in 0..n {
                fitted[i] += config.learning_rate * tree.predict(contexts.row(i), actions[i]);
            }
            trees.push(tree);
        }
        Self {
            base,
            learning_rate: config.learning_rate,
            trees,
            n_actions,
        }
    }

    pub fn predict_matrix(&self, contexts: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::from_elem((contexts.nrows(), self.n_actions), self.base);
        for (i, x) in contexts.rows().into_iter().enumerate() {
            for a in 0..self.n_actions {
                let boost: f64 = self.trees.iter().map(|t| t.predict(x, a)).sum();
                out[[i, a]] += self.learning_rate * boost;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn learns_threshold_and_action_effects() {
        let n = 200;
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64 / n as f64);
        let actions: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let targets: Vec<f64> = (0..n)
            .map(|i| {
                if x[[i, 0]] > 0.5 && actions[i] == 1 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let cfg = BoostedConfig {
            rounds: 100,
            learning_rate: 0.3,
            min_leaf: 5,
        };
        let m = BoostedModel::fit(x.view(), &actions, &targets, 2, &cfg);
        let p = m.predict_matrix(ndarray::array![[0.9], [0.1]].view());
        assert!(p[[0, 1]] > 0.9, "{p:?}");
        assert!(p[[0, 0]] < 0.1 && p[[1, 1]] < 0.1 && p[[1, 0]] < 0.1, "{p:?}");
    }
}
