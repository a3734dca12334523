//! Feed-forward network `ρ_θ(x, a) = sigmoid(f_θ(x, one-hot(a)))` and Adam.
//!
//! `f_θ` has three dense layers (input → hidden → hidden → 1) with ReLU
//! between them. Training is full batch: every step runs [`forward`] on the
//! whole batch, [`backward`] with the caller's `∂L/∂ρ`, then [`adam_step`].

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::sigmoid;
use crate::error::{Error, Result};
use crate::rng::{rng, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_in × fan_out`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Parameters of the three-layer network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: [Layer; 3],
    generation: u64,
}

impl MlpParams {
    /// He-scaled normal weights, zero biases.
    pub fn new(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut g = rng(seed, stream::INIT);
        let mut layer = |fan_in: usize, fan_out: usize| -> Layer {
            let scale = (2.0 / fan_in as f64).sqrt();
            Layer {
                weights: Array2::from_shape_fn((fan_in, fan_out), |_| {
                    scale * Distribution::<f64>::sample(&StandardNormal, &mut g)
                }),
                bias: Array1::zeros(fan_out),
            }
        };
        let layers = [layer(input_dim, hidden), layer(hidden, hidden), layer(hidden, 1)];
        Self {
            layers,
            generation: 0,
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        let layer = |i: usize, o: usize| Layer {
            weights: Array2::zeros((i, o)),
            bias: Array1::zeros(o),
        };
        Self {
            layers: [layer(input_dim, hidden), layer(hidden, hidden), layer(hidden, 1)],
            generation: 0,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.hidden())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    /// Incremented whenever the parameters change through this type's API.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied().collect::<Vec<_>>())
            .collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.n_params() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} parameters",
                values.len(),
                self.n_params()
            )));
        }
        let mut it = values.iter();
        for l in &mut self.layers {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v = *it.next().expect("length checked");
            }
        }
        self.generation += 1;
        Ok(())
    }

    fn shapes_match(&self, other: &MlpParams) -> bool {
        self.layers
            .iter()
            .zip(&other.layers)
            .all(|(a, b)| a.weights.dim() == b.weights.dim() && a.bias.len() == b.bias.len())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

/// `[x, one-hot(a)]` rows for the given `(context, action)` pairs.
pub fn encode_inputs(contexts: ArrayView2<f64>, actions: &[usize], n_actions: usize) -> Array2<f64> {
    let d = contexts.ncols();
    let mut out = Array2::zeros((actions.len(), d + n_actions));
    for (i, &a) in actions.iter().enumerate() {
        out.row_mut(i).slice_mut(s![..d]).assign(&contexts.row(i));
        out[[i, d + a]] = 1.0;
    }
    out
}

/// `[x_i, one-hot(a)]` for every context and every action; row `i·|A| + a`.
pub fn encode_all_actions(contexts: ArrayView2<f64>, n_actions: usize) -> Array2<f64> {
    let (n, d) = contexts.dim();
    let mut out = Array2::zeros((n * n_actions, d + n_actions));
    for i in 0..n {
        for a in 0..n_actions {
            let mut row = out.row_mut(i * n_actions + a);
            row.slice_mut(s![..d]).assign(&contexts.row(i));
            row[d + a] = 1.0;
        }
    }
    out
}

#[derive(Debug, Clone)]
enum CachedInput {
    Rows(Array2<f64>),
    /// Contexts expanded to every action: row `i·|A| + a` is `[x_i, one-hot(a)]`.
    AllActions {
        contexts: Array2<f64>,
        n_actions: usize,
    },
}

/// Activations kept by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    input: CachedInput,
    act1: Array2<f64>,
    act2: Array2<f64>,
    rho: Array1<f64>,
}

impl ForwardCache {
    pub fn rho(&self) -> ArrayView1<'_, f64> {
        self.rho.view()
    }
}

fn dense(input: ArrayView2<f64>, layer: &Layer) -> Array2<f64> {
    let mut out = input.dot(&layer.weights);
    out += &layer.bias.view().insert_axis(Axis(0));
    out
}

fn relu_in_place(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

fn check_width(params: &MlpParams, width: usize) -> Result<()> {
    if width != params.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "inputs have {width} columns, network expects {}",
            params.input_dim()
        )));
    }
    Ok(())
}

fn finish_forward(
    params: &MlpParams,
    input: CachedInput,
    mut act1: Array2<f64>,
) -> (Array1<f64>, ForwardCache) {
    relu_in_place(&mut act1);
    let mut act2 = dense(act1.view(), &params.layers[1]);
    relu_in_place(&mut act2);
    let out = dense(act2.view(), &params.layers[2]);
    let rho = out.column(0).mapv(sigmoid);
    let cache = ForwardCache {
        generation: params.generation,
        input,
        act1,
        act2,
        rho: rho.clone(),
    };
    (rho, cache)
}

/// `ρ = sigmoid(f_θ(input))` for every row of `inputs`.
pub fn forward(params: &MlpParams, inputs: ArrayView2<f64>) -> Result<(Array1<f64>, ForwardCache)> {
    check_width(params, inputs.ncols())?;
    let pre1 = dense(inputs, &params.layers[0]);
    Ok(finish_forward(params, CachedInput::Rows(inputs.to_owned()), pre1))
}

/// Same as `forward(params, encode_all_actions(contexts, n_actions))`, without
/// materializing the one-hot block.
pub fn forward_all_actions(
    params: &MlpParams,
    contexts: ArrayView2<f64>,
    n_actions: usize,
) -> Result<(Array1<f64>, ForwardCache)> {
    let (n, d) = contexts.dim();
    check_width(params, d + n_actions)?;
    let w = &params.layers[0].weights;
    let hidden = params.hidden();
    let context_part = contexts.dot(&w.slice(s![..d, ..]));
    let action_part = &w.slice(s![d.., ..]) + &params.layers[0].bias.view().insert_axis(Axis(0));
    let mut pre1 = Array2::zeros((n * n_actions, hidden));
    for i in 0..n {
        let mut block = pre1.slice_mut(s![i * n_actions..(i + 1) * n_actions, ..]);
        block.assign(&action_part);
        block += &context_part.row(i).insert_axis(Axis(0));
    }
    Ok(finish_forward(
        params,
        CachedInput::AllActions {
            contexts: contexts.to_owned(),
            n_actions,
        },
        pre1,
    ))
}

/// `y += alpha · x`
fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y += alpha * x;
    }
}

/// Gradient of `Σ_b L(ρ_b)` with respect to every parameter, given `∂L/∂ρ_b`.
pub fn backward(params: &MlpParams, cache: &ForwardCache, upstream: &[f64]) -> Result<MlpParams> {
    if cache.generation != params.generation {
        return Err(Error::StaleCache {
            cached: cache.generation,
            current: params.generation,
        });
    }
    if upstream.len() != cache.rho.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} upstream gradients for a batch of {}",
            upstream.len(),
            cache.rho.len()
        )));
    }
    let d_out: Array1<f64> = cache
        .rho
        .iter()
        .zip(upstream)
        .map(|(&r, &u)| u * r * (1.0 - r))
        .collect();

    let mut grad = params.zeros_like();
    grad.generation = params.generation;
    let (h1, h2) = (params.layers[1].weights.nrows(), params.layers[1].weights.ncols());
    let fan_in = params.input_dim();
    let w2t = params.layers[1].weights.t().as_standard_layout().into_owned();
    let w2t = w2t.as_slice().expect("standard layout");
    let w3 = params.layers[2].weights.column(0).to_vec();
    let act1 = cache.act1.as_standard_layout();
    let act2 = cache.act2.as_standard_layout();
    let act1 = act1.as_slice().expect("standard layout");
    let act2 = act2.as_slice().expect("standard layout");
    let (n_contexts, dim) = match &cache.input {
        CachedInput::Rows(_) => (0, 0),
        CachedInput::AllActions { contexts, .. } => contexts.dim(),
    };

    // One pass over the batch. ReLU units with zero activation pass no
    // gradient, and rows with zero upstream gradient are skipped.
    let mut g_w3 = vec![0.0; h2];
    let mut g_w2 = vec![0.0; h1 * h2];
    let mut g_b2 = vec![0.0; h2];
    let mut g_w0 = vec![0.0; fan_in * h1];
    let mut g_b1 = vec![0.0; h1];
    let mut per_context = vec![0.0; n_contexts * h1];
    let mut d_pre2 = vec![0.0; h2];
    let mut d_pre1 = vec![0.0; h1];
    for (r, &d) in d_out.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let a1 = &act1[r * h1..(r + 1) * h1];
        let a2 = &act2[r * h2..(r + 1) * h2];
        for ((((g, dp), b), &a), &w) in g_w3.iter_mut().zip(&mut d_pre2).zip(&mut g_b2).zip(a2).zip(&w3) {
            *g += a * d;
            *dp = if a > 0.0 { d * w } else { 0.0 };
            *b += *dp;
        }
        d_pre1.fill(0.0);
        for (col, &dp) in w2t.chunks_exact(h1).zip(&d_pre2) {
            if dp != 0.0 {
                axpy(&mut d_pre1, dp, col);
            }
        }
        for ((g_row, dp1), &a) in g_w2.chunks_exact_mut(h2).zip(&mut d_pre1).zip(a1) {
            if a > 0.0 {
                axpy(g_row, a, &d_pre2);
            } else {
                *dp1 = 0.0;
            }
        }
        axpy(&mut g_b1, 1.0, &d_pre1);
        match &cache.input {
            CachedInput::Rows(input) => {
                for (g_row, &x) in g_w0.chunks_exact_mut(h1).zip(input.row(r)) {
                    if x != 0.0 {
                        axpy(g_row, x, &d_pre1);
                    }
                }
            }
            CachedInput::AllActions { n_actions, .. } => {
                let (c, a) = (r / n_actions, r % n_actions);
                axpy(&mut g_w0[(dim + a) * h1..(dim + a + 1) * h1], 1.0, &d_pre1);
                axpy(&mut per_context[c * h1..(c + 1) * h1], 1.0, &d_pre1);
            }
        }
    }

    grad.layers[2].weights.column_mut(0).assign(&Array1::from(g_w3));
    grad.layers[2].bias[0] = d_out.sum();
    grad.layers[1].weights = Array2::from_shape_vec((h1, h2), g_w2).expect("h1 × h2");
    grad.layers[1].bias = Array1::from(g_b2);
    grad.layers[0].weights = Array2::from_shape_vec((fan_in, h1), g_w0).expect("fan_in × h1");
    grad.layers[0].bias = Array1::from(g_b1);
    if let CachedInput::AllActions { contexts, .. } = &cache.input {
        let per_context = Array2::from_shape_vec((n_contexts, h1), per_context).expect("n × h1");
        grad.layers[0]
            .weights
            .slice_mut(s![..dim, ..])
            .assign(&contexts.t().dot(&per_context));
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    first: MlpParams,
    second: MlpParams,
    step: u64,
}

impl AdamState {
    pub fn new(params: &MlpParams, config: AdamConfig) -> Self {
        Self {
            config,
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. Rejects non-finite gradients.
pub fn adam_step(params: &mut MlpParams, state: &mut AdamState, grad: &MlpParams) -> Result<()> {
    if !params.shapes_match(grad) || !params.shapes_match(&state.first) {
        return Err(Error::ShapeMismatch(
            "gradient/state shapes differ from parameters".into(),
        ));
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite("gradient passed to Adam".into()));
    }
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for ((p, g), (m, v)) in params
        .layers
        .iter_mut()
        .zip(&grad.layers)
        .zip(state.first.layers.iter_mut().zip(state.second.layers.iter_mut()))
    {
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + epsilon);
        };
        Zip::from(&mut p.weights)
            .and(&g.weights)
            .and(&mut m.weights)
            .and(&mut v.weights)
            .for_each(|p, &g, m, v| update(p, g, m, v));
        Zip::from(&mut p.bias)
            .and(&g.bias)
            .and(&mut m.bias)
            .and(&mut v.bias)
            .for_each(|p, &g, m, v| update(p, g, m, v));
    }
    params.generation += 1;
    Ok(())
}
