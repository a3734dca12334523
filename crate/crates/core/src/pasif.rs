//! Candidate MSE estimation by importance-fitting subsampling.
//!
//! A subsampling rule `ρ_θ(x, a) ∈ (0, 1)` routes each logged record to a
//! pseudo evaluation set with probability `ρ_θ(x_i, a_i)` and to a pseudo
//! behavior set otherwise. The two sets are then distributed as data of the
//! pseudo policies
//!
//! ```text
//! π̃_e(a|x) = π_b(a|x) ρ(x,a) / E(x),   π̃_b(a|x) = π_b(a|x) (1 − ρ(x,a)) / (1 − E(x)),
//! E(x) = Σ_a π_b(a|x) ρ(x,a)
//! ```
//!
//! with pseudo importance ratio `w̃ = ρ/(1−ρ) · (1−E)/E`. Training fits `w̃`
//! to the true ratio `w = π_e/π_b` (objective `D`) while a regularizer `R`
//! keeps the mean rate `E` near a target `k`. Candidate estimators are then
//! scored by how well they recover the on-policy mean of the pseudo
//! evaluation set from the pseudo behavior set.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LoggedDataset;
use crate::error::{Error, Result};
use crate::estimators::{estimate_candidates, EstimationConfig, EstimatorCandidate};
use crate::nn::{adam_step, backward, forward_all_actions, AdamConfig, AdamState, ForwardCache, MlpParams};
use crate::rng::{derive_seed, rng, stream};

/// Outputs of the network are clamped to `[RHO_EPSILON, 1 − RHO_EPSILON]`.
pub const RHO_EPSILON: f64 = 1e-6;

fn clamp_rho(r: f64) -> f64 {
    r.clamp(RHO_EPSILON, 1.0 - RHO_EPSILON)
}

/// A trained (or freshly initialized) rule `ρ_θ`.
#[derive(Debug, Clone)]
pub struct SubsamplingRule {
    params: MlpParams,
    n_actions: usize,
}

impl SubsamplingRule {
    pub fn new(params: MlpParams, n_actions: usize) -> Result<Self> {
        if params.input_dim() <= n_actions {
            return Err(Error::ShapeMismatch(format!(
                "network input of width {} cannot hold a context and {n_actions} action indicators",
                params.input_dim()
            )));
        }
        Ok(Self { params, n_actions })
    }

    /// Random initialization for `dim`-dimensional contexts.
    pub fn initialize(dim: usize, n_actions: usize, hidden: usize, seed: u64) -> Self {
        Self {
            params: MlpParams::new(dim + n_actions, hidden, seed),
            n_actions,
        }
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Clamped `ρ(x_i, a)` for every context and action (`n × |A|`).
    pub fn rho_matrix(&self, contexts: ArrayView2<f64>) -> Result<Array2<f64>> {
        let (rho, _) = forward_all_actions(&self.params, contexts, self.n_actions)?;
        Ok(rho
            .mapv(clamp_rho)
            .into_shape_with_order((contexts.nrows(), self.n_actions))
            .expect("n·|A| outputs"))
    }
}

/// `π̃_e`, `π̃_b` and the mean rate `E` at a batch of contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoPolicies {
    pub eval: Array2<f64>,
    pub behavior: Array2<f64>,
    pub rate: Array1<f64>,
}

/// Pseudo policies from `π_b(·|x_i)` and `ρ(x_i, ·)` (both `n × |A|`).
pub fn pseudo_policies_from(pi_b: ArrayView2<f64>, rho: ArrayView2<f64>) -> Result<PseudoPolicies> {
    if pi_b.dim() != rho.dim() {
        return Err(Error::ShapeMismatch(format!(
            "π_b is {:?} but ρ is {:?}",
            pi_b.dim(),
            rho.dim()
        )));
    }
    let rate = (&pi_b * &rho).sum_axis(Axis(1));
    if let Some(&e) = rate.iter().find(|&&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::DegenerateRate(e));
    }
    // Summed directly rather than as 1 − E, which cancels when ρ is near 1.
    let complement = (&pi_b * &rho.mapv(|r| 1.0 - r)).sum_axis(Axis(1));
    let mut eval = Array2::zeros(pi_b.dim());
    let mut behavior = Array2::zeros(pi_b.dim());
    for (i, (&e, &c)) in rate.iter().zip(&complement).enumerate() {
        for a in 0..pi_b.ncols() {
            eval[[i, a]] = pi_b[[i, a]] * rho[[i, a]] / e;
            behavior[[i, a]] = pi_b[[i, a]] * (1.0 - rho[[i, a]]) / c;
        }
    }
    Ok(PseudoPolicies { eval, behavior, rate })
}

/// [`pseudo_policies_from`] with `ρ` taken from `rule` at `contexts`.
pub fn pseudo_policies(
    rule: &SubsamplingRule,
    pi_b: ArrayView2<f64>,
    contexts: ArrayView2<f64>,
) -> Result<PseudoPolicies> {
    pseudo_policies_from(pi_b, rule.rho_matrix(contexts)?.view())
}

/// `w̃ = ρ/(1−ρ) · (1−E)/E`.
pub fn pseudo_ratio(rho: f64, rate: f64) -> f64 {
    rho / (1.0 - rho) * (1.0 - rate) / rate
}

/// How `∂D/∂ρ` treats the dependence of `E(x_i)` on `ρ(x_i, a)` for `a ≠ a_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientMode {
    /// Only `ρ(x_i, a_i)` receives gradient from record `i`.
    #[default]
    Diagonal,
    /// Also the other actions' rates at `x_i`, through `E(x_i)`.
    Full,
}

/// Objective value and `ρ`-space gradients at one parameter setting.
#[derive(Debug, Clone)]
pub struct FitEvaluation {
    /// Clamped `ρ(x_i, a)`, `n × |A|`.
    pub rho: Array2<f64>,
    pub rate: Array1<f64>,
    /// `w̃_i` at the logged actions.
    pub pseudo_weights: Vec<f64>,
    pub d: f64,
    pub r: f64,
}

impl FitEvaluation {
    pub fn mean_rate(&self) -> f64 {
        self.rate.mean().unwrap_or(f64::NAN)
    }
}

/// The importance-fitting problem on one dataset: everything `D` and `R`
/// need that does not depend on `θ`. Records may carry integer
/// multiplicities, so a bootstrap resample is held by its distinct records.
#[derive(Debug, Clone)]
pub struct ImportanceFitting {
    contexts: Array2<f64>,
    pi_b: Array2<f64>,
    actions: Vec<usize>,
    weights: Vec<f64>,
    /// multiplicity of each record divided by the total
    mass: Vec<f64>,
    target_rate: f64,
}

impl ImportanceFitting {
    /// `pi_e` and `pi_b` are `n × |A|` probabilities at the dataset's contexts.
    pub fn new(
        dataset: &LoggedDataset,
        pi_e: ArrayView2<f64>,
        pi_b: ArrayView2<f64>,
        target_rate: f64,
    ) -> Result<Self> {
        Self::with_counts(dataset, pi_e, pi_b, &vec![1; dataset.len()], target_rate)
    }

    /// Problem in which record `i` appears `counts[i]` times.
    pub fn with_counts(
        dataset: &LoggedDataset,
        pi_e: ArrayView2<f64>,
        pi_b: ArrayView2<f64>,
        counts: &[usize],
        target_rate: f64,
    ) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::EmptyRequest("importance fitting on an empty dataset"));
        }
        let shape = (dataset.len(), dataset.n_actions());
        if pi_e.dim() != shape || pi_b.dim() != shape {
            return Err(Error::ShapeMismatch(format!(
                "policies are {:?} and {:?}, dataset needs {shape:?}",
                pi_e.dim(),
                pi_b.dim()
            )));
        }
        if !(target_rate > 0.0 && target_rate < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "target rate must be in (0, 1), got {target_rate}"
            )));
        }
        let mut weights = Vec::with_capacity(dataset.len());
        for (i, &a) in dataset.actions().iter().enumerate() {
            let p = pi_b[[i, a]];
            if !(p > 0.0) {
                return Err(Error::FullSupportViolation(p));
            }
            weights.push(pi_e[[i, a]] / p);
        }
        if counts.len() != dataset.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} counts for {} records",
                counts.len(),
                dataset.len()
            )));
        }
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyRequest(
                "importance fitting with zero total multiplicity",
            ));
        }
        Ok(Self {
            contexts: dataset.contexts().to_owned(),
            pi_b: pi_b.to_owned(),
            actions: dataset.actions().to_vec(),
            weights,
            mass: counts.iter().map(|&c| c as f64 / total as f64).collect(),
            target_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn n_actions(&self) -> usize {
        self.pi_b.ncols()
    }

    /// Context dimension.
    pub fn dim(&self) -> usize {
        self.contexts.ncols()
    }

    pub fn target_rate(&self) -> f64 {
        self.target_rate
    }

    /// True importance ratios `w_i`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn pi_b(&self) -> ArrayView2<'_, f64> {
        self.pi_b.view()
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    /// `D` and `R` at a given `ρ` matrix (already clamped).
    pub fn evaluate_rho(&self, rho: Array2<f64>) -> Result<FitEvaluation> {
        if rho.dim() != self.pi_b.dim() {
            return Err(Error::ShapeMismatch(format!(
                "ρ is {:?}, expected {:?}",
                rho.dim(),
                self.pi_b.dim()
            )));
        }
        let rate = (&self.pi_b * &rho).sum_axis(Axis(1));
        let pseudo_weights: Vec<f64> = self
            .actions
            .iter()
            .enumerate()
            .map(|(i, &a)| pseudo_ratio(rho[[i, a]], rate[i]))
            .collect();
        let d = (0..self.len())
            .map(|i| self.mass[i] * (self.weights[i] - pseudo_weights[i]).powi(2))
            .sum();
        let r = (0..self.len())
            .map(|i| self.mass[i] * (rate[i] - self.target_rate).powi(2))
            .sum();
        Ok(FitEvaluation {
            rho,
            rate,
            pseudo_weights,
            d,
            r,
        })
    }

    /// `D` and `R` under `params`, plus the forward cache for back-propagation.
    pub fn evaluate(&self, params: &MlpParams) -> Result<(FitEvaluation, ForwardCache)> {
        let (raw, cache) = forward_all_actions(params, self.contexts.view(), self.n_actions())?;
        let rho = raw
            .mapv(clamp_rho)
            .into_shape_with_order(self.pi_b.dim())
            .expect("n·|A| outputs");
        Ok((self.evaluate_rho(rho)?, cache))
    }

    /// `∂D/∂ρ(x_i, a)` as an `n × |A|` matrix.
    pub fn objective_rho_gradient(&self, fit: &FitEvaluation, mode: GradientMode) -> Array2<f64> {
        let mut grad = Array2::zeros(self.pi_b.dim());
        for (i, &a) in self.actions.iter().enumerate() {
            let (rho, e) = (fit.rho[[i, a]], fit.rate[i]);
            let scale = 2.0 * self.mass[i] * (fit.pseudo_weights[i] - self.weights[i]);
            let own = (1.0 - e) / (e * (1.0 - rho).powi(2))
                * (1.0 - self.pi_b[[i, a]] * rho * (1.0 - rho) / (e * (1.0 - e)));
            grad[[i, a]] = scale * own;
            if mode == GradientMode::Full {
                let cross = -rho / (1.0 - rho) / (e * e);
                for b in (0..self.n_actions()).filter(|&b| b != a) {
                    grad[[i, b]] = scale * cross * self.pi_b[[i, b]];
                }
            }
        }
        grad
    }

    /// `∂R/∂ρ(x_i, a) = (2/n)(E_i − k) π_b(a|x_i)`.
    pub fn regularizer_rho_gradient(&self, fit: &FitEvaluation) -> Array2<f64> {
        let gap: Array1<f64> = fit
            .rate
            .iter()
            .zip(&self.mass)
            .map(|(e, m)| 2.0 * m * (e - self.target_rate))
            .collect();
        &self.pi_b * &gap.insert_axis(Axis(1))
    }

    /// Back-propagates a `ρ`-space gradient to the parameters. Entries where
    /// the clamp is active carry no gradient.
    pub fn parameter_gradient(
        &self,
        params: &MlpParams,
        cache: &ForwardCache,
        rho_grad: &Array2<f64>,
    ) -> Result<MlpParams> {
        let raw = cache.rho();
        let upstream: Vec<f64> = rho_grad
            .iter()
            .zip(raw.iter())
            .map(|(&g, &r)| {
                if r > RHO_EPSILON && r < 1.0 - RHO_EPSILON {
                    g
                } else {
                    0.0
                }
            })
            .collect();
        if upstream.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("importance-fitting gradient".into()));
        }
        backward(params, cache, &upstream)
    }

    /// Value of `D + λR` and its gradient with respect to `params`.
    pub fn loss_and_gradient(
        &self,
        params: &MlpParams,
        lambda_reg: f64,
        mode: GradientMode,
    ) -> Result<(FitEvaluation, MlpParams)> {
        let (fit, cache) = self.evaluate(params)?;
        let mut g = self.objective_rho_gradient(&fit, mode);
        g.scaled_add(lambda_reg, &self.regularizer_rho_gradient(&fit));
        let grad = self.parameter_gradient(params, &cache, &g)?;
        Ok((fit, grad))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PasifConfig {
    /// Target partition rate `k`.
    pub target_rate: f64,
    pub learning_rate: f64,
    pub lambda_grid: Vec<f64>,
    /// Adam steps per regularization value.
    pub steps: usize,
    /// Width of both hidden layers.
    pub hidden: usize,
    /// Bootstrap seeds `S`.
    pub seeds: Vec<u64>,
    /// Accepted range of the trained mean rate.
    pub band: (f64, f64),
    pub gradient_mode: GradientMode,
    /// Retrain the rule for every (candidate, seed) pair instead of once per seed.
    pub strict: bool,
    /// Train one rule on the full logged data and reuse it for every seed.
    pub share_rule: bool,
    /// Redraws allowed when a subsample leaves one side empty.
    pub max_redraws: usize,
}

impl Default for PasifConfig {
    fn default() -> Self {
        Self {
            target_rate: 0.2,
            learning_rate: 1e-3,
            lambda_grid: vec![0.1, 1.0, 10.0, 100.0, 1000.0],
            steps: 5000,
            hidden: 100,
            seeds: (0..10).collect(),
            band: (0.18, 0.22),
            gradient_mode: GradientMode::Diagonal,
            strict: false,
            share_rule: false,
            max_redraws: 5,
        }
    }
}

impl PasifConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.target_rate > 0.0 && self.target_rate < 1.0) {
            return bad(format!("target_rate must be in (0, 1), got {}", self.target_rate));
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.hidden == 0 {
            return bad("hidden must be at least 1".into());
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l >= 0.0)) {
            return bad("lambda_grid must be a nonempty list of nonnegative values".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        let (lo, hi) = self.band;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return bad(format!("band must satisfy 0 < lo ≤ hi < 1, got ({lo}, {hi})"));
        }
        if self.strict && self.share_rule {
            return bad("strict and share_rule are mutually exclusive".into());
        }
        Ok(())
    }
}

/// Result of [`train_subsampler`].
#[derive(Debug, Clone)]
pub struct TrainedRule {
    pub rule: SubsamplingRule,
    pub lambda_reg: f64,
    /// Final `D` and mean rate of the chosen run.
    pub d: f64,
    pub mean_rate: f64,
    pub in_band: bool,
}

/// One run of `steps` Adam updates on `D + λR` from the initialization at `seed`.
/// Returns the final parameters and their evaluation, or an error if the loss
/// stops being finite.
pub fn fit_rule(
    problem: &ImportanceFitting,
    lambda_reg: f64,
    config: &PasifConfig,
    seed: u64,
) -> Result<(MlpParams, FitEvaluation)> {
    let mut params = MlpParams::new(problem.dim() + problem.n_actions(), config.hidden, seed);
    let mut adam = AdamState::new(
        &params,
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
    );
    for _ in 0..config.steps {
        let (fit, grad) = problem.loss_and_gradient(&params, lambda_reg, config.gradient_mode)?;
        if !(fit.d + lambda_reg * fit.r).is_finite() {
            return Err(Error::NonFinite(format!(
                "importance-fitting loss at λ_reg = {lambda_reg}"
            )));
        }
        adam_step(&mut params, &mut adam, &grad)?;
    }
    let (fit, _) = problem.evaluate(&params)?;
    if !(fit.d + lambda_reg * fit.r).is_finite() {
        return Err(Error::NonFinite(format!(
            "importance-fitting loss at λ_reg = {lambda_reg}"
        )));
    }
    Ok((params, fit))
}

/// Trains one rule per regularization value and keeps the best: among runs
/// whose mean rate lies in the band the lowest `D`, otherwise the run whose
/// mean rate is closest to the target.
pub fn train_subsampler(problem: &ImportanceFitting, config: &PasifConfig, seed: u64) -> Result<TrainedRule> {
    config.validate()?;
    let (lo, hi) = config.band;
    let mut best: Option<(bool, f64, TrainedRule)> = None;
    let mut failures = Vec::new();
    for &lambda_reg in &config.lambda_grid {
        let (params, fit) = match fit_rule(problem, lambda_reg, config, seed) {
            Ok(run) => run,
            Err(e) => {
                log::warn!("subsampling rule diverged at λ_reg = {lambda_reg}: {e}");
                failures.push(format!("λ_reg = {lambda_reg}: {e}"));
                continue;
            }
        };
        let mean_rate = fit.mean_rate();
        let in_band = (lo..=hi).contains(&mean_rate);
        log::debug!(
            "λ_reg = {lambda_reg}: D = {:.4}, mean rate = {mean_rate:.4}",
            fit.d
        );
        // lower score is better within the same band status
        let score = if in_band {
            fit.d
        } else {
            (mean_rate - config.target_rate).abs()
        };
        let better = match &best {
            None => true,
            Some((b_in, b_score, _)) => (in_band && !b_in) || (in_band == *b_in && score < *b_score),
        };
        if better {
            let rule = SubsamplingRule {
                params,
                n_actions: problem.n_actions(),
            };
            best = Some((
                in_band,
                score,
                TrainedRule {
                    rule,
                    lambda_reg,
                    d: fit.d,
                    mean_rate,
                    in_band,
                },
            ));
        }
    }
    best.map(|(_, _, t)| t)
        .ok_or_else(|| Error::TrainingFailure(failures.join("; ")))
}

/// Record indices routed to the pseudo evaluation and pseudo behavior sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub eval: Vec<usize>,
    pub behavior: Vec<usize>,
}

/// Routes record `i` to the evaluation side with probability `rates[i]`.
/// Redraws with derived seeds while a side is empty, at most `max_redraws` times.
pub fn subsample(rates: &[f64], seed: u64, max_redraws: usize) -> Result<Partition> {
    for attempt in 0..=max_redraws {
        let mut g = rng(derive_seed(seed, attempt as u64), stream::SUBSAMPLE);
        let (mut eval, mut behavior) = (Vec::new(), Vec::new());
        for (i, &p) in rates.iter().enumerate() {
            if g.random::<f64>() < p {
                eval.push(i);
            } else {
                behavior.push(i);
            }
        }
        if !eval.is_empty() && !behavior.is_empty() {
            return Ok(Partition { eval, behavior });
        }
    }
    Err(Error::DegenerateSplit(format!(
        "one side stayed empty after {max_redraws} redraws of {} records",
        rates.len()
    )))
}

/// The pseudo datasets of one subsample: the behavior side relabeled with
/// `π̃_b` propensities and paired with `π̃_e`, and the on-policy value of the
/// evaluation side.
#[derive(Debug, Clone)]
pub struct PseudoTask {
    pub behavior_data: LoggedDataset,
    /// `π̃_e(·|x_i)` for the records of `behavior_data`.
    pub eval_probs: Array2<f64>,
    pub on_policy_value: f64,
    pub partition: Partition,
}

/// Applies `rule` to `dataset` and subsamples it.
pub fn make_pseudo_task(
    rule: &SubsamplingRule,
    dataset: &LoggedDataset,
    pi_b: ArrayView2<f64>,
    seed: u64,
    max_redraws: usize,
) -> Result<PseudoTask> {
    let rho = rule.rho_matrix(dataset.contexts())?;
    let pseudo = pseudo_policies_from(pi_b, rho.view())?;
    let rates: Vec<f64> = dataset
        .actions()
        .iter()
        .enumerate()
        .map(|(i, &a)| rho[[i, a]])
        .collect();
    let partition = subsample(&rates, seed, max_redraws)?;
    let eval_side = dataset.select(&partition.eval);
    let behavior_side = dataset.select(&partition.behavior);
    let propensities: Vec<f64> = partition
        .behavior
        .iter()
        .map(|&i| pseudo.behavior[[i, dataset.actions()[i]]])
        .collect();
    Ok(PseudoTask {
        behavior_data: behavior_side.with_propensities(propensities)?,
        eval_probs: pseudo.eval.select(Axis(0), &partition.behavior),
        on_policy_value: eval_side.mean_reward(),
        partition,
    })
}

/// The fitting problem of a bootstrap resample, held by its distinct records.
fn bootstrap_problem(
    dataset: &LoggedDataset,
    pi_e: ArrayView2<f64>,
    pi_b: ArrayView2<f64>,
    idx: &[usize],
    target_rate: f64,
) -> Result<ImportanceFitting> {
    let mut counts = vec![0usize; dataset.len()];
    for &i in idx {
        counts[i] += 1;
    }
    let distinct: Vec<usize> = (0..dataset.len()).filter(|&i| counts[i] > 0).collect();
    let kept: Vec<usize> = distinct.iter().map(|&i| counts[i]).collect();
    ImportanceFitting::with_counts(
        &dataset.select(&distinct),
        pi_e.select(Axis(0), &distinct).view(),
        pi_b.select(Axis(0), &distinct).view(),
        &kept,
        target_rate,
    )
}

/// Per-seed diagnostics of an MSE estimation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedDiagnostics {
    pub seed: u64,
    pub lambda_reg: f64,
    pub d: f64,
    pub mean_rate: f64,
    pub in_band: bool,
    pub eval_size: usize,
}

#[derive(Debug, Clone)]
pub struct PasifEstimate {
    /// Estimated MSE of every candidate.
    pub mse: Vec<f64>,
    pub diagnostics: Vec<SeedDiagnostics>,
}

/// Estimated MSE of every candidate for evaluating `pi_e` from `dataset`.
///
/// For each bootstrap seed `s`: resample the data, train a rule, subsample,
/// estimate the pseudo evaluation policy's value from the pseudo behavior
/// set with every candidate, and square the gap to the pseudo evaluation
/// set's mean reward. The squared gaps are averaged over seeds. `pi_e` and
/// `pi_b` are `n × |A|` probabilities at the dataset's contexts; `seed`
/// namespaces all randomness of the run.
pub fn estimate_mse_pasif(
    candidates: &[EstimatorCandidate],
    dataset: &LoggedDataset,
    pi_e: ArrayView2<f64>,
    pi_b: ArrayView2<f64>,
    config: &PasifConfig,
    estimation: &EstimationConfig,
    seed: u64,
) -> Result<PasifEstimate> {
    config.validate()?;
    if candidates.is_empty() {
        return Err(Error::EmptyRequest("no candidate estimators"));
    }
    let mut sums = vec![0.0; candidates.len()];
    let mut diagnostics = Vec::with_capacity(config.seeds.len());
    let shared = if config.share_rule {
        let problem = ImportanceFitting::new(dataset, pi_e, pi_b, config.target_rate)?;
        Some(train_subsampler(&problem, config, seed)?)
    } else {
        None
    };
    for &s in &config.seeds {
        let run_seed = derive_seed(seed, s);
        let idx = dataset.bootstrap_indices(run_seed);
        let boot = dataset.select(&idx);
        let boot_b = pi_b.select(Axis(0), &idx);
        let problem = match shared {
            Some(_) => None,
            None => Some(bootstrap_problem(dataset, pi_e, pi_b, &idx, config.target_rate)?),
        };
        let groups: Vec<Vec<usize>> = if config.strict {
            (0..candidates.len()).map(|m| vec![m]).collect()
        } else {
            vec![(0..candidates.len()).collect()]
        };
        for (g, members) in groups.iter().enumerate() {
            // strict mode gives each candidate its own initialization and subsample
            let group_seed = if config.strict {
                derive_seed(run_seed, 1 + g as u64)
            } else {
                run_seed
            };
            let trained = match (&shared, &problem) {
                (Some(t), _) => t.clone(),
                (None, Some(p)) => train_subsampler(p, config, group_seed)?,
                (None, None) => unreachable!("a problem is built whenever no rule is shared"),
            };
            let task = make_pseudo_task(
                &trained.rule,
                &boot,
                boot_b.view(),
                group_seed,
                config.max_redraws,
            )?;
            let chosen: Vec<EstimatorCandidate> = members.iter().map(|&m| candidates[m]).collect();
            let values = estimate_candidates(
                &chosen,
                &task.behavior_data,
                task.eval_probs.view(),
                estimation,
                group_seed,
            )?;
            for (&m, v) in members.iter().zip(values) {
                sums[m] += (v - task.on_policy_value).powi(2);
            }
            if g == 0 {
                diagnostics.push(SeedDiagnostics {
                    seed: s,
                    lambda_reg: trained.lambda_reg,
                    d: trained.d,
                    mean_rate: trained.mean_rate,
                    in_band: trained.in_band,
                    eval_size: task.partition.eval.len(),
                });
            }
        }
    }
    let count = config.seeds.len() as f64;
    Ok(PasifEstimate {
        mse: sums.into_iter().map(|s| s / count).collect(),
        diagnostics,
    })
}

/// Mean of `(E(x_i) − k)²` at the given rates.
pub fn regularizer_value(rate: ArrayView1<f64>, target_rate: f64) -> f64 {
    rate.iter().map(|e| (e - target_rate).powi(2)).sum::<f64>() / rate.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample_logged_data;
    use crate::env::SyntheticEnvironment;
    use crate::gradcheck::{central_difference, relative_error};
    use crate::policy::{softmax_policy, Policy};
    use ndarray::array;

    #[test]
    fn two_action_example() {
        let p = pseudo_policies_from(array![[0.5, 0.5]].view(), array![[0.8, 0.2]].view()).unwrap();
        assert!((p.rate[0] - 0.5).abs() < 1e-15);
        assert!((p.eval[[0, 0]] - 0.8).abs() < 1e-15 && (p.eval[[0, 1]] - 0.2).abs() < 1e-15);
        assert!((p.behavior[[0, 0]] - 0.2).abs() < 1e-15 && (p.behavior[[0, 1]] - 0.8).abs() < 1e-15);
        assert!((pseudo_ratio(0.8, 0.5) - 4.0).abs() < 1e-12);
        assert!((pseudo_ratio(0.2, 0.5) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn constant_rate_collapses_to_behavior() {
        let pi_b = array![[0.1, 0.6, 0.3], [0.3, 0.3, 0.4]];
        let rho = Array2::from_elem((2, 3), 0.37);
        let p = pseudo_policies_from(pi_b.view(), rho.view()).unwrap();
        for ((e, b), pb) in p.eval.iter().zip(&p.behavior).zip(&pi_b) {
            assert!((e - pb).abs() < 1e-15 && (b - pb).abs() < 1e-15);
        }
        assert!((pseudo_ratio(0.37, p.rate[0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_rate() {
        let r = pseudo_policies_from(array![[0.5, 0.5]].view(), array![[1.0, 1.0]].view());
        assert!(matches!(r, Err(Error::DegenerateRate(_))));
    }

    fn problem(n: usize, beta_e: f64, seed: u64) -> (SyntheticEnvironment, LoggedDataset, ImportanceFitting) {
        let env = SyntheticEnvironment::new(3, 4, seed).unwrap();
        let b = Policy::mixture(
            vec![
                softmax_policy(&env, -2.0).unwrap(),
                softmax_policy(&env, 2.0).unwrap(),
            ],
            vec![0.5, 0.5],
        )
        .unwrap();
        let e = softmax_policy(&env, beta_e).unwrap();
        let d = sample_logged_data(&env, &b, n, seed).unwrap();
        let pb = b.probabilities(d.contexts());
        let pe = e.probabilities(d.contexts());
        let p = ImportanceFitting::new(&d, pe.view(), pb.view(), 0.2).unwrap();
        (env, d, p)
    }

    #[test]
    fn counts_match_duplicated_records() {
        let (_, d, _) = problem(30, 2.0, 8);
        let env = SyntheticEnvironment::new(3, 4, 8).unwrap();
        let pe = softmax_policy(&env, 2.0).unwrap().probabilities(d.contexts());
        let pb = Array2::from_elem((30, 4), 0.25);
        let idx = [0, 0, 3, 7, 7, 7, 12, 29];
        let dup = d.select(&idx);
        let direct = ImportanceFitting::new(
            &dup,
            pe.select(Axis(0), &idx).view(),
            pb.select(Axis(0), &idx).view(),
            0.2,
        )
        .unwrap();
        let grouped = bootstrap_problem(&d, pe.view(), pb.view(), &idx, 0.2).unwrap();
        let params = MlpParams::new(7, 5, 1);
        let (a, ga) = direct
            .loss_and_gradient(&params, 2.0, GradientMode::Full)
            .unwrap();
        let (b, gb) = grouped
            .loss_and_gradient(&params, 2.0, GradientMode::Full)
            .unwrap();
        assert!((a.d - b.d).abs() < 1e-12 && (a.r - b.r).abs() < 1e-12);
        for (x, y) in ga.to_flat().iter().zip(gb.to_flat()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn regularizer_example() {
        let rate = array![0.3, 0.1];
        assert!((regularizer_value(rate.view(), 0.2) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn objective_vanishes_when_policies_match_and_rate_constant() {
        let env = SyntheticEnvironment::new(2, 3, 0).unwrap();
        let b = softmax_policy(&env, 1.0).unwrap();
        let d = sample_logged_data(&env, &b, 50, 1).unwrap();
        let pb = b.probabilities(d.contexts());
        let p = ImportanceFitting::new(&d, pb.view(), pb.view(), 0.2).unwrap();
        let fit = p.evaluate_rho(Array2::from_elem((50, 3), 0.2)).unwrap();
        assert!(fit.d < 1e-28 && fit.r < 1e-28);
        assert!(p
            .objective_rho_gradient(&fit, GradientMode::Full)
            .iter()
            .all(|g| g.abs() < 1e-12));
        assert!(p.regularizer_rho_gradient(&fit).iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn three_record_objective_by_hand() {
        // |A| = 2, π_b = (0.5, 0.5) everywhere, ρ rows (0.8, 0.2), (0.5, 0.5), (0.25, 0.75)
        let x = Array2::zeros((3, 1));
        let d = LoggedDataset::new(
            x,
            vec![0, 1, 1],
            vec![1.0, 0.0, 1.0],
            vec![0.5; 3],
            vec![0; 3],
            2,
            1.0,
        )
        .unwrap();
        let pb = Array2::from_elem((3, 2), 0.5);
        let pe = array![[0.9, 0.1], [0.5, 0.5], [0.25, 0.75]];
        let p = ImportanceFitting::new(&d, pe.view(), pb.view(), 0.2).unwrap();
        let fit = p
            .evaluate_rho(array![[0.8, 0.2], [0.5, 0.5], [0.25, 0.75]])
            .unwrap();
        // w = (1.8, 1.0, 1.5); w̃ = (4, 1, 3); E = (0.5, 0.5, 0.5)
        let expected = ((1.8f64 - 4.0).powi(2) + 0.0 + (1.5f64 - 3.0).powi(2)) / 3.0;
        assert!((fit.d - expected).abs() < 1e-12);
        assert!((fit.r - 0.09).abs() < 1e-12);
    }

    #[test]
    fn rho_space_gradients_match_finite_differences() {
        let (_, _, p) = problem(40, 3.0, 2);
        let mut g = rng(11, 0);
        let rho = Array2::from_shape_fn((40, 4), |_| 0.05 + 0.9 * g.random::<f64>());
        let fit = p.evaluate_rho(rho.clone()).unwrap();
        let flat: Vec<f64> = rho.iter().copied().collect();
        let reshape = |v: &[f64]| Array2::from_shape_vec((40, 4), v.to_vec()).unwrap();
        let d_fd = central_difference(|v| p.evaluate_rho(reshape(v)).unwrap().d, &flat, 1e-6);
        let r_fd = central_difference(|v| p.evaluate_rho(reshape(v)).unwrap().r, &flat, 1e-6);
        let full = p.objective_rho_gradient(&fit, GradientMode::Full);
        let diag = p.objective_rho_gradient(&fit, GradientMode::Diagonal);
        let reg = p.regularizer_rho_gradient(&fit);
        for (j, (a, b)) in full.iter().zip(&d_fd).enumerate() {
            assert!(relative_error(*a, *b) < 1e-4, "D entry {j}: {a} vs {b}");
        }
        for (a, b) in reg.iter().zip(&r_fd) {
            assert!(relative_error(*a, *b) < 1e-4, "R: {a} vs {b}");
        }
        // diagonal mode agrees at every record's own action and is zero elsewhere
        for (i, &a) in p.actions().iter().enumerate() {
            for b in 0..4 {
                if b == a {
                    assert!(relative_error(diag[[i, b]], d_fd[i * 4 + b]) < 1e-4);
                } else {
                    assert_eq!(diag[[i, b]], 0.0);
                }
            }
        }
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let (_, _, p) = problem(15, 2.0, 3);
        let mut params = MlpParams::new(7, 5, 4);
        let mut g = rng(5, 0);
        let theta: Vec<f64> = (0..params.n_params()).map(|_| g.random::<f64>() - 0.5).collect();
        params.set_flat(&theta).unwrap();
        let (_, grad) = p.loss_and_gradient(&params, 3.0, GradientMode::Full).unwrap();
        let loss = |v: &[f64]| {
            let mut q = params.clone();
            q.set_flat(v).unwrap();
            let fit = p.evaluate(&q).unwrap().0;
            fit.d + 3.0 * fit.r
        };
        let fd = central_difference(loss, &theta, 1e-6);
        for (a, b) in grad.to_flat().iter().zip(&fd) {
            assert!(relative_error(*a, *b) < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn regularizer_step_moves_rate_toward_target() {
        let (_, _, p) = problem(100, 0.0, 4);
        let cfg = PasifConfig {
            steps: 200,
            hidden: 8,
            learning_rate: 1e-2,
            ..PasifConfig::default()
        };
        let mut params = MlpParams::new(7, 8, 1);
        let mut adam = AdamState::new(
            &params,
            AdamConfig {
                learning_rate: 1e-3,
                ..AdamConfig::default()
            },
        );
        let before = p.evaluate(&params).unwrap().0.mean_rate();
        assert!(before > 0.2, "initial mean rate {before}");
        let (fit, cache) = p.evaluate(&params).unwrap();
        let grad = p
            .parameter_gradient(&params, &cache, &p.regularizer_rho_gradient(&fit))
            .unwrap();
        adam_step(&mut params, &mut adam, &grad).unwrap();
        assert!(p.evaluate(&params).unwrap().0.mean_rate() < before);

        let trained = train_subsampler(&p, &cfg, 0).unwrap();
        assert!((trained.mean_rate - 0.2).abs() < 0.05, "{}", trained.mean_rate);
    }

    #[test]
    fn training_reduces_objective() {
        let (_, _, p) = problem(300, 5.0, 6);
        let cfg = PasifConfig {
            steps: 300,
            hidden: 16,
            learning_rate: 1e-2,
            ..PasifConfig::default()
        };
        let init = SubsamplingRule::initialize(3, 4, 16, 9);
        let untrained = p.evaluate(init.params()).unwrap().0.d;
        let trained = train_subsampler(&p, &cfg, 9).unwrap();
        assert!(trained.d < untrained, "{} vs {untrained}", trained.d);
    }

    #[test]
    fn subsample_partitions_and_rate() {
        let rates = vec![0.2; 2000];
        let part = subsample(&rates, 3, 5).unwrap();
        assert_eq!(part.eval.len() + part.behavior.len(), 2000);
        let sd = (2000.0f64 * 0.2 * 0.8).sqrt();
        assert!((part.eval.len() as f64 - 400.0).abs() < 3.0 * sd);
        let mut all: Vec<usize> = part.eval.iter().chain(&part.behavior).copied().collect();
        all.sort();
        assert_eq!(all, (0..2000).collect::<Vec<_>>());

        let high = subsample(&vec![0.999; 2000], 1, 5).unwrap();
        assert!(high.eval.len() >= 1990);
        // every record on one side is a degenerate split
        assert!(subsample(&vec![1.0 - RHO_EPSILON; 500], 1, 5).is_err());
        assert!(matches!(
            subsample(&[0.0; 10], 0, 5),
            Err(Error::DegenerateSplit(_))
        ));
    }

    #[test]
    fn pseudo_task_relabels_behavior_side() {
        let (env, d, _) = problem(200, 1.0, 7);
        let b = Policy::mixture(
            vec![
                softmax_policy(&env, -2.0).unwrap(),
                softmax_policy(&env, 2.0).unwrap(),
            ],
            vec![0.5, 0.5],
        )
        .unwrap();
        let pb = b.probabilities(d.contexts());
        let rule = SubsamplingRule::initialize(3, 4, 6, 2);
        let task = make_pseudo_task(&rule, &d, pb.view(), 5, 5).unwrap();
        let pseudo = pseudo_policies(&rule, pb.view(), d.contexts()).unwrap();
        for (j, &i) in task.partition.behavior.iter().enumerate() {
            let a = d.actions()[i];
            assert_eq!(task.behavior_data.propensities()[j], pseudo.behavior[[i, a]]);
            assert_eq!(task.eval_probs.row(j), pseudo.eval.row(i));
        }
        let eval_mean = task.partition.eval.iter().map(|&i| d.rewards()[i]).sum::<f64>()
            / task.partition.eval.len() as f64;
        assert!((task.on_policy_value - eval_mean).abs() < 1e-15);
    }
}
