//! Estimator selection, policy selection, ground-truth MSEs and the metrics
//! used to score them.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::baseline::{estimate_mse_nonadaptive, HeuristicConfig};
use crate::data::{sample_logged_data, true_policy_values, LoggedDataset};
use crate::env::SyntheticEnvironment;
use crate::error::{Error, Result};
use crate::estimators::{evaluate_all, required_regressors, EstimationConfig, EstimatorCandidate, OpeInput};
use crate::pasif::{estimate_mse_pasif, PasifConfig};
use crate::policy::Policy;
use crate::reward::PredictionSet;
use crate::rng::{derive_seed, rng, stream};

/// Index of the smallest value; ties go to the lowest index.
pub fn select_estimator(mse: &[f64]) -> Result<usize> {
    if mse.is_empty() {
        return Err(Error::EmptyRequest("selection among zero candidates"));
    }
    if let Some(v) = mse.iter().find(|v| v.is_nan()) {
        return Err(Error::NonFinite(format!("estimated MSE {v}")));
    }
    let mut best = 0;
    for (m, &v) in mse.iter().enumerate().skip(1) {
        if v < mse[best] {
            best = m;
        }
    }
    Ok(best)
}

/// `(MSE_selected − MSE_best) / MSE_best`.
pub fn relative_regret_e(true_mse: &[f64], selected: usize) -> Result<f64> {
    let best = true_mse[select_estimator(true_mse)?];
    let chosen = *true_mse
        .get(selected)
        .ok_or_else(|| Error::InvalidArgument(format!("selected index {selected} of {}", true_mse.len())))?;
    if best == 0.0 {
        return Err(Error::DivisionByZero("smallest true MSE is zero"));
    }
    Ok((chosen - best) / best)
}

/// `(V_best − V_selected) / V_best`.
pub fn relative_regret_p(true_values: &[f64], selected: usize) -> Result<f64> {
    if true_values.is_empty() {
        return Err(Error::EmptyRequest("policy regret over zero candidates"));
    }
    let best = true_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let chosen = *true_values.get(selected).ok_or_else(|| {
        Error::InvalidArgument(format!("selected index {selected} of {}", true_values.len()))
    })?;
    if best == 0.0 {
        return Err(Error::DivisionByZero("best true policy value is zero"));
    }
    Ok((best - chosen) / best)
}

/// Ranks starting at 1; tied values share the mean of their ranks.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation of the average ranks of `a` and `b`.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} values", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: a.len(),
        });
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("NaN in rank correlation input".into()));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input"));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// True policy values and candidate MSEs for several evaluation policies.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `V(π)` per evaluation policy.
    pub values: Vec<f64>,
    /// `policies × candidates`
    pub mse: Array2<f64>,
}

/// Monte-Carlo ground truth: `V(π)` from `n_mc` fresh contexts, and each
/// candidate's squared error averaged over `n_reps` fresh logged datasets of
/// size `n`. All policies share the same replicate datasets.
#[allow(clippy::too_many_arguments)]
pub fn ground_truth(
    candidates: &[EstimatorCandidate],
    policies: &[Policy],
    env: &SyntheticEnvironment,
    behavior: &Policy,
    n: usize,
    n_reps: usize,
    n_mc: usize,
    estimation: &EstimationConfig,
    seed: u64,
) -> Result<GroundTruth> {
    if n_reps == 0 || candidates.is_empty() || policies.is_empty() {
        return Err(Error::EmptyRequest(
            "ground truth needs replicates, candidates and policies",
        ));
    }
    let values = true_policy_values(env, policies, n_mc, derive_seed(seed, 0))?;
    let kinds = required_regressors(candidates);
    let mut mse = Array2::zeros((policies.len(), candidates.len()));
    for rep in 0..n_reps as u64 {
        let rep_seed = derive_seed(seed, 1 + rep);
        let data = sample_logged_data(env, behavior, n, rep_seed)?;
        let predictions = PredictionSet::cross_fit(
            &data,
            &kinds,
            estimation.n_folds,
            rep_seed,
            &estimation.regressors,
        )?;
        for (p, pi) in policies.iter().enumerate() {
            let probs = pi.probabilities(data.contexts());
            let input = OpeInput::new(&data, probs.view())?;
            for (m, e) in evaluate_all(candidates, &input, &predictions)?.iter().enumerate() {
                mse[[p, m]] += (e.value - values[p]).powi(2);
            }
        }
    }
    mse /= n_reps as f64;
    Ok(GroundTruth { values, mse })
}

/// [`ground_truth`] for a single candidate and policy.
#[allow(clippy::too_many_arguments)]
pub fn ground_truth_mse(
    candidate: EstimatorCandidate,
    pi_e: &Policy,
    env: &SyntheticEnvironment,
    behavior: &Policy,
    n: usize,
    n_reps: usize,
    n_mc: usize,
    estimation: &EstimationConfig,
    seed: u64,
) -> Result<f64> {
    let truth = ground_truth(
        &[candidate],
        std::slice::from_ref(pi_e),
        env,
        behavior,
        n,
        n_reps,
        n_mc,
        estimation,
        seed,
    )?;
    Ok(truth.mse[[0, 0]])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pasif,
    Heuristic,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Pasif => "pasif",
            Method::Heuristic => "heuristic",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Settings shared by both MSE estimation methods.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionSettings {
    pub pasif: PasifConfig,
    pub heuristic: HeuristicConfig,
    pub estimation: EstimationConfig,
}

/// Estimated MSE of every candidate for evaluating `pi_e` from `dataset`.
pub fn estimate_mse(
    method: Method,
    candidates: &[EstimatorCandidate],
    dataset: &LoggedDataset,
    behavior: &Policy,
    pi_e: &Policy,
    settings: &SelectionSettings,
    seed: u64,
) -> Result<Vec<f64>> {
    match method {
        Method::Pasif => {
            let pe = pi_e.probabilities(dataset.contexts());
            let pb = behavior.probabilities(dataset.contexts());
            Ok(estimate_mse_pasif(
                candidates,
                dataset,
                pe.view(),
                pb.view(),
                &settings.pasif,
                &settings.estimation,
                seed,
            )?
            .mse)
        }
        Method::Heuristic => estimate_mse_nonadaptive(
            candidates,
            dataset,
            behavior,
            &settings.heuristic,
            &settings.estimation,
            seed,
        ),
    }
}

/// Outcome of policy selection.
#[derive(Debug, Clone, PartialEq)]
pub struct OpsOutcome {
    /// Estimator chosen for each candidate policy.
    pub selected_estimators: Vec<usize>,
    /// `V̂_{m̂}(π)` for each candidate policy.
    pub estimated_values: Vec<f64>,
    /// Index of the policy with the largest estimated value (ties to the lowest).
    pub chosen: usize,
}

/// Selects an estimator for every candidate policy, estimates each policy's
/// value with its own estimator, and picks the largest.
pub fn ops_select(
    method: Method,
    candidates: &[EstimatorCandidate],
    policies: &[Policy],
    dataset: &LoggedDataset,
    behavior: &Policy,
    settings: &SelectionSettings,
    seed: u64,
) -> Result<OpsOutcome> {
    if policies.is_empty() {
        return Err(Error::EmptyRequest("policy selection among zero policies"));
    }
    // the heuristic's estimates do not depend on the evaluation policy
    let shared = match method {
        Method::Heuristic => Some(select_estimator(&estimate_mse(
            method,
            candidates,
            dataset,
            behavior,
            &policies[0],
            settings,
            seed,
        )?)?),
        Method::Pasif => None,
    };
    let predictions = PredictionSet::cross_fit(
        dataset,
        &required_regressors(candidates),
        settings.estimation.n_folds,
        seed,
        &settings.estimation.regressors,
    )?;
    let mut selected_estimators = Vec::with_capacity(policies.len());
    let mut estimated_values = Vec::with_capacity(policies.len());
    for (p, pi) in policies.iter().enumerate() {
        let m = match shared {
            Some(m) => m,
            None => select_estimator(&estimate_mse(
                method,
                candidates,
                dataset,
                behavior,
                pi,
                settings,
                derive_seed(seed, p as u64),
            )?)?,
        };
        let probs = pi.probabilities(dataset.contexts());
        let input = OpeInput::new(dataset, probs.view())?;
        selected_estimators.push(m);
        estimated_values.push(candidates[m].evaluate(&input, &predictions)?.value);
    }
    let negated: Vec<f64> = estimated_values.iter().map(|v| -v).collect();
    let chosen = select_estimator(&negated)?;
    Ok(OpsOutcome {
        selected_estimators,
        estimated_values,
        chosen,
    })
}

/// Uniform random halves of `0..n` (the first gets `n / 2` indices), sorted.
pub fn random_halves(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng(seed, stream::SPLIT));
    let (a, b) = order.split_at(n / 2);
    let (mut a, mut b) = (a.to_vec(), b.to_vec());
    a.sort_unstable();
    b.sort_unstable();
    (a, b)
}

/// Value estimate with estimator selection on a held-out half: for each
/// outer seed, select an estimator by PAS-IF on one random half of the data
/// and apply it to the other half; the estimates are averaged.
pub fn end_to_end_ope(
    candidates: &[EstimatorCandidate],
    pi_e: &Policy,
    dataset: &LoggedDataset,
    behavior: &Policy,
    settings: &SelectionSettings,
    outer_seeds: &[u64],
) -> Result<f64> {
    if outer_seeds.is_empty() {
        return Err(Error::EmptyRequest(
            "end-to-end OPE needs at least one outer seed",
        ));
    }
    let mut total = 0.0;
    for &s in outer_seeds {
        let (pre_idx, post_idx) = random_halves(dataset.len(), s);
        let pre = dataset.select(&pre_idx);
        let post = dataset.select(&post_idx);
        let m = select_estimator(&estimate_mse(
            Method::Pasif,
            candidates,
            &pre,
            behavior,
            pi_e,
            settings,
            s,
        )?)?;
        let probs = pi_e.probabilities(post.contexts());
        total += estimate_single(candidates[m], &post, probs.view(), &settings.estimation, s)?;
    }
    Ok(total / outer_seeds.len() as f64)
}

fn estimate_single(
    candidate: EstimatorCandidate,
    dataset: &LoggedDataset,
    eval_probs: ArrayView2<f64>,
    estimation: &EstimationConfig,
    seed: u64,
) -> Result<f64> {
    Ok(crate::estimators::estimate_candidates(&[candidate], dataset, eval_probs, estimation, seed)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{make_candidate_set, EstimatorFamily};
    use crate::policy::softmax_policy;
    use proptest::prelude::*;

    #[test]
    fn selection_examples() {
        assert_eq!(select_estimator(&[3.0, 1.0, 2.0]).unwrap(), 1);
        assert_eq!(select_estimator(&[5.0]).unwrap(), 0);
        assert_eq!(select_estimator(&[2.0, 2.0, 2.0]).unwrap(), 0);
        assert!(select_estimator(&[]).is_err());
    }

    #[test]
    fn regret_examples() {
        assert_eq!(relative_regret_e(&[1.0, 2.0], 0).unwrap(), 0.0);
        assert_eq!(relative_regret_e(&[1.0, 2.0], 1).unwrap(), 1.0);
        assert_eq!(relative_regret_e(&[4.0, 1.0, 2.0], 2).unwrap(), 1.0);
        assert!(matches!(
            relative_regret_e(&[0.0, 1.0], 1),
            Err(Error::DivisionByZero(_))
        ));
        assert_eq!(relative_regret_p(&[0.5, 0.4], 0).unwrap(), 0.0);
        assert!((relative_regret_p(&[0.5, 0.4], 1).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn spearman_examples() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((spearman(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&a, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!((spearman(&a, &[1.0, 3.0, 2.0, 5.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
        assert!(matches!(
            spearman(&a, &[1.0; 5]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    proptest! {
        #[test]
        fn argmin_scale_invariant(v in prop::collection::vec(0.0f64..10.0, 1..20), c in 0.01f64..100.0) {
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            prop_assert_eq!(select_estimator(&v).unwrap(), select_estimator(&scaled).unwrap());
        }

        #[test]
        fn spearman_monotone_invariant(v in prop::collection::vec(-5.0f64..5.0, 3..15), w in prop::collection::vec(-5.0f64..5.0, 3..15)) {
            let k = v.len().min(w.len());
            let (v, w) = (&v[..k], &w[..k]);
            if let Ok(r) = spearman(v, w) {
                let transformed: Vec<f64> = v.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
                prop_assert!((spearman(&transformed, w).unwrap() - r).abs() < 1e-12);
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
            }
        }
    }

    fn setup() -> (SyntheticEnvironment, Policy, LoggedDataset) {
        let env = SyntheticEnvironment::new(3, 4, 5).unwrap();
        let b = Policy::mixture(
            vec![
                softmax_policy(&env, -2.0).unwrap(),
                softmax_policy(&env, 2.0).unwrap(),
            ],
            vec![0.5, 0.5],
        )
        .unwrap();
        let d = sample_logged_data(&env, &b, 400, 6).unwrap();
        (env, b, d)
    }

    fn quick_settings() -> SelectionSettings {
        SelectionSettings {
            pasif: PasifConfig {
                steps: 30,
                hidden: 8,
                learning_rate: 1e-2,
                seeds: vec![0, 1],
                lambda_grid: vec![1.0, 100.0],
                ..PasifConfig::default()
            },
            heuristic: HeuristicConfig {
                seeds: vec![0, 1],
                ..HeuristicConfig::default()
            },
            estimation: EstimationConfig::default(),
        }
    }

    #[test]
    fn ground_truth_is_nonnegative_and_shared() {
        let (env, b, _) = setup();
        let cands = make_candidate_set();
        let pols = vec![
            softmax_policy(&env, 0.0).unwrap(),
            softmax_policy(&env, 5.0).unwrap(),
        ];
        let gt = ground_truth(
            &cands,
            &pols,
            &env,
            &b,
            300,
            3,
            5000,
            &EstimationConfig::default(),
            1,
        )
        .unwrap();
        assert_eq!(gt.mse.dim(), (2, 21));
        assert!(gt.mse.iter().all(|m| *m >= 0.0));
        let single = ground_truth_mse(
            cands[3],
            &pols[1],
            &env,
            &b,
            300,
            3,
            5000,
            &EstimationConfig::default(),
            1,
        )
        .unwrap();
        assert!((single - gt.mse[[1, 3]]).abs() < 1e-15);
    }

    #[test]
    fn ops_with_one_estimator_ranks_by_its_values() {
        let (env, b, d) = setup();
        let snips = EstimatorCandidate::new(EstimatorFamily::Snips, None).unwrap();
        let pols: Vec<Policy> = [-3.0, 0.0, 3.0]
            .iter()
            .map(|&beta| softmax_policy(&env, beta).unwrap())
            .collect();
        let out = ops_select(Method::Heuristic, &[snips], &pols, &d, &b, &quick_settings(), 0).unwrap();
        let direct: Vec<f64> = pols
            .iter()
            .map(|p| {
                let probs = p.probabilities(d.contexts());
                estimate_single(snips, &d, probs.view(), &EstimationConfig::default(), 0).unwrap()
            })
            .collect();
        assert_eq!(out.estimated_values, direct);
        assert_eq!(
            out.chosen,
            select_estimator(&direct.iter().map(|v| -v).collect::<Vec<_>>()).unwrap()
        );
    }

    #[test]
    fn halves_partition() {
        let (a, b) = random_halves(11, 3);
        assert_eq!((a.len(), b.len()), (5, 6));
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
    }

    #[test]
    fn end_to_end_on_policy_sanity() {
        let (env, _, _) = setup();
        let pi = softmax_policy(&env, 1.0).unwrap();
        let d = sample_logged_data(&env, &pi, 600, 8).unwrap();
        let cands = make_candidate_set();
        let v = end_to_end_ope(&cands, &pi, &d, &pi, &quick_settings(), &[0, 1]).unwrap();
        let mean = d.mean_reward();
        let se = (mean * (1.0 - mean) / d.len() as f64).sqrt();
        assert!((v - mean).abs() < 3.0 * se, "{v} vs {mean} ± {se}");
        let again = end_to_end_ope(&cands, &pi, &d, &pi, &quick_settings(), &[0, 1]).unwrap();
        assert_eq!(v, again);
    }
}
