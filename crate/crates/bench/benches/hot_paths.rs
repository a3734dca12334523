use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array2;
use opesel_core::estimators::{evaluate_all, make_candidate_set, OpeInput};
use opesel_core::nn::{adam_step, AdamConfig, AdamState, MlpParams};
use opesel_core::pasif::ImportanceFitting;
use opesel_core::reward::{PredictionSet, RegressorConfig, RegressorKind};
use opesel_core::{
    sample_logged_data, softmax_policy, GradientMode, LoggedDataset, Policy, SyntheticEnvironment,
};

struct Setup {
    data: LoggedDataset,
    pi_b: Array2<f64>,
    pi_e: Array2<f64>,
}

fn setup() -> Setup {
    let env = SyntheticEnvironment::new(10, 10, 0).unwrap();
    let behavior = Policy::mixture(
        vec![
            softmax_policy(&env, -2.0).unwrap(),
            softmax_policy(&env, 2.0).unwrap(),
        ],
        vec![0.5, 0.5],
    )
    .unwrap();
    let data = sample_logged_data(&env, &behavior, 2000, 1).unwrap();
    let pi_b = behavior.probabilities(data.contexts());
    let pi_e = softmax_policy(&env, 10.0).unwrap().probabilities(data.contexts());
    Setup { data, pi_b, pi_e }
}

fn subsampler_step(c: &mut Criterion) {
    let s = setup();
    let problem = ImportanceFitting::new(&s.data, s.pi_e.view(), s.pi_b.view(), 0.2).unwrap();
    let mut group = c.benchmark_group("subsampler_step");
    group.sample_size(10);
    for hidden in [16, 100] {
        group.bench_function(format!("hidden={hidden}"), |b| {
            let mut params = MlpParams::new(problem.dim() + problem.n_actions(), hidden, 0);
            let mut adam = AdamState::new(&params, AdamConfig::default());
            b.iter(|| {
                let (_, grad) = problem
                    .loss_and_gradient(&params, 1.0, GradientMode::Diagonal)
                    .unwrap();
                adam_step(&mut params, &mut adam, &grad).unwrap();
            })
        });
    }
    group.finish();
}

fn cross_fit(c: &mut Criterion) {
    let s = setup();
    let config = RegressorConfig::default();
    let mut group = c.benchmark_group("cross_fit");
    group.sample_size(10);
    for kind in RegressorKind::ALL {
        group.bench_function(kind.to_string(), |b| {
            b.iter(|| PredictionSet::cross_fit(&s.data, &[kind], 3, 0, &config).unwrap())
        });
    }
    group.finish();
}

fn evaluate_candidates(c: &mut Criterion) {
    let s = setup();
    let candidates = make_candidate_set();
    let predictions =
        PredictionSet::cross_fit(&s.data, &RegressorKind::ALL, 3, 0, &RegressorConfig::default()).unwrap();
    let input = OpeInput::new(&s.data, s.pi_e.view()).unwrap();
    c.bench_function("evaluate_21_candidates", |b| {
        b.iter(|| evaluate_all(&candidates, &input, &predictions).unwrap())
    });
}

criterion_group!(benches, subsampler_step, cross_fit, evaluate_candidates);
criterion_main!(benches);
