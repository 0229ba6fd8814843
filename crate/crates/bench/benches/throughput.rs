use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};

use caresel_bench::fixture;
use caresel_core::feature_select::{outcome_labels, predictor_column, screening_universe};
use caresel_core::glm::{fit_weighted_logistic, FitConfig};
use caresel_core::scoring::{score_risk, PatientScorer};
use caresel_core::{search, Budget, SearchConfig, SearchMode};

fn scoring(c: &mut Criterion) {
    let (cohort, model) = fixture(200);
    let mut g = c.benchmark_group("scoring");
    g.throughput(Throughput::Elements(cohort.len() as u64));
    g.bench_function("score_risk observed plans", |b| {
        b.iter(|| {
            for p in &cohort.patients {
                black_box(score_risk(&model, p, &p.observed_plan).unwrap());
            }
        })
    });
    let scorer = PatientScorer::new(&model, &cohort.patients[0], cohort.catalog.len()).unwrap();
    let plans: Vec<Vec<_>> = cohort.patients.iter().map(|p| p.observed_plan.as_slice().to_vec()).collect();
    g.bench_function("precomputed scorer", |b| {
        b.iter(|| {
            for plan in &plans {
                black_box(scorer.risk(plan));
            }
        })
    });
    g.finish();
}

fn simulations(c: &mut Criterion) {
    let (cohort, model) = fixture(50);
    let mut g = c.benchmark_group("search");
    g.sample_size(10);
    const SIMS: u64 = 5_000;
    g.throughput(Throughput::Elements(SIMS));
    for mode in [SearchMode::Vanilla, SearchMode::PhMast] {
        let cfg = SearchConfig {
            mode,
            budget: Budget::Simulations(SIMS),
            ..SearchConfig::default()
        };
        g.bench_function(mode.as_str(), |b| {
            b.iter(|| black_box(search(&model, &cohort.catalog, &cohort.patients[3], &cfg).unwrap()))
        });
    }
    g.finish();
}

fn irls(c: &mut Criterion) {
    let (cohort, _) = fixture(5_000);
    let labels = outcome_labels(&cohort);
    let columns: Vec<Vec<f64>> = screening_universe(&cohort, &[])
        .iter()
        .take(40)
        .map(|p| predictor_column(&cohort, p).unwrap())
        .collect();
    let weights = vec![1.0; cohort.len()];
    let mut g = c.benchmark_group("irls");
    g.sample_size(10);
    for k in [1, 10, 40] {
        g.bench_function(format!("{} rows x {k} columns", cohort.len()), |b| {
            b.iter_batched(
                || columns[..k].iter().map(|c| c.as_slice()).collect::<Vec<_>>(),
                |cols| black_box(fit_weighted_logistic(&cols, &labels, &weights, &FitConfig::default(), None)),
                BatchSize::SmallInput,
            )
        });
    }
    g.finish();
}

criterion_group!(benches, scoring, simulations, irls);
criterion_main!(benches);
