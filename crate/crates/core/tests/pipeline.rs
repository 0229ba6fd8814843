use caresel_core::catalog::Cohort;
use caresel_core::datagen::{generate_ground_truth, sample_cohort, CohortSpec, GroundTruth};
use caresel_core::feature_select::{split_holdout, train_ensemble, BuiltEnsemble, EnsembleSpec};
use caresel_core::harness::{aggregate, build_test_set, read_raw_csv, run_sweep, write_report, SweepConfig, TestSetConfig, DECILES};
use caresel_core::propensity::{
    compute_weights, fit_all_propensities, standardized_differences, PropensityConfig, DEFAULT_CLIP,
};
use caresel_core::scoring::{model_from_json, model_to_json, score_risk};
use caresel_core::{Budget, SearchConfig};

fn cohort(bias: f64, seed: u64) -> (GroundTruth, Cohort) {
    let spec = CohortSpec {
        n_patients: 6_000,
        n_services: 12,
        mean_plan_size: 4.0,
        bias_strength: bias,
        seed,
        ..CohortSpec::default()
    };
    let truth = generate_ground_truth(&spec).unwrap();
    let cohort = sample_cohort(&truth, &spec).unwrap();
    (truth, cohort)
}

fn train(cohort: &Cohort, seed: u64) -> (Cohort, BuiltEnsemble) {
    let (train_idx, _) = split_holdout(cohort.len(), 0.3, seed);
    let train = cohort.subset(&train_idx);
    let models = fit_all_propensities(&train, &PropensityConfig::default()).unwrap();
    let w = compute_weights(&train, &models, DEFAULT_CLIP).unwrap().for_cohort(&train).unwrap();
    let spec = EnsembleSpec {
        seed,
        ..EnsembleSpec::default()
    };
    let built = train_ensemble(&spec, &train, &w).unwrap();
    (train, built)
}

#[test]
fn training_is_seed_deterministic() {
    let (_, c) = cohort(0.5, 4);
    let (_, a) = train(&c, 9);
    let (_, b) = train(&c, 9);
    assert_eq!(model_to_json(&a.model), model_to_json(&b.model));
    let again = model_from_json(&model_to_json(&a.model)).unwrap();
    for p in c.patients.iter().take(200) {
        let x = score_risk(&a.model, p, &p.observed_plan).unwrap();
        let y = score_risk(&again, p, &p.observed_plan).unwrap();
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn members_keep_only_significant_predictors() {
    let (_, c) = cohort(0.0, 5);
    let (_, built) = train(&c, 1);
    assert!(!built.member_p_values.is_empty());
    for member in &built.member_p_values {
        for &p in member.values() {
            assert!(p < 0.05, "{p}");
        }
    }
    for w in built.trace.windows(2) {
        assert!(w[1].groups <= w[0].groups);
        assert!(w[1].remaining <= w[0].remaining);
    }
}

#[test]
fn unbiased_cohort_gets_unit_weights() {
    let (_, c) = cohort(0.0, 6);
    let models = fit_all_propensities(&c, &PropensityConfig::default()).unwrap();
    for m in &models {
        for (name, coef) in &m.coefficients {
            assert!(coef.abs() < 0.1, "{} {name} {coef}", m.code);
        }
    }
    let w = compute_weights(&c, &models, DEFAULT_CLIP).unwrap();
    let max_dev = w.weights.values().map(|x| (x - 1.0).abs()).fold(0.0, f64::max);
    assert!(max_dev <= 0.25, "{max_dev}");
}

#[test]
fn weighting_improves_balance_on_a_biased_cohort() {
    let (_, c) = cohort(1.0, 7);
    let models = fit_all_propensities(&c, &PropensityConfig::default()).unwrap();
    let w = compute_weights(&c, &models, DEFAULT_CLIP).unwrap().for_cohort(&c).unwrap();
    let mean_abs = |m: &std::collections::BTreeMap<String, f64>| m.values().map(|v| v.abs()).sum::<f64>() / m.len() as f64;
    let (mut better, mut total) = (0, 0);
    for s in c.catalog.ids() {
        let (Some(before), Some(after)) = (standardized_differences(&c, s, None), standardized_differences(&c, s, Some(&w))) else {
            continue;
        };
        total += 1;
        if mean_abs(&after) < mean_abs(&before) {
            better += 1;
        }
    }
    assert!(better * 10 >= total * 8, "{better}/{total}");
}

#[test]
fn sweep_report_recomputes_from_raw_rows() {
    let (_, c) = cohort(0.5, 8);
    let (_, built) = train(&c, 2);
    let ts = build_test_set(&c, &built.model, &TestSetConfig { seed: 3, ..TestSetConfig::default() }).unwrap();
    for p in &ts.patients {
        assert!(!built.model.metadata.training_ids.contains(&p.id));
    }
    let cfg = |d| SearchConfig {
        max_plan_size: d,
        budget: Budget::Simulations(300),
        ..SearchConfig::default()
    };
    let configs = vec![SweepConfig::mcts("d=2", cfg(2)), SweepConfig::mcts("d=4", cfg(4))];
    let report = run_sweep(&configs, &ts, &c, &built.model, 2, 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_report(dir.path(), "plan size", &report, &ts).unwrap();
    let raw = read_raw_csv(&dir.path().join("raw.csv")).unwrap();
    assert_eq!(raw, report.raw);
    let again = aggregate(&raw, ["d=2", "d=4"].into_iter(), 2);
    for (a, b) in again.iter().zip(&report.rows) {
        assert_eq!(a.decile_means.len(), DECILES);
        for (x, y) in a.decile_means.iter().zip(&b.decile_means) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.overall_mean - b.overall_mean).abs() < 1e-12);
    }
    for r in &raw {
        let p = c.patient(&r.patient_id).unwrap();
        let plan = c.catalog.plan_from_codes(&r.plan.split(';').filter(|s| !s.is_empty()).collect::<Vec<_>>()).unwrap();
        let after = score_risk(&built.model, p, &plan).unwrap();
        assert!((100.0 * (r.initial_risk - after) - r.risk_reduction).abs() < 1e-9);
    }
}
