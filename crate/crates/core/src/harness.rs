//! Evaluation protocol: decile-stratified test sets, configuration sweeps
//! with per-decile risk-reduction tables, and cross-validated ROC reports.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::catalog::{Cohort, PatientRecord, ServiceCatalog};
use crate::error::{Error, Result};
use crate::feature_select::{outcome_labels, train_ensemble, EnsembleSpec};
use crate::glm::{k_fold_cv, roc_auc, roc_curve, RocPoint};
use crate::scoring::{score_risk, EnsembleModel};
use crate::search::{
    dijkstra_search, finish, search, Budget, DijkstraConfig, Found, SearchConfig, SearchMode, SearchResult,
};

pub const DECILES: usize = 10;

#[derive(Clone, Debug)]
pub struct TestSetConfig {
    pub pool_size: usize,
    pub per_decile: usize,
    pub seed: u64,
}

impl Default for TestSetConfig {
    fn default() -> Self {
        TestSetConfig {
            pool_size: 500,
            per_decile: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub id: String,
    pub initial_risk: f64,
    /// 1 (lowest risk) to 10.
    pub decile: usize,
    pub selected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecileBounds {
    pub decile: usize,
    pub min_risk: f64,
    pub max_risk: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestSet {
    /// Selected patients, ordered by decile then risk.
    pub patients: Vec<PoolEntry>,
    pub bounds: Vec<DecileBounds>,
    /// The sampled pool with each patient's decile, for scatter plots.
    pub pool: Vec<PoolEntry>,
    /// Ids that were not eligible because the model was trained on them.
    pub excluded: Vec<String>,
}

/// Samples a pool of patients the model was not trained on, cuts it into
/// risk deciles by rank and draws the same number of patients from each.
pub fn build_test_set(cohort: &Cohort, ensemble: &EnsembleModel, cfg: &TestSetConfig) -> Result<TestSet> {
    let training: HashSet<&str> = ensemble.metadata.training_ids.iter().map(String::as_str).collect();
    let eligible: Vec<&PatientRecord> = cohort
        .patients
        .iter()
        .filter(|p| !training.contains(p.id.as_str()))
        .collect();
    if eligible.len() < cfg.pool_size {
        return Err(Error::InvalidInput(format!(
            "{} eligible patients; the test pool needs {}",
            eligible.len(),
            cfg.pool_size
        )));
    }
    if cfg.pool_size < DECILES * cfg.per_decile {
        return Err(Error::InvalidConfig("pool smaller than the test set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sampled: Vec<&&PatientRecord> = eligible.choose_multiple(&mut rng, cfg.pool_size).collect();
    let mut pool: Vec<PoolEntry> = sampled
        .iter()
        .map(|p| {
            Ok(PoolEntry {
                id: p.id.clone(),
                initial_risk: score_risk(ensemble, p, &p.observed_plan)?,
                decile: 0,
                selected: false,
            })
        })
        .collect::<Result<_>>()?;
    pool.sort_by(|a, b| a.initial_risk.total_cmp(&b.initial_risk).then_with(|| a.id.cmp(&b.id)));
    let n = pool.len();
    for (rank, e) in pool.iter_mut().enumerate() {
        e.decile = rank * DECILES / n + 1;
    }
    let mut bounds = Vec::with_capacity(DECILES);
    let mut patients = Vec::with_capacity(DECILES * cfg.per_decile);
    for k in 1..=DECILES {
        let members: Vec<usize> = (0..n).filter(|&i| pool[i].decile == k).collect();
        bounds.push(DecileBounds {
            decile: k,
            min_risk: pool[members[0]].initial_risk,
            max_risk: pool[*members.last().expect("non-empty decile")].initial_risk,
        });
        let mut picks: Vec<usize> = members.choose_multiple(&mut rng, cfg.per_decile).copied().collect();
        picks.sort_unstable();
        for i in picks {
            pool[i].selected = true;
            patients.push(pool[i].clone());
        }
    }
    let mut excluded: Vec<String> = training.iter().map(|s| s.to_string()).collect();
    excluded.sort();
    Ok(TestSet {
        patients,
        bounds,
        pool,
        excluded,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum Algorithm {
    Mcts(SearchConfig),
    Dijkstra(DijkstraConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub name: String,
    #[serde(flatten)]
    pub algorithm: Algorithm,
}

impl SweepConfig {
    pub fn mcts(name: impl Into<String>, cfg: SearchConfig) -> Self {
        SweepConfig {
            name: name.into(),
            algorithm: Algorithm::Mcts(cfg),
        }
    }

    /// One search; `seed` replaces the configured MCTS seed. A zero budget
    /// runs no search and keeps the observed plan, so its reduction is 0.
    pub fn run(&self, ensemble: &EnsembleModel, catalog: &ServiceCatalog, patient: &PatientRecord, seed: u64) -> Result<SearchResult> {
        match &self.algorithm {
            Algorithm::Mcts(cfg) if cfg.budget.is_zero() => {
                cfg.validate(catalog.len())?;
                let found = Found {
                    plan: patient.observed_plan.clone(),
                    simulations: 0,
                    root_path: Vec::new(),
                    phases: Vec::new(),
                    path_distance: None,
                    budget_exhausted: true,
                };
                finish(cfg.mode.as_str(), ensemble, catalog, patient, found)
            }
            Algorithm::Mcts(cfg) => {
                let cfg = SearchConfig {
                    seed,
                    ..cfg.clone()
                };
                search(ensemble, catalog, patient, &cfg)
            }
            Algorithm::Dijkstra(cfg) => dijkstra_search(ensemble, catalog, patient, cfg),
        }
    }
}

/// One search on one patient in one repeat.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub config: String,
    pub repeat: usize,
    pub seed: u64,
    pub patient_id: String,
    pub decile: usize,
    pub initial_risk: f64,
    pub risk: f64,
    pub risk_reduction: f64,
    pub plan_size: usize,
    pub plan: String,
    pub simulations: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub config: String,
    /// Mean reduction in percentage points for deciles 1 to 10.
    pub decile_means: Vec<f64>,
    pub overall_mean: f64,
    /// Sample standard deviation over repeats of the per-repeat overall mean.
    pub overall_spread: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TimingRow {
    pub config: String,
    pub seconds: f64,
    pub simulations: u64,
    pub simulations_per_second: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub raw: Vec<RawRow>,
    pub timing: Vec<TimingRow>,
    pub repeats: usize,
}

/// Seed of one search, distinct per repeat and patient.
pub fn run_seed(base: u64, repeat: usize, patient_index: usize) -> u64 {
    base.wrapping_add(1_000_003 * repeat as u64).wrapping_add(patient_index as u64)
}

/// Runs every configuration on every test patient `repeats` times.
pub fn run_sweep(
    configs: &[SweepConfig],
    test_set: &TestSet,
    cohort: &Cohort,
    ensemble: &EnsembleModel,
    repeats: usize,
    base_seed: u64,
) -> Result<ExperimentReport> {
    let patients: Vec<&PatientRecord> = test_set
        .patients
        .iter()
        .map(|e| cohort.patient(&e.id).ok_or_else(|| Error::UnknownPatient(e.id.clone())))
        .collect::<Result<_>>()?;
    let mut raw = Vec::new();
    let mut timing = Vec::new();
    for cfg in configs {
        let jobs: Vec<(usize, usize)> = (0..repeats)
            .flat_map(|r| (0..patients.len()).map(move |i| (r, i)))
            .collect();
        let start = Instant::now();
        let rows: Vec<RawRow> = jobs
            .par_iter()
            .map(|&(r, i)| {
                let seed = run_seed(base_seed, r, i);
                let res = cfg.run(ensemble, &cohort.catalog, patients[i], seed)?;
                Ok(RawRow {
                    config: cfg.name.clone(),
                    repeat: r,
                    seed,
                    patient_id: patients[i].id.clone(),
                    decile: test_set.patients[i].decile,
                    initial_risk: res.initial_risk,
                    risk: res.risk,
                    risk_reduction: res.risk_reduction,
                    plan_size: res.services.len(),
                    plan: res.plan.join(";"),
                    simulations: res.simulations,
                })
            })
            .collect::<Result<_>>()?;
        let seconds = start.elapsed().as_secs_f64();
        let sims: u64 = rows.iter().map(|r| r.simulations).sum();
        timing.push(TimingRow {
            config: cfg.name.clone(),
            seconds,
            simulations: sims,
            simulations_per_second: sims as f64 / seconds.max(1e-9),
        });
        raw.extend(rows);
    }
    let rows = aggregate(&raw, configs.iter().map(|c| c.name.as_str()), repeats);
    Ok(ExperimentReport {
        rows,
        raw,
        timing,
        repeats,
    })
}

/// MCTS against Dijkstra, with Dijkstra allowed as many plan evaluations as
/// MCTS gets simulations.
pub fn compare_algorithms(
    mcts: &SearchConfig,
    test_set: &TestSet,
    cohort: &Cohort,
    ensemble: &EnsembleModel,
    repeats: usize,
    base_seed: u64,
) -> Result<ExperimentReport> {
    let evaluations = match mcts.budget {
        Budget::Simulations(n) => Some(n),
        Budget::Seconds(_) => None,
    };
    let configs = [
        SweepConfig::mcts("mcts", mcts.clone()),
        SweepConfig {
            name: "dijkstra".into(),
            algorithm: Algorithm::Dijkstra(DijkstraConfig {
                max_plan_size: mcts.max_plan_size,
                max_evaluations: evaluations,
                pinned: mcts.pinned.clone(),
                ..DijkstraConfig::default()
            }),
        },
    ];
    run_sweep(&configs, test_set, cohort, ensemble, repeats, base_seed)
}

/// Per-config decile and overall means of the raw rows.
pub fn aggregate<'a>(raw: &[RawRow], configs: impl Iterator<Item = &'a str>, repeats: usize) -> Vec<ReportRow> {
    configs
        .map(|name| {
            let rows: Vec<&RawRow> = raw.iter().filter(|r| r.config == name).collect();
            let decile_means = (1..=DECILES)
                .map(|k| mean(rows.iter().filter(|r| r.decile == k).map(|r| r.risk_reduction)))
                .collect();
            let overall_mean = mean(rows.iter().map(|r| r.risk_reduction));
            let per_repeat: Vec<f64> = (0..repeats)
                .map(|rep| mean(rows.iter().filter(|r| r.repeat == rep).map(|r| r.risk_reduction)))
                .collect();
            ReportRow {
                config: name.to_string(),
                decile_means,
                overall_mean,
                overall_spread: sample_sd(&per_repeat),
            }
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Per-repeat overall mean reduction of one config.
pub fn repeat_means(report: &ExperimentReport, config: &str) -> Vec<f64> {
    (0..report.repeats)
        .map(|rep| {
            mean(
                report
                    .raw
                    .iter()
                    .filter(|r| r.config == config && r.repeat == rep)
                    .map(|r| r.risk_reduction),
            )
        })
        .collect()
}

/// Per-repeat mean reduction of one config within one decile.
pub fn repeat_decile_means(report: &ExperimentReport, config: &str, decile: usize) -> Vec<f64> {
    (0..report.repeats)
        .map(|rep| {
            mean(
                report
                    .raw
                    .iter()
                    .filter(|r| r.config == config && r.repeat == rep && r.decile == decile)
                    .map(|r| r.risk_reduction),
            )
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PairedTest {
    pub mean_difference: f64,
    pub t: f64,
    /// One-sided p-value for a positive mean difference.
    pub p_value: f64,
}

/// One-sided paired t-test of `a > b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidInput("paired test needs two equal samples of size >= 2".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let m = d.iter().sum::<f64>() / n;
    let sd = sample_sd(&d);
    let t = if sd > 0.0 {
        m / (sd / n.sqrt())
    } else if m > 0.0 {
        f64::INFINITY
    } else if m < 0.0 {
        f64::NEG_INFINITY
    } else {
        0.0
    };
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("valid degrees of freedom");
    let p_value = if t.is_infinite() {
        if t > 0.0 { 0.0 } else { 1.0 }
    } else {
        1.0 - dist.cdf(t)
    };
    Ok(PairedTest {
        mean_difference: m,
        t,
        p_value,
    })
}

/// Configurations for the named experiment suites.
pub fn suite_configs(suite: &str, simulations: u64) -> Result<Vec<SweepConfig>> {
    let base = SearchConfig {
        budget: Budget::Simulations(simulations),
        ..SearchConfig::default()
    };
    let out = match suite {
        "tuning" => {
            let mut v = Vec::new();
            for c in [0.01, 0.05, 0.2, 1.0] {
                v.push(SweepConfig::mcts(
                    format!("C={c} W=0.1"),
                    SearchConfig { exploration: c, mode: SearchMode::PhMast, ..base.clone() },
                ));
            }
            for w in [0.0, 0.01, 1.0] {
                v.push(SweepConfig::mcts(
                    format!("C=0.05 W={w}"),
                    SearchConfig { history_weight: w, mode: SearchMode::PhMast, ..base.clone() },
                ));
            }
            v
        }
        "enhancements" => {
            let mut v = Vec::new();
            for sims in [simulations / 10, simulations / 2, simulations] {
                for mode in SearchMode::ALL {
                    v.push(SweepConfig::mcts(
                        format!("{mode} {sims}"),
                        SearchConfig { mode, budget: Budget::Simulations(sims), ..base.clone() },
                    ));
                }
            }
            v
        }
        "plan-size" => (1..=8)
            .map(|d| SweepConfig::mcts(format!("d={d}"), SearchConfig { max_plan_size: d, ..base.clone() }))
            .collect(),
        "dijkstra" => {
            let mut v = vec![SweepConfig::mcts("mcts", base.clone())];
            v.push(SweepConfig {
                name: "dijkstra".into(),
                algorithm: Algorithm::Dijkstra(DijkstraConfig {
                    max_plan_size: base.max_plan_size,
                    max_evaluations: Some(simulations),
                    ..DijkstraConfig::default()
                }),
            });
            v
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown suite {other:?}; expected tuning, enhancements, plan-size, dijkstra or roc"
            )))
        }
    };
    Ok(out)
}

/// The patient and both plans side by side.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CaseReport {
    pub patient_id: String,
    pub decile: usize,
    /// Characteristics with a nonzero value.
    pub conditions: BTreeMap<String, f64>,
    pub los: f64,
    pub recommended_plan: Vec<String>,
    pub recommended_risk: f64,
    pub observed_plan: Vec<String>,
    pub observed_risk: f64,
}

pub fn case_report(catalog: &ServiceCatalog, patient: &PatientRecord, decile: usize, result: &SearchResult) -> CaseReport {
    CaseReport {
        patient_id: patient.id.clone(),
        decile,
        conditions: patient
            .characteristics
            .iter()
            .filter(|(_, v)| **v != 0.0)
            .map(|(k, v)| (k.clone(), *v))
            .collect(),
        los: patient.los,
        recommended_plan: result.plan.clone(),
        recommended_risk: result.risk,
        observed_plan: catalog.plan_codes(&patient.observed_plan),
        observed_risk: result.initial_risk,
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv: {e}"))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| Error::InvalidInput(format!("csv: {e}")))
}

/// Summary table with one column per decile plus the overall mean.
pub fn summary_csv(rows: &[ReportRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["config".to_string()];
    header.extend((1..=DECILES).map(|k| format!("decile_{k}")));
    header.extend(["all".to_string(), "spread".to_string()]);
    w.write_record(&header).map_err(csv_error)?;
    for r in rows {
        let mut rec = vec![r.config.clone()];
        rec.extend(r.decile_means.iter().map(|v| v.to_string()));
        rec.push(r.overall_mean.to_string());
        rec.push(r.overall_spread.to_string());
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| Error::InvalidInput(format!("csv: {e}")))
}

pub fn summary_markdown(title: &str, rows: &[ReportRow], repeats: usize) -> String {
    let mut s = format!("# {title}\n\nMean risk reduction in percentage points per initial-risk decile. ");
    let _ = writeln!(s, "The ± column is the standard deviation over {repeats} repeats of the overall mean.\n");
    s.push_str("| Config |");
    for k in 1..=DECILES {
        let _ = write!(s, " {k} |");
    }
    s.push_str(" All |\n|---|");
    for _ in 0..=DECILES {
        s.push_str("---:|");
    }
    s.push('\n');
    for r in rows {
        let _ = write!(s, "| {} |", r.config);
        for v in &r.decile_means {
            let _ = write!(s, " {v:.2} |");
        }
        let _ = writeln!(s, " {:.2} ± {:.3} |", r.overall_mean, r.overall_spread);
    }
    s
}

/// Writes `raw.csv`, `summary.csv`, `summary.md`, `test_set.json`,
/// `pool.csv` and `timing.csv` into `dir`. Everything except the timing file
/// depends only on the inputs and seeds.
pub fn write_report(dir: &Path, title: &str, report: &ExperimentReport, test_set: &TestSet) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("raw.csv"), &to_csv(&report.raw)?)?;
    write_file(&dir.join("summary.csv"), &summary_csv(&report.rows)?)?;
    write_file(
        &dir.join("summary.md"),
        summary_markdown(title, &report.rows, report.repeats).as_bytes(),
    )?;
    write_file(
        &dir.join("test_set.json"),
        serde_json::to_string_pretty(test_set).expect("test set serialization").as_bytes(),
    )?;
    write_file(&dir.join("pool.csv"), &to_csv(&test_set.pool)?)?;
    write_file(&dir.join("timing.csv"), &to_csv(&report.timing)?)?;
    Ok(())
}

/// Raw rows read back from `raw.csv`.
pub fn read_raw_csv(path: &Path) -> Result<Vec<RawRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct RocReport {
    pub folds: usize,
    pub ensemble_auc: Vec<f64>,
    pub ensemble_mean: f64,
    pub ensemble_sd: f64,
    /// Per fold, the held-out AUC of every member.
    pub member_auc: Vec<Vec<f64>>,
    pub member_mean_min: f64,
    pub member_mean_max: f64,
    /// ROC of the pooled out-of-fold ensemble scores.
    pub curve: Vec<RocPoint>,
}

/// K-fold cross-validation of the whole training pipeline: each fold
/// retrains the ensemble on the other folds and scores the held-out fold.
pub fn evaluate_model(cohort: &Cohort, weights: &[f64], spec: &EnsembleSpec, folds: usize, seed: u64) -> Result<RocReport> {
    let labels = outcome_labels(cohort);
    let mut member_auc = Vec::new();
    let mut pooled_scores = vec![f64::NAN; cohort.len()];
    let results = k_fold_cv(&labels, folds, seed, |train, test| {
        let train_cohort = cohort.subset(train);
        let w: Vec<f64> = train.iter().map(|&i| weights[i]).collect();
        let built = train_ensemble(spec, &train_cohort, &w)?;
        let test_labels: Vec<bool> = test.iter().map(|&i| labels[i]).collect();
        let mut per_member = Vec::new();
        for k in 0..built.model.members().len() {
            let s: Vec<f64> = test
                .iter()
                .map(|&i| {
                    let p = &cohort.patients[i];
                    built.model.member_scores(p, &p.observed_plan).map(|v| v[k])
                })
                .collect::<Result<_>>()?;
            per_member.push(roc_auc(&s, &test_labels)?);
        }
        member_auc.push(per_member);
        let scores: Vec<f64> = test
            .iter()
            .map(|&i| {
                let p = &cohort.patients[i];
                score_risk(&built.model, p, &p.observed_plan)
            })
            .collect::<Result<_>>()?;
        for (&i, &s) in test.iter().zip(&scores) {
            pooled_scores[i] = s;
        }
        Ok(scores)
    })?;
    let ensemble_auc: Vec<f64> = results.iter().map(|r| r.auc).collect();
    let scored: Vec<usize> = (0..cohort.len()).filter(|&i| pooled_scores[i].is_finite()).collect();
    let curve = roc_curve(
        &scored.iter().map(|&i| pooled_scores[i]).collect::<Vec<_>>(),
        &scored.iter().map(|&i| labels[i]).collect::<Vec<_>>(),
    )?;
    let member_means: Vec<f64> = member_auc
        .iter()
        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        .collect();
    Ok(RocReport {
        folds: ensemble_auc.len(),
        ensemble_mean: ensemble_auc.iter().sum::<f64>() / ensemble_auc.len().max(1) as f64,
        ensemble_sd: sample_sd(&ensemble_auc),
        ensemble_auc,
        member_mean_min: member_means.iter().cloned().fold(f64::INFINITY, f64::min),
        member_mean_max: member_means.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        member_auc,
        curve,
    })
}

pub fn write_roc_report(dir: &Path, report: &RocReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("roc.csv"), &to_csv(&report.curve)?)?;
    write_file(
        &dir.join("roc.json"),
        serde_json::to_string_pretty(report).expect("roc serialization").as_bytes(),
    )?;
    let mut md = String::from("# Cross-validated discrimination\n\n");
    let _ = writeln!(
        md,
        "Ensemble AUC over {} folds: {:.3} ± {:.3} (sample standard deviation).\n",
        report.folds, report.ensemble_mean, report.ensemble_sd
    );
    let _ = writeln!(
        md,
        "Mean member AUC per fold ranges from {:.3} to {:.3}.",
        report.member_mean_min, report.member_mean_max
    );
    write_file(&dir.join("roc.md"), md.as_bytes())
}

/// Shuffles outcome labels; used as a permutation control.
pub fn shuffle_outcomes(cohort: &Cohort, seed: u64) -> Cohort {
    let mut labels = outcome_labels(cohort);
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut c = cohort.clone();
    for (p, l) in c.patients.iter_mut().zip(labels) {
        p.observed_outcome = l;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_ground_truth, sample_cohort, CohortSpec};

    fn setup() -> (Cohort, EnsembleModel) {
        let spec = CohortSpec {
            n_patients: 800,
            n_services: 10,
            n_characteristics: 5,
            mean_plan_size: 3.0,
            seed: 3,
            ..CohortSpec::default()
        };
        let truth = generate_ground_truth(&spec).unwrap();
        let cohort = sample_cohort(&truth, &spec).unwrap();
        let mut model = truth.as_ensemble().unwrap();
        model.metadata.training_ids = cohort.patients[..200].iter().map(|p| p.id.clone()).collect();
        (cohort, model)
    }

    #[test]
    fn deciles_hold_ten_each_in_risk_order() {
        let (cohort, model) = setup();
        let ts = build_test_set(&cohort, &model, &TestSetConfig::default()).unwrap();
        assert_eq!(ts.patients.len(), 100);
        for k in 1..=DECILES {
            assert_eq!(ts.patients.iter().filter(|p| p.decile == k).count(), 10);
        }
        for w in ts.bounds.windows(2) {
            assert!(w[0].max_risk <= w[1].min_risk);
        }
        for p in &ts.patients {
            let b = &ts.bounds[p.decile - 1];
            assert!(p.initial_risk >= b.min_risk && p.initial_risk <= b.max_risk);
            assert!(!model.metadata.training_ids.contains(&p.id));
        }
        assert_eq!(ts, build_test_set(&cohort, &model, &TestSetConfig::default()).unwrap());
    }

    #[test]
    fn too_few_eligible_patients() {
        let (cohort, mut model) = setup();
        model.metadata.training_ids = cohort.patients[..400].iter().map(|p| p.id.clone()).collect();
        assert!(build_test_set(&cohort, &model, &TestSetConfig::default()).is_err());
    }

    #[test]
    fn zero_budget_reduces_nothing_and_aggregates_recompute() {
        let (cohort, model) = setup();
        let ts = build_test_set(&cohort, &model, &TestSetConfig::default()).unwrap();
        let zero = SearchConfig {
            budget: Budget::Simulations(0),
            max_plan_size: 3,
            ..SearchConfig::default()
        };
        let some = SearchConfig {
            budget: Budget::Simulations(300),
            ..zero.clone()
        };
        let configs = vec![SweepConfig::mcts("zero", zero), SweepConfig::mcts("some", some)];
        let report = run_sweep(&configs, &ts, &cohort, &model, 2, 7).unwrap();
        assert_eq!(report.raw.len(), 2 * 2 * 100);
        for r in report.raw.iter().filter(|r| r.config == "zero") {
            let p = cohort.patient(&r.patient_id).unwrap();
            assert_eq!(r.risk_reduction, 0.0);
            assert_eq!(r.plan, cohort.catalog.plan_codes(&p.observed_plan).join(";"));
        }
        for row in &report.rows {
            let rows: Vec<&RawRow> = report.raw.iter().filter(|r| r.config == row.config).collect();
            let overall = rows.iter().map(|r| r.risk_reduction).sum::<f64>() / rows.len() as f64;
            assert!((overall - row.overall_mean).abs() < 1e-9);
            let by_decile = row.decile_means.iter().sum::<f64>() / DECILES as f64;
            assert!((by_decile - row.overall_mean).abs() < 1e-9);
        }
    }

    #[test]
    fn paired_test_reference() {
        // differences 1, 2, 3, 4, 5: mean 3, sd sqrt(2.5), t = 3 / (sqrt(2.5) / sqrt(5)) = 4.2426
        let a = [2.0, 4.0, 6.0, 8.0, 10.0];
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        let t = paired_t_test(&a, &b).unwrap();
        assert!((t.t - 4.242_640_687).abs() < 1e-6);
        // upper tail of t with 4 degrees of freedom at 4.2426
        assert!((t.p_value - 0.006_628).abs() < 1e-4, "{}", t.p_value);
        let flat = paired_t_test(&b, &b).unwrap();
        assert_eq!(flat.p_value, 1.0 - 0.5);
    }

    #[test]
    fn summary_has_decile_columns() {
        let rows = vec![ReportRow {
            config: "x".into(),
            decile_means: (1..=10).map(|k| k as f64).collect(),
            overall_mean: 5.5,
            overall_spread: 0.1,
        }];
        let csv = String::from_utf8(summary_csv(&rows).unwrap()).unwrap();
        assert!(csv.starts_with("config,decile_1,decile_2,decile_3,decile_4,decile_5,decile_6,decile_7,decile_8,decile_9,decile_10,all,spread\n"));
        let md = summary_markdown("t", &rows, 5);
        assert!(md.contains("| Config | 1 | 2 | 3 | 4 | 5 | 6 | 7 | 8 | 9 | 10 | All |"));
    }

    #[test]
    fn unknown_suite_is_rejected() {
        assert!(suite_configs("speed", 100).is_err());
        assert_eq!(suite_configs("plan-size", 100).unwrap().len(), 8);
    }
}
