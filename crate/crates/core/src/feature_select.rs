//! Ensemble construction by screening, random grouping and pruning.
//!
//! Every candidate interaction is first tested on its own. The survivors are
//! shuffled into groups, each group is fitted as one model and pruned by
//! backward elimination, and the remaining predictors are regrouped into
//! fewer, larger groups. Features per group grow by the number of pruned
//! predictors per group:
//!
//! ```text
//! f_{i+1} = f_i + p_{i+1} / n_i
//! n_{i+1} = max(ceil(|remaining| / f_{i+1}), target)
//! ```
//!
//! The loop ends once the group count reaches the target or a round prunes
//! nothing; each final group becomes one ensemble member. The length of stay
//! is part of every group and is never pruned.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{candidate_predictors, evaluate_predictor, Cohort, Predictor, PredictorId};
use crate::error::{Error, Result};
use crate::glm::{backward_eliminate, fit_weighted_logistic, roc_auc, wald_p_value, FitConfig};
use crate::scoring::{score_risk, EnsembleModel, MemberModel, ModelMetadata, Term};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleSpec {
    pub target_models: usize,
    pub initial_features_per_group: f64,
    pub alpha: f64,
    pub seed: u64,
    /// Safety stop for the regrouping loop.
    pub max_iterations: usize,
    /// Characteristics never used in predictors, e.g. ones derived from the outcome.
    pub excluded_characteristics: Vec<String>,
    #[serde(skip)]
    pub fit: FitConfig,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        EnsembleSpec {
            target_models: 15,
            initial_features_per_group: 50.0,
            alpha: 0.05,
            seed: 0,
            max_iterations: 100,
            excluded_characteristics: Vec::new(),
            fit: FitConfig::default(),
        }
    }
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.target_models < 1 {
            return Err(Error::InvalidConfig("target_models must be at least 1".into()));
        }
        if !(self.initial_features_per_group >= 1.0) {
            return Err(Error::InvalidConfig("initial features per group must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig("alpha must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// One round of the grouping loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub groups: usize,
    pub features_per_group: f64,
    /// Predictors entering the round.
    pub remaining: usize,
    pub pruned: usize,
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::InvalidInput(format!("writing trace: {e}")))?;
    }
    w.flush().map_err(|e| Error::io("trace", e))
}

/// Predictor values over the cohort's observed plans.
pub fn predictor_column(cohort: &Cohort, p: &Predictor) -> Result<Vec<f64>> {
    cohort
        .patients
        .iter()
        .map(|r| evaluate_predictor(p, r, &r.observed_plan))
        .collect()
}

pub fn outcome_labels(cohort: &Cohort) -> Vec<bool> {
    cohort.patients.iter().map(|p| p.observed_outcome).collect()
}

/// The candidate universe minus predictors on excluded characteristics.
pub fn screening_universe(cohort: &Cohort, excluded: &[String]) -> Vec<Predictor> {
    let names: Vec<String> = cohort
        .characteristics
        .iter()
        .filter(|c| !excluded.contains(c))
        .cloned()
        .collect();
    let all = candidate_predictors(&cohort.catalog, &cohort.characteristics);
    all.into_iter()
        .filter(|p| match &p.kind {
            crate::catalog::PredictorKind::ServiceCharacteristic { characteristic, .. } => {
                names.contains(characteristic)
            }
            _ => true,
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ScreenedPredictor {
    pub predictor: Predictor,
    pub p_value: f64,
}

/// Fits a weighted intercept + predictor model for every candidate and keeps
/// the estimable ones with Wald p below `alpha`.
pub fn screen_predictors(
    cohort: &Cohort,
    weights: &[f64],
    candidates: &[Predictor],
    alpha: f64,
    cfg: &FitConfig,
) -> Result<Vec<ScreenedPredictor>> {
    let y = outcome_labels(cohort);
    let results: Vec<Option<ScreenedPredictor>> = candidates
        .par_iter()
        .map(|p| {
            let col = predictor_column(cohort, p)?;
            let fit = fit_weighted_logistic(&[&col], &y, weights, cfg, None)?;
            Ok(match wald_p_value(&fit, 0) {
                Ok(pv) if pv < alpha && !fit.diagnostics.separated => Some(ScreenedPredictor {
                    predictor: p.clone(),
                    p_value: pv,
                }),
                _ => None,
            })
        })
        .collect::<Result<_>>()?;
    Ok(results.into_iter().flatten().collect())
}

/// Seeded near-equal partition of `items` into `n` groups.
pub fn shuffle_into_groups<T: Clone>(items: &[T], n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<T>> {
    let n = n.max(1);
    let mut shuffled = items.to_vec();
    shuffled.shuffle(rng);
    let (base, extra) = (items.len() / n, items.len() % n);
    let mut out = Vec::with_capacity(n);
    let mut it = shuffled.into_iter();
    for g in 0..n {
        let size = base + usize::from(g < extra);
        out.push(it.by_ref().take(size).collect());
    }
    out
}

/// First group count: `ceil(remaining / f0)` but at least `target`, and never
/// more groups than predictors.
pub fn initial_group_count(remaining: usize, f0: f64, target: usize) -> usize {
    clamp_groups((remaining as f64 / f0).ceil() as usize, remaining, target)
}

/// `(n_{i+1}, f_{i+1})` from the previous round.
pub fn next_group_count(
    features_per_group: f64,
    groups: usize,
    pruned: usize,
    remaining: usize,
    target: usize,
) -> (usize, f64) {
    let f = features_per_group + pruned as f64 / groups.max(1) as f64;
    let n = clamp_groups((remaining as f64 / f).ceil() as usize, remaining, target);
    (n, f)
}

fn clamp_groups(n: usize, remaining: usize, target: usize) -> usize {
    n.max(target).min(remaining).max(1)
}

/// A fitted and pruned group.
#[derive(Clone, Debug)]
pub struct PrunedGroup {
    pub member: MemberModel,
    /// Surviving predictors, ascending by id.
    pub survivors: Vec<PredictorId>,
    pub p_values: BTreeMap<PredictorId, f64>,
}

/// Fits the group plus length of stay and prunes it by backward elimination.
pub fn prune_group(
    group: &[PredictorId],
    columns: &BTreeMap<PredictorId, Vec<f64>>,
    los: &[f64],
    y: &[bool],
    weights: &[f64],
    alpha: f64,
    cfg: &FitConfig,
) -> Result<PrunedGroup> {
    let mut ids = group.to_vec();
    ids.sort_unstable();
    let mut cols: Vec<&[f64]> = ids.iter().map(|id| columns[id].as_slice()).collect();
    cols.push(los);
    let mut forced = vec![false; ids.len()];
    forced.push(true);
    let elim = match backward_eliminate(&cols, y, weights, alpha, &forced, cfg) {
        Ok(e) => e,
        Err(e) => {
            tracing::warn!(error = %e, size = ids.len(), "group fit failed; no survivors");
            return Ok(PrunedGroup {
                member: MemberModel {
                    intercept: 0.0,
                    coefs: BTreeMap::new(),
                },
                survivors: Vec::new(),
                p_values: BTreeMap::new(),
            });
        }
    };
    let mut coefs = BTreeMap::new();
    let mut survivors = Vec::new();
    let mut p_values = BTreeMap::new();
    for (k, &j) in elim.kept.iter().enumerate() {
        let c = elim.fit.model.coefficients[k];
        if j == ids.len() {
            coefs.insert(Term::Los, if elim.fit.diagnostics.column_estimable(k) { c } else { 0.0 });
        } else {
            coefs.insert(Term::Predictor(ids[j]), c);
            survivors.push(ids[j]);
            p_values.insert(ids[j], elim.fit.diagnostics.column_p_value(k).unwrap_or(1.0));
        }
    }
    Ok(PrunedGroup {
        member: MemberModel {
            intercept: elim.fit.model.intercept,
            coefs,
        },
        survivors,
        p_values,
    })
}

#[derive(Clone, Debug)]
pub struct BuiltEnsemble {
    pub model: EnsembleModel,
    pub trace: Vec<TraceRow>,
    /// Per member, the final Wald p-value of each surviving predictor.
    pub member_p_values: Vec<BTreeMap<PredictorId, f64>>,
}

/// Runs the grouping loop on already screened predictors.
pub fn build_ensemble(
    spec: &EnsembleSpec,
    cohort: &Cohort,
    weights: &[f64],
    screened: &[Predictor],
) -> Result<BuiltEnsemble> {
    spec.validate()?;
    if screened.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let y = outcome_labels(cohort);
    let los: Vec<f64> = cohort.patients.iter().map(|p| p.los).collect();
    let dictionary: BTreeMap<PredictorId, Predictor> =
        screened.iter().map(|p| (p.id, p.clone())).collect();
    let columns: BTreeMap<PredictorId, Vec<f64>> = screened
        .par_iter()
        .map(|p| Ok((p.id, predictor_column(cohort, p)?)))
        .collect::<Result<_>>()?;

    let mut remaining: Vec<PredictorId> = dictionary.keys().copied().collect();
    let mut f = spec.initial_features_per_group;
    let mut n = initial_group_count(remaining.len(), f, spec.target_models);
    let mut trace = Vec::new();
    let mut iteration = 0;
    let finals = loop {
        iteration += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(iteration as u64);
        let groups = shuffle_into_groups(&remaining, n, &mut rng);
        let pruned_groups: Vec<PrunedGroup> = groups
            .par_iter()
            .map(|g| prune_group(g, &columns, &los, &y, weights, spec.alpha, &spec.fit))
            .collect::<Result<_>>()?;
        let mut survivors: Vec<PredictorId> =
            pruned_groups.iter().flat_map(|g| g.survivors.iter().copied()).collect();
        survivors.sort_unstable();
        let pruned = remaining.len() - survivors.len();
        trace.push(TraceRow {
            iteration,
            groups: n,
            features_per_group: f,
            remaining: remaining.len(),
            pruned,
        });
        tracing::info!(iteration, groups = n, features_per_group = f, remaining = remaining.len(), pruned, "grouping round");
        remaining = survivors;
        if remaining.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        if n <= spec.target_models || pruned == 0 || iteration >= spec.max_iterations {
            break pruned_groups;
        }
        (n, f) = next_group_count(f, n, pruned, remaining.len(), spec.target_models);
    };

    let (members, member_p_values): (Vec<MemberModel>, Vec<_>) = finals
        .into_iter()
        .filter(|g| !g.survivors.is_empty())
        .map(|g| (g.member, g.p_values))
        .unzip();
    let used: Vec<Predictor> = remaining.iter().map(|id| dictionary[id].clone()).collect();
    let metadata = ModelMetadata {
        seed: spec.seed,
        alpha: spec.alpha,
        target_models: spec.target_models,
        initial_features_per_group: spec.initial_features_per_group,
        screened_predictors: screened.len(),
        weighted: weights.iter().any(|&w| w != 1.0),
        trace: trace.clone(),
        training_auc: None,
        training_ids: Vec::new(),
    };
    let model = EnsembleModel::new(members, used, metadata)?;
    Ok(BuiltEnsemble {
        model,
        trace,
        member_p_values,
    })
}

/// Screening plus ensemble construction on a training cohort; records the
/// training ids and in-sample AUC in the model metadata.
pub fn train_ensemble(spec: &EnsembleSpec, cohort: &Cohort, weights: &[f64]) -> Result<BuiltEnsemble> {
    spec.validate()?;
    let universe = screening_universe(cohort, &spec.excluded_characteristics);
    let screened = screen_predictors(cohort, weights, &universe, spec.alpha, &spec.fit)?;
    tracing::info!(candidates = universe.len(), screened = screened.len(), "screening done");
    let predictors: Vec<Predictor> = screened.into_iter().map(|s| s.predictor).collect();
    let mut built = build_ensemble(spec, cohort, weights, &predictors)?;
    let scores: Vec<f64> = cohort
        .patients
        .iter()
        .map(|p| score_risk(&built.model, p, &p.observed_plan))
        .collect::<Result<_>>()?;
    built.model.metadata.training_auc = roc_auc(&scores, &outcome_labels(cohort)).ok();
    built.model.metadata.training_ids = cohort.patients.iter().map(|p| p.id.clone()).collect();
    Ok(built)
}

/// Seeded split of `0..n` into (training, holdout) index sets, both ascending.
pub fn split_holdout(n: usize, holdout_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = ((n as f64) * holdout_fraction.clamp(0.0, 1.0)).round() as usize;
    let (mut hold, mut train) = (idx[..k].to_vec(), idx[k..].to_vec());
    hold.sort_unstable();
    train.sort_unstable();
    (train, hold)
}

/// Mean and sample standard deviation of member predictor counts.
pub fn member_size_summary(model: &EnsembleModel) -> (f64, f64) {
    let sizes: Vec<f64> = model
        .members()
        .iter()
        .map(|m| m.predictor_ids().count() as f64)
        .collect();
    let n = sizes.len() as f64;
    let mean = sizes.iter().sum::<f64>() / n;
    let sd = if sizes.len() > 1 {
        (sizes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}
