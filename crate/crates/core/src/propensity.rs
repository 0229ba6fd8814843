//! Per-service propensity models and the stabilized inverse-probability
//! weights derived from them.
//!
//! Each record's weight is the product over services of
//! `rate / propensity` for services it received and
//! `(1 - rate) / (1 - propensity)` for services it did not, with every factor
//! clipped to the configured bounds.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{Cohort, PatientRecord, ServiceId};
use crate::error::{Error, Result};
use crate::glm::{fit_weighted_logistic, sigmoid, FitConfig};

pub const DEFAULT_CLIP: (f64, f64) = (0.05, 20.0);

#[derive(Clone, Debug)]
pub struct PropensityConfig {
    /// Family-wise level for keeping a characteristic in a propensity model,
    /// split evenly over every (service, characteristic) pair of the cohort.
    /// `None` keeps every characteristic.
    pub selection_alpha: Option<f64>,
    pub fit: FitConfig,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        PropensityConfig {
            selection_alpha: Some(0.05),
            fit: FitConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub service: ServiceId,
    pub code: String,
    /// Share of the cohort receiving the service.
    pub marginal_rate: f64,
    /// Every record or no record received the service; contributes a factor of 1.
    pub degenerate: bool,
    /// The fit hit the separation threshold; propensities run close to 0 or 1.
    pub separated: bool,
    pub intercept: f64,
    /// Coefficients on raw characteristic values.
    pub coefficients: BTreeMap<String, f64>,
}

impl PropensityModel {
    pub fn propensity(&self, patient: &PatientRecord) -> Result<f64> {
        let mut eta = self.intercept;
        for (name, c) in &self.coefficients {
            eta += c * patient.characteristic(name)?;
        }
        Ok(sigmoid(eta))
    }
}

/// Logistic model of receiving `service` given the characteristics.
///
/// With a selection level set, characteristics are removed by backward
/// elimination, so a service assigned independently of the characteristics
/// usually ends with an intercept-only model.
pub fn fit_propensity(cohort: &Cohort, service: ServiceId, cfg: &PropensityConfig) -> Result<PropensityModel> {
    if !cohort.catalog.contains(service) {
        return Err(Error::UnknownServices(vec![service.to_string()]));
    }
    let y: Vec<bool> = cohort
        .patients
        .iter()
        .map(|p| p.observed_plan.contains(service))
        .collect();
    let users = y.iter().filter(|&&v| v).count();
    let n = y.len();
    let mut model = PropensityModel {
        service,
        code: cohort.catalog.code(service).to_string(),
        marginal_rate: users as f64 / n.max(1) as f64,
        degenerate: false,
        separated: false,
        intercept: 0.0,
        coefficients: BTreeMap::new(),
    };
    if users == 0 || users == n {
        tracing::warn!(service = %model.code, users, "degenerate service; weight factor fixed at 1");
        model.degenerate = true;
        return Ok(model);
    }

    let names = &cohort.characteristics;
    let data: Vec<Vec<f64>> = names
        .iter()
        .map(|name| cohort.patients.iter().map(|p| p.characteristics[name]).collect())
        .collect();
    let w = vec![1.0; n];
    let tests = names.len().max(1) * cohort.catalog.len();
    let alpha = cfg.selection_alpha.map(|a| a / tests as f64);

    let mut kept: Vec<usize> = (0..names.len()).collect();
    loop {
        let cols: Vec<&[f64]> = kept.iter().map(|&j| data[j].as_slice()).collect();
        let fit = fit_weighted_logistic(&cols, &y, &w, &cfg.fit, None)?;
        let d = &fit.diagnostics;
        // aliased columns carry no information of their own
        let aliased: Vec<usize> = (0..kept.len()).filter(|&k| d.aliased[k + 1]).collect();
        let drop = if !aliased.is_empty() {
            aliased
        } else if d.separated {
            // a separating characteristic is as strong a predictor as it gets
            Vec::new()
        } else if let Some(alpha) = alpha {
            let mut worst: Option<(usize, f64)> = None;
            for k in 0..kept.len() {
                let p = d.column_p_value(k).unwrap_or(1.0);
                if p >= alpha && worst.is_none_or(|(_, q)| p > q) {
                    worst = Some((k, p));
                }
            }
            worst.map(|(k, _)| vec![k]).unwrap_or_default()
        } else {
            Vec::new()
        };
        if drop.is_empty() {
            model.separated = d.separated;
            model.intercept = fit.model.intercept;
            for (k, &j) in kept.iter().enumerate() {
                if !d.aliased[k + 1] {
                    model.coefficients.insert(names[j].clone(), fit.model.coefficients[k]);
                }
            }
            return Ok(model);
        }
        kept = kept
            .iter()
            .enumerate()
            .filter(|(k, _)| !drop.contains(k))
            .map(|(_, &j)| j)
            .collect();
    }
}

/// Fits every service's propensity model in parallel.
pub fn fit_all_propensities(cohort: &Cohort, cfg: &PropensityConfig) -> Result<Vec<PropensityModel>> {
    let ids: Vec<ServiceId> = cohort.catalog.ids().collect();
    ids.par_iter().map(|&s| fit_propensity(cohort, s, cfg)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortWeights {
    pub clip: [f64; 2],
    pub stabilized: bool,
    /// Number of per-service factors that hit a clip bound.
    pub clipped_factors: usize,
    pub weights: BTreeMap<String, f64>,
}

impl CohortWeights {
    /// Unit weight for every record.
    pub fn uniform(cohort: &Cohort) -> Self {
        CohortWeights {
            clip: [1.0, 1.0],
            stabilized: false,
            clipped_factors: 0,
            weights: cohort.patients.iter().map(|p| (p.id.clone(), 1.0)).collect(),
        }
    }

    /// Weights in cohort order; every record must have one.
    pub fn for_cohort(&self, cohort: &Cohort) -> Result<Vec<f64>> {
        cohort
            .patients
            .iter()
            .map(|p| {
                self.weights
                    .get(&p.id)
                    .copied()
                    .ok_or_else(|| Error::UnknownPatient(p.id.clone()))
            })
            .collect()
    }

    pub fn mean(&self) -> f64 {
        self.weights.values().sum::<f64>() / self.weights.len().max(1) as f64
    }
}

/// One record's weight factor for one service, before clipping.
pub fn raw_factor(model: &PropensityModel, propensity: f64, received: bool) -> f64 {
    if model.degenerate {
        return 1.0;
    }
    if received {
        model.marginal_rate / propensity
    } else {
        (1.0 - model.marginal_rate) / (1.0 - propensity)
    }
}

pub fn compute_weights(cohort: &Cohort, models: &[PropensityModel], clip: (f64, f64)) -> Result<CohortWeights> {
    let (lo, hi) = clip;
    if !(lo > 0.0 && lo < hi && hi.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "clip bounds must satisfy 0 < lo < hi, got [{lo}, {hi}]"
        )));
    }
    let mut weights = BTreeMap::new();
    let mut clipped_factors = 0;
    for p in &cohort.patients {
        let mut w = 1.0;
        for m in models {
            if m.degenerate {
                continue;
            }
            let e = m.propensity(p)?;
            if !e.is_finite() {
                return Err(Error::NonFinitePropensity(m.code.clone()));
            }
            let f = raw_factor(m, e, p.observed_plan.contains(m.service));
            if !f.is_finite() {
                return Err(Error::NonFinitePropensity(m.code.clone()));
            }
            if f < lo || f > hi {
                clipped_factors += 1;
            }
            w *= f.clamp(lo, hi);
        }
        weights.insert(p.id.clone(), w);
    }
    Ok(CohortWeights {
        clip: [lo, hi],
        stabilized: true,
        clipped_factors,
        weights,
    })
}

/// Standardized mean difference of each characteristic between users and
/// non-users of `service`. Means are weighted when `weights` is given; the
/// pooled standard deviation is always the unweighted one so that weighted
/// and unweighted differences share a scale. `None` when a group is empty.
pub fn standardized_differences(
    cohort: &Cohort,
    service: ServiceId,
    weights: Option<&[f64]>,
) -> Option<BTreeMap<String, f64>> {
    let used: Vec<bool> = cohort
        .patients
        .iter()
        .map(|p| p.observed_plan.contains(service))
        .collect();
    if used.iter().all(|&u| u) || used.iter().all(|&u| !u) {
        return None;
    }
    let mut out = BTreeMap::new();
    for name in &cohort.characteristics {
        let x: Vec<f64> = cohort.patients.iter().map(|p| p.characteristics[name]).collect();
        let stats = |group: bool, w: Option<&[f64]>| {
            let (mut sw, mut sx) = (0.0, 0.0);
            for i in (0..x.len()).filter(|&i| used[i] == group) {
                let wi = w.map_or(1.0, |w| w[i]);
                sw += wi;
                sx += wi * x[i];
            }
            sx / sw
        };
        let var = |group: bool| {
            let m = stats(group, None);
            let v: Vec<f64> = (0..x.len()).filter(|&i| used[i] == group).map(|i| x[i]).collect();
            v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (v.len().max(2) - 1) as f64
        };
        let pooled = ((var(true) + var(false)) / 2.0).sqrt();
        let diff = stats(true, weights) - stats(false, weights);
        out.insert(name.clone(), if pooled > 0.0 { diff / pooled } else { 0.0 });
    }
    Some(out)
}

pub fn save_weights(weights: &CohortWeights, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(weights).expect("weights serialization");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<CohortWeights> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let w: CohortWeights = serde_json::from_str(&text).map_err(|e| Error::parse("weights", &e))?;
    if let Some((id, v)) = w.weights.iter().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::Schema(format!("weight for {id} is {v}; weights must be finite and positive")));
    }
    Ok(w)
}
