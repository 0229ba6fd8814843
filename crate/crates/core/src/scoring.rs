//! The ensemble risk model: an average of logistic members over interaction
//! predictors, serialized to a versioned JSON document.
//!
//! ```text
//! {
//!   "version": 1,
//!   "members": [{"intercept": -1.2, "coefs": {"los": 0.02, "17": -0.4}}],
//!   "predictors": {"17": {"kind": "service_characteristic", "left": 3, "right": "age"}},
//!   "metadata": {...}
//! }
//! ```
//!
//! Floats are written in shortest round-trip form, so a saved model reloads
//! bit-identically.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::catalog::{
    featurize, CarePlan, PatientRecord, Predictor, PredictorId, PredictorKind, ServiceId,
};
use crate::error::{Error, Result};
use crate::feature_select::TraceRow;
use crate::glm::sigmoid;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// A coefficient slot: either the length-of-stay main effect or an interaction.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Los,
    Predictor(PredictorId),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Los => f.write_str("los"),
            Term::Predictor(id) => write!(f, "{}", id.0),
        }
    }
}

impl FromStr for Term {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "los" {
            return Ok(Term::Los);
        }
        s.parse::<u32>()
            .map(|v| Term::Predictor(PredictorId(v)))
            .map_err(|_| format!("invalid coefficient key `{s}`"))
    }
}

impl Serialize for Term {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Term {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberModel {
    pub intercept: f64,
    pub coefs: BTreeMap<Term, f64>,
}

impl MemberModel {
    pub fn predictor_ids(&self) -> impl Iterator<Item = PredictorId> + '_ {
        self.coefs.keys().filter_map(|t| match t {
            Term::Predictor(id) => Some(*id),
            Term::Los => None,
        })
    }

    fn linear_predictor(&self, features: &crate::catalog::FeatureVector) -> f64 {
        let mut eta = self.intercept;
        for (term, coef) in &self.coefs {
            eta += coef
                * match term {
                    Term::Los => features.los,
                    Term::Predictor(id) => features.get(*id),
                };
        }
        eta
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub seed: u64,
    pub alpha: f64,
    pub target_models: usize,
    pub initial_features_per_group: f64,
    pub screened_predictors: usize,
    pub weighted: bool,
    pub trace: Vec<TraceRow>,
    pub training_auc: Option<f64>,
    /// Patient ids used for fitting; evaluation sets must avoid them.
    pub training_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleModel {
    members: Vec<MemberModel>,
    predictors: BTreeMap<PredictorId, Predictor>,
    pub metadata: ModelMetadata,
}

impl EnsembleModel {
    /// Checks that there is at least one member and that every coefficient
    /// refers to a known, canonical predictor.
    pub fn new(
        members: Vec<MemberModel>,
        predictors: impl IntoIterator<Item = Predictor>,
        metadata: ModelMetadata,
    ) -> Result<Self> {
        let predictors: BTreeMap<PredictorId, Predictor> =
            predictors.into_iter().map(|p| (p.id, p)).collect();
        if members.is_empty() {
            return Err(Error::ModelIntegrity("ensemble has no members".into()));
        }
        if let Some(p) = predictors.values().find(|p| !p.is_canonical()) {
            return Err(Error::ModelIntegrity(format!(
                "predictor {} is not canonical",
                p.id.0
            )));
        }
        for (index, m) in members.iter().enumerate() {
            if !m.intercept.is_finite() || m.coefs.values().any(|c| !c.is_finite()) {
                return Err(Error::InvalidMember {
                    index,
                    message: "non-finite coefficient".into(),
                });
            }
            if let Some(id) = m.predictor_ids().find(|id| !predictors.contains_key(id)) {
                return Err(Error::InvalidMember {
                    index,
                    message: format!("predictor {} is not in the dictionary", id.0),
                });
            }
        }
        Ok(EnsembleModel {
            members,
            predictors,
            metadata,
        })
    }

    pub fn members(&self) -> &[MemberModel] {
        &self.members
    }

    pub fn predictors(&self) -> impl Iterator<Item = &Predictor> {
        self.predictors.values()
    }

    pub fn predictor(&self, id: PredictorId) -> Option<&Predictor> {
        self.predictors.get(&id)
    }

    /// Interaction coefficients summed over members (LOS excluded).
    pub fn coefficient_count(&self) -> usize {
        self.members.iter().map(|m| m.predictor_ids().count()).sum()
    }

    /// Distinct interaction predictors used by any member.
    pub fn distinct_predictor_count(&self) -> usize {
        let mut ids: Vec<PredictorId> = self.members.iter().flat_map(|m| m.predictor_ids()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    /// Highest service index referenced by any predictor.
    pub fn max_service(&self) -> Option<ServiceId> {
        self.predictors.values().flat_map(|p| p.services()).max()
    }

    fn member_risks(&self, patient: &PatientRecord, plan: &CarePlan) -> Result<Vec<f64>> {
        let dict: Vec<Predictor> = self.predictors.values().cloned().collect();
        let fv = featurize(patient, plan, &dict)?;
        Ok(self
            .members
            .iter()
            .map(|m| sigmoid(m.linear_predictor(&fv)))
            .collect())
    }

    pub fn member_scores(&self, patient: &PatientRecord, plan: &CarePlan) -> Result<Vec<f64>> {
        self.member_risks(patient, plan)
    }
}

/// Mean of member risks for a patient under a plan.
pub fn score_risk(ensemble: &EnsembleModel, patient: &PatientRecord, plan: &CarePlan) -> Result<f64> {
    let risks = ensemble.member_risks(patient, plan)?;
    Ok(risks.iter().sum::<f64>() / risks.len() as f64)
}

/// Mirrored risk: 1 means no risk of emergent care.
pub fn reward(ensemble: &EnsembleModel, patient: &PatientRecord, plan: &CarePlan) -> Result<f64> {
    score_risk(ensemble, patient, plan).map(|r| 1.0 - r)
}

#[derive(Serialize)]
struct ModelFileOut<'a> {
    version: u32,
    members: &'a [MemberModel],
    predictors: BTreeMap<String, &'a PredictorKind>,
    metadata: &'a ModelMetadata,
}

#[derive(Deserialize)]
struct ModelFileIn {
    version: u32,
    members: Vec<serde_json::Value>,
    predictors: BTreeMap<String, PredictorKind>,
    #[serde(default)]
    metadata: ModelMetadata,
}

pub fn model_to_json(ensemble: &EnsembleModel) -> String {
    let file = ModelFileOut {
        version: MODEL_SCHEMA_VERSION,
        members: &ensemble.members,
        predictors: ensemble
            .predictors
            .iter()
            .map(|(id, p)| (id.0.to_string(), &p.kind))
            .collect(),
        metadata: &ensemble.metadata,
    };
    serde_json::to_string_pretty(&file).expect("model serialization cannot fail")
}

pub fn model_from_json(text: &str) -> Result<EnsembleModel> {
    let file: ModelFileIn = serde_json::from_str(text).map_err(|e| Error::parse("model", &e))?;
    if file.version != MODEL_SCHEMA_VERSION {
        return Err(Error::VersionMismatch {
            found: file.version,
            expected: MODEL_SCHEMA_VERSION,
        });
    }
    let members = file
        .members
        .into_iter()
        .enumerate()
        .map(|(index, v)| {
            serde_json::from_value::<MemberModel>(v).map_err(|e| Error::InvalidMember {
                index,
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let predictors = file
        .predictors
        .into_iter()
        .map(|(k, kind)| {
            let id = k
                .parse::<u32>()
                .map_err(|_| Error::ModelIntegrity(format!("invalid predictor id `{k}`")))?;
            Ok(Predictor {
                id: PredictorId(id),
                kind,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EnsembleModel::new(members, predictors, file.metadata)
}

pub fn save_model(ensemble: &EnsembleModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model_to_json(ensemble)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<EnsembleModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text)
}

/// The ensemble specialised to one patient: per member, the constant part of
/// the linear predictor, one additive term per service and one per service
/// pair. Used by search, where the same patient is scored many times.
#[derive(Clone, Debug)]
pub struct PatientScorer {
    n_services: usize,
    base: Vec<f64>,
    unary: Vec<f64>,
    pair: Vec<f64>,
}

impl PatientScorer {
    pub fn new(ensemble: &EnsembleModel, patient: &PatientRecord, n_services: usize) -> Result<Self> {
        if let Some(max) = ensemble.max_service() {
            if max.index() >= n_services {
                return Err(Error::ModelIntegrity(format!(
                    "model references service {max} outside a catalog of {n_services}"
                )));
            }
        }
        let m = ensemble.members.len();
        let s = n_services;
        let mut base = vec![0.0; m];
        let mut unary = vec![0.0; m * s];
        let mut pair = vec![0.0; m * s * s];
        for (k, member) in ensemble.members.iter().enumerate() {
            base[k] = member.intercept;
            for (term, &coef) in &member.coefs {
                match term {
                    Term::Los => base[k] += coef * patient.los,
                    Term::Predictor(id) => match &ensemble.predictors[id].kind {
                        PredictorKind::ServiceService { left, right } => {
                            let (a, b) = (left.index(), right.index());
                            pair[(k * s + a) * s + b] += coef;
                            pair[(k * s + b) * s + a] += coef;
                        }
                        PredictorKind::ServiceCharacteristic {
                            service,
                            characteristic,
                        } => {
                            unary[k * s + service.index()] +=
                                coef * patient.characteristic(characteristic)?;
                        }
                    },
                }
            }
        }
        Ok(PatientScorer {
            n_services,
            base,
            unary,
            pair,
        })
    }

    pub fn n_services(&self) -> usize {
        self.n_services
    }

    pub fn n_members(&self) -> usize {
        self.base.len()
    }

    pub fn accumulator(&self) -> PlanAccumulator {
        PlanAccumulator {
            logits: self.base.clone(),
            services: Vec::new(),
        }
    }

    /// Logits after adding `service` to a plan already holding `existing`.
    pub fn push(&self, acc: &mut PlanAccumulator, service: ServiceId) {
        let s = self.n_services;
        let a = service.index();
        for (k, logit) in acc.logits.iter_mut().enumerate() {
            let row = &self.pair[(k * s + a) * s..(k * s + a + 1) * s];
            let mut delta = self.unary[k * s + a];
            for t in &acc.services {
                delta += row[t.index()];
            }
            *logit += delta;
        }
        acc.services.push(service);
    }

    pub fn risk_of(&self, acc: &PlanAccumulator) -> f64 {
        acc.logits.iter().map(|&l| sigmoid(l)).sum::<f64>() / acc.logits.len() as f64
    }

    pub fn risk(&self, services: &[ServiceId]) -> f64 {
        let mut acc = self.accumulator();
        for &s in services {
            self.push(&mut acc, s);
        }
        self.risk_of(&acc)
    }
}

/// Running per-member logits of a partial plan.
#[derive(Clone, Debug)]
pub struct PlanAccumulator {
    logits: Vec<f64>,
    services: Vec<ServiceId>,
}

impl PlanAccumulator {
    pub fn services(&self) -> &[ServiceId] {
        &self.services
    }

    pub fn len(&self) -> usize {
        self.services.len()
    }

    pub fn is_empty(&self) -> bool {
        self.services.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::candidate_predictors;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn patient() -> PatientRecord {
        PatientRecord {
            id: "p".into(),
            characteristics: BTreeMap::from([("age".into(), 0.8), ("dx".into(), 1.0)]),
            los: 14.0,
            observed_plan: CarePlan::empty(),
            observed_outcome: false,
        }
    }

    fn random_ensemble(rng: &mut ChaCha8Rng, n_services: usize, members: usize) -> EnsembleModel {
        let catalog = crate::catalog::ServiceCatalog::from_codes(
            (0..n_services).map(|i| (format!("S{i}"), crate::catalog::Category::Medical)),
        )
        .unwrap();
        let preds = candidate_predictors(&catalog, &["age".into(), "dx".into()]);
        let members = (0..members)
            .map(|_| {
                let mut coefs = BTreeMap::new();
                coefs.insert(Term::Los, rng.random_range(-0.05..0.05));
                for p in &preds {
                    if rng.random::<f64>() < 0.4 {
                        coefs.insert(Term::Predictor(p.id), rng.random_range(-1.0..1.0));
                    }
                }
                MemberModel {
                    intercept: rng.random_range(-2.0..1.0),
                    coefs,
                }
            })
            .collect();
        EnsembleModel::new(members, preds, ModelMetadata::default()).unwrap()
    }

    fn constant_member(intercept: f64) -> MemberModel {
        MemberModel {
            intercept,
            coefs: BTreeMap::new(),
        }
    }

    #[test]
    fn mean_of_members() {
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let e = EnsembleModel::new(
            vec![constant_member(logit(0.2)), constant_member(logit(0.4))],
            vec![],
            ModelMetadata::default(),
        )
        .unwrap();
        let r = score_risk(&e, &patient(), &CarePlan::empty()).unwrap();
        assert!((r - 0.3).abs() < 1e-12);
        let single = EnsembleModel::new(vec![constant_member(0.7)], vec![], ModelMetadata::default()).unwrap();
        let quad = EnsembleModel::new(vec![constant_member(0.7); 4], vec![], ModelMetadata::default()).unwrap();
        assert_eq!(
            score_risk(&single, &patient(), &CarePlan::empty()).unwrap(),
            score_risk(&quad, &patient(), &CarePlan::empty()).unwrap()
        );
    }

    #[test]
    fn reward_mirrors_risk() {
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let e = EnsembleModel::new(vec![constant_member(logit(0.5789))], vec![], ModelMetadata::default()).unwrap();
        let rw = reward(&e, &patient(), &CarePlan::empty()).unwrap();
        assert!((rw - 0.4211).abs() < 1e-12);
        let low = EnsembleModel::new(vec![constant_member(-1e9)], vec![], ModelMetadata::default()).unwrap();
        let rw = reward(&low, &patient(), &CarePlan::empty()).unwrap();
        assert!(rw > 0.999_999 && rw < 1.0);
    }

    #[test]
    fn unresolvable_predictor_is_integrity_error() {
        let mut coefs = BTreeMap::new();
        coefs.insert(Term::Predictor(PredictorId(4)), 1.0);
        let err = EnsembleModel::new(
            vec![MemberModel { intercept: 0.0, coefs }],
            vec![],
            ModelMetadata::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidMember { index: 0, .. }));
    }

    #[test]
    fn matches_naive_member_loop_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let e = random_ensemble(&mut rng, 6, 4);
            let plan: CarePlan = (0..6u16)
                .filter(|_| rng.random::<bool>())
                .map(ServiceId)
                .collect();
            let pat = patient();
            let got = score_risk(&e, &pat, &plan).unwrap();

            // naive: evaluate each predictor directly per member
            let mut naive = Vec::new();
            for m in e.members() {
                let mut eta = m.intercept;
                for (t, c) in &m.coefs {
                    let v = match t {
                        Term::Los => pat.los,
                        Term::Predictor(id) => {
                            crate::catalog::evaluate_predictor(e.predictor(*id).unwrap(), &pat, &plan)
                                .unwrap()
                        }
                    };
                    eta += c * v;
                }
                naive.push(1.0 / (1.0 + (-eta).exp()));
            }
            let mean = naive.iter().sum::<f64>() / naive.len() as f64;
            assert!((got - mean).abs() < 1e-12);
            let lo = naive.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = naive.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(lo - 1e-15 <= got && got <= hi + 1e-15);

            let scorer = PatientScorer::new(&e, &pat, 6).unwrap();
            assert!((scorer.risk(plan.as_slice()) - got).abs() < 1e-12);
            let mut reversed = plan.as_slice().to_vec();
            reversed.reverse();
            assert!((scorer.risk(&reversed) - got).abs() < 1e-12);
        }
    }

    #[test]
    fn save_load_round_trip_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let e = random_ensemble(&mut rng, 5, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_model(&e, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, e);
        for _ in 0..100 {
            let plan: CarePlan = (0..5u16).filter(|_| rng.random::<bool>()).map(ServiceId).collect();
            let mut pat = patient();
            pat.los = rng.random_range(0.0..60.0);
            pat.characteristics.insert("age".into(), rng.random_range(0.0..1.0));
            let a = score_risk(&e, &pat, &plan).unwrap();
            let b = score_risk(&back, &pat, &plan).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn version_and_member_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = random_ensemble(&mut rng, 3, 2);
        let mut v: serde_json::Value = serde_json::from_str(&model_to_json(&e)).unwrap();
        v["version"] = 99.into();
        assert!(matches!(
            model_from_json(&v.to_string()),
            Err(Error::VersionMismatch { found: 99, .. })
        ));
        let mut v: serde_json::Value = serde_json::from_str(&model_to_json(&e)).unwrap();
        v["members"][1]["intercept"] = "oops".into();
        assert!(matches!(
            model_from_json(&v.to_string()),
            Err(Error::InvalidMember { index: 1, .. })
        ));
    }

    #[test]
    fn reports_529_coefficients() {
        let catalog = crate::catalog::ServiceCatalog::from_codes(
            (0..40).map(|i| (format!("S{i}"), crate::catalog::Category::Therapy)),
        )
        .unwrap();
        let preds: Vec<Predictor> = candidate_predictors(&catalog, &["age".into()])
            .into_iter()
            .take(529)
            .collect();
        // 15 members, sizes 35 or 36, covering 529 distinct predictors.
        let mut members = Vec::new();
        let mut it = preds.iter();
        for k in 0..15 {
            let size = if k < 4 { 36 } else { 35 };
            let mut coefs = BTreeMap::new();
            coefs.insert(Term::Los, 0.01);
            for p in it.by_ref().take(size) {
                coefs.insert(Term::Predictor(p.id), 0.1);
            }
            members.push(MemberModel {
                intercept: -1.0,
                coefs,
            });
        }
        let e = EnsembleModel::new(members, preds, ModelMetadata::default()).unwrap();
        let back = model_from_json(&model_to_json(&e)).unwrap();
        assert_eq!(back.coefficient_count(), 529);
        assert_eq!(back.distinct_predictor_count(), 529);
        assert_eq!(back.members().len(), 15);
    }
}
