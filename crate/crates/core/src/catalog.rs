//! Services, patients, care plans and the interaction predictors that link them.
//!
//! A care plan is an unordered set of services. Predictors are pairwise
//! interactions: either two services, or one service and one patient
//! characteristic. A predictor is "active" only when every service it names is
//! part of the plan, so the empty plan zeroes every interaction slot and only
//! the length-of-stay slot carries information.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ServiceId(pub u16);

impl ServiceId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ServiceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// Service categories used to group the catalog.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Assistive,
    Medical,
    AgencyProvided,
    PersonalCare,
    Therapy,
    Counselling,
    FamilyServices,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Assistive,
        Category::Medical,
        Category::AgencyProvided,
        Category::PersonalCare,
        Category::Therapy,
        Category::Counselling,
        Category::FamilyServices,
    ];
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Service {
    pub index: ServiceId,
    pub code: String,
    pub category: Category,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CatalogFile {
    services: Vec<Service>,
}

/// The universe of selectable services, indexed `0..S`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "CatalogFile", into = "CatalogFile")]
pub struct ServiceCatalog {
    services: Vec<Service>,
    by_code: HashMap<String, ServiceId>,
}

impl PartialEq for ServiceCatalog {
    fn eq(&self, other: &Self) -> bool {
        self.services == other.services
    }
}

impl TryFrom<CatalogFile> for ServiceCatalog {
    type Error = Error;

    fn try_from(file: CatalogFile) -> Result<Self> {
        let mut services = file.services;
        services.sort_by_key(|s| s.index);
        ServiceCatalog::new(services)
    }
}

impl From<ServiceCatalog> for CatalogFile {
    fn from(catalog: ServiceCatalog) -> Self {
        CatalogFile {
            services: catalog.services,
        }
    }
}

impl ServiceCatalog {
    /// Builds a catalog; indices must be exactly `0..S` in order and codes unique.
    pub fn new(services: Vec<Service>) -> Result<Self> {
        if services.len() < 2 {
            return Err(Error::Schema(format!(
                "catalog needs at least 2 services, got {}",
                services.len()
            )));
        }
        if services.len() > u16::MAX as usize {
            return Err(Error::Schema("catalog too large".into()));
        }
        let mut by_code = HashMap::with_capacity(services.len());
        for (i, s) in services.iter().enumerate() {
            if s.index.index() != i {
                return Err(Error::Schema(format!(
                    "service indices must be contiguous from 0; found {} at position {i}",
                    s.index.0
                )));
            }
            if by_code.insert(s.code.clone(), s.index).is_some() {
                return Err(Error::Schema(format!("duplicate service code `{}`", s.code)));
            }
        }
        Ok(ServiceCatalog { services, by_code })
    }

    /// Convenience constructor assigning indices in order.
    pub fn from_codes<I, S>(codes: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Category)>,
        S: Into<String>,
    {
        let services = codes
            .into_iter()
            .enumerate()
            .map(|(i, (code, category))| Service {
                index: ServiceId(i as u16),
                code: code.into(),
                category,
            })
            .collect();
        Self::new(services)
    }

    pub fn len(&self) -> usize {
        self.services.len()
    }

    pub fn is_empty(&self) -> bool {
        self.services.is_empty()
    }

    pub fn services(&self) -> &[Service] {
        &self.services
    }

    pub fn ids(&self) -> impl Iterator<Item = ServiceId> + '_ {
        self.services.iter().map(|s| s.index)
    }

    pub fn get(&self, id: ServiceId) -> Option<&Service> {
        self.services.get(id.index())
    }

    pub fn code(&self, id: ServiceId) -> &str {
        &self.services[id.index()].code
    }

    pub fn lookup(&self, code: &str) -> Option<ServiceId> {
        self.by_code.get(code).copied()
    }

    pub fn contains(&self, id: ServiceId) -> bool {
        id.index() < self.services.len()
    }

    /// Resolves a list of codes into a plan, reporting every unknown code at once.
    pub fn plan_from_codes<S: AsRef<str>>(&self, codes: &[S]) -> Result<CarePlan> {
        let mut unknown = Vec::new();
        let mut ids = Vec::with_capacity(codes.len());
        for code in codes {
            match self.lookup(code.as_ref()) {
                Some(id) => ids.push(id),
                None => unknown.push(code.as_ref().to_string()),
            }
        }
        if !unknown.is_empty() {
            return Err(Error::UnknownServices(unknown));
        }
        CarePlan::new(ids)
    }

    pub fn plan_codes(&self, plan: &CarePlan) -> Vec<String> {
        plan.iter().map(|id| self.code(id).to_string()).collect()
    }

    /// Checks that every service of the plan belongs to this catalog.
    pub fn validate_plan(&self, plan: &CarePlan) -> Result<()> {
        match plan.iter().find(|id| !self.contains(*id)) {
            Some(id) => Err(Error::InvalidPlan(format!(
                "service {id} is outside a catalog of {} services",
                self.len()
            ))),
            None => Ok(()),
        }
    }
}

/// A set of services, stored in ascending index order so that two plans built
/// in different insertion orders compare equal.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CarePlan(Vec<ServiceId>);

impl CarePlan {
    pub fn empty() -> Self {
        CarePlan(Vec::new())
    }

    /// Rejects duplicate services.
    pub fn new(mut services: Vec<ServiceId>) -> Result<Self> {
        services.sort_unstable();
        if let Some(w) = services.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidPlan(format!("service {} listed twice", w[0])));
        }
        Ok(CarePlan(services))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: ServiceId) -> bool {
        self.0.binary_search(&id).is_ok()
    }

    /// Adds a service; returns false if it was already present.
    pub fn insert(&mut self, id: ServiceId) -> bool {
        match self.0.binary_search(&id) {
            Ok(_) => false,
            Err(pos) => {
                self.0.insert(pos, id);
                true
            }
        }
    }

    pub fn remove(&mut self, id: ServiceId) -> bool {
        match self.0.binary_search(&id) {
            Ok(pos) => {
                self.0.remove(pos);
                true
            }
            Err(_) => false,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = ServiceId> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[ServiceId] {
        &self.0
    }
}

impl FromIterator<ServiceId> for CarePlan {
    /// Collects services, silently dropping repeats.
    fn from_iter<T: IntoIterator<Item = ServiceId>>(iter: T) -> Self {
        let mut v: Vec<ServiceId> = iter.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        CarePlan(v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatientRecord {
    pub id: String,
    pub characteristics: BTreeMap<String, f64>,
    /// Length of stay in days.
    pub los: f64,
    pub observed_plan: CarePlan,
    /// True when emergent care occurred within the follow-up window.
    pub observed_outcome: bool,
}

impl PatientRecord {
    pub fn characteristic(&self, name: &str) -> Result<f64> {
        self.characteristics
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownCharacteristic(name.to_string()))
    }

    pub fn validate(&self, catalog: &ServiceCatalog) -> Result<()> {
        if !(self.los.is_finite() && self.los >= 0.0) {
            return Err(Error::Schema(format!(
                "patient `{}`: length of stay must be finite and nonnegative",
                self.id
            )));
        }
        if let Some((k, _)) = self.characteristics.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Schema(format!(
                "patient `{}`: characteristic `{k}` is not finite",
                self.id
            )));
        }
        catalog.validate_plan(&self.observed_plan)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PredictorId(pub u32);

/// Interaction kinds. The JSON form is `{kind, left, right}` where `left` is a
/// service index and `right` is a service index or a characteristic name.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorKind {
    ServiceService {
        left: ServiceId,
        right: ServiceId,
    },
    ServiceCharacteristic {
        #[serde(rename = "left")]
        service: ServiceId,
        #[serde(rename = "right")]
        characteristic: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Predictor {
    pub id: PredictorId,
    #[serde(flatten)]
    pub kind: PredictorKind,
}

impl Predictor {
    /// Service pair in canonical `left < right` order.
    pub fn service_pair(id: PredictorId, a: ServiceId, b: ServiceId) -> Result<Self> {
        if a == b {
            return Err(Error::Schema(format!("self-interaction of service {a}")));
        }
        let (left, right) = if a < b { (a, b) } else { (b, a) };
        Ok(Predictor {
            id,
            kind: PredictorKind::ServiceService { left, right },
        })
    }

    pub fn service_characteristic(
        id: PredictorId,
        service: ServiceId,
        characteristic: impl Into<String>,
    ) -> Self {
        Predictor {
            id,
            kind: PredictorKind::ServiceCharacteristic {
                service,
                characteristic: characteristic.into(),
            },
        }
    }

    pub fn is_canonical(&self) -> bool {
        match &self.kind {
            PredictorKind::ServiceService { left, right } => left < right,
            PredictorKind::ServiceCharacteristic { .. } => true,
        }
    }

    /// Services this predictor depends on (one or two).
    pub fn services(&self) -> impl Iterator<Item = ServiceId> {
        let (a, b) = match self.kind {
            PredictorKind::ServiceService { left, right } => (left, Some(right)),
            PredictorKind::ServiceCharacteristic { service, .. } => (service, None),
        };
        std::iter::once(a).chain(b)
    }

    pub fn label(&self, catalog: &ServiceCatalog) -> String {
        match &self.kind {
            PredictorKind::ServiceService { left, right } => {
                format!("{}:{}", catalog.code(*left), catalog.code(*right))
            }
            PredictorKind::ServiceCharacteristic {
                service,
                characteristic,
            } => format!("{}:{}", characteristic, catalog.code(*service)),
        }
    }
}

/// Value of one interaction for a patient under a plan.
pub fn evaluate_predictor(p: &Predictor, patient: &PatientRecord, plan: &CarePlan) -> Result<f64> {
    match &p.kind {
        PredictorKind::ServiceService { left, right } => {
            Ok(if plan.contains(*left) && plan.contains(*right) {
                1.0
            } else {
                0.0
            })
        }
        PredictorKind::ServiceCharacteristic {
            service,
            characteristic,
        } => {
            // Schema errors surface even when the service is absent.
            let value = patient.characteristic(characteristic)?;
            Ok(if plan.contains(*service) { value } else { 0.0 })
        }
    }
}

/// Predictor values indexed by predictor id, plus the length-of-stay slot.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub los: f64,
}

impl FeatureVector {
    pub fn get(&self, id: PredictorId) -> f64 {
        self.values.get(id.0 as usize).copied().unwrap_or(0.0)
    }
}

pub fn featurize(
    patient: &PatientRecord,
    plan: &CarePlan,
    predictors: &[Predictor],
) -> Result<FeatureVector> {
    let len = predictors
        .iter()
        .map(|p| p.id.0 as usize + 1)
        .max()
        .unwrap_or(0);
    let mut values = vec![0.0; len];
    for p in predictors {
        values[p.id.0 as usize] = evaluate_predictor(p, patient, plan)?;
    }
    Ok(FeatureVector {
        values,
        los: patient.los,
    })
}

/// Every candidate interaction over a catalog and a characteristic list:
/// service pairs first (lexicographic), then service-major service x characteristic.
pub fn candidate_predictors(catalog: &ServiceCatalog, characteristics: &[String]) -> Vec<Predictor> {
    let s = catalog.len();
    let mut out = Vec::with_capacity(s * (s - 1) / 2 + s * characteristics.len());
    let mut next = 0u32;
    for i in 0..s {
        for j in (i + 1)..s {
            out.push(Predictor {
                id: PredictorId(next),
                kind: PredictorKind::ServiceService {
                    left: ServiceId(i as u16),
                    right: ServiceId(j as u16),
                },
            });
            next += 1;
        }
    }
    for i in 0..s {
        for c in characteristics {
            out.push(Predictor::service_characteristic(
                PredictorId(next),
                ServiceId(i as u16),
                c.clone(),
            ));
            next += 1;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlanSpaceSize {
    /// Distinct unordered plans of exactly `k` services.
    pub combinations: BigUint,
    /// Leaves of the ordered selection tree at depth `k`.
    pub ordered_leaves: BigUint,
}

/// Counts plans of size `k` from `s` services. Both counts are zero when `k > s`.
pub fn plan_space_size(s: u64, k: u64) -> PlanSpaceSize {
    let mut ordered = BigUint::from(1u32);
    let mut k_factorial = BigUint::from(1u32);
    for i in 0..k {
        ordered *= BigUint::from(s.saturating_sub(i));
        k_factorial *= BigUint::from(i + 1);
    }
    let combinations = &ordered / &k_factorial;
    PlanSpaceSize {
        combinations,
        ordered_leaves: ordered,
    }
}

/// A catalog together with the patients drawn over it.
#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub catalog: ServiceCatalog,
    /// Characteristic names shared by every patient, sorted.
    pub characteristics: Vec<String>,
    pub patients: Vec<PatientRecord>,
}

impl Cohort {
    /// Validates every record and checks that all patients share one characteristic schema.
    pub fn new(catalog: ServiceCatalog, patients: Vec<PatientRecord>) -> Result<Self> {
        let characteristics: Vec<String> = patients
            .first()
            .map(|p| p.characteristics.keys().cloned().collect())
            .unwrap_or_default();
        let mut seen = std::collections::HashSet::with_capacity(patients.len());
        for p in &patients {
            p.validate(&catalog)?;
            if !seen.insert(p.id.as_str()) {
                return Err(Error::Schema(format!("duplicate patient id `{}`", p.id)));
            }
            if p.characteristics.len() != characteristics.len()
                || !p.characteristics.keys().zip(&characteristics).all(|(a, b)| a == b)
            {
                return Err(Error::Schema(format!(
                    "patient `{}` does not share the cohort's characteristic schema",
                    p.id
                )));
            }
        }
        Ok(Cohort {
            catalog,
            characteristics,
            patients,
        })
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn patient(&self, id: &str) -> Option<&PatientRecord> {
        self.patients.iter().find(|p| p.id == id)
    }

    pub fn subset(&self, indices: &[usize]) -> Cohort {
        Cohort {
            catalog: self.catalog.clone(),
            characteristics: self.characteristics.clone(),
            patients: indices.iter().map(|&i| self.patients[i].clone()).collect(),
        }
    }
}

/// On-disk cohort layout: `{catalog: {services: [...]}, patients: [{id,
/// characteristics, los, plan: [codes], outcome}]}`. Plans are stored as codes.
#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct CohortFile {
    pub catalog: ServiceCatalog,
    pub patients: Vec<PatientFile>,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct PatientFile {
    pub id: String,
    pub characteristics: BTreeMap<String, f64>,
    pub los: f64,
    pub plan: Vec<String>,
    pub outcome: u8,
}

impl CohortFile {
    pub(crate) fn from_cohort(cohort: &Cohort) -> Self {
        CohortFile {
            catalog: cohort.catalog.clone(),
            patients: cohort
                .patients
                .iter()
                .map(|p| PatientFile {
                    id: p.id.clone(),
                    characteristics: p.characteristics.clone(),
                    los: p.los,
                    plan: cohort.catalog.plan_codes(&p.observed_plan),
                    outcome: p.observed_outcome as u8,
                })
                .collect(),
        }
    }

    pub(crate) fn into_cohort(self) -> Result<Cohort> {
        let catalog = self.catalog;
        let patients = self
            .patients
            .into_iter()
            .map(|p| {
                let observed_outcome = match p.outcome {
                    0 => false,
                    1 => true,
                    other => {
                        return Err(Error::Schema(format!(
                            "patient `{}`: outcome must be 0 or 1, got {other}",
                            p.id
                        )))
                    }
                };
                Ok(PatientRecord {
                    observed_plan: catalog.plan_from_codes(&p.plan)?,
                    id: p.id,
                    characteristics: p.characteristics,
                    los: p.los,
                    observed_outcome,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Cohort::new(catalog, patients)
    }
}
