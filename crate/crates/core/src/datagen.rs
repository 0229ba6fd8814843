//! Synthetic cohorts with a known outcome model and deliberate
//! treatment-selection bias.
//!
//! Patients get a latent severity built from their characteristics. Severity
//! lengthens the stay and pushes service usage up, and the stay in turn raises
//! the risk of emergent care, so the observed plans are confounded the way
//! observational home-care data is. Outcomes are drawn from the true risk of
//! the plan each patient actually received.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::catalog::{
    candidate_predictors, evaluate_predictor, CarePlan, Category, Cohort, CohortFile,
    PatientRecord, Predictor, PredictorKind, ServiceCatalog, ServiceId,
};
use crate::error::{Error, Result};
use crate::glm::sigmoid;
use crate::scoring::{EnsembleModel, MemberModel, ModelMetadata, Term};

const TRUTH_STREAM: u64 = 0;
const PILOT_STREAM: u64 = 1;
const COHORT_STREAM: u64 = 2;
const PILOT_SIZE: usize = 4000;

const AGE_MEAN: f64 = 72.0;
const AGE_SD: f64 = 11.0;
const AGE_RANGE: (f64, f64) = (40.0, 100.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub n_patients: usize,
    /// Total characteristics; the first is a continuous age, the rest are
    /// diagnosis flags.
    pub n_characteristics: usize,
    pub n_services: usize,
    pub mean_plan_size: f64,
    /// 0 makes service usage independent of the characteristics.
    pub bias_strength: f64,
    /// Fraction of service pairs carrying a true effect.
    pub service_service_density: f64,
    /// Fraction of service x characteristic interactions carrying a true effect.
    pub service_characteristic_density: f64,
    /// Typical magnitude of a true interaction on the logit scale.
    pub effect_scale: f64,
    /// Target mean outcome rate under the observed plans.
    pub base_rate: f64,
    /// Logit change per day of stay.
    pub los_coefficient: f64,
    pub id_prefix: String,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            n_patients: 5000,
            n_characteristics: 20,
            n_services: 69,
            mean_plan_size: 8.0,
            bias_strength: 1.0,
            service_service_density: 0.03,
            service_characteristic_density: 0.05,
            effect_scale: 0.8,
            base_rate: 0.25,
            los_coefficient: 0.02,
            id_prefix: "p".into(),
            seed: 1,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_patients < 1 {
            return bad("n_patients must be at least 1");
        }
        if self.n_services < 2 {
            return bad("n_services must be at least 2");
        }
        if self.n_characteristics < 1 {
            return bad("n_characteristics must be at least 1");
        }
        if !(self.mean_plan_size > 0.0 && self.mean_plan_size < self.n_services as f64) {
            return bad("mean_plan_size must lie in (0, n_services)");
        }
        for (name, v) in [
            ("service_service_density", self.service_service_density),
            ("service_characteristic_density", self.service_characteristic_density),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.base_rate > 0.0 && self.base_rate < 1.0) {
            return bad("base_rate must lie in (0, 1)");
        }
        if self.bias_strength < 0.0 || !self.bias_strength.is_finite() {
            return bad("bias_strength must be finite and nonnegative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CharacteristicKind {
    Binary { prevalence: f64 },
    Continuous { mean: f64, sd: f64, low: f64, high: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: CharacteristicKind,
}

impl CharacteristicSpec {
    fn standardize(&self, v: f64) -> f64 {
        match self.kind {
            CharacteristicKind::Binary { prevalence } => {
                (v - prevalence) / (prevalence * (1.0 - prevalence)).sqrt()
            }
            CharacteristicKind::Continuous { mean, sd, .. } => (v - mean) / sd,
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match self.kind {
            CharacteristicKind::Binary { prevalence } => (rng.random::<f64>() < prevalence) as u8 as f64,
            CharacteristicKind::Continuous { mean, sd, low, high } => {
                let v: f64 = Normal::new(mean, sd).expect("valid normal").sample(rng);
                // one decimal, like a recorded age
                (v.clamp(low, high) * 10.0).round() / 10.0
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthTerm {
    pub predictor: Predictor,
    pub coefficient: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModel {
    pub intercept: f64,
    pub los_coefficient: f64,
    pub terms: Vec<TruthTerm>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceAssignment {
    pub intercept: f64,
    /// Weight on standardized severity.
    pub severity_weight: f64,
    /// Weights on standardized characteristics.
    pub weights: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LosModel {
    pub log_median: f64,
    pub severity_shift: f64,
    pub sigma: f64,
}

/// Everything needed to regenerate a cohort and to compute true risks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub catalog: ServiceCatalog,
    pub characteristics: Vec<CharacteristicSpec>,
    /// Weights on standardized characteristics; unit variance overall.
    pub severity: BTreeMap<String, f64>,
    pub outcome: OutcomeModel,
    pub assignment: Vec<ServiceAssignment>,
    pub bias_strength: f64,
    pub los: LosModel,
}

/// Diagnosis flags used to name synthetic characteristics.
const DIAGNOSES: &[&str] = &[
    "dx_hypertension", "dx_diabetes", "dx_chf", "dx_copd", "dx_uti", "dx_gait_abnormality",
    "dx_atrial_fibrillation", "dx_osteoarthritis", "dx_hip_fracture", "dx_pneumonia",
    "dx_dementia", "dx_depression", "dx_ckd", "dx_stroke", "dx_pressure_ulcer", "dx_anemia",
    "dx_obesity", "dx_parkinsons", "dx_cancer", "dx_dehydration", "dx_cellulitis",
    "dx_hyperlipidemia", "dx_hypothyroidism", "dx_sepsis",
];

/// Service codes in the spirit of a home-care survey.
const SERVICES: &[(&str, Category)] = &[
    ("SKILLED_NURSE", Category::Medical),
    ("WALKER_CANE", Category::Assistive),
    ("SAFETY_TRAINING", Category::AgencyProvided),
    ("MED_MANAGEMENT", Category::FamilyServices),
    ("AGENCY_SUPPORT", Category::AgencyProvided),
    ("ADL_ASSIST", Category::PersonalCare),
    ("SHOWER_CHAIR", Category::Assistive),
    ("ADL", Category::PersonalCare),
    ("PHYSICAL_THERAPY", Category::Therapy),
    ("EQUIP_INSTRUCTION", Category::AgencyProvided),
    ("OXYGEN", Category::Medical),
    ("WOUND_CARE", Category::Medical),
    ("GRAB_BARS", Category::Assistive),
    ("WHEELCHAIR", Category::Assistive),
    ("HOSPITAL_BED", Category::Assistive),
    ("COMMODE", Category::Assistive),
    ("MOTORIZED_CART", Category::Assistive),
    ("BED_COMM", Category::Assistive),
    ("IV_PUMP", Category::Medical),
    ("APNEA_MONITOR", Category::Medical),
    ("GLUCOSE_MONITOR", Category::Medical),
    ("OXYGEN_CONCENTRATOR", Category::Medical),
    ("CPAP", Category::Medical),
    ("FEEDING_PUMP", Category::Medical),
    ("NEBULIZER", Category::Medical),
    ("SUCTION", Category::Medical),
    ("CATHETER_CARE", Category::Medical),
    ("OSTOMY_CARE", Category::Medical),
    ("PAIN_MANAGEMENT", Category::Medical),
    ("INFUSION_THERAPY", Category::Medical),
    ("DEVICE_TRAINING", Category::AgencyProvided),
    ("TELEMONITORING", Category::AgencyProvided),
    ("CASE_MANAGEMENT", Category::AgencyProvided),
    ("LAB_DRAW", Category::AgencyProvided),
    ("TRANSPORT", Category::PersonalCare),
    ("MEALS_ON_WHEELS", Category::PersonalCare),
    ("VOLUNTEERS", Category::PersonalCare),
    ("HOMEMAKER", Category::PersonalCare),
    ("COMPANION", Category::PersonalCare),
    ("PERSONAL_HYGIENE", Category::PersonalCare),
    ("RESPITE", Category::PersonalCare),
    ("SPEECH_THERAPY", Category::Therapy),
    ("OCCUPATIONAL_THERAPY", Category::Therapy),
    ("RESPIRATORY_THERAPY", Category::Therapy),
    ("PODIATRY", Category::Therapy),
    ("AUDIOLOGY", Category::Therapy),
    ("VISION_THERAPY", Category::Therapy),
    ("MUSIC_THERAPY", Category::Therapy),
    ("DIETARY_COUNSELLING", Category::Counselling),
    ("ETHICS_COUNSELLING", Category::Counselling),
    ("SPIRITUAL", Category::Counselling),
    ("SOCIAL_WORK", Category::Counselling),
    ("MENTAL_HEALTH", Category::Counselling),
    ("SUBSTANCE_COUNSELLING", Category::Counselling),
    ("SMOKING_CESSATION", Category::Counselling),
    ("DIFFICULT_BEHAVIORS", Category::Counselling),
    ("INTERPRETER", Category::Counselling),
    ("BEREAVEMENT", Category::FamilyServices),
    ("CAREGIVER_TRAINING", Category::FamilyServices),
    ("FAMILY_COUNSELLING", Category::FamilyServices),
    ("FAMILY_RESPITE", Category::FamilyServices),
    ("LEGAL_AID", Category::FamilyServices),
    ("FINANCIAL_COUNSELLING", Category::FamilyServices),
    ("HOME_SAFETY_EVAL", Category::AgencyProvided),
    ("FALL_PREVENTION", Category::Therapy),
    ("MEDICATION_DELIVERY", Category::PersonalCare),
    ("EMERGENCY_RESPONSE", Category::Assistive),
    ("DIABETIC_EDUCATION", Category::Counselling),
    ("HEART_FAILURE_EDUCATION", Category::Counselling),
];

pub fn synthetic_catalog(n_services: usize) -> Result<ServiceCatalog> {
    ServiceCatalog::from_codes((0..n_services).map(|i| match SERVICES.get(i) {
        Some((code, cat)) => (code.to_string(), *cat),
        None => (format!("SVC_{i:03}"), Category::ALL[i % Category::ALL.len()]),
    }))
}

fn characteristic_specs<R: Rng>(n: usize, rng: &mut R) -> Vec<CharacteristicSpec> {
    let mut out = vec![CharacteristicSpec {
        name: "age".into(),
        kind: CharacteristicKind::Continuous {
            mean: AGE_MEAN,
            sd: AGE_SD,
            low: AGE_RANGE.0,
            high: AGE_RANGE.1,
        },
    }];
    for i in 1..n {
        let name = match DIAGNOSES.get(i - 1) {
            Some(n) => n.to_string(),
            None => format!("dx_{i:03}"),
        };
        // frequency-skewed: most flags are uncommon
        let u: f64 = rng.random();
        let prevalence = ((0.06 + 0.39 * u * u) * 1000.0).round() / 1000.0;
        out.push(CharacteristicSpec {
            name,
            kind: CharacteristicKind::Binary { prevalence },
        });
    }
    out
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Finds `x` with `f(x) = target` for increasing `f`.
fn bisect(mut lo: f64, mut hi: f64, target: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

struct Draw {
    characteristics: BTreeMap<String, f64>,
    severity: f64,
    los: f64,
}

impl GroundTruth {
    fn draw_patient<R: Rng>(&self, rng: &mut R) -> Draw {
        let mut characteristics = BTreeMap::new();
        let mut severity = 0.0;
        for c in &self.characteristics {
            let v = c.draw(rng);
            severity += self.severity.get(&c.name).copied().unwrap_or(0.0) * c.standardize(v);
            characteristics.insert(c.name.clone(), v);
        }
        let mu = self.los.log_median + self.los.severity_shift * severity;
        let los: f64 = LogNormal::new(mu, self.los.sigma).expect("valid lognormal").sample(rng);
        Draw {
            characteristics,
            severity,
            los: (los * 10.0).round() / 10.0,
        }
    }

    fn assignment_logit(&self, service: usize, d: &Draw) -> f64 {
        let a = &self.assignment[service];
        let mut z = a.severity_weight * d.severity;
        for c in &self.characteristics {
            if let Some(w) = a.weights.get(&c.name) {
                z += w * c.standardize(d.characteristics[&c.name]);
            }
        }
        a.intercept + self.bias_strength * z
    }

    fn draw_plan<R: Rng>(&self, d: &Draw, rng: &mut R) -> CarePlan {
        (0..self.catalog.len())
            .filter(|&s| rng.random::<f64>() < sigmoid(self.assignment_logit(s, d)))
            .map(|s| ServiceId(s as u16))
            .collect()
    }

    fn linear_predictor(&self, patient: &PatientRecord, plan: &CarePlan) -> Result<f64> {
        let mut eta = self.outcome.intercept + self.outcome.los_coefficient * patient.los;
        for t in &self.outcome.terms {
            eta += t.coefficient * evaluate_predictor(&t.predictor, patient, plan)?;
        }
        Ok(eta)
    }

    /// True probability of emergent care for a patient under a plan.
    pub fn true_risk(&self, patient: &PatientRecord, plan: &CarePlan) -> Result<f64> {
        self.linear_predictor(patient, plan).map(sigmoid)
    }

    pub fn characteristic_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.characteristics.iter().map(|c| c.name.clone()).collect();
        v.sort();
        v
    }

    /// The true outcome model as a one-member ensemble, usable wherever a
    /// trained model is expected.
    pub fn as_ensemble(&self) -> Result<EnsembleModel> {
        let mut coefs = BTreeMap::new();
        coefs.insert(Term::Los, self.outcome.los_coefficient);
        for t in &self.outcome.terms {
            coefs.insert(Term::Predictor(t.predictor.id), t.coefficient);
        }
        EnsembleModel::new(
            vec![MemberModel {
                intercept: self.outcome.intercept,
                coefs,
            }],
            self.outcome.terms.iter().map(|t| t.predictor.clone()),
            ModelMetadata::default(),
        )
    }
}

/// Draws a sparse true model and calibrates its intercepts against a pilot
/// sample so that plan sizes and the outcome rate hit the requested targets.
pub fn generate_ground_truth(spec: &CohortSpec) -> Result<GroundTruth> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, TRUTH_STREAM);
    let catalog = synthetic_catalog(spec.n_services)?;
    let characteristics = characteristic_specs(spec.n_characteristics, &mut rng);
    let names: Vec<String> = characteristics.iter().map(|c| c.name.clone()).collect();
    let mut sorted_names = names.clone();
    sorted_names.sort();

    // severity: random direction over the characteristics, unit variance
    let raw: Vec<f64> = names.iter().map(|_| rng.random_range(0.2..1.0)).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let severity: BTreeMap<String, f64> =
        names.iter().zip(&raw).map(|(n, v)| (n.clone(), v / norm)).collect();

    let s = spec.n_services;
    // per-service usage rates averaging to mean_plan_size / S
    let mean_rate = spec.mean_plan_size / s as f64;
    let spread: Vec<f64> = (0..s).map(|_| rng.random_range(0.4..1.6)).collect();
    let spread_mean = spread.iter().sum::<f64>() / s as f64;
    let rates: Vec<f64> = spread
        .iter()
        .map(|v| (mean_rate * v / spread_mean).clamp(0.02, 0.98))
        .collect();

    let mut assignment = Vec::with_capacity(s);
    for _ in 0..s {
        let mut weights = BTreeMap::new();
        let k = 3.min(names.len());
        let picks = rand::seq::index::sample(&mut rng, names.len(), k);
        for i in picks {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            weights.insert(names[i].clone(), sign * rng.random_range(0.3..0.8));
        }
        assignment.push(ServiceAssignment {
            intercept: 0.0,
            severity_weight: rng.random_range(0.3..1.0),
            weights,
        });
    }

    let universe = candidate_predictors(&catalog, &sorted_names);
    let (ss, sc): (Vec<&Predictor>, Vec<&Predictor>) = universe
        .iter()
        .partition(|p| matches!(p.kind, PredictorKind::ServiceService { .. }));
    let n_ss = (spec.service_service_density * ss.len() as f64).round() as usize;
    let n_sc = (spec.service_characteristic_density * sc.len() as f64).round() as usize;
    let mut terms = Vec::with_capacity(n_ss + n_sc);
    for (pool, count) in [(&ss, n_ss), (&sc, n_sc)] {
        let mut picks = rand::seq::index::sample(&mut rng, pool.len(), count).into_vec();
        picks.sort_unstable();
        for i in picks {
            let p = pool[i].clone();
            let sign = if rng.random::<f64>() < 0.6 { -1.0 } else { 1.0 };
            let mut coef = sign * spec.effect_scale * rng.random_range(0.5..1.5);
            if let PredictorKind::ServiceCharacteristic { characteristic, .. } = &p.kind {
                if characteristic == "age" {
                    coef /= AGE_MEAN;
                }
            }
            terms.push(TruthTerm {
                predictor: p,
                coefficient: coef,
            });
        }
    }
    terms.sort_by_key(|t| t.predictor.id);

    let mut truth = GroundTruth {
        seed: spec.seed,
        catalog,
        characteristics,
        severity,
        outcome: OutcomeModel {
            intercept: 0.0,
            los_coefficient: spec.los_coefficient,
            terms,
        },
        assignment,
        bias_strength: spec.bias_strength,
        los: LosModel {
            log_median: 20f64.ln(),
            severity_shift: 0.35,
            sigma: 0.5,
        },
    };

    let mut pilot_rng = rng_for(spec.seed, PILOT_STREAM);
    let pilot: Vec<Draw> = (0..PILOT_SIZE).map(|_| truth.draw_patient(&mut pilot_rng)).collect();
    for (svc, &rate) in rates.iter().enumerate() {
        let partial: Vec<f64> = pilot
            .iter()
            .map(|d| truth.assignment_logit(svc, d) - truth.assignment[svc].intercept)
            .collect();
        truth.assignment[svc].intercept = bisect(-30.0, 30.0, rate, |a| {
            partial.iter().map(|z| sigmoid(a + z)).sum::<f64>() / partial.len() as f64
        });
    }
    let patients: Vec<PatientRecord> = pilot
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            let plan = truth.draw_plan(&d, &mut pilot_rng);
            PatientRecord {
                id: format!("pilot{i}"),
                characteristics: d.characteristics,
                los: d.los,
                observed_plan: plan,
                observed_outcome: false,
            }
        })
        .collect();
    let partial: Vec<f64> = patients
        .iter()
        .map(|p| truth.linear_predictor(p, &p.observed_plan))
        .collect::<Result<_>>()?;
    truth.outcome.intercept = bisect(-30.0, 30.0, spec.base_rate, |a| {
        partial.iter().map(|z| sigmoid(a + z)).sum::<f64>() / partial.len() as f64
    });
    Ok(truth)
}

/// Draws `spec.n_patients` records from the truth using `spec.seed`.
pub fn sample_cohort(truth: &GroundTruth, spec: &CohortSpec) -> Result<Cohort> {
    spec.validate()?;
    if spec.n_services != truth.catalog.len() {
        return Err(Error::InvalidConfig(format!(
            "cohort spec asks for {} services but the truth has {}",
            spec.n_services,
            truth.catalog.len()
        )));
    }
    let mut rng = rng_for(spec.seed, COHORT_STREAM);
    let mut patients = Vec::with_capacity(spec.n_patients);
    for i in 0..spec.n_patients {
        let d = truth.draw_patient(&mut rng);
        let plan = truth.draw_plan(&d, &mut rng);
        let mut record = PatientRecord {
            id: format!("{}{:06}", spec.id_prefix, i),
            characteristics: d.characteristics,
            los: d.los,
            observed_plan: plan,
            observed_outcome: false,
        };
        let risk = truth.true_risk(&record, &record.observed_plan)?;
        record.observed_outcome = rng.random::<f64>() < risk;
        patients.push(record);
    }
    Cohort::new(truth.catalog.clone(), patients)
}

pub fn cohort_to_json(cohort: &Cohort) -> String {
    serde_json::to_string_pretty(&CohortFile::from_cohort(cohort)).expect("cohort serialization")
}

pub fn cohort_from_json(text: &str) -> Result<Cohort> {
    let file: CohortFile = serde_json::from_str(text).map_err(|e| Error::parse("cohort", &e))?;
    file.into_cohort()
}

pub fn export_cohort(cohort: &Cohort, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, cohort_to_json(cohort)).map_err(|e| Error::io(path, e))
}

pub fn import_cohort(path: impl AsRef<Path>) -> Result<Cohort> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    cohort_from_json(&text)
}

pub fn save_truth(truth: &GroundTruth, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(truth).expect("truth serialization");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse("ground truth", &e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn small_spec() -> CohortSpec {
        CohortSpec {
            n_patients: 300,
            n_characteristics: 6,
            n_services: 10,
            mean_plan_size: 3.0,
            ..CohortSpec::default()
        }
    }

    #[test]
    fn truth_is_deterministic_and_reloads_exactly() {
        let a = generate_ground_truth(&small_spec()).unwrap();
        let b = generate_ground_truth(&small_spec()).unwrap();
        assert_eq!(a, b);
        let text = serde_json::to_string(&a).unwrap();
        let back: GroundTruth = serde_json::from_str(&text).unwrap();
        assert_eq!(back, a);
        let other = generate_ground_truth(&CohortSpec { seed: 2, ..small_spec() }).unwrap();
        assert_ne!(other, a);
    }

    #[test]
    fn zero_pair_density_gives_only_characteristic_terms() {
        let spec = CohortSpec {
            service_service_density: 0.0,
            ..small_spec()
        };
        let t = generate_ground_truth(&spec).unwrap();
        assert!(!t.outcome.terms.is_empty());
        assert!(t.outcome.terms.iter().all(|t| matches!(
            t.predictor.kind,
            PredictorKind::ServiceCharacteristic { .. }
        )));
    }

    #[test]
    fn coefficient_count_matches_requested_sparsity() {
        let spec = CohortSpec {
            n_services: 12,
            n_characteristics: 20,
            service_service_density: 0.1,
            service_characteristic_density: 0.05,
            ..small_spec()
        };
        let t = generate_ground_truth(&spec).unwrap();
        let ss = t
            .outcome
            .terms
            .iter()
            .filter(|t| matches!(t.predictor.kind, PredictorKind::ServiceService { .. }))
            .count();
        let sc = t.outcome.terms.len() - ss;
        // 66 pairs and 240 service x characteristic candidates
        assert!((ss as f64 - 0.1 * 66.0).abs() <= 0.5);
        assert!((sc as f64 - 0.05 * 240.0).abs() <= 0.5);
        // mixed signs
        assert!(t.outcome.terms.iter().any(|t| t.coefficient > 0.0));
        assert!(t.outcome.terms.iter().any(|t| t.coefficient < 0.0));
    }

    #[test]
    fn sampling_is_deterministic_and_risks_open_interval() {
        let spec = small_spec();
        let t = generate_ground_truth(&spec).unwrap();
        let a = sample_cohort(&t, &spec).unwrap();
        let b = sample_cohort(&t, &spec).unwrap();
        assert_eq!(a, b);
        for p in &a.patients {
            let r = t.true_risk(p, &p.observed_plan).unwrap();
            assert!(r > 0.0 && r < 1.0);
            assert!(p.los > 0.0);
        }
    }

    /// Pearson chi-square for a 2x2 table of usage by a binary characteristic.
    fn chi_square_p(cohort: &Cohort, service: ServiceId, name: &str) -> Option<f64> {
        let mut t = [[0.0f64; 2]; 2];
        for p in &cohort.patients {
            let u = p.observed_plan.contains(service) as usize;
            let c = (p.characteristics[name] > 0.5) as usize;
            t[u][c] += 1.0;
        }
        let n: f64 = t.iter().flatten().sum();
        let rows = [t[0][0] + t[0][1], t[1][0] + t[1][1]];
        let cols = [t[0][0] + t[1][0], t[0][1] + t[1][1]];
        if rows.contains(&0.0) || cols.contains(&0.0) {
            return None;
        }
        let mut stat = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let e = rows[i] * cols[j] / n;
                stat += (t[i][j] - e).powi(2) / e;
            }
        }
        Some(1.0 - ChiSquared::new(1.0).unwrap().cdf(stat))
    }

    fn association_p_values(cohort: &Cohort) -> Vec<f64> {
        let flags: Vec<&String> = cohort.characteristics.iter().filter(|n| *n != "age").collect();
        let mut out = Vec::new();
        for s in cohort.catalog.ids() {
            for name in &flags {
                if let Some(p) = chi_square_p(cohort, s, name) {
                    out.push(p);
                }
            }
        }
        out
    }

    #[test]
    fn zero_bias_makes_usage_independent() {
        let spec = CohortSpec {
            n_patients: 10_000,
            n_characteristics: 8,
            n_services: 10,
            mean_plan_size: 4.0,
            bias_strength: 0.0,
            ..CohortSpec::default()
        };
        let t = generate_ground_truth(&spec).unwrap();
        let c = sample_cohort(&t, &spec).unwrap();
        let ps = association_p_values(&c);
        // family-wise level 0.01 over every service x flag table
        let threshold = 0.01 / ps.len() as f64;
        assert!(ps.iter().all(|&p| p > threshold), "min p {}", ps.iter().cloned().fold(1.0, f64::min));
    }

    #[test]
    fn positive_bias_creates_association() {
        let spec = CohortSpec {
            n_patients: 10_000,
            n_characteristics: 8,
            n_services: 10,
            mean_plan_size: 4.0,
            bias_strength: 1.0,
            ..CohortSpec::default()
        };
        let t = generate_ground_truth(&spec).unwrap();
        let c = sample_cohort(&t, &spec).unwrap();
        let ps = association_p_values(&c);
        let threshold = 0.01 / ps.len() as f64;
        assert!(ps.iter().any(|&p| p < threshold));
    }

    #[test]
    fn mean_plan_size_hits_target() {
        for (s, mean) in [(12usize, 8.0), (69, 8.0), (20, 5.0)] {
            let spec = CohortSpec {
                n_patients: 10_000,
                n_services: s,
                mean_plan_size: mean,
                ..CohortSpec::default()
            };
            let t = generate_ground_truth(&spec).unwrap();
            let c = sample_cohort(&t, &spec).unwrap();
            let avg = c.patients.iter().map(|p| p.observed_plan.len() as f64).sum::<f64>()
                / c.len() as f64;
            assert!((avg - mean).abs() <= 0.5, "S={s}: mean plan size {avg}");
        }
    }

    #[test]
    fn export_import_round_trip() {
        let spec = CohortSpec {
            n_patients: 100,
            ..small_spec()
        };
        let t = generate_ground_truth(&spec).unwrap();
        let c = sample_cohort(&t, &spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cohort.json");
        export_cohort(&c, &path).unwrap();
        assert_eq!(import_cohort(&path).unwrap(), c);
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let spec = CohortSpec {
            n_patients: 20,
            ..small_spec()
        };
        let t = generate_ground_truth(&spec).unwrap();
        let text = cohort_to_json(&sample_cohort(&t, &spec).unwrap());
        let cut = &text[..text.len() / 2];
        match cohort_from_json(cut) {
            Err(Error::Parse { line, .. }) => assert!(line > 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn field_order_is_irrelevant() {
        let a = r#"{"catalog":{"services":[{"index":0,"code":"A","category":"medical"},
                     {"index":1,"code":"B","category":"therapy"}]},
                   "patients":[{"id":"x","characteristics":{"age":70.0},"los":3.5,"plan":["B"],"outcome":1}]}"#;
        let b = r#"{"patients":[{"outcome":1,"plan":["B"],"los":3.5,"characteristics":{"age":70.0},"id":"x"}],
                   "catalog":{"services":[{"category":"therapy","code":"B","index":1},
                     {"code":"A","index":0,"category":"medical"}]}}"#;
        assert_eq!(cohort_from_json(a).unwrap(), cohort_from_json(b).unwrap());
    }

    #[test]
    fn ensemble_view_matches_true_risk() {
        let spec = small_spec();
        let t = generate_ground_truth(&spec).unwrap();
        let c = sample_cohort(&t, &spec).unwrap();
        let e = t.as_ensemble().unwrap();
        for p in c.patients.iter().take(50) {
            let a = t.true_risk(p, &p.observed_plan).unwrap();
            let b = crate::scoring::score_risk(&e, p, &p.observed_plan).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }
}
