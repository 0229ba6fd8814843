//! Care-plan selection: a propensity-weighted ensemble of interaction
//! logistic models scores the re-hospitalization risk of a care plan, and
//! single-agent Monte-Carlo Tree Search looks for the plan that minimizes it.

pub mod catalog;
pub mod datagen;
pub mod error;
pub mod feature_select;
pub mod glm;
pub mod harness;
pub mod propensity;
pub mod scoring;
pub mod search;

pub use catalog::{
    CarePlan, Category, Cohort, FeatureVector, PatientRecord, Predictor, PredictorId,
    PredictorKind, Service, ServiceCatalog, ServiceId,
};
pub use error::{Error, Result};
pub use scoring::{EnsembleModel, MemberModel, ModelMetadata, Term};
pub use search::{search, Budget, SearchConfig, SearchMode, SearchResult};
