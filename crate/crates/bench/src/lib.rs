//! Fixtures shared by the benchmarks.

use caresel_core::datagen::{generate_ground_truth, sample_cohort, CohortSpec};
use caresel_core::{Cohort, EnsembleModel};

/// A default-sized catalog (69 services) with its ground truth as the model.
pub fn fixture(n_patients: usize) -> (Cohort, EnsembleModel) {
    let spec = CohortSpec {
        n_patients,
        seed: 1,
        ..CohortSpec::default()
    };
    let truth = generate_ground_truth(&spec).expect("default spec is valid");
    let cohort = sample_cohort(&truth, &spec).expect("default spec is valid");
    (cohort, truth.as_ensemble().expect("truth is a valid model"))
}
