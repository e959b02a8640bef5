//! Randomization-based and regression-based inference for 2^K factorial
//! designs under the finite-population potential-outcomes model.
//!
//! The crate is organised bottom-up:
//!
//! - [`design`]: the ±1 model matrix `H`, effect labels and treatment combinations.
//! - [`population`]: the full table of potential outcomes and every
//!   population-level (unobservable) quantity derived from it.
//! - [`assignment`]: completely randomized assignments, exhaustive enumeration
//!   and the observed-data view of an experiment.
//! - [`estimators`]: the randomization estimator with its Neymanian covariance,
//!   OLS with the HC2 sandwich, the homoscedastic covariance and
//!   normal-approximation intervals.
//! - [`verify`]: equivalence checkers, the exact enumeration oracle and a
//!   seeded fuzz harness.
//! - [`cli`]: the `factorial-ri` command-line surface.

pub mod assignment;
pub mod cli;
pub mod design;
pub mod error;
pub mod estimators;
pub mod io;
pub mod population;
pub mod stats;
pub mod verify;

pub use assignment::{
    draw_assignment, enumerate_assignments, observe, Assignment, GroupSizes, ObservedData,
    ObservedRecord,
};
pub use design::{
    build_model_matrix, check_orthogonality, effect_labels, treatment_combinations, EffectLabel,
    ModelMatrix, TreatmentCombination,
};
pub use error::{Error, Result};
pub use estimators::{
    balanced_covariance, build_regression_matrix, confidence_intervals, cov_he, cov_hw,
    estimate_ri, fit_ols, xtx_inverse, CovarianceKind, EffectEstimate, Interval, OlsFit,
    RegressionMatrix,
};
pub use population::{
    neymanian_bias, population_effects, population_moments, true_sampling_covariance,
    unit_effects, EffectScope, EffectVector, PopulationMoments, PotentialOutcomeTable,
};
