//! Estimands, model-assisted ANCOVA estimators and variance estimators for
//! stepped wedge cluster randomized experiments, with a simulation engine for
//! their operating characteristics.

pub mod data;
pub mod design;
pub mod error;
pub mod estimands;
pub mod estimator;
pub mod linalg;
pub mod seed;
pub mod simulate;
pub mod variance;

pub use data::{
    center_covariates, compute_weights, read_csv, validate, CellWeights, Dataset, IndividualRecord, PeriodLayout,
    ValidationIssue, ValidationReport, WeightScheme, WeightTable,
};
pub use design::{randomize, treatment_matrix, AdoptionAssignment, DesignSpec, TreatmentMatrix};
pub use error::{Error, Result};
pub use estimands::{per_period_effect, true_wate, wate_via_adoption, PotentialOutcomeTable};
pub use estimator::{estimate, estimate_with_policy, FitResult, ModelSpec, RankPolicy};
pub use variance::{confidence_interval, crse_variance, db_variance, residualize, Reference, VarianceResult};
pub use simulate::{generate_trial, metrics, run_replications, DgpSpec, MetricsTable, Scenario};
