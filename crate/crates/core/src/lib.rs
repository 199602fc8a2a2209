//! Causally-interpretable meta-analysis with between-study
//! heterogeneity.
//!
//! Given individual-participant data from several randomized trials
//! plus a covariate sample from a target population, this crate
//! estimates the mean potential outcome each trial's conditions would
//! produce in the target population (by outcome-model standardization,
//! inverse-probability weighting, or their augmented combination),
//! quantifies how much those transported means vary between trials
//! after accounting for their shared-sample correlation, and builds
//! prediction intervals for the outcome of a new trial recruited from
//! the target population. A simulation subsystem generates synthetic
//! grids and measures interval coverage.
//!
//! Replicated work (bootstrap replicates, simulation replications)
//! runs data-parallel on rayon when the default `parallel` feature is
//! enabled; every unit of work owns a counter-derived random stream,
//! so results are identical at any worker count.

pub mod dist;
pub mod error;
pub mod estimators;
pub mod exec;
pub mod heterogeneity;
pub mod ipd;
pub mod linalg;
pub mod nuisance;
pub mod prediction;
pub mod rng;
pub mod simulation;

pub use error::{Error, ErrorCategory, Result};
pub use estimators::{
    estimate_contrast, estimate_pooled, estimate_psi, estimate_psi_aipw, estimate_psi_ipw,
    estimate_psi_om, EstimatorConfig, Method, PooledEstimate, TransportEstimate,
};
pub use heterogeneity::{
    compute_c_terms, estimate_cov_matrix, estimate_gamma_squared, joint_bootstrap,
    CorrelatedEstimates, HeterogeneityEstimate, JointBootstrap,
};
pub use ipd::{load_ipd, ArmId, CsvSchema, IpdDataset, IpdRecord};
pub use prediction::{
    bootstrap_psi_variance, if_contributions, interval_from_draws, mom_interval,
    simple_bootstrap_predict, wild_bootstrap_predict, BootstrapDraws, Construction, IntervalMethod,
    MultiplierLaw, PredictionInterval,
};
pub use simulation::{
    delta_sample, gen_dataset, grid_scenarios, run_scenario, run_scenario_with, CoverageReport,
    DeltaLaw, MethodSpec, Scenario,
};
