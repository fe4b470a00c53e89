//! Decay estimation from point data: log-linear fits with spatial-robust
//! errors, local regression boundary detection, diagnostics and profile
//! model fitting.

mod diagnostics;
mod nls;
mod ols;
mod smoother;

pub use diagnostics::{
    diagnostics, regional_heterogeneity, spearman, BinnedMean, Decision, DiagnosticsReport, RegionalReport,
    MIN_BIN_COUNT, MIN_REGION_OBS,
};
pub use nls::{
    fit_field_nls, runs_test, select_profile_model, FieldObservation, GeometryHint, ModelSelection, NlsFit,
    ProfileModel, MAX_ITERATIONS, MIN_NLS_OBS, MIN_SELECTION_OBS, RANDOM_RESTARTS, UPGRADE_LEVEL,
};
pub use ols::{bootstrap_d_star_ci, boundary_from_fit, fit_loglinear, BoundaryEstimate, DecayFit, Z95};
pub use smoother::{
    detect_boundary, nonparametric_fit, Bandwidth, BoundaryDetection, CrossingMode, Link, NonparFit,
    SmootherOptions, MIN_NONPAR_OBS,
};

pub(crate) use ols::quantile_sorted;
