//! Regularized CP factorization with the within-group demand penalty.

mod baseline;
mod bcd;
mod groups;
pub mod linalg;
mod model;
pub mod penalty;

pub use baseline::{matrix_baseline_fit, MatrixFactors, SparseMatrix};
pub use bcd::{
    fit, improvement, squared_error, update_product_group, update_store_group, update_time_factors,
    BcdFitter, TimeAnchor, DIRECT_SOLVE_LIMIT,
};
pub use groups::{
    clip_rho, equicorrelation, min_feasible_rho, parse_covariance_file, parse_group_file,
    render_group_file, resolve_groups, Group, GroupAssignment, GroupStructure,
};
pub use linalg::inverse_sqrt;
pub use model::{BlockStep, FactorModel, FitDiagnostics, FitParams, Phase};
pub use penalty::{empirical_cov, penalty_direct, penalty_quadratic, PenaltyContext};
