//! Multi-block sparse canonical correlation analysis.
//!
//! The leading direction maximizes the Rayleigh quotient
//! `f(β) = βᵀΣ̂β / βᵀΛ̂β` where `Λ̂` is the block-diagonal part of the sample
//! covariance. It is estimated by proximal gradient ascent under a
//! geometrically shrinking l1 bound, and further directions by deflating
//! the data matrix. The crate also ships the screening initializer, a
//! Gaussian simulator with known ground truth, and the two test-set
//! evaluation metrics.
//!
//! Every numerical routine is generic over [`Real`] (`f32` or `f64`); the
//! `*64` aliases below fix the scalar to `f64`, which the CLI uses.

pub mod data;
pub mod deflation;
pub mod error;
pub mod evaluate;
pub mod init;
pub mod io;
pub mod linalg;
pub mod projection;
pub mod scalar;
pub mod simulate;
pub mod solver;

pub use data::{BlockLayout, ColumnStats, CovMode, CovOperator, CovOps, Dataset, DenseCov};
pub use deflation::{
    deflate_data, fit_sequential, fit_sequential_with_starts, schur_deflate_cov, DeflationState,
    SequentialFit,
};
pub use error::{Error, Result};
pub use evaluate::{
    projection_residual, summarize, test_deflated_correlation, RegressionMode, Residuals, Summary,
};
pub use init::{init_direction, screen_features, shrinkage_intensity, InitConfig, Initialization, ScreenedSet};
pub use projection::{project_l1_sphere, zeta, ProjectionResult};
pub use scalar::Real;
pub use simulate::{
    build_lambda, generate, population_quotients, CovFamily, GroundTruth, Scenario, ScenarioSpec,
    Simulation, SupportMode,
};
pub use solver::{
    bound_schedule, estimate_direction, estimate_direction_with, fit_leading, gradient, proximal_step, rayleigh,
    select_cv, select_penalized, BoundSchedule, CvSelection, DirectionEstimate, FoldStart, Iterate, Problem,
    Selection, SolverConfig, Trajectory,
};

pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type Trajectory64 = Trajectory<f64>;
pub type DirectionEstimate64 = DirectionEstimate<f64>;
