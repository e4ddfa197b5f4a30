//! Post-selection inference for l1-penalized logistic regression.

pub mod benchmarks;
pub mod confidence;
pub mod error;
pub mod event;
pub mod experiment;
pub mod glm;
pub mod lasso;
pub mod numerics;
pub mod psi;
pub mod sampler;
pub mod sigle;

pub use error::{Result, SigleError};
pub use glm::{DesignProblem, State};
pub use lasso::{solve_gll, LassoCertificate, LassoSolver, SolverOptions};
