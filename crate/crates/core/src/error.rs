use thiserror::Error;

use crate::lasso::LassoCertificate;

pub type Result<T> = std::result::Result<T, SigleError>;

#[derive(Debug, Error)]
pub enum SigleError {
    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The lasso solver hit its iteration cap before the KKT residual fell
    /// below tolerance. The best iterate is attached but its support must
    /// not be trusted.
    #[error("lasso solver did not converge (KKT residual {residual:.3e})")]
    NonConvergence {
        residual: f64,
        certificate: Box<LassoCertificate>,
    },

    #[error("enumeration requested for N = {n} above the cap {cap}")]
    CapExceeded { n: usize, cap: usize },

    /// Newton iteration for the inverse of `theta -> X_M^T sigma(X_M theta)`
    /// diverged; the target is treated as lying outside the image.
    #[error("psi diverged after {iterations} iterations (|theta| = {theta_norm:.3e})")]
    PsiDivergence { iterations: usize, theta_norm: f64 },

    #[error("Fisher information is numerically singular")]
    SingularFisher,

    #[error("gradient descent reached {iterations} iterations with residual {residual:.3e}")]
    MaxIterExceeded { iterations: usize, residual: f64 },

    #[error("rejection sampler acceptance {acceptance:.2e} below floor {floor:.2e}")]
    AcceptanceTooLow { acceptance: f64, floor: f64 },

    #[error("effective sample size {ess:.2} is too small for a reliable estimate")]
    DegenerateWeights { ess: f64 },

    #[error("conditional moments are singular (min value {min_value:.3e})")]
    SingularMoments { min_value: f64 },

    #[error("chain effective size {ess:.1} below the required {required}")]
    InsufficientSamples { ess: f64, required: usize },

    #[error("weighted Gram matrix X_M^T W X_M is singular")]
    SingularWeightedGram,

    #[error("empty truncation interval [{lower}, {upper}]")]
    EmptyTruncation { lower: f64, upper: f64 },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}
