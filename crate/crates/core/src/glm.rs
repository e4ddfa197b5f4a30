//! Logistic-model primitives: partition function, sigmoid, likelihood,
//! score and Fisher information.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SigleError};
use crate::numerics::{Mat, Vector};

/// A hypercube state `Y in {0,1}^N`.
pub type State = Vec<u8>;

/// Design matrix, binary response and lasso penalty shared by an experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignProblem {
    #[serde(with = "crate::numerics::serde_matrix")]
    pub x: Mat,
    #[serde(with = "crate::numerics::serde_vector")]
    pub y: Vector,
    pub lambda: f64,
}

impl DesignProblem {
    pub fn new(x: Mat, y: Vector, lambda: f64) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(SigleError::InvalidInput("design must have N >= 1 and d >= 1".into()));
        }
        if y.len() != x.nrows() {
            return Err(SigleError::DimensionMismatch {
                context: "response length vs design rows",
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(SigleError::InvalidInput("response entries must be 0 or 1".into()));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(SigleError::InvalidInput(format!("lambda must be positive, got {lambda}")));
        }
        Ok(Self { x, y, lambda })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn with_response(&self, y: Vector) -> Result<Self> {
        Self::new(self.x.clone(), y, self.lambda)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `sigma'(x) = sigma(x) sigma(-x)`.
#[inline]
pub fn sigmoid_prime(x: f64) -> f64 {
    sigmoid(x) * sigmoid(-x)
}

/// Partition function `log(1 + e^t)`.
#[inline]
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn check_dims(theta: &Vector, x: &Mat, y: Option<&Vector>) -> Result<()> {
    if theta.len() != x.ncols() {
        return Err(SigleError::DimensionMismatch {
            context: "parameter length vs design columns",
            expected: x.ncols(),
            got: theta.len(),
        });
    }
    if let Some(y) = y {
        if y.len() != x.nrows() {
            return Err(SigleError::DimensionMismatch {
                context: "response length vs design rows",
                expected: x.nrows(),
                got: y.len(),
            });
        }
    }
    Ok(())
}

/// `sum_i xi(<x_i, theta>) - y_i <x_i, theta>`.
pub fn neg_log_likelihood(theta: &Vector, x: &Mat, y: &Vector) -> Result<f64> {
    check_dims(theta, x, Some(y))?;
    let eta = x * theta;
    Ok(eta
        .iter()
        .zip(y.iter())
        .map(|(&t, &yi)| softplus(t) - yi * t)
        .sum())
}

/// `X^T (sigma(X theta) - Y)`.
pub fn score(theta: &Vector, x: &Mat, y: &Vector) -> Result<Vector> {
    check_dims(theta, x, Some(y))?;
    let eta = x * theta;
    let resid = Vector::from_fn(eta.len(), |i, _| sigmoid(eta[i]) - y[i]);
    Ok(x.transpose() * resid)
}

/// `X_M^T Diag(sigma'(X_M theta)) X_M`.
pub fn fisher_info(theta: &Vector, x_m: &Mat) -> Result<Mat> {
    check_dims(theta, x_m, None)?;
    let eta = x_m * theta;
    let w = eta.map(sigmoid_prime);
    Ok(weighted_gram(x_m, &w))
}

/// `X^T Diag(w) X`, symmetrized.
pub fn weighted_gram(x: &Mat, w: &Vector) -> Mat {
    let mut xw = x.clone();
    for (mut row, &wi) in xw.row_iter_mut().zip(w.iter()) {
        row *= wi;
    }
    let g = x.transpose() * xw;
    (&g + g.transpose()) * 0.5
}

pub fn state_to_vector(state: &[u8]) -> Vector {
    Vector::from_iterator(state.len(), state.iter().map(|&b| b as f64))
}

/// `log P_pi(y) = sum_i y_i log pi_i + (1 - y_i) log(1 - pi_i)`.
pub fn log_bernoulli_prob(state: &[u8], pi: &Vector) -> f64 {
    state
        .iter()
        .zip(pi.iter())
        .map(|(&b, &p)| if b == 1 { p.ln() } else { (-p).ln_1p() })
        .sum()
}
