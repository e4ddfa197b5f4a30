//! l1-penalized logistic regression solved by proximal gradient, with a KKT
//! certificate: the dual sign vector, the equicorrelation set and a
//! degeneracy flag.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SigleError};
use crate::glm::{sigmoid, sigmoid_prime, softplus, weighted_gram, DesignProblem};
use crate::numerics::linalg::{select_columns, solve_spd, spectral_norm_sq};
use crate::numerics::{serde_vector, Mat, Vector};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iter: usize,
    pub kkt_tolerance: f64,
    pub active_tolerance: f64,
    /// FISTA momentum with adaptive restart; plain ISTA when off.
    pub acceleration: bool,
    /// Newton refinement of the active block once the support settles.
    pub polish: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 50_000,
            kkt_tolerance: 1e-6,
            active_tolerance: 1e-4,
            acceleration: true,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LassoCertificate {
    #[serde(with = "serde_vector")]
    pub theta_hat: Vector,
    /// `(1/lambda) X^T (Y - sigma(X theta_hat))`.
    #[serde(with = "serde_vector")]
    pub sign_vector: Vector,
    pub support: Vec<usize>,
    pub kkt_residual: f64,
    /// Some index off the support has `|S_k|` within `active_tolerance` of 1.
    pub degenerate: bool,
    pub iterations: usize,
}

impl LassoCertificate {
    /// Signs of the dual vector restricted to the support.
    pub fn support_signs(&self) -> Vec<f64> {
        self.support
            .iter()
            .map(|&k| self.sign_vector[k].signum())
            .collect()
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// `(1/lambda) X^T (Y - sigma(X theta))`.
pub fn sign_vector(x: &Mat, y: &Vector, lambda: f64, theta: &Vector) -> Vector {
    let eta = x * theta;
    let r = Vector::from_fn(eta.len(), |i, _| y[i] - sigmoid(eta[i]));
    (x.transpose() * r) / lambda
}

/// Largest violation of the KKT conditions, in units of the dual sign vector.
pub fn kkt_residual(theta: &Vector, signs: &Vector) -> f64 {
    theta
        .iter()
        .zip(signs.iter())
        .map(|(&t, &s)| {
            if t != 0.0 {
                (s - t.signum()).abs()
            } else {
                (s.abs() - 1.0).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Sorted indices with `|S_k| >= 1 - active_tolerance`.
pub fn equicorrelation_set(signs: &Vector, active_tolerance: f64) -> Vec<usize> {
    signs
        .iter()
        .enumerate()
        .filter(|(_, s)| s.abs() >= 1.0 - active_tolerance)
        .map(|(k, _)| k)
        .collect()
}

/// Solver bound to one design and penalty; reusable across responses.
#[derive(Debug, Clone)]
pub struct LassoSolver {
    x: Mat,
    xt: Mat,
    lambda: f64,
    lipschitz: f64,
    opts: SolverOptions,
}

impl LassoSolver {
    pub fn new(x: Mat, lambda: f64, opts: SolverOptions) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(SigleError::InvalidInput("lambda must be positive".into()));
        }
        if opts.max_iter == 0 || !(opts.kkt_tolerance > 0.0) {
            return Err(SigleError::InvalidInput(
                "solver needs max_iter >= 1 and kkt_tolerance > 0".into(),
            ));
        }
        let lipschitz = (spectral_norm_sq(&x) / 4.0).max(1e-12);
        let xt = x.transpose();
        Ok(Self {
            x,
            xt,
            lambda,
            lipschitz,
            opts,
        })
    }

    pub fn for_problem(prob: &DesignProblem, opts: SolverOptions) -> Result<Self> {
        Self::new(prob.x.clone(), prob.lambda, opts)
    }

    pub fn x(&self) -> &Mat {
        &self.x
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    fn loss(&self, eta: &Vector, y: &Vector) -> f64 {
        eta.iter().zip(y.iter()).map(|(&t, &yi)| softplus(t) - yi * t).sum()
    }

    fn grad_from_eta(&self, eta: &Vector, y: &Vector) -> Vector {
        let r = Vector::from_fn(eta.len(), |i, _| sigmoid(eta[i]) - y[i]);
        &self.xt * r
    }

    fn signs_at(&self, theta: &Vector, y: &Vector) -> Vector {
        let eta = &self.x * theta;
        -self.grad_from_eta(&eta, y) / self.lambda
    }

    pub fn certify(&self, y: &Vector, theta: Vector, iterations: usize) -> LassoCertificate {
        let signs = self.signs_at(&theta, y);
        let residual = kkt_residual(&theta, &signs);
        let tol = self.opts.active_tolerance;
        let mut support = Vec::new();
        let mut degenerate = false;
        for k in 0..theta.len() {
            if signs[k].abs() >= 1.0 - tol {
                if theta[k] != 0.0 {
                    support.push(k);
                } else {
                    degenerate = true;
                }
            }
        }
        LassoCertificate {
            theta_hat: theta,
            sign_vector: signs,
            support,
            kkt_residual: residual,
            degenerate,
            iterations,
        }
    }

    /// Solve from `theta = 0`.
    pub fn solve(&self, y: &Vector) -> Result<LassoCertificate> {
        self.solve_from(y, None)
    }

    /// Solve starting from `init` (warm start or random restart).
    pub fn solve_from(&self, y: &Vector, init: Option<&Vector>) -> Result<LassoCertificate> {
        let d = self.x.ncols();
        if y.len() != self.x.nrows() {
            return Err(SigleError::DimensionMismatch {
                context: "response length vs design rows",
                expected: self.x.nrows(),
                got: y.len(),
            });
        }
        let lambda = self.lambda;
        let tol = self.opts.kkt_tolerance;

        // zero is optimal iff ||X^T (Y - 1/2)||_inf <= lambda
        let zero = Vector::zeros(d);
        let zero_signs = self.signs_at(&zero, y);
        if zero_signs.amax() <= 1.0 + tol && init.is_none() {
            let cert = self.certify(y, zero, 0);
            if cert.kkt_residual <= tol {
                return Ok(cert);
            }
        }

        let mut x_cur = init.cloned().unwrap_or_else(|| Vector::zeros(d));
        let mut z = x_cur.clone();
        let mut t = 1.0f64;
        let mut step = 1.0 / self.lipschitz;
        let max_step = 1e3 / self.lipschitz;
        let obj = |eta: &Vector, th: &Vector| self.loss(eta, y) + lambda * th.lp_norm(1);
        let mut f_cur = obj(&(&self.x * &x_cur), &x_cur);
        let mut best = (f64::INFINITY, x_cur.clone());
        let mut last_support: Option<Vec<(usize, bool)>> = None;
        let mut stable_checks = 0usize;

        for iter in 1..=self.opts.max_iter {
            let eta_z = &self.x * &z;
            let fz = self.loss(&eta_z, y);
            let gz = self.grad_from_eta(&eta_z, y);
            let (x_new, f_new_smooth) = loop {
                let cand = Vector::from_fn(d, |k, _| {
                    soft_threshold(z[k] - step * gz[k], step * lambda)
                });
                let diff = &cand - &z;
                let eta_c = &self.x * &cand;
                let fc = self.loss(&eta_c, y);
                let bound = fz + gz.dot(&diff) + diff.norm_squared() / (2.0 * step);
                if fc <= bound + 1e-12 * fz.abs().max(1.0) || step <= 1e-3 / self.lipschitz {
                    break (cand, fc);
                }
                step *= 0.5;
            };
            let f_new = f_new_smooth + lambda * x_new.lp_norm(1);

            if self.opts.acceleration {
                if f_new > f_cur && t > 1.0 {
                    // adaptive restart: drop momentum, take a plain step next
                    t = 1.0;
                    z = x_cur.clone();
                    continue;
                }
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                z = &x_new + (&x_new - &x_cur) * ((t - 1.0) / t_next);
                t = t_next;
            } else {
                z = x_new.clone();
            }
            x_cur = x_new;
            f_cur = f_new;
            step = (step * 1.1).min(max_step);

            if iter % 10 == 0 || iter == self.opts.max_iter {
                let signs = self.signs_at(&x_cur, y);
                let res = kkt_residual(&x_cur, &signs);
                if res < best.0 {
                    best = (res, x_cur.clone());
                }
                if res <= tol {
                    return Ok(self.certify(y, x_cur, iter));
                }
                if self.opts.polish {
                    let pattern: Vec<(usize, bool)> = x_cur
                        .iter()
                        .enumerate()
                        .filter(|(_, v)| **v != 0.0)
                        .map(|(k, v)| (k, *v > 0.0))
                        .collect();
                    if last_support.as_ref() == Some(&pattern) {
                        stable_checks += 1;
                    } else {
                        stable_checks = 0;
                        last_support = Some(pattern.clone());
                    }
                    if stable_checks == 2 || (stable_checks > 0 && stable_checks % 20 == 0) {
                        if let Some(theta) = self.newton_polish(y, &x_cur, &pattern) {
                            let cert = self.certify(y, theta, iter);
                            if cert.kkt_residual <= tol {
                                return Ok(cert);
                            }
                        }
                    }
                }
            }
        }

        let cert = self.certify(y, best.1, self.opts.max_iter);
        Err(SigleError::NonConvergence {
            residual: cert.kkt_residual,
            certificate: Box::new(cert),
        })
    }

    /// Solve `X_A^T (Y - sigma(X_A theta_A)) = lambda s_A` by damped Newton for
    /// a fixed active set and sign pattern.
    fn newton_polish(&self, y: &Vector, start: &Vector, pattern: &[(usize, bool)]) -> Option<Vector> {
        if pattern.is_empty() || pattern.len() > self.x.nrows() {
            return None;
        }
        let cols: Vec<usize> = pattern.iter().map(|p| p.0).collect();
        let s = Vector::from_iterator(
            cols.len(),
            pattern.iter().map(|p| if p.1 { 1.0 } else { -1.0 }),
        );
        let xa = select_columns(&self.x, &cols);
        let mut theta = Vector::from_iterator(cols.len(), cols.iter().map(|&k| start[k]));
        let residual = |th: &Vector| -> Vector {
            let eta = &xa * th;
            let r = Vector::from_fn(eta.len(), |i, _| y[i] - sigmoid(eta[i]));
            xa.transpose() * r - &s * self.lambda
        };
        let mut f = residual(&theta);
        for _ in 0..50 {
            if f.amax() <= 1e-12 * self.lambda.max(1.0) {
                break;
            }
            let eta = &xa * &theta;
            let h = weighted_gram(&xa, &eta.map(sigmoid_prime));
            let delta = solve_spd(&h, &f)?;
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let cand = &theta + &delta * scale;
                let fc = residual(&cand);
                if fc.norm() < f.norm() {
                    theta = cand;
                    f = fc;
                    accepted = true;
                    break;
                }
                scale *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if theta.iter().zip(s.iter()).any(|(t, sg)| t * sg <= 0.0) {
            return None;
        }
        let mut full = Vector::zeros(self.x.ncols());
        for (j, &k) in cols.iter().enumerate() {
            full[k] = theta[j];
        }
        Some(full)
    }
}

/// Solve the generalized linear lasso for `prob`.
pub fn solve_gll(prob: &DesignProblem, opts: SolverOptions) -> Result<LassoCertificate> {
    LassoSolver::for_problem(prob, opts)?.solve(&prob.y)
}
