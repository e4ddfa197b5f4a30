//! The map `Xi(theta) = X_M^T sigma(X_M theta)`, its inverse `Psi` and the
//! pseudo-true parameter `theta_bar` computed by gradient descent.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SigleError};
use crate::glm::{logit, sigmoid, sigmoid_prime, weighted_gram};
use crate::numerics::linalg::{least_squares, solve_spd, spectral_norm_sq};
use crate::numerics::{serde_vector, Mat, Vector};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct PsiOptions {
    /// Convergence when `|Xi(theta) - rho| <= tolerance * (1 + |rho|)`.
    pub tolerance: f64,
    pub max_iter: usize,
    /// `|theta|` beyond this is read as `rho` outside the image of `Xi`.
    pub divergence_cap: f64,
    /// Largest admissible `|x_i^T theta|`. Fitted probabilities within about
    /// `e^{-30}` of 0 or 1 only arise on the boundary of the image.
    pub logit_cap: f64,
}

impl Default for PsiOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iter: 200,
            divergence_cap: 1e3,
            logit_cap: 30.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsiResult {
    #[serde(with = "serde_vector")]
    pub theta: Vector,
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

pub fn xi(theta: &Vector, x_m: &Mat) -> Vector {
    let eta = x_m * theta;
    x_m.transpose() * eta.map(sigmoid)
}

/// Solve `Xi(theta) = rho` by damped Newton from `theta = 0`.
pub fn psi(rho: &Vector, x_m: &Mat, opts: &PsiOptions) -> Result<PsiResult> {
    let s = x_m.ncols();
    if rho.len() != s {
        return Err(SigleError::DimensionMismatch {
            context: "psi target vs selected columns",
            expected: s,
            got: rho.len(),
        });
    }
    let tol = opts.tolerance * (1.0 + rho.norm());
    let mut theta = Vector::zeros(s);
    let xt = x_m.transpose();
    let residual_at = |eta: &Vector| rho - &xt * eta.map(sigmoid);

    for iter in 0..opts.max_iter {
        let eta = x_m * &theta;
        if theta.norm() > opts.divergence_cap || eta.amax() > opts.logit_cap {
            return Err(SigleError::PsiDivergence {
                iterations: iter,
                theta_norm: theta.norm(),
            });
        }
        let r = residual_at(&eta);
        let rn = r.norm();
        let g = weighted_gram(x_m, &eta.map(sigmoid_prime));
        let delta = solve_spd(&g, &r).ok_or(SigleError::SingularFisher)?;
        if rn <= tol && delta.norm() <= 1e-9 * (1.0 + theta.norm()) {
            return Ok(PsiResult {
                theta,
                residual: rn,
                converged: true,
                iterations: iter,
            });
        }
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &theta + &delta * scale;
            if residual_at(&(x_m * &cand)).norm() < rn {
                theta = cand;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            // roundoff floor
            if rn <= tol {
                return Ok(PsiResult {
                    theta,
                    residual: rn,
                    converged: true,
                    iterations: iter,
                });
            }
            return Err(SigleError::PsiDivergence {
                iterations: iter,
                theta_norm: theta.norm(),
            });
        }
    }
    Err(SigleError::PsiDivergence {
        iterations: opts.max_iter,
        theta_norm: theta.norm(),
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct ThetaBarOptions {
    /// Target for `G(theta)`; `None` means `1e-10 * s`.
    pub epsilon: Option<f64>,
    pub learning_rate: f64,
    pub max_iter: usize,
}

impl Default for ThetaBarOptions {
    fn default() -> Self {
        Self {
            epsilon: None,
            learning_rate: 1.0,
            max_iter: 1_000_000,
        }
    }
}

/// `G(theta) = |X_M^T (sigma(X_M theta) - pi_bar)|^2`.
pub fn theta_bar_objective(theta: &Vector, pi_bar: &Vector, x_m: &Mat) -> f64 {
    let eta = x_m * theta;
    let r = eta.map(sigmoid) - pi_bar;
    (x_m.transpose() * r).norm_squared()
}

/// `sqrt(sum_i |X_{i,M}|_1^2)`.
pub fn norm_1_2(x_m: &Mat) -> f64 {
    x_m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>().powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Outcome of the gradient-descent route, with the objective trace.
#[derive(Debug, Clone)]
pub struct ThetaBarTrace {
    pub result: PsiResult,
    pub objective: Vec<f64>,
}

/// Pseudo-true parameter `theta_bar` with `Xi(theta_bar) = X_M^T pi_bar`:
/// least-squares warm start on the logits, then fixed-step gradient descent.
pub fn theta_bar(pi_bar: &Vector, x_m: &Mat, opts: &ThetaBarOptions) -> Result<PsiResult> {
    theta_bar_traced(pi_bar, x_m, opts, false).map(|t| t.result)
}

pub fn theta_bar_traced(
    pi_bar: &Vector,
    x_m: &Mat,
    opts: &ThetaBarOptions,
    keep_trace: bool,
) -> Result<ThetaBarTrace> {
    if pi_bar.len() != x_m.nrows() {
        return Err(SigleError::DimensionMismatch {
            context: "pi_bar length vs design rows",
            expected: x_m.nrows(),
            got: pi_bar.len(),
        });
    }
    if pi_bar.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(SigleError::InvalidInput("pi_bar must lie strictly inside (0, 1)".into()));
    }
    let s = x_m.ncols();
    let eps = opts.epsilon.unwrap_or(1e-10 * s as f64);
    let logits = pi_bar.map(logit);
    let mut theta = least_squares(x_m, &logits).unwrap_or_else(|| Vector::zeros(s));
    let mut g = theta_bar_objective(&theta, pi_bar, x_m);
    let mut trace = Vec::new();
    if keep_trace {
        trace.push(g);
    }
    if g < eps {
        return Ok(ThetaBarTrace {
            result: PsiResult {
                theta,
                residual: g.sqrt(),
                converged: true,
                iterations: 0,
            },
            objective: trace,
        });
    }
    let l_g = 0.25 * spectral_norm_sq(x_m) * norm_1_2(x_m);
    let step = opts.learning_rate / l_g.max(1e-300);
    let xt = x_m.transpose();
    for iter in 1..=opts.max_iter {
        let eta = x_m * &theta;
        let r = eta.map(sigmoid) - pi_bar;
        let inner = &xt * r;
        let w = eta.map(sigmoid_prime);
        let grad = weighted_gram(x_m, &w) * inner * 2.0;
        theta -= grad * step;
        g = theta_bar_objective(&theta, pi_bar, x_m);
        if keep_trace {
            trace.push(g);
        }
        if g < eps {
            return Ok(ThetaBarTrace {
                result: PsiResult {
                    theta,
                    residual: g.sqrt(),
                    converged: true,
                    iterations: iter,
                },
                objective: trace,
            });
        }
    }
    Err(SigleError::MaxIterExceeded {
        iterations: opts.max_iter,
        residual: g.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::fisher_info;
    use crate::numerics::SeededRng;
    use approx::assert_abs_diff_eq;

    fn design(rng: &mut SeededRng, n: usize, s: usize) -> Mat {
        Mat::from_fn(n, s, |_, _| rng.normal())
    }

    #[test]
    fn xi_at_zero_is_half_column_sums() {
        let mut rng = SeededRng::new(1);
        let x = design(&mut rng, 7, 3);
        let expected = x.transpose() * Vector::from_element(7, 0.5);
        assert_abs_diff_eq!(xi(&Vector::zeros(3), &x), expected, epsilon = 1e-15);
    }

    #[test]
    fn xi_matches_direct_summation() {
        let mut rng = SeededRng::new(2);
        let x = design(&mut rng, 5, 2);
        let theta = Vector::from_vec(vec![0.7, -1.2]);
        let mut direct = [0.0; 2];
        for i in 0..5 {
            let t = x[(i, 0)] * theta[0] + x[(i, 1)] * theta[1];
            let p = 1.0 / (1.0 + (-t).exp());
            direct[0] += x[(i, 0)] * p;
            direct[1] += x[(i, 1)] * p;
        }
        let v = xi(&theta, &x);
        assert_abs_diff_eq!(v[0], direct[0], epsilon = 1e-14);
        assert_abs_diff_eq!(v[1], direct[1], epsilon = 1e-14);
    }

    #[test]
    fn xi_jacobian_is_fisher() {
        let mut rng = SeededRng::new(3);
        let x = design(&mut rng, 9, 3);
        let theta = Vector::from_vec(vec![0.3, -0.5, 1.1]);
        let f = fisher_info(&theta, &x).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[k] += h;
            tm[k] -= h;
            let col = (xi(&tp, &x) - xi(&tm, &x)) / (2.0 * h);
            assert!((col - f.column(k)).amax() < 1e-7);
        }
    }

    #[test]
    fn psi_of_half_sums_is_zero() {
        let mut rng = SeededRng::new(4);
        let x = design(&mut rng, 10, 2);
        let rho = x.transpose() * Vector::from_element(10, 0.5);
        let r = psi(&rho, &x, &PsiOptions::default()).unwrap();
        assert!(r.converged);
        assert!(r.theta.amax() < 1e-12);
    }

    #[test]
    fn psi_round_trip() {
        let mut rng = SeededRng::new(5);
        for _ in 0..100 {
            let s = 1 + rng.index(3);
            let x = design(&mut rng, 30, s);
            let theta0 = Vector::from_fn(s, |_, _| 4.0 * rng.uniform() - 2.0);
            let r = psi(&xi(&theta0, &x), &x, &PsiOptions::default()).unwrap();
            assert!((r.theta - theta0).amax() < 1e-6);
        }
    }

    #[test]
    fn separable_data_diverges() {
        let x = Mat::from_column_slice(4, 1, &[0.5, 1.0, 2.0, 0.3]);
        let rho = x.transpose() * Vector::from_element(4, 1.0);
        match psi(&rho, &x, &PsiOptions::default()) {
            Err(SigleError::PsiDivergence { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn theta_bar_warm_start_is_exact_on_logit_span() {
        let mut rng = SeededRng::new(6);
        let x = design(&mut rng, 12, 2);
        let theta0 = Vector::from_vec(vec![0.4, -0.9]);
        let pi = (&x * &theta0).map(sigmoid);
        let t = theta_bar_traced(&pi, &x, &ThetaBarOptions::default(), true).unwrap();
        assert_eq!(t.result.iterations, 0);
        assert!((t.result.theta - theta0).amax() < 1e-10);

        let half = Vector::from_element(12, 0.5);
        let z = theta_bar(&half, &x, &ThetaBarOptions::default()).unwrap();
        assert!(z.theta.amax() < 1e-12);
    }

    #[test]
    fn theta_bar_descent_agrees_with_newton() {
        let mut rng = SeededRng::new(7);
        for _ in 0..10 {
            let x = design(&mut rng, 8, 2);
            let pi = Vector::from_fn(8, |_, _| 0.15 + 0.7 * rng.uniform());
            let opts = ThetaBarOptions {
                epsilon: Some(1e-22),
                ..Default::default()
            };
            let gd = theta_bar_traced(&pi, &x, &opts, true).unwrap();
            for w in gd.objective.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "objective increased {} -> {}", w[0], w[1]);
            }
            let nt = psi(&(x.transpose() * &pi), &x, &PsiOptions::default()).unwrap();
            assert!((gd.result.theta - nt.theta).amax() < 1e-6);
        }
    }
}
