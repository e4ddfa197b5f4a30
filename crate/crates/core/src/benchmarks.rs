//! Competitor procedures: the weak learner, IRLS for the lasso, and the
//! debiased-lasso tests with polyhedral truncation (TT-1, TT-Bonferroni).

use serde::{Deserialize, Serialize};

use crate::error::{Result, SigleError};
use crate::glm::{sigmoid, sigmoid_prime, weighted_gram, DesignProblem};
use crate::lasso::{LassoCertificate, LassoSolver, SolverOptions};
use crate::numerics::linalg::{inverse_spd, select_columns, spectral_norm_sq};
use crate::numerics::{serde_matrix, serde_vector, truncated_normal_cdf, Mat, SpectralDecomposition, Vector};
use crate::sampler::WeightedLaw;
use crate::sigle::Decision;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub statistic: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub decision: Decision,
    /// The statistic does not depend on `Y`; the p-value is set to 1.
    pub constant_statistic: bool,
}

impl BenchmarkReport {
    fn new(statistic: f64, p_value: f64, alpha: f64, constant_statistic: bool) -> Self {
        Self {
            statistic,
            p_value,
            alpha,
            decision: if p_value <= alpha { Decision::Reject } else { Decision::Retain },
            constant_statistic,
        }
    }
}

/// Two-sided test on `sum_i |pi_i - y_i|`, calibrated on a null law.
#[derive(Debug, Clone)]
pub struct WeakLearner {
    pi_tilde: Vector,
    /// `(value, weight)` sorted by value.
    null: Vec<(f64, f64)>,
    constant: bool,
}

impl WeakLearner {
    pub fn calibrate(pi_tilde: &Vector, null_law: &WeightedLaw) -> Self {
        let constant = pi_tilde.iter().all(|&p| (p - 0.5).abs() < 1e-12);
        let mut null: Vec<(f64, f64)> = null_law
            .states
            .iter()
            .zip(&null_law.weights)
            .map(|(y, &w)| (weak_statistic(pi_tilde, y), w))
            .collect();
        null.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self {
            pi_tilde: pi_tilde.clone(),
            null,
            constant,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.constant
    }

    pub fn test(&self, y_obs: &[u8], alpha: f64) -> BenchmarkReport {
        let t = weak_statistic(&self.pi_tilde, y_obs);
        if self.constant {
            return BenchmarkReport::new(t, 1.0, alpha, true);
        }
        let tol = 1e-12 * (1.0 + t.abs());
        let lower: f64 = self.null.iter().filter(|(v, _)| *v <= t + tol).map(|(_, w)| w).sum();
        let upper: f64 = self.null.iter().filter(|(v, _)| *v >= t - tol).map(|(_, w)| w).sum();
        let p = (2.0 * lower.min(upper)).min(1.0);
        BenchmarkReport::new(t, p, alpha, false)
    }
}

pub fn weak_statistic(pi_tilde: &Vector, y: &[u8]) -> f64 {
    pi_tilde.iter().zip(y).map(|(&p, &b)| (p - b as f64).abs()).sum()
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct IrlsOptions {
    pub max_iter: usize,
    pub tolerance: f64,
    pub inner_max_iter: usize,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tolerance: 1e-8,
            inner_max_iter: 50_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IrlsFit {
    #[serde(with = "serde_vector")]
    pub theta: Vector,
    pub iterations: usize,
}

fn soft(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

/// `argmin 1/2 (z - X theta)^T W (z - X theta) + lambda |theta|_1` by
/// accelerated proximal gradient from `start`.
fn weighted_lasso(x: &Mat, w: &Vector, z: &Vector, lambda: f64, start: &Vector, max_iter: usize) -> Vector {
    let h = weighted_gram(x, w);
    let xtwz = x.transpose() * z.component_mul(w);
    let l = SpectralDecomposition::new(&h)
        .map(|s| s.max_eigenvalue())
        .unwrap_or_else(|_| spectral_norm_sq(x) * w.amax())
        .max(1e-300);
    let step = 1.0 / l;
    let obj = |th: &Vector| 0.5 * th.dot(&(&h * th)) - xtwz.dot(th) + lambda * th.lp_norm(1);
    let mut theta = start.clone();
    let mut y = theta.clone();
    let mut t = 1.0f64;
    let mut f_cur = obj(&theta);
    for _ in 0..max_iter {
        let g = &h * &y - &xtwz;
        let next = (&y - g * step).map(|v| soft(v, step * lambda));
        let f_next = obj(&next);
        if f_next > f_cur && t > 1.0 {
            t = 1.0;
            y = theta.clone();
            continue;
        }
        let change = (&next - &theta).amax();
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + (&next - &theta) * ((t - 1.0) / t_next);
        t = t_next;
        theta = next;
        f_cur = f_next;
        if change < 1e-14 * (1.0 + theta.amax()) {
            break;
        }
    }
    theta
}

/// Iteratively reweighted least squares for the l1-penalized logistic
/// likelihood, from `theta = 0`.
pub fn irls_fit(prob: &DesignProblem, opts: &IrlsOptions) -> Result<IrlsFit> {
    irls_fit_from(prob, &Vector::zeros(prob.d()), opts)
}

pub fn irls_fit_from(prob: &DesignProblem, start: &Vector, opts: &IrlsOptions) -> Result<IrlsFit> {
    let x = &prob.x;
    let mut theta = start.clone();
    for iter in 1..=opts.max_iter {
        let eta = x * &theta;
        let w = eta.map(|t| sigmoid_prime(t).max(1e-12));
        let z = Vector::from_fn(eta.len(), |i, _| eta[i] + (prob.y[i] - sigmoid(eta[i])) / w[i]);
        let next = weighted_lasso(x, &w, &z, prob.lambda, &theta, opts.inner_max_iter);
        let change = (&next - &theta).amax();
        theta = next;
        if change < opts.tolerance {
            return Ok(IrlsFit {
                theta,
                iterations: iter,
            });
        }
    }
    let solver = LassoSolver::for_problem(prob, SolverOptions::default())?;
    let cert = solver.certify(&prob.y, theta, opts.max_iter);
    Err(SigleError::NonConvergence {
        residual: cert.kkt_residual,
        certificate: Box::new(cert),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DebiasedSolution {
    pub support: Vec<usize>,
    #[serde(with = "serde_vector")]
    pub theta_underline: Vector,
    /// `sigma'(X theta_hat)`.
    #[serde(with = "serde_vector")]
    pub weights: Vector,
    /// `(X_M^T W X_M)^{-1}`.
    #[serde(with = "serde_matrix")]
    pub cov: Mat,
    /// Rounded signs `S_M`.
    pub signs: Vec<f64>,
    pub lambda: f64,
}

/// `theta_M + lambda (X_M^T W X_M)^{-1} S_M`, with `S_M` the dual sign vector
/// on the support.
pub fn tt_debias(cert: &LassoCertificate, prob: &DesignProblem) -> Result<DebiasedSolution> {
    if cert.support.is_empty() {
        return Err(SigleError::InvalidInput("debiasing needs a nonempty support".into()));
    }
    if cert.degenerate {
        return Err(SigleError::InvalidInput("debiasing needs a non-degenerate certificate".into()));
    }
    let m = &cert.support;
    let x_m = select_columns(&prob.x, m);
    let weights = (&prob.x * &cert.theta_hat).map(sigmoid_prime);
    let h = weighted_gram(&x_m, &weights);
    let cov = inverse_spd(&h).ok_or(SigleError::SingularWeightedGram)?;
    let s_hat = Vector::from_iterator(m.len(), m.iter().map(|&k| cert.sign_vector[k]));
    let theta_m = Vector::from_iterator(m.len(), m.iter().map(|&k| cert.theta_hat[k]));
    let theta_underline = theta_m + &cov * s_hat * prob.lambda;
    Ok(DebiasedSolution {
        support: m.clone(),
        theta_underline,
        weights,
        cov,
        signs: cert.support_signs(),
        lambda: prob.lambda,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TruncatedGaussian {
    pub mu: f64,
    pub sigma2: f64,
    pub lower: f64,
    pub upper: f64,
}

impl TruncatedGaussian {
    pub fn cdf(&self, x: f64) -> f64 {
        truncated_normal_cdf(x, self.mu, self.sigma2, self.lower, self.upper)
    }

    /// `2 min(F(x), 1 - F(x))`.
    pub fn two_sided_p(&self, x: f64) -> f64 {
        let f = self.cdf(x);
        (2.0 * f.min(1.0 - f)).min(1.0)
    }
}

/// Truncation interval for `eta^T z` given `A z <= b`, conditioning on the
/// component of `z` orthogonal to `Sigma eta`.
pub fn polyhedral_interval(a: &Mat, b: &Vector, z: &Vector, sigma: &Mat, eta: &Vector) -> (f64, f64) {
    let s_eta = sigma * eta;
    let c = &s_eta / eta.dot(&s_eta);
    let r = z - &c * eta.dot(z);
    let ac = a * &c;
    let ar = a * &r;
    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::INFINITY;
    for i in 0..a.nrows() {
        let bound = (b[i] - ar[i]) / ac[i];
        if ac[i] < 0.0 {
            lower = lower.max(bound);
        } else if ac[i] > 0.0 {
            upper = upper.min(bound);
        }
    }
    (lower, upper)
}

/// Truncated-Gaussian law of the debiased coordinate `j` under the null
/// value `null_value`.
pub fn tt_truncation(deb: &DebiasedSolution, j: usize, null_value: f64) -> Result<TruncatedGaussian> {
    let s = deb.support.len();
    if j >= s {
        return Err(SigleError::InvalidInput(format!("coordinate {j} outside support of size {s}")));
    }
    let signs = Vector::from_column_slice(&deb.signs);
    let a = -Mat::from_diagonal(&signs);
    let b = -(Mat::from_diagonal(&signs) * (&deb.cov * &signs)) * deb.lambda;
    let mut eta = Vector::zeros(s);
    eta[j] = 1.0;
    let (lower, upper) = polyhedral_interval(&a, &b, &deb.theta_underline, &deb.cov, &eta);
    if lower >= upper {
        return Err(SigleError::EmptyTruncation { lower, upper });
    }
    Ok(TruncatedGaussian {
        mu: null_value,
        sigma2: deb.cov[(j, j)],
        lower,
        upper,
    })
}

/// Two-sided polyhedral p-value for coordinate `j`.
pub fn tt_pvalue(deb: &DebiasedSolution, j: usize, null_value: f64) -> Result<f64> {
    Ok(tt_truncation(deb, j, null_value)?.two_sided_p(deb.theta_underline[j]))
}

/// TT-1: the first selected coordinate.
pub fn tt1_test(deb: &DebiasedSolution, null: &Vector, alpha: f64) -> Result<BenchmarkReport> {
    let p = tt_pvalue(deb, 0, null[0])?;
    Ok(BenchmarkReport::new(deb.theta_underline[0], p, alpha, false))
}

/// TT-Bonferroni: `min(1, s min_j p_j)`.
pub fn tt_bonferroni_test(deb: &DebiasedSolution, null: &Vector, alpha: f64) -> Result<BenchmarkReport> {
    let s = deb.support.len();
    let mut pmin = 1.0f64;
    for j in 0..s {
        pmin = pmin.min(tt_pvalue(deb, j, null[j])?);
    }
    Ok(BenchmarkReport::new(
        deb.theta_underline.amax(),
        (s as f64 * pmin).min(1.0),
        alpha,
        false,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{enumerate_event, EventSpec};
    use crate::lasso::solve_gll;
    use crate::numerics::special::normal_cdf;
    use crate::numerics::SeededRng;
    use crate::psi::{psi, PsiOptions};
    use approx::assert_abs_diff_eq;

    fn random_problem(rng: &mut SeededRng, n: usize, d: usize, lambda: f64) -> DesignProblem {
        let x = Mat::from_fn(n, d, |_, _| rng.normal());
        let y = Vector::from_fn(n, |_, _| rng.bernoulli(0.5) as u8 as f64);
        DesignProblem::new(x, y, lambda).unwrap()
    }

    #[test]
    fn weak_learner_center_and_constant_cases() {
        let x = Mat::from_element(6, 1, 0.01);
        let spec = EventSpec::new(x, 1e3, vec![], 0.01, SolverOptions::default()).unwrap();
        let ev = enumerate_event(&spec, 20).unwrap();
        let law = WeightedLaw::exact(&ev, &Vector::from_element(6, 0.5)).unwrap();

        let half = Vector::from_element(6, 0.5);
        let wl = WeakLearner::calibrate(&half, &law);
        let r = wl.test(&[1, 0, 1, 0, 1, 1], 0.05);
        assert!(r.constant_statistic);
        assert_eq!(r.p_value, 1.0);

        let pi = Vector::from_vec(vec![0.2, 0.3, 0.5, 0.6, 0.7, 0.8]);
        let wl = WeakLearner::calibrate(&pi, &law);
        // statistic is linear in y; its median state sits at the center
        let mut stats: Vec<(f64, Vec<u8>)> = law.states.iter().map(|y| (weak_statistic(&pi, y), y.clone())).collect();
        stats.sort_by(|a, b| a.0.total_cmp(&b.0));
        let median = &stats[stats.len() / 2].1;
        assert!(wl.test(median, 0.05).p_value > 0.9);
    }

    #[test]
    fn irls_unpenalized_matches_newton() {
        let mut rng = SeededRng::new(1);
        let x = Mat::from_fn(20, 1, |_, _| rng.normal());
        let y = Vector::from_fn(20, |i, _| if (x[(i, 0)] + rng.normal()) > 0.0 { 1.0 } else { 0.0 });
        let prob = DesignProblem { x: x.clone(), y: y.clone(), lambda: 0.0 };
        let fit = irls_fit(&prob, &IrlsOptions::default()).unwrap();
        let mle = psi(&(x.transpose() * &y), &x, &PsiOptions::default()).unwrap();
        assert!((fit.theta[0] - mle.theta[0]).abs() < 1e-6);
    }

    #[test]
    fn irls_stays_at_zero_for_huge_lambda() {
        let mut rng = SeededRng::new(2);
        let mut prob = random_problem(&mut rng, 15, 4, 1.0);
        prob.lambda = 1e4;
        let fit = irls_fit(&prob, &IrlsOptions { max_iter: 1, ..Default::default() }).unwrap();
        assert_eq!(fit.theta, Vector::zeros(4));
    }

    #[test]
    fn irls_support_agrees_with_proximal_solver() {
        let mut rng = SeededRng::new(3);
        let mut checked = 0;
        while checked < 10 {
            let prob = random_problem(&mut rng, 40, 6, 2.0);
            let cert = solve_gll(&prob, SolverOptions::default()).unwrap();
            if cert.degenerate {
                continue;
            }
            let fit = irls_fit(&prob, &IrlsOptions::default()).unwrap();
            let supp: Vec<usize> = (0..6).filter(|&k| fit.theta[k].abs() > 1e-6).collect();
            assert_eq!(supp, cert.support);
            checked += 1;
        }
    }

    #[test]
    fn debiased_solution_satisfies_weighted_normal_equations() {
        let mut rng = SeededRng::new(4);
        let prob = random_problem(&mut rng, 60, 5, 2.0);
        let cert = solve_gll(&prob, SolverOptions::default()).unwrap();
        assert!(!cert.support.is_empty());
        let deb = tt_debias(&cert, &prob).unwrap();
        let x_m = select_columns(&prob.x, &cert.support);
        let eta = &prob.x * &cert.theta_hat;
        let z = Vector::from_fn(60, |i, _| eta[i] + (prob.y[i] - sigmoid(eta[i])) / deb.weights[i]);
        let resid = x_m.transpose() * (z - &x_m * &deb.theta_underline).component_mul(&deb.weights);
        assert!(resid.amax() < 1e-8, "{}", resid.amax());
        let bound = prob.lambda * deb.cov.norm() * (cert.support.len() as f64).sqrt();
        let theta_m = Vector::from_iterator(cert.support.len(), cert.support.iter().map(|&k| cert.theta_hat[k]));
        assert!((&deb.theta_underline - theta_m).norm() <= bound + 1e-12);
    }

    #[test]
    fn inactive_constraints_give_untruncated_pvalue() {
        let a = Mat::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
        let b = Vector::from_element(2, 1e300);
        let z = Vector::from_vec(vec![0.8, -0.4]);
        let sigma = Mat::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.4]);
        let eta = Vector::from_vec(vec![1.0, 0.0]);
        let (lower, upper) = polyhedral_interval(&a, &b, &z, &sigma, &eta);
        assert!(lower < -1e299 && upper > 1e299);
        let tg = TruncatedGaussian { mu: 0.0, sigma2: 0.5, lower, upper };
        let expected = 2.0 * (1.0 - normal_cdf(0.8 / 0.5f64.sqrt()));
        assert_abs_diff_eq!(tg.two_sided_p(0.8), expected, epsilon = 1e-14);
    }

    #[test]
    fn observed_point_lies_inside_truncation() {
        let mut rng = SeededRng::new(5);
        for _ in 0..10 {
            let prob = random_problem(&mut rng, 60, 5, 1.5);
            let cert = solve_gll(&prob, SolverOptions::default()).unwrap();
            if cert.support.is_empty() || cert.degenerate {
                continue;
            }
            let deb = tt_debias(&cert, &prob).unwrap();
            for j in 0..cert.support.len() {
                let tg = tt_truncation(&deb, j, 0.0).unwrap();
                let v = deb.theta_underline[j];
                assert!(tg.lower <= v + 1e-9 && v <= tg.upper + 1e-9);
            }
        }
    }

    #[test]
    fn symmetric_truncation_at_mean_is_half() {
        let tg = TruncatedGaussian { mu: 1.0, sigma2: 2.0, lower: -0.5, upper: 2.5 };
        assert_abs_diff_eq!(tg.cdf(1.0), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn bonferroni_is_bounded() {
        let mut rng = SeededRng::new(6);
        for _ in 0..20 {
            let prob = random_problem(&mut rng, 80, 6, 1.5);
            let cert = solve_gll(&prob, SolverOptions::default()).unwrap();
            if cert.support.len() < 2 || cert.degenerate {
                continue;
            }
            let deb = tt_debias(&cert, &prob).unwrap();
            let null = Vector::zeros(cert.support.len());
            let bonf = tt_bonferroni_test(&deb, &null, 0.05).unwrap().p_value;
            let s = cert.support.len() as f64;
            let pmin = (0..cert.support.len()).map(|j| tt_pvalue(&deb, j, 0.0).unwrap()).fold(1.0, f64::min);
            assert!(bonf <= 1.0);
            assert!(bonf >= pmin);
            assert!(bonf <= s * pmin + 1e-15);
        }
    }
}
