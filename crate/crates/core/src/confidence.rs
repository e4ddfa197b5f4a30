//! Point estimates of the conditional-model parameters and the radii of the
//! associated confidence regions.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SigleError};
use crate::event::{EnumeratedEvent, EventSpec};
use crate::glm::{fisher_info, sigmoid};
use crate::numerics::linalg::solve_spd;
use crate::numerics::{chi2_quantile, ColumnProjector, Mat, SeededRng, Vector};
use crate::psi::{psi, PsiOptions};
use crate::sampler::{rejection_sample, sei_slr, AnnealOptions, RejectionOptions, StatePolicy, WeightedLaw};

/// Conditional mean and covariance of `Y` under `pi = sigma(X_M theta)`.
pub trait MomentOracle {
    fn moments(&mut self, theta: &Vector) -> Result<(Vector, Mat)>;
    /// Whether repeated calls at the same point agree exactly.
    fn is_exact(&self) -> bool;
}

fn pi_of(x_m: &Mat, theta: &Vector) -> Vector {
    (x_m * theta).map(sigmoid)
}

/// Exact moments over an enumerated event.
pub struct ExactOracle<'a> {
    pub event: &'a EnumeratedEvent,
    pub x_m: &'a Mat,
}

impl MomentOracle for ExactOracle<'_> {
    fn moments(&mut self, theta: &Vector) -> Result<(Vector, Mat)> {
        let law = WeightedLaw::exact(self.event, &pi_of(self.x_m, theta))?;
        Ok((law.mean(), law.covariance()))
    }

    fn is_exact(&self) -> bool {
        true
    }
}

/// Fresh rejection chain per call.
pub struct RejectionOracle<'a> {
    pub spec: &'a EventSpec,
    pub samples: usize,
    pub rng: SeededRng,
    pub opts: RejectionOptions,
}

impl MomentOracle for RejectionOracle<'_> {
    fn moments(&mut self, theta: &Vector) -> Result<(Vector, Mat)> {
        let pi = pi_of(self.spec.x_m(), theta);
        let chain = rejection_sample(&pi, self.spec, self.samples, &mut self.rng, &self.opts)?;
        let law = WeightedLaw::from_chain(&chain, &pi, StatePolicy::AllVisited)?;
        Ok((law.mean(), law.covariance()))
    }

    fn is_exact(&self) -> bool {
        false
    }
}

/// Fresh annealing chain per call, weighted toward `sigma(X_M theta)`.
pub struct AnnealingOracle<'a> {
    pub spec: &'a EventSpec,
    pub start: Vec<u8>,
    pub opts: AnnealOptions,
    pub rng: SeededRng,
}

impl MomentOracle for AnnealingOracle<'_> {
    fn moments(&mut self, theta: &Vector) -> Result<(Vector, Mat)> {
        let pi = pi_of(self.spec.x_m(), theta);
        let chain = sei_slr(self.spec, &self.start, &self.opts, &mut self.rng)?;
        let law = WeightedLaw::from_chain(&chain, &pi, StatePolicy::InEvent)?;
        Ok((law.mean(), law.covariance()))
    }

    fn is_exact(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct ThetaStarOptions {
    pub max_iter: usize,
    /// Stop once `m(theta) < tolerance`.
    pub tolerance: f64,
    pub learning_rate: f64,
}

impl Default for ThetaStarOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tolerance: 1e-10,
            learning_rate: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThetaStarFit {
    pub theta: Vec<f64>,
    /// `m` at the returned point.
    pub m_value: f64,
    /// `m` at the warm start.
    pub m_initial: f64,
    pub history: Vec<f64>,
    pub iterations: usize,
}

/// `theta_bar(theta)`, `m(theta)` and `grad m(theta)`.
pub fn m_and_gradient(
    theta: &Vector,
    theta_hat: &Vector,
    x_m: &Mat,
    oracle: &mut dyn MomentOracle,
) -> Result<(Vector, f64, Vector)> {
    let (pi_bar, gamma) = oracle.moments(theta)?;
    let tb = psi(&(x_m.transpose() * &pi_bar), x_m, &PsiOptions::default())?.theta;
    let r = &tb - theta_hat;
    let g = fisher_info(&tb, x_m)?;
    let b = x_m.transpose() * gamma * x_m;
    // d theta_bar / d theta = G^{-1} B, so grad m = 2 B^T G^{-1} r
    let ginv_r = solve_spd(&g, &r).ok_or(SigleError::SingularFisher)?;
    let grad = b.transpose() * ginv_r * 2.0;
    Ok((tb, r.norm_squared(), grad))
}

/// Minimize `m(theta) = |theta_bar(theta) - theta_hat|^2` from `theta_hat`.
/// Exact oracles use backtracking; stochastic ones a decaying step.
pub fn estimate_theta_star(
    theta_hat: &Vector,
    x_m: &Mat,
    oracle: &mut dyn MomentOracle,
    opts: &ThetaStarOptions,
) -> Result<ThetaStarFit> {
    let mut theta = theta_hat.clone();
    let (_, m0, mut grad) = m_and_gradient(&theta, theta_hat, x_m, oracle)?;
    let mut m_cur = m0;
    let mut best = (m0, theta.clone());
    let mut history = vec![m0];
    let mut step = opts.learning_rate;
    let mut iterations = 0;
    for k in 0..opts.max_iter {
        if m_cur < opts.tolerance {
            break;
        }
        iterations = k + 1;
        if oracle.is_exact() {
            let mut accepted = false;
            for _ in 0..40 {
                let cand = &theta - &grad * step;
                match m_and_gradient(&cand, theta_hat, x_m, oracle) {
                    Ok((_, m_new, g_new)) if m_new <= m_cur - 1e-4 * step * grad.norm_squared() => {
                        theta = cand;
                        m_cur = m_new;
                        grad = g_new;
                        accepted = true;
                        step *= 2.0;
                        break;
                    }
                    // saturated probabilities mean the step overshot
                    Ok(_)
                    | Err(SigleError::PsiDivergence { .. })
                    | Err(SigleError::SingularFisher)
                    | Err(SigleError::InvalidInput(_)) => step *= 0.5,
                    Err(e) => return Err(e),
                }
            }
            if !accepted {
                break;
            }
        } else {
            let rate = opts.learning_rate / ((k + 1) as f64).sqrt();
            let cand = &theta - &grad * rate;
            match m_and_gradient(&cand, theta_hat, x_m, oracle) {
                Ok((_, m_new, g_new)) => {
                    theta = cand;
                    m_cur = m_new;
                    grad = g_new;
                }
                Err(SigleError::PsiDivergence { .. }) | Err(SigleError::SingularFisher) => continue,
                Err(e) => return Err(e),
            }
        }
        history.push(m_cur);
        if m_cur < best.0 {
            best = (m_cur, theta.clone());
        }
    }
    Ok(ThetaStarFit {
        theta: best.1.iter().copied().collect(),
        m_value: best.0,
        m_initial: m0,
        history,
        iterations,
    })
}

/// User-supplied constants of the region bounds; never derived from data.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RegionConstants {
    pub kappa: f64,
    pub c: f64,
    #[serde(rename = "C")]
    pub big_c: f64,
    /// Radius of the parameter ball; unbounded when absent.
    #[serde(default)]
    pub r: Option<f64>,
    #[serde(default = "default_p_norm")]
    pub p_norm: f64,
}

fn default_p_norm() -> f64 {
    2.0
}

impl RegionConstants {
    fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.c > 0.0 && self.big_c > 0.0) {
            return Err(SigleError::InvalidInput("kappa, c and C must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionReport {
    pub estimate: Vec<f64>,
    pub radius: f64,
    pub alpha: f64,
    pub constants: RegionConstants,
    /// Selected: `|theta_bar(theta_star) - theta_hat|`. Saturated:
    /// `|Proj_{X_M}(Y - pi_bar)|`.
    pub fit_residual: f64,
    /// The bound contains a term that cannot be evaluated without the
    /// true parameter; the radius omits it.
    pub unresolved_term: bool,
}

/// `C/(kappa c) * (residual + sigma_sup * (N c^2 / C)^{-1/2} sqrt(chi2_{s,1-alpha}))`.
#[allow(clippy::too_many_arguments)]
pub fn cr_selected(
    theta_star: &[f64],
    fit_residual: f64,
    constants: RegionConstants,
    alpha: f64,
    sigma_inv_sup: f64,
    n: usize,
) -> Result<RegionReport> {
    constants.validate()?;
    let s = theta_star.len();
    let q = chi2_quantile(s, 1.0 - alpha)?;
    let RegionConstants { kappa, c, big_c, .. } = constants;
    let scale = (n as f64 * c * c / big_c).powf(-0.5);
    let radius = big_c / (kappa * c) * (fit_residual + sigma_inv_sup * scale * q.sqrt());
    Ok(RegionReport {
        estimate: theta_star.to_vec(),
        radius,
        alpha,
        constants,
        fit_residual,
        unresolved_term: false,
    })
}

/// `(4 kappa)^{-1} (|Proj_{X_M}(Y - pi_bar)| + (C/c) sqrt(chi2_{s,1-alpha}))`;
/// the orthogonal-complement term is flagged, not evaluated.
pub fn cr_saturated(
    pi_star: &Vector,
    pi_bar_at_star: &Vector,
    y: &Vector,
    x_m: &Mat,
    constants: RegionConstants,
    alpha: f64,
) -> Result<RegionReport> {
    constants.validate()?;
    let proj = ColumnProjector::new(x_m);
    let fit = proj.project(&(y - pi_bar_at_star)).norm();
    let q = chi2_quantile(x_m.ncols(), 1.0 - alpha)?;
    let radius = (fit + constants.big_c / constants.c * q.sqrt()) / (4.0 * constants.kappa);
    Ok(RegionReport {
        estimate: pi_star.iter().copied().collect(),
        radius,
        alpha,
        constants,
        fit_residual: fit,
        unresolved_term: true,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PiStarFit {
    pub theta: Vec<f64>,
    pub pi_star: Vec<f64>,
    pub pi_bar: Vec<f64>,
    /// `|X_M^T pi_bar - X_M^T Y|^2`.
    pub objective: f64,
    pub evaluations: usize,
}

/// Compass search for `pi = sigma(X_M theta)` minimizing
/// `|X_M^T pi_bar^pi - X_M^T Y|^2`, from `start`.
pub fn estimate_pi_star(
    y: &Vector,
    x_m: &Mat,
    start: &Vector,
    oracle: &mut dyn MomentOracle,
    max_evals: usize,
) -> Result<PiStarFit> {
    let target = x_m.transpose() * y;
    let mut evals = 0usize;
    let mut objective = |th: &Vector, evals: &mut usize| -> Result<(f64, Vector)> {
        *evals += 1;
        let (pb, _) = oracle.moments(th)?;
        Ok(((x_m.transpose() * &pb - &target).norm_squared(), pb))
    };
    let mut theta = start.clone();
    let (mut f, mut pb) = objective(&theta, &mut evals)?;
    let mut h = 1.0;
    while h > 1e-6 && evals < max_evals {
        let mut improved = false;
        'dirs: for k in 0..theta.len() {
            for sgn in [1.0, -1.0] {
                let mut cand = theta.clone();
                cand[k] += sgn * h;
                let (fc, pc) = objective(&cand, &mut evals)?;
                if fc < f {
                    theta = cand;
                    f = fc;
                    pb = pc;
                    improved = true;
                    break 'dirs;
                }
            }
        }
        if !improved {
            h *= 0.5;
        }
    }
    Ok(PiStarFit {
        pi_star: pi_of(x_m, &theta).iter().copied().collect(),
        theta: theta.iter().copied().collect(),
        pi_bar: pb.iter().copied().collect(),
        objective: f,
        evaluations: evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::enumerate_event;
    use crate::lasso::SolverOptions;
    use approx::assert_abs_diff_eq;

    fn consts(kappa: f64) -> RegionConstants {
        RegionConstants {
            kappa,
            c: 1.0,
            big_c: 1.0,
            r: Some(1.0),
            p_norm: 2.0,
        }
    }

    #[test]
    fn selected_radius_spot_value() {
        let r = cr_selected(&[0.0, 0.0], 0.1, consts(1.0), 0.05, 1.0, 100).unwrap();
        // chi2_{2,0.95} = -2 ln 0.05
        let oracle = 0.1 + 0.1 * (-2.0 * 0.05f64.ln()).sqrt();
        assert_abs_diff_eq!(r.radius, oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(r.radius, 0.344_774_7, epsilon = 1e-6);
    }

    #[test]
    fn selected_radius_scales_inversely_with_kappa() {
        let a = cr_selected(&[0.3], 0.2, consts(1.0), 0.1, 2.0, 50).unwrap();
        let b = cr_selected(&[0.3], 0.2, consts(2.0), 0.1, 2.0, 50).unwrap();
        assert_abs_diff_eq!(a.radius, 2.0 * b.radius, epsilon = 1e-15);
        let big = cr_selected(&[0.3], 0.0, consts(1.0), 0.05, 1.0, 10_000).unwrap();
        assert_abs_diff_eq!(big.radius, 0.01 * 3.841458820694124f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn saturated_first_term_vanishes_at_fit() {
        let x = Mat::from_row_slice(4, 1, &[1.0, 2.0, -1.0, 0.5]);
        let pi = Vector::from_vec(vec![0.3, 0.6, 0.5, 0.4]);
        let r = cr_saturated(&pi, &pi, &pi, &x, consts(0.25), 0.05).unwrap();
        assert_eq!(r.fit_residual, 0.0);
        assert!(r.unresolved_term);
        assert_abs_diff_eq!(r.radius, 3.841458820694124f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(11);
        let (spec, ev) = loop {
            let x = Mat::from_fn(8, 4, |_, _| rng.normal());
            if let Ok(spec) = EventSpec::new(x, 1.2, vec![0, 2], 0.01, SolverOptions::default()) {
                let ev = enumerate_event(&spec, 20).unwrap();
                if ev.len() >= 16 {
                    break (spec, ev);
                }
            }
        };
        let x_m = spec.x_m().clone();
        let mut oracle = ExactOracle { event: &ev, x_m: &x_m };
        let theta_hat = Vector::from_vec(vec![0.4, -0.3]);
        let theta = Vector::from_vec(vec![0.1, 0.2]);
        let (_, _, grad) = m_and_gradient(&theta, &theta_hat, &x_m, &mut oracle).unwrap();
        let h = 1e-6;
        for k in 0..2 {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[k] += h;
            tm[k] -= h;
            let fp = m_and_gradient(&tp, &theta_hat, &x_m, &mut oracle).unwrap().1;
            let fm = m_and_gradient(&tm, &theta_hat, &x_m, &mut oracle).unwrap().1;
            assert!(((fp - fm) / (2.0 * h) - grad[k]).abs() < 1e-6, "coordinate {k}");
        }
    }

    #[test]
    fn full_cube_theta_star_is_theta_hat() {
        let mut rng = SeededRng::new(12);
        let x = Mat::from_fn(6, 2, |_, _| rng.normal());
        let cube = EnumeratedEvent {
            n: 6,
            support: vec![0, 1],
            codes: (0..64).collect(),
            members: vec![],
            delta_c: None,
            degenerate: false,
        };
        let mut oracle = ExactOracle { event: &cube, x_m: &x };
        let theta_hat = Vector::from_vec(vec![0.5, -0.2]);
        let fit = estimate_theta_star(&theta_hat, &x, &mut oracle, &ThetaStarOptions::default()).unwrap();
        assert!(fit.m_initial < 1e-16);
        assert_eq!(fit.iterations, 0);
    }

    #[test]
    fn exact_descent_drives_m_down() {
        let mut rng = SeededRng::new(21);
        for attempt in 0..20 {
            let x = Mat::from_fn(8, 3, |_, _| rng.normal());
            let Ok(spec) = EventSpec::new(x, 1.0, vec![0, 1], 0.01, SolverOptions::default()) else {
                continue;
            };
            let ev = enumerate_event(&spec, 20).unwrap();
            if ev.len() < 16 {
                continue;
            }
            let x_m = spec.x_m().clone();
            let mut oracle = ExactOracle { event: &ev, x_m: &x_m };
            let theta_hat = Vector::from_vec(vec![0.3, -0.2]);
            let fit = estimate_theta_star(&theta_hat, &x_m, &mut oracle, &ThetaStarOptions::default()).unwrap();
            assert!(fit.m_value <= fit.m_initial);
            assert!(fit.m_value < 1e-4, "attempt {attempt}: m = {}", fit.m_value);
            return;
        }
        panic!("no usable fixture");
    }
}
