//! SIGLE tests in the saturated and selected models, calibrated either by the
//! chi-square limit or empirically on a chain sampled under the null.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SigleError};
use crate::glm::{fisher_info, state_to_vector, weighted_gram};
use crate::numerics::{chi2_quantile, chi2_sf, inv_sqrt_psd, serde_matrix, serde_opt_vector, serde_vector, Mat, SpectralDecomposition, Vector};
use crate::psi::{psi, PsiOptions};
use crate::sampler::{SampleChain, StatePolicy, WeightedLaw};

/// Monte-Carlo (or exact) conditional moments under a null parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionalMoments {
    #[serde(with = "serde_vector")]
    pub pi_bar: Vector,
    /// `X_M^T Diag(pi_bar (1 - pi_bar)) X_M`.
    #[serde(with = "serde_matrix")]
    pub g_bar: Mat,
    /// `Psi(X_M^T pi_bar)`.
    #[serde(with = "serde_opt_vector", default)]
    pub theta_bar: Option<Vector>,
    /// Conditional covariance of `Y`.
    #[serde(skip)]
    pub gamma_bar: Option<Mat>,
}

impl ConditionalMoments {
    pub fn estimate(law: &WeightedLaw, x_m: &Mat, with_theta: bool, with_gamma: bool) -> Result<Self> {
        let pi_bar = law.mean();
        let var = pi_bar.map(|p| p * (1.0 - p));
        let min_var = var.min();
        if min_var < 1e-10 {
            return Err(SigleError::SingularMoments { min_value: min_var });
        }
        let g_bar = weighted_gram(x_m, &var);
        let theta_bar = if with_theta {
            Some(psi(&(x_m.transpose() * &pi_bar), x_m, &PsiOptions::default())?.theta)
        } else {
            None
        };
        let gamma_bar = with_gamma.then(|| law.covariance());
        Ok(Self {
            pi_bar,
            g_bar,
            theta_bar,
            gamma_bar,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    Saturated,
    Selected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Calibration {
    Clt,
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    Reject,
    Retain,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestReport {
    pub model: Model,
    pub calibration: Calibration,
    /// `None` when `Psi(X_M^T Y)` does not exist.
    pub statistic: Option<f64>,
    pub threshold: f64,
    pub p_value: f64,
    /// Null mass of the rejection region.
    pub zeta: f64,
    pub alpha: f64,
    pub decision: Decision,
}

/// `G^{-1/2}` with a relative eigenvalue floor; below it the moments are
/// reported singular.
fn whitening(g: &Mat) -> Result<Mat> {
    let spec = SpectralDecomposition::new(g)?;
    let max = spec.max_eigenvalue().max(0.0);
    let min = spec.min_eigenvalue();
    if !(min > 1e-12 * max) || max == 0.0 {
        return Err(SigleError::SingularMoments { min_value: min });
    }
    Ok(inv_sqrt_psd(g, 1e-12 * max)?.matrix)
}

/// `|G^{-1/2} X_M^T (Y - pi_bar)|^2`.
pub fn stat_saturated(y: &Vector, moments: &ConditionalMoments, x_m: &Mat) -> Result<f64> {
    let w = whitening(&moments.g_bar)?;
    Ok((w * (x_m.transpose() * (y - &moments.pi_bar))).norm_squared())
}

/// `|G^{-1/2} G_N(theta_bar) (Psi(X_M^T Y) - theta_bar)|^2`; `None` when
/// `X_M^T Y` is outside the image of `Xi`.
pub fn stat_selected(y: &Vector, moments: &ConditionalMoments, x_m: &Mat) -> Result<Option<f64>> {
    let theta_bar = moments
        .theta_bar
        .as_ref()
        .ok_or_else(|| SigleError::InvalidInput("selected statistic needs theta_bar".into()))?;
    let w = whitening(&moments.g_bar)?;
    let g_n = fisher_info(theta_bar, x_m)?;
    Ok(selected_quadratic(y, theta_bar, &(w * g_n), x_m))
}

fn selected_quadratic(y: &Vector, theta_bar: &Vector, a: &Mat, x_m: &Mat) -> Option<f64> {
    match psi(&(x_m.transpose() * y), x_m, &PsiOptions::default()) {
        Ok(r) => Some((a * (r.theta - theta_bar)).norm_squared()),
        Err(_) => None,
    }
}

/// A test statistic with its whitening precomputed.
#[derive(Debug, Clone)]
pub struct Statistic {
    model: Model,
    x_m: Mat,
    pi_bar: Vector,
    theta_bar: Option<Vector>,
    /// Saturated: `G^{-1/2}`; selected: `G^{-1/2} G_N(theta_bar)`.
    a: Mat,
}

impl Statistic {
    pub fn new(model: Model, moments: &ConditionalMoments, x_m: &Mat) -> Result<Self> {
        let w = whitening(&moments.g_bar)?;
        let (a, theta_bar) = match model {
            Model::Saturated => (w, None),
            Model::Selected => {
                let tb = moments
                    .theta_bar
                    .clone()
                    .ok_or_else(|| SigleError::InvalidInput("selected statistic needs theta_bar".into()))?;
                (w * fisher_info(&tb, x_m)?, Some(tb))
            }
        };
        Ok(Self {
            model,
            x_m: x_m.clone(),
            pi_bar: moments.pi_bar.clone(),
            theta_bar,
            a,
        })
    }

    pub fn model(&self) -> Model {
        self.model
    }

    pub fn dof(&self) -> usize {
        self.x_m.ncols()
    }

    /// Matrix applied before the squared norm.
    pub fn transform(&self) -> &Mat {
        &self.a
    }

    pub fn theta_bar(&self) -> Option<&Vector> {
        self.theta_bar.as_ref()
    }

    pub fn eval(&self, y: &[u8]) -> Option<f64> {
        let yv = state_to_vector(y);
        match (&self.model, &self.theta_bar) {
            (Model::Selected, Some(tb)) => selected_quadratic(&yv, tb, &self.a, &self.x_m),
            _ => Some((&self.a * (self.x_m.transpose() * (yv - &self.pi_bar))).norm_squared()),
        }
    }
}

/// Weighted null distribution of a statistic; missing values sort lowest.
#[derive(Debug, Clone)]
pub struct NullDistribution {
    /// `(value, weight)` sorted by value, `-inf` for missing.
    values: Vec<(f64, f64)>,
}

impl NullDistribution {
    pub fn new(stat: &Statistic, law: &WeightedLaw) -> Self {
        let eval = |y: &Vec<u8>| stat.eval(y).unwrap_or(f64::NEG_INFINITY);
        #[cfg(feature = "parallel")]
        let stats: Vec<f64> = {
            use rayon::prelude::*;
            law.states.par_iter().map(eval).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let stats: Vec<f64> = law.states.iter().map(eval).collect();
        let mut values: Vec<(f64, f64)> = stats.into_iter().zip(law.weights.iter().copied()).collect();
        values.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self { values }
    }

    /// Smallest `q` with `P(stat <= q) >= level`.
    pub fn quantile(&self, level: f64) -> f64 {
        let mut acc = 0.0;
        for &(v, w) in &self.values {
            acc += w;
            if acc >= level - 1e-12 {
                return v;
            }
        }
        self.values.last().map_or(f64::INFINITY, |v| v.0)
    }

    /// `P(stat >= x)`.
    pub fn upper_tail(&self, x: f64) -> f64 {
        self.values.iter().filter(|(v, _)| *v >= x).map(|(_, w)| w).sum::<f64>().min(1.0)
    }

    /// `P(stat > x)`.
    pub fn strict_upper_tail(&self, x: f64) -> f64 {
        self.values.iter().filter(|(v, _)| *v > x).map(|(_, w)| w).sum::<f64>().min(1.0)
    }

    /// `P(stat <= x)`.
    pub fn lower_tail(&self, x: f64) -> f64 {
        self.values.iter().filter(|(v, _)| *v <= x).map(|(_, w)| w).sum::<f64>().min(1.0)
    }
}

/// A calibrated SIGLE test reusable across observations.
#[derive(Debug, Clone)]
pub struct SigleTest {
    pub statistic: Statistic,
    pub moments: ConditionalMoments,
    null: NullDistribution,
    alpha: f64,
    empirical_threshold: f64,
    clt_threshold: f64,
}

/// Effective size required of each chain.
pub const MIN_CHAIN_ESS: f64 = 100.0;

impl SigleTest {
    /// Moments from `calib`, null distribution from `threshold`.
    pub fn calibrate(model: Model, x_m: &Mat, calib: &WeightedLaw, threshold: &WeightedLaw, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(SigleError::InvalidInput("alpha must lie in (0, 1)".into()));
        }
        for law in [calib, threshold] {
            if law.ess < MIN_CHAIN_ESS {
                return Err(SigleError::InsufficientSamples {
                    ess: law.ess,
                    required: MIN_CHAIN_ESS as usize,
                });
            }
        }
        if x_m.ncols() == 0 {
            return Err(SigleError::InvalidInput("SIGLE tests need a nonempty support".into()));
        }
        let moments = ConditionalMoments::estimate(calib, x_m, model == Model::Selected, false)?;
        let statistic = Statistic::new(model, &moments, x_m)?;
        let null = NullDistribution::new(&statistic, threshold);
        let empirical_threshold = null.quantile(1.0 - alpha);
        let clt_threshold = chi2_quantile(x_m.ncols(), 1.0 - alpha)?;
        Ok(Self {
            statistic,
            moments,
            null,
            alpha,
            empirical_threshold,
            clt_threshold,
        })
    }

    pub fn threshold(&self, calibration: Calibration) -> f64 {
        match calibration {
            Calibration::Clt => self.clt_threshold,
            Calibration::Empirical => self.empirical_threshold,
        }
    }

    /// Null mass of `{stat > threshold}`.
    pub fn zeta(&self, calibration: Calibration) -> f64 {
        self.null.strict_upper_tail(self.threshold(calibration))
    }

    pub fn null_distribution(&self) -> &NullDistribution {
        &self.null
    }

    pub fn test(&self, y_obs: &[u8], calibration: Calibration) -> TestReport {
        let statistic = self.statistic.eval(y_obs);
        let threshold = self.threshold(calibration);
        let (p_value, reject) = match (statistic, calibration) {
            (None, _) => (1.0, false),
            (Some(t), Calibration::Empirical) => {
                let p = self.null.upper_tail(t);
                (p, p <= self.alpha)
            }
            (Some(t), Calibration::Clt) => (chi2_sf(self.statistic.dof(), t), t > threshold),
        };
        TestReport {
            model: self.statistic.model(),
            calibration,
            statistic,
            threshold,
            p_value,
            zeta: self.zeta(calibration),
            alpha: self.alpha,
            decision: if reject { Decision::Reject } else { Decision::Retain },
        }
    }
}

/// Calibrate on two independent chains sampled under `pi_null` and test `y_obs`.
#[allow(clippy::too_many_arguments)]
pub fn run_test(
    model: Model,
    y_obs: &[u8],
    x_m: &Mat,
    pi_null: &Vector,
    calib_chain: &SampleChain,
    threshold_chain: &SampleChain,
    alpha: f64,
    calibration: Calibration,
    policy: StatePolicy,
) -> Result<TestReport> {
    let calib = WeightedLaw::from_chain(calib_chain, pi_null, policy)?;
    let thresh = WeightedLaw::from_chain(threshold_chain, pi_null, policy)?;
    Ok(SigleTest::calibrate(model, x_m, &calib, &thresh, alpha)?.test(y_obs, calibration))
}
