//! Normal, chi-square and truncated-normal distribution functions.

use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma_lr, gamma_ur};

use crate::error::{Result, SigleError};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// `log(1 - Phi(z))`, accurate far into the upper tail.
pub fn log_normal_sf(z: f64) -> f64 {
    if z < 35.0 {
        return normal_sf(z).ln();
    }
    let z2 = z * z;
    let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2)
        + 105.0 / (z2 * z2 * z2 * z2);
    -0.5 * z2 - z.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + series.ln()
}

/// `log Phi(z)`.
pub fn log_normal_cdf(z: f64) -> f64 {
    log_normal_sf(-z)
}

pub fn chi2_cdf(dof: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    gamma_lr(dof as f64 / 2.0, x / 2.0)
}

pub fn chi2_sf(dof: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_ur(dof as f64 / 2.0, x / 2.0)
}

/// Inverse CDF of the chi-square distribution with `dof` degrees of freedom.
///
/// Brackets the root by doubling, then bisects on whichever of the CDF or the
/// survival function is better conditioned at `q`.
pub fn chi2_quantile(dof: usize, q: f64) -> Result<f64> {
    if dof == 0 {
        return Err(SigleError::InvalidInput(
            "chi-square quantile needs at least one degree of freedom".into(),
        ));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(SigleError::InvalidInput(format!(
            "chi-square quantile probability {q} outside (0, 1)"
        )));
    }
    let upper = q > 0.5;
    let target = if upper { 1.0 - q } else { q };
    // f is increasing in x in both branches
    let f = |x: f64| {
        if upper {
            target - chi2_sf(dof, x)
        } else {
            chi2_cdf(dof, x) - target
        }
    };
    let mut lo = 0.0;
    let mut hi = dof.max(1) as f64;
    while f(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// CDF at `x` of `N(mu, sigma2)` truncated to `[lower, upper]`.
///
/// Uses log-space survival ratios when the whole interval sits in one tail so
/// that far-tail truncation keeps full relative precision.
pub fn truncated_normal_cdf(x: f64, mu: f64, sigma2: f64, lower: f64, upper: f64) -> f64 {
    if x <= lower {
        return 0.0;
    }
    if x >= upper {
        return 1.0;
    }
    let sd = sigma2.sqrt();
    let a = (lower - mu) / sd;
    let b = (upper - mu) / sd;
    let z = (x - mu) / sd;
    if a > 0.0 {
        // upper tail: (S(a) - S(z)) / (S(a) - S(b))
        let la = log_normal_sf(a);
        let lz = log_normal_sf(z);
        let lb = log_normal_sf(b);
        let num = -(lz - la).exp_m1();
        let den = -(lb - la).exp_m1();
        (num / den).clamp(0.0, 1.0)
    } else if b < 0.0 {
        // lower tail: (Phi(z) - Phi(a)) / (Phi(b) - Phi(a))
        let la = log_normal_cdf(a);
        let lz = log_normal_cdf(z);
        let lb = log_normal_cdf(b);
        let num = -(la - lz).exp_m1();
        let den = -(la - lb).exp_m1();
        ((lz - lb).exp() * num / den).clamp(0.0, 1.0)
    } else {
        let pa = normal_cdf(a);
        let pb = normal_cdf(b);
        ((normal_cdf(z) - pa) / (pb - pa)).clamp(0.0, 1.0)
    }
}
