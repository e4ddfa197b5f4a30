//! Browser bindings: lasso fits along a lambda slider, SEI-SLR energy
//! traces and the selected-model acceptance ellipse.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use sigle_core::event::EventSpec;
use sigle_core::experiment::{generate_design, DesignSpec, EntryDistribution};
use sigle_core::glm::{state_to_vector, DesignProblem};
use sigle_core::numerics::{Mat, SeededRng, Vector};
use sigle_core::psi::{psi, PsiOptions};
use sigle_core::sampler::{draw_bernoulli, rejection_sample, sei_slr, AnnealOptions, RejectionOptions, StatePolicy, WeightedLaw};
use sigle_core::sigle::{Calibration, Model, SigleTest};
use sigle_core::{solve_gll, SolverOptions};

type Out = Result<String, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn js(r: Out) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

fn to_json<T: Serialize>(v: &T) -> Out {
    serde_json::to_string(v).map_err(err)
}

/// Design and null response shared by every operation.
fn instance(n: usize, p: usize, seed: u64) -> (Mat, Vec<u8>) {
    let x = generate_design(&DesignSpec {
        n,
        p,
        entries: EntryDistribution::Gaussian,
        seed,
    });
    let mut rng = SeededRng::new(seed).split(1);
    let y = draw_bernoulli(&Vector::from_element(n, 0.5), &mut rng);
    (x, y)
}

#[derive(Serialize)]
struct Fit {
    theta: Vec<f64>,
    dual: Vec<f64>,
    support: Vec<usize>,
    kkt_residual: f64,
}

/// Lasso fit on the seeded instance at `lambda`.
fn lasso_fit_impl(n: usize, p: usize, seed: u64, lambda: f64) -> Out {
    let (x, y) = instance(n, p, seed);
    let prob = DesignProblem::new(x, state_to_vector(&y), lambda).map_err(err)?;
    let cert = solve_gll(&prob, SolverOptions::default()).map_err(err)?;
    to_json(&Fit {
        theta: cert.theta_hat.iter().copied().collect(),
        dual: cert.sign_vector.iter().copied().collect(),
        support: cert.support,
        kkt_residual: cert.kkt_residual,
    })
}

#[derive(Serialize)]
struct Trace {
    support: Vec<usize>,
    energy: Vec<f64>,
    in_event: Vec<bool>,
    occupation: f64,
}

/// SEI-SLR from the instance's response, subsampled to `points` values.
fn anneal_trace_impl(
    n: usize,
    p: usize,
    seed: u64,
    lambda: f64,
    k0: f64,
    steps: usize,
    points: usize,
) -> Out {
    let (x, y) = instance(n, p, seed);
    let prob = DesignProblem::new(x, state_to_vector(&y), lambda).map_err(err)?;
    let (spec, _) = EventSpec::from_observation(&prob, 0.01, SolverOptions::default()).map_err(err)?;
    let opts = AnnealOptions {
        steps,
        k0,
        repulsion: false,
    };
    let chain = sei_slr(&spec, &y, &opts, &mut SeededRng::new(seed).split(2)).map_err(err)?;
    let stride = (chain.len() / points.max(1)).max(1);
    to_json(&Trace {
        support: spec.support().to_vec(),
        energy: chain.energies.iter().step_by(stride).copied().collect(),
        in_event: chain.in_event.iter().step_by(stride).copied().collect(),
        occupation: chain.occupation(),
    })
}

#[derive(Serialize)]
struct Ellipse {
    support: Vec<usize>,
    center: Vec<f64>,
    boundary: Vec<[f64; 2]>,
    /// `Psi(X_M^T Y)` for null draws from the event, with their decisions.
    points: Vec<[f64; 2]>,
    rejected: Vec<bool>,
    threshold: f64,
    observed_rejection_rate: f64,
}

/// Empirically calibrated selected-model test on a two-variable support,
/// drawn in the plane of `theta`.
fn selected_ellipse_impl(n: usize, p: usize, seed: u64, lambda: f64, samples: usize, alpha: f64) -> Out {
    let (x, y) = instance(n, p, seed);
    let prob = DesignProblem::new(x, state_to_vector(&y), lambda).map_err(err)?;
    let (spec, _) = EventSpec::from_observation(&prob, 0.01, SolverOptions::default()).map_err(err)?;
    if spec.s() != 2 {
        return Err(format!(
            "support has {} variables; move lambda until exactly 2 are selected",
            spec.s()
        ));
    }
    let pi0 = Vector::from_element(spec.n(), 0.5);
    let root = SeededRng::new(seed);
    let opts = RejectionOptions::default();
    let law = |k: u64| -> Result<WeightedLaw, String> {
        let chain = rejection_sample(&pi0, &spec, samples, &mut root.split(k), &opts).map_err(err)?;
        WeightedLaw::from_chain(&chain, &pi0, StatePolicy::AllVisited).map_err(err)
    };
    let (calib, thresh, display) = (law(3)?, law(4)?, law(5)?);
    let test = SigleTest::calibrate(Model::Selected, spec.x_m(), &calib, &thresh, alpha).map_err(err)?;
    let q = test.threshold(Calibration::Empirical);
    let center = test.statistic.theta_bar().cloned().ok_or("missing theta_bar")?;
    let a_inv = test
        .statistic
        .transform()
        .clone()
        .try_inverse()
        .ok_or("singular transform")?;
    let boundary = (0..=96)
        .map(|k| {
            let t = k as f64 / 96.0 * std::f64::consts::TAU;
            let v = &center + &a_inv * Vector::from_vec(vec![t.cos(), t.sin()]) * q.sqrt();
            [v[0], v[1]]
        })
        .collect();
    let mut points = Vec::new();
    let mut rejected = Vec::new();
    for y in &display.states {
        let rho = spec.x_m().transpose() * state_to_vector(y);
        if let Ok(r) = psi(&rho, spec.x_m(), &PsiOptions::default()) {
            points.push([r.theta[0], r.theta[1]]);
            rejected.push(test.test(y, Calibration::Empirical).p_value <= alpha);
        }
    }
    let rate = rejected.iter().filter(|&&r| r).count() as f64 / rejected.len().max(1) as f64;
    to_json(&Ellipse {
        support: spec.support().to_vec(),
        center: center.iter().copied().collect(),
        boundary,
        points,
        rejected,
        threshold: q,
        observed_rejection_rate: rate,
    })
}

#[wasm_bindgen]
pub fn lasso_fit(n: usize, p: usize, seed: u64, lambda: f64) -> Result<String, JsError> {
    js(lasso_fit_impl(n, p, seed, lambda))
}

#[wasm_bindgen]
pub fn anneal_trace(n: usize, p: usize, seed: u64, lambda: f64, k0: f64, steps: usize, points: usize) -> Result<String, JsError> {
    js(anneal_trace_impl(n, p, seed, lambda, k0, steps, points))
}

#[wasm_bindgen]
pub fn selected_ellipse(n: usize, p: usize, seed: u64, lambda: f64, samples: usize, alpha: f64) -> Result<String, JsError> {
    js(selected_ellipse_impl(n, p, seed, lambda, samples, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lasso_fit_support_shrinks_with_lambda() {
        let small: serde_json::Value = serde_json::from_str(&lasso_fit_impl(40, 5, 1, 0.5).unwrap()).unwrap();
        let big: serde_json::Value = serde_json::from_str(&lasso_fit_impl(40, 5, 1, 1e3).unwrap()).unwrap();
        assert!(small["support"].as_array().unwrap().len() >= big["support"].as_array().unwrap().len());
        assert!(big["support"].as_array().unwrap().is_empty());
    }

    #[test]
    fn ellipse_default_page_parameters() {
        let r: serde_json::Value = serde_json::from_str(&selected_ellipse_impl(100, 5, 4, 7.0, 400, 0.05).unwrap()).unwrap();
        assert_eq!(r["support"].as_array().unwrap().len(), 2);
        let rate = r["observed_rejection_rate"].as_f64().unwrap();
        assert!(rate < 0.15, "{rate}");
    }
}
