//! Property tests of the public invariants.

use proptest::prelude::*;
use sigle_core::benchmarks::TruncatedGaussian;
use sigle_core::confidence::{cr_selected, RegionConstants};
use sigle_core::event::{code_to_state, state_to_code, EventSpec};
use sigle_core::experiment::ks_uniform;
use sigle_core::glm::state_to_vector;
use sigle_core::numerics::{inv_sqrt_psd, Mat, SeededRng, SpectralDecomposition, Vector};
use sigle_core::psi::{psi, xi, PsiOptions};
use sigle_core::sampler::{draw_bernoulli, hamming_matrix, CoolingSchedule};
use sigle_core::{solve_gll, DesignProblem, SolverOptions};

fn problem(seed: u64, n: usize, d: usize, frac: f64) -> DesignProblem {
    let mut rng = SeededRng::new(seed);
    let x = Mat::from_fn(n, d, |_, _| rng.normal());
    let y = state_to_vector(&draw_bernoulli(&Vector::from_element(n, 0.5), &mut rng));
    let lmax = (x.transpose() * y.map(|v| v - 0.5)).amax().max(1e-3);
    DesignProblem::new(x, y, frac * lmax).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn certificate_is_consistent(seed in 0u64..10_000, n in 10usize..60, d in 1usize..12, frac in 0.05f64..1.2) {
        let opts = SolverOptions::default();
        let c = solve_gll(&problem(seed, n, d, frac), opts).unwrap();
        prop_assert!(c.kkt_residual <= opts.kkt_tolerance);
        prop_assert!(c.sign_vector.amax() <= 1.0 + opts.kkt_tolerance);
        for k in 0..d {
            let t = c.theta_hat[k];
            if t.abs() > opts.active_tolerance {
                prop_assert!((c.sign_vector[k] - t.signum()).abs() <= opts.kkt_tolerance);
            }
            prop_assert_eq!(c.support.contains(&k), c.sign_vector[k].abs() >= 1.0 - opts.active_tolerance);
        }
    }

    #[test]
    fn members_have_zero_energy(seed in 0u64..2_000) {
        let prob = problem(seed, 12, 4, 0.5);
        let Ok((spec, _)) = EventSpec::from_observation(&prob, 0.01, SolverOptions::default()) else {
            return Ok(());
        };
        let mut rng = SeededRng::new(seed ^ 0xfeed);
        for _ in 0..20 {
            let y = draw_bernoulli(&Vector::from_element(12, 0.5), &mut rng);
            let r = spec.energy(&y).unwrap();
            prop_assert!(r.energy >= 0.0);
            prop_assert_eq!(r.energy, r.p1.max(r.p2));
            prop_assert_eq!(r.in_event, spec.contains(&y).unwrap());
        }
    }

    #[test]
    fn code_round_trip(code in 0u64..(1 << 20)) {
        prop_assert_eq!(state_to_code(&code_to_state(code, 20)), code);
    }

    #[test]
    fn psi_inverts_xi(seed in 0u64..10_000, s in 1usize..5) {
        let mut rng = SeededRng::new(seed);
        let x = Mat::from_fn(40, s, |_, _| rng.normal());
        let theta = Vector::from_fn(s, |_, _| rng.normal());
        let rho = xi(&theta, &x);
        let r = psi(&rho, &x, &PsiOptions::default()).unwrap();
        prop_assert!((xi(&r.theta, &x) - &rho).norm() <= 1e-6 * (1.0 + rho.norm()));
    }

    #[test]
    fn truncated_cdf_is_monotone(mu in -3f64..3.0, s2 in 0.1f64..4.0, lo in -4f64..0.0, width in 0.01f64..5.0, a in 0f64..1.0, b in 0f64..1.0) {
        let tg = TruncatedGaussian { mu, sigma2: s2, lower: lo, upper: lo + width };
        let (a, b) = (a.min(b), a.max(b));
        let (fa, fb) = (tg.cdf(lo + a * width), tg.cdf(lo + b * width));
        prop_assert!((0.0..=1.0).contains(&fa) && (0.0..=1.0).contains(&fb));
        prop_assert!(fa <= fb + 1e-12);
        let p = tg.two_sided_p(lo + a * width);
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn cooling_is_decreasing(k0 in 1e-3f64..1e3, t in 1usize..100_000) {
        let sched = CoolingSchedule::new(k0).unwrap();
        prop_assert!(sched.temperature(t + 1) < sched.temperature(t));
    }

    #[test]
    fn hamming_is_a_normalized_metric(seed in 0u64..1_000) {
        let mut rng = SeededRng::new(seed);
        let states: Vec<_> = (0..6).map(|_| draw_bernoulli(&Vector::from_element(9, 0.5), &mut rng)).collect();
        let h = hamming_matrix(&states);
        for i in 0..6 {
            prop_assert_eq!(h[i][i], 0.0);
            for j in 0..6 {
                prop_assert_eq!(h[i][j], h[j][i]);
                prop_assert!((0.0..=1.0).contains(&h[i][j]));
                for k in 0..6 {
                    prop_assert!(h[i][k] <= h[i][j] + h[j][k] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn inverse_square_root_whitens(seed in 0u64..5_000) {
        let mut rng = SeededRng::new(seed);
        let b = Mat::from_fn(4, 4, |_, _| rng.normal());
        let a = &b * b.transpose() + Mat::identity(4, 4) * 0.1;
        let r = inv_sqrt_psd(&a, 0.0).unwrap().matrix;
        prop_assert!((&r * &a * &r - Mat::identity(4, 4)).amax() < 1e-8);
        let sd = SpectralDecomposition::new(&a).unwrap();
        prop_assert!((sd.reconstruct() - &a).norm() <= 1e-10 * a.norm());
    }

    #[test]
    fn region_radius_grows_as_alpha_shrinks(res in 0f64..1.0, a1 in 0.001f64..0.5, a2 in 0.001f64..0.5) {
        let k = RegionConstants { kappa: 0.5, c: 0.5, big_c: 1.0, r: None, p_norm: 2.0 };
        let (lo, hi) = (a1.min(a2), a1.max(a2));
        let r_lo = cr_selected(&[0.0, 0.0], res, k, lo, 1.0, 100).unwrap().radius;
        let r_hi = cr_selected(&[0.0, 0.0], res, k, hi, 1.0, 100).unwrap().radius;
        prop_assert!(r_hi >= 0.0 && r_lo >= r_hi - 1e-12);
    }

    #[test]
    fn ks_is_a_distance(v in proptest::collection::vec(0f64..1.0, 1..200)) {
        let d = ks_uniform(&v);
        prop_assert!((0.0..=1.0).contains(&d));
    }
}
