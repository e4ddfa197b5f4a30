//! Hypercube samplers for the conditional law on `E_M`: rejection sampling,
//! SEI-SLR simulated annealing, and the weighted estimators built on them.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SigleError};
use crate::event::{bitstring, state_to_code, EnumeratedEvent, EventSpec};
use crate::glm::{log_bernoulli_prob, state_to_vector, State};
use crate::numerics::{log_sum_exp, Mat, SeededRng, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChainMethod {
    Rejection,
    Annealing,
}

/// Visited states stored row-major, one byte per coordinate.
#[derive(Debug, Clone)]
pub struct SampleChain {
    pub n: usize,
    states: Vec<u8>,
    pub method: ChainMethod,
    /// Rejection: fraction of proposals in `E_M`. Annealing: fraction of
    /// accepted moves.
    pub accepted_fraction: f64,
    /// Per-step energy (annealing only).
    pub energies: Vec<f64>,
    /// Per-step membership in `E_M`.
    pub in_event: Vec<bool>,
    /// Per-step move decision (annealing only).
    pub accepted: Vec<bool>,
}

impl SampleChain {
    pub fn len(&self) -> usize {
        self.in_event.len()
    }

    pub fn is_empty(&self) -> bool {
        self.in_event.is_empty()
    }

    pub fn state(&self, t: usize) -> &[u8] {
        &self.states[t * self.n..(t + 1) * self.n]
    }

    pub fn iter_states(&self) -> impl Iterator<Item = &[u8]> {
        self.states.chunks_exact(self.n.max(1))
    }

    pub fn log_weights(&self, pi_star: &Vector) -> Vec<f64> {
        match self.method {
            ChainMethod::Rejection => vec![0.0; self.len()],
            ChainMethod::Annealing => self.iter_states().map(|y| log_bernoulli_prob(y, pi_star)).collect(),
        }
    }

    /// Fraction of steps spent in `E_M`.
    pub fn occupation(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.in_event.iter().filter(|&&b| b).count() as f64 / self.len() as f64
    }

    /// One JSON object per step: `{t, state, energy, accepted, in_event, log_weight}`.
    pub fn write_trace<W: Write>(&self, mut w: W, pi_star: Option<&Vector>, stride: usize) -> Result<()> {
        let stride = stride.max(1);
        for t in (0..self.len()).step_by(stride) {
            let y = self.state(t);
            let rec = serde_json::json!({
                "t": t,
                "state": bitstring(y),
                "energy": self.energies.get(t).copied().unwrap_or(0.0),
                "accepted": self.accepted.get(t).copied().unwrap_or(true),
                "in_event": self.in_event[t],
                "log_weight": pi_star.map(|p| log_bernoulli_prob(y, p)),
            });
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn check_pi(pi: &Vector, n: usize) -> Result<()> {
    if pi.len() != n {
        return Err(SigleError::DimensionMismatch {
            context: "probability vector vs N",
            expected: n,
            got: pi.len(),
        });
    }
    if pi.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(SigleError::InvalidInput("probabilities must lie in (0, 1)".into()));
    }
    Ok(())
}

pub fn draw_bernoulli(pi: &Vector, rng: &mut SeededRng) -> State {
    pi.iter().map(|&p| rng.bernoulli(p) as u8).collect()
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct RejectionOptions {
    pub acceptance_floor: f64,
    /// Proposals between acceptance checks.
    pub probe_budget: usize,
    /// Proposals evaluated together; results do not depend on it or on
    /// the thread count.
    pub batch: usize,
}

impl Default for RejectionOptions {
    fn default() -> Self {
        Self {
            acceptance_floor: 1e-4,
            probe_budget: 20_000,
            batch: 256,
        }
    }
}

fn membership_batch(spec: &EventSpec, cands: &[State]) -> Result<Vec<bool>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        cands.par_iter().map(|y| spec.contains(y)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        cands.iter().map(|y| spec.contains(y)).collect()
    }
}

/// `T` independent draws from `Bernoulli(pi_star)` conditioned on `E_M`.
pub fn rejection_sample(
    pi_star: &Vector,
    spec: &EventSpec,
    t_count: usize,
    rng: &mut SeededRng,
    opts: &RejectionOptions,
) -> Result<SampleChain> {
    let n = spec.n();
    check_pi(pi_star, n)?;
    let mut states = Vec::with_capacity(t_count * n);
    let mut kept = 0usize;
    let mut proposed = 0usize;
    let mut since_check = 0usize;
    while kept < t_count {
        let cands: Vec<State> = (0..opts.batch.max(1)).map(|_| draw_bernoulli(pi_star, rng)).collect();
        let member = membership_batch(spec, &cands)?;
        for (y, ok) in cands.iter().zip(member) {
            proposed += 1;
            since_check += 1;
            if ok {
                states.extend_from_slice(y);
                kept += 1;
                if kept == t_count {
                    break;
                }
            }
        }
        if since_check >= opts.probe_budget {
            since_check = 0;
            let acc = kept as f64 / proposed as f64;
            if acc < opts.acceptance_floor {
                return Err(SigleError::AcceptanceTooLow {
                    acceptance: acc,
                    floor: opts.acceptance_floor,
                });
            }
        }
    }
    Ok(SampleChain {
        n,
        states,
        method: ChainMethod::Rejection,
        accepted_fraction: kept as f64 / proposed.max(1) as f64,
        energies: Vec::new(),
        in_event: vec![true; t_count],
        accepted: Vec::new(),
    })
}

/// Proposal acceptance rate of the rejection sampler over `budget` draws.
pub fn acceptance_rate(pi_star: &Vector, spec: &EventSpec, budget: usize, rng: &mut SeededRng) -> Result<f64> {
    check_pi(pi_star, spec.n())?;
    let cands: Vec<State> = (0..budget).map(|_| draw_bernoulli(pi_star, rng)).collect();
    let member = membership_batch(spec, &cands)?;
    Ok(member.iter().filter(|&&b| b).count() as f64 / budget.max(1) as f64)
}

/// `T_t = K0 / log(t + 1)`; an infinite `K0` freezes the walk.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CoolingSchedule {
    pub k0: f64,
}

impl CoolingSchedule {
    pub fn new(k0: f64) -> Result<Self> {
        if !(k0 > 0.0) {
            return Err(SigleError::InvalidInput("K0 must be positive".into()));
        }
        Ok(Self { k0 })
    }

    /// The schedule with convergence guarantee, `K0 = 2^{N+1}`.
    pub fn guaranteed(n: usize) -> Self {
        Self {
            k0: 2f64.powi(n as i32 + 1),
        }
    }

    pub fn temperature(&self, t: usize) -> f64 {
        self.k0 / ((t + 1) as f64).ln()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnealOptions {
    pub steps: usize,
    pub k0: f64,
    pub repulsion: bool,
}

impl Default for AnnealOptions {
    fn default() -> Self {
        Self {
            steps: 100_000,
            k0: 1.0,
            repulsion: true,
        }
    }
}

/// Accept or reject a move with energy change `delta_e` from a state of
/// energy `current` at temperature `temp`, given a uniform draw `u`.
pub fn accept_move(delta_e: f64, current: f64, temp: f64, u: f64, repulsion: bool) -> bool {
    let boltzmann = if temp.is_infinite() {
        1.0
    } else {
        (-delta_e / temp).exp()
    };
    if repulsion {
        (1.0 - boltzmann).min(1.0 - current) <= u
    } else {
        boltzmann >= u
    }
}

/// SEI-SLR: simulated annealing over one-bit flips with the selection-event
/// energy, started from `y0`. Every step records the post-decision state.
pub fn sei_slr(spec: &EventSpec, y0: &[u8], opts: &AnnealOptions, rng: &mut SeededRng) -> Result<SampleChain> {
    let n = spec.n();
    if y0.len() != n {
        return Err(SigleError::DimensionMismatch {
            context: "initial state vs N",
            expected: n,
            got: y0.len(),
        });
    }
    let schedule = CoolingSchedule::new(opts.k0)?;
    let memoize = n <= 64;
    let mut memo: HashMap<u64, (f64, bool)> = HashMap::new();
    let mut eval = |y: &[u8]| -> Result<(f64, bool)> {
        if memoize {
            let code = state_to_code(y);
            if let Some(&v) = memo.get(&code) {
                return Ok(v);
            }
            let r = spec.energy(y)?;
            memo.insert(code, (r.energy, r.in_event));
            Ok((r.energy, r.in_event))
        } else {
            let r = spec.energy(y)?;
            Ok((r.energy, r.in_event))
        }
    };

    let mut cur: State = y0.to_vec();
    let (mut e_cur, mut in_cur) = eval(&cur)?;
    let mut states = Vec::with_capacity(opts.steps * n);
    let mut energies = Vec::with_capacity(opts.steps);
    let mut in_event = Vec::with_capacity(opts.steps);
    let mut accepted = Vec::with_capacity(opts.steps);
    let mut n_acc = 0usize;
    for t in 1..=opts.steps {
        let i = rng.index(n);
        cur[i] ^= 1;
        let (e_new, in_new) = eval(&cur)?;
        let u = rng.uniform();
        let ok = accept_move(e_new - e_cur, e_cur, schedule.temperature(t), u, opts.repulsion);
        if ok {
            e_cur = e_new;
            in_cur = in_new;
            n_acc += 1;
        } else {
            cur[i] ^= 1;
        }
        states.extend_from_slice(&cur);
        energies.push(e_cur);
        in_event.push(in_cur);
        accepted.push(ok);
    }
    Ok(SampleChain {
        n,
        states,
        method: ChainMethod::Annealing,
        accepted_fraction: n_acc as f64 / opts.steps.max(1) as f64,
        energies,
        in_event,
        accepted,
    })
}

/// Which annealing steps enter the weighted estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatePolicy {
    /// Every recorded step, as in the plain weighted average.
    AllVisited,
    /// Only steps inside `E_M`.
    InEvent,
}

/// A discrete law on hypercube states: distinct states with normalized
/// weights.
#[derive(Debug, Clone)]
pub struct WeightedLaw {
    pub n: usize,
    pub states: Vec<State>,
    pub weights: Vec<f64>,
    /// `sum w / max w` over the contributing draws.
    pub ess: f64,
}

impl WeightedLaw {
    fn from_log_weights(n: usize, states: Vec<State>, logw: Vec<f64>, ess: f64) -> Result<Self> {
        if states.is_empty() {
            return Err(SigleError::DegenerateWeights { ess: 0.0 });
        }
        let lse = log_sum_exp(&logw);
        let weights = logw.iter().map(|l| (l - lse).exp()).collect();
        Ok(Self {
            n,
            states,
            weights,
            ess,
        })
    }

    /// Weighted estimator over a chain. Rejection chains are plain averages;
    /// annealing steps carry weight `P_{pi*}(Y^(t))`.
    pub fn from_chain(chain: &SampleChain, pi_star: &Vector, policy: StatePolicy) -> Result<Self> {
        check_pi(pi_star, chain.n)?;
        let mut index: HashMap<&[u8], usize> = HashMap::new();
        let mut states: Vec<State> = Vec::new();
        let mut logw: Vec<Vec<f64>> = Vec::new();
        let mut all_logw = Vec::new();
        let weighted = chain.method == ChainMethod::Annealing;
        for (t, y) in chain.iter_states().enumerate() {
            if policy == StatePolicy::InEvent && !chain.in_event[t] {
                continue;
            }
            let lw = if weighted { log_bernoulli_prob(y, pi_star) } else { 0.0 };
            all_logw.push(lw);
            let k = *index.entry(y).or_insert_with(|| {
                states.push(y.to_vec());
                logw.push(Vec::new());
                states.len() - 1
            });
            logw[k].push(lw);
        }
        if all_logw.is_empty() {
            return Err(SigleError::DegenerateWeights { ess: 0.0 });
        }
        let max = all_logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ess = all_logw.iter().map(|l| (l - max).exp()).sum::<f64>();
        if ess < 10.0 {
            return Err(SigleError::DegenerateWeights { ess });
        }
        let agg: Vec<f64> = logw.iter().map(|v| log_sum_exp(v)).collect();
        Self::from_log_weights(chain.n, states, agg, ess)
    }

    /// The exact conditional law `P_{pi*}(. | E_M)` from an enumeration.
    pub fn exact(event: &EnumeratedEvent, pi_star: &Vector) -> Result<Self> {
        check_pi(pi_star, event.n)?;
        let states = event.states();
        let logw: Vec<f64> = states.iter().map(|y| log_bernoulli_prob(y, pi_star)).collect();
        Self::from_log_weights(event.n, states, logw, f64::INFINITY)
    }

    pub fn expectation(&self, h: impl Fn(&[u8]) -> Vector) -> Vector {
        let mut acc: Option<Vector> = None;
        for (y, &w) in self.states.iter().zip(&self.weights) {
            let v = h(y) * w;
            acc = Some(match acc {
                Some(a) => a + v,
                None => v,
            });
        }
        acc.unwrap_or_else(|| Vector::zeros(0))
    }

    /// `E[Y]`.
    pub fn mean(&self) -> Vector {
        self.expectation(state_to_vector)
    }

    /// `E[(Y - E Y)(Y - E Y)^T]`.
    pub fn covariance(&self) -> Mat {
        let mu = self.mean();
        let mut c = Mat::zeros(self.n, self.n);
        for (y, &w) in self.states.iter().zip(&self.weights) {
            let d = state_to_vector(y) - &mu;
            c.ger(w, &d, &d, 1.0);
        }
        c
    }

    /// Draw one state.
    pub fn sample<'a>(&'a self, rng: &mut SeededRng) -> &'a [u8] {
        let u = rng.uniform();
        let mut acc = 0.0;
        for (y, &w) in self.states.iter().zip(&self.weights) {
            acc += w;
            if u < acc {
                return y;
            }
        }
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Probability of `y` (zero when absent).
    pub fn prob(&self, y: &[u8]) -> f64 {
        self.states
            .iter()
            .zip(&self.weights)
            .filter(|(s, _)| s.as_slice() == y)
            .map(|(_, &w)| w)
            .sum()
    }
}

/// `E[h(Y)]` under the chain's weighted estimator.
pub fn conditional_expectation(
    chain: &SampleChain,
    pi_star: &Vector,
    policy: StatePolicy,
    h: impl Fn(&[u8]) -> Vector,
) -> Result<Vector> {
    Ok(WeightedLaw::from_chain(chain, pi_star, policy)?.expectation(h))
}

/// Pairwise Hamming distances divided by `N`.
pub fn hamming_matrix(states: &[State]) -> Vec<Vec<f64>> {
    states
        .iter()
        .map(|a| {
            states
                .iter()
                .map(|b| a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / a.len().max(1) as f64)
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lasso::SolverOptions;

    fn cube_spec(n: usize) -> EventSpec {
        let x = Mat::from_fn(n, 1, |i, _| if i % 2 == 0 { 0.1 } else { -0.1 });
        EventSpec::new(x, 1e3, vec![], 0.01, SolverOptions::default()).unwrap()
    }

    #[test]
    fn rejection_on_full_cube_accepts_everything() {
        let spec = cube_spec(6);
        let pi = Vector::from_element(6, 0.3);
        let mut rng = SeededRng::new(1);
        let chain = rejection_sample(&pi, &spec, 4000, &mut rng, &RejectionOptions::default()).unwrap();
        assert_eq!(chain.accepted_fraction, 1.0);
        let m = conditional_expectation(&chain, &pi, StatePolicy::AllVisited, state_to_vector).unwrap();
        let bound = 4.0 * (0.3f64 * 0.7 / 4000.0).sqrt();
        assert!((m.add_scalar(-0.3)).amax() < bound);
    }

    #[test]
    fn constant_function_has_expectation_one() {
        let spec = cube_spec(4);
        let pi = Vector::from_element(4, 0.6);
        let mut rng = SeededRng::new(2);
        let chain = sei_slr(
            &spec,
            &[0, 1, 0, 1],
            &AnnealOptions {
                steps: 500,
                k0: 1.0,
                repulsion: false,
            },
            &mut rng,
        )
        .unwrap();
        let one = conditional_expectation(&chain, &pi, StatePolicy::AllVisited, |_| Vector::from_element(1, 1.0)).unwrap();
        assert!((one[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn downhill_moves_always_accepted() {
        for &u in &[0.0, 0.3, 0.999_999] {
            assert!(accept_move(-0.2, 0.5, 0.01, u, false));
            assert!(accept_move(-0.2, 0.5, 0.01, u, true));
        }
    }

    #[test]
    fn repulsion_boosts_escape_from_positive_energy() {
        // uphill move at low temperature: plain rule rejects, repulsion with
        // a high-energy current state accepts
        assert!(!accept_move(1.0, 0.9, 0.01, 0.5, false));
        assert!(accept_move(1.0, 0.9, 0.01, 0.5, true));
        assert!(!accept_move(1.0, 0.0, 0.01, 0.5, true));
    }

    #[test]
    fn frozen_walk_is_uniform_on_small_cube() {
        let n = 6;
        let spec = cube_spec(n);
        let mut rng = SeededRng::new(3);
        let steps = 64 * 10_000;
        let chain = sei_slr(
            &spec,
            &[0; 6],
            &AnnealOptions {
                steps,
                k0: f64::INFINITY,
                repulsion: false,
            },
            &mut rng,
        )
        .unwrap();
        let mut counts = [0usize; 64];
        for y in chain.iter_states() {
            counts[state_to_code(y) as usize] += 1;
        }
        let tv: f64 = counts
            .iter()
            .map(|&c| (c as f64 / steps as f64 - 1.0 / 64.0).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.05, "total variation {tv}");
    }

    #[test]
    fn chains_are_deterministic() {
        let spec = cube_spec(5);
        let pi = Vector::from_element(5, 0.5);
        let a = rejection_sample(&pi, &spec, 100, &mut SeededRng::new(9), &RejectionOptions::default()).unwrap();
        let b = rejection_sample(&pi, &spec, 100, &mut SeededRng::new(9), &RejectionOptions::default()).unwrap();
        assert!(a.iter_states().eq(b.iter_states()));
    }

    #[test]
    fn degenerate_weights_are_reported() {
        let spec = cube_spec(3);
        let pi = Vector::from_element(3, 0.5);
        let chain = rejection_sample(&pi, &spec, 5, &mut SeededRng::new(1), &RejectionOptions::default()).unwrap();
        assert!(matches!(
            WeightedLaw::from_chain(&chain, &pi, StatePolicy::AllVisited),
            Err(SigleError::DegenerateWeights { .. })
        ));
    }

    #[test]
    fn hamming_matrix_is_symmetric_with_zero_diagonal() {
        let h = hamming_matrix(&[vec![0, 0, 1, 1], vec![1, 0, 1, 0], vec![1, 1, 1, 1]]);
        assert_eq!(h[0][0], 0.0);
        assert_eq!(h[0][1], 0.5);
        assert_eq!(h[1][0], 0.5);
        assert_eq!(h[0][2], 0.5);
    }
}
