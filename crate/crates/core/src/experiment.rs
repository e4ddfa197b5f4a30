//! Simulation studies: a fixed design and selection event, null chains for
//! calibration, and replicate observations drawn from the truth
//! conditioned on the event.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::benchmarks::{tt1_test, tt_bonferroni_test, tt_debias, WeakLearner};
use crate::confidence::{
    cr_saturated, cr_selected, estimate_pi_star, estimate_theta_star, AnnealingOracle, ExactOracle, MomentOracle,
    RegionConstants, RegionReport, RejectionOracle, ThetaStarOptions,
};
use crate::error::{Result, SigleError};
use crate::event::{enumerate_event, EnumeratedEvent, EventSpec, DEFAULT_N_CAP};
use crate::glm::{sigmoid, state_to_vector, DesignProblem, State};
use crate::lasso::{LassoCertificate, SolverOptions};
use crate::numerics::{select_columns, Mat, SeededRng, Vector};
use crate::psi::{psi, PsiOptions};
use crate::sampler::{
    acceptance_rate, draw_bernoulli, rejection_sample, sei_slr, AnnealOptions, RejectionOptions, SampleChain, StatePolicy, WeightedLaw,
};
use crate::sigle::{Calibration, Model, SigleTest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryDistribution {
    Gaussian,
    Rademacher,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignSpec {
    pub n: usize,
    pub p: usize,
    #[serde(default = "default_entries")]
    pub entries: EntryDistribution,
    pub seed: u64,
}

fn default_entries() -> EntryDistribution {
    EntryDistribution::Gaussian
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Signal {
    Null,
    /// `[nu, 0, ..., 0]`.
    Localized,
    /// `nu * 1_p`.
    Disseminated,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TruthSpec {
    pub signal: Signal,
    #[serde(default)]
    pub nu: f64,
}

impl TruthSpec {
    pub fn null() -> Self {
        Self {
            signal: Signal::Null,
            nu: 0.0,
        }
    }

    pub fn vartheta(&self, p: usize) -> Vector {
        match self.signal {
            Signal::Null => Vector::zeros(p),
            Signal::Localized => {
                let mut v = Vector::zeros(p);
                if p > 0 {
                    v[0] = self.nu;
                }
                v
            }
            Signal::Disseminated => Vector::from_element(p, self.nu),
        }
    }
}

/// Null hypothesis: `pi` on all `N` coordinates (saturated) or `theta` on
/// the selected support; absent both, `theta = 0`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NullSpec {
    #[serde(default)]
    pub theta: Option<Vec<f64>>,
    #[serde(default)]
    pub pi: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    Rejection,
    SeiSlr,
    /// Enumeration of the event; needs `N <= 20`.
    Exact,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerSpec {
    pub kind: SamplerKind,
    /// Draws per rejection chain.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub rejection: RejectionOptions,
    #[serde(default = "default_anneal")]
    pub anneal: AnnealOptions,
}

fn default_samples() -> usize {
    5000
}

fn default_anneal() -> AnnealOptions {
    AnnealOptions {
        repulsion: false,
        ..AnnealOptions::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "sigle-sat")]
    SigleSat,
    #[serde(rename = "sigle-sel")]
    SigleSel,
    #[serde(rename = "weak")]
    Weak,
    #[serde(rename = "tt1")]
    Tt1,
    #[serde(rename = "tt-bonf")]
    TtBonf,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::SigleSat, Method::SigleSel, Method::Weak, Method::Tt1, Method::TtBonf];

    pub fn name(self) -> &'static str {
        match self {
            Method::SigleSat => "sigle-sat",
            Method::SigleSel => "sigle-sel",
            Method::Weak => "weak",
            Method::Tt1 => "tt1",
            Method::TtBonf => "tt-bonf",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerSpec {
    pub signal: Signal,
    pub nu: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionSpec {
    pub model: Model,
    pub constants: RegionConstants,
    /// Bound on the inverse conditional variances (selected model).
    #[serde(default = "one")]
    pub sigma_inv_sup: f64,
    #[serde(default)]
    pub descent: ThetaStarOptions,
    /// Moment evaluations allowed to the saturated-model search.
    #[serde(default = "default_evals")]
    pub max_evals: usize,
}

fn one() -> f64 {
    1.0
}

fn default_evals() -> usize {
    400
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub design: DesignSpec,
    pub lambda: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "TruthSpec::null")]
    pub truth: TruthSpec,
    /// Truth used for the single draw that fixes the selection event; by
    /// default the null signal, so power sweeps share one event.
    #[serde(default = "TruthSpec::null")]
    pub selection_truth: TruthSpec,
    #[serde(default)]
    pub null: NullSpec,
    pub sampler: SamplerSpec,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_calibration")]
    pub calibration: Calibration,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub replicates: usize,
    #[serde(default = "default_output")]
    pub output: String,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub power: Option<PowerSpec>,
    #[serde(default)]
    pub region: Option<RegionSpec>,
}

fn default_delta() -> f64 {
    0.01
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_calibration() -> Calibration {
    Calibration::Empirical
}

fn default_alpha() -> f64 {
    0.05
}

fn default_output() -> String {
    "out".into()
}

impl ExperimentConfig {
    /// `N = 100`, `p = 10`, Gaussian design, `lambda = 5`, null truth,
    /// rejection sampling.
    pub fn setting1(seed: u64) -> Self {
        Self::preset(100, 10, 5.0, seed, SamplerKind::Rejection)
    }

    /// `N = 20`, `p = 15`, Gaussian design, `lambda = 3`, null truth, SEI-SLR.
    pub fn setting2(seed: u64) -> Self {
        Self::preset(20, 15, 3.0, seed, SamplerKind::SeiSlr)
    }

    pub fn preset(n: usize, p: usize, lambda: f64, seed: u64, kind: SamplerKind) -> Self {
        Self {
            design: DesignSpec {
                n,
                p,
                entries: EntryDistribution::Gaussian,
                seed,
            },
            lambda,
            delta: default_delta(),
            truth: TruthSpec::null(),
            selection_truth: TruthSpec::null(),
            null: NullSpec::default(),
            sampler: SamplerSpec {
                kind,
                samples: default_samples(),
                rejection: RejectionOptions::default(),
                anneal: default_anneal(),
            },
            methods: default_methods(),
            calibration: Calibration::Empirical,
            alpha: 0.05,
            replicates: 500,
            output: default_output(),
            solver: SolverOptions::default(),
            power: None,
            region: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SigleError::InvalidInput(m.into()));
        if self.replicates == 0 {
            return bad("replicates must be at least 1");
        }
        if self.design.n == 0 || self.design.p == 0 {
            return bad("design dimensions must be positive");
        }
        if !(self.lambda > 0.0) {
            return bad("lambda must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if self.sampler.kind == SamplerKind::Exact && self.design.n > DEFAULT_N_CAP {
            return Err(SigleError::CapExceeded {
                n: self.design.n,
                cap: DEFAULT_N_CAP,
            });
        }
        if self.sampler.kind == SamplerKind::Rejection && self.sampler.samples == 0 {
            return bad("sampler.samples must be positive");
        }
        Ok(())
    }
}

pub fn generate_design(spec: &DesignSpec) -> Mat {
    let mut rng = SeededRng::new(spec.seed).split(0);
    match spec.entries {
        EntryDistribution::Gaussian => Mat::from_fn(spec.n, spec.p, |_, _| rng.normal()),
        EntryDistribution::Rademacher => {
            Mat::from_fn(spec.n, spec.p, |_, _| if rng.bernoulli(0.5) { 1.0 } else { -1.0 })
        }
    }
}

/// Bernoulli means `sigma(X vartheta)`.
pub fn truth_pi(x: &Mat, vartheta: &Vector) -> Vector {
    (x * vartheta).map(sigmoid)
}

const SELECTION_ATTEMPTS: u64 = 200;
/// Proposals tried for one conditional draw before falling back to the
/// in-event walk.
const SINGLE_DRAW_PROBES: usize = 5000;
/// Proposals used to choose between rejection and the walk.
const DRAW_PROBE: usize = 2000;
const MIN_DIRECT_ACCEPTANCE: f64 = 2e-3;
/// Walk length in units of `N` proposed flips.
const WALK_SWEEPS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DrawMode {
    Exact,
    Rejection,
    Walk,
}

/// The stream of responses tried, in order, to fix the selection event.
struct SelectionDraws {
    pi: Vector,
    rng: SeededRng,
}

impl SelectionDraws {
    fn new(config: &ExperimentConfig, x: &Mat) -> Self {
        Self {
            pi: truth_pi(x, &config.selection_truth.vartheta(config.design.p)),
            rng: SeededRng::new(config.design.seed).split(1),
        }
    }

    fn next_draw(&mut self) -> State {
        draw_bernoulli(&self.pi, &mut self.rng)
    }
}

/// The first selection draw and its design problem, whatever its support.
pub fn first_selection_problem(config: &ExperimentConfig) -> Result<DesignProblem> {
    config.validate()?;
    let x = generate_design(&config.design);
    let y = SelectionDraws::new(config, &x).next_draw();
    DesignProblem::new(x, state_to_vector(&y), config.lambda)
}

/// Shared context: design, selection event and null parameters.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub x: Mat,
    pub spec: EventSpec,
    /// The draw that fixed the event.
    pub y_select: State,
    pub certificate: LassoCertificate,
    pub pi_null: Vector,
    pub theta_null: Vector,
    pub event: Option<EnumeratedEvent>,
    master: SeededRng,
}

impl Experiment {
    pub fn setup(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let x = generate_design(&config.design);
        let master = SeededRng::new(config.design.seed);
        let mut draws = SelectionDraws::new(&config, &x);
        let mut found = None;
        for _ in 0..SELECTION_ATTEMPTS {
            let y = draws.next_draw();
            let prob = DesignProblem::new(x.clone(), state_to_vector(&y), config.lambda)?;
            let (spec, cert) = match EventSpec::from_observation(&prob, config.delta, config.solver) {
                Ok(v) => v,
                Err(SigleError::InvalidInput(_)) => continue,
                Err(e) => return Err(e),
            };
            if !cert.degenerate && spec.s() > 0 {
                found = Some((spec, cert, y));
                break;
            }
        }
        let (spec, certificate, y_select) = found.ok_or_else(|| {
            SigleError::InvalidInput("no draw produced a nonempty, non-degenerate support; lower lambda".into())
        })?;
        let x_m = spec.x_m();
        let theta_null = match &config.null.theta {
            Some(t) if t.len() != spec.s() => {
                return Err(SigleError::DimensionMismatch {
                    context: "null.theta",
                    expected: spec.s(),
                    got: t.len(),
                })
            }
            Some(t) => Vector::from_vec(t.clone()),
            None => Vector::zeros(spec.s()),
        };
        let pi_null = match &config.null.pi {
            Some(p) if p.len() != config.design.n => {
                return Err(SigleError::DimensionMismatch {
                    context: "null.pi",
                    expected: config.design.n,
                    got: p.len(),
                })
            }
            Some(p) => Vector::from_vec(p.clone()),
            None => (x_m * &theta_null).map(sigmoid),
        };
        let event = match config.sampler.kind {
            SamplerKind::Exact => Some(enumerate_event(&spec, DEFAULT_N_CAP)?),
            _ => None,
        };
        Ok(Self {
            config,
            x,
            spec,
            y_select,
            certificate,
            pi_null,
            theta_null,
            event,
            master,
        })
    }

    pub fn rng(&self, index: u64) -> SeededRng {
        self.master.split(index)
    }

    /// One chain under `pi`, seeded by `index`.
    pub fn chain(&self, pi: &Vector, index: u64) -> Result<SampleChain> {
        let mut rng = self.rng(index);
        let s = &self.config.sampler;
        match s.kind {
            SamplerKind::Rejection => rejection_sample(pi, &self.spec, s.samples, &mut rng, &s.rejection),
            SamplerKind::SeiSlr | SamplerKind::Exact => sei_slr(&self.spec, &self.y_select, &s.anneal, &mut rng),
        }
    }

    /// Conditional law of `Y` under `pi` given the event, from the chain
    /// seeded by `index` (ignored for exact sampling).
    pub fn law(&self, pi: &Vector, index: u64) -> Result<WeightedLaw> {
        match (&self.event, self.config.sampler.kind) {
            (Some(ev), SamplerKind::Exact) => WeightedLaw::exact(ev, pi),
            (_, SamplerKind::Rejection) => WeightedLaw::from_chain(&self.chain(pi, index)?, pi, StatePolicy::AllVisited),
            _ => WeightedLaw::from_chain(&self.chain(pi, index)?, pi, StatePolicy::InEvent),
        }
    }

    /// Null laws for moments and for the threshold, on independent chains.
    pub fn null_laws(&self) -> Result<(WeightedLaw, WeightedLaw)> {
        Ok((self.law(&self.pi_null, 2)?, self.law(&self.pi_null, 3)?))
    }

    pub fn calibrate(&self) -> Result<Calibrated> {
        let wants = |m: Method| self.config.methods.contains(&m);
        if !(wants(Method::SigleSat) || wants(Method::SigleSel) || wants(Method::Weak)) {
            return Ok(Calibrated {
                sat: None,
                sel: None,
                weak: None,
                calib_ess: 0.0,
                threshold_ess: 0.0,
            });
        }
        let (calib, thresh) = self.null_laws()?;
        let x_m = self.spec.x_m();
        let sat = if wants(Method::SigleSat) {
            Some(SigleTest::calibrate(Model::Saturated, x_m, &calib, &thresh, self.config.alpha)?)
        } else {
            None
        };
        let sel = if wants(Method::SigleSel) {
            Some(SigleTest::calibrate(Model::Selected, x_m, &calib, &thresh, self.config.alpha)?)
        } else {
            None
        };
        let weak = wants(Method::Weak).then(|| WeakLearner::calibrate(&calib.mean(), &thresh));
        Ok(Calibrated {
            sat,
            sel,
            weak,
            calib_ess: calib.ess,
            threshold_ess: thresh.ess,
        })
    }

    /// How replicate observations under `pi` are drawn, decided once from
    /// a probe of the rejection acceptance.
    pub fn draw_mode(&self, pi: &Vector, rng: &mut SeededRng) -> Result<DrawMode> {
        if self.event.is_some() {
            return Ok(DrawMode::Exact);
        }
        let rate = acceptance_rate(pi, &self.spec, DRAW_PROBE, rng)?;
        Ok(if rate >= MIN_DIRECT_ACCEPTANCE {
            DrawMode::Rejection
        } else {
            DrawMode::Walk
        })
    }

    /// One draw from `pi` conditioned on the event.
    pub fn conditional_draw(&self, pi: &Vector, mode: DrawMode, rng: &mut SeededRng) -> Result<State> {
        match (mode, &self.event) {
            (DrawMode::Exact, Some(ev)) => {
                let law = WeightedLaw::exact(ev, pi)?;
                Ok(law.sample(rng).to_vec())
            }
            (DrawMode::Walk, _) => self.metropolis_draw(pi, rng),
            _ => {
                let opts = RejectionOptions {
                    batch: 64,
                    probe_budget: SINGLE_DRAW_PROBES,
                    acceptance_floor: 1.0 / SINGLE_DRAW_PROBES as f64,
                };
                match rejection_sample(pi, &self.spec, 1, rng, &opts) {
                    Ok(chain) => Ok(chain.state(0).to_vec()),
                    Err(SigleError::AcceptanceTooLow { .. }) => self.metropolis_draw(pi, rng),
                    Err(e) => Err(e),
                }
            }
        }
    }

    /// Metropolis walk on the event targeting `pi`, started from the
    /// selection draw.
    fn metropolis_draw(&self, pi: &Vector, rng: &mut SeededRng) -> Result<State> {
        let n = self.spec.n();
        let mut y = self.y_select.clone();
        for _ in 0..WALK_SWEEPS * n {
            let i = rng.index(n);
            let p = pi[i];
            let ratio = if y[i] == 1 { (1.0 - p) / p } else { p / (1.0 - p) };
            if rng.uniform() < ratio {
                y[i] ^= 1;
                if !self.spec.contains(&y)? {
                    y[i] ^= 1;
                }
            }
        }
        Ok(y)
    }

    /// p-values of every configured method for one observation.
    pub fn pvalues(&self, cal: &Calibrated, y: &State) -> Result<Vec<(Method, f64)>> {
        let alpha = self.config.alpha;
        let mut out = Vec::with_capacity(self.config.methods.len());
        let mut debiased = None;
        for &m in &self.config.methods {
            let p = match m {
                Method::SigleSat => cal.sat.as_ref().map(|t| t.test(y, self.config.calibration).p_value),
                Method::SigleSel => cal.sel.as_ref().map(|t| t.test(y, self.config.calibration).p_value),
                Method::Weak => cal.weak.as_ref().map(|w| w.test(y, alpha).p_value),
                Method::Tt1 | Method::TtBonf => {
                    if debiased.is_none() {
                        let cert = self.spec.certificate(y)?;
                        let prob = DesignProblem::new(self.x.clone(), state_to_vector(y), self.config.lambda)?;
                        debiased = Some(tt_debias(&cert, &prob));
                    }
                    let p = match debiased.as_ref().unwrap() {
                        Ok(deb) if m == Method::Tt1 => tt1_test(deb, &self.theta_null, alpha).map(|r| r.p_value),
                        Ok(deb) => tt_bonferroni_test(deb, &self.theta_null, alpha).map(|r| r.p_value),
                        Err(_) => Ok(1.0),
                    };
                    Some(p.unwrap_or(1.0))
                }
            };
            out.push((m, p.unwrap_or(1.0)));
        }
        Ok(out)
    }

    /// Replicate observations under `truth`; replicate `r` uses the
    /// stream `salt + r`.
    fn replicate_pvalues(&self, cal: &Calibrated, truth: &TruthSpec, salt: u64) -> Result<Vec<Vec<(Method, f64)>>> {
        let pi = truth_pi(&self.x, &truth.vartheta(self.config.design.p));
        let mode = self.draw_mode(&pi, &mut self.rng(salt - 1))?;
        let one = |r: usize| -> Result<Vec<(Method, f64)>> {
            let mut rng = self.rng(salt + r as u64);
            let y = self.conditional_draw(&pi, mode, &mut rng)?;
            self.pvalues(cal, &y)
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            (0..self.config.replicates).into_par_iter().map(one).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..self.config.replicates).map(one).collect()
        }
    }

    pub fn test_study(&self) -> Result<TestStudy> {
        let cal = self.calibrate()?;
        let reps = self.replicate_pvalues(&cal, &self.config.truth, 1 << 20)?;
        let mut rows = Vec::new();
        for (r, ps) in reps.into_iter().enumerate() {
            for (m, p) in ps {
                rows.push(PValueRow {
                    method: m.name().into(),
                    replicate: r,
                    p_value: p,
                });
            }
        }
        Ok(TestStudy {
            summary: self.summary(&cal, &rows),
            rows,
        })
    }

    pub fn power_study(&self) -> Result<Vec<PowerRow>> {
        let spec = self
            .config
            .power
            .as_ref()
            .ok_or_else(|| SigleError::InvalidInput("power study needs a [power] section".into()))?;
        let cal = self.calibrate()?;
        let mut rows = Vec::new();
        for (k, &nu) in spec.nu.iter().enumerate() {
            let truth = TruthSpec {
                signal: spec.signal,
                nu,
            };
            let reps = self.replicate_pvalues(&cal, &truth, (k as u64 + 2) << 20)?;
            for &m in &self.config.methods {
                let hits = reps
                    .iter()
                    .filter(|ps| ps.iter().any(|&(mm, p)| mm == m && p <= self.config.alpha))
                    .count();
                rows.push(PowerRow {
                    nu,
                    method: m.name().into(),
                    power: hits as f64 / reps.len() as f64,
                });
            }
        }
        Ok(rows)
    }

    fn summary(&self, cal: &Calibrated, rows: &[PValueRow]) -> StudySummary {
        let rejection_rates = self
            .config
            .methods
            .iter()
            .map(|&m| {
                let ps: Vec<f64> = rows.iter().filter(|r| r.method == m.name()).map(|r| r.p_value).collect();
                let rate = ps.iter().filter(|&&p| p <= self.config.alpha).count() as f64 / ps.len().max(1) as f64;
                (m.name().to_string(), rate)
            })
            .collect();
        StudySummary {
            support: self.spec.support().to_vec(),
            lambda: self.config.lambda,
            alpha: self.config.alpha,
            replicates: self.config.replicates,
            calib_ess: cal.calib_ess,
            threshold_ess: cal.threshold_ess,
            weak_constant: cal.weak.as_ref().map(|w| w.is_constant()),
            rejection_rates,
        }
    }

    /// Confidence region for the configured model around the selection draw.
    pub fn region(&self) -> Result<RegionReport> {
        let rs = self
            .config
            .region
            .as_ref()
            .ok_or_else(|| SigleError::InvalidInput("cr needs a [region] section".into()))?;
        let x_m = self.spec.x_m().clone();
        let y = state_to_vector(&self.y_select);
        let theta_hat = psi(&(x_m.transpose() * &y), &x_m, &PsiOptions::default())?.theta;
        let mut oracle: Box<dyn MomentOracle + '_> = match self.config.sampler.kind {
            SamplerKind::Exact => Box::new(ExactOracle {
                event: self.event.as_ref().expect("exact sampler enumerates"),
                x_m: self.spec.x_m(),
            }),
            SamplerKind::Rejection => Box::new(RejectionOracle {
                spec: &self.spec,
                samples: self.config.sampler.samples,
                rng: self.rng(4),
                opts: self.config.sampler.rejection,
            }),
            SamplerKind::SeiSlr => Box::new(AnnealingOracle {
                spec: &self.spec,
                start: self.y_select.clone(),
                opts: self.config.sampler.anneal,
                rng: self.rng(4),
            }),
        };
        match rs.model {
            Model::Selected => {
                let fit = estimate_theta_star(&theta_hat, &x_m, oracle.as_mut(), &rs.descent)?;
                cr_selected(
                    &fit.theta,
                    fit.m_value.sqrt(),
                    rs.constants,
                    self.config.alpha,
                    rs.sigma_inv_sup,
                    self.spec.n(),
                )
            }
            Model::Saturated => {
                let fit = estimate_pi_star(&y, &x_m, &theta_hat, oracle.as_mut(), rs.max_evals)?;
                cr_saturated(
                    &Vector::from_vec(fit.pi_star),
                    &Vector::from_vec(fit.pi_bar),
                    &y,
                    &x_m,
                    rs.constants,
                    self.config.alpha,
                )
            }
        }
    }

    pub fn x_m(&self) -> Mat {
        select_columns(&self.x, self.spec.support())
    }
}

/// Calibrated tests shared by every replicate.
pub struct Calibrated {
    pub sat: Option<SigleTest>,
    pub sel: Option<SigleTest>,
    pub weak: Option<WeakLearner>,
    pub calib_ess: f64,
    pub threshold_ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueRow {
    pub method: String,
    pub replicate: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub nu: f64,
    pub method: String,
    pub power: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudySummary {
    pub support: Vec<usize>,
    pub lambda: f64,
    pub alpha: f64,
    pub replicates: usize,
    pub calib_ess: f64,
    pub threshold_ess: f64,
    pub weak_constant: Option<bool>,
    pub rejection_rates: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub struct TestStudy {
    pub rows: Vec<PValueRow>,
    pub summary: StudySummary,
}

impl TestStudy {
    /// p-values of one method in replicate order.
    pub fn pvalues(&self, method: Method) -> Vec<f64> {
        self.rows.iter().filter(|r| r.method == method.name()).map(|r| r.p_value).collect()
    }
}

pub fn write_csv<W: Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

/// Kolmogorov-Smirnov distance between the sample and `U(0, 1)`.
pub fn ks_uniform(sample: &[f64]) -> f64 {
    let mut v: Vec<f64> = sample.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let x = x.clamp(0.0, 1.0);
            (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs())
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        let mut c = ExperimentConfig::preset(8, 3, 0.6, 4, SamplerKind::Exact);
        c.replicates = 20;
        c
    }

    #[test]
    fn presets_match_settings_table() {
        let s1 = ExperimentConfig::setting1(0);
        assert_eq!((s1.design.n, s1.design.p, s1.lambda), (100, 10, 5.0));
        assert_eq!(s1.sampler.kind, SamplerKind::Rejection);
        let s2 = ExperimentConfig::setting2(0);
        assert_eq!((s2.design.n, s2.design.p, s2.lambda), (20, 15, 3.0));
        assert_eq!(s2.sampler.kind, SamplerKind::SeiSlr);
        assert_eq!(s1.truth.vartheta(10), Vector::zeros(10));
    }

    #[test]
    fn signals_have_documented_shape() {
        let loc = TruthSpec {
            signal: Signal::Localized,
            nu: 0.9,
        };
        let dis = TruthSpec {
            signal: Signal::Disseminated,
            nu: 0.3,
        };
        assert_eq!(loc.vartheta(3).as_slice(), &[0.9, 0.0, 0.0]);
        assert_eq!(dis.vartheta(3).as_slice(), &[0.3, 0.3, 0.3]);
    }

    #[test]
    fn zero_replicates_rejected() {
        let mut c = small_config();
        c.replicates = 0;
        assert!(Experiment::setup(c).is_err());
    }

    #[test]
    fn study_is_deterministic() {
        let a = Experiment::setup(small_config()).unwrap().test_study().unwrap();
        let b = Experiment::setup(small_config()).unwrap().test_study().unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.rows.len(), 20 * 5);
        assert!(a.rows.iter().all(|r| (0.0..=1.0).contains(&r.p_value)));
    }

    #[test]
    fn ks_distance_oracle() {
        assert!((ks_uniform(&[0.5]) - 0.5).abs() < 1e-15);
        let grid: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        assert!((ks_uniform(&grid) - 0.005).abs() < 1e-12);
    }
}
