//! The selection event `E_M`: membership, annealing energy, exhaustive
//! enumeration of the hypercube and the sign-pattern characterization.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SigleError};
use crate::glm::{sigmoid, state_to_vector, DesignProblem, State};
use crate::lasso::{LassoCertificate, LassoSolver, SolverOptions};
use crate::numerics::linalg::{complement, min_singular_value, select_columns};
use crate::numerics::{serde_vector, Mat, Vector};
use crate::psi::{psi, PsiOptions};

/// Default enumeration cap on `N`.
pub const DEFAULT_N_CAP: usize = 20;

/// `1 - sqrt(min(x / delta, 1))`, clamped to 1 for negative `x`.
pub fn b_delta(x: f64, delta: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        1.0 - (x / delta).min(1.0).sqrt()
    }
}

/// Design, penalty, selected support and energy knee of an event.
#[derive(Debug, Clone)]
pub struct EventSpec {
    solver: LassoSolver,
    m: Vec<usize>,
    m_complement: Vec<usize>,
    x_m: Mat,
    delta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventMembershipReport {
    pub in_event: bool,
    pub energy: f64,
    pub p1: f64,
    pub p2: f64,
    #[serde(with = "serde_vector")]
    pub sign_subvector: Vector,
    /// `1 - |S_{-M}|_inf`.
    pub margin: f64,
}

impl EventSpec {
    pub fn new(x: Mat, lambda: f64, m: Vec<usize>, delta: f64, opts: SolverOptions) -> Result<Self> {
        let d = x.ncols();
        if !(delta > 0.0) {
            return Err(SigleError::InvalidInput("delta must be positive".into()));
        }
        if m.windows(2).any(|w| w[0] >= w[1]) || m.iter().any(|&k| k >= d) {
            return Err(SigleError::InvalidInput(
                "support must be strictly increasing indices below d".into(),
            ));
        }
        let x_m = select_columns(&x, &m);
        if !m.is_empty() && (m.len() > x.nrows() || min_singular_value(&x_m) <= 1e-10) {
            return Err(SigleError::InvalidInput("X_M is not of full column rank".into()));
        }
        let m_complement = complement(d, &m);
        let solver = LassoSolver::new(x, lambda, opts)?;
        Ok(Self {
            solver,
            m,
            m_complement,
            x_m,
            delta,
        })
    }

    /// Event selected by the observed response of `prob`.
    pub fn from_observation(prob: &DesignProblem, delta: f64, opts: SolverOptions) -> Result<(Self, LassoCertificate)> {
        let solver = LassoSolver::for_problem(prob, opts)?;
        let cert = solver.solve(&prob.y)?;
        let spec = Self::new(prob.x.clone(), prob.lambda, cert.support.clone(), delta, opts)?;
        Ok((spec, cert))
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(SigleError::InvalidInput("delta must be positive".into()));
        }
        let mut out = self.clone();
        out.delta = delta;
        Ok(out)
    }

    pub fn x(&self) -> &Mat {
        self.solver.x()
    }

    pub fn x_m(&self) -> &Mat {
        &self.x_m
    }

    pub fn support(&self) -> &[usize] {
        &self.m
    }

    pub fn s(&self) -> usize {
        self.m.len()
    }

    pub fn n(&self) -> usize {
        self.solver.x().nrows()
    }

    pub fn lambda(&self) -> f64 {
        self.solver.lambda()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn solver(&self) -> &LassoSolver {
        &self.solver
    }

    pub fn certificate(&self, y: &[u8]) -> Result<LassoCertificate> {
        if y.len() != self.n() {
            return Err(SigleError::DimensionMismatch {
                context: "state length vs design rows",
                expected: self.n(),
                got: y.len(),
            });
        }
        self.solver.solve(&state_to_vector(y))
    }

    /// Membership by support equality of the re-solved lasso.
    pub fn contains(&self, y: &[u8]) -> Result<bool> {
        Ok(self.certificate(y)?.support == self.m)
    }

    fn margin(&self, signs: &Vector) -> f64 {
        let sup = self
            .m_complement
            .iter()
            .map(|&k| signs[k].abs())
            .fold(0.0, f64::max);
        1.0 - sup
    }

    pub fn report_from_certificate(&self, cert: &LassoCertificate) -> EventMembershipReport {
        let signs = &cert.sign_vector;
        let margin = self.margin(signs);
        let p1 = b_delta(margin, self.delta);
        // coordinates already certified active contribute nothing
        let active = 1.0 - self.solver.options().active_tolerance;
        let p2 = if self.m.is_empty() {
            0.0
        } else {
            self.m
                .iter()
                .map(|&k| {
                    let a = signs[k].abs();
                    if a >= active {
                        0.0
                    } else {
                        1.0 - a
                    }
                })
                .sum::<f64>()
                / self.m.len() as f64
        };
        EventMembershipReport {
            in_event: cert.support == self.m,
            energy: p1.max(p2),
            p1,
            p2,
            sign_subvector: Vector::from_iterator(self.m.len(), self.m.iter().map(|&k| signs[k])),
            margin,
        }
    }

    /// Annealing energy `max(p1, p2)` of a state, with its membership.
    pub fn energy(&self, y: &[u8]) -> Result<EventMembershipReport> {
        let cert = self.certificate(y)?;
        Ok(self.report_from_certificate(&cert))
    }
}

/// `bit i = Y_i`, with `Y_0` the most significant bit.
pub fn state_to_code(y: &[u8]) -> u64 {
    y.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64)
}

pub fn code_to_state(code: u64, n: usize) -> State {
    (0..n).map(|i| ((code >> (n - 1 - i)) & 1) as u8).collect()
}

pub fn bitstring(y: &[u8]) -> String {
    y.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect()
}

/// Membership and margin for one hypercube state.
#[derive(Debug, Clone, Copy)]
pub struct StateSummary {
    pub in_event: bool,
    pub margin: f64,
    pub degenerate: bool,
}

/// Classify every state of `{0,1}^N`, indexed by integer code.
pub fn classify_hypercube(spec: &EventSpec, n_cap: usize) -> Result<Vec<StateSummary>> {
    let n = spec.n();
    if n > n_cap || n >= 63 {
        return Err(SigleError::CapExceeded { n, cap: n_cap.min(62) });
    }
    let total = 1u64 << n;
    let one = |code: u64| -> Result<StateSummary> {
        let y = code_to_state(code, n);
        let cert = spec.certificate(&y)?;
        Ok(StateSummary {
            in_event: cert.support == spec.m,
            margin: spec.margin(&cert.sign_vector),
            degenerate: cert.degenerate,
        })
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..total).into_par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..total).map(one).collect()
    }
}

/// The exact event `E_M` and its critical knee `delta_c`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnumeratedEvent {
    pub n: usize,
    pub support: Vec<usize>,
    pub codes: Vec<u64>,
    pub members: Vec<String>,
    /// `min over E_M of 1 - |S_{-M}|_inf`; absent when the event is empty.
    pub delta_c: Option<f64>,
    /// Some member violates non-degeneracy.
    pub degenerate: bool,
}

impl EnumeratedEvent {
    pub fn states(&self) -> Vec<State> {
        self.codes.iter().map(|&c| code_to_state(c, self.n)).collect()
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

pub fn enumerate_event(spec: &EventSpec, n_cap: usize) -> Result<EnumeratedEvent> {
    let summaries = classify_hypercube(spec, n_cap)?;
    Ok(collect_event(spec, &summaries))
}

pub fn collect_event(spec: &EventSpec, summaries: &[StateSummary]) -> EnumeratedEvent {
    let n = spec.n();
    let mut codes = Vec::new();
    let mut delta_c = f64::INFINITY;
    let mut degenerate = false;
    for (code, s) in summaries.iter().enumerate() {
        if s.in_event {
            codes.push(code as u64);
            delta_c = delta_c.min(s.margin);
            degenerate |= s.degenerate;
        }
    }
    let members = codes.iter().map(|&c| bitstring(&code_to_state(c, n))).collect();
    EnumeratedEvent {
        n,
        support: spec.m.clone(),
        codes,
        members,
        delta_c: delta_c.is_finite().then_some(delta_c),
        degenerate,
    }
}

/// Outcome of the three sign-pattern conditions for one `S_M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thm1Check {
    /// `rho = X_M^T Y - lambda S_M` lies in the image of `Xi`.
    pub image: bool,
    /// `Diag(S_M) Psi(rho) >= 0`.
    pub signs: bool,
    /// `|X_{-M}^T (Y - sigma(X_M Psi(rho)))|_inf < lambda`.
    pub dual_feasible: bool,
    /// `lambda` minus the left side of the dual condition.
    pub dual_margin: f64,
}

impl Thm1Check {
    pub fn holds(&self) -> bool {
        self.image && self.signs && self.dual_feasible
    }
}

pub fn check_thm1(y: &[u8], spec: &EventSpec, s_m: &[f64], opts: &PsiOptions) -> Result<Thm1Check> {
    if s_m.len() != spec.s() {
        return Err(SigleError::DimensionMismatch {
            context: "sign pattern vs support size",
            expected: spec.s(),
            got: s_m.len(),
        });
    }
    let yv = state_to_vector(y);
    let lambda = spec.lambda();
    let x_m = spec.x_m();
    let theta = if spec.s() == 0 {
        Vector::zeros(0)
    } else {
        let rho = x_m.transpose() * &yv - Vector::from_column_slice(s_m) * lambda;
        match psi(&rho, x_m, opts) {
            Ok(r) if r.residual < 1e-6 => r.theta,
            Ok(_) | Err(SigleError::PsiDivergence { .. }) | Err(SigleError::SingularFisher) => {
                return Ok(Thm1Check {
                    image: false,
                    signs: false,
                    dual_feasible: false,
                    dual_margin: f64::NEG_INFINITY,
                })
            }
            Err(e) => return Err(e),
        }
    };
    let signs = theta.iter().zip(s_m).all(|(t, s)| s * t >= -1e-8);
    let eta = if spec.s() == 0 {
        Vector::zeros(spec.n())
    } else {
        x_m * &theta
    };
    let resid = Vector::from_fn(spec.n(), |i, _| yv[i] - sigmoid(eta[i]));
    let x = spec.x();
    let sup = spec
        .m_complement
        .iter()
        .map(|&k| x.column(k).dot(&resid).abs())
        .fold(0.0, f64::max);
    Ok(Thm1Check {
        image: true,
        signs,
        dual_feasible: sup < lambda,
        dual_margin: lambda - sup,
    })
}

/// Membership through the sign-pattern characterization: some `S_M` in
/// `{-1, 1}^s` satisfies all three conditions.
pub fn thm1_membership(y: &[u8], spec: &EventSpec, opts: &PsiOptions) -> Result<bool> {
    let s = spec.s();
    for pattern in 0u64..(1u64 << s) {
        let s_m: Vec<f64> = (0..s)
            .map(|j| if (pattern >> j) & 1 == 1 { -1.0 } else { 1.0 })
            .collect();
        if check_thm1(y, spec, &s_m, opts)?.holds() {
            return Ok(true);
        }
    }
    Ok(false)
}
