//! Static hybrid-voltage-control problem and its projected partial
//! primal-dual (PPD) solver.
//!
//! The problem is
//!
//! ```text
//! minimize    1/2 |v - mu|^2 + gamma/2 |X(q + w) - mu|_B^2
//! subject to  B v = q + w,   q_lo <= q <= q_hi
//! ```
//!
//! with `X = B^-1`. One PPD iteration minimizes the Lagrangian exactly in
//! `v`, takes a projected gradient step in `q` (whose gradient only needs the
//! local voltage measurement) and a gradient ascent step in the multiplier.

mod reference;

use std::sync::Arc;

use serde::Serialize;

pub use reference::{reference_qp_solve, ReferenceSolution};

use crate::bbus::BbusMatrix;
use crate::error::{Error, Result};
use crate::flow::{lindistflow_voltage, OperatingCondition, VoltageProfile};

/// Upper limits on the primal (`alpha`) and dual (`beta`) step sizes below
/// which convergence is certified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepBounds {
    pub alpha_max: f64,
    pub beta_max: f64,
}

/// Certified step-size bounds from the extremal singular values of B and
/// the weight `gamma`:
///
/// `alpha < 2 / [gamma (1/L + 1/eta)]`, `beta < 2 / [L^2 + (L + eta)/gamma]`.
pub fn stepsize_bounds(eta_tilde: f64, l_tilde: f64, gamma: f64) -> StepBounds {
    debug_assert!(eta_tilde > 0.0 && l_tilde > 0.0 && gamma > 0.0);
    StepBounds {
        alpha_max: 2.0 / (gamma * (1.0 / l_tilde + 1.0 / eta_tilde)),
        beta_max: 2.0 / (l_tilde * l_tilde + (l_tilde + eta_tilde) / gamma),
    }
}

/// The same rule for general `g` (eta-strongly convex, L-smooth) and `f`
/// (c-strongly convex), with `sigma_max` the largest singular value of
/// `B^T B`:
///
/// `alpha < 2/(eta + L)`, `beta < 2 c eta L / [eta L sigma_max + c (eta + L)]`.
pub fn stepsize_bounds_general(eta: f64, l: f64, c: f64, sigma_max: f64) -> StepBounds {
    debug_assert!(eta > 0.0 && l > 0.0 && c > 0.0 && sigma_max > 0.0);
    StepBounds {
        alpha_max: 2.0 / (eta + l),
        beta_max: 2.0 * c * eta * l / (eta * l * sigma_max + c * (eta + l)),
    }
}

/// One static instance of the HVC problem.
#[derive(Debug, Clone)]
pub struct HvcProblem {
    bbus: Arc<BbusMatrix>,
    w: OperatingCondition,
    mu: Vec<f64>,
    gamma: f64,
    q_lo: Vec<f64>,
    q_hi: Vec<f64>,
}

impl HvcProblem {
    pub fn new(
        bbus: Arc<BbusMatrix>,
        w: OperatingCondition,
        mu: Vec<f64>,
        gamma: f64,
        q_lo: Vec<f64>,
        q_hi: Vec<f64>,
    ) -> Result<Self> {
        let n = bbus.n();
        for (what, len) in [
            ("operating condition", w.len()),
            ("desired voltage", mu.len()),
            ("lower VAR limit", q_lo.len()),
            ("upper VAR limit", q_hi.len()),
        ] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: n,
                    got: len,
                });
            }
        }
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::InvalidProblem(format!(
                "gamma must be nonnegative, got {gamma}"
            )));
        }
        if w.as_slice().iter().chain(&mu).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("problem data"));
        }
        for (j, (lo, hi)) in q_lo.iter().zip(&q_hi).enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(Error::InvalidProblem(format!(
                    "VAR limits of row {j} are inverted: [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self {
            bbus,
            w,
            mu,
            gamma,
            q_lo,
            q_hi,
        })
    }

    pub fn n(&self) -> usize {
        self.bbus.n()
    }

    pub fn bbus(&self) -> &BbusMatrix {
        &self.bbus
    }

    pub fn bbus_arc(&self) -> &Arc<BbusMatrix> {
        &self.bbus
    }

    pub fn w(&self) -> &OperatingCondition {
        &self.w
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn q_lo(&self) -> &[f64] {
        &self.q_lo
    }

    pub fn q_hi(&self) -> &[f64] {
        &self.q_hi
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(
            self.bbus.clone(),
            self.w.clone(),
            self.mu.clone(),
            gamma,
            self.q_lo.clone(),
            self.q_hi.clone(),
        )
    }

    pub fn with_limits(&self, q_lo: Vec<f64>, q_hi: Vec<f64>) -> Result<Self> {
        Self::new(
            self.bbus.clone(),
            self.w.clone(),
            self.mu.clone(),
            self.gamma,
            q_lo,
            q_hi,
        )
    }

    /// Linearized voltage `X (q + w)` produced by VAR setting `q`.
    pub fn linear_voltage(&self, q: &[f64]) -> Result<VoltageProfile> {
        lindistflow_voltage(&self.bbus, q, &self.w)
    }

    /// Certified step bounds for this instance. `None` when `gamma == 0`,
    /// where the bounds degenerate.
    pub fn step_bounds(&self) -> Option<StepBounds> {
        (self.gamma > 0.0)
            .then(|| stepsize_bounds(self.bbus.eta_tilde(), self.bbus.l_tilde(), self.gamma))
    }

    /// Objective value at VAR setting `q` with `v` eliminated.
    pub fn objective(&self, q: &[f64]) -> Result<f64> {
        let v = self.linear_voltage(q)?;
        let d: Vec<f64> = v.as_slice().iter().zip(&self.mu).map(|(a, m)| a - m).collect();
        let bd = self.bbus.mul(&d);
        let plain: f64 = d.iter().map(|x| x * x).sum();
        let weighted: f64 = d.iter().zip(&bd).map(|(x, y)| x * y).sum();
        Ok(0.5 * plain + 0.5 * self.gamma * weighted)
    }
}

/// Solver settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Proximal coefficient on the `v`-update; 0 disables it.
    pub theta: f64,
    pub tol: f64,
    pub max_iters: usize,
    /// Iterate infinity-norm above which the run is declared divergent.
    pub divergence_threshold: f64,
    /// Keep every n-th iteration in the trace.
    pub record_every: usize,
}

impl ControlConfig {
    pub const DEFAULT_TOL: f64 = 1e-8;
    pub const DEFAULT_MAX_ITERS: usize = 200_000;
    pub const DEFAULT_DIVERGENCE: f64 = 1e6;
    /// Fraction of the certified bounds used for automatic step sizes.
    pub const AUTO_FRACTION: f64 = 0.5;

    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let cfg = Self {
            alpha,
            beta,
            theta: 0.0,
            tol: Self::DEFAULT_TOL,
            max_iters: Self::DEFAULT_MAX_ITERS,
            divergence_threshold: Self::DEFAULT_DIVERGENCE,
            record_every: 1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Steps at half of the certified bounds.
    pub fn certified(problem: &HvcProblem) -> Result<Self> {
        Self::certified_fraction(problem, Self::AUTO_FRACTION)
    }

    pub fn certified_fraction(problem: &HvcProblem, fraction: f64) -> Result<Self> {
        let bounds = problem.step_bounds().ok_or_else(|| {
            Error::config("alpha/beta", "automatic step sizes need gamma > 0")
        })?;
        Self::new(fraction * bounds.alpha_max, fraction * bounds.beta_max)
    }

    pub fn with_theta(mut self, theta: f64) -> Result<Self> {
        self.theta = theta;
        self.validate()?;
        Ok(self)
    }

    pub fn with_tol(mut self, tol: f64) -> Result<Self> {
        self.tol = tol;
        self.validate()?;
        Ok(self)
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_record_every(mut self, every: usize) -> Self {
        self.record_every = every.max(1);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |x: f64| x.is_finite() && x > 0.0;
        if !pos(self.alpha) {
            return Err(Error::config("alpha", format!("must be positive, got {}", self.alpha)));
        }
        if !pos(self.beta) {
            return Err(Error::config("beta", format!("must be positive, got {}", self.beta)));
        }
        if !(self.theta.is_finite() && self.theta >= 0.0) {
            return Err(Error::config("theta", format!("must be nonnegative, got {}", self.theta)));
        }
        if !pos(self.tol) {
            return Err(Error::config("tol", format!("must be positive, got {}", self.tol)));
        }
        if !pos(self.divergence_threshold) {
            return Err(Error::config("divergence_threshold", "must be positive"));
        }
        Ok(())
    }
}

/// PPD iterate `(v^k, q^k, lambda^k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PpdState {
    pub v: Vec<f64>,
    pub q: Vec<f64>,
    pub lambda: Vec<f64>,
    pub k: u64,
}

impl PpdState {
    /// `lambda = 0`, `q` = `q0` clamped into the box, `v = mu`.
    pub fn initial(problem: &HvcProblem, q0: &[f64]) -> Result<Self> {
        if q0.len() != problem.n() {
            return Err(Error::DimensionMismatch {
                what: "initial VAR setting",
                expected: problem.n(),
                got: q0.len(),
            });
        }
        Ok(Self {
            v: problem.mu.clone(),
            q: project_box(q0, &problem.q_lo, &problem.q_hi),
            lambda: vec![0.0; problem.n()],
            k: 0,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.v
            .iter()
            .chain(&self.q)
            .chain(&self.lambda)
            .all(|x| x.is_finite())
    }

    pub fn inf_norm(&self) -> f64 {
        self.v
            .iter()
            .chain(&self.q)
            .chain(&self.lambda)
            .fold(0.0, |m, x| f64::max(m, x.abs()))
    }
}

/// Norms of the three optimality conditions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct KktResiduals {
    /// `|v - mu + B lambda|`
    pub r_v: f64,
    /// `|q - P(q - (grad g(q) - lambda))|`
    pub r_q: f64,
    /// `|B v - q - w|`
    pub r_lambda: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.r_v.max(self.r_q).max(self.r_lambda)
    }
}

/// Elementwise clamp of `x` into `[lo, hi]`.
pub fn project_box(x: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(lo.iter().zip(hi))
        .map(|(&v, (&l, &h))| v.clamp(l, h))
        .collect()
}

/// `gamma (X(q + w) - mu)`, the gradient of `gamma/2 |X(q+w) - mu|_B^2`.
pub fn grad_g(q: &[f64], problem: &HvcProblem) -> Result<Vec<f64>> {
    let v = problem.linear_voltage(q)?;
    Ok(gradient_from_voltage(v.as_slice(), problem))
}

fn gradient_from_voltage(v: &[f64], problem: &HvcProblem) -> Vec<f64> {
    v.iter()
        .zip(&problem.mu)
        .map(|(vj, mj)| problem.gamma * (vj - mj))
        .collect()
}

// Per-bus update rules. The synchronous solver and the agent simulator both
// evaluate exactly these expressions.

/// `v_j = (mu_j + 2 theta v_j^k - sum_i B_ji lambda_i) / (1 + 2 theta)`
#[inline]
pub(crate) fn v_update(b_lambda: f64, mu: f64, theta: f64, v_prev: f64) -> f64 {
    (mu + 2.0 * theta * v_prev - b_lambda) / (1.0 + 2.0 * theta)
}

/// `q_j = P_j[q_j - alpha (gamma (v~_j - mu_j) - lambda_j)]`
#[inline]
pub(crate) fn q_update(
    q: f64,
    v_meas: f64,
    mu: f64,
    lambda: f64,
    alpha: f64,
    gamma: f64,
    lo: f64,
    hi: f64,
) -> f64 {
    (q - alpha * (gamma * (v_meas - mu) - lambda)).clamp(lo, hi)
}

/// `lambda_j + beta (sum_i B_ji v_i - q_j - w_j)`
#[inline]
pub(crate) fn lambda_update(lambda: f64, beta: f64, b_v: f64, q: f64, w: f64) -> f64 {
    lambda + beta * (b_v - q - w)
}

/// One synchronous PPD iteration. `v_meas` is the voltage measured under
/// `state.q`: the exact linear profile in static mode, or a plant
/// measurement online.
pub fn ppd_step(
    state: &PpdState,
    problem: &HvcProblem,
    config: &ControlConfig,
    v_meas: &VoltageProfile,
) -> Result<PpdState> {
    let n = problem.n();
    for (what, len) in [
        ("voltage estimate", state.v.len()),
        ("VAR setting", state.q.len()),
        ("multiplier", state.lambda.len()),
        ("voltage measurement", v_meas.len()),
    ] {
        if len != n {
            return Err(Error::DimensionMismatch {
                what,
                expected: n,
                got: len,
            });
        }
    }
    let b = &problem.bbus;
    let w = problem.w.as_slice();
    let meas = v_meas.as_slice();

    let v: Vec<f64> = (0..n)
        .map(|j| {
            v_update(
                b.row_dot(j, &state.lambda),
                problem.mu[j],
                config.theta,
                state.v[j],
            )
        })
        .collect();
    let q: Vec<f64> = (0..n)
        .map(|j| {
            q_update(
                state.q[j],
                meas[j],
                problem.mu[j],
                state.lambda[j],
                config.alpha,
                problem.gamma,
                problem.q_lo[j],
                problem.q_hi[j],
            )
        })
        .collect();
    let lambda: Vec<f64> = (0..n)
        .map(|j| lambda_update(state.lambda[j], config.beta, b.row_dot(j, &v), q[j], w[j]))
        .collect();

    let next = PpdState {
        v,
        q,
        lambda,
        k: state.k + 1,
    };
    if !next.is_finite() {
        return Err(Error::NonFinite("PPD iterate"));
    }
    Ok(next)
}

/// KKT residuals of `state`.
pub fn kkt_residuals(state: &PpdState, problem: &HvcProblem) -> Result<KktResiduals> {
    let v_lin = problem.linear_voltage(&state.q)?;
    Ok(kkt_residuals_at(state, problem, v_lin.as_slice()))
}

/// As [`kkt_residuals`] with the linear voltage at `state.q` supplied.
fn kkt_residuals_at(state: &PpdState, problem: &HvcProblem, v_lin: &[f64]) -> KktResiduals {
    let b = &problem.bbus;
    let n = problem.n();
    let mut r_v = 0.0;
    let mut r_q = 0.0;
    let mut r_l = 0.0;
    for j in 0..n {
        let a = state.v[j] - problem.mu[j] + b.row_dot(j, &state.lambda);
        r_v += a * a;

        let grad = problem.gamma * (v_lin[j] - problem.mu[j]);
        let moved = (state.q[j] - (grad - state.lambda[j])).clamp(problem.q_lo[j], problem.q_hi[j]);
        let c = state.q[j] - moved;
        r_q += c * c;

        let d = b.row_dot(j, &state.v) - state.q[j] - problem.w.0[j];
        r_l += d * d;
    }
    KktResiduals {
        r_v: r_v.sqrt(),
        r_q: r_q.sqrt(),
        r_lambda: r_l.sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Diverged,
}

/// One trace entry: after iteration `k`, the voltage mismatch the applied
/// VAR produces and the KKT residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub k: u64,
    pub mismatch_norm: f64,
    pub residuals: KktResiduals,
}

#[derive(Debug, Clone)]
pub struct StaticSolution {
    /// Converged iterate, or the best one seen when not converged.
    pub state: PpdState,
    pub status: SolveStatus,
    /// Iterations run, also when `state` is an earlier best iterate.
    pub iterations: u64,
    pub residuals: KktResiduals,
    pub trace: Vec<IterationRecord>,
}

impl StaticSolution {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Run PPD with exact linear voltage feedback from `q0` until every KKT
/// residual is below `config.tol`.
pub fn solve_static(
    problem: &HvcProblem,
    config: &ControlConfig,
    q0: &[f64],
) -> Result<StaticSolution> {
    solve_static_observed(problem, config, q0, |_| {})
}

/// [`solve_static`] calling `observe` on every iterate (including the
/// initial one).
pub fn solve_static_observed(
    problem: &HvcProblem,
    config: &ControlConfig,
    q0: &[f64],
    mut observe: impl FnMut(&PpdState),
) -> Result<StaticSolution> {
    config.validate()?;
    let mut state = PpdState::initial(problem, q0)?;
    observe(&state);
    let mut v_meas = problem.linear_voltage(&state.q)?;
    let mut residuals = kkt_residuals_at(&state, problem, v_meas.as_slice());
    let mut best = state.clone();
    let mut best_res = residuals;
    let mut trace = Vec::new();
    let every = config.record_every.max(1) as u64;

    let mut status = SolveStatus::MaxIterations;
    if residuals.max() < config.tol {
        status = SolveStatus::Converged;
    }
    while status == SolveStatus::MaxIterations && (state.k as usize) < config.max_iters {
        let next = match ppd_step(&state, problem, config, &v_meas) {
            Ok(s) => s,
            Err(Error::NonFinite(_)) => {
                status = SolveStatus::Diverged;
                break;
            }
            Err(e) => return Err(e),
        };
        v_meas = problem.linear_voltage(&next.q)?;
        state = next;
        observe(&state);
        residuals = kkt_residuals_at(&state, problem, v_meas.as_slice());

        if state.k % every == 0 {
            trace.push(IterationRecord {
                k: state.k,
                mismatch_norm: v_meas.mismatch_norm(&problem.mu),
                residuals,
            });
        }
        if !v_meas.as_slice().iter().all(|v| v.is_finite())
            || state.inf_norm() > config.divergence_threshold
        {
            status = SolveStatus::Diverged;
        } else if residuals.max() < config.tol {
            status = SolveStatus::Converged;
        } else if residuals.max() < best_res.max() {
            best.clone_from(&state);
            best_res = residuals;
        }
    }

    let iterations = state.k;
    let (state, residuals) = match status {
        SolveStatus::Converged => (state, residuals),
        _ => (best, best_res),
    };
    Ok(StaticSolution {
        iterations,
        state,
        status,
        residuals,
        trace,
    })
}
