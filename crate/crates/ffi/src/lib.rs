//! C interface to `gridvolt`.
//!
//! Objects cross the boundary as opaque handles created by `gv_*_load` /
//! `gv_*_new` and released with the matching `gv_*_free`. Every fallible
//! call returns a [`GvStatus`]; on failure [`gv_last_error_message`] gives
//! a description valid until the next call on the same thread. Vectors are
//! caller-owned `double` arrays whose length is passed alongside and must
//! equal the problem dimension.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use gridvolt::bbus::BbusMatrix;
use gridvolt::flow::OperatingCondition;
use gridvolt::ppd::{reference_qp_solve, solve_static, ControlConfig, HvcProblem, SolveStatus};
use gridvolt::scenario::{parse_scenario, write_results, Scenario};
use gridvolt::sim::{simulate_strategy, Strategy};
use nalgebra::DMatrix;

/// Result of a call. The nonzero values match the exit codes of the
/// `gridvolt` command-line tool where the meaning overlaps.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GvStatus {
    Ok = 0,
    /// The iteration budget ran out before the tolerance was met.
    NotConverged = 2,
    /// Invalid input: a file, a configuration value or a problem parameter.
    Input = 3,
    /// Numerical failure, including diverged iterates.
    Numerical = 4,
    /// Null pointer, wrong buffer length or invalid UTF-8.
    InvalidArgument = 5,
    /// Internal error; the library state is unaffected.
    Panic = 6,
}

/// Use the strategy configured in the scenario.
pub const GV_STRATEGY_SCENARIO: i32 = -1;
pub const GV_STRATEGY_HVC: i32 = 0;
pub const GV_STRATEGY_DISTRIBUTED_ONLY: i32 = 1;
pub const GV_STRATEGY_NO_CONTROL: i32 = 2;

/// A resolved scenario file.
pub struct GvScenario(Scenario);

/// A static voltage-mismatch problem.
pub struct GvProblem(HvcProblem);

/// Settings for [`gv_solve_static`]. A nonpositive `alpha` or `beta`
/// selects half of its certified bound.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GvSolveOptions {
    pub alpha: f64,
    pub beta: f64,
    pub theta: f64,
    pub tol: f64,
    pub max_iters: u64,
}

/// Outcome of [`gv_solve_static`].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GvSolveReport {
    pub iterations: u64,
    pub r_v: f64,
    pub r_q: f64,
    pub r_lambda: f64,
    pub alpha: f64,
    pub beta: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(GvStatus, String);

impl From<gridvolt::Error> for Failure {
    fn from(e: gridvolt::Error) -> Self {
        let status = if e.is_input_error() {
            GvStatus::Input
        } else {
            GvStatus::Numerical
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(GvStatus::InvalidArgument, msg.into())
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<GvStatus, Failure>) -> GvStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => status,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "internal error".into());
            set_error(msg);
            GvStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| invalid(format!("{what} is null")))
}

fn check_len(len: usize, n: usize) -> Result<(), Failure> {
    if len == n {
        Ok(())
    } else {
        Err(invalid(format!("buffer length {len} does not match dimension {n}")))
    }
}

/// Copy `src` into `dst` when `dst` is not null.
unsafe fn fill(dst: *mut f64, src: &[f64]) {
    if !dst.is_null() {
        ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    }
}

unsafe fn put<T>(dst: *mut T, value: T) {
    if !dst.is_null() {
        *dst = value;
    }
}

/// Description of the last failure on this thread, or null. The string is
/// owned by the library.
#[no_mangle]
pub extern "C" fn gv_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn gv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Read and resolve a scenario TOML file. Relative paths in it are taken
/// relative to its directory.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gv_scenario_load(path: *const c_char, out: *mut *mut GvScenario) -> GvStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let scenario = parse_scenario(path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(GvScenario(scenario)));
        Ok(GvStatus::Ok)
    })
}

/// # Safety
/// `scenario` must come from [`gv_scenario_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn gv_scenario_free(scenario: *mut GvScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Number of controllable buses, 0 for a null handle.
///
/// # Safety
/// `scenario` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gv_scenario_n(scenario: *const GvScenario) -> usize {
    scenario.as_ref().map_or(0, |s| s.0.n())
}

/// # Safety
/// `scenario` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gv_scenario_timesteps(scenario: *const GvScenario) -> usize {
    scenario.as_ref().map_or(0, |s| s.0.timesteps)
}

/// Static problem at timestep `t` of the scenario's profiles.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gv_scenario_problem(
    scenario: *const GvScenario,
    t: usize,
    out: *mut *mut GvProblem,
) -> GvStatus {
    guard(|| {
        let s = handle(scenario, "scenario")?;
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let problem = s.0.problem_at(t)?;
        *out = Box::into_raw(Box::new(GvProblem(problem)));
        Ok(GvStatus::Ok)
    })
}

/// Run one strategy over the whole scenario and write `trace.csv`,
/// `timesteps.csv` and `summary.json` into `out_dir`. `mean_mismatch`
/// (nullable) receives the voltage mismatch averaged over timesteps.
///
/// # Safety
/// `scenario` must be a live handle, `out_dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gv_simulate(
    scenario: *const GvScenario,
    strategy: i32,
    out_dir: *const c_char,
    mean_mismatch: *mut f64,
) -> GvStatus {
    guard(|| {
        let s = handle(scenario, "scenario")?;
        let dir = path_arg(out_dir, "out_dir")?;
        let strategy = match strategy {
            GV_STRATEGY_SCENARIO => s.0.config.simulation.strategy,
            k => *usize::try_from(k)
                .ok()
                .and_then(|k| Strategy::ALL.get(k))
                .ok_or_else(|| invalid(format!("unknown strategy {k}")))?,
        };
        let result = simulate_strategy(&s.0, strategy)?;
        write_results(&result, dir)?;
        put(mean_mismatch, result.average_mismatch(|_| true).unwrap_or(f64::NAN));
        Ok(GvStatus::Ok)
    })
}

/// Build a problem from a dense row-major `n` x `n` Bbus matrix (symmetric
/// positive definite), the operating vector `w`, the voltage target `mu`,
/// the weight `gamma` and the VAR box `[q_lo, q_hi]` (infinities allowed).
///
/// # Safety
/// `bbus` must point to `n * n` doubles, the other arrays to `n` each.
#[no_mangle]
pub unsafe extern "C" fn gv_problem_new(
    n: usize,
    bbus: *const f64,
    w: *const f64,
    mu: *const f64,
    gamma: f64,
    q_lo: *const f64,
    q_hi: *const f64,
    out: *mut *mut GvProblem,
) -> GvStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        if n == 0 {
            return Err(invalid("n is zero"));
        }
        let entries = n.checked_mul(n).ok_or_else(|| invalid("n is too large"))?;
        let m = DMatrix::from_row_slice(n, n, slice_arg(bbus, entries, "bbus")?);
        let coupling = m.row_sum().transpose().as_slice().to_vec();
        let b = BbusMatrix::from_parts(m, (1..=n).collect(), coupling)?;
        let problem = HvcProblem::new(
            Arc::new(b),
            OperatingCondition(slice_arg(w, n, "w")?.to_vec()),
            slice_arg(mu, n, "mu")?.to_vec(),
            gamma,
            slice_arg(q_lo, n, "q_lo")?.to_vec(),
            slice_arg(q_hi, n, "q_hi")?.to_vec(),
        )?;
        *out = Box::into_raw(Box::new(GvProblem(problem)));
        Ok(GvStatus::Ok)
    })
}

/// # Safety
/// `problem` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn gv_problem_free(problem: *mut GvProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// # Safety
/// `problem` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn gv_problem_n(problem: *const GvProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.0.n())
}

/// Smallest and largest eigenvalue of Bbus.
///
/// # Safety
/// `problem` must be a live handle; the outputs are nullable.
#[no_mangle]
pub unsafe extern "C" fn gv_problem_spectrum(
    problem: *const GvProblem,
    eta_tilde: *mut f64,
    l_tilde: *mut f64,
) -> GvStatus {
    guard(|| {
        let p = handle(problem, "problem")?;
        put(eta_tilde, p.0.bbus().eta_tilde());
        put(l_tilde, p.0.bbus().l_tilde());
        Ok(GvStatus::Ok)
    })
}

/// Certified step-size bounds. Fails with `Input` when `gamma` is 0.
///
/// # Safety
/// `problem` must be a live handle; the outputs are nullable.
#[no_mangle]
pub unsafe extern "C" fn gv_problem_step_bounds(
    problem: *const GvProblem,
    alpha_max: *mut f64,
    beta_max: *mut f64,
) -> GvStatus {
    guard(|| {
        let p = handle(problem, "problem")?;
        let b = p
            .0
            .step_bounds()
            .ok_or_else(|| Failure(GvStatus::Input, "step bounds need gamma > 0".into()))?;
        put(alpha_max, b.alpha_max);
        put(beta_max, b.beta_max);
        Ok(GvStatus::Ok)
    })
}

/// Objective value at the VAR setting `q`.
///
/// # Safety
/// `problem` must be a live handle, `q` must hold `len` doubles and
/// `value` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gv_problem_objective(
    problem: *const GvProblem,
    q: *const f64,
    len: usize,
    value: *mut f64,
) -> GvStatus {
    guard(|| {
        let p = handle(problem, "problem")?;
        check_len(len, p.0.n())?;
        if value.is_null() {
            return Err(invalid("value is null"));
        }
        *value = p.0.objective(slice_arg(q, len, "q")?)?;
        Ok(GvStatus::Ok)
    })
}

/// Default solver settings: certified steps, tolerance 1e-8.
#[no_mangle]
pub extern "C" fn gv_solve_options_default() -> GvSolveOptions {
    GvSolveOptions {
        alpha: 0.0,
        beta: 0.0,
        theta: 0.0,
        tol: ControlConfig::DEFAULT_TOL,
        max_iters: ControlConfig::DEFAULT_MAX_ITERS as u64,
    }
}

fn control_for(p: &HvcProblem, o: &GvSolveOptions) -> Result<ControlConfig, Failure> {
    let auto = if o.alpha > 0.0 && o.beta > 0.0 {
        None
    } else {
        Some(ControlConfig::certified(p)?)
    };
    let pick = |given: f64, auto: Option<f64>| if given > 0.0 { given } else { auto.unwrap_or(given) };
    let alpha = pick(o.alpha, auto.as_ref().map(|c| c.alpha));
    let beta = pick(o.beta, auto.as_ref().map(|c| c.beta));
    let max_iters = usize::try_from(o.max_iters).unwrap_or(usize::MAX);
    Ok(ControlConfig::new(alpha, beta)?
        .with_theta(o.theta)?
        .with_tol(o.tol)?
        .with_max_iters(max_iters)
        .with_record_every(usize::MAX))
}

/// Solve with the PPD iteration under exact linear feedback, starting from
/// `q0` (null for zero). The final iterate goes to `q`, `v` and `lambda`
/// (each nullable, `len` entries); when the run does not converge it is the
/// iterate with the smallest residual. Returns `Ok`, `NotConverged`, or
/// `Numerical` when the iterates diverge.
///
/// # Safety
/// `problem` must be a live handle; non-null arrays must hold `len`
/// doubles; `options` and `report` are nullable.
#[no_mangle]
pub unsafe extern "C" fn gv_solve_static(
    problem: *const GvProblem,
    options: *const GvSolveOptions,
    q0: *const f64,
    q: *mut f64,
    v: *mut f64,
    lambda: *mut f64,
    len: usize,
    report: *mut GvSolveReport,
) -> GvStatus {
    guard(|| {
        let p = &handle(problem, "problem")?.0;
        check_len(len, p.n())?;
        let opts = options.as_ref().copied().unwrap_or_else(|| gv_solve_options_default());
        let cfg = control_for(p, &opts)?;
        let start = if q0.is_null() {
            vec![0.0; len]
        } else {
            slice_arg(q0, len, "q0")?.to_vec()
        };
        let sol = solve_static(p, &cfg, &start)?;
        fill(q, &sol.state.q);
        fill(v, &sol.state.v);
        fill(lambda, &sol.state.lambda);
        put(
            report,
            GvSolveReport {
                iterations: sol.iterations,
                r_v: sol.residuals.r_v,
                r_q: sol.residuals.r_q,
                r_lambda: sol.residuals.r_lambda,
                alpha: cfg.alpha,
                beta: cfg.beta,
            },
        );
        match sol.status {
            SolveStatus::Converged => Ok(GvStatus::Ok),
            SolveStatus::MaxIterations => Ok(GvStatus::NotConverged),
            SolveStatus::Diverged => Err(Failure(
                GvStatus::Numerical,
                "iterates diverged; reduce alpha or beta".into(),
            )),
        }
    })
}

/// Exact optimum by a direct active-set solve.
///
/// # Safety
/// `problem` must be a live handle; non-null arrays must hold `len`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn gv_reference_solve(
    problem: *const GvProblem,
    q: *mut f64,
    v: *mut f64,
    lambda: *mut f64,
    len: usize,
) -> GvStatus {
    guard(|| {
        let p = &handle(problem, "problem")?.0;
        check_len(len, p.n())?;
        let r = reference_qp_solve(p)?;
        fill(q, &r.q);
        fill(v, &r.v);
        fill(lambda, &r.lambda);
        Ok(GvStatus::Ok)
    })
}
