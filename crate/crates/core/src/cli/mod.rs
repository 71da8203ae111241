//! Command-line driver. Every subcommand reads a scenario, applies the
//! command-line overrides and writes CSV/JSON into the output directory.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use crate::error::{Error, Result};
use crate::ppd::{reference_qp_solve, solve_static, solve_static_observed, SolveStatus};
use crate::scenario::{
    read_scenario_config, write_results, write_static_results, write_trace_csv, Scenario,
    ScenarioConfig, StepSpec,
};
use crate::sim::{iterations_to_tolerance, simulate_strategy, SimulationResult, Strategy};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

const THREADS_VAR: &str = "GRIDVOLT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "gridvolt", version, about = "Hybrid volt/VAR control on radial feeders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the static problem of timestep 0 with the PPD iteration.
    SolveStatic {
        #[command(flatten)]
        common: Common,
    },
    /// Optimal voltage mismatch for a list of gamma values.
    SweepGamma {
        #[command(flatten)]
        common: Common,
        /// Comma-separated gamma grid.
        #[arg(long, value_delimiter = ',', default_values_t = [0.017, 0.1, 0.5, 1.0, 5.0])]
        gammas: Vec<f64>,
        /// Replace the VAR limits with [-10, 10] pu.
        #[arg(long)]
        unlimited: bool,
    },
    /// Rounds until the VAR setting is within tolerance of the optimum,
    /// per bus activation rate (median over seeds).
    SweepActivation {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.25, 0.5, 0.75, 1.0])]
        rates: Vec<f64>,
        /// Seeds per rate, counted up from the scenario seed.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Distance `|q - q*|_inf` that counts as converged.
        #[arg(long, default_value_t = 1e-5)]
        q_tol: f64,
    },
    /// Run the online simulation.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Run all three strategies, one output directory each.
        #[arg(long)]
        compare: bool,
        /// Print max |v_ac - v_lin| per timestep.
        #[arg(long)]
        validate_lindistflow: bool,
    },
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub activation: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<Strategy>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    Strategy::ALL
        .into_iter()
        .find(|st| st.name() == s)
        .ok_or_else(|| format!("unknown strategy `{s}` (hvc, distributed-only, no-control)"))
}

impl Common {
    fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(g) = self.gamma {
            cfg.controller.gamma = g;
        }
        if let Some(a) = self.alpha {
            cfg.controller.alpha = StepSpec::Value(a);
        }
        if let Some(b) = self.beta {
            cfg.controller.beta = StepSpec::Value(b);
        }
        if let Some(p) = self.activation {
            cfg.comm.activation_prob = p;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(s) = self.strategy {
            cfg.simulation.strategy = s;
        }
        if let Some(m) = self.max_iters {
            cfg.controller.max_iters = m;
        }
        if let Some(t) = self.tol {
            cfg.controller.tol = t;
        }
    }

    fn load(&self) -> Result<Scenario> {
        let mut cfg = read_scenario_config(&self.scenario)?;
        self.apply(&mut cfg);
        let base = self.scenario.parent().unwrap_or(Path::new("."));
        let s = Scenario::resolve(cfg, base)?;
        if s.step_warning {
            eprintln!(
                "warning: step sizes alpha={} beta={} exceed the certified bounds {:?}",
                s.control.alpha, s.control.beta, s.step_bounds
            );
        }
        Ok(s)
    }
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return EXIT_INPUT;
    }
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                EXIT_INPUT
            } else {
                EXIT_NUMERICAL
            }
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::config(THREADS_VAR, format!("expected a positive integer, got `{raw}`")))?;
    // a pool may already exist when run is called twice in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn execute(cmd: &Command) -> Result<i32> {
    match cmd {
        Command::SolveStatic { common } => cmd_solve_static(common),
        Command::SweepGamma {
            common,
            gammas,
            unlimited,
        } => cmd_sweep_gamma(common, gammas, *unlimited),
        Command::SweepActivation {
            common,
            rates,
            seeds,
            q_tol,
        } => cmd_sweep_activation(common, rates, *seeds, *q_tol),
        Command::Simulate {
            common,
            compare,
            validate_lindistflow,
        } => cmd_simulate(common, *compare, *validate_lindistflow),
    }
}

fn inf_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

pub fn cmd_solve_static(common: &Common) -> Result<i32> {
    let scenario = common.load()?;
    let problem = scenario.problem_at(0)?;
    let sol = solve_static(&problem, &scenario.control, &vec![0.0; problem.n()])?;
    let reference = reference_qp_solve(&problem)?;

    let v = problem.linear_voltage(&sol.state.q)?;
    let mismatch = v.mismatch_norm(&scenario.mu);
    let ref_mismatch = crate::flow::VoltageProfile(reference.v.clone()).mismatch_norm(&scenario.mu);
    let summary = json!({
        "status": sol.status,
        "converged": sol.converged(),
        "iterations": sol.iterations,
        "residuals": sol.residuals,
        "mismatch_norm": mismatch,
        "q": sol.state.q,
        "v": sol.state.v,
        "lambda": sol.state.lambda,
        "alpha": scenario.control.alpha,
        "beta": scenario.control.beta,
        "step_bounds": scenario.step_bounds,
        "step_warning": scenario.step_warning,
        "reference": {
            "q": reference.q,
            "mismatch_norm": ref_mismatch,
            "max_q_error": inf_dist(&sol.state.q, &reference.q),
        },
        "seed": scenario.config.seed,
        "config": scenario.config,
    });
    write_static_results(&sol, &summary, &common.out)?;

    println!(
        "status={:?} iterations={} mismatch={:.6e} reference_mismatch={:.6e} max_residual={:.3e}",
        sol.status,
        sol.iterations,
        mismatch,
        ref_mismatch,
        sol.residuals.max()
    );
    Ok(match sol.status {
        SolveStatus::Converged => EXIT_OK,
        SolveStatus::MaxIterations => EXIT_NOT_CONVERGED,
        SolveStatus::Diverged => {
            eprintln!("error: iterates diverged; reduce alpha/beta");
            EXIT_NUMERICAL
        }
    })
}

pub fn cmd_sweep_gamma(common: &Common, gammas: &[f64], unlimited: bool) -> Result<i32> {
    let scenario = common.load()?;
    let mut problem = scenario.problem_at(0)?;
    if unlimited {
        let n = problem.n();
        problem = problem.with_limits(vec![-10.0; n], vec![10.0; n])?;
    }
    let rows: Vec<(f64, f64, usize)> = gammas
        .par_iter()
        .map(|&g| {
            let p = problem.with_gamma(g)?;
            let r = reference_qp_solve(&p)?;
            let mismatch = crate::flow::VoltageProfile(r.v).mismatch_norm(p.mu());
            let binding = r
                .q
                .iter()
                .zip(p.q_lo().iter().zip(p.q_hi()))
                .filter(|(q, (lo, hi))| *q == *lo || *q == *hi)
                .count();
            Ok((g, mismatch, binding))
        })
        .collect::<Result<_>>()?;

    std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
    write_trace_csv(
        &common.out.join("gamma_sweep.csv"),
        &["gamma".into(), "mismatch_norm".into(), "binding".into()],
        rows.iter()
            .map(|(g, m, b)| vec![format!("{g:?}"), format!("{m:?}"), b.to_string()]),
    )?;
    println!("gamma,mismatch_norm,binding");
    for (g, m, b) in &rows {
        println!("{g},{m:.9e},{b}");
    }
    Ok(EXIT_OK)
}

/// One row of the activation sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRow {
    pub rate: f64,
    /// Rounds to tolerance per seed; `None` when the budget ran out.
    pub iterations: Vec<Option<u64>>,
}

impl ActivationRow {
    /// Median rounds, counting a non-converged seed as infinitely slow.
    pub fn median(&self) -> Option<f64> {
        let mut v: Vec<u64> = self.iterations.iter().map(|x| x.unwrap_or(u64::MAX)).collect();
        v.sort_unstable();
        let n = v.len();
        if n == 0 {
            return None;
        }
        let (a, b) = (v[(n - 1) / 2], v[n / 2]);
        (b != u64::MAX).then(|| (a as f64 + b as f64) / 2.0)
    }
}

/// Rounds-to-tolerance of the asynchronous controller for every rate and
/// seed, in parameter order. Also returns the synchronous PPD count.
pub fn activation_sweep(
    scenario: &Scenario,
    rates: &[f64],
    seeds: u64,
    q_tol: f64,
) -> Result<(Option<u64>, Vec<ActivationRow>)> {
    let problem = scenario.problem_at(0)?;
    let q_star = reference_qp_solve(&problem)?.q;
    let budget = scenario.control.max_iters as u64;
    let feedback = scenario.config.simulation.feedback;

    let mut sync = None;
    let sync_cfg = scenario.control.clone().with_tol(f64::MIN_POSITIVE)?;
    solve_static_observed(&problem, &sync_cfg.with_max_iters(budget as usize), &vec![0.0; problem.n()], |s| {
        if sync.is_none() && inf_dist(&s.q, &q_star) <= q_tol {
            sync = Some(s.k);
        }
    })?;

    let jobs: Vec<(usize, u64)> = (0..rates.len())
        .flat_map(|r| (0..seeds).map(move |s| (r, s)))
        .collect();
    let results: Vec<Option<u64>> = jobs
        .par_iter()
        .map(|&(r, s)| {
            let mut comm = scenario.comm.clone().with_activation(rates[r]);
            comm.seed = scenario.comm.seed.wrapping_add(s);
            iterations_to_tolerance(&problem, &scenario.control, &comm, feedback, &q_star, q_tol, budget)
        })
        .collect::<Result<_>>()?;
    let rows = rates
        .iter()
        .enumerate()
        .map(|(r, &rate)| ActivationRow {
            rate,
            iterations: results[r * seeds as usize..(r + 1) * seeds as usize].to_vec(),
        })
        .collect();
    Ok((sync, rows))
}

pub fn cmd_sweep_activation(common: &Common, rates: &[f64], seeds: u64, q_tol: f64) -> Result<i32> {
    if seeds == 0 {
        return Err(Error::config("seeds", "must be positive"));
    }
    let scenario = common.load()?;
    let (sync, rows) = activation_sweep(&scenario, rates, seeds, q_tol)?;

    let fmt_opt = |x: Option<f64>| x.map_or_else(|| "inf".to_string(), |v| format!("{v:?}"));
    let sync_text = sync.map_or_else(|| "inf".to_string(), |k| k.to_string());
    std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
    write_trace_csv(
        &common.out.join("activation_sweep.csv"),
        &["rate", "median_iterations", "converged_seeds", "seeds", "sync_iterations"]
            .map(String::from),
        rows.iter().map(|r| {
            vec![
                format!("{:?}", r.rate),
                fmt_opt(r.median()),
                r.iterations.iter().filter(|x| x.is_some()).count().to_string(),
                seeds.to_string(),
                sync_text.clone(),
            ]
        }),
    )?;
    println!("rate,median_iterations,converged_seeds (synchronous PPD: {sync_text})");
    let mut all = true;
    for r in &rows {
        let conv = r.iterations.iter().filter(|x| x.is_some()).count();
        all &= conv as u64 == seeds;
        println!("{},{},{conv}/{seeds}", r.rate, fmt_opt(r.median()));
    }
    Ok(if all { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

pub fn cmd_simulate(common: &Common, compare: bool, validate: bool) -> Result<i32> {
    let scenario = common.load()?;
    if validate && scenario.config.simulation.plant != crate::sim::PlantKind::Ac {
        return Err(Error::config(
            "simulation.plant",
            "--validate-lindistflow needs the AC plant",
        ));
    }
    let strategies: Vec<Strategy> = if compare {
        Strategy::ALL.to_vec()
    } else {
        vec![scenario.config.simulation.strategy]
    };
    let results: Vec<SimulationResult> = strategies
        .par_iter()
        .map(|&s| simulate_strategy(&scenario, s))
        .collect::<Result<_>>()?;

    for r in &results {
        let dir = if compare {
            common.out.join(r.strategy.name())
        } else {
            common.out.clone()
        };
        write_results(r, &dir)?;
        let all = r.average_mismatch(|_| true).unwrap_or(f64::NAN);
        let outage = r.average_mismatch(|s| s.outage && s.headroom_kvar > 0.0);
        println!(
            "{}: mean mismatch {all:.6e}, outage mean mismatch {}",
            r.strategy.name(),
            outage.map_or_else(|| "n/a".into(), |x| format!("{x:.6e}"))
        );
    }
    if validate {
        println!("timestep,max_abs_v_ac_minus_v_lin");
        for s in &results[0].timesteps {
            println!("{},{:.6e}", s.timestep, s.lin_ac_gap.unwrap_or(f64::NAN));
        }
    }
    Ok(EXIT_OK)
}
