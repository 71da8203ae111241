//! Online asynchronous HVC: per-bus agents exchanging messages over an
//! unreliable network while acting on a physical plant.

mod agent;
mod comm;
mod plant;

use serde::{Deserialize, Serialize};

pub use agent::{AgentState, AsyncController, Feedback, NeighborCache, RoundOutcome, Strategy};
pub use comm::{activation_draw, AllBuses, CommModel, DelayModel, OutageScope, OutageWindow};
pub use plant::{AcPlant, LinearPlant, Plant};

use crate::error::{Error, Result};
use crate::feeder::{Bases, FeederModel};
use crate::flow::{lindistflow_voltage, VoltageProfile};
use crate::ppd::{ControlConfig, HvcProblem};
use crate::scenario::{Loading, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantKind {
    /// LinDistFlow `v = X (q + w)`.
    Linear,
    /// AC backward/forward sweep.
    Ac,
}

/// Reactive capability `+-sqrt(rating^2 - p_gen^2)` of an inverter, in kVAR.
pub fn var_limits_kvar(rating_kva: f64, p_gen_kw: f64) -> Result<(f64, f64)> {
    if rating_kva.is_nan() || p_gen_kw.is_nan() || rating_kva < 0.0 || p_gen_kw < 0.0 {
        return Err(Error::InvalidProblem(format!(
            "inverter rating {rating_kva} kVA and generation {p_gen_kw} kW must be nonnegative"
        )));
    }
    if p_gen_kw > rating_kva {
        return Err(Error::GenerationExceedsRating {
            p_gen: p_gen_kw,
            rating: rating_kva,
        });
    }
    let hi = (rating_kva * rating_kva - p_gen_kw * p_gen_kw).sqrt();
    Ok((-hi, hi))
}

/// [`var_limits_kvar`] converted to per-unit on `bases`.
pub fn var_limits_update(rating_kva: f64, p_gen_kw: f64, bases: &Bases) -> Result<(f64, f64)> {
    let (lo, hi) = var_limits_kvar(rating_kva, p_gen_kw)?;
    Ok((bases.kw_to_pu(lo), bases.kw_to_pu(hi)))
}

/// Per-bus values of one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BusRecord {
    pub v: f64,
    pub q: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: u64,
    pub timestep: usize,
    pub time_s: f64,
    /// `|v - mu|_2` of the plant voltages after this round's VAR update.
    pub mismatch_norm: f64,
    pub n_active: usize,
    #[serde(skip)]
    pub buses: Option<Vec<BusRecord>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimestepSummary {
    pub timestep: usize,
    pub mean_mismatch: f64,
    pub final_mismatch: f64,
    /// Total upper VAR capability over all buses.
    pub headroom_kvar: f64,
    /// Every round of the timestep falls inside a total outage.
    pub outage: bool,
    /// `max |v_ac - v_lin|` at the final VAR setting; AC plant only.
    pub lin_ac_gap: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FinalState {
    pub v: Vec<f64>,
    pub q: Vec<f64>,
    pub lambda: Vec<f64>,
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationResult {
    pub strategy: Strategy,
    pub seed: u64,
    #[serde(skip)]
    pub rounds: Vec<RoundRecord>,
    pub timesteps: Vec<TimestepSummary>,
    pub final_state: FinalState,
    /// The scenario as it was run.
    pub config: serde_json::Value,
}

impl SimulationResult {
    /// Mean of the per-timestep mean mismatch over timesteps selected by
    /// `keep`; `None` if nothing is selected.
    pub fn average_mismatch(&self, mut keep: impl FnMut(&TimestepSummary) -> bool) -> Option<f64> {
        let picked: Vec<f64> = self
            .timesteps
            .iter()
            .filter(|s| keep(s))
            .map(|s| s.mean_mismatch)
            .collect();
        (!picked.is_empty()).then(|| picked.iter().sum::<f64>() / picked.len() as f64)
    }
}

enum AnyPlant {
    Linear(LinearPlant),
    Ac(AcPlant),
}

impl AnyPlant {
    fn new(kind: PlantKind, scenario: &Scenario, load: &Loading) -> Self {
        match kind {
            PlantKind::Linear => {
                AnyPlant::Linear(LinearPlant::new(scenario.bbus.clone(), load.w.clone()))
            }
            PlantKind::Ac => AnyPlant::Ac(AcPlant::new(
                scenario.feeder.clone(),
                load.p_net.clone(),
                load.q_fixed.clone(),
            )),
        }
    }

    fn set_loading(&mut self, load: &Loading) {
        match self {
            AnyPlant::Linear(p) => p.set_w(load.w.clone()),
            AnyPlant::Ac(p) => p.set_loading(load.p_net.clone(), load.q_fixed.clone()),
        }
    }
}

impl Plant for AnyPlant {
    fn measure(&mut self, q: &[f64]) -> Result<VoltageProfile> {
        match self {
            AnyPlant::Linear(p) => p.measure(q),
            AnyPlant::Ac(p) => p.measure(q),
        }
    }
}

/// Run the scenario with its configured strategy.
pub fn simulate(scenario: &Scenario) -> Result<SimulationResult> {
    simulate_strategy(scenario, scenario.config.simulation.strategy)
}

/// Run the scenario under `strategy`: for every load timestep, refresh the
/// plant loading and VAR limits, then run the configured number of rounds.
pub fn simulate_strategy(scenario: &Scenario, strategy: Strategy) -> Result<SimulationResult> {
    let sim = &scenario.config.simulation;
    let n = scenario.n();
    let rounds = sim.rounds_per_timestep;

    let load0 = scenario.loading_at(0)?;
    let problem0 = scenario.problem_for(&load0)?;
    let mut plant = AnyPlant::new(sim.plant, scenario, &load0);
    let mut ctl = AsyncController::new(
        &problem0,
        scenario.control.clone(),
        scenario.comm.clone(),
        strategy,
        sim.feedback,
        sim.noise_std,
        &vec![0.0; n],
        &mut plant,
    )?;

    let mut records = Vec::with_capacity(scenario.timesteps * rounds);
    let mut summaries = Vec::with_capacity(scenario.timesteps);
    for t in 0..scenario.timesteps {
        let load = if t == 0 { load0.clone() } else { scenario.loading_at(t)? };
        if t > 0 {
            plant.set_loading(&load);
            ctl.set_condition(load.w.0.clone(), load.q_lo.clone(), load.q_hi.clone())?;
            ctl.remeasure(&mut plant)?;
        }

        let first_round = ctl.round();
        let mut sum = 0.0;
        let mut last = None;
        for r in 0..rounds {
            let out = ctl.agent_round(&mut plant)?;
            let mismatch = out.v.mismatch_norm(&scenario.mu);
            sum += mismatch;
            records.push(RoundRecord {
                round: ctl.round() - 1,
                timestep: t,
                time_s: t as f64 * sim.timestep_seconds + (r + 1) as f64 * sim.round_seconds,
                mismatch_norm: mismatch,
                n_active: out.n_active,
                buses: sim.record_buses.then(|| {
                    ctl.agents()
                        .iter()
                        .zip(out.v.as_slice())
                        .map(|(a, v)| BusRecord {
                            v: *v,
                            q: a.q,
                            lambda: a.lambda,
                        })
                        .collect()
                }),
            });
            last = Some((mismatch, out.v));
        }

        let (final_mismatch, lin_ac_gap) = match last {
            Some((m, v_plant)) => {
                let gap = match sim.plant {
                    PlantKind::Ac => {
                        let v_lin = lindistflow_voltage(&scenario.bbus, &ctl.q(), &load.w)?;
                        Some(max_abs_diff(v_plant.as_slice(), v_lin.as_slice()))
                    }
                    PlantKind::Linear => None,
                };
                (m, gap)
            }
            None => (f64::NAN, None),
        };
        summaries.push(TimestepSummary {
            timestep: t,
            mean_mismatch: if rounds > 0 { sum / rounds as f64 } else { f64::NAN },
            final_mismatch,
            headroom_kvar: load.headroom_kvar,
            outage: rounds > 0
                && (first_round..first_round + rounds as u64).all(|k| scenario.comm.total_outage(k)),
            lin_ac_gap,
        });
    }

    let agents = ctl.agents();
    Ok(SimulationResult {
        strategy,
        seed: scenario.comm.seed,
        rounds: records,
        timesteps: summaries,
        final_state: FinalState {
            v: agents.iter().map(|a| a.v).collect(),
            q: agents.iter().map(|a| a.q).collect(),
            lambda: agents.iter().map(|a| a.lambda).collect(),
            w: agents.iter().map(|a| a.w).collect(),
        },
        config: serde_json::to_value(scenario.config.with_strategy(strategy))?,
    })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

/// Run asynchronous HVC on a static problem with a linear plant and return the first round after which
/// `|q - q_star|_inf <= tol`, or `None` if that does not happen within
/// `budget` rounds.
pub fn iterations_to_tolerance(
    problem: &HvcProblem,
    control: &ControlConfig,
    comm: &CommModel,
    feedback: Feedback,
    q_star: &[f64],
    tol: f64,
    budget: u64,
) -> Result<Option<u64>> {
    let mut plant = LinearPlant::new(problem.bbus_arc().clone(), problem.w().clone());
    let mut ctl = AsyncController::new(
        problem,
        control.clone(),
        comm.clone(),
        Strategy::Hvc,
        feedback,
        0.0,
        &vec![0.0; problem.n()],
        &mut plant,
    )?;
    let close = |ctl: &AsyncController| {
        ctl.agents()
            .iter()
            .zip(q_star)
            .all(|(a, qs)| (a.q - qs).abs() <= tol)
    };
    if close(&ctl) {
        return Ok(Some(0));
    }
    while ctl.round() < budget {
        ctl.agent_round(&mut plant)?;
        if close(&ctl) {
            return Ok(Some(ctl.round()));
        }
    }
    Ok(None)
}

/// Feeder bus ids covered by an outage scope, checked against `model`.
pub fn validate_outage_buses(comm: &CommModel, model: &FeederModel) -> Result<()> {
    for w in &comm.outages {
        if let OutageScope::Buses(b) = &w.buses {
            if let Some(&bad) = b.iter().find(|&&id| id == 0 || id >= model.n_buses()) {
                return Err(Error::config(
                    "comm.outages",
                    format!("bus {bad} is not a controllable bus of the feeder"),
                ));
            }
        }
    }
    Ok(())
}
