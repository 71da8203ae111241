use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::comm::{activation_draw, CommModel};
use super::plant::Plant;
use crate::bbus::BbusMatrix;
use crate::error::{Error, Result};
use crate::flow::VoltageProfile;
use crate::ppd::{lambda_update, q_update, v_update, ControlConfig, HvcProblem, PpdState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Hybrid control: every bus keeps updating its VAR from the local
    /// measurement, active or not.
    Hvc,
    /// Purely distributed: an inactive bus freezes its VAR as well.
    DistributedOnly,
    /// No VAR support, `q = 0`.
    NoControl,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Hvc, Strategy::DistributedOnly, Strategy::NoControl];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Hvc => "hvc",
            Strategy::DistributedOnly => "distributed-only",
            Strategy::NoControl => "no-control",
        }
    }
}

/// Where an active bus takes `w_j` from before its multiplier update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feedback {
    /// `w_j = sum_i B_ji v~_i - q_j` from its own and its neighbors'
    /// voltage measurements.
    Measured,
    /// The model operating condition, fixed within a timestep.
    Model,
}

/// What bus `row` last heard from a neighbor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborCache {
    pub row: usize,
    pub lambda: f64,
    pub lambda_stamp: u64,
    pub v: f64,
    pub v_meas: f64,
    pub state_stamp: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    /// Feeder bus id.
    pub bus: usize,
    pub v: f64,
    pub q: f64,
    pub lambda: f64,
    pub w: f64,
    /// Latest local voltage measurement.
    pub v_meas: f64,
    pub active: bool,
    /// One entry per neighbor, ascending row.
    pub cache: Vec<NeighborCache>,
}

impl AgentState {
    pub fn cached(&self, row: usize) -> &NeighborCache {
        let pos = self
            .cache
            .binary_search_by_key(&row, |c| c.row)
            .expect("neighbor cache covers every neighbor");
        &self.cache[pos]
    }

    fn cached_mut(&mut self, row: usize) -> &mut NeighborCache {
        let pos = self
            .cache
            .binary_search_by_key(&row, |c| c.row)
            .expect("neighbor cache covers every neighbor");
        &mut self.cache[pos]
    }
}

#[derive(Debug, Clone, Copy)]
enum Payload {
    Lambda(f64),
    State { v: f64, v_meas: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    due: u64,
    to: usize,
    from: usize,
    stamp: u64,
    payload: Payload,
}

/// Result of one round.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    /// Plant voltages after the new VAR setting was applied (noise free).
    pub v: VoltageProfile,
    pub n_active: usize,
}

/// The agents of every bus plus the communication layer between them.
#[derive(Debug, Clone)]
pub struct AsyncController {
    bbus: Arc<BbusMatrix>,
    mu: Vec<f64>,
    gamma: f64,
    control: ControlConfig,
    strategy: Strategy,
    feedback: Feedback,
    comm: CommModel,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    agents: Vec<AgentState>,
    q_lo: Vec<f64>,
    q_hi: Vec<f64>,
    w_model: Vec<f64>,
    round: u64,
    pending: Vec<Pending>,
}

impl AsyncController {
    /// Start from `lambda = 0`, `v = mu`, `w` from the problem and `q0`
    /// clamped into the box (zero under no-control), then take an initial
    /// measurement. Every cache starts out with its neighbor's true values.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        problem: &HvcProblem,
        control: ControlConfig,
        comm: CommModel,
        strategy: Strategy,
        feedback: Feedback,
        noise_std: f64,
        q0: &[f64],
        plant: &mut dyn Plant,
    ) -> Result<Self> {
        control.validate()?;
        comm.validate()?;
        let n = problem.n();
        if q0.len() != n {
            return Err(Error::DimensionMismatch {
                what: "initial VAR setting",
                expected: n,
                got: q0.len(),
            });
        }
        let noise = if noise_std > 0.0 {
            Some(Normal::new(0.0, noise_std).map_err(|e| Error::config("noise_std", e.to_string()))?)
        } else if noise_std == 0.0 {
            None
        } else {
            return Err(Error::config("noise_std", format!("must be nonnegative, got {noise_std}")));
        };

        let bbus = problem.bbus_arc().clone();
        let agents = (0..n)
            .map(|j| AgentState {
                bus: bbus.bus_ids()[j],
                v: problem.mu()[j],
                q: match strategy {
                    Strategy::NoControl => 0.0,
                    _ => q0[j].clamp(problem.q_lo()[j], problem.q_hi()[j]),
                },
                lambda: 0.0,
                w: problem.w().as_slice()[j],
                v_meas: 0.0,
                active: false,
                cache: Vec::new(),
            })
            .collect();
        let mut ctl = Self {
            rng: ChaCha8Rng::seed_from_u64(comm.seed),
            bbus,
            mu: problem.mu().to_vec(),
            gamma: problem.gamma(),
            control,
            strategy,
            feedback,
            comm,
            noise,
            agents,
            q_lo: problem.q_lo().to_vec(),
            q_hi: problem.q_hi().to_vec(),
            w_model: problem.w().as_slice().to_vec(),
            round: 0,
            pending: Vec::new(),
        };
        ctl.remeasure(plant)?;
        for j in 0..n {
            let cache = ctl
                .bbus
                .neighbors(j)
                .map(|i| {
                    let a = &ctl.agents[i];
                    NeighborCache {
                        row: i,
                        lambda: a.lambda,
                        lambda_stamp: 0,
                        v: a.v,
                        v_meas: a.v_meas,
                        state_stamp: 0,
                    }
                })
                .collect();
            ctl.agents[j].cache = cache;
        }
        Ok(ctl)
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn q(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.q).collect()
    }

    /// Current `(v, q, lambda)` of all agents as a solver state.
    pub fn state(&self) -> PpdState {
        PpdState {
            v: self.agents.iter().map(|a| a.v).collect(),
            q: self.q(),
            lambda: self.agents.iter().map(|a| a.lambda).collect(),
            k: self.round,
        }
    }

    /// New loading: model operating condition and VAR limits. VAR outputs
    /// outside the new limits are clipped by the inverters.
    pub fn set_condition(&mut self, w_model: Vec<f64>, q_lo: Vec<f64>, q_hi: Vec<f64>) -> Result<()> {
        let n = self.agents.len();
        for (what, len) in [("operating condition", w_model.len()), ("lower VAR limit", q_lo.len()), ("upper VAR limit", q_hi.len())] {
            if len != n {
                return Err(Error::DimensionMismatch { what, expected: n, got: len });
            }
        }
        for (a, (lo, hi)) in self.agents.iter_mut().zip(q_lo.iter().zip(&q_hi)) {
            a.q = a.q.clamp(*lo, *hi);
        }
        self.w_model = w_model;
        self.q_lo = q_lo;
        self.q_hi = q_hi;
        Ok(())
    }

    /// Measure the plant at the current VAR setting. Returns the noise-free
    /// voltages; agents see them with measurement noise added.
    pub fn remeasure(&mut self, plant: &mut dyn Plant) -> Result<VoltageProfile> {
        let q = self.q();
        let v = plant.measure(&q)?;
        for (a, vj) in self.agents.iter_mut().zip(v.as_slice()) {
            a.v_meas = match &self.noise {
                Some(d) => vj + d.sample(&mut self.rng),
                None => *vj,
            };
        }
        Ok(v)
    }

    /// One round of the asynchronous protocol.
    ///
    /// Phase 1: active buses exchange multipliers and update `v`. Every bus
    /// that is allowed to (all of them for HVC, active ones otherwise)
    /// takes a projected VAR step from its own measurement and multiplier.
    /// The plant is re-solved. Phase 2: active buses exchange `(v, v~)`,
    /// refresh `w` and update their multiplier. Inactive buses keep
    /// `v`, `w` and `lambda`.
    pub fn agent_round(&mut self, plant: &mut dyn Plant) -> Result<RoundOutcome> {
        let k = self.round;
        let n = self.agents.len();

        if self.strategy == Strategy::NoControl {
            for a in &mut self.agents {
                a.active = false;
                a.q = 0.0;
            }
            let v = self.remeasure(plant)?;
            self.round += 1;
            return Ok(RoundOutcome { v, n_active: 0 });
        }

        let draws = activation_draw(&mut self.rng, self.comm.activation_prob, n);
        let mut n_active = 0;
        for (a, d) in self.agents.iter_mut().zip(draws) {
            a.active = d && !self.comm.in_outage(k, a.bus);
            n_active += a.active as usize;
        }

        // phase 1
        self.deliver(k, true);
        self.broadcast(k, |a| Payload::Lambda(a.lambda));
        let theta = self.control.theta;
        let new_v: Vec<Option<f64>> = (0..n)
            .map(|j| {
                let a = &self.agents[j];
                a.active.then(|| {
                    let bl = self.bbus.row_dot_with(j, |i| {
                        if i == j {
                            a.lambda
                        } else {
                            a.cached(i).lambda
                        }
                    });
                    v_update(bl, self.mu[j], theta, a.v)
                })
            })
            .collect();
        for (a, v) in self.agents.iter_mut().zip(new_v) {
            if let Some(v) = v {
                a.v = v;
            }
        }

        for j in 0..n {
            let a = &mut self.agents[j];
            if self.strategy == Strategy::Hvc || a.active {
                a.q = q_update(
                    a.q,
                    a.v_meas,
                    self.mu[j],
                    a.lambda,
                    self.control.alpha,
                    self.gamma,
                    self.q_lo[j],
                    self.q_hi[j],
                );
            }
        }
        let v = self.remeasure(plant)?;

        // phase 2
        self.deliver(k, false);
        self.broadcast(k, |a| Payload::State {
            v: a.v,
            v_meas: a.v_meas,
        });
        for j in 0..n {
            let a = &self.agents[j];
            if !a.active {
                continue;
            }
            let w = match self.feedback {
                Feedback::Measured => {
                    self.bbus.row_dot_with(j, |i| {
                        if i == j {
                            a.v_meas
                        } else {
                            a.cached(i).v_meas
                        }
                    }) - a.q
                }
                Feedback::Model => self.w_model[j],
            };
            let bv = self
                .bbus
                .row_dot_with(j, |i| if i == j { a.v } else { a.cached(i).v });
            let lambda = lambda_update(a.lambda, self.control.beta, bv, a.q, w);
            let a = &mut self.agents[j];
            a.w = w;
            a.lambda = lambda;
        }

        self.round += 1;
        if self
            .agents
            .iter()
            .any(|a| !(a.v.is_finite() && a.q.is_finite() && a.lambda.is_finite() && a.w.is_finite()))
        {
            return Err(Error::NonFinite("agent state"));
        }
        Ok(RoundOutcome { v, n_active })
    }

    /// Send `payload(sender)` over every usable link. A link is usable when
    /// both ends are active this round.
    fn broadcast(&mut self, k: u64, payload: impl Fn(&AgentState) -> Payload) {
        let n = self.agents.len();
        for j in 0..n {
            if !self.agents[j].active {
                continue;
            }
            let msg = payload(&self.agents[j]);
            let receivers: Vec<usize> = self.bbus.neighbors(j).collect();
            for i in receivers {
                if !self.agents[i].active {
                    continue;
                }
                let delay = match &self.comm.delay {
                    Some(d) if self.rng.random::<f64>() < d.prob => {
                        Some(self.rng.random_range(1..=d.max_rounds) as u64)
                    }
                    _ => None,
                };
                match delay {
                    None => self.receive(i, j, k, msg),
                    Some(d) => {
                        if self.comm.delay.as_ref().is_some_and(|m| m.queue) {
                            self.pending.push(Pending {
                                due: k + d,
                                to: i,
                                from: j,
                                stamp: k,
                                payload: msg,
                            });
                        }
                    }
                }
            }
        }
    }

    /// Hand over queued messages of the given phase that are due by `k`.
    fn deliver(&mut self, k: u64, lambda_phase: bool) {
        if self.pending.is_empty() {
            return;
        }
        let mut keep = Vec::with_capacity(self.pending.len());
        for m in std::mem::take(&mut self.pending) {
            let is_lambda = matches!(m.payload, Payload::Lambda(_));
            if m.due <= k && is_lambda == lambda_phase {
                self.receive(m.to, m.from, m.stamp, m.payload);
            } else {
                keep.push(m);
            }
        }
        self.pending = keep;
    }

    /// Store a message unless the cache already holds something newer.
    fn receive(&mut self, to: usize, from: usize, stamp: u64, payload: Payload) {
        let c = self.agents[to].cached_mut(from);
        match payload {
            Payload::Lambda(l) => {
                if stamp >= c.lambda_stamp {
                    c.lambda = l;
                    c.lambda_stamp = stamp;
                }
            }
            Payload::State { v, v_meas } => {
                if stamp >= c.state_stamp {
                    c.v = v;
                    c.v_meas = v_meas;
                    c.state_stamp = stamp;
                }
            }
        }
    }
}
