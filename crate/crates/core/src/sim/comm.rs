use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Buses silenced by an outage window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OutageScope {
    All(AllBuses),
    Buses(Vec<usize>),
}

/// The literal string `"all"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllBuses {
    All,
}

impl OutageScope {
    pub fn all() -> Self {
        OutageScope::All(AllBuses::All)
    }

    pub fn is_all(&self) -> bool {
        matches!(self, OutageScope::All(_))
    }

    pub fn contains(&self, bus: usize) -> bool {
        match self {
            OutageScope::All(_) => true,
            OutageScope::Buses(b) => b.contains(&bus),
        }
    }
}

/// No bus in `scope` communicates during rounds `start_round..end_round`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutageWindow {
    pub start_round: u64,
    pub end_round: u64,
    pub buses: OutageScope,
}

impl OutageWindow {
    pub fn covers(&self, round: u64, bus: usize) -> bool {
        (self.start_round..self.end_round).contains(&round) && self.buses.contains(bus)
    }
}

/// Each message is late with probability `prob`, by a uniform 1..=max_rounds
/// rounds. Late messages are discarded unless `queue` is set, in which case
/// they are delivered when due (and ignored if something newer arrived).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayModel {
    pub prob: f64,
    pub max_rounds: u32,
    #[serde(default)]
    pub queue: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommModel {
    pub activation_prob: f64,
    pub outages: Vec<OutageWindow>,
    pub delay: Option<DelayModel>,
    pub seed: u64,
}

impl CommModel {
    /// Every bus active every round, nothing lost.
    pub fn perfect(seed: u64) -> Self {
        Self {
            activation_prob: 1.0,
            outages: Vec::new(),
            delay: None,
            seed,
        }
    }

    pub fn with_activation(mut self, prob: f64) -> Self {
        self.activation_prob = prob;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.activation_prob) {
            return Err(Error::config(
                "activation_prob",
                format!("must lie in [0, 1], got {}", self.activation_prob),
            ));
        }
        for w in &self.outages {
            if w.start_round > w.end_round {
                return Err(Error::config(
                    "outages",
                    format!("window starts at {} after it ends at {}", w.start_round, w.end_round),
                ));
            }
        }
        if let Some(d) = &self.delay {
            if !(0.0..=1.0).contains(&d.prob) {
                return Err(Error::config("delay.prob", format!("must lie in [0, 1], got {}", d.prob)));
            }
            if d.max_rounds == 0 {
                return Err(Error::config("delay.max_rounds", "must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn in_outage(&self, round: u64, bus: usize) -> bool {
        self.outages.iter().any(|w| w.covers(round, bus))
    }

    /// True when a window silencing every bus covers `round`.
    pub fn total_outage(&self, round: u64) -> bool {
        self.outages
            .iter()
            .any(|w| w.buses.is_all() && (w.start_round..w.end_round).contains(&round))
    }
}

/// Independent Bernoulli(`prob`) draws, one per bus in order. Always
/// consumes exactly `n_buses` values from `rng`.
pub fn activation_draw(rng: &mut impl Rng, prob: f64, n_buses: usize) -> Vec<bool> {
    (0..n_buses).map(|_| rng.random::<f64>() < prob).collect()
}
