//! Power-flow engines: the linearized LinDistFlow map `B v = q + w` and an
//! exact AC backward/forward sweep used as the physical plant.

mod lindist;
mod sweep;

pub use lindist::{
    build_operating_vector, build_operating_vector_with_reactive, lindistflow_voltage,
};
pub use sweep::{ac_power_flow, AcSolution, SWEEP_BUDGET, SWEEP_TOL};

use crate::error::{Error, Result};

/// Per-unit injections at the non-root buses (row order of the Bbus matrix).
/// Loads are negative.
#[derive(Debug, Clone, PartialEq)]
pub struct Injection {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl Injection {
    pub fn new(p: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        if p.len() != q.len() {
            return Err(Error::DimensionMismatch {
                what: "reactive injection",
                expected: p.len(),
                got: q.len(),
            });
        }
        if p.iter().chain(&q).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("injection"));
        }
        Ok(Self { p, q })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            p: vec![0.0; n],
            q: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// The vector `w` of `B v = q + w`: what the voltages would be driven by
/// with zero controllable VAR.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingCondition(pub Vec<f64>);

impl OperatingCondition {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-unit voltage magnitudes at the non-root buses.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageProfile(pub Vec<f64>);

impl VoltageProfile {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `||v - mu||_2`
    pub fn mismatch_norm(&self, mu: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(mu)
            .map(|(v, m)| (v - m) * (v - m))
            .sum::<f64>()
            .sqrt()
    }

    /// Every entry inside the (0, 2) sanity band.
    pub fn is_plausible(&self) -> bool {
        self.0.iter().all(|v| *v > 0.0 && *v < 2.0)
    }
}
