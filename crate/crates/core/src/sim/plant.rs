use std::sync::Arc;

use crate::bbus::BbusMatrix;
use crate::error::Result;
use crate::feeder::FeederModel;
use crate::flow::{ac_power_flow, lindistflow_voltage, Injection, OperatingCondition, VoltageProfile};

/// The physical system the controller acts on: given the controllable VAR
/// setting, return the resulting bus voltages.
pub trait Plant {
    fn measure(&mut self, q: &[f64]) -> Result<VoltageProfile>;
}

/// LinDistFlow plant `v = X (q + w)`.
#[derive(Debug, Clone)]
pub struct LinearPlant {
    bbus: Arc<BbusMatrix>,
    w: OperatingCondition,
}

impl LinearPlant {
    pub fn new(bbus: Arc<BbusMatrix>, w: OperatingCondition) -> Self {
        Self { bbus, w }
    }

    pub fn set_w(&mut self, w: OperatingCondition) {
        self.w = w;
    }

    pub fn w(&self) -> &OperatingCondition {
        &self.w
    }
}

impl Plant for LinearPlant {
    fn measure(&mut self, q: &[f64]) -> Result<VoltageProfile> {
        lindistflow_voltage(&self.bbus, q, &self.w)
    }
}

/// AC plant with constant-power loads: net active injection `p` and an
/// uncontrolled reactive injection added to the controller's `q`.
#[derive(Debug, Clone)]
pub struct AcPlant {
    model: Arc<FeederModel>,
    p: Vec<f64>,
    q_fixed: Vec<f64>,
}

impl AcPlant {
    pub fn new(model: Arc<FeederModel>, p: Vec<f64>, q_fixed: Vec<f64>) -> Self {
        Self { model, p, q_fixed }
    }

    pub fn set_loading(&mut self, p: Vec<f64>, q_fixed: Vec<f64>) {
        self.p = p;
        self.q_fixed = q_fixed;
    }
}

impl Plant for AcPlant {
    fn measure(&mut self, q: &[f64]) -> Result<VoltageProfile> {
        let q_total = q.iter().zip(&self.q_fixed).map(|(a, b)| a + b).collect();
        let inj = Injection::new(self.p.clone(), q_total)?;
        Ok(ac_power_flow(&self.model, &inj, self.model.v0())?.v)
    }
}
