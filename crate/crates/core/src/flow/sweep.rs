use num_complex::Complex64;

use super::{Injection, VoltageProfile};
use crate::error::{Error, Result};
use crate::feeder::FeederModel;

/// Stop when no bus voltage moves by more than this between sweeps.
pub const SWEEP_TOL: f64 = 1e-12;
/// Maximum number of backward/forward sweeps.
pub const SWEEP_BUDGET: usize = 200;

#[derive(Debug, Clone)]
pub struct AcSolution {
    /// Voltage magnitudes at the non-root buses.
    pub v: VoltageProfile,
    /// Complex voltages at the non-root buses.
    pub phasors: Vec<Complex64>,
    /// Complex power delivered by the substation into the feeder.
    pub root_power: Complex64,
    /// Total series losses.
    pub losses: Complex64,
    pub sweeps: usize,
    /// Largest complex power mismatch at any bus.
    pub max_mismatch: f64,
}

impl AcSolution {
    /// `root_power + sum(injections) - losses`; zero at an exact solution.
    pub fn balance_residual(&self, inj: &Injection) -> f64 {
        let injected: Complex64 = inj
            .p
            .iter()
            .zip(&inj.q)
            .map(|(p, q)| Complex64::new(*p, *q))
            .sum();
        (self.root_power + injected - self.losses).norm()
    }
}

/// Constant-power AC power flow on a radial feeder by backward/forward sweep.
pub fn ac_power_flow(model: &FeederModel, inj: &Injection, v0: f64) -> Result<AcSolution> {
    let tree = model.tree()?;
    let n = model.n_controllable();
    if inj.len() != n {
        return Err(Error::DimensionMismatch {
            what: "injection",
            expected: n,
            got: inj.len(),
        });
    }
    let nb = model.n_buses();
    let lines = model.lines();
    let z: Vec<Complex64> = (0..nb)
        .map(|bus| match tree.parent_line(bus) {
            Some(l) => Complex64::new(lines[l].r, lines[l].x),
            None => Complex64::new(0.0, 0.0),
        })
        .collect();
    let s: Vec<Complex64> = (0..nb)
        .map(|bus| {
            if bus == 0 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(inj.p[bus - 1], inj.q[bus - 1])
            }
        })
        .collect();

    let root = Complex64::new(v0, 0.0);
    let mut volt = vec![root; nb];
    // branch[j]: current flowing from parent(j) into j
    let mut branch = vec![Complex64::new(0.0, 0.0); nb];
    let mut sweeps = 0;
    let mut delta = f64::INFINITY;

    while sweeps < SWEEP_BUDGET {
        sweeps += 1;
        for &bus in tree.order().iter().rev() {
            if bus == 0 {
                continue;
            }
            let injected = (s[bus] / volt[bus]).conj();
            let downstream: Complex64 = tree.children(bus).iter().map(|&c| branch[c]).sum();
            branch[bus] = downstream - injected;
        }
        delta = 0.0;
        for &bus in tree.order() {
            let Some(parent) = tree.parent(bus) else {
                continue;
            };
            let next = volt[parent] - z[bus] * branch[bus];
            delta = f64::max(delta, (next - volt[bus]).norm());
            volt[bus] = next;
        }
        if !delta.is_finite() || volt.iter().any(|v| !v.re.is_finite() || v.norm() < 1e-6) {
            return Err(Error::PowerFlowNonConvergence {
                sweeps,
                last_delta: delta,
            });
        }
        if delta < SWEEP_TOL {
            break;
        }
    }
    if delta >= SWEEP_TOL {
        return Err(Error::PowerFlowNonConvergence {
            sweeps,
            last_delta: delta,
        });
    }

    // recompute currents at the final voltages
    for &bus in tree.order().iter().rev() {
        if bus == 0 {
            continue;
        }
        let injected = (s[bus] / volt[bus]).conj();
        let downstream: Complex64 = tree.children(bus).iter().map(|&c| branch[c]).sum();
        branch[bus] = downstream - injected;
    }

    let mut max_mismatch: f64 = 0.0;
    for bus in 1..nb {
        let out: Complex64 = tree.children(bus).iter().map(|&c| branch[c]).sum::<Complex64>()
            - branch[bus];
        let s_calc = volt[bus] * out.conj();
        max_mismatch = max_mismatch.max((s_calc - s[bus]).norm());
    }
    let root_out: Complex64 = tree.children(0).iter().map(|&c| branch[c]).sum();
    let root_power = root * root_out.conj();
    let losses: Complex64 = (1..nb).map(|b| z[b] * branch[b].norm_sqr()).sum();

    let phasors = volt[1..].to_vec();
    Ok(AcSolution {
        v: VoltageProfile(phasors.iter().map(|v| v.norm()).collect()),
        phasors,
        root_power,
        losses,
        sweeps,
        max_mismatch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn no_load_is_flat() {
        let m = FeederModel::chain(5, 0.02, 0.05, 1.03).unwrap();
        let sol = ac_power_flow(&m, &Injection::zeros(5), 1.03).unwrap();
        for v in sol.v.as_slice() {
            assert_eq!(*v, 1.03);
        }
    }

    #[test]
    fn two_bus_reactive_load_closed_form() {
        let m = FeederModel::chain(1, 0.0, 0.1, 1.0).unwrap();
        let inj = Injection::new(vec![0.0], vec![-0.1]).unwrap();
        let sol = ac_power_flow(&m, &inj, 1.0).unwrap();
        // V^2 - V + 0.01 = 0
        let expect = (1.0 + 0.96f64.sqrt()) / 2.0;
        assert_abs_diff_eq!(sol.v.0[0], expect, epsilon = 1e-10);
        assert!(sol.max_mismatch < 1e-10);
    }

    #[test]
    fn losses_depress_voltage_below_linear() {
        let m = FeederModel::chain(1, 0.05, 0.1, 1.0).unwrap();
        let inj = Injection::new(vec![-0.2], vec![0.0]).unwrap();
        let sol = ac_power_flow(&m, &inj, 1.0).unwrap();
        let v = sol.v.0[0];
        assert!((0.9890..=0.9900).contains(&v), "{v}");
        assert!(v < 0.99);
        assert!(sol.balance_residual(&inj) < 1e-9);
    }

    #[test]
    fn collapse_reported() {
        let m = FeederModel::chain(1, 0.1, 0.5, 1.0).unwrap();
        let inj = Injection::new(vec![-5.0], vec![-5.0]).unwrap();
        assert!(matches!(
            ac_power_flow(&m, &inj, 1.0),
            Err(Error::PowerFlowNonConvergence { .. })
        ));
    }
}
