use super::{OperatingCondition, VoltageProfile};
use crate::bbus::BbusMatrix;
use crate::error::{Error, Result};
use crate::feeder::FeederModel;

/// Solve `B v = q + w`.
pub fn lindistflow_voltage(
    b: &BbusMatrix,
    q: &[f64],
    w: &OperatingCondition,
) -> Result<VoltageProfile> {
    let n = b.n();
    check_len("reactive injection", n, q.len())?;
    check_len("operating condition", n, w.len())?;
    let rhs: Vec<f64> = q.iter().zip(w.as_slice()).map(|(a, c)| a + c).collect();
    Ok(VoltageProfile(b.solve(&rhs)))
}

/// Operating-condition vector of a radial feeder with active injections `p`
/// and no controllable VAR, from the lossless LinDistFlow flows:
///
/// `w_j = v0/x_0j [j next to root] - (r/x)_ij P_ij + sum_k (r/x)_jk P_jk`
///
/// where `P_ij` is the active flow into `j` from its parent `i`.
pub fn build_operating_vector(
    model: &FeederModel,
    p: &[f64],
    v0: f64,
) -> Result<OperatingCondition> {
    let tree = model.tree()?;
    let n = model.n_controllable();
    check_len("active injection", n, p.len())?;

    // flow[j]: active power entering bus j from its parent
    let mut flow = vec![0.0; model.n_buses()];
    for &bus in tree.order().iter().rev() {
        if bus == 0 {
            continue;
        }
        let downstream: f64 = tree.children(bus).iter().map(|&c| flow[c]).sum();
        flow[bus] = downstream - p[bus - 1];
    }

    let lines = model.lines();
    let mut w = vec![0.0; n];
    for bus in 1..model.n_buses() {
        let up = &lines[tree.parent_line(bus).expect("non-root has a parent")];
        let mut wj = -(up.r / up.x) * flow[bus];
        if tree.parent(bus) == Some(0) {
            wj += v0 / up.x;
        }
        for &child in tree.children(bus) {
            let down = &lines[tree.parent_line(child).expect("child has a parent")];
            wj += (down.r / down.x) * flow[child];
        }
        w[bus - 1] = wj;
    }
    Ok(OperatingCondition(w))
}

/// As [`build_operating_vector`], with an additional uncontrolled reactive
/// injection (e.g. `-q_load`) folded into `w`.
pub fn build_operating_vector_with_reactive(
    model: &FeederModel,
    p: &[f64],
    q_fixed: &[f64],
    v0: f64,
) -> Result<OperatingCondition> {
    check_len("fixed reactive injection", p.len(), q_fixed.len())?;
    let mut w = build_operating_vector(model, p, v0)?;
    for (wj, qf) in w.0.iter_mut().zip(q_fixed) {
        *wj += qf;
    }
    Ok(w)
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}
