#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use gridvolt::bbus::{build_bbus, BbusMatrix};
use gridvolt::feeder::{BusSpec, FeederModel, FeederSpec, LineSpec};
use gridvolt::flow::build_operating_vector_with_reactive;
use gridvolt::ppd::{reference_qp_solve, HvcProblem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// Random radial feeder with `n` controllable buses: bus `j` hangs off a
/// uniformly chosen earlier bus.
pub fn random_feeder(rng: &mut impl Rng, n: usize) -> FeederModel {
    let spec = FeederSpec {
        buses: (0..=n).map(|id| BusSpec { id }).collect(),
        lines: (1..=n)
            .map(|j| LineSpec {
                from: rng.random_range(0..j),
                to: j,
                r_ohm: None,
                r_pu: Some(rng.random_range(0.005..0.05)),
                x_ohm: None,
                x_pu: Some(rng.random_range(0.01..0.05)),
            })
            .collect(),
        v0_pu: 1.0,
        bases: None,
    };
    FeederModel::from_spec(&spec).expect("random tree is a valid feeder")
}

/// A random instance together with its feeder.
pub struct Instance {
    pub feeder: FeederModel,
    pub bbus: Arc<BbusMatrix>,
    pub problem: HvcProblem,
}

/// Random static problem on a random tree with up to `max_n` controllable
/// buses. Loads are mixed consumption and generation. When `binding` is
/// set, the VAR boxes are drawn narrower than the flat-voltage setting
/// `B mu - w` on every bus, and the instance is redrawn until the optimum
/// sits on at least one bound.
pub fn random_instance(seed: u64, max_n: usize, binding: bool) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let n = rng.random_range(2..=max_n);
        let feeder = random_feeder(&mut rng, n);
        let bbus = Arc::new(build_bbus(&feeder).unwrap());
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-0.03..0.02)).collect();
        let qf: Vec<f64> = (0..n).map(|_| rng.random_range(-0.01..0.005)).collect();
        let w = build_operating_vector_with_reactive(&feeder, &p, &qf, 1.0).unwrap();
        let mu = vec![1.0; n];
        let gamma = rng.random_range(0.05..2.0);
        let (lo, hi): (Vec<f64>, Vec<f64>) = if binding {
            let flat: Vec<f64> = bbus
                .mul(&mu)
                .iter()
                .zip(w.as_slice())
                .map(|(a, b)| a - b)
                .collect();
            flat.iter()
                .map(|f| {
                    let c = f.abs() * rng.random_range(0.1..0.9);
                    (-c, c)
                })
                .unzip()
        } else {
            (vec![-1e3; n], vec![1e3; n])
        };
        let problem = HvcProblem::new(bbus.clone(), w, mu, gamma, lo, hi).unwrap();
        if binding {
            let r = reference_qp_solve(&problem).unwrap();
            let on_bound = r
                .q
                .iter()
                .zip(problem.q_lo().iter().zip(problem.q_hi()))
                .any(|(q, (l, h))| q == l || q == h);
            if !on_bound {
                continue;
            }
        }
        return Instance {
            feeder,
            bbus,
            problem,
        };
    }
}

pub fn inf_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}
