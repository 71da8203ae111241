mod common;

use gridvolt::bbus::build_bbus;
use gridvolt::feeder::FeederModel;
use gridvolt::flow::{
    ac_power_flow, build_operating_vector_with_reactive, lindistflow_voltage, Injection,
};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{inf_dist, random_feeder};

/// LinDistFlow by walking the tree: `v_j = v_parent - (r P + x Q)` with
/// `(P, Q)` the flow into `j`, i.e. minus the injections below it.
fn recursive_lindistflow(feeder: &FeederModel, p: &[f64], q: &[f64]) -> Vec<f64> {
    let n = feeder.n_controllable();
    let mut parent = vec![None; n + 1];
    for l in feeder.lines() {
        parent[l.to] = Some((l.from, l.r, l.x));
    }
    let mut flow_p = vec![0.0; n + 1];
    let mut flow_q = vec![0.0; n + 1];
    // children carry larger ids in the generated trees
    for j in (1..=n).rev() {
        flow_p[j] -= p[j - 1];
        flow_q[j] -= q[j - 1];
        let (i, _, _) = parent[j].unwrap();
        flow_p[i] += flow_p[j];
        flow_q[i] += flow_q[j];
    }
    let mut v = vec![feeder.v0(); n + 1];
    for j in 1..=n {
        let (i, r, x) = parent[j].unwrap();
        v[j] = v[i] - (r * flow_p[j] + x * flow_q[j]);
    }
    v[1..].to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linear_solve_residual(
        seed in any::<u64>(),
        n in 1usize..=20,
        p in proptest::collection::vec(-0.05f64..0.05, 20),
        q in proptest::collection::vec(-0.05f64..0.05, 20),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feeder = random_feeder(&mut rng, n);
        let b = build_bbus(&feeder).unwrap();
        let w = build_operating_vector_with_reactive(&feeder, &p[..n], &vec![0.0; n], 1.0).unwrap();
        let v = lindistflow_voltage(&b, &q[..n], &w).unwrap();
        let bv = b.mul(v.as_slice());
        let res = (0..n).fold(0.0f64, |m, j| m.max((bv[j] - q[j] - w.0[j]).abs()));
        prop_assert!(res < 1e-10, "residual {res:e}");
    }

    #[test]
    fn operating_vector_matches_tree_walk(
        seed in any::<u64>(),
        n in 1usize..=20,
        p in proptest::collection::vec(-0.05f64..0.05, 20),
        qf in proptest::collection::vec(-0.05f64..0.05, 20),
        q in proptest::collection::vec(-0.05f64..0.05, 20),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feeder = random_feeder(&mut rng, n);
        let b = build_bbus(&feeder).unwrap();
        let w = build_operating_vector_with_reactive(&feeder, &p[..n], &qf[..n], 1.0).unwrap();
        let v = lindistflow_voltage(&b, &q[..n], &w).unwrap();
        let q_total: Vec<f64> = (0..n).map(|j| q[j] + qf[j]).collect();
        let oracle = recursive_lindistflow(&feeder, &p[..n], &q_total);
        prop_assert!(inf_dist(v.as_slice(), &oracle) <= 1e-10);
    }

    #[test]
    fn ac_solution_satisfies_kirchhoff(
        seed in any::<u64>(),
        n in 1usize..=20,
        p in proptest::collection::vec(-0.01f64..0.005, 20),
        q in proptest::collection::vec(-0.01f64..0.005, 20),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feeder = random_feeder(&mut rng, n);
        let inj = Injection::new(p[..n].to_vec(), q[..n].to_vec()).unwrap();
        let ac = ac_power_flow(&feeder, &inj, 1.0).unwrap();

        let volt = |bus: usize| {
            if bus == 0 { Complex64::new(feeder.v0(), 0.0) } else { ac.phasors[bus - 1] }
        };
        let mut net_out = vec![Complex64::new(0.0, 0.0); n + 1];
        let mut losses = Complex64::new(0.0, 0.0);
        for l in feeder.lines() {
            let z = Complex64::new(l.r, l.x);
            let i = (volt(l.from) - volt(l.to)) / z;
            net_out[l.from] += i;
            net_out[l.to] -= i;
            losses += z * i.norm_sqr();
        }
        let mut worst = 0.0f64;
        for j in 1..=n {
            let s = volt(j) * net_out[j].conj();
            worst = worst.max((s - Complex64::new(p[j - 1], q[j - 1])).norm());
        }
        prop_assert!(worst <= 1e-9, "bus power mismatch {worst:e}");

        let root = volt(0) * net_out[0].conj();
        let injected: Complex64 = (0..n).map(|j| Complex64::new(p[j], q[j])).sum();
        let balance = (root + injected - losses).norm();
        prop_assert!(balance <= 1e-9, "balance {balance:e}");
        prop_assert!((root - ac.root_power).norm() <= 1e-9);
        prop_assert!((losses - ac.losses).norm() <= 1e-9);
        prop_assert!(ac.balance_residual(&inj) <= 1e-9);

        for (v, ph) in ac.v.as_slice().iter().zip(&ac.phasors) {
            prop_assert!((v - ph.norm()).abs() <= 1e-12);
        }
    }
}
