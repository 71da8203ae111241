mod common;

use gridvolt::bbus::{build_bbus, kron_reduce};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{inf_dist, random_feeder};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bbus_is_spd_and_inverts(seed in any::<u64>(), n in 1usize..=20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feeder = random_feeder(&mut rng, n);
        let b = build_bbus(&feeder).unwrap();

        let eig = SymmetricEigen::new(b.matrix().clone());
        prop_assert!(eig.eigenvalues.iter().all(|&l| l > 0.0));

        let xb = b.inverse() * b.matrix();
        let err = (xb - DMatrix::<f64>::identity(n, n)).abs().max();
        prop_assert!(err <= 1e-10, "max |XB - I| = {err:e}");
    }

    #[test]
    fn row_sums_are_root_couplings(seed in any::<u64>(), n in 1usize..=20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feeder = random_feeder(&mut rng, n);
        let b = build_bbus(&feeder).unwrap();
        let sums = b.mul(&vec![1.0; n]);
        let mut expected = vec![0.0; n];
        for l in feeder.lines() {
            if l.from == 0 {
                expected[l.to - 1] += 1.0 / l.x;
            }
        }
        prop_assert!(inf_dist(&sums, &expected) <= 1e-12);
    }

    #[test]
    fn kron_reduction_preserves_kept_voltages(
        seed in any::<u64>(),
        n in 2usize..=20,
        inj in proptest::collection::vec(-0.05f64..0.05, 20),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feeder = random_feeder(&mut rng, n);
        let b = build_bbus(&feeder).unwrap();
        let k = 1 + (seed as usize % n);
        let mut keep: Vec<usize> = sample(&mut rng, n, k).into_iter().map(|i| i + 1).collect();
        keep.sort_unstable();
        let red = kron_reduce(&b, &keep).unwrap();
        prop_assert_eq!(red.bus_ids(), &keep[..]);

        // injection on kept buses plus the substation drive v0 = 1
        let mut full_rhs = b.root_coupling().to_vec();
        let mut red_rhs = red.root_coupling().to_vec();
        for (r, &bus) in keep.iter().enumerate() {
            full_rhs[bus - 1] += inj[r];
            red_rhs[r] += inj[r];
        }
        let v_full = b.solve(&full_rhs);
        let v_red = red.solve(&red_rhs);
        let v_full_kept: Vec<f64> = keep.iter().map(|&bus| v_full[bus - 1]).collect();
        prop_assert!(inf_dist(&v_full_kept, &v_red) <= 1e-10);
    }
}
