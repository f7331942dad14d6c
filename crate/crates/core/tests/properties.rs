//! Cross-module properties on generated inputs.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use qcmi::oraclesim::{reprogram_oracle, OracleFunction, QueryRecord};
use qcmi::qentropy::{conditional_mutual_information, von_neumann_entropy};
use qcmi::qmat::random::{random_density, random_probability_vector};
use qcmi::qmat::{purify, reduce_pure, trace_distance, SystemLayout};
use qcmi::report::{format_float, round_sig};
use qcmi::xorwalk::{inverse_wht, walk_cmi, wht, xor_convolve, XorStepDistribution};

fn layout3(da: usize, db: usize, dc: usize) -> SystemLayout {
    SystemLayout::new([("A", da), ("B", db), ("C", dc)]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ssa_and_entropy_bounds(seed in any::<u64>(), da in 2usize..4, db in 2usize..4, dc in 2usize..4) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let layout = layout3(da, db, dc);
        let rank = 1 + (seed % layout.total_dim() as u64) as usize;
        let rho = random_density(&layout, rank, &mut rng);
        let cmi = conditional_mutual_information(&rho, &["A"], &["B"], &["C"]).unwrap().value;
        prop_assert!(cmi >= -1e-9);
        // I(A:B|C) ≤ 2 log d_A
        prop_assert!(cmi <= 2.0 * (da as f64).log2() + 1e-9);
        let s_a = von_neumann_entropy(&rho, &["A"]).unwrap().value;
        prop_assert!(s_a >= -1e-12 && s_a <= (da as f64).log2() + 1e-9);
    }

    #[test]
    fn purification_reduces_back(seed in any::<u64>(), d in 2usize..5) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let rho = random_density(&SystemLayout::new([("A", d)]).unwrap(), d, &mut rng);
        let (layout, v) = purify(&rho, "P").unwrap();
        let back = reduce_pure(&layout, &v, &["A"]).unwrap();
        prop_assert!(trace_distance(&rho, &back).unwrap() < 1e-10);
        // both halves of a pure state have the same entropy
        let s_p = von_neumann_entropy(&reduce_pure(&layout, &v, &["P"]).unwrap(), &["P"]).unwrap().value;
        prop_assert!((s_p - von_neumann_entropy(&rho, &["A"]).unwrap().value).abs() < 1e-9);
    }

    #[test]
    fn wht_round_trips(v in prop::collection::vec(-10.0f64..10.0, 16)) {
        let mut w = v.clone();
        wht(&mut w);
        inverse_wht(&mut w);
        for (a, b) in v.iter().zip(&w) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn xor_convolution_matches_double_loop(seed in any::<u64>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let a = random_probability_vector(16, &mut rng);
        let b = random_probability_vector(16, &mut rng);
        let fast = xor_convolve(&a, &b).unwrap();
        let mut slow = vec![0.0; 16];
        for i in 0..16 {
            for j in 0..16 {
                slow[i ^ j] += a[i] * b[j];
            }
        }
        for (x, y) in fast.iter().zip(&slow) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn walk_cmi_is_non_negative(seed in any::<u64>(), t in 0usize..6) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let steps = XorStepDistribution::single(2, random_probability_vector(5, &mut rng)).unwrap();
        prop_assert!(walk_cmi(&steps, t) >= -1e-8);
    }

    #[test]
    fn reprogramming_is_local(n in 1usize..4, index in any::<u64>(), pairs in prop::collection::vec((0usize..8, any::<bool>()), 0..4)) {
        let h = OracleFunction::from_index(n, index % (1u64 << (1 << n))).unwrap();
        let size = h.domain_size();
        let mut r = QueryRecord::default();
        for (x, y) in pairs {
            if r.get(x % size).is_none() {
                r.insert(x % size, y).unwrap();
            }
        }
        let h2 = reprogram_oracle(&h, &r).unwrap();
        prop_assert!(r.consistent_with(&h2));
        for x in h.diff(&h2) {
            prop_assert!(r.get(x).is_some());
        }
    }

    #[test]
    fn rounding_is_idempotent(x in -1e12f64..1e12) {
        let r = round_sig(x);
        prop_assert_eq!(round_sig(r), r);
        prop_assert_eq!(format_float(x).parse::<f64>().unwrap(), r);
    }
}
