mod support;

use proptest::prelude::*;
use support::oracles::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn grouped_conv_matches_loops_and_block_diagonal(seed in any::<u64>(), g in prop::sample::select(vec![1usize, 2, 4])) {
        let d = grouped_conv(seed, g).unwrap();
        prop_assert!(d < 1e-12, "deviation {d:e}");
    }

    #[test]
    fn transpose_conv_is_the_adjoint(seed in any::<u64>()) {
        let d = transpose_adjoint(seed).unwrap();
        prop_assert!(d < 1e-10, "deviation {d:e}");
    }

    #[test]
    fn eval_batchnorm_is_affine(seed in any::<u64>()) {
        let d = batchnorm_affine(seed).unwrap();
        prop_assert!(d < 1e-12, "deviation {d:e}");
    }

    #[test]
    fn metrics_match_counting(seed in any::<u64>()) {
        prop_assert_eq!(metrics_counting(seed).unwrap(), 0.0);
    }
}

#[test]
fn loss_closed_forms() {
    assert!(loss_identities().unwrap() < 1e-6);
}
