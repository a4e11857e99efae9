//! Finite-difference gradient checks at 64-bit for every differentiable op
//! and the full residual-attention block.

mod support;

use proptest::prelude::*;
use support::gradcases::{cases, TOLERANCE};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn every_op_matches_central_differences(seed in any::<u64>()) {
        for case in cases() {
            let err = (case.run)(seed).map_err(|e| TestCaseError::fail(format!("{}: {e}", case.name)))?;
            prop_assert!(err < TOLERANCE, "{}: relative error {err:e} (seed {seed})", case.name);
        }
    }
}
