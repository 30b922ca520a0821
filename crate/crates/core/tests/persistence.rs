mod common;

use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn registry_round_trips_and_detects_corruption(seed in 0u64..1_000_000) {
        prop_assert_eq!(registry_case(seed), Ok(()));
    }

    #[test]
    fn volume_round_trips_and_detects_corruption(seed in 0u64..1_000_000) {
        prop_assert_eq!(volume_case(seed), Ok(()));
    }
}
