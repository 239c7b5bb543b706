mod common;

use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn composites_are_nonzero_and_capped(seed in any::<u64>()) {
        prop_assert_eq!(common::composites_respect_cap(seed), Ok(()));
    }

    #[test]
    fn spatial_maps_match_box_areas(seed in any::<u64>()) {
        prop_assert_eq!(common::spatial_map_matches_area(seed), Ok(()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn affordance_ratios_are_bounded(seed in any::<u64>()) {
        prop_assert_eq!(common::affordance_ratios_bounded(seed), Ok(()));
    }

    #[test]
    fn zero_shot_training_sets_do_not_leak(seed in any::<u64>()) {
        prop_assert_eq!(common::split_has_no_leakage(seed), Ok(()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn reruns_are_byte_identical(seed in any::<u64>()) {
        prop_assert_eq!(common::same_seed_is_byte_identical(seed), Ok(()));
    }
}
