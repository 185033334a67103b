mod common;

use common::instances::{compare_stages, event_set_violations, random_instance};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn detector_stages_match_brute_force(seed in any::<u64>()) {
        let agreement = compare_stages(&random_instance(seed));
        prop_assert!(agreement.thresholds, "thresholds");
        prop_assert!(agreement.run_marking, "run marking");
        prop_assert!(agreement.count_threshold, "count threshold");
        prop_assert!(agreement.onsets, "onsets");
    }

    #[test]
    fn event_sets_keep_their_invariants(seed in any::<u64>()) {
        let bad = event_set_violations(seed);
        prop_assert!(bad.is_empty(), "{:?}", bad);
    }
}

#[test]
fn fixed_seed_instances_agree() {
    for seed in 0..50 {
        assert!(compare_stages(&random_instance(seed)).all(), "seed {seed}");
    }
}
