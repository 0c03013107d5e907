mod common;

use common::{as_set, brute_check, random_case};
use mapf_llm::validator::{check_step, JointConfig, Violation};
use mapf_llm::{Coord, GridMap};
use proptest::prelude::*;
use rand::{rngs::StdRng, SeedableRng};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn matches_brute_force(seed in any::<u64>()) {
        let case = random_case(&mut StdRng::seed_from_u64(seed));
        let got = check_step(&case.map, &case.current, &case.proposed).unwrap();
        let want = brute_check(&case);
        prop_assert_eq!(got.violations.len(), want.len());
        prop_assert_eq!(as_set(&got.violations), as_set(&want));
    }

    #[test]
    fn report_is_deterministic(seed in any::<u64>()) {
        let case = random_case(&mut StdRng::seed_from_u64(seed));
        let a = check_step(&case.map, &case.current, &case.proposed).unwrap();
        let b = check_step(&case.map, &case.current, &case.proposed).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    /// Staying put on free, distinct cells is always legal.
    #[test]
    fn waiting_is_valid(seed in any::<u64>()) {
        let case = random_case(&mut StdRng::seed_from_u64(seed));
        let mut seen = std::collections::HashSet::new();
        let free: Vec<Coord> = case.current.positions().iter().copied()
            .filter(|c| case.map.is_free(*c) && seen.insert(*c)).collect();
        let cfg = JointConfig(free);
        prop_assert!(check_step(&case.map, &cfg, &cfg).unwrap().valid());
    }
}

#[test]
fn swaps_are_not_conflicts() {
    let m = GridMap::empty("e", 2, 1).unwrap();
    let a = JointConfig(vec![Coord::new(0, 0), Coord::new(1, 0)]);
    let b = JointConfig(vec![Coord::new(1, 0), Coord::new(0, 0)]);
    assert!(check_step(&m, &a, &b).unwrap().valid());
}

#[test]
fn three_way_pileup_is_one_group() {
    let m = GridMap::empty("e", 3, 3).unwrap();
    let a = JointConfig(vec![Coord::new(0, 1), Coord::new(1, 0), Coord::new(2, 1)]);
    let b = JointConfig(vec![Coord::new(1, 1); 3]);
    assert_eq!(
        check_step(&m, &a, &b).unwrap().violations,
        vec![Violation::VertexConflict { agents: vec![1, 2, 3], cell: Coord::new(1, 1) }]
    );
}
