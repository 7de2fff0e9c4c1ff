mod common;

use std::time::Instant;

use pcig_core::graph::build_graph;
use pcig_core::layout::{predicates_to_constraints, relation_satisfied, solve_layout, LayoutConfig};
use pcig_core::model::DiagnosticCode;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn check_instance(seed: u64) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (objects, triples) = common::random_solvable_instance(&mut rng, 30);
    let graph = build_graph(&objects, &triples).unwrap();
    let constraints = predicates_to_constraints(&triples);
    let config = LayoutConfig {
        rng_seed: seed,
        ..LayoutConfig::default()
    };
    let first = solve_layout(&graph, &objects, &constraints, &config).unwrap();
    let second = solve_layout(&graph, &objects, &constraints, &config).unwrap();
    prop_assert_eq!(&first, &second);

    prop_assert_eq!(first.boxes.len(), objects.len());
    for b in first.boxes.values() {
        prop_assert!(b.within_canvas() && b.meets_min_size(), "{}", b);
    }
    for c in &constraints {
        if c.kind.is_directional() {
            prop_assert_eq!(relation_satisfied(c, &first.boxes), Some(true), "{:?}", c);
        }
    }
    let flagged = first.diagnostics.iter().any(|d| d.code == DiagnosticCode::LayoutBestEffort);
    prop_assert_eq!(flagged, first.best_effort);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn random_solvable_instances_hold_every_directional_constraint(seed in any::<u64>()) {
        check_instance(seed)?;
    }
}

#[test]
fn five_hundred_instances_within_budget() {
    let start = Instant::now();
    for seed in 0..500 {
        check_instance(seed).unwrap();
    }
    assert!(start.elapsed().as_secs_f64() < 30.0, "took {:?}", start.elapsed());
}
