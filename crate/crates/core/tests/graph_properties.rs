mod common;

use pcig_core::graph::{build_graph_for, select_anchor};
use pcig_core::model::RelationTriple;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn triples(edges: &[(usize, usize)]) -> Vec<RelationTriple> {
    edges.iter().map(|&(s, o)| RelationTriple::new(s, "near", o)).collect()
}

/// Mismatches between `select_anchor` and the brute-force oracle.
pub fn anchor_mismatches(graphs: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    (0..graphs)
        .filter(|_| {
            let n = rng.gen_range(1..=50);
            let edges = common::random_edges(&mut rng, n);
            let graph = build_graph_for(n, &triples(&edges)).unwrap();
            select_anchor(&graph).unwrap() != common::brute_force_anchor(n, &edges)
        })
        .count()
}

#[test]
fn anchor_matches_oracle_on_a_thousand_graphs() {
    assert_eq!(anchor_mismatches(1000), 0);
}

#[test]
fn ties_go_to_the_lowest_index() {
    let graph = build_graph_for(4, &triples(&[(2, 3), (0, 1)])).unwrap();
    assert_eq!(select_anchor(&graph).unwrap(), 0);
    let isolated = build_graph_for(3, &[]).unwrap();
    assert_eq!(select_anchor(&isolated).unwrap(), 0);
}

#[test]
fn empty_graph_has_no_anchor() {
    assert!(select_anchor(&build_graph_for(0, &[]).unwrap()).is_err());
}

#[test]
fn dangling_edges_are_rejected() {
    assert!(build_graph_for(2, &triples(&[(0, 2)])).is_err());
}

proptest! {
    #[test]
    fn degrees_sum_to_twice_the_edge_count(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=50);
        let edges = common::random_edges(&mut rng, n);
        let graph = build_graph_for(n, &triples(&edges)).unwrap();
        let total: usize = (0..n).map(|v| graph.degree(v)).sum();
        prop_assert_eq!(total, 2 * graph.edge_count());
        prop_assert_eq!(graph.edge_count(), edges.len());
        let oracle = common::brute_force_degrees(n, &edges);
        for (v, expected) in oracle.iter().enumerate() {
            prop_assert_eq!(graph.degree(v), *expected);
        }
    }

    #[test]
    fn anchor_degree_survives_relabeling(seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=30);
        let edges = common::random_edges(&mut rng, n);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let relabeled: Vec<(usize, usize)> = edges.iter().map(|&(s, o)| (perm[s], perm[o])).collect();
        let a = build_graph_for(n, &triples(&edges)).unwrap();
        let b = build_graph_for(n, &triples(&relabeled)).unwrap();
        prop_assert_eq!(a.degree(select_anchor(&a).unwrap()), b.degree(select_anchor(&b).unwrap()));
        // edge order never matters
        let mut reversed = edges.clone();
        reversed.reverse();
        let c = build_graph_for(n, &triples(&reversed)).unwrap();
        prop_assert_eq!(select_anchor(&a).unwrap(), select_anchor(&c).unwrap());
    }
}
