//! Leak repair and attack counting over many random partitions.

mod common;

use common::{random_graph, random_partition};
use fedcog_core::partition::induce_local_graphs;
use fedcog_core::privacy::{attack_count, attack_surfaces, augmented_graph, exposed_to_all, lnnc_all};

#[test]
fn lnnc_removes_every_exposure() {
    for seed in 0..100u64 {
        let n = 20 + (seed as usize % 30);
        let m = 2 + (seed as usize % 9);
        let g = random_graph(n, 0.08, 3, seed);
        let part = random_partition(n, m, seed);
        let locals = induce_local_graphs(&g, &part).unwrap();
        let (augmented, plans, audit) = lnnc_all(&locals);
        for ((lg, plan), row) in augmented.iter().zip(&plans).zip(&audit) {
            let left = exposed_to_all(lg);
            assert!(left.iter().all(|u| plan.skipped.contains(u)), "seed {seed}: {left:?}");
            assert!(row.edges_added <= row.exposed_before);
            for &(a, b) in &plan.added_edges {
                assert_eq!(part.owner(a), lg.party);
                assert_eq!(part.owner(b), lg.party);
            }
        }
        // the global view of the added edges decouples into the same local graphs
        let g2 = augmented_graph(&g, &plans).unwrap();
        assert_eq!(induce_local_graphs(&g2, &part).unwrap(), augmented);
    }
}

#[test]
fn exposed_node_is_attackable_without_lnnc() {
    // one victim neighbour with no inner neighbours: 2F equations, F + 2 unknowns
    for f in 3..=64 {
        assert!(!attack_count(1, &[0], 2, f).unwrap().underdetermined());
    }
}

#[test]
fn attacks_after_lnnc_are_underdetermined() {
    for seed in 0..30u64 {
        let g = random_graph(40, 0.1, 2, seed);
        let locals = induce_local_graphs(&g, &random_partition(40, 4, seed)).unwrap();
        let (augmented, _, _) = lnnc_all(&locals);
        for lg in augmented.iter().filter(|lg| lg.num_internal() >= 2) {
            for s in attack_surfaces(lg) {
                assert!(s.inner_counts.iter().all(|&c| c >= 1));
                for f in 1..=64 {
                    assert!(attack_count(s.victim_neighbors, &s.inner_counts, 1, f).unwrap().underdetermined());
                    assert!(attack_count(s.victim_neighbors, &s.inner_counts, 2, f).unwrap().underdetermined());
                }
            }
        }
    }
}
