//! Federated propagation against centralized propagation on random instances.

mod common;

use common::{dense_operator, max_abs_diff, random_graph, random_partition};
use fedcog_core::fedprop::{
    centralized_reference, decouple_parties, fedcog_run, fedcog_run_with, gather_embeddings, max_relative_error,
    PropagationVariant, RunOptions,
};
use fedcog_core::graph::{Activation, GlobalGraph};
use fedcog_core::partition::induce_local_graphs;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn federated(g: &GlobalGraph, m: usize, seed: u64, variant: &PropagationVariant, layers: usize) -> Array2<f64> {
    let p = random_partition(g.num_nodes(), m, seed);
    let parties = decouple_parties(&induce_local_graphs(g, &p).unwrap()).unwrap();
    let (emb, _) = fedcog_run(&parties, layers, variant).unwrap();
    gather_embeddings(&parties, &emb, g.num_nodes()).unwrap()
}

fn gcn_weights(dims: &[usize], seed: u64) -> Vec<Array2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dims.windows(2)
        .map(|w| Array2::from_shape_fn((w[0], w[1]), |_| rng.random_range(-1.0..1.0)))
        .collect()
}

/// Dense oracle for each variant, independent of the library's sparse code.
fn dense_reference(g: &GlobalGraph, variant: &PropagationVariant, layers: usize) -> Array2<f64> {
    let x = g.features().clone();
    let mut h = x.clone();
    for l in 0..layers {
        h = match variant {
            PropagationVariant::Sgc => dense_operator(g, 0.5).dot(&h),
            PropagationVariant::Gpr { r } => dense_operator(g, 1.0 - r).dot(&h),
            PropagationVariant::Appnp { alpha } => dense_operator(g, 0.5).dot(&h) * (1.0 - alpha) + &x * *alpha,
            PropagationVariant::Gcn { weights, activation } => {
                dense_operator(g, 0.5).dot(&h).dot(&weights[l]).mapv(|v| activation.apply(v))
            }
        };
    }
    h
}

fn variant_strategy() -> impl Strategy<Value = (PropagationVariant, usize)> {
    (0usize..5, 0.0f64..=1.0, 1usize..=3, any::<u64>()).prop_map(|(kind, t, layers, seed)| {
        let variant = match kind {
            0 => PropagationVariant::Sgc,
            1 => PropagationVariant::Appnp { alpha: 0.05 + 0.95 * t },
            2 => PropagationVariant::Gpr { r: t },
            3 => PropagationVariant::Gcn {
                weights: gcn_weights(&[3, 4, 2, 3][..=layers], seed),
                activation: Activation::Linear,
            },
            _ => PropagationVariant::Gcn {
                weights: gcn_weights(&[3, 5, 4, 2][..=layers], seed),
                activation: Activation::Relu,
            },
        };
        (variant, layers)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn federated_equals_centralized(
        n in 10usize..40,
        p in 0.05f64..0.4,
        m_index in 0usize..5,
        seed in any::<u64>(),
        (variant, layers) in variant_strategy(),
    ) {
        let m = [1, 2, 3, 5, 10][m_index];
        let g = random_graph(n, p, 3, seed);
        let fed = federated(&g, m, seed, &variant, layers);
        let dense = dense_reference(&g, &variant, layers);
        let central = centralized_reference(&g, &variant, layers).unwrap();
        prop_assert!(max_relative_error(&fed, &dense, 1e-3) < 1e-9);
        prop_assert!(max_relative_error(&central, &dense, 1e-3) < 1e-9);
    }

    #[test]
    fn sgc_is_linear_in_features(
        n in 8usize..25,
        seed in any::<u64>(),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let g1 = random_graph(n, 0.25, 2, seed);
        let g2 = g1.with_features(random_graph(n, 0.0, 2, seed.wrapping_add(1)).features().clone()).unwrap();
        let mix = g1.with_features(g1.features() * a + &(g2.features() * b)).unwrap();
        let f = |g: &GlobalGraph| federated(g, 3, seed, &PropagationVariant::Sgc, 2);
        let expected = f(&g1) * a + &(f(&g2) * b);
        prop_assert!(max_abs_diff(&f(&mix), &expected) < 1e-10);
    }

    #[test]
    fn schedule_does_not_change_output(n in 10usize..30, seed in any::<u64>(), shift in 0usize..5) {
        let g = random_graph(n, 0.2, 3, seed);
        let p = random_partition(n, 5, seed);
        let parties = decouple_parties(&induce_local_graphs(&g, &p).unwrap()).unwrap();
        let variant = PropagationVariant::Appnp { alpha: 0.2 };
        let base = fedcog_run_with(&parties, 3, &variant, &RunOptions::default()).unwrap();
        let mut order: Vec<usize> = (0..5).collect();
        order.rotate_left(shift);
        order.swap(0, 4);
        let permuted = fedcog_run_with(&parties, 3, &variant, &RunOptions { schedule: Some(order), ..Default::default() }).unwrap();
        let parallel = fedcog_run_with(&parties, 3, &variant, &RunOptions { parallel: true, ..Default::default() }).unwrap();
        prop_assert_eq!(&base.embeddings, &permuted.embeddings);
        prop_assert_eq!(&base.embeddings, &parallel.embeddings);
        prop_assert_eq!(base.meter, parallel.meter);
    }
}

#[test]
fn placeholder_traffic_is_layers_times_width_times_placeholders() {
    for seed in 0..20 {
        let g = random_graph(30, 0.15, 4, seed);
        for m in [1, 2, 3, 5, 10] {
            let p = random_partition(30, m, seed);
            let parties = decouple_parties(&induce_local_graphs(&g, &p).unwrap()).unwrap();
            let placeholders: u64 = parties.iter().map(|q| q.internal.num_placeholders() as u64).sum();
            for layers in 0..4 {
                let (_, meter) = fedcog_run(&parties, layers, &PropagationVariant::Sgc).unwrap();
                assert_eq!(meter.floats_sent, layers as u64 * 4 * placeholders);
                assert_eq!(meter.exchange_rounds, layers as u64);
            }
        }
    }
}

#[test]
fn zero_layers_returns_features() {
    let g = random_graph(12, 0.3, 2, 4);
    assert_eq!(federated(&g, 3, 4, &PropagationVariant::Sgc, 0), *g.features());
}
