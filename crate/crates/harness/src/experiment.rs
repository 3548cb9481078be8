//! End-to-end pipeline: load, partition, repair, propagate, train, evaluate.

use std::sync::Arc;

use fedcog_core::decouple::LocalGraph;
use fedcog_core::fedprop::{
    centralized_reference, centralized_reference_layers, decouple_parties, fedcog_run_with, gather_embeddings,
    CostMeter, GammaFault, PartyGraphs, PropagationVariant, RunOptions,
};
use fedcog_core::fedtrain::{federated_train, LinkObjective, LocalObjective, NodeObjective, RoundRecord, TrainConfig};
use fedcog_core::graph::{sbm_generate, Activation, GlobalGraph};
use fedcog_core::learn::{
    accuracy, auc, link_scores, sample_link_split, sample_node_split, ClassifierParams, FlatParams, LinkModelParams,
    LinkSplit, NodeSplit,
};
use fedcog_core::partition::{induce_local_graphs, kmeans_partition, partition_stats, topological_partition, Partition};
use fedcog_core::privacy::{augmented_graph, exposed_to_all, lnnc_all};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{DatasetSource, ExperimentConfig, PartitionMethod, PropagationMode, TaskKind, VariantKind};
use crate::dataset::load_citation_dataset;
use crate::error::{AtStage, Result, Stage};
use crate::report::{ExperimentReport, LayerCheck, LnncSummary, VerifyReport};

pub fn load_graph(cfg: &ExperimentConfig) -> Result<GlobalGraph> {
    let g = match &cfg.dataset.source {
        DatasetSource::Sbm(spec) => sbm_generate(spec).at(Stage::Load)?,
        DatasetSource::Citation { content, cites } => load_citation_dataset(content, cites)?,
    };
    Ok(if cfg.dataset.row_normalize { g.row_normalized() } else { g })
}

pub fn partition_graph(cfg: &ExperimentConfig, g: &GlobalGraph) -> Result<Partition> {
    let pc = &cfg.partition;
    match pc.method {
        PartitionMethod::Kmeans => kmeans_partition(g, pc.parts, pc.kmeans_iters, pc.seed),
        PartitionMethod::Topological => topological_partition(g, pc.parts, pc.seed),
    }
    .at(Stage::Partition)
}

/// Everything up to propagation, shared by all propagation modes.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Graph every mode propagates on: normalized, without held-out link
    /// positives, and with LNNC edges when enabled.
    pub graph: GlobalGraph,
    pub partition: Partition,
    /// Per-party local graphs of `graph`.
    pub locals: Vec<LocalGraph>,
    pub lnnc: Option<LnncSummary>,
    pub node_split: Option<NodeSplit>,
    pub link_split: Option<LinkSplit>,
    pub stats: fedcog_core::partition::PartitionStats,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let full = load_graph(cfg)?;
    let (graph, node_split, link_split) = match cfg.task.kind {
        TaskKind::Node => {
            let split = sample_node_split(&full, cfg.task.train_per_class, cfg.task.test_size, cfg.task.seed)
                .at(Stage::Split)?;
            (full, Some(split), None)
        }
        TaskKind::Link => {
            let split = sample_link_split(&full, cfg.task.link_train_frac, cfg.task.seed).at(Stage::Split)?;
            let held_out: std::collections::HashSet<(usize, usize)> = split.test_pos.iter().copied().collect();
            (full.without_edges(|a, b| held_out.contains(&(a, b))), None, Some(split))
        }
    };
    let partition = partition_graph(cfg, &graph)?;
    let stats = partition_stats(&partition, &graph);
    let locals = induce_local_graphs(&graph, &partition).at(Stage::Partition)?;

    let (graph, locals, lnnc) = if cfg.lnnc {
        let (augmented, plans, rows) = lnnc_all(&locals);
        let summary = LnncSummary {
            exposed_before: rows.iter().map(|r| r.exposed_before).sum(),
            exposed_after: augmented.iter().map(|lg| exposed_to_all(lg).len()).sum(),
            edges_added: rows.iter().map(|r| r.edges_added).sum(),
            skipped: rows.iter().map(|r| r.skipped).sum(),
            parties: rows,
        };
        let g2 = augmented_graph(&graph, &plans).at(Stage::Lnnc)?;
        (g2, augmented, Some(summary))
    } else {
        (graph, locals, None)
    };

    Ok(Prepared {
        graph,
        partition,
        locals,
        lnnc,
        node_split,
        link_split,
        stats,
    })
}

/// Propagation variant named by the config; GCN weights are Glorot-uniform
/// from the model seed.
pub fn build_variant(cfg: &ExperimentConfig, input_dim: usize) -> PropagationVariant {
    let m = &cfg.model;
    match m.variant {
        VariantKind::Sgc => PropagationVariant::Sgc,
        VariantKind::Appnp => PropagationVariant::Appnp { alpha: m.alpha },
        VariantKind::Gpr => PropagationVariant::Gpr { r: m.r },
        VariantKind::Gcn => {
            let mut rng = ChaCha8Rng::seed_from_u64(m.seed);
            let mut dim = input_dim;
            let weights = (0..m.layers)
                .map(|_| {
                    let limit = (6.0 / (dim + m.gcn_width) as f64).sqrt();
                    let w = Array2::from_shape_fn((dim, m.gcn_width), |_| rng.random_range(-limit..limit));
                    dim = m.gcn_width;
                    w
                })
                .collect();
            PropagationVariant::Gcn {
                weights,
                activation: Activation::Relu,
            }
        }
    }
}

/// Global embedding matrix for `mode`, with the propagation cost.
pub fn propagate(cfg: &ExperimentConfig, prep: &Prepared, mode: PropagationMode) -> Result<(Array2<f64>, CostMeter, usize)> {
    let variant = build_variant(cfg, prep.graph.feature_dim());
    let layers = cfg.model.layers;
    let n = prep.graph.num_nodes();
    let federated = |locals: &[LocalGraph]| -> Result<(Array2<f64>, CostMeter, usize)> {
        let parties = decouple_parties(locals).at(Stage::Decouple)?;
        let placeholders = parties.iter().map(|p| p.internal.num_placeholders()).sum();
        let run = fedcog_run_with(
            &parties,
            layers,
            &variant,
            &RunOptions {
                parallel: true,
                ..Default::default()
            },
        )
        .at(Stage::Propagate)?;
        let h = gather_embeddings(&parties, &run.embeddings, n).at(Stage::Propagate)?;
        Ok((h, run.meter, placeholders))
    };
    match mode {
        PropagationMode::Fedcog => federated(&prep.locals),
        PropagationMode::Disconnected => {
            let cut: Vec<LocalGraph> = prep.locals.iter().map(LocalGraph::without_inter_edges).collect();
            federated(&cut)
        }
        PropagationMode::Centralized => {
            let h = centralized_reference(&prep.graph, &variant, layers).at(Stage::Propagate)?;
            Ok((h, CostMeter::default(), 0))
        }
    }
}

fn node_objectives(prep: &Prepared, h: &Array2<f64>, groups: &[Vec<usize>], template: &ClassifierParams) -> Vec<NodeObjective> {
    let split = prep.node_split.as_ref().expect("node task has a node split");
    groups
        .iter()
        .map(|nodes| NodeObjective {
            embeddings: h.select(ndarray::Axis(0), nodes),
            labels: nodes.iter().map(|&u| prep.graph.labels()[u]).collect(),
            train_rows: nodes
                .iter()
                .enumerate()
                .filter(|(_, u)| split.train_ids.binary_search(u).is_ok())
                .map(|(k, _)| k)
                .collect(),
            template: template.clone(),
        })
        .collect()
}

/// Training groups: one per party, or everything together when centralized.
fn groups(prep: &Prepared, mode: PropagationMode) -> Vec<Vec<usize>> {
    match mode {
        PropagationMode::Centralized => vec![(0..prep.graph.num_nodes()).collect()],
        _ => (0..prep.partition.num_parties()).map(|i| prep.partition.party_nodes(i)).collect(),
    }
}

fn train<O: LocalObjective>(
    parties: &[O],
    init: Vec<f64>,
    config: TrainConfig,
    eval: &(dyn Fn(&[f64]) -> fedcog_core::Result<f64> + Sync),
) -> Result<(f64, Vec<RoundRecord>)> {
    let (params, history) = federated_train(parties, init, config, Some(eval)).at(Stage::Train)?;
    let metric = eval(&params).at(Stage::Evaluate)?;
    Ok((metric, history))
}

/// Trains and evaluates the task head on embeddings `h`.
pub fn train_and_evaluate(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    h: &Array2<f64>,
    mode: PropagationMode,
) -> Result<(f64, Vec<RoundRecord>)> {
    let groups = groups(prep, mode);
    let train_cfg = cfg.train.train_config();
    match cfg.task.kind {
        TaskKind::Node => {
            let d = h.ncols();
            let c = prep.graph.num_classes();
            let template = match cfg.model.classifier_hidden {
                0 => ClassifierParams::linear(d, c),
                w => ClassifierParams::with_hidden(d, w, c, cfg.train.seed),
            };
            let parties = node_objectives(prep, h, &groups, &template);
            let split = prep.node_split.as_ref().unwrap();
            let test_h = h.select(ndarray::Axis(0), &split.test_ids);
            let truth: Vec<usize> = split.test_ids.iter().map(|&u| prep.graph.labels()[u]).collect();
            let all: Vec<usize> = (0..truth.len()).collect();
            let eval = |theta: &[f64]| -> fedcog_core::Result<f64> {
                let mut p = template.clone();
                p.set_flat(theta)?;
                accuracy(&p.predict(&test_h)?, &truth, &all)
            };
            train(&parties, template.to_flat(), train_cfg, &eval)
        }
        TaskKind::Link => {
            let split = prep.link_split.as_ref().expect("link task has a link split");
            let template = LinkModelParams::random(h.ncols(), cfg.train.seed);
            let shared = Arc::new(h.clone());
            // a pair belongs to the owner of its lower endpoint
            let mut owner_of_group = vec![0; prep.graph.num_nodes()];
            for (k, nodes) in groups.iter().enumerate() {
                for &u in nodes {
                    owner_of_group[u] = k;
                }
            }
            let mut pairs = vec![Vec::new(); groups.len()];
            for pair in split.train_batch() {
                pairs[owner_of_group[pair.u.min(pair.v)]].push(pair);
            }
            let parties: Vec<LinkObjective> = pairs
                .into_iter()
                .map(|pairs| LinkObjective {
                    embeddings: Arc::clone(&shared),
                    pairs,
                    template: template.clone(),
                })
                .collect();
            let test = split.test_batch();
            let test_pairs: Vec<(usize, usize)> = test.iter().map(|p| (p.u, p.v)).collect();
            let test_labels: Vec<bool> = test.iter().map(|p| p.positive).collect();
            let eval = |theta: &[f64]| -> fedcog_core::Result<f64> {
                let mut p = template.clone();
                p.set_flat(theta)?;
                auc(&link_scores(h, &p, &test_pairs)?, &test_labels)
            };
            train(&parties, template.to_flat(), train_cfg, &eval)
        }
    }
}

fn report(cfg: &ExperimentConfig, prep: &Prepared, mode: PropagationMode) -> Result<ExperimentReport> {
    let (h, meter, placeholders) = propagate(cfg, prep, mode)?;
    let (final_metric, history) = train_and_evaluate(cfg, prep, &h, mode)?;
    let mut run_cfg = cfg.clone();
    run_cfg.model.propagation = mode;
    Ok(ExperimentReport {
        config: run_cfg,
        mode,
        partition: prep.stats.clone(),
        lnnc: prep.lnnc.clone(),
        num_placeholders: placeholders,
        propagation_cost: meter,
        training_floats_sent: history.iter().map(|r| r.floats_sent).sum(),
        history,
        metric_name: match cfg.task.kind {
            TaskKind::Node => "accuracy".into(),
            TaskKind::Link => "auc".into(),
        },
        final_metric,
    })
}

/// Runs the configured pipeline and writes the report if an output path is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let prep = prepare(cfg)?;
    let rep = report(cfg, &prep, cfg.model.propagation)?;
    if let Some(path) = &cfg.output {
        rep.write(path)?;
    }
    Ok(rep)
}

/// The same split and partition pushed through every propagation mode.
pub fn evaluate_modes(cfg: &ExperimentConfig) -> Result<Vec<ExperimentReport>> {
    let prep = prepare(cfg)?;
    PropagationMode::ALL.iter().map(|&mode| report(cfg, &prep, mode)).collect()
}

fn party_graphs(prep: &Prepared) -> Result<Vec<PartyGraphs>> {
    decouple_parties(&prep.locals).at(Stage::Decouple)
}

/// Relative error tolerance of the equivalence check.
pub fn verify_tolerance(variant: &PropagationVariant) -> f64 {
    match variant {
        PropagationVariant::Gcn {
            activation: Activation::Relu,
            ..
        } => 1e-5,
        _ => 1e-8,
    }
}

/// Entrywise `|a - b| / max(|b|, floor)` with `floor = 1e-6 · max|b|`,
/// returning the error and the row where it peaks.
pub fn relative_error(actual: &Array2<f64>, expected: &Array2<f64>) -> (f64, usize) {
    let scale = expected.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let floor = (1e-6 * scale).max(f64::MIN_POSITIVE);
    let mut worst = (0.0, 0);
    for (row, (a, b)) in actual.outer_iter().zip(expected.outer_iter()).enumerate() {
        for (x, y) in a.iter().zip(b.iter()) {
            let e = (x - y).abs() / y.abs().max(floor);
            if e > worst.0 || e.is_nan() {
                worst = (e, row);
            }
        }
    }
    worst
}

/// Federated against centralized propagation on the same (possibly
/// LNNC-augmented) graph, layer by layer.
pub fn verify_equivalence(cfg: &ExperimentConfig, fault: Option<GammaFault>) -> Result<VerifyReport> {
    let prep = prepare(cfg)?;
    let variant = build_variant(cfg, prep.graph.feature_dim());
    let layers = cfg.model.layers;
    let parties = party_graphs(&prep)?;
    let run = fedcog_run_with(
        &parties,
        layers,
        &variant,
        &RunOptions {
            record_layers: true,
            gamma_fault: fault,
            ..Default::default()
        },
    )
    .at(Stage::Propagate)?;
    let reference = centralized_reference_layers(&prep.graph, &variant, layers).at(Stage::Propagate)?;
    let n = prep.graph.num_nodes();
    let tolerance = verify_tolerance(&variant);
    let per_layer = run
        .per_layer
        .iter()
        .zip(&reference)
        .enumerate()
        .map(|(l, (fed, central))| {
            let fed = gather_embeddings(&parties, fed, n).at(Stage::Propagate)?;
            let (err, node) = relative_error(&fed, central);
            Ok(LayerCheck {
                layer: l + 1,
                max_relative_error: err,
                worst_node: node,
                worst_party: prep.partition.owner(node),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let passed = per_layer.iter().all(|c| c.max_relative_error < tolerance);
    Ok(VerifyReport {
        variant: variant.name().into(),
        layers,
        parts: cfg.partition.parts,
        tolerance,
        per_layer,
        passed,
    })
}

/// Exposure audit and LNNC repair summary, regardless of the config's flag.
pub fn lnnc_audit(cfg: &ExperimentConfig) -> Result<LnncSummary> {
    let mut with = cfg.clone();
    with.lnnc = true;
    Ok(prepare(&with)?.lnnc.expect("LNNC enabled"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    pub(crate) const SMOKE: &str = r#"
        [dataset]
        source = { kind = "sbm", block_sizes = [20, 20, 20], p_in = 0.9, p_out = 0.02, feature_dim = 8, num_classes = 3, seed = 1 }

        [partition]
        method = "kmeans"
        parts = 3
        seed = 0

        [model]
        variant = "sgc"
        layers = 2

        [task]
        kind = "node"
        train_per_class = 5
        test_size = 30
        seed = 0

        [train]
        algo = "fedavg"
        lr = 0.5
        rounds = 50
    "#;

    fn cfg() -> ExperimentConfig {
        ExperimentConfig::from_toml(SMOKE).unwrap()
    }

    #[test]
    fn separable_blocks_reach_high_accuracy() {
        let rep = run_experiment(&cfg()).unwrap();
        assert!(rep.final_metric >= 0.9, "{}", rep.final_metric);
        assert_eq!(rep.history.len(), 50);
        assert_eq!(rep.metric_name, "accuracy");
    }

    #[test]
    fn runs_are_reproducible() {
        let a = run_experiment(&cfg()).unwrap();
        let b = run_experiment(&cfg()).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(ExperimentReport::from_json(&a.to_json().unwrap()).unwrap(), a);
    }

    #[test]
    fn lnnc_is_a_no_op_without_exposed_nodes() {
        let mut on = cfg();
        on.lnnc = true;
        let with = run_experiment(&on).unwrap();
        let without = run_experiment(&cfg()).unwrap();
        let summary = with.lnnc.clone().unwrap();
        if summary.exposed_before == 0 {
            assert_eq!(with.final_metric, without.final_metric);
            assert_eq!(with.history, without.history);
        }
        assert_eq!(summary.exposed_after, 0);
    }

    #[test]
    fn single_party_matches_centralized_pipeline() {
        let mut one = cfg();
        one.partition.parts = 1;
        let reports = evaluate_modes(&one).unwrap();
        assert_eq!(reports[0].final_metric, reports[2].final_metric);
        assert_eq!(reports[0].propagation_cost.floats_sent, 0);
    }

    #[test]
    fn verify_passes_for_every_variant() {
        for (variant, layers) in [("sgc", 3), ("gcn", 2), ("appnp", 3), ("gpr", 2)] {
            let mut c = cfg();
            c.model.variant = serde_json::from_str(&format!("\"{variant}\"")).unwrap();
            c.model.layers = layers;
            c.partition.parts = 5;
            let rep = verify_equivalence(&c, None).unwrap();
            assert!(rep.passed, "{variant}: {:?}", rep.per_layer);
            assert_eq!(rep.per_layer.len(), layers);
        }
        let mut one = cfg();
        one.partition.parts = 1;
        let rep = verify_equivalence(&one, None).unwrap();
        assert!(rep.max_error() <= 1e-15, "{:?}", rep.per_layer);
    }

    #[test]
    fn corrupted_gamma_fails_at_the_faulty_node() {
        let c = cfg();
        let prep = prepare(&c).unwrap();
        let victim = prep.partition.party_nodes(1)[0];
        let rep = verify_equivalence(
            &c,
            Some(GammaFault {
                party: 1,
                node: victim,
                factor: 1.5,
            }),
        )
        .unwrap();
        assert!(!rep.passed);
        assert_eq!(rep.per_layer[0].worst_node, victim);
        assert_eq!(rep.per_layer[0].worst_party, 1);
    }

    #[test]
    fn link_task_runs() {
        let mut c = cfg();
        c.task.kind = TaskKind::Link;
        c.train.lr = 0.1;
        c.train.rounds = 20;
        let rep = run_experiment(&c).unwrap();
        assert_eq!(rep.metric_name, "auc");
        assert!((0.0..=1.0).contains(&rep.final_metric));
    }
}
