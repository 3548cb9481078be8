//! Leakage audit and Local Nearest Neighbor Connection (LNNC).
//!
//! A colluding set of parties can only solve for a victim node's features
//! when some internal node of the victim has every neighbour inside the
//! colluders' node sets. LNNC removes that precondition by giving each such
//! node an intra-edge to its angular-nearest sibling before any propagation.

use std::collections::BTreeSet;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::decouple::LocalGraph;
use crate::error::{Error, Result};
use crate::graph::GlobalGraph;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExposureReport {
    pub party: usize,
    pub exposed_nodes: BTreeSet<usize>,
    pub adversary_set: BTreeSet<usize>,
}

/// Internal nodes whose neighbours (self excluded) are all external nodes
/// owned by `adversaries`. Nodes without any neighbour are never reported.
pub fn find_exposed_nodes(lg: &LocalGraph, adversaries: &BTreeSet<usize>) -> ExposureReport {
    let adversary_set: BTreeSet<usize> = adversaries.iter().copied().filter(|&p| p != lg.party).collect();
    let intra = lg.intra_neighbors();
    let inter = lg.inter_neighbors();
    let exposed_nodes = lg
        .internal_nodes
        .iter()
        .enumerate()
        .filter(|&(k, _)| {
            intra[k].is_empty()
                && !inter[k].is_empty()
                && inter[k]
                    .iter()
                    .all(|v| adversary_set.contains(&lg.external_nodes[v]))
        })
        .map(|(_, &u)| u)
        .collect();
    ExposureReport {
        party: lg.party,
        exposed_nodes,
        adversary_set,
    }
}

/// Worst case: every other party colludes.
pub fn exposed_to_all(lg: &LocalGraph) -> BTreeSet<usize> {
    let everyone: BTreeSet<usize> = lg.external_nodes.values().copied().collect();
    find_exposed_nodes(lg, &everyone).exposed_nodes
}

/// `arccos(cos θ) / π`, in `[0, 1]`.
///
/// A zero vector is at distance 1 from any non-zero vector and at distance 0
/// from another zero vector.
pub fn angular_distance(x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    let nx = x.dot(&x).sqrt();
    let ny = y.dot(&y).sqrt();
    match (nx == 0.0, ny == 0.0) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 1.0,
        (false, false) => {
            // 2·atan2(|x̂ − ŷ|, |x̂ + ŷ|) stays accurate near 0 and π, unlike acos
            let (mut diff, mut sum) = (0.0, 0.0);
            for (a, b) in x.iter().zip(y.iter()) {
                let (a, b) = (a / nx, b / ny);
                diff += (a - b) * (a - b);
                sum += (a + b) * (a + b);
            }
            2.0 * diff.sqrt().atan2(sum.sqrt()) / std::f64::consts::PI
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LnncPlan {
    pub party: usize,
    /// New intra-edges `(u, u_N)`, `u` being the protected node.
    pub added_edges: Vec<(usize, usize)>,
    /// Exposed nodes of single-node parties, which have no sibling to link to.
    pub skipped: Vec<usize>,
}

/// Connects every exposed node to its angular-nearest other internal node.
///
/// Exposed nodes are visited in ascending id; a node that already gained an
/// intra-edge from an earlier addition in this pass needs no edge of its own.
pub fn lnnc_augment(lg: &LocalGraph) -> (LocalGraph, LnncPlan) {
    let exposed = exposed_to_all(lg);
    let mut plan = LnncPlan {
        party: lg.party,
        ..LnncPlan::default()
    };
    let mut edges: BTreeSet<(usize, usize)> = lg
        .intra_edges
        .iter()
        .map(|&(a, b)| (a.min(b), a.max(b)))
        .collect();
    let mut protected: BTreeSet<usize> = BTreeSet::new();

    for &u in &exposed {
        if lg.num_internal() < 2 {
            plan.skipped.push(u);
            continue;
        }
        if protected.contains(&u) {
            continue;
        }
        let xu = lg.features.row(lg.row_of(u).unwrap());
        let mut best: Option<(usize, f64)> = None;
        for (k, &v) in lg.internal_nodes.iter().enumerate() {
            if v == u {
                continue;
            }
            let d = angular_distance(xu, lg.features.row(k));
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((v, d));
            }
        }
        let (nearest, _) = best.expect("party has a second node");
        edges.insert((u.min(nearest), u.max(nearest)));
        protected.insert(u);
        protected.insert(nearest);
        plan.added_edges.push((u, nearest));
    }

    let augmented = LocalGraph {
        intra_edges: edges.into_iter().collect(),
        ..lg.clone()
    };
    (augmented, plan)
}

/// Per-party summary line of an LNNC pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LnncAuditRow {
    pub party: usize,
    pub exposed_before: usize,
    pub edges_added: usize,
    pub skipped: usize,
}

/// LNNC for every party, with the audit rows.
pub fn lnnc_all(locals: &[LocalGraph]) -> (Vec<LocalGraph>, Vec<LnncPlan>, Vec<LnncAuditRow>) {
    let mut graphs = Vec::with_capacity(locals.len());
    let mut plans = Vec::with_capacity(locals.len());
    let mut audit = Vec::with_capacity(locals.len());
    for lg in locals {
        let exposed_before = exposed_to_all(lg).len();
        let (augmented, plan) = lnnc_augment(lg);
        audit.push(LnncAuditRow {
            party: lg.party,
            exposed_before,
            edges_added: plan.added_edges.len(),
            skipped: plan.skipped.len(),
        });
        graphs.push(augmented);
        plans.push(plan);
    }
    (graphs, plans, audit)
}

/// The global graph with every party's LNNC edges added.
pub fn augmented_graph(g: &GlobalGraph, plans: &[LnncPlan]) -> Result<GlobalGraph> {
    g.with_extra_edges(plans.iter().flat_map(|p| p.added_edges.iter().copied()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackCount {
    pub equations: usize,
    pub unknowns: usize,
}

impl AttackCount {
    pub fn underdetermined(&self) -> bool {
        self.unknowns > self.equations
    }
}

/// Equation and unknown counts of the linear attack on one placeholder's
/// half-step values.
///
/// `victim_neighbors` is the number of victim internal nodes adjacent to the
/// adversary's node; `inner_counts[k]` is the number of victim-internal
/// neighbours of the k-th of those. One layer exposes `F` equations in
/// `n (F + 1)` unknowns; two layers expose `2F` equations in
/// `n (F + 2) + Σ_k inner_k (F + 1)` unknowns.
pub fn attack_count(
    victim_neighbors: usize,
    inner_counts: &[usize],
    layers: usize,
    feature_dim: usize,
) -> Result<AttackCount> {
    let f = feature_dim;
    match layers {
        1 => Ok(AttackCount {
            equations: f,
            unknowns: victim_neighbors * (f + 1),
        }),
        2 => {
            if inner_counts.len() != victim_neighbors {
                return Err(Error::DimensionMismatch(format!(
                    "{} inner counts for {victim_neighbors} victim neighbours",
                    inner_counts.len()
                )));
            }
            Ok(AttackCount {
                equations: 2 * f,
                unknowns: victim_neighbors * (f + 2) + inner_counts.iter().sum::<usize>() * (f + 1),
            })
        }
        other => Err(Error::InvalidParameter(format!(
            "attack counting covers 1 or 2 layers, got {other}"
        ))),
    }
}

/// What an adversary owning `external_node` observes from this party.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackSurface {
    pub external_node: usize,
    pub victim_neighbors: usize,
    pub inner_counts: Vec<usize>,
}

/// One surface per external node of `lg`, i.e. per placeholder whose
/// half-step values leave the party.
pub fn attack_surfaces(lg: &LocalGraph) -> Vec<AttackSurface> {
    let intra = lg.intra_neighbors();
    lg.external_nodes
        .keys()
        .filter_map(|&v| {
            let inner_counts: Vec<usize> = lg
                .inter_edges
                .iter()
                .filter(|&&(_, ext)| ext == v)
                .map(|&(u, _)| u)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .map(|u| intra[lg.row_of(u).unwrap()].len())
                .collect();
            (!inner_counts.is_empty()).then_some(AttackSurface {
                external_node: v,
                victim_neighbors: inner_counts.len(),
                inner_counts,
            })
        })
        .collect()
}
