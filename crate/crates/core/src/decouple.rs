//! Per-party local graphs and their split into an internal graph and a
//! bipartite border graph.
//!
//! The internal graph of party `i` holds every internal node plus one
//! placeholder `(v, i)` per external neighbour `v`; placeholders carry the
//! zero vector. The border graph attaches to each internal node `u` one slot
//! `(u, j)` per foreign party `j` owning at least one neighbour of `u`.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Everything party `party` can see: its own nodes with features and labels,
/// its intra-edges, and inter-edges to foreign nodes (no foreign features).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGraph {
    pub party: usize,
    /// Owned node ids, ascending. Row `k` of `features` belongs to `internal_nodes[k]`.
    pub internal_nodes: Vec<usize>,
    /// External border node -> owning party.
    pub external_nodes: BTreeMap<usize, usize>,
    /// Canonical `(min, max)` pairs inside `internal_nodes`, ascending.
    pub intra_edges: Vec<(usize, usize)>,
    /// `(internal, external)` pairs, ascending.
    pub inter_edges: Vec<(usize, usize)>,
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

impl LocalGraph {
    /// Row index of an internal node in `features`.
    pub fn row_of(&self, node: usize) -> Option<usize> {
        self.internal_nodes.binary_search(&node).ok()
    }

    pub fn is_internal(&self, node: usize) -> bool {
        self.row_of(node).is_some()
    }

    pub fn num_internal(&self) -> usize {
        self.internal_nodes.len()
    }

    /// Intra-party neighbours of every internal node, indexed by row.
    pub fn intra_neighbors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.internal_nodes.len()];
        for &(a, b) in &self.intra_edges {
            if let (Some(ra), Some(rb)) = (self.row_of(a), self.row_of(b)) {
                out[ra].push(b);
                out[rb].push(a);
            }
        }
        for list in &mut out {
            list.sort_unstable();
        }
        out
    }

    /// External neighbours of every internal node, indexed by row.
    pub fn inter_neighbors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.internal_nodes.len()];
        for &(u, v) in &self.inter_edges {
            if let Some(ru) = self.row_of(u) {
                out[ru].push(v);
            }
        }
        for list in &mut out {
            list.sort_unstable();
            list.dedup();
        }
        out
    }

    /// The same party with every inter-edge and external node removed.
    pub fn without_inter_edges(&self) -> Self {
        Self {
            external_nodes: BTreeMap::new(),
            inter_edges: Vec::new(),
            ..self.clone()
        }
    }

    /// Checks the structural invariants of a local graph.
    pub fn validate(&self) -> Result<()> {
        if self.features.nrows() != self.internal_nodes.len()
            || self.labels.len() != self.internal_nodes.len()
        {
            return Err(Error::DimensionMismatch(format!(
                "party {}: {} internal nodes, {} feature rows, {} labels",
                self.party,
                self.internal_nodes.len(),
                self.features.nrows(),
                self.labels.len()
            )));
        }
        if self.internal_nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidGraph(format!(
                "party {}: internal nodes must be strictly ascending",
                self.party
            )));
        }
        for (&v, &owner) in &self.external_nodes {
            if self.is_internal(v) {
                return Err(Error::InvalidGraph(format!(
                    "party {}: node {v} is both internal and external",
                    self.party
                )));
            }
            if owner == self.party {
                return Err(Error::InvalidGraph(format!(
                    "party {}: external node {v} annotated with its own party",
                    self.party
                )));
            }
        }
        for &(a, b) in &self.intra_edges {
            if a == b || !self.is_internal(a) || !self.is_internal(b) {
                return Err(Error::InvalidGraph(format!(
                    "party {}: intra-edge ({a}, {b}) is not between two internal nodes",
                    self.party
                )));
            }
        }
        for &(u, v) in &self.inter_edges {
            if !self.is_internal(u) {
                return Err(Error::InvalidGraph(format!(
                    "party {}: inter-edge ({u}, {v}) has no internal endpoint",
                    self.party
                )));
            }
            if !self.external_nodes.contains_key(&v) {
                return Err(Error::UnknownExternal {
                    party: self.party,
                    internal: u,
                    external: v,
                });
            }
        }
        Ok(())
    }
}

/// Canonical key of a placeholder: external node `node` as seen by `party`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PlaceholderId {
    pub node: usize,
    pub party: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum NodeKey {
    Internal(usize),
    Placeholder(PlaceholderId),
}

/// Local graph completed with zero-feature placeholders for external nodes.
///
/// Local indices `0..num_internal` are the internal nodes in ascending id
/// order; the placeholders follow in ascending external id order.
#[derive(Debug, Clone, PartialEq)]
pub struct InternalGraph {
    pub party: usize,
    pub nodes: Vec<NodeKey>,
    pub num_internal: usize,
    /// Neighbours (excluding self) by local index, ascending.
    pub adjacency: Vec<Vec<usize>>,
    /// `1 + degree` in this graph, by local index.
    pub sla_degree: Vec<usize>,
    /// Placeholder -> owner party of the node it stands in for.
    pub placeholder_owner: BTreeMap<PlaceholderId, usize>,
}

impl InternalGraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_placeholders(&self) -> usize {
        self.nodes.len() - self.num_internal
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn is_placeholder(&self, local: usize) -> bool {
        local >= self.num_internal
    }

    /// `(local index, placeholder)` pairs in ascending order.
    pub fn placeholders(&self) -> impl Iterator<Item = (usize, PlaceholderId)> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .skip(self.num_internal)
            .filter_map(|(k, key)| match key {
                NodeKey::Placeholder(p) => Some((k, *p)),
                NodeKey::Internal(_) => None,
            })
    }

    /// Global id of the internal node at local index `local`.
    pub fn internal_id(&self, local: usize) -> Option<usize> {
        match self.nodes.get(local) {
            Some(NodeKey::Internal(u)) => Some(*u),
            _ => None,
        }
    }
}

/// Bipartite graph of internal border nodes and per-foreign-party slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BorderGraph {
    pub party: usize,
    /// Internal node -> ascending foreign parties owning a neighbour of it.
    pub slots: BTreeMap<usize, Vec<usize>>,
}

impl BorderGraph {
    pub fn num_edges(&self) -> usize {
        self.slots.values().map(Vec::len).sum()
    }

    pub fn slots_of(&self, node: usize) -> &[usize] {
        self.slots.get(&node).map(Vec::as_slice).unwrap_or(&[])
    }

    /// All `(internal node, foreign party)` slot pairs, ascending.
    pub fn slot_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.slots
            .iter()
            .flat_map(|(&u, parties)| parties.iter().map(move |&j| (u, j)))
    }
}

pub fn graph_decoupling(lg: &LocalGraph) -> Result<(InternalGraph, BorderGraph)> {
    lg.validate()?;

    let inter: BTreeSet<(usize, usize)> = lg.inter_edges.iter().copied().collect();
    let externals: BTreeSet<usize> = inter.iter().map(|&(_, v)| v).collect();

    let num_internal = lg.internal_nodes.len();
    let mut nodes: Vec<NodeKey> = lg.internal_nodes.iter().map(|&u| NodeKey::Internal(u)).collect();
    let mut placeholder_owner = BTreeMap::new();
    let mut placeholder_index = BTreeMap::new();
    for &v in &externals {
        let id = PlaceholderId {
            node: v,
            party: lg.party,
        };
        placeholder_index.insert(v, nodes.len());
        nodes.push(NodeKey::Placeholder(id));
        placeholder_owner.insert(id, lg.external_nodes[&v]);
    }

    let mut adjacency = vec![Vec::new(); nodes.len()];
    let mut push = |a: usize, b: usize| {
        adjacency[a].push(b);
        adjacency[b].push(a);
    };
    let intra: BTreeSet<(usize, usize)> = lg
        .intra_edges
        .iter()
        .map(|&(a, b)| (a.min(b), a.max(b)))
        .collect();
    for (a, b) in intra {
        push(lg.row_of(a).unwrap(), lg.row_of(b).unwrap());
    }
    let mut slots: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for &(u, v) in &inter {
        push(lg.row_of(u).unwrap(), placeholder_index[&v]);
        slots.entry(u).or_default().insert(lg.external_nodes[&v]);
    }
    for list in &mut adjacency {
        list.sort_unstable();
    }
    let sla_degree = adjacency.iter().map(|n| 1 + n.len()).collect();

    let internal = InternalGraph {
        party: lg.party,
        nodes,
        num_internal,
        adjacency,
        sla_degree,
        placeholder_owner,
    };
    let border = BorderGraph {
        party: lg.party,
        slots: slots
            .into_iter()
            .map(|(u, parties)| (u, parties.into_iter().collect()))
            .collect(),
    };
    Ok((internal, border))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two_node_party() -> LocalGraph {
        LocalGraph {
            party: 1,
            internal_nodes: vec![0, 1],
            external_nodes: BTreeMap::from([(2, 2)]),
            intra_edges: vec![(0, 1)],
            inter_edges: vec![(1, 2)],
            features: array![[1.0], [2.0]],
            labels: vec![0, 0],
        }
    }

    #[test]
    fn no_inter_edges() {
        let lg = LocalGraph {
            party: 0,
            internal_nodes: vec![0, 1, 2],
            external_nodes: BTreeMap::new(),
            intra_edges: vec![(0, 1), (1, 2)],
            inter_edges: vec![],
            features: Array2::zeros((3, 2)),
            labels: vec![0; 3],
        };
        let (ig, bg) = graph_decoupling(&lg).unwrap();
        assert_eq!(ig.num_nodes(), 3);
        assert_eq!(ig.num_placeholders(), 0);
        assert_eq!(ig.adjacency, vec![vec![1], vec![0, 2], vec![1]]);
        assert_eq!(ig.sla_degree, vec![2, 3, 2]);
        assert!(bg.slots.is_empty());
    }

    #[test]
    fn single_inter_edge() {
        // nodes a=0, b=1 internal to party 1; c=2 owned by party 2
        let (ig, bg) = graph_decoupling(&two_node_party()).unwrap();
        let c_at_1 = PlaceholderId { node: 2, party: 1 };
        assert_eq!(
            ig.nodes,
            vec![NodeKey::Internal(0), NodeKey::Internal(1), NodeKey::Placeholder(c_at_1)]
        );
        assert_eq!(ig.adjacency, vec![vec![1], vec![0, 2], vec![1]]);
        assert_eq!(ig.sla_degree, vec![2, 3, 2]);
        assert_eq!(ig.placeholder_owner, BTreeMap::from([(c_at_1, 2)]));
        assert_eq!(bg.slots, BTreeMap::from([(1, vec![2])]));
    }

    #[test]
    fn neighbours_in_two_foreign_parties() {
        let lg = LocalGraph {
            party: 1,
            internal_nodes: vec![0],
            external_nodes: BTreeMap::from([(5, 3), (7, 2), (9, 3)]),
            intra_edges: vec![],
            inter_edges: vec![(0, 5), (0, 7), (0, 9)],
            features: array![[1.0]],
            labels: vec![0],
        };
        let (ig, bg) = graph_decoupling(&lg).unwrap();
        assert_eq!(bg.slots, BTreeMap::from([(0, vec![2, 3])]));
        assert_eq!(bg.num_edges(), 2);
        assert_eq!(ig.num_placeholders(), 3);
        assert_eq!(ig.sla_degree[0], 4);
        assert!(ig.sla_degree[1..].iter().all(|&d| d == 2));
    }

    #[test]
    fn duplicate_inter_edges_collapse() {
        let mut lg = two_node_party();
        lg.inter_edges.push((1, 2));
        let (ig, bg) = graph_decoupling(&lg).unwrap();
        assert_eq!(ig.sla_degree, vec![2, 3, 2]);
        assert_eq!(bg.num_edges(), 1);
    }

    #[test]
    fn unknown_external_is_rejected() {
        let mut lg = two_node_party();
        lg.inter_edges.push((0, 8));
        assert_eq!(
            graph_decoupling(&lg).unwrap_err(),
            Error::UnknownExternal {
                party: 1,
                internal: 0,
                external: 8
            }
        );
    }

    #[test]
    fn decoupling_does_not_mutate_input() {
        let lg = two_node_party();
        let before = lg.clone();
        let _ = graph_decoupling(&lg).unwrap();
        assert_eq!(lg, before);
    }
}
