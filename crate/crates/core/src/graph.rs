//! Global graph representation and centralized propagation.
//!
//! Every graph is undirected and simple. Self-loops are never stored: the
//! self-loop-augmented (SLA) adjacency `A + I` is applied implicitly by every
//! degree and propagation routine, so node `u` always has SLA degree `1 + d_u`.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Undirected, attributed, labelled graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalGraph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl GlobalGraph {
    /// Builds a graph from an edge list.
    ///
    /// Edges are canonicalised to `(min, max)` and duplicates collapsed.
    /// Self-loops, out-of-range endpoints, non-finite features and
    /// out-of-range labels are rejected.
    pub fn new(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if features.nrows() != num_nodes {
            return Err(Error::DimensionMismatch(format!(
                "feature matrix has {} rows for {} nodes",
                features.nrows(),
                num_nodes
            )));
        }
        if labels.len() != num_nodes {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} nodes",
                labels.len(),
                num_nodes
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&c| c >= num_classes) {
            return Err(Error::InvalidGraph(format!(
                "label {bad} outside 0..{num_classes}"
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidGraph("non-finite feature entry".into()));
        }

        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge ({a}, {b}) has an endpoint outside 0..{num_nodes}"
                )));
            }
            if a == b {
                return Err(Error::InvalidGraph(format!("self-loop on node {a}")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();

        let mut adjacency = vec![Vec::new(); num_nodes];
        for &(a, b) in &edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }

        Ok(Self {
            num_nodes,
            edges,
            adjacency,
            features,
            labels,
            num_classes,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Canonical `(min, max)` edges in ascending order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Neighbours of `u` (excluding `u`) in ascending id order.
    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.adjacency[u]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adjacency[u].len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        a < self.num_nodes && self.adjacency[a].binary_search(&b).is_ok()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Same topology and labels, different node features.
    pub fn with_features(&self, features: Array2<f64>) -> Result<Self> {
        Self::new(
            self.num_nodes,
            self.edges.iter().copied(),
            features,
            self.labels.clone(),
            self.num_classes,
        )
    }

    /// Union of this graph's edges with `extra`.
    pub fn with_extra_edges(&self, extra: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        Self::new(
            self.num_nodes,
            self.edges.iter().copied().chain(extra),
            self.features.clone(),
            self.labels.clone(),
            self.num_classes,
        )
    }

    /// This graph minus every edge for which `drop` returns true.
    pub fn without_edges(&self, mut drop: impl FnMut(usize, usize) -> bool) -> Self {
        let kept: Vec<_> = self
            .edges
            .iter()
            .copied()
            .filter(|&(a, b)| !drop(a, b))
            .collect();
        Self::new(
            self.num_nodes,
            kept,
            self.features.clone(),
            self.labels.clone(),
            self.num_classes,
        )
        .expect("subgraph of a valid graph is valid")
    }

    /// Divides every feature row by its L1 norm (zero rows stay zero).
    pub fn row_normalized(&self) -> Self {
        let mut features = self.features.clone();
        for mut row in features.axis_iter_mut(Axis(0)) {
            let norm: f64 = row.iter().map(|x| x.abs()).sum();
            if norm > 0.0 {
                row.mapv_inplace(|x| x / norm);
            }
        }
        Self {
            features,
            ..self.clone()
        }
    }
}

/// Per-node SLA degrees, `1 + d_u`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeVector(pub Vec<usize>);

impl DegreeVector {
    pub fn get(&self, u: usize) -> usize {
        self.0[u]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

pub fn sla_degrees(g: &GlobalGraph) -> DegreeVector {
    DegreeVector((0..g.num_nodes()).map(|u| 1 + g.degree(u)).collect())
}

/// `sla_degree ^ exponent`, with the common exponents computed exactly.
pub(crate) fn degree_power(sla_degree: usize, exponent: f64) -> f64 {
    let d = sla_degree as f64;
    if exponent == 0.0 {
        1.0
    } else if exponent == -0.5 {
        1.0 / d.sqrt()
    } else if exponent == -1.0 {
        1.0 / d
    } else {
        d.powf(exponent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
        }
    }
}

fn check_rows(g: &GlobalGraph, h: &Array2<f64>) -> Result<()> {
    if h.nrows() != g.num_nodes() {
        return Err(Error::DimensionMismatch(format!(
            "embedding matrix has {} rows for {} nodes",
            h.nrows(),
            g.num_nodes()
        )));
    }
    Ok(())
}

/// One step of `D̃^{r-1} Ã D̃^{-r} H`.
///
/// Row `u` of the output is `(1+d_u)^{r-1} Σ_{v ∈ N_u ∪ {u}} (1+d_v)^{-r} h_v`,
/// summed in ascending `v` and scaled once at the end. `r = 0.5` is the
/// symmetric GCN normalization.
pub fn propagate_once(g: &GlobalGraph, h: &Array2<f64>, r: f64) -> Result<Array2<f64>> {
    check_rows(g, h)?;
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::InvalidParameter(format!("exponent r = {r} outside [0, 1]")));
    }
    let deg = sla_degrees(g);
    let source: Vec<f64> = deg.as_slice().iter().map(|&d| degree_power(d, -r)).collect();
    let mut out = Array2::<f64>::zeros(h.raw_dim());
    for u in 0..g.num_nodes() {
        let mut row = out.row_mut(u);
        let mut self_done = false;
        for &v in g.neighbors(u) {
            if !self_done && v > u {
                row.scaled_add(source[u], &h.row(u));
                self_done = true;
            }
            row.scaled_add(source[v], &h.row(v));
        }
        if !self_done {
            row.scaled_add(source[u], &h.row(u));
        }
        row *= degree_power(deg.get(u), r - 1.0);
    }
    Ok(out)
}

/// `layers` applications of [`propagate_once`] to the node features.
pub fn centralized_sgc(g: &GlobalGraph, layers: usize, r: f64) -> Result<Array2<f64>> {
    let mut h = g.features().clone();
    for _ in 0..layers {
        h = propagate_once(g, &h, r)?;
    }
    Ok(h)
}

/// Personalized-PageRank propagation `H ← (1-α) S H + α X` with `H⁰ = X`.
pub fn centralized_appnp(g: &GlobalGraph, layers: usize, alpha: f64) -> Result<Array2<f64>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha} outside (0, 1]")));
    }
    let x = g.features();
    let mut h = x.clone();
    for _ in 0..layers {
        let mut next = propagate_once(g, &h, 0.5)?;
        next.zip_mut_with(x, |a, &b| *a = (1.0 - alpha) * *a + alpha * b);
        h = next;
    }
    Ok(h)
}

/// Multi-layer GCN forward pass `H^{l+1} = σ(S H^l W^l)`.
pub fn centralized_gcn_forward(
    g: &GlobalGraph,
    weights: &[Array2<f64>],
    activation: Activation,
) -> Result<Array2<f64>> {
    let mut h = g.features().clone();
    for (layer, w) in weights.iter().enumerate() {
        if w.nrows() != h.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "layer {layer} weight has {} rows, input has {} columns",
                w.nrows(),
                h.ncols()
            )));
        }
        let mut next = propagate_once(g, &h, 0.5)?.dot(w);
        next.mapv_inplace(|x| activation.apply(x));
        h = next;
    }
    Ok(h)
}

pub fn edge_density_from_counts(num_nodes: usize, num_edges: usize) -> Result<f64> {
    if num_nodes < 2 {
        return Err(Error::InvalidParameter(format!(
            "edge density needs at least 2 nodes, got {num_nodes}"
        )));
    }
    let n = num_nodes as f64;
    Ok(2.0 * num_edges as f64 / (n * (n - 1.0)))
}

/// `2|E| / (|V| (|V| - 1))`.
pub fn edge_density(g: &GlobalGraph) -> Result<f64> {
    edge_density_from_counts(g.num_nodes(), g.num_edges())
}

/// Stochastic block model with class-correlated Gaussian features.
///
/// Nodes are numbered block by block; node label is `block % num_classes`.
/// Each class draws a mean vector from `N(0, feature_signal²)`; a node's
/// features are its class mean plus `N(0, feature_noise²)` noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmSpec {
    pub block_sizes: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub seed: u64,
    #[serde(default = "unit")]
    pub feature_signal: f64,
    #[serde(default = "unit")]
    pub feature_noise: f64,
}

fn unit() -> f64 {
    1.0
}

impl SbmSpec {
    pub fn new(
        block_sizes: Vec<usize>,
        p_in: f64,
        p_out: f64,
        feature_dim: usize,
        num_classes: usize,
        seed: u64,
    ) -> Self {
        Self {
            block_sizes,
            p_in,
            p_out,
            feature_dim,
            num_classes,
            seed,
            feature_signal: 1.0,
            feature_noise: 1.0,
        }
    }

    pub fn with_feature_scales(mut self, signal: f64, noise: f64) -> Self {
        self.feature_signal = signal;
        self.feature_noise = noise;
        self
    }
}

pub fn sbm_generate(spec: &SbmSpec) -> Result<GlobalGraph> {
    if spec.block_sizes.is_empty() || spec.block_sizes.contains(&0) {
        return Err(Error::InvalidParameter("SBM blocks must be non-empty".into()));
    }
    for (name, p) in [("p_in", spec.p_in), ("p_out", spec.p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("{name} = {p} outside [0, 1]")));
        }
    }
    if spec.num_classes == 0 {
        return Err(Error::InvalidParameter("num_classes must be positive".into()));
    }
    if !(spec.feature_signal >= 0.0 && spec.feature_noise >= 0.0) {
        return Err(Error::InvalidParameter("feature scales must be non-negative".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let block: Vec<usize> = spec
        .block_sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &size)| std::iter::repeat_n(b, size))
        .collect();
    let n = block.len();

    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if block[u] == block[v] { spec.p_in } else { spec.p_out };
            if p > 0.0 && rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let labels: Vec<usize> = block.iter().map(|b| b % spec.num_classes).collect();
    let signal = Normal::new(0.0, spec.feature_signal).expect("finite scale");
    let noise = Normal::new(0.0, spec.feature_noise).expect("finite scale");
    let means: Vec<Array1<f64>> = (0..spec.num_classes)
        .map(|_| Array1::from_shape_fn(spec.feature_dim, |_| signal.sample(&mut rng)))
        .collect();
    let mut features = Array2::zeros((n, spec.feature_dim));
    for (u, mut row) in features.axis_iter_mut(Axis(0)).enumerate() {
        let mean: ArrayView1<f64> = means[labels[u]].view();
        for (x, &m) in row.iter_mut().zip(mean.iter()) {
            *x = m + noise.sample(&mut rng);
        }
    }

    GlobalGraph::new(n, edges, features, labels, spec.num_classes)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    pub(crate) fn path(n: usize, features: Array2<f64>) -> GlobalGraph {
        GlobalGraph::new(n, (1..n).map(|i| (i - 1, i)), features, vec![0; n], 1).unwrap()
    }

    /// Dense `D̃^{r-1} Ã D̃^{-r}` built entry by entry.
    fn dense_operator(g: &GlobalGraph, r: f64) -> Array2<f64> {
        let n = g.num_nodes();
        let mut a = Array2::<f64>::eye(n);
        for &(u, v) in g.edges() {
            a[[u, v]] = 1.0;
            a[[v, u]] = 1.0;
        }
        let d: Vec<f64> = (0..n).map(|u| a.row(u).sum()).collect();
        Array2::from_shape_fn((n, n), |(u, v)| a[[u, v]] * d[u].powf(r - 1.0) * d[v].powf(-r))
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn sla_degree_examples() {
        let tri = GlobalGraph::new(3, [(0, 1), (1, 2), (0, 2)], Array2::zeros((3, 1)), vec![0; 3], 1)
            .unwrap();
        assert_eq!(sla_degrees(&tri).0, vec![3, 3, 3]);
        let single = GlobalGraph::new(1, [], Array2::zeros((1, 1)), vec![0], 1).unwrap();
        assert_eq!(sla_degrees(&single).0, vec![1]);
        assert_eq!(sla_degrees(&path(3, Array2::zeros((3, 1)))).0, vec![2, 3, 2]);
    }

    #[test]
    fn rejects_bad_graphs() {
        let x = Array2::zeros((2, 1));
        assert!(GlobalGraph::new(2, [(0, 0)], x.clone(), vec![0, 0], 1).is_err());
        assert!(GlobalGraph::new(2, [(0, 2)], x.clone(), vec![0, 0], 1).is_err());
        assert!(GlobalGraph::new(2, [], x.clone(), vec![0, 1], 1).is_err());
        let nan = array![[f64::NAN], [0.0]];
        assert!(GlobalGraph::new(2, [], nan, vec![0, 0], 1).is_err());
        let dup = GlobalGraph::new(2, [(0, 1), (1, 0)], x, vec![0, 0], 1).unwrap();
        assert_eq!(dup.num_edges(), 1);
    }

    #[test]
    fn propagate_isolated_and_pair() {
        let single = GlobalGraph::new(1, [], array![[2.5]], vec![0], 1).unwrap();
        assert_eq!(propagate_once(&single, single.features(), 0.5).unwrap(), array![[2.5]]);

        let pair = path(2, array![[1.0], [0.0]]);
        let out = propagate_once(&pair, pair.features(), 0.5).unwrap();
        assert_relative_eq!(out[[0, 0]], 0.5, epsilon = 1e-15);
        assert_relative_eq!(out[[1, 0]], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn propagate_matches_dense_on_path() {
        let h = random_matrix(4, 3, 7);
        let g = path(4, h.clone());
        for r in [0.0, 0.3, 0.5, 1.0] {
            let expected = dense_operator(&g, r).dot(&h);
            let got = propagate_once(&g, &h, r).unwrap();
            for (a, b) in got.iter().zip(expected.iter()) {
                assert_relative_eq!(a, b, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn propagate_dimension_mismatch() {
        let g = path(3, Array2::zeros((3, 1)));
        assert!(matches!(
            propagate_once(&g, &Array2::zeros((2, 1)), 0.5),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn sgc_examples() {
        let x = random_matrix(4, 2, 11);
        let g = path(4, x.clone());
        assert_eq!(centralized_sgc(&g, 0, 0.5).unwrap(), x);

        let s = dense_operator(&g, 0.5);
        let expected = s.dot(&s).dot(&x);
        let got = centralized_sgc(&g, 2, 0.5).unwrap();
        for (a, b) in got.iter().zip(expected.iter()) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }

        let k3 = GlobalGraph::new(
            3,
            [(0, 1), (1, 2), (0, 2)],
            array![[1.5, -2.0], [1.5, -2.0], [1.5, -2.0]],
            vec![0; 3],
            1,
        )
        .unwrap();
        for layers in 0..5 {
            let out = centralized_sgc(&k3, layers, 0.5).unwrap();
            for row in out.rows() {
                assert_relative_eq!(row[0], 1.5, epsilon = 1e-12);
                assert_relative_eq!(row[1], -2.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gcn_examples() {
        let x = random_matrix(6, 3, 5);
        let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (1, 4)];
        let g = GlobalGraph::new(6, edges, x.clone(), vec![0; 6], 1).unwrap();

        let identity = centralized_gcn_forward(&g, &[Array2::eye(3)], Activation::Linear).unwrap();
        assert_eq!(identity, propagate_once(&g, &x, 0.5).unwrap());

        let zero = centralized_gcn_forward(&g, &[Array2::zeros((3, 4))], Activation::Relu).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));

        let w0 = random_matrix(3, 4, 1);
        let w1 = random_matrix(4, 2, 2);
        let s = dense_operator(&g, 0.5);
        let relu = |m: Array2<f64>| m.mapv(|v| v.max(0.0));
        let expected = relu(s.dot(&relu(s.dot(&x).dot(&w0))).dot(&w1));
        let got = centralized_gcn_forward(&g, &[w0, w1], Activation::Relu).unwrap();
        for (a, b) in got.iter().zip(expected.iter()) {
            assert_relative_eq!(a, b, max_relative = 1e-12, epsilon = 1e-14);
        }

        let bad = centralized_gcn_forward(&g, &[Array2::zeros((2, 2))], Activation::Relu);
        assert!(matches!(bad, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn density_examples() {
        let dblp = edge_density_from_counts(17_716, 52_867).unwrap();
        assert!((dblp - 3.37e-4).abs() < 0.01e-4);
        let k4 = GlobalGraph::new(
            4,
            [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)],
            Array2::zeros((4, 1)),
            vec![0; 4],
            1,
        )
        .unwrap();
        assert_eq!(edge_density(&k4).unwrap(), 1.0);
        let empty = GlobalGraph::new(4, [], Array2::zeros((4, 1)), vec![0; 4], 1).unwrap();
        assert_eq!(edge_density(&empty).unwrap(), 0.0);
        assert!(edge_density_from_counts(1, 0).is_err());
    }

    #[test]
    fn sbm_examples() {
        let g = sbm_generate(&SbmSpec::new(vec![2, 2], 1.0, 0.0, 3, 2, 1)).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (2, 3)]);
        assert_eq!(g.labels(), &[0, 0, 1, 1]);

        let g = sbm_generate(&SbmSpec::new(vec![5, 5], 0.0, 0.0, 3, 2, 1)).unwrap();
        assert_eq!(g.num_edges(), 0);

        let spec = SbmSpec::new(vec![10, 12, 8], 0.4, 0.05, 4, 3, 99);
        assert_eq!(sbm_generate(&spec).unwrap(), sbm_generate(&spec).unwrap());

        assert!(sbm_generate(&SbmSpec::new(vec![3, 0], 0.5, 0.1, 2, 2, 0)).is_err());
        assert!(sbm_generate(&SbmSpec::new(vec![], 0.5, 0.1, 2, 2, 0)).is_err());
        assert!(sbm_generate(&SbmSpec::new(vec![3], 1.5, 0.1, 2, 1, 0)).is_err());
    }
}
