//! Splitting a global graph across parties.

use std::collections::{BTreeMap, VecDeque};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decouple::LocalGraph;
use crate::error::{Error, Result};
use crate::graph::GlobalGraph;

/// Node ownership: `owner[u]` is the party holding node `u`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    owner: Vec<usize>,
    num_parties: usize,
}

impl Partition {
    /// Every id must be below `num_parties` and every party must own a node.
    pub fn new(owner: Vec<usize>, num_parties: usize) -> Result<Self> {
        if num_parties == 0 {
            return Err(Error::InvalidPartition("zero parties".into()));
        }
        let mut sizes = vec![0usize; num_parties];
        for (u, &p) in owner.iter().enumerate() {
            if p >= num_parties {
                return Err(Error::InvalidPartition(format!(
                    "node {u} assigned to party {p} of {num_parties}"
                )));
            }
            sizes[p] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidPartition(format!("party {empty} owns no nodes")));
        }
        Ok(Self { owner, num_parties })
    }

    pub fn owner(&self, u: usize) -> usize {
        self.owner[u]
    }

    pub fn owners(&self) -> &[usize] {
        &self.owner
    }

    pub fn num_parties(&self) -> usize {
        self.num_parties
    }

    pub fn num_nodes(&self) -> usize {
        self.owner.len()
    }

    pub fn party_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_parties];
        for &p in &self.owner {
            sizes[p] += 1;
        }
        sizes
    }

    /// Nodes of `party` in ascending order.
    pub fn party_nodes(&self, party: usize) -> Vec<usize> {
        (0..self.owner.len()).filter(|&u| self.owner[u] == party).collect()
    }

    /// Number of edges whose endpoints belong to different parties.
    pub fn edge_cut(&self, g: &GlobalGraph) -> usize {
        g.edges()
            .iter()
            .filter(|&&(a, b)| self.owner[a] != self.owner[b])
            .count()
    }
}

fn check_party_count(g: &GlobalGraph, m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidParameter("number of parties must be positive".into()));
    }
    if m > g.num_nodes() {
        return Err(Error::InvalidParameter(format!(
            "{m} parties for {} nodes",
            g.num_nodes()
        )));
    }
    Ok(())
}

fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Feature clustering: Lloyd's k-means on feature rows with k-means++ seeding.
///
/// A cluster that runs empty takes the point lying farthest from its own
/// centroid (among clusters with more than one point), so every party owns
/// at least one node.
pub fn kmeans_partition(g: &GlobalGraph, m: usize, max_iters: usize, seed: u64) -> Result<Partition> {
    check_party_count(g, m)?;
    let x = g.features();
    let n = g.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centers: Vec<usize> = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = (0..n)
        .map(|u| squared_distance(x.row(u), x.row(centers[0])))
        .collect();
    while centers.len() < m {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = None;
            for (u, &d) in nearest.iter().enumerate() {
                if d > 0.0 {
                    chosen = Some(u);
                    if target < d {
                        break;
                    }
                    target -= d;
                }
            }
            chosen.expect("positive total implies a positive entry")
        } else {
            let free: Vec<usize> = (0..n).filter(|u| !centers.contains(u)).collect();
            free[rng.random_range(0..free.len())]
        };
        centers.push(pick);
        for (u, d) in nearest.iter_mut().enumerate() {
            *d = d.min(squared_distance(x.row(u), x.row(pick)));
        }
    }
    let mut centroids: Vec<Array1<f64>> = centers.iter().map(|&c| x.row(c).to_owned()).collect();

    let mut assignment = vec![usize::MAX; n];
    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        for (u, a) in assignment.iter_mut().enumerate() {
            let best = nearest_centroid(x.row(u), &centroids);
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        changed |= repair_empty(x, &mut assignment, &centroids, m);
        centroids = recompute_centroids(x, &assignment, m);
        if !changed {
            break;
        }
    }
    repair_empty(x, &mut assignment, &centroids, m);
    Partition::new(assignment, m)
}

fn nearest_centroid(row: ArrayView1<f64>, centroids: &[Array1<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(row, centroid.view());
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

fn recompute_centroids(x: &Array2<f64>, assignment: &[usize], m: usize) -> Vec<Array1<f64>> {
    let mut sums = vec![Array1::<f64>::zeros(x.ncols()); m];
    let mut counts = vec![0usize; m];
    for (u, row) in x.axis_iter(Axis(0)).enumerate() {
        sums[assignment[u]] += &row;
        counts[assignment[u]] += 1;
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| if c > 0 { s / c as f64 } else { s })
        .collect()
}

fn repair_empty(x: &Array2<f64>, assignment: &mut [usize], centroids: &[Array1<f64>], m: usize) -> bool {
    let mut repaired = false;
    loop {
        let mut counts = vec![0usize; m];
        for &a in assignment.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return repaired;
        };
        let mut victim = None;
        let mut worst = f64::NEG_INFINITY;
        for (u, &a) in assignment.iter().enumerate() {
            if counts[a] > 1 {
                let d = squared_distance(x.row(u), centroids[a].view());
                if d > worst {
                    worst = d;
                    victim = Some(u);
                }
            }
        }
        let victim = victim.expect("m <= n leaves a cluster with two points");
        assignment[victim] = empty;
        repaired = true;
    }
}

fn bfs_distances(g: &GlobalGraph, source: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; g.num_nodes()];
    dist[source] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        for &v in g.neighbors(u) {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

fn farthest(dist: &[usize], exclude: &[usize]) -> usize {
    let mut best = None;
    for (u, &d) in dist.iter().enumerate() {
        if exclude.contains(&u) {
            continue;
        }
        match best {
            Some((_, bd)) if d <= bd => {}
            _ => best = Some((u, d)),
        }
    }
    best.expect("at least one candidate").0
}

/// Topological clustering by seeded multi-source region growing.
///
/// Seeds are spread out by farthest-point BFS distance (unreachable counts
/// as infinitely far), starting from the node farthest from a random start.
/// Regions then grow one node at a time: the currently smallest region takes
/// the frontier node with the most neighbours already inside it. Region
/// sizes therefore never differ by more than one.
pub fn topological_partition(g: &GlobalGraph, m: usize, seed: u64) -> Result<Partition> {
    check_party_count(g, m)?;
    let n = g.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.random_range(0..n);

    let first = farthest(&bfs_distances(g, start), &[]);
    let mut seeds = vec![first];
    let mut min_dist = bfs_distances(g, first);
    while seeds.len() < m {
        let next = farthest(&min_dist, &seeds);
        seeds.push(next);
        for (a, b) in min_dist.iter_mut().zip(bfs_distances(g, next)) {
            *a = (*a).min(b);
        }
    }

    let mut growth = RegionGrowth::new(g, m);
    for (region, &s) in seeds.iter().enumerate() {
        growth.assign(s, region);
    }
    for _ in m..n {
        let region = (0..m).min_by_key(|&r| (growth.sizes[r], r)).unwrap();
        let mut pick = None;
        for (&v, &count) in &growth.frontier[region] {
            match pick {
                Some((_, best)) if count <= best => {}
                _ => pick = Some((v, count)),
            }
        }
        let node = match pick {
            Some((v, _)) => v,
            None => growth.owner.iter().position(|&o| o == FREE).unwrap(),
        };
        growth.assign(node, region);
    }
    Partition::new(growth.owner, m)
}

const FREE: usize = usize::MAX;

struct RegionGrowth<'a> {
    g: &'a GlobalGraph,
    owner: Vec<usize>,
    sizes: Vec<usize>,
    /// Per region: unassigned neighbour -> number of its neighbours inside the region.
    frontier: Vec<BTreeMap<usize, usize>>,
}

impl<'a> RegionGrowth<'a> {
    fn new(g: &'a GlobalGraph, m: usize) -> Self {
        Self {
            g,
            owner: vec![FREE; g.num_nodes()],
            sizes: vec![0; m],
            frontier: vec![BTreeMap::new(); m],
        }
    }

    fn assign(&mut self, node: usize, region: usize) {
        self.owner[node] = region;
        self.sizes[region] += 1;
        for f in &mut self.frontier {
            f.remove(&node);
        }
        for &v in self.g.neighbors(node) {
            if self.owner[v] == FREE {
                *self.frontier[region].entry(v).or_insert(0) += 1;
            }
        }
    }
}

/// Builds every party's local view of `g` under `p`.
pub fn induce_local_graphs(g: &GlobalGraph, p: &Partition) -> Result<Vec<LocalGraph>> {
    if p.num_nodes() != g.num_nodes() {
        return Err(Error::DimensionMismatch(format!(
            "partition covers {} nodes, graph has {}",
            p.num_nodes(),
            g.num_nodes()
        )));
    }
    let m = p.num_parties();
    let mut locals: Vec<LocalGraph> = (0..m)
        .map(|party| {
            let internal_nodes = p.party_nodes(party);
            let features = g.features().select(Axis(0), &internal_nodes);
            let labels = internal_nodes.iter().map(|&u| g.labels()[u]).collect();
            LocalGraph {
                party,
                internal_nodes,
                external_nodes: BTreeMap::new(),
                intra_edges: Vec::new(),
                inter_edges: Vec::new(),
                features,
                labels,
            }
        })
        .collect();

    for &(a, b) in g.edges() {
        let (pa, pb) = (p.owner(a), p.owner(b));
        if pa == pb {
            locals[pa].intra_edges.push((a, b));
        } else {
            locals[pa].inter_edges.push((a, b));
            locals[pa].external_nodes.insert(b, pb);
            locals[pb].inter_edges.push((b, a));
            locals[pb].external_nodes.insert(a, pa);
        }
    }
    for lg in &mut locals {
        lg.inter_edges.sort_unstable();
    }
    Ok(locals)
}

fn label_histogram(labels: impl Iterator<Item = usize>, num_classes: usize) -> Vec<f64> {
    let mut hist = vec![0.0; num_classes];
    let mut total = 0.0;
    for c in labels {
        hist[c] += 1.0;
        total += 1.0;
    }
    if total > 0.0 {
        hist.iter_mut().for_each(|h| *h /= total);
    }
    hist
}

/// Unweighted mean over parties of the L1 distance between the party's
/// label distribution and the global one. Lies in `[0, 2]`.
pub fn label_emd(p: &Partition, g: &GlobalGraph) -> f64 {
    let c = g.num_classes();
    let global = label_histogram(g.labels().iter().copied(), c);
    let total: f64 = (0..p.num_parties())
        .map(|party| {
            let local = label_histogram(p.party_nodes(party).into_iter().map(|u| g.labels()[u]), c);
            local.iter().zip(&global).map(|(a, b)| (a - b).abs()).sum::<f64>()
        })
        .sum();
    total / p.num_parties() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionStats {
    pub intra_edge_fraction: f64,
    pub avg_label_emd: f64,
    pub party_sizes: Vec<usize>,
}

pub fn partition_stats(p: &Partition, g: &GlobalGraph) -> PartitionStats {
    let intra_edge_fraction = if g.num_edges() == 0 {
        1.0
    } else {
        (g.num_edges() - p.edge_cut(g)) as f64 / g.num_edges() as f64
    };
    PartitionStats {
        intra_edge_fraction,
        avg_label_emd: label_emd(p, g),
        party_sizes: p.party_sizes(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{sbm_generate, SbmSpec};
    use ndarray::array;
    use rand_distr::{Distribution, Normal};

    fn path4() -> GlobalGraph {
        GlobalGraph::new(4, [(0, 1), (1, 2), (2, 3)], array![[1.0], [2.0], [3.0], [4.0]], vec![0, 0, 1, 1], 2)
            .unwrap()
    }

    fn two_k5() -> GlobalGraph {
        let mut edges = Vec::new();
        for base in [0, 5] {
            for a in 0..5 {
                for b in (a + 1)..5 {
                    edges.push((base + a, base + b));
                }
            }
        }
        // features interleave the components so feature clustering ignores them
        let x = Array2::from_shape_fn((10, 1), |(u, _)| (u % 2) as f64 * 10.0);
        GlobalGraph::new(10, edges, x, vec![0; 10], 1).unwrap()
    }

    #[test]
    fn partition_validation() {
        assert!(Partition::new(vec![0, 1, 1], 2).is_ok());
        assert!(Partition::new(vec![0, 0, 0], 2).is_err());
        assert!(Partition::new(vec![0, 2], 2).is_err());
        assert!(Partition::new(vec![], 0).is_err());
    }

    #[test]
    fn kmeans_single_party() {
        let p = kmeans_partition(&path4(), 1, 10, 3).unwrap();
        assert_eq!(p.owners(), &[0, 0, 0, 0]);
    }

    #[test]
    fn kmeans_separates_far_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let n = 40;
        let x = Array2::from_shape_fn((n, 3), |(u, _)| {
            let centre = if u < 20 { -10.0 } else { 10.0 };
            centre + noise.sample(&mut rng)
        });
        let g = GlobalGraph::new(n, [], x.clone(), vec![0; n], 1).unwrap();
        let p = kmeans_partition(&g, 2, 50, 17).unwrap();

        // brute-force: each point is nearest to its own cluster mean
        let means: Vec<Array1<f64>> = (0..2)
            .map(|c| {
                let rows = p.party_nodes(c);
                x.select(Axis(0), &rows).mean_axis(Axis(0)).unwrap()
            })
            .collect();
        for u in 0..n {
            let d: Vec<f64> = means.iter().map(|m| squared_distance(x.row(u), m.view())).collect();
            assert!(d[p.owner(u)] <= d[1 - p.owner(u)]);
        }
        let first = p.owner(0);
        for u in 0..n {
            assert_eq!(p.owner(u) == first, u < 20);
        }
    }

    #[test]
    fn kmeans_deterministic_and_never_empty() {
        let g = sbm_generate(&SbmSpec::new(vec![15, 15, 15], 0.3, 0.05, 4, 3, 2)).unwrap();
        let a = kmeans_partition(&g, 7, 30, 9).unwrap();
        let b = kmeans_partition(&g, 7, 30, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.party_sizes().iter().all(|&s| s > 0));

        // identical points force the repair path
        let same = GlobalGraph::new(5, [], Array2::ones((5, 2)), vec![0; 5], 1).unwrap();
        let p = kmeans_partition(&same, 5, 10, 1).unwrap();
        assert_eq!(p.party_sizes(), vec![1; 5]);
        assert!(kmeans_partition(&same, 6, 10, 1).is_err());
    }

    /// Smallest cut over every balanced bipartition, by enumeration.
    fn best_balanced_cut(g: &GlobalGraph) -> usize {
        let n = g.num_nodes();
        (0u32..(1 << n))
            .filter(|mask| mask.count_ones() as usize == n / 2)
            .map(|mask| {
                g.edges()
                    .iter()
                    .filter(|&&(a, b)| ((mask >> a) & 1) != ((mask >> b) & 1))
                    .count()
            })
            .min()
            .unwrap()
    }

    #[test]
    fn topological_two_components() {
        let g = two_k5();
        assert_eq!(best_balanced_cut(&g), 0);
        for seed in 0..10 {
            let p = topological_partition(&g, 2, seed).unwrap();
            assert_eq!(p.edge_cut(&g), 0);
            assert_eq!(p.party_sizes(), vec![5, 5]);
        }
    }

    #[test]
    fn topological_path_halves() {
        let n = 10;
        let g = GlobalGraph::new(n, (1..n).map(|i| (i - 1, i)), Array2::zeros((n, 1)), vec![0; n], 1).unwrap();
        assert_eq!(best_balanced_cut(&g), 1);
        for seed in 0..10 {
            let p = topological_partition(&g, 2, seed).unwrap();
            assert_eq!(p.edge_cut(&g), 1);
            let left = p.owner(0);
            assert!((0..5).all(|u| p.owner(u) == left));
            assert!((5..10).all(|u| p.owner(u) != left));
        }
    }

    #[test]
    fn topological_every_node_alone() {
        let g = path4();
        let p = topological_partition(&g, 4, 1).unwrap();
        assert_eq!(p.party_sizes(), vec![1; 4]);
        assert!(topological_partition(&g, 5, 1).is_err());
    }

    #[test]
    fn topological_is_balanced_and_deterministic() {
        let g = sbm_generate(&SbmSpec::new(vec![30, 25, 35], 0.2, 0.02, 2, 3, 4)).unwrap();
        for m in [2, 3, 7, 13] {
            let p = topological_partition(&g, m, 8).unwrap();
            assert_eq!(p, topological_partition(&g, m, 8).unwrap());
            let n = g.num_nodes();
            let tol = 0.1 * n.div_ceil(m) as f64;
            for s in p.party_sizes() {
                assert!(s as f64 >= (n / m) as f64 - tol && s as f64 <= n.div_ceil(m) as f64 + tol);
            }
        }
    }

    #[test]
    fn topological_beats_kmeans_on_split_components() {
        let g = two_k5();
        let topo = partition_stats(&topological_partition(&g, 2, 0).unwrap(), &g);
        let feat = partition_stats(&kmeans_partition(&g, 2, 20, 0).unwrap(), &g);
        assert!(topo.intra_edge_fraction >= feat.intra_edge_fraction);
    }

    #[test]
    fn induce_single_party() {
        let g = path4();
        let p = Partition::new(vec![0; 4], 1).unwrap();
        let locals = induce_local_graphs(&g, &p).unwrap();
        assert_eq!(locals.len(), 1);
        assert!(locals[0].external_nodes.is_empty());
        assert_eq!(locals[0].intra_edges, g.edges());
    }

    #[test]
    fn induce_path_split() {
        let g = path4();
        let p = Partition::new(vec![0, 0, 1, 1], 2).unwrap();
        let locals = induce_local_graphs(&g, &p).unwrap();
        let first = &locals[0];
        assert_eq!(first.internal_nodes, vec![0, 1]);
        assert_eq!(first.external_nodes, BTreeMap::from([(2, 1)]));
        assert_eq!(first.intra_edges, vec![(0, 1)]);
        assert_eq!(first.inter_edges, vec![(1, 2)]);
        assert_eq!(first.features, array![[1.0], [2.0]]);
        assert_eq!(locals[1].inter_edges, vec![(2, 1)]);
        for lg in &locals {
            lg.validate().unwrap();
        }
    }

    #[test]
    fn induce_preserves_edges() {
        let g = sbm_generate(&SbmSpec::new(vec![20, 20, 20], 0.3, 0.05, 3, 3, 1)).unwrap();
        let p = kmeans_partition(&g, 5, 20, 1).unwrap();
        let locals = induce_local_graphs(&g, &p).unwrap();
        let intra: usize = locals.iter().map(|l| l.intra_edges.len()).sum();
        let inter: usize = locals.iter().map(|l| l.inter_edges.len()).sum();
        assert_eq!(inter % 2, 0);
        assert_eq!(intra + inter / 2, g.num_edges());
        let covered: usize = locals.iter().map(|l| l.internal_nodes.len()).sum();
        assert_eq!(covered, g.num_nodes());
    }

    #[test]
    fn emd_examples() {
        let g = path4();
        let same = Partition::new(vec![0, 1, 0, 1], 2).unwrap();
        assert_eq!(label_emd(&same, &g), 0.0);
        let pure = Partition::new(vec![0, 0, 1, 1], 2).unwrap();
        assert_eq!(label_emd(&pure, &g), 1.0);
    }

    #[test]
    fn stats_examples() {
        let g = path4();
        let one = partition_stats(&Partition::new(vec![0; 4], 1).unwrap(), &g);
        assert_eq!(one.intra_edge_fraction, 1.0);
        let split = partition_stats(&Partition::new(vec![0, 0, 1, 1], 2).unwrap(), &g);
        assert_eq!(split.intra_edge_fraction, 2.0 / 3.0);
        assert_eq!(split.party_sizes.iter().sum::<usize>(), 4);
    }
}
