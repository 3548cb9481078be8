//! Task heads on top of propagated embeddings, data splits and metrics.

use std::collections::HashSet;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GlobalGraph;

/// Parameters that can be viewed as one flat vector, the form federated
/// optimizers work on.
pub trait FlatParams {
    fn num_params(&self) -> usize;
    fn to_flat(&self) -> Vec<f64>;
    /// Overwrites every parameter from `flat`, in `to_flat` order.
    fn set_flat(&mut self, flat: &[f64]) -> Result<()>;
}

fn check_flat_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch(format!(
            "flat parameter vector has {got} entries, model has {expected}"
        )));
    }
    Ok(())
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `inputs × outputs`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

pub const DEFAULT_HIDDEN_WIDTH: usize = 64;

/// Softmax classifier: dense layers with ReLU between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub layers: Vec<DenseLayer>,
}

impl ClassifierParams {
    /// Single linear layer, all zeros.
    pub fn linear(input_dim: usize, num_classes: usize) -> Self {
        Self {
            layers: vec![DenseLayer {
                weight: Array2::zeros((input_dim, num_classes)),
                bias: Array1::zeros(num_classes),
            }],
        }
    }

    /// One ReLU hidden layer, Glorot-uniform weights, zero biases.
    pub fn with_hidden(input_dim: usize, hidden: usize, num_classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            layers: vec![
                DenseLayer {
                    weight: glorot(input_dim, hidden, &mut rng),
                    bias: Array1::zeros(hidden),
                },
                DenseLayer {
                    weight: glorot(hidden, num_classes, &mut rng),
                    bias: Array1::zeros(num_classes),
                },
            ],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().unwrap().weight.ncols()
    }

    fn check_input(&self, h: &Array2<f64>) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Empty("classifier has no layers".into()));
        }
        if h.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "embeddings have {} columns, classifier expects {}",
                h.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Pre-activations of every layer for the selected rows.
    fn forward(&self, x: Array2<f64>) -> Vec<Array2<f64>> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x;
        for (k, layer) in self.layers.iter().enumerate() {
            let z = a.dot(&layer.weight) + &layer.bias;
            a = if k + 1 < self.layers.len() {
                z.mapv(|v| v.max(0.0))
            } else {
                z.clone()
            };
            pre.push(z);
        }
        pre
    }

    pub fn logits(&self, h: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(h)?;
        Ok(self.forward(h.clone()).pop().unwrap())
    }

    /// Arg-max class per row (lowest class id on ties).
    pub fn predict(&self, h: &Array2<f64>) -> Result<Vec<usize>> {
        let logits = self.logits(h)?;
        Ok(logits
            .axis_iter(Axis(0))
            .map(|row| {
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect())
    }

    fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }
}

impl FlatParams for ClassifierParams {
    fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_flat_len(self.num_params(), flat.len())?;
        let mut it = flat.iter();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = *it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = *it.next().unwrap());
        }
        Ok(())
    }
}

fn log_softmax_row(row: ndarray::ArrayView1<f64>) -> Array1<f64> {
    let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.mapv(|v| v - lse)
}

/// Mean softmax cross-entropy over the rows in `mask` and its exact gradient.
///
/// `labels[u]` is the class of row `u` of `h`.
pub fn classify_loss_grad(
    h: &Array2<f64>,
    params: &ClassifierParams,
    labels: &[usize],
    mask: &[usize],
) -> Result<(f64, ClassifierParams)> {
    if mask.is_empty() {
        return Err(Error::Empty("classification mask".into()));
    }
    params.check_input(h)?;
    if labels.len() != h.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} embedding rows",
            labels.len(),
            h.nrows()
        )));
    }
    let classes = params.num_classes();
    if let Some(&u) = mask.iter().find(|&&u| u >= h.nrows() || labels[u] >= classes) {
        return Err(Error::InvalidParameter(format!("mask row {u} out of range or mislabelled")));
    }

    let b = mask.len() as f64;
    let x = h.select(Axis(0), mask);
    let pre = params.forward(x.clone());
    let logits = pre.last().unwrap();

    let mut loss = 0.0;
    let mut dz = Array2::<f64>::zeros(logits.raw_dim());
    for (i, &u) in mask.iter().enumerate() {
        let logp = log_softmax_row(logits.row(i));
        loss -= logp[labels[u]];
        let mut d = dz.row_mut(i);
        d.assign(&logp.mapv(f64::exp));
        d[labels[u]] -= 1.0;
    }
    loss /= b;
    dz /= b;

    let mut grads = params.zeros_like();
    for k in (0..params.layers.len()).rev() {
        let input = if k == 0 {
            x.clone()
        } else {
            pre[k - 1].mapv(|v| v.max(0.0))
        };
        grads.layers[k].weight = input.t().dot(&dz);
        grads.layers[k].bias = dz.sum_axis(Axis(0));
        if k > 0 {
            let mut da = dz.dot(&params.layers[k].weight.t());
            da.zip_mut_with(&pre[k - 1], |g, &z| {
                if z <= 0.0 {
                    *g = 0.0
                }
            });
            dz = da;
        }
    }
    Ok((loss, grads))
}

/// Width of the link-prediction embedding.
pub const LINK_EMBED_DIM: usize = 100;

/// Linear projection applied to propagated embeddings before the dot-product scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkModelParams {
    /// `embedding_dim × LINK_EMBED_DIM`
    pub projection: Array2<f64>,
}

impl LinkModelParams {
    /// Glorot-uniform projection to [`LINK_EMBED_DIM`] outputs.
    ///
    /// An all-zero projection is a stationary point of the loss, so the
    /// head always starts from random weights.
    pub fn random(input_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            projection: glorot(input_dim, LINK_EMBED_DIM, &mut rng),
        }
    }

    pub fn zeros(input_dim: usize) -> Self {
        Self {
            projection: Array2::zeros((input_dim, LINK_EMBED_DIM)),
        }
    }
}

impl FlatParams for LinkModelParams {
    fn num_params(&self) -> usize {
        self.projection.len()
    }

    fn to_flat(&self) -> Vec<f64> {
        self.projection.iter().copied().collect()
    }

    fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_flat_len(self.num_params(), flat.len())?;
        self.projection.iter_mut().zip(flat).for_each(|(p, &f)| *p = f);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledPair {
    pub u: usize,
    pub v: usize,
    pub positive: bool,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn check_pairs(h: &Array2<f64>, params: &LinkModelParams, pairs: impl Iterator<Item = (usize, usize)>) -> Result<()> {
    if h.ncols() != params.projection.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "embeddings have {} columns, projection expects {}",
            h.ncols(),
            params.projection.nrows()
        )));
    }
    for (u, v) in pairs {
        if u >= h.nrows() || v >= h.nrows() {
            return Err(Error::InvalidParameter(format!("pair ({u}, {v}) out of range")));
        }
    }
    Ok(())
}

/// Raw scores `(h_u P) · (h_v P)` before the sigmoid.
fn link_logits(h: &Array2<f64>, params: &LinkModelParams, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    check_pairs(h, params, pairs.iter().copied())?;
    let z = h.dot(&params.projection);
    Ok(pairs.iter().map(|&(u, v)| z.row(u).dot(&z.row(v))).collect())
}

/// `sigmoid((h_u P) · (h_v P))` per pair.
pub fn link_scores(h: &Array2<f64>, params: &LinkModelParams, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    Ok(link_logits(h, params, pairs)?.into_iter().map(sigmoid).collect())
}

/// Mean binary cross-entropy of the dot-product scorer and its exact gradient.
pub fn link_loss_grad(
    h: &Array2<f64>,
    params: &LinkModelParams,
    batch: &[LabeledPair],
) -> Result<(f64, LinkModelParams)> {
    if batch.is_empty() {
        return Err(Error::Empty("link batch".into()));
    }
    check_pairs(h, params, batch.iter().map(|p| (p.u, p.v)))?;

    // restrict the projection to the rows the batch touches
    let mut rows: Vec<usize> = batch.iter().flat_map(|p| [p.u, p.v]).collect();
    rows.sort_unstable();
    rows.dedup();
    let local = |node: usize| rows.binary_search(&node).unwrap();
    let x = h.select(Axis(0), &rows);
    let z = x.dot(&params.projection);

    let b = batch.len() as f64;
    let mut loss = 0.0;
    // dL/dz for every touched row
    let mut dz = Array2::<f64>::zeros(z.raw_dim());
    for pair in batch {
        let (iu, iv) = (local(pair.u), local(pair.v));
        let logit = z.row(iu).dot(&z.row(iv));
        let y = if pair.positive { 1.0 } else { 0.0 };
        loss += softplus(logit) - y * logit;
        let c = (sigmoid(logit) - y) / b;
        let zu = z.row(iu).to_owned();
        let zv = z.row(iv).to_owned();
        dz.row_mut(iu).scaled_add(c, &zv);
        dz.row_mut(iv).scaled_add(c, &zu);
    }
    Ok((
        loss / b,
        LinkModelParams {
            projection: x.t().dot(&dz),
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSplit {
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

/// `per_class` training nodes from every class, then `test_size` test nodes
/// drawn uniformly from the rest.
pub fn sample_node_split(g: &GlobalGraph, per_class: usize, test_size: usize, seed: u64) -> Result<NodeSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut taken = vec![false; g.num_nodes()];
    for c in 0..g.num_classes() {
        let mut members: Vec<usize> = (0..g.num_nodes()).filter(|&u| g.labels()[u] == c).collect();
        if members.len() < per_class {
            return Err(Error::Insufficient(format!(
                "class {c} has {} nodes, {per_class} requested",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for &u in &members[..per_class] {
            taken[u] = true;
            train.push(u);
        }
    }
    let mut rest: Vec<usize> = (0..g.num_nodes()).filter(|&u| !taken[u]).collect();
    if rest.len() < test_size {
        return Err(Error::Insufficient(format!(
            "{} nodes left for a test set of {test_size}",
            rest.len()
        )));
    }
    rest.shuffle(&mut rng);
    let mut test = rest[..test_size].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(NodeSplit {
        train_ids: train,
        test_ids: test,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSplit {
    pub train_pos: Vec<(usize, usize)>,
    pub train_neg: Vec<(usize, usize)>,
    pub test_pos: Vec<(usize, usize)>,
    pub test_neg: Vec<(usize, usize)>,
}

impl LinkSplit {
    fn labelled(pos: &[(usize, usize)], neg: &[(usize, usize)]) -> Vec<LabeledPair> {
        pos.iter()
            .map(|&(u, v)| LabeledPair { u, v, positive: true })
            .chain(neg.iter().map(|&(u, v)| LabeledPair { u, v, positive: false }))
            .collect()
    }

    pub fn train_batch(&self) -> Vec<LabeledPair> {
        Self::labelled(&self.train_pos, &self.train_neg)
    }

    pub fn test_batch(&self) -> Vec<LabeledPair> {
        Self::labelled(&self.test_pos, &self.test_neg)
    }
}

/// Edges split into train/test positives, each paired with as many
/// distinct non-edges drawn uniformly at random.
pub fn sample_link_split(g: &GlobalGraph, train_frac: f64, seed: u64) -> Result<LinkSplit> {
    let e = g.num_edges();
    if e < 4 {
        return Err(Error::Insufficient(format!("{e} edges, at least 4 needed")));
    }
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::InvalidParameter(format!("train_frac = {train_frac} outside (0, 1)")));
    }
    let n = g.num_nodes();
    let non_edges = n * (n - 1) / 2 - e;
    if non_edges < e {
        return Err(Error::Insufficient(format!(
            "{non_edges} non-edges cannot balance {e} positives"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positives = g.edges().to_vec();
    positives.shuffle(&mut rng);
    let n_train = ((train_frac * e as f64).round() as usize).clamp(1, e - 1);
    let test_pos = positives.split_off(n_train);
    let train_pos = positives;

    let negatives: Vec<(usize, usize)> = if 2 * e > non_edges {
        let mut all: Vec<(usize, usize)> = (0..n)
            .flat_map(|u| ((u + 1)..n).map(move |v| (u, v)))
            .filter(|&(u, v)| !g.has_edge(u, v))
            .collect();
        all.shuffle(&mut rng);
        all.truncate(e);
        all
    } else {
        let mut seen = HashSet::with_capacity(e);
        let mut out = Vec::with_capacity(e);
        while out.len() < e {
            let u = rng.random_range(0..n);
            let v = rng.random_range(0..n);
            if u == v || g.has_edge(u, v) {
                continue;
            }
            let pair = (u.min(v), u.max(v));
            if seen.insert(pair) {
                out.push(pair);
            }
        }
        out
    };
    let (train_neg, test_neg) = negatives.split_at(train_pos.len());
    Ok(LinkSplit {
        train_neg: train_neg.to_vec(),
        test_neg: test_neg.to_vec(),
        train_pos,
        test_pos,
    })
}

/// Fraction of `mask` rows where prediction and truth agree.
pub fn accuracy(pred_labels: &[usize], true_labels: &[usize], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::Empty("accuracy mask".into()));
    }
    let correct = mask
        .iter()
        .filter(|&&u| pred_labels[u] == true_labels[u])
        .count();
    Ok(correct as f64 / mask.len() as f64)
}

/// Area under the ROC curve via the Mann–Whitney statistic; tied scores count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Insufficient("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // average 1-based ranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let p = positives as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}
