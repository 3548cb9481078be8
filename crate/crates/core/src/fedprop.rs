//! Two-step federated propagation over decoupled graphs.
//!
//! Each layer runs an internal propagation on every party's internal graph,
//! exchanges placeholder partial sums through a barrier, and finishes with a
//! border propagation that folds the received partial sums into each
//! internal node. With `β_v = (1+d_v)^{-(1-r)}` on the source and
//! `γ_u = (1+d_u)^{-r}` on the target, the product `β_v γ_u` is exactly the
//! centralized coefficient, so the result matches a propagation on the
//! global graph.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decouple::{graph_decoupling, BorderGraph, InternalGraph, LocalGraph};
use crate::error::{Error, Result};
use crate::graph::{
    centralized_appnp, degree_power, propagate_once, Activation, GlobalGraph,
};

#[derive(Debug, Clone, PartialEq)]
pub enum PropagationVariant {
    /// Graph convolution with one weight matrix per layer.
    Gcn {
        weights: Vec<Array2<f64>>,
        activation: Activation,
    },
    Sgc,
    /// Personalized PageRank with restart probability `alpha ∈ (0, 1]`,
    /// anchored at the raw input features.
    Appnp { alpha: f64 },
    /// Generalized PageRank coefficients `β_v = (1+d_v)^{r-1}`, `γ_u = (1+d_u)^{-r}`.
    ///
    /// One step computes `D̃^{-r} Ã D̃^{r-1} H`, which is
    /// [`propagate_once`] with exponent `1 - r`.
    Gpr { r: f64 },
}

impl PropagationVariant {
    /// Normalization exponent `r` used by the β/γ coefficients.
    pub fn exponent(&self) -> f64 {
        match self {
            PropagationVariant::Gpr { r } => *r,
            _ => 0.5,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PropagationVariant::Gcn { .. } => "gcn",
            PropagationVariant::Sgc => "sgc",
            PropagationVariant::Appnp { .. } => "appnp",
            PropagationVariant::Gpr { .. } => "gpr",
        }
    }

    /// Checks parameter ranges and, for GCN, that the weights chain from
    /// `input_dim` over exactly `layers` layers.
    pub fn validate(&self, layers: usize, input_dim: usize) -> Result<()> {
        match self {
            PropagationVariant::Sgc => Ok(()),
            PropagationVariant::Appnp { alpha } => {
                if *alpha > 0.0 && *alpha <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!("alpha = {alpha} outside (0, 1]")))
                }
            }
            PropagationVariant::Gpr { r } => {
                if (0.0..=1.0).contains(r) {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!("r = {r} outside [0, 1]")))
                }
            }
            PropagationVariant::Gcn { weights, .. } => {
                if weights.len() != layers {
                    return Err(Error::DimensionMismatch(format!(
                        "{} GCN weight matrices for {layers} layers",
                        weights.len()
                    )));
                }
                let mut dim = input_dim;
                for (l, w) in weights.iter().enumerate() {
                    if w.nrows() != dim {
                        return Err(Error::DimensionMismatch(format!(
                            "GCN layer {l} expects {} inputs, gets {dim}",
                            w.nrows()
                        )));
                    }
                    dim = w.ncols();
                }
                Ok(())
            }
        }
    }
}

/// Source-side coefficient `(1+d_v)^{-(1-r)}`.
pub fn beta_coeff(sla_degree: usize, variant: &PropagationVariant) -> f64 {
    degree_power(sla_degree, variant.exponent() - 1.0)
}

/// Target-side coefficient `(1+d_u)^{-r}`.
pub fn gamma_coeff(sla_degree: usize, variant: &PropagationVariant) -> f64 {
    degree_power(sla_degree, -variant.exponent())
}

/// Intermediate `l + ½` embeddings of one party, one row per internal-graph
/// node (internal nodes first, then placeholders).
#[derive(Debug, Clone, PartialEq)]
pub struct HalfStepBuffer {
    pub party: usize,
    pub layer: usize,
    pub rows: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub from_party: usize,
    pub to_party: usize,
    pub node: usize,
    pub layer: usize,
    pub payload: Vec<f64>,
}

/// Work and traffic counters. Only ever incremented.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostMeter {
    pub mul_adds: u64,
    pub floats_sent: u64,
    pub exchange_rounds: u64,
}

impl CostMeter {
    pub fn absorb(&mut self, other: &CostMeter) {
        self.mul_adds += other.mul_adds;
        self.floats_sent += other.floats_sent;
        self.exchange_rounds += other.exchange_rounds;
    }
}

/// Internal propagation on one party's internal graph.
///
/// `h` holds one row per internal node; placeholders are pinned to zero.
/// Every node, placeholders included, gets `Σ_{v ∈ N(u) ∪ {u}} β_v h_v`,
/// right-multiplied by the layer weight for GCN.
pub fn internal_propagate(
    ig: &InternalGraph,
    h: &Array2<f64>,
    variant: &PropagationVariant,
    layer: usize,
    meter: &mut CostMeter,
) -> Result<HalfStepBuffer> {
    if h.nrows() != ig.num_internal {
        let missing = ig.internal_id(h.nrows().min(ig.num_internal)).unwrap_or(usize::MAX);
        return Err(Error::MissingEmbedding {
            party: ig.party,
            node: missing,
        });
    }
    let dim = h.ncols();
    let beta: Vec<f64> = ig.sla_degree.iter().map(|&d| beta_coeff(d, variant)).collect();
    let mut rows = Array2::<f64>::zeros((ig.num_nodes(), dim));
    for (u, mut out) in rows.axis_iter_mut(Axis(0)).enumerate() {
        let neighbours = &ig.adjacency[u];
        let split = neighbours.partition_point(|&v| v < u);
        let sources = neighbours[..split]
            .iter()
            .chain(std::iter::once(&u))
            .chain(&neighbours[split..]);
        for &v in sources {
            if ig.is_placeholder(v) {
                continue;
            }
            out.scaled_add(beta[v], &h.row(v));
            meter.mul_adds += dim as u64;
        }
    }
    if let PropagationVariant::Gcn { weights, .. } = variant {
        let w = weights.get(layer).ok_or_else(|| {
            Error::DimensionMismatch(format!("no GCN weight for layer {layer}"))
        })?;
        if w.nrows() != dim {
            return Err(Error::DimensionMismatch(format!(
                "GCN layer {layer} weight has {} rows, embeddings have {dim} columns",
                w.nrows()
            )));
        }
        meter.mul_adds += (rows.nrows() * w.nrows() * w.ncols()) as u64;
        rows = rows.dot(w);
    }
    Ok(HalfStepBuffer {
        party: ig.party,
        layer,
        rows,
    })
}

/// Turns every placeholder's half-step value into a message for the party
/// owning the node it stands in for. Inboxes are indexed by party and
/// ordered by `(from_party, node)`.
pub fn route_messages(
    half_steps: &[HalfStepBuffer],
    internals: &[InternalGraph],
    meter: &mut CostMeter,
) -> Result<Vec<Vec<Message>>> {
    if half_steps.len() != internals.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} half-step buffers for {} parties",
            half_steps.len(),
            internals.len()
        )));
    }
    let m = internals.len();
    let mut inboxes: Vec<Vec<Message>> = vec![Vec::new(); m];
    for (buffer, ig) in half_steps.iter().zip(internals) {
        for (local, placeholder) in ig.placeholders() {
            let owner = match ig.placeholder_owner.get(&placeholder) {
                Some(&o) if o < m && o != ig.party => o,
                _ => {
                    return Err(Error::MissingOwner {
                        party: ig.party,
                        node: placeholder.node,
                    })
                }
            };
            let payload = buffer.rows.row(local).to_vec();
            meter.floats_sent += payload.len() as u64;
            inboxes[owner].push(Message {
                from_party: ig.party,
                to_party: owner,
                node: placeholder.node,
                layer: buffer.layer,
                payload,
            });
        }
    }
    for inbox in &mut inboxes {
        inbox.sort_by_key(|msg| (msg.from_party, msg.node));
    }
    meter.exchange_rounds += 1;
    Ok(inboxes)
}

/// Deliberate corruption of one γ coefficient, for negative-control runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaFault {
    pub party: usize,
    pub node: usize,
    pub factor: f64,
}

/// Border propagation for every internal node of one party.
///
/// `next_u = γ_u ĥ_u + Σ_{j ∈ B_u} γ_u · payload(u, j)`, self-term first then
/// ascending foreign party. GCN then applies its activation; APPNP blends
/// with the anchor rows `h0` as `(1-α)·next + α·h0`.
#[allow(clippy::too_many_arguments)]
pub fn border_propagate(
    bg: &BorderGraph,
    ig: &InternalGraph,
    own_half: &HalfStepBuffer,
    inbox: &[Message],
    variant: &PropagationVariant,
    layer: usize,
    h0: &Array2<f64>,
    meter: &mut CostMeter,
) -> Result<Array2<f64>> {
    border_propagate_with_fault(bg, ig, own_half, inbox, variant, layer, h0, meter, None)
}

#[allow(clippy::too_many_arguments)]
fn border_propagate_with_fault(
    bg: &BorderGraph,
    ig: &InternalGraph,
    own_half: &HalfStepBuffer,
    inbox: &[Message],
    variant: &PropagationVariant,
    _layer: usize,
    h0: &Array2<f64>,
    meter: &mut CostMeter,
    fault: Option<&GammaFault>,
) -> Result<Array2<f64>> {
    let party = bg.party;
    let dim = own_half.rows.ncols();

    let mut payloads: BTreeMap<(usize, usize), &[f64]> = BTreeMap::new();
    for msg in inbox {
        let expected = msg.to_party == party && bg.slots_of(msg.node).contains(&msg.from_party);
        if !expected {
            return Err(Error::SlotPayload {
                party,
                node: msg.node,
                from: msg.from_party,
                reason: "unexpected",
            });
        }
        if msg.payload.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "payload for node {} from party {} has length {}, expected {dim}",
                msg.node,
                msg.from_party,
                msg.payload.len()
            )));
        }
        if payloads.insert((msg.node, msg.from_party), &msg.payload).is_some() {
            return Err(Error::SlotPayload {
                party,
                node: msg.node,
                from: msg.from_party,
                reason: "duplicate",
            });
        }
    }

    let mut out = Array2::<f64>::zeros((ig.num_internal, dim));
    for (k, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let u = ig.internal_id(k).expect("internal rows come first");
        let mut gamma = gamma_coeff(ig.sla_degree[k], variant);
        if let Some(f) = fault {
            if f.party == party && f.node == u {
                gamma *= f.factor;
            }
        }
        row.scaled_add(gamma, &own_half.rows.row(k));
        meter.mul_adds += dim as u64;
        for &j in bg.slots_of(u) {
            let payload = payloads.get(&(u, j)).ok_or(Error::SlotPayload {
                party,
                node: u,
                from: j,
                reason: "missing",
            })?;
            for (x, &p) in row.iter_mut().zip(payload.iter()) {
                *x += gamma * p;
            }
            meter.mul_adds += dim as u64;
        }
    }

    match variant {
        PropagationVariant::Gcn { activation, .. } => {
            out.mapv_inplace(|x| activation.apply(x));
        }
        PropagationVariant::Appnp { alpha } => {
            if h0.dim() != out.dim() {
                return Err(Error::DimensionMismatch(format!(
                    "APPNP anchor is {:?}, embeddings are {:?}",
                    h0.dim(),
                    out.dim()
                )));
            }
            out.zip_mut_with(h0, |x, &a| *x = (1.0 - alpha) * *x + alpha * a);
            meter.mul_adds += out.len() as u64;
        }
        PropagationVariant::Sgc | PropagationVariant::Gpr { .. } => {}
    }
    Ok(out)
}

/// One party's decoupled graphs together with its raw feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PartyGraphs {
    pub internal: InternalGraph,
    pub border: BorderGraph,
    pub features: Array2<f64>,
}

impl PartyGraphs {
    /// Global ids of the party's internal nodes, aligned with embedding rows.
    pub fn internal_nodes(&self) -> Vec<usize> {
        (0..self.internal.num_internal)
            .map(|k| self.internal.internal_id(k).unwrap())
            .collect()
    }
}

pub fn decouple_parties(locals: &[LocalGraph]) -> Result<Vec<PartyGraphs>> {
    locals
        .iter()
        .map(|lg| {
            let (internal, border) = graph_decoupling(lg)?;
            Ok(PartyGraphs {
                internal,
                border,
                features: lg.features.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Order in which parties execute each half-step when running serially.
    pub schedule: Option<Vec<usize>>,
    /// Run the per-party half-steps on the rayon pool.
    pub parallel: bool,
    /// Keep every layer's embeddings, not just the last.
    pub record_layers: bool,
    pub gamma_fault: Option<GammaFault>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FedCogRun {
    /// Final embeddings per party, rows aligned with the party's internal nodes.
    pub embeddings: Vec<Array2<f64>>,
    /// `per_layer[l][i]`: party `i` after layer `l + 1` (empty unless recorded).
    pub per_layer: Vec<Vec<Array2<f64>>>,
    pub meter: CostMeter,
}

/// `layers` rounds of internal propagation, exchange, and border propagation.
pub fn fedcog_run(
    parties: &[PartyGraphs],
    layers: usize,
    variant: &PropagationVariant,
) -> Result<(Vec<Array2<f64>>, CostMeter)> {
    let run = fedcog_run_with(parties, layers, variant, &RunOptions::default())?;
    Ok((run.embeddings, run.meter))
}

pub fn fedcog_run_with(
    parties: &[PartyGraphs],
    layers: usize,
    variant: &PropagationVariant,
    options: &RunOptions,
) -> Result<FedCogRun> {
    let m = parties.len();
    if m == 0 {
        return Err(Error::Empty("no parties".into()));
    }
    for (i, p) in parties.iter().enumerate() {
        if p.internal.party != i || p.border.party != i {
            return Err(Error::InvalidPartition(format!(
                "party at position {i} is labelled {}",
                p.internal.party
            )));
        }
        if p.features.nrows() != p.internal.num_internal {
            return Err(Error::DimensionMismatch(format!(
                "party {i}: {} feature rows for {} internal nodes",
                p.features.nrows(),
                p.internal.num_internal
            )));
        }
    }
    let input_dim = parties[0].features.ncols();
    if parties.iter().any(|p| p.features.ncols() != input_dim) {
        return Err(Error::DimensionMismatch("parties disagree on feature width".into()));
    }
    variant.validate(layers, input_dim)?;

    let order: Vec<usize> = match &options.schedule {
        Some(s) => {
            let mut sorted = s.clone();
            sorted.sort_unstable();
            if sorted != (0..m).collect::<Vec<_>>() {
                return Err(Error::InvalidParameter("schedule must permute the parties".into()));
            }
            s.clone()
        }
        None => (0..m).collect(),
    };
    let internals: Vec<InternalGraph> = parties.iter().map(|p| p.internal.clone()).collect();

    let mut meter = CostMeter::default();
    let mut current: Vec<Array2<f64>> = parties.iter().map(|p| p.features.clone()).collect();
    let mut per_layer = Vec::new();

    for layer in 0..layers {
        let internal_step = |i: usize| -> Result<(HalfStepBuffer, CostMeter)> {
            let mut local = CostMeter::default();
            let half = internal_propagate(&parties[i].internal, &current[i], variant, layer, &mut local)?;
            Ok((half, local))
        };
        let halves = run_parties(&order, options.parallel, internal_step)?;
        let mut half_steps = Vec::with_capacity(m);
        for (half, local) in halves {
            meter.absorb(&local);
            half_steps.push(half);
        }

        // barrier: nothing crosses parties except through the inboxes
        let inboxes = route_messages(&half_steps, &internals, &mut meter)?;

        let border_step = |i: usize| -> Result<(Array2<f64>, CostMeter)> {
            let mut local = CostMeter::default();
            let next = border_propagate_with_fault(
                &parties[i].border,
                &parties[i].internal,
                &half_steps[i],
                &inboxes[i],
                variant,
                layer,
                &parties[i].features,
                &mut local,
                options.gamma_fault.as_ref(),
            )?;
            Ok((next, local))
        };
        let nexts = run_parties(&order, options.parallel, border_step)?;
        current = nexts
            .into_iter()
            .map(|(next, local)| {
                meter.absorb(&local);
                next
            })
            .collect();
        if options.record_layers {
            per_layer.push(current.clone());
        }
    }

    Ok(FedCogRun {
        embeddings: current,
        per_layer,
        meter,
    })
}

/// Runs `step` for every party in `order`, returning results indexed by party.
fn run_parties<T, F>(order: &[usize], parallel: bool, step: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let mut slots: Vec<Option<T>> = (0..order.len()).map(|_| None).collect();
    if parallel {
        let results: Vec<(usize, Result<T>)> = order.par_iter().map(|&i| (i, step(i))).collect();
        for (i, r) in results {
            slots[i] = Some(r?);
        }
    } else {
        for &i in order {
            slots[i] = Some(step(i)?);
        }
    }
    Ok(slots.into_iter().map(|s| s.expect("every party ran")).collect())
}

/// Scatters per-party embedding rows into one `num_nodes`-row matrix.
pub fn gather_embeddings(parties: &[PartyGraphs], embeddings: &[Array2<f64>], num_nodes: usize) -> Result<Array2<f64>> {
    let dim = embeddings.first().map(|e| e.ncols()).unwrap_or(0);
    let mut out = Array2::<f64>::zeros((num_nodes, dim));
    let mut seen = vec![false; num_nodes];
    for (p, e) in parties.iter().zip(embeddings) {
        for (k, u) in p.internal_nodes().into_iter().enumerate() {
            if u >= num_nodes || seen[u] {
                return Err(Error::InvalidPartition(format!("node {u} placed twice or out of range")));
            }
            seen[u] = true;
            out.row_mut(u).assign(&e.row(k));
        }
    }
    if let Some(u) = seen.iter().position(|s| !s) {
        return Err(Error::InvalidPartition(format!("node {u} owned by no party")));
    }
    Ok(out)
}

/// Centralized counterpart of each variant, one matrix per layer `1..=layers`.
pub fn centralized_reference_layers(
    g: &GlobalGraph,
    variant: &PropagationVariant,
    layers: usize,
) -> Result<Vec<Array2<f64>>> {
    variant.validate(layers, g.feature_dim())?;
    let mut out = Vec::with_capacity(layers);
    let mut h = g.features().clone();
    for l in 0..layers {
        h = match variant {
            PropagationVariant::Sgc => propagate_once(g, &h, 0.5)?,
            PropagationVariant::Gpr { r } => propagate_once(g, &h, 1.0 - r)?,
            PropagationVariant::Appnp { alpha } => {
                let mut next = propagate_once(g, &h, 0.5)?;
                next.zip_mut_with(g.features(), |x, &a| *x = (1.0 - alpha) * *x + alpha * a);
                next
            }
            PropagationVariant::Gcn { weights, activation } => {
                let mut next = propagate_once(g, &h, 0.5)?.dot(&weights[l]);
                next.mapv_inplace(|x| activation.apply(x));
                next
            }
        };
        out.push(h.clone());
    }
    Ok(out)
}

/// Centralized counterpart of `fedcog_run` for the same variant.
pub fn centralized_reference(g: &GlobalGraph, variant: &PropagationVariant, layers: usize) -> Result<Array2<f64>> {
    if layers == 0 {
        return Ok(g.features().clone());
    }
    if let PropagationVariant::Appnp { alpha } = variant {
        return centralized_appnp(g, layers, *alpha);
    }
    Ok(centralized_reference_layers(g, variant, layers)?.pop().unwrap())
}

/// Largest entrywise relative error `|a - b| / max(|b|, floor)`.
pub fn max_relative_error(actual: &Array2<f64>, expected: &Array2<f64>, floor: f64) -> f64 {
    actual
        .iter()
        .zip(expected.iter())
        .map(|(a, b)| (a - b).abs() / b.abs().max(floor))
        .fold(0.0, f64::max)
}
