//! Federated optimization of task-head parameters over precomputed embeddings.
//!
//! Parameters travel as flat vectors; see [`crate::learn::FlatParams`].

use std::sync::Arc;

use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::{classify_loss_grad, link_loss_grad, ClassifierParams, FlatParams, LabeledPair, LinkModelParams};

/// A party's training data behind a flat-parameter loss.
pub trait LocalObjective: Sync {
    fn num_samples(&self) -> usize;
    /// Mean loss over the party's samples and its gradient.
    fn loss_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Node classification on one party's propagated embeddings.
#[derive(Debug, Clone)]
pub struct NodeObjective {
    /// Rows are the party's internal nodes.
    pub embeddings: Array2<f64>,
    /// Per row of `embeddings`.
    pub labels: Vec<usize>,
    pub train_rows: Vec<usize>,
    pub template: ClassifierParams,
}

impl LocalObjective for NodeObjective {
    fn num_samples(&self) -> usize {
        self.train_rows.len()
    }

    fn loss_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut params = self.template.clone();
        params.set_flat(theta)?;
        let (loss, grads) = classify_loss_grad(&self.embeddings, &params, &self.labels, &self.train_rows)?;
        Ok((loss, grads.to_flat()))
    }
}

/// Link prediction for the pairs a party owns.
///
/// `embeddings` holds every node; the simulator hands parties the foreign
/// endpoint embeddings they need.
#[derive(Debug, Clone)]
pub struct LinkObjective {
    pub embeddings: Arc<Array2<f64>>,
    pub pairs: Vec<LabeledPair>,
    pub template: LinkModelParams,
}

impl LocalObjective for LinkObjective {
    fn num_samples(&self) -> usize {
        self.pairs.len()
    }

    fn loss_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut params = self.template.clone();
        params.set_flat(theta)?;
        let (loss, grads) = link_loss_grad(&self.embeddings, &params, &self.pairs)?;
        Ok((loss, grads.to_flat()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algo", rename_all = "lowercase")]
pub enum ServerAlgorithm {
    FedAvg { lr: f64 },
    FedAdagrad { lr: f64, tau: f64 },
    FedAdam { lr: f64, tau: f64, beta1: f64, beta2: f64 },
    /// Dynamic regularization. `lr` converts averaged contributions back
    /// into model deltas, so it should match the client learning rate.
    FedDyn { lr: f64, alpha: f64 },
}

impl ServerAlgorithm {
    pub fn fedadam(lr: f64, tau: f64) -> Self {
        ServerAlgorithm::FedAdam {
            lr,
            tau,
            beta1: 0.9,
            beta2: 0.99,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ServerAlgorithm::FedAvg { .. } => "fedavg",
            ServerAlgorithm::FedAdagrad { .. } => "fedadagrad",
            ServerAlgorithm::FedAdam { .. } => "fedadam",
            ServerAlgorithm::FedDyn { .. } => "feddyn",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        let lr = match *self {
            ServerAlgorithm::FedAvg { lr } => lr,
            ServerAlgorithm::FedAdagrad { lr, tau } => {
                if !(tau >= 0.0 && tau.is_finite()) {
                    return bad(format!("tau = {tau}"));
                }
                lr
            }
            ServerAlgorithm::FedAdam { lr, tau, beta1, beta2 } => {
                if !(tau >= 0.0 && tau.is_finite()) {
                    return bad(format!("tau = {tau}"));
                }
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                    return bad(format!("betas ({beta1}, {beta2}) outside [0, 1)"));
                }
                lr
            }
            ServerAlgorithm::FedDyn { lr, alpha } => {
                if !(alpha > 0.0 && alpha.is_finite()) {
                    return bad(format!("alpha = {alpha}"));
                }
                lr
            }
        };
        if !(lr > 0.0 && lr.is_finite()) {
            return bad(format!("learning rate {lr}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    pub params: Vec<f64>,
    pub algo: ServerAlgorithm,
    /// First moment (FedAdam).
    pub m: Vec<f64>,
    /// Second moment (FedAdagrad, FedAdam).
    pub v: Vec<f64>,
    /// Running correction (FedDyn).
    pub h: Vec<f64>,
    pub round: usize,
}

impl ServerState {
    pub fn new(params: Vec<f64>, algo: ServerAlgorithm) -> Result<Self> {
        algo.validate()?;
        let n = params.len();
        Ok(Self {
            params,
            algo,
            m: vec![0.0; n],
            v: vec![0.0; n],
            h: vec![0.0; n],
            round: 0,
        })
    }

    /// One server update with every party participating.
    pub fn server_step(&mut self, agg: &[f64]) -> Result<()> {
        self.server_step_partial(agg, 1.0)
    }

    /// One server update; `fraction` is the share of parties that took part,
    /// which only FedDyn's correction term uses.
    pub fn server_step_partial(&mut self, agg: &[f64], fraction: f64) -> Result<()> {
        if agg.len() != self.params.len() {
            return Err(Error::DimensionMismatch(format!(
                "aggregate has {} entries, parameters {}",
                agg.len(),
                self.params.len()
            )));
        }
        // zero denominators only occur with zero updates, which then stay zero
        let ratio = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };
        match self.algo {
            ServerAlgorithm::FedAvg { lr } => {
                for (t, g) in self.params.iter_mut().zip(agg) {
                    *t -= lr * g;
                }
            }
            ServerAlgorithm::FedAdagrad { lr, tau } => {
                for ((t, v), &g) in self.params.iter_mut().zip(&mut self.v).zip(agg) {
                    *v += g * g;
                    *t -= lr * ratio(g, v.sqrt() + tau);
                }
            }
            ServerAlgorithm::FedAdam { lr, tau, beta1, beta2 } => {
                for (((t, m), v), &g) in self.params.iter_mut().zip(&mut self.m).zip(&mut self.v).zip(agg) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *t -= lr * ratio(*m, v.sqrt() + tau);
                }
            }
            ServerAlgorithm::FedDyn { lr, alpha } => {
                for ((t, h), &g) in self.params.iter_mut().zip(&mut self.h).zip(agg) {
                    let delta = -lr * g;
                    *h -= alpha * fraction * delta;
                    *t += delta - *h / alpha;
                }
            }
        }
        self.round += 1;
        Ok(())
    }
}

/// FedDyn's per-party linear term and proximal pull toward the server model.
#[derive(Debug, Clone, Copy)]
pub struct DynPenalty<'a> {
    pub lambda: &'a [f64],
    pub server: &'a [f64],
    pub alpha: f64,
}

impl DynPenalty<'_> {
    /// `−⟨λ, θ⟩ + α/2 ‖θ − θ_s‖²` and its gradient.
    pub fn value_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let mut value = 0.0;
        let grad = theta
            .iter()
            .zip(self.lambda)
            .zip(self.server)
            .map(|((&t, &l), &s)| {
                value += -l * t + 0.5 * self.alpha * (t - s) * (t - s);
                -l + self.alpha * (t - s)
            })
            .collect();
        (value, grad)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Contribution {
    /// Exact gradient after one epoch, `(θ_start − θ_end) / lr` after several.
    pub update: Vec<f64>,
    pub sample_count: usize,
    /// Loss at the start parameters, penalty excluded.
    pub loss: f64,
}

/// Local training on one party. Parties without samples return `None`.
pub fn local_round(
    objective: &dyn LocalObjective,
    theta: &[f64],
    local_epochs: usize,
    lr: f64,
    penalty: Option<DynPenalty<'_>>,
) -> Result<Option<Contribution>> {
    if objective.num_samples() == 0 {
        return Ok(None);
    }
    if local_epochs == 0 {
        return Err(Error::InvalidParameter("local_epochs must be at least 1".into()));
    }
    let full_grad = |t: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (loss, mut grad) = objective.loss_grad(t)?;
        if let Some(p) = &penalty {
            let (_, pg) = p.value_grad(t);
            grad.iter_mut().zip(pg).for_each(|(g, q)| *g += q);
        }
        Ok((loss, grad))
    };
    let (loss, grad) = full_grad(theta)?;
    let update = if local_epochs == 1 {
        grad
    } else {
        let mut current = theta.to_vec();
        let mut grad = grad;
        for epoch in 0..local_epochs {
            if epoch > 0 {
                grad = full_grad(&current)?.1;
            }
            current.iter_mut().zip(&grad).for_each(|(t, g)| *t -= lr * g);
        }
        theta.iter().zip(&current).map(|(s, e)| (s - e) / lr).collect()
    };
    Ok(Some(Contribution {
        update,
        sample_count: objective.num_samples(),
        loss,
    }))
}

/// Sample-count weighted average, accumulated in the order given.
pub fn aggregate(contributions: &[&Contribution]) -> Result<Vec<f64>> {
    let total: usize = contributions.iter().map(|c| c.sample_count).sum();
    if total == 0 {
        return Err(Error::Empty("no non-empty contribution to aggregate".into()));
    }
    let dim = contributions[0].update.len();
    let mut out = vec![0.0; dim];
    for c in contributions {
        if c.update.len() != dim {
            return Err(Error::DimensionMismatch("contributions differ in length".into()));
        }
        let p = c.sample_count as f64 / total as f64;
        out.iter_mut().zip(&c.update).for_each(|(o, u)| *o += p * u);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub participation: f64,
    pub seed: u64,
    /// Client step size for multi-epoch local training.
    pub learning_rate: f64,
    pub algorithm: ServerAlgorithm,
}

impl TrainConfig {
    pub fn fedavg(rounds: usize, lr: f64) -> Self {
        Self {
            rounds,
            local_epochs: 1,
            participation: 1.0,
            seed: 0,
            learning_rate: lr,
            algorithm: ServerAlgorithm::FedAvg { lr },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "participation {} outside (0, 1]",
                self.participation
            )));
        }
        if self.local_epochs == 0 {
            return Err(Error::InvalidParameter("local_epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("learning rate {}", self.learning_rate)));
        }
        self.algorithm.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Train loss over all parties' samples after the server step.
    pub loss: f64,
    pub metric: Option<f64>,
    pub participants: Vec<usize>,
    /// Parameter floats uploaded by participants this round.
    pub floats_sent: u64,
}

pub type Evaluator<'a> = dyn Fn(&[f64]) -> Result<f64> + Sync + 'a;

/// Sample-weighted mean loss over every party with data.
pub fn global_loss<O: LocalObjective>(parties: &[O], theta: &[f64]) -> Result<f64> {
    let mut total = 0usize;
    let mut sum = 0.0;
    for p in parties.iter().filter(|p| p.num_samples() > 0) {
        let (loss, _) = p.loss_grad(theta)?;
        sum += loss * p.num_samples() as f64;
        total += p.num_samples();
    }
    if total == 0 {
        return Err(Error::Empty("no party has training samples".into()));
    }
    Ok(sum / total as f64)
}

/// Round-by-round federated training.
pub struct FederatedTrainer<'a, O: LocalObjective> {
    parties: &'a [O],
    config: TrainConfig,
    state: ServerState,
    trainable: Vec<usize>,
    rng: ChaCha8Rng,
    lambdas: Vec<Vec<f64>>,
    history: Vec<RoundRecord>,
    evaluator: Option<&'a Evaluator<'a>>,
}

impl<'a, O: LocalObjective> FederatedTrainer<'a, O> {
    pub fn new(parties: &'a [O], init: Vec<f64>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let trainable: Vec<usize> = (0..parties.len()).filter(|&i| parties[i].num_samples() > 0).collect();
        if trainable.is_empty() {
            return Err(Error::Empty("no party has training samples".into()));
        }
        let dim = init.len();
        Ok(Self {
            parties,
            config,
            state: ServerState::new(init, config.algorithm)?,
            trainable,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            lambdas: vec![vec![0.0; dim]; parties.len()],
            history: Vec::new(),
            evaluator: None,
        })
    }

    pub fn with_evaluator(mut self, evaluator: &'a Evaluator<'a>) -> Self {
        self.evaluator = Some(evaluator);
        self
    }

    pub fn params(&self) -> &[f64] {
        &self.state.params
    }

    pub fn state(&self) -> &ServerState {
        &self.state
    }

    pub fn history(&self) -> &[RoundRecord] {
        &self.history
    }

    fn sample_participants(&mut self) -> Vec<usize> {
        let m = self.trainable.len();
        let k = ((self.config.participation * m as f64).round() as usize).clamp(1, m);
        if k == m {
            return self.trainable.clone();
        }
        let mut chosen: Vec<usize> = self.trainable.choose_multiple(&mut self.rng, k).copied().collect();
        chosen.sort_unstable();
        chosen
    }

    pub fn step(&mut self) -> Result<&RoundRecord> {
        let participants = self.sample_participants();
        let theta = self.state.params.clone();
        let cfg = self.config;
        let feddyn_alpha = match cfg.algorithm {
            ServerAlgorithm::FedDyn { alpha, .. } => Some(alpha),
            _ => None,
        };
        let lambdas = &self.lambdas;
        let parties = self.parties;
        let contributions: Vec<Contribution> = participants
            .par_iter()
            .map(|&i| {
                let penalty = feddyn_alpha.map(|alpha| DynPenalty {
                    lambda: &lambdas[i],
                    server: &theta,
                    alpha,
                });
                local_round(&parties[i], &theta, cfg.local_epochs, cfg.learning_rate, penalty)
                    .map(|c| c.expect("sampled parties have samples"))
            })
            .collect::<Result<_>>()?;

        if let Some(alpha) = feddyn_alpha {
            // λ_i ← λ_i − α(θ_i − θ), with θ_i − θ = −lr · update
            for (&i, c) in participants.iter().zip(&contributions) {
                for (l, u) in self.lambdas[i].iter_mut().zip(&c.update) {
                    *l += alpha * cfg.learning_rate * u;
                }
            }
        }

        let refs: Vec<&Contribution> = contributions.iter().collect();
        let agg = aggregate(&refs)?;
        let fraction = participants.len() as f64 / self.trainable.len() as f64;
        self.state.server_step_partial(&agg, fraction)?;

        let loss = global_loss(self.parties, &self.state.params)?;
        let metric = match self.evaluator {
            Some(eval) => Some(eval(&self.state.params)?),
            None => None,
        };
        let floats_sent = (self.state.params.len() * participants.len()) as u64;
        self.history.push(RoundRecord {
            round: self.state.round,
            loss,
            metric,
            participants,
            floats_sent,
        });
        Ok(self.history.last().unwrap())
    }

    pub fn run(mut self) -> Result<(Vec<f64>, Vec<RoundRecord>)> {
        for _ in 0..self.config.rounds {
            self.step()?;
        }
        Ok((self.state.params, self.history))
    }
}

/// Runs `config.rounds` rounds and returns final parameters with the history.
pub fn federated_train<O: LocalObjective>(
    parties: &[O],
    init: Vec<f64>,
    config: TrainConfig,
    evaluator: Option<&Evaluator<'_>>,
) -> Result<(Vec<f64>, Vec<RoundRecord>)> {
    let trainer = FederatedTrainer::new(parties, init, config)?;
    match evaluator {
        Some(e) => trainer.with_evaluator(e).run(),
        None => trainer.run(),
    }
}

/// Full-batch gradient descent on one objective; returns the parameters
/// after every step.
pub fn centralized_train(objective: &dyn LocalObjective, init: Vec<f64>, lr: f64, steps: usize) -> Result<Vec<Vec<f64>>> {
    let mut theta = init;
    let mut trajectory = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (_, grad) = objective.loss_grad(&theta)?;
        theta.iter_mut().zip(&grad).for_each(|(t, g)| *t -= lr * g);
        trajectory.push(theta.clone());
    }
    Ok(trajectory)
}
