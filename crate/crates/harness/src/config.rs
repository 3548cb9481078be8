//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use fedcog_core::fedtrain::{ServerAlgorithm, TrainConfig};
use fedcog_core::graph::SbmSpec;
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    Sbm(SbmSpec),
    /// Tab-separated content and cites files; relative paths resolve
    /// against the config file's directory.
    Citation { content: PathBuf, cites: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    /// Scale every feature row to unit L1 norm before anything else.
    #[serde(default = "yes")]
    pub row_normalize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionMethod {
    Kmeans,
    Topological,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub method: PartitionMethod,
    pub parts: usize,
    pub seed: u64,
    #[serde(default = "default_kmeans_iters")]
    pub kmeans_iters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantKind {
    Sgc,
    Gcn,
    Appnp,
    Gpr,
}

/// Where embeddings come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropagationMode {
    /// Exact federated propagation across parties.
    Fedcog,
    /// Each party propagates over its own intra-edges only.
    Disconnected,
    /// Propagation on the global graph.
    Centralized,
}

impl PropagationMode {
    pub const ALL: [PropagationMode; 3] = [
        PropagationMode::Fedcog,
        PropagationMode::Disconnected,
        PropagationMode::Centralized,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PropagationMode::Fedcog => "fedcog",
            PropagationMode::Disconnected => "disconnected",
            PropagationMode::Centralized => "centralized",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: VariantKind,
    pub layers: usize,
    /// APPNP restart probability.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// GPR normalization exponent.
    #[serde(default = "half")]
    pub r: f64,
    /// GCN layer width; weights are random and fixed.
    #[serde(default = "default_gcn_width")]
    pub gcn_width: usize,
    /// 0 gives a linear classifier.
    #[serde(default)]
    pub classifier_hidden: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub propagation: PropagationMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Node,
    Link,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub kind: TaskKind,
    #[serde(default = "default_per_class")]
    pub train_per_class: usize,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    /// Share of edges kept as training positives in the link task.
    #[serde(default = "default_link_frac")]
    pub link_train_frac: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgoKind {
    Fedavg,
    Fedadagrad,
    Fedadam,
    Feddyn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub algo: AlgoKind,
    /// Server step size; also the client step size for multi-epoch rounds.
    pub lr: f64,
    pub rounds: usize,
    #[serde(default = "one_f")]
    pub participation: f64,
    #[serde(default = "one")]
    pub local_epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    /// FedDyn regularization strength.
    #[serde(default = "default_dyn_alpha")]
    pub alpha: f64,
}

impl TrainSection {
    pub fn algorithm(&self) -> ServerAlgorithm {
        let lr = self.lr;
        match self.algo {
            AlgoKind::Fedavg => ServerAlgorithm::FedAvg { lr },
            AlgoKind::Fedadagrad => ServerAlgorithm::FedAdagrad { lr, tau: self.tau },
            AlgoKind::Fedadam => ServerAlgorithm::FedAdam {
                lr,
                tau: self.tau,
                beta1: self.beta1,
                beta2: self.beta2,
            },
            AlgoKind::Feddyn => ServerAlgorithm::FedDyn { lr, alpha: self.alpha },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            rounds: self.rounds,
            local_epochs: self.local_epochs,
            participation: self.participation,
            seed: self.seed,
            learning_rate: self.lr,
            algorithm: self.algorithm(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub partition: PartitionConfig,
    #[serde(default)]
    pub lnnc: bool,
    pub model: ModelConfig,
    pub task: TaskConfig,
    pub train: TrainSection,
    /// Report destination; the history goes next to it as JSON lines.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn yes() -> bool {
    true
}
fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn default_kmeans_iters() -> usize {
    50
}
fn default_alpha() -> f64 {
    0.1
}
fn default_gcn_width() -> usize {
    16
}
fn default_mode() -> PropagationMode {
    PropagationMode::Fedcog
}
fn default_per_class() -> usize {
    20
}
fn default_test_size() -> usize {
    1000
}
fn default_link_frac() -> f64 {
    0.85
}
fn default_tau() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.99
}
fn default_dyn_alpha() -> f64 {
    0.01
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, resolves relative dataset paths, and validates.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let DatasetSource::Citation { content, cites } = &mut cfg.dataset.source {
            for p in [content, cites] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        if let Some(out) = &mut cfg.output {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replaces every seed in the config with `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.partition.seed = seed;
        self.model.seed = seed;
        self.task.seed = seed;
        self.train.seed = seed;
        if let DatasetSource::Sbm(spec) = &mut self.dataset.source {
            spec.seed = seed;
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if let DatasetSource::Citation { content, cites } = &self.dataset.source {
            for p in [content, cites] {
                if !p.is_file() {
                    return bad(format!("dataset file {} does not exist", p.display()));
                }
            }
        }
        if self.partition.parts == 0 {
            return bad("partition.parts must be at least 1".into());
        }
        if !(self.model.alpha > 0.0 && self.model.alpha <= 1.0) {
            return bad(format!("model.alpha = {} outside (0, 1]", self.model.alpha));
        }
        if !(0.0..=1.0).contains(&self.model.r) {
            return bad(format!("model.r = {} outside [0, 1]", self.model.r));
        }
        if self.model.variant == VariantKind::Gcn && self.model.gcn_width == 0 {
            return bad("model.gcn_width must be positive".into());
        }
        if !(self.task.link_train_frac > 0.0 && self.task.link_train_frac < 1.0) {
            return bad(format!("task.link_train_frac = {} outside (0, 1)", self.task.link_train_frac));
        }
        if self.task.kind == TaskKind::Node && self.task.train_per_class == 0 {
            return bad("task.train_per_class must be positive".into());
        }
        self.train
            .train_config()
            .validate()
            .map_err(|e| HarnessError::Config(format!("train: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SMALL: &str = r#"
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

    #[test]
    fn parses_minimal_config() {
        let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
        assert_eq!(cfg.partition.parts, 3);
        assert_eq!(cfg.model.propagation, PropagationMode::Fedcog);
        assert!(cfg.dataset.row_normalize);
        assert!(!cfg.lnnc);
        assert_eq!(cfg.train.algorithm(), ServerAlgorithm::FedAvg { lr: 0.5 });
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn rejects_invalid_values() {
        for (from, to) in [
            ("parts = 3", "parts = 0"),
            ("lr = 0.5", "lr = -1.0"),
            ("variant = \"sgc\"", "variant = \"gat\""),
            ("rounds = 50", "rounds = 50\nparticipation = 1.5"),
            ("layers = 2", "layers = 2\nalpha = 0.0"),
            ("layers = 2", "layers = 2\nbogus = 1"),
            ("seed = 1 }", "seed = 1, noise = 3.0 }"),
        ] {
            let text = SMALL.replace(from, to);
            assert!(matches!(ExperimentConfig::from_toml(&text), Err(HarnessError::Config(_))), "{to}");
        }
        let missing = SMALL.replace("method = \"kmeans\"", "");
        assert!(ExperimentConfig::from_toml(&missing).is_err());
    }

    #[test]
    fn missing_dataset_files_are_rejected() {
        let text = SMALL.replace(
            r#"source = { kind = "sbm", block_sizes = [20, 20, 20], p_in = 0.9, p_out = 0.02, feature_dim = 8, num_classes = 3, seed = 1 }"#,
            r#"source = { kind = "citation", content = "/nonexistent/x.content", cites = "/nonexistent/x.cites" }"#,
        );
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(HarnessError::Config(_))));
    }

    #[test]
    fn seed_override_touches_every_seed() {
        let mut cfg = ExperimentConfig::from_toml(SMALL).unwrap();
        cfg.override_seed(42);
        assert_eq!(
            (cfg.partition.seed, cfg.model.seed, cfg.task.seed, cfg.train.seed),
            (42, 42, 42, 42)
        );
        assert!(matches!(&cfg.dataset.source, DatasetSource::Sbm(s) if s.seed == 42));
    }
}
