use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

/// Pipeline stage an error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Load,
    Partition,
    Lnnc,
    Split,
    Decouple,
    Propagate,
    Train,
    Evaluate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Load => "load",
            Stage::Partition => "partition",
            Stage::Lnnc => "lnnc",
            Stage::Split => "split",
            Stage::Decouple => "decouple",
            Stage::Propagate => "propagate",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {reason}", path.display())]
    Malformed { path: PathBuf, line: usize, reason: String },
    #[error("{}:{line}: edge endpoint {id} is not a known node", path.display())]
    Dangling { path: PathBuf, line: usize, id: String },
    #[error("{stage} stage")]
    Stage {
        stage: Stage,
        #[source]
        source: fedcog_core::Error,
    },
    #[error("report: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Attaches a stage to core errors.
pub(crate) trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T>;
}

impl<T> AtStage<T> for fedcog_core::Result<T> {
    fn at(self, stage: Stage) -> Result<T> {
        self.map_err(|source| HarnessError::Stage { stage, source })
    }
}
