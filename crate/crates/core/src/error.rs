use std::path::PathBuf;

use crate::exprlang::ExprError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("time {t} lies outside the parameter grid [{t0}, {t1}]")]
    TimeOutOfGrid { t: f64, t0: f64, t1: f64 },

    #[error("integration blew up at t = {t} (step {step})")]
    Blowup { t: f64, step: usize },

    #[error("field kind `{0}` does not expose an analytic divergence")]
    UnsupportedField(String),

    #[error(transparent)]
    Expr(#[from] ExprError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch} (loss {loss:e})")]
    Diverged {
        epoch: usize,
        loss: f64,
        /// Parameters before the failing epoch.
        last_good: Box<crate::train::Checkpoint>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: corrupt file: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("{path}: unsupported format version {found} (expected {expected})")]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("rejection sampler gave up after {attempts} attempts")]
    Sampler { attempts: usize },

    #[error("point cloud sizes: {0}")]
    CloudSize(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Corrupt {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
