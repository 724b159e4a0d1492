use std::path::{Path, PathBuf};

use thiserror::Error;
use thor_core::coarse2fine::Coarse2FineError;
use thor_core::data::DataError;
use thor_core::graformer::GraformerError;
use thor_core::mesh::MeshError;
use thor_core::metrics::MetricsError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("numeric abort: {0}")]
    Numeric(String),
    #[error("{path}: {msg}")]
    Io { path: PathBuf, msg: String },
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Io { .. } => EXIT_IO,
            CliError::Other(_) => EXIT_FAILURE,
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            msg: e.to_string(),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { path, source } => CliError::Io {
                path,
                msg: source.to_string(),
            },
            DataError::Format(m) => CliError::Io {
                path: PathBuf::new(),
                msg: format!("format error: {m}"),
            },
            DataError::Mesh(m) => m.into(),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<MeshError> for CliError {
    fn from(e: MeshError) -> Self {
        match e {
            MeshError::Io(io) => CliError::Io {
                path: PathBuf::new(),
                msg: io.to_string(),
            },
            e @ (MeshError::Parse { .. } | MeshError::Format(_)) => CliError::Io {
                path: PathBuf::new(),
                msg: e.to_string(),
            },
            e @ MeshError::Diverged { .. } => CliError::Numeric(e.to_string()),
            MeshError::Invalid(m) => CliError::Config(m),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<GraformerError> for CliError {
    fn from(e: GraformerError) -> Self {
        match e {
            GraformerError::NonFinite(m) => CliError::Numeric(m),
            GraformerError::Config(m) => CliError::Config(m),
            GraformerError::Tensor(t) => t.into(),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<Coarse2FineError> for CliError {
    fn from(e: Coarse2FineError) -> Self {
        match e {
            Coarse2FineError::Graformer(g) => g.into(),
            Coarse2FineError::Config(m) | Coarse2FineError::Ladder(m) => CliError::Config(m),
            Coarse2FineError::Tensor(t) => t.into(),
            Coarse2FineError::Metrics(m) => m.into(),
            Coarse2FineError::Mesh(m) => m.into(),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Io(io) => CliError::Io {
                path: PathBuf::new(),
                msg: io.to_string(),
            },
            MetricsError::Tensor(t) => t.into(),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<thor_core::autodiff::TensorError> for CliError {
    fn from(e: thor_core::autodiff::TensorError) -> Self {
        match e {
            thor_core::autodiff::TensorError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
