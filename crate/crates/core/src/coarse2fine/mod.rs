//! Coarse-to-fine shape network: GraFormer stages joined by learned
//! unpooling, from the pose graph up to the full hand and object meshes.

mod network;
mod plan;

use thiserror::Error;

use crate::autodiff::TensorError;
use crate::graformer::GraformerError;
use crate::graph::GraphError;
use crate::mesh::MeshError;
use crate::metrics::MetricsError;

pub use network::{shape_train_step, PhotoTarget, ShapeExample, ShapeLoss, ShapeNetwork, ShapeOutput, UnpoolLayer};
pub use plan::{build_stage_plan, LevelFaces, MeshLevels, StagePlan, HAND_LEVELS, OBJECT_LEVELS};

#[derive(Debug, Error)]
pub enum Coarse2FineError {
    #[error("node ladder: {0}")]
    Ladder(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Graformer(#[from] GraformerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("plan file: {0}")]
    Json(#[from] serde_json::Error),
}
