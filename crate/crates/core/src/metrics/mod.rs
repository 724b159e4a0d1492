//! Camera projection, training losses on poses, meshes and vertex colors,
//! and evaluation metrics.

mod camera;
mod eval;
mod losses;
mod procrustes;

use thiserror::Error;

use crate::autodiff::TensorError;

pub use camera::{project_points, CameraIntrinsics, Image, MIN_DEPTH};
pub use eval::{
    mpjpe, pcv_curve, per_point_errors, write_pcv_csv, MetricAccumulator, MetricReport, PartMetrics, PcvCurve,
};
pub use losses::{
    combined_loss, photometric_loss, sample_vertex_colors, CombinedLoss, LossBreakdown, LossWeights, PhotoInputs,
    PhotoLoss,
};
pub use procrustes::{procrustes_align, AlignMode, Alignment};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("{what}: prediction has {pred} rows, ground truth has {gt}")]
    CountMismatch { what: &'static str, pred: usize, gt: usize },
    #[error("degenerate point set: {0}")]
    Degenerate(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("texture is enabled but no photometric inputs were given")]
    MissingPhotoInputs,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
