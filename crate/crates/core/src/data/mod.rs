//! Synthetic scenes standing in for the detector stage, heatmaps and boxes,
//! palm-origin normalization, and the THR1 tensor format.

mod checkpoint;
mod dataset;
mod features;
mod geometry;
mod heatmap;
mod normalize;
mod synth;
mod thr1;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::autodiff::TensorError;
use crate::mesh::MeshError;

pub use checkpoint::{load_params, load_tensors, save_params, save_tensors, TensorEntry};
pub use dataset::{load_sample, write_dataset, DatasetManifest, SampleFiles, DATASET_FORMAT, MANIFEST_FILE};
pub use features::{
    check_feature_size, hcat, node_features, normalized_pose2d, FeatureProvider, FileFeatureProvider, InputModality,
    NodeFeatures, SyntheticFeatureProvider, FEATURE_SIZES, HEATMAP_DIM, ROI_CROP,
};
pub use heatmap::{bbox_from_pose2d, decode_heatmap, gaussian_heatmap, BBox, BBOX_PADDING, HEATMAP_SIGMA, HEATMAP_SIZE};
pub use normalize::{palm_normalize, to_millimeters, to_network_units, COORD_SCALE_MM, PALM_INDEX};
pub use synth::{synth_generate, synth_stream, ImageKind, Sample, SynthConfig, Templates, CACHE_ENV};
pub use thr1::{decode_tensor, encode_tensor, read_tensor, write_tensor, THR1_MAGIC, THR1_MAX_RANK};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

impl DataError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
