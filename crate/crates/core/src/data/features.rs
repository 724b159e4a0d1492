use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::heatmap::{gaussian_heatmap, HEATMAP_SIGMA, HEATMAP_SIZE};
use crate::data::synth::Sample;
use crate::data::thr1::read_tensor;
use crate::data::DataError;
use crate::rng::SplitMix64;

/// Side of the grayscale crop behind each RoI feature vector.
pub const ROI_CROP: usize = 32;
pub const FEATURE_SIZES: [usize; 3] = [1024, 2048, 4096];
pub const HEATMAP_DIM: usize = HEATMAP_SIZE * HEATMAP_SIZE;

/// What the graph nodes carry besides the RoI features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputModality {
    /// Flattened `56 x 56` heatmap.
    #[default]
    Heatmap,
    /// Pixel coordinates, centered and divided by half the image size.
    Pose2d,
    /// Palm-relative 3D pose from the lifter, in network units.
    Pose3d,
}

impl InputModality {
    pub fn base_dim(self) -> usize {
        match self {
            InputModality::Heatmap => HEATMAP_DIM,
            InputModality::Pose2d => 2,
            InputModality::Pose3d => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InputModality::Heatmap => "heatmap",
            InputModality::Pose2d => "pose2d",
            InputModality::Pose3d => "pose3d",
        }
    }
}

/// Detector outputs for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatures {
    /// `K x 56 x 56`, values in [0, 1].
    pub heatmaps: Tensor<f64>,
    /// `K x F`; nodes of one part share their part's vector.
    pub roi: Tensor<f64>,
}

impl NodeFeatures {
    pub fn heatmap_rows(&self) -> Tensor<f64> {
        let k = self.heatmaps.shape()[0];
        self.heatmaps.clone().reshape(&[k, HEATMAP_DIM]).expect("K x 3136")
    }
}

/// Stand-in for the detector: per-node heatmaps and RoI features.
pub trait FeatureProvider {
    fn feature_size(&self) -> usize;
    fn provide(&self, sample: &Sample) -> Result<NodeFeatures, DataError>;
}

pub fn check_feature_size(f: usize) -> Result<(), DataError> {
    if FEATURE_SIZES.contains(&f) {
        Ok(())
    } else {
        Err(DataError::Invalid(format!("feature size {f}; expected one of {FEATURE_SIZES:?}")))
    }
}

/// Gaussian heatmaps plus a fixed seeded random projection of each part's
/// `32 x 32` grayscale crop.
#[derive(Debug, Clone)]
pub struct SyntheticFeatureProvider {
    feature_size: usize,
    /// Amplitude of additive Gaussian heatmap noise (0 = exact maps).
    pub noise: f64,
    pub sigma: f64,
    seed: u64,
    // ROI_CROP^2 x F, entries N(0, 1 / ROI_CROP^2)
    projection: Tensor<f64>,
}

impl SyntheticFeatureProvider {
    pub fn new(feature_size: usize, seed: u64) -> Result<Self, DataError> {
        check_feature_size(feature_size)?;
        let d = ROI_CROP * ROI_CROP;
        let mut rng = SplitMix64::derive(seed, 0x0f0f);
        let projection = Tensor::new(&[d, feature_size], rng.normal_vec(d * feature_size, 1.0 / (d as f64).sqrt()))?;
        Ok(Self {
            feature_size,
            noise: 0.0,
            sigma: HEATMAP_SIGMA,
            seed,
            projection,
        })
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }
}

impl FeatureProvider for SyntheticFeatureProvider {
    fn feature_size(&self) -> usize {
        self.feature_size
    }

    fn provide(&self, sample: &Sample) -> Result<NodeFeatures, DataError> {
        let points = sample.pose2d_points();
        let mut heatmaps = gaussian_heatmap(&points, &sample.keypoint_boxes(), self.sigma)?;
        if self.noise > 0.0 {
            let mut rng = SplitMix64::derive(self.seed ^ 0x4e4f_4953, sample.index);
            for v in heatmaps.data_mut() {
                *v = (*v + self.noise * rng.normal()).clamp(0.0, 1.0);
            }
        }
        let k = points.len();
        let mut roi = Tensor::zeros(&[k, self.feature_size]);
        for (part, b) in sample.layout.parts.iter().zip(&sample.boxes) {
            let n = ROI_CROP as f64;
            let crop = Tensor::from_fn(1, ROI_CROP * ROI_CROP, |_, i| {
                let (r, c) = (i / ROI_CROP, i % ROI_CROP);
                let u = b.x_min + (c as f64 + 0.5) / n * b.width();
                let v = b.y_min + (r as f64 + 0.5) / n * b.height();
                sample.image.gray(u, v)
            });
            let f = crop.matmul(&self.projection)?;
            for j in part.joints.clone() {
                roi.data_mut()[j * self.feature_size..(j + 1) * self.feature_size].copy_from_slice(f.data());
            }
        }
        Ok(NodeFeatures { heatmaps, roi })
    }
}

/// Reads `{index:06}.heatmaps.thr1` and `{index:06}.roi.thr1` from a directory.
#[derive(Debug, Clone)]
pub struct FileFeatureProvider {
    pub dir: PathBuf,
    pub feature_size: usize,
}

impl FileFeatureProvider {
    pub fn heatmap_path(&self, index: u64) -> PathBuf {
        self.dir.join(format!("{index:06}.heatmaps.thr1"))
    }

    pub fn roi_path(&self, index: u64) -> PathBuf {
        self.dir.join(format!("{index:06}.roi.thr1"))
    }
}

impl FeatureProvider for FileFeatureProvider {
    fn feature_size(&self) -> usize {
        self.feature_size
    }

    fn provide(&self, sample: &Sample) -> Result<NodeFeatures, DataError> {
        let heatmaps: Tensor<f64> = read_tensor(&self.heatmap_path(sample.index))?;
        let roi: Tensor<f64> = read_tensor(&self.roi_path(sample.index))?;
        let k = sample.layout.num_joints();
        if heatmaps.shape() != [k, HEATMAP_SIZE, HEATMAP_SIZE] || roi.shape() != [k, self.feature_size] {
            return Err(DataError::Invalid(format!(
                "sample {}: heatmaps {:?} and roi {:?} do not match {k} nodes with {} features",
                sample.index,
                heatmaps.shape(),
                roi.shape(),
                self.feature_size
            )));
        }
        Ok(NodeFeatures { heatmaps, roi })
    }
}

/// Row-wise concatenation of `K x a` and `K x b`.
pub fn hcat(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<Tensor<f64>, DataError> {
    if a.rows() != b.rows() {
        return Err(DataError::Invalid(format!("cannot join {} and {} rows", a.rows(), b.rows())));
    }
    let (ca, cb) = (a.cols(), b.cols());
    let mut data = Vec::with_capacity(a.rows() * (ca + cb));
    for r in 0..a.rows() {
        data.extend_from_slice(a.row(r));
        data.extend_from_slice(b.row(r));
    }
    Ok(Tensor::new(&[a.rows(), ca + cb], data)?)
}

/// 2D pose centered on the principal point, divided by half the image size.
pub fn normalized_pose2d(sample: &Sample) -> Tensor<f64> {
    let k = &sample.intrinsics;
    let (hw, hh) = (k.width as f64 / 2.0, k.height as f64 / 2.0);
    Tensor::from_fn(sample.pose2d.rows(), 2, |r, c| {
        let x = sample.pose2d.at(r, c);
        if c == 0 {
            (x - k.cx) / hw
        } else {
            (x - k.cy) / hh
        }
    })
}

/// Graph input of the shape network. `pose3d` (network units) is required
/// for [`InputModality::Pose3d`].
pub fn node_features(
    modality: InputModality,
    sample: &Sample,
    features: &NodeFeatures,
    pose3d: Option<&Tensor<f64>>,
) -> Result<Tensor<f64>, DataError> {
    let base = match modality {
        InputModality::Heatmap => features.heatmap_rows(),
        InputModality::Pose2d => normalized_pose2d(sample),
        InputModality::Pose3d => pose3d
            .cloned()
            .ok_or_else(|| DataError::Invalid("pose3d input needs lifted poses".into()))?,
    };
    hcat(&base, &features.roi)
}
