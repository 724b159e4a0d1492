use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::features::{FeatureProvider, FileFeatureProvider};
use crate::data::heatmap::BBox;
use crate::data::synth::{Sample, Templates};
use crate::data::thr1::{read_tensor, write_tensor};
use crate::data::DataError;
use crate::layout::PartLayout;
use crate::mesh::Mesh;
use crate::metrics::{CameraIntrinsics, Image};

pub const DATASET_FORMAT: &str = "thor-dataset-v1";
pub const MANIFEST_FILE: &str = "dataset.json";

/// Files of one sample, relative to the dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFiles {
    pub index: u64,
    pub intrinsics: CameraIntrinsics,
    pub palm_camera: [f64; 3],
    pub boxes: Vec<BBox>,
    pub image: String,
    pub pose3d: String,
    pub pose2d: String,
    pub vertices: String,
}

/// `dataset.json`: sample list plus, when features were exported, their size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub hands: usize,
    pub seed: u64,
    pub feature_size: Option<usize>,
    pub samples: Vec<SampleFiles>,
}

impl DatasetManifest {
    pub fn read(dir: &Path) -> Result<Self, DataError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| DataError::io(&path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        if m.format != DATASET_FORMAT {
            return Err(DataError::Format(format!("dataset format {:?}", m.format)));
        }
        Ok(m)
    }

    /// Feature provider over the exported heatmaps and RoI features.
    pub fn file_features(&self, dir: &Path) -> Result<FileFeatureProvider, DataError> {
        let feature_size = self
            .feature_size
            .ok_or_else(|| DataError::Invalid("dataset has no exported features".into()))?;
        Ok(FileFeatureProvider {
            dir: dir.to_path_buf(),
            feature_size,
        })
    }
}

/// Writes every sample as THR1 tensors plus `dataset.json`; with a
/// provider, also its heatmaps and RoI features.
pub fn write_dataset(
    dir: &Path,
    samples: &[Sample],
    seed: u64,
    features: Option<&dyn FeatureProvider>,
) -> Result<DatasetManifest, DataError> {
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let hands = samples.first().map_or(1, |s| s.layout.hands);
    let files = FileFeatureProvider {
        dir: dir.to_path_buf(),
        feature_size: features.map_or(0, |f| f.feature_size()),
    };
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        if s.layout.hands != hands {
            return Err(DataError::Invalid("samples mix one- and two-hand layouts".into()));
        }
        let stem = format!("{:06}", s.index);
        let entry = SampleFiles {
            index: s.index,
            intrinsics: s.intrinsics,
            palm_camera: s.palm_camera,
            boxes: s.boxes.clone(),
            image: format!("{stem}.image.thr1"),
            pose3d: format!("{stem}.pose3d.thr1"),
            pose2d: format!("{stem}.pose2d.thr1"),
            vertices: format!("{stem}.vertices.thr1"),
        };
        write_tensor(&dir.join(&entry.image), &s.image.to_tensor())?;
        write_tensor(&dir.join(&entry.pose3d), &s.pose3d)?;
        write_tensor(&dir.join(&entry.pose2d), &s.pose2d)?;
        write_tensor(&dir.join(&entry.vertices), &s.vertices())?;
        if let Some(p) = features {
            let f = p.provide(s)?;
            write_tensor(&files.heatmap_path(s.index), &f.heatmaps)?;
            write_tensor(&files.roi_path(s.index), &f.roi)?;
        }
        entries.push(entry);
    }
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        hands,
        seed,
        feature_size: features.map(|f| f.feature_size()),
        samples: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| DataError::io(&path, e))?;
    Ok(manifest)
}

/// Reads one sample back; faces come from the templates.
pub fn load_sample(dir: &Path, manifest: &DatasetManifest, entry: &SampleFiles, templates: &Templates) -> Result<Sample, DataError> {
    let layout = PartLayout::new(manifest.hands);
    let image = Image::from_tensor(&read_tensor::<f64>(&dir.join(&entry.image))?)
        .map_err(|e| DataError::Invalid(e.to_string()))?;
    let vertices: Tensor<f64> = read_tensor(&dir.join(&entry.vertices))?;
    if vertices.shape() != [layout.num_vertices(), 3] {
        return Err(DataError::Invalid(format!("vertices of shape {:?}", vertices.shape())));
    }
    let meshes = layout
        .parts
        .iter()
        .zip(templates.part_faces(&layout))
        .map(|(p, f)| {
            let v = p.vertices.clone().map(|r| [vertices.at(r, 0), vertices.at(r, 1), vertices.at(r, 2)]).collect();
            Mesh::new(v, f)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let sample = Sample {
        index: entry.index,
        layout,
        image,
        intrinsics: entry.intrinsics,
        pose3d: read_tensor(&dir.join(&entry.pose3d))?,
        pose2d: read_tensor(&dir.join(&entry.pose2d))?,
        meshes,
        palm_camera: entry.palm_camera,
        boxes: entry.boxes.clone(),
    };
    sample.validate()?;
    Ok(sample)
}
