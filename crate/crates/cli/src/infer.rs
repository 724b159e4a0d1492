//! The `infer` command: meshes (OBJ) and 3D poses (JSON) for every sample
//! of a dataset directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thor_core::autodiff::Tensor;
use thor_core::data::{to_millimeters, Templates};
use thor_core::layout::PartKind;
use thor_core::mesh::{write_obj, Mesh};

use crate::data::{dataset_provider, read_dataset};
use crate::error::{CliError, Result};
use crate::eval::load_model;
use crate::model::prepare;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartPose {
    pub part: PartKind,
    /// Palm-relative joint positions in mm.
    pub joints: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFile {
    pub index: u64,
    pub parts: Vec<PartPose>,
}

fn rows(t: &Tensor<f64>, r: std::ops::Range<usize>) -> Vec<[f64; 3]> {
    r.map(|i| [t.at(i, 0), t.at(i, 1), t.at(i, 2)]).collect()
}

/// Returns the written files.
pub fn cmd_infer(checkpoint: &Path, data: &Path, out: &Path, templates: &Templates) -> Result<Vec<PathBuf>> {
    let loaded = load_model(checkpoint, templates)?;
    let cfg = &loaded.manifest.config;
    let (manifest, samples) = read_dataset(data, cfg, templates)?;
    let provider = dataset_provider(data, &manifest, cfg)?;
    let layout = &loaded.net.layout;
    let faces = templates.part_faces(layout);
    let dir = out.join("meshes");
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut written = Vec::new();
    for sample in &samples {
        let ex = prepare(sample, &provider.provide(sample)?, &cfg.model)?;
        let p = loaded.net.predict(&loaded.store, &ex)?;
        let verts = to_millimeters(&p.vertices);
        let pose = to_millimeters(&p.pose);
        let mut parts = Vec::with_capacity(layout.parts.len());
        for (part, f) in layout.parts.iter().zip(&faces) {
            let mut mesh = Mesh::new(rows(&verts, part.vertices.clone()), f.clone())?;
            if let Some(rgb) = &p.rgb {
                mesh = mesh.with_colors(rows(rgb, part.vertices.clone()))?;
            }
            let path = dir.join(format!("{:06}_{}.obj", sample.index, part.kind.name()));
            write_obj(&mesh, &path).map_err(|e| CliError::io(&path, e))?;
            written.push(path);
            parts.push(PartPose {
                part: part.kind,
                joints: rows(&pose, part.joints.clone()),
            });
        }
        let path = dir.join(format!("{:06}_pose.json", sample.index));
        let json = serde_json::to_string_pretty(&PoseFile {
            index: sample.index,
            parts,
        })
        .expect("pose serializes");
        std::fs::write(&path, json + "\n").map_err(|e| CliError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
