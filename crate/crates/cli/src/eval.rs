//! Held-out evaluation and the `eval` command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thor_core::autodiff::{ParamStore, Tensor};
use thor_core::data::{to_millimeters, Templates};
use thor_core::layout::PartLayout;
use thor_core::metrics::{AlignMode, MetricAccumulator, MetricReport};

use crate::checkpoint::{read_manifest, resolve_checkpoint, restore, CheckpointManifest};
use crate::config::RunConfig;
use crate::data::{dataset_provider, load_eval, read_dataset};
use crate::error::{CliError, Result};
use crate::model::{prepare_all, Network, Prepared};

/// Scene-wide means in mm, weighted by each part's joint and vertex counts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalSummary {
    pub samples: usize,
    pub mpjpe: f64,
    pub mpjpe_aligned: f64,
    pub mesh_error: f64,
    pub mesh_error_aligned: f64,
}

pub fn summarize(report: &MetricReport, layout: &PartLayout) -> EvalSummary {
    let mut s = EvalSummary::default();
    let (nj, nv) = (layout.num_joints() as f64, layout.num_vertices() as f64);
    for (p, part) in report.parts.iter().zip(&layout.parts) {
        let (wj, wv) = (part.joints.len() as f64 / nj, part.vertices.len() as f64 / nv);
        s.samples = p.samples;
        s.mpjpe += wj * p.mpjpe;
        s.mpjpe_aligned += wj * p.mpjpe_aligned;
        s.mesh_error += wv * p.mesh_error;
        s.mesh_error_aligned += wv * p.mesh_error_aligned;
    }
    s
}

/// Report over `(pred pose, gt pose, pred vertices, gt vertices)` in mm.
pub fn evaluate_pairs<'a>(
    layout: &PartLayout,
    pairs: impl IntoIterator<Item = (&'a Tensor<f64>, &'a Tensor<f64>, &'a Tensor<f64>, &'a Tensor<f64>)>,
) -> Result<(MetricReport, EvalSummary)> {
    let mut acc = MetricAccumulator::new(layout.clone(), MetricAccumulator::default_thresholds(), AlignMode::Similarity);
    for (pp, gp, pv, gv) in pairs {
        acc.add(pp, gp, pv, gv)?;
    }
    let report = acc.finish()?;
    let summary = summarize(&report, layout);
    Ok((report, summary))
}

pub fn evaluate(net: &Network, store: &ParamStore<f64>, data: &[Prepared]) -> Result<(MetricReport, EvalSummary)> {
    let mut rows = Vec::with_capacity(data.len());
    for ex in data {
        let p = net.predict(store, ex)?;
        rows.push([
            to_millimeters(&p.pose),
            to_millimeters(&ex.pose),
            to_millimeters(&p.vertices),
            to_millimeters(&ex.vertices),
        ]);
    }
    evaluate_pairs(&net.layout, rows.iter().map(|r| (&r[0], &r[1], &r[2], &r[3])))
}

pub fn write_report(dir: &Path, report: &MetricReport, summary: &EvalSummary) -> Result<()> {
    report.write(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join("summary.json");
    let json = serde_json::to_string_pretty(summary).expect("summary serializes");
    std::fs::write(&path, json + "\n").map_err(|e| CliError::io(&path, e))
}

/// A trained model restored from a checkpoint.
pub struct Loaded {
    pub dir: PathBuf,
    pub manifest: CheckpointManifest,
    pub net: Network,
    pub store: ParamStore<f64>,
}

pub fn load_model(checkpoint: &Path, templates: &Templates) -> Result<Loaded> {
    let dir = resolve_checkpoint(checkpoint)?;
    let manifest = read_manifest(&dir)?;
    let cfg = &manifest.config;
    cfg.validate()?;
    let mut store = ParamStore::new();
    let net = Network::new(&mut store, cfg.dataset.hands, &cfg.model, templates)?;
    restore(&dir, &manifest, &mut store, None)?;
    Ok(Loaded {
        dir,
        manifest,
        net,
        store,
    })
}

pub struct EvalRequest<'a> {
    pub checkpoint: &'a Path,
    /// Dataset directory; the run's own held-out split when absent.
    pub data: Option<&'a Path>,
    /// Expected hand count, checked against the checkpoint.
    pub hands: Option<usize>,
    pub out: &'a Path,
}

pub fn cmd_eval(req: &EvalRequest, templates: &Templates) -> Result<(MetricReport, EvalSummary)> {
    let loaded = load_model(req.checkpoint, templates)?;
    let cfg: &RunConfig = &loaded.manifest.config;
    if let Some(h) = req.hands {
        if h != cfg.dataset.hands {
            return Err(CliError::Config(format!(
                "checkpoint has a {}-hand layout, evaluation asked for {h}",
                cfg.dataset.hands
            )));
        }
    }
    let data = match req.data {
        Some(dir) => {
            let (manifest, samples) = read_dataset(dir, cfg, templates)?;
            let provider = dataset_provider(dir, &manifest, cfg)?;
            prepare_all(&samples, provider.as_ref(), &cfg.model)?
        }
        None => load_eval(cfg, templates)?,
    };
    let (report, summary) = evaluate(&loaded.net, &loaded.store, &data)?;
    write_report(&req.out.join("metrics"), &report, &summary)?;
    Ok((report, summary))
}
