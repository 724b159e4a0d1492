//! Training and held-out samples for a run.

use std::path::Path;

use thor_core::data::{
    load_sample, synth_stream, DatasetManifest, FeatureProvider, Sample, SynthConfig, SyntheticFeatureProvider, Templates,
};

use crate::config::{ProviderKind, RunConfig};
use crate::error::{CliError, Result};
use crate::model::{prepare_all, Prepared};

pub struct Splits {
    pub train: Vec<Prepared>,
    pub eval: Vec<Prepared>,
}

pub fn synth_config(cfg: &RunConfig) -> SynthConfig {
    SynthConfig {
        hands: cfg.dataset.hands,
        image: cfg.dataset.image,
        ..SynthConfig::default()
    }
}

pub fn synthetic_provider(cfg: &RunConfig) -> Result<SyntheticFeatureProvider> {
    Ok(SyntheticFeatureProvider::new(cfg.model.feature_size, cfg.dataset.feature_seed)?
        .with_noise(cfg.dataset.heatmap_noise))
}

/// Reads a dataset directory and checks its layout against the run.
pub fn read_dataset(dir: &Path, cfg: &RunConfig, templates: &Templates) -> Result<(DatasetManifest, Vec<Sample>)> {
    let manifest = DatasetManifest::read(dir)?;
    if manifest.hands != cfg.dataset.hands {
        return Err(CliError::Config(format!(
            "dataset {} has {} hand(s), the model expects {}",
            dir.display(),
            manifest.hands,
            cfg.dataset.hands
        )));
    }
    let samples = manifest
        .samples
        .iter()
        .map(|e| load_sample(dir, &manifest, e, templates))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((manifest, samples))
}

/// Exported features of a dataset when present, else the run's synthetic
/// provider.
pub fn dataset_provider(dir: &Path, manifest: &DatasetManifest, cfg: &RunConfig) -> Result<Box<dyn FeatureProvider>> {
    match manifest.feature_size {
        Some(f) if f != cfg.model.feature_size => Err(CliError::Config(format!(
            "dataset features have width {f}, the model expects {}",
            cfg.model.feature_size
        ))),
        Some(_) => Ok(Box::new(manifest.file_features(dir)?)),
        None => Ok(Box::new(synthetic_provider(cfg)?)),
    }
}

pub fn load_splits(cfg: &RunConfig, templates: &Templates) -> Result<Splits> {
    load(cfg, templates, true)
}

/// The held-out split alone.
pub fn load_eval(cfg: &RunConfig, templates: &Templates) -> Result<Vec<Prepared>> {
    Ok(load(cfg, templates, false)?.eval)
}

fn load(cfg: &RunConfig, templates: &Templates, with_train: bool) -> Result<Splits> {
    let d = &cfg.dataset;
    let train_count = if with_train { d.train_samples } else { 0 };
    match (d.feature_provider, &d.features_dir) {
        (ProviderKind::Files, Some(dir)) => {
            let (manifest, samples) = read_dataset(dir, cfg, templates)?;
            let need = d.train_samples + d.eval_samples;
            if samples.len() < need {
                return Err(CliError::Config(format!(
                    "dataset {} has {} samples, the run needs {need}",
                    dir.display(),
                    samples.len()
                )));
            }
            let provider = match manifest.feature_size {
                Some(_) => dataset_provider(dir, &manifest, cfg)?,
                None => return Err(CliError::Config(format!("dataset {} has no exported features", dir.display()))),
            };
            Ok(Splits {
                train: prepare_all(&samples[..train_count], provider.as_ref(), &cfg.model)?,
                eval: prepare_all(&samples[d.train_samples..need], provider.as_ref(), &cfg.model)?,
            })
        }
        _ => {
            let synth = synth_config(cfg);
            let provider = synthetic_provider(cfg)?;
            let gen = |start: u64, count: usize| -> Result<Vec<Prepared>> {
                let mut out = Vec::with_capacity(count);
                for s in synth_stream(templates, &synth, d.seed, start, count) {
                    out.extend(prepare_all(&[s?], &provider, &cfg.model)?);
                }
                Ok(out)
            };
            Ok(Splits {
                train: gen(0, train_count)?,
                eval: gen(d.eval_offset, d.eval_samples)?,
            })
        }
    }
}
