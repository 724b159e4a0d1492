//! Run configuration: JSON file, then command-line overrides, then
//! validation before any work starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thor_core::autodiff::{OptimizerConfig, OptimizerKind};
use thor_core::data::{ImageKind, InputModality, FEATURE_SIZES};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Synthetic,
    Files,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub hands: usize,
    pub train_samples: usize,
    pub eval_samples: usize,
    /// Scene seed; sample `i` of the stream is fixed by `(seed, i)`.
    pub seed: u64,
    /// First index of the held-out samples.
    pub eval_offset: u64,
    pub image: ImageKind,
    pub feature_provider: ProviderKind,
    /// Dataset directory written by `thor synth` when the provider is `files`.
    pub features_dir: Option<PathBuf>,
    /// Seed of the synthetic RoI projection.
    pub feature_seed: u64,
    pub heatmap_noise: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            hands: 1,
            train_samples: 200,
            eval_samples: 40,
            seed: 7,
            eval_offset: 1_000_000,
            image: ImageKind::Sinusoids,
            feature_provider: ProviderKind::Synthetic,
            features_dir: None,
            feature_seed: 1,
            heatmap_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub stages: usize,
    pub feature_size: usize,
    pub input: InputModality,
    pub textured: bool,
    /// Pose lifter width and depth.
    pub d_model: usize,
    pub blocks: usize,
    pub heads: usize,
    pub cheb_order: usize,
    /// Shape network stage widths; the first `stages` are used.
    pub shape_widths: Vec<usize>,
    pub shape_blocks: usize,
    pub shape_heads: usize,
    /// Parameter init seed.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            stages: 3,
            feature_size: 2048,
            input: InputModality::Heatmap,
            textured: false,
            d_model: 128,
            blocks: 5,
            heads: 4,
            cheb_order: 2,
            shape_widths: vec![64, 32, 16],
            shape_blocks: 2,
            shape_heads: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub batch: usize,
    pub steps: usize,
    pub momentum: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-4,
            batch: 8,
            steps: 2000,
            momentum: 0.0,
        }
    }
}

impl OptimConfig {
    pub fn optimizer(&self) -> OptimizerConfig {
        match self.kind {
            OptimizerKind::Adam => OptimizerConfig::adam(self.lr),
            OptimizerKind::Sgd => OptimizerConfig::sgd(self.lr).with_momentum(self.momentum),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub optimizer: OptimConfig,
    pub out: PathBuf,
    /// Leaves wall-clock fields out of the run log so reruns are byte-identical.
    pub deterministic: bool,
    /// Held-out evaluation period in steps; 0 evaluates only at the end.
    pub eval_every: usize,
    /// Checkpoint period in steps; 0 checkpoints only at the end.
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            optimizer: OptimConfig::default(),
            out: PathBuf::from("runs/thor"),
            deterministic: false,
            eval_every: 500,
            checkpoint_every: 500,
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub stages: Option<usize>,
    pub feat: Option<usize>,
    pub input: Option<InputModality>,
    pub textured: bool,
    pub hands: Option<usize>,
    pub out: Option<PathBuf>,
    pub deterministic: bool,
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(msg()))
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Config file (or defaults), then overrides, then validation.
    pub fn resolve(path: Option<&Path>, o: &Overrides) -> Result<Self> {
        let mut c = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        c.apply(o);
        c.validate()?;
        Ok(c)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.dataset.seed = s;
            self.model.seed = s;
        }
        if let Some(s) = o.steps {
            self.optimizer.steps = s;
        }
        if let Some(s) = o.stages {
            self.model.stages = s;
        }
        if let Some(f) = o.feat {
            self.model.feature_size = f;
        }
        if let Some(i) = o.input {
            self.model.input = i;
        }
        if o.textured {
            self.model.textured = true;
        }
        if let Some(h) = o.hands {
            self.dataset.hands = h;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if o.deterministic {
            self.deterministic = true;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        check(d.hands == 1 || d.hands == 2, || format!("dataset.hands = {}; expected 1 or 2", d.hands))?;
        check(d.train_samples > 0, || "dataset.train_samples must be positive".into())?;
        check(d.eval_samples > 0, || "dataset.eval_samples must be positive".into())?;
        check(d.eval_offset >= d.train_samples as u64, || {
            "dataset.eval_offset overlaps the training samples".into()
        })?;
        check(d.heatmap_noise.is_finite() && d.heatmap_noise >= 0.0, || {
            "dataset.heatmap_noise must be a non-negative number".into()
        })?;
        if d.feature_provider == ProviderKind::Files {
            check(d.features_dir.is_some(), || {
                "dataset.feature_provider = files needs dataset.features_dir".into()
            })?;
        }
        let m = &self.model;
        check((1..=3).contains(&m.stages), || format!("model.stages = {}; expected 1, 2 or 3", m.stages))?;
        check(FEATURE_SIZES.contains(&m.feature_size), || {
            format!("model.feature_size = {}; expected one of {FEATURE_SIZES:?}", m.feature_size)
        })?;
        for (name, v) in [
            ("model.d_model", m.d_model),
            ("model.blocks", m.blocks),
            ("model.heads", m.heads),
            ("model.cheb_order", m.cheb_order),
            ("model.shape_blocks", m.shape_blocks),
            ("model.shape_heads", m.shape_heads),
        ] {
            check(v > 0, || format!("{name} must be positive"))?;
        }
        check(m.d_model % m.heads == 0, || {
            format!("model.d_model = {} is not divisible by {} heads", m.d_model, m.heads)
        })?;
        check(m.shape_widths.len() >= m.stages, || {
            format!("model.shape_widths lists {} widths for {} stages", m.shape_widths.len(), m.stages)
        })?;
        let widths = &m.shape_widths[..m.stages];
        check(widths.windows(2).all(|w| w[0] > w[1]), || {
            format!("model.shape_widths {widths:?} must strictly decrease")
        })?;
        let out_dim = if m.textured { 6 } else { 3 };
        check(widths[m.stages - 1] >= out_dim, || {
            format!("last shape width {} is below the output width {out_dim}", widths[m.stages - 1])
        })?;
        check(widths.iter().all(|w| w % m.shape_heads == 0), || {
            format!("model.shape_widths {widths:?} must be divisible by {} heads", m.shape_heads)
        })?;
        let o = &self.optimizer;
        check(o.lr.is_finite() && o.lr > 0.0, || format!("optimizer.lr = {}; must be positive", o.lr))?;
        check(o.batch > 0, || "optimizer.batch must be positive".into())?;
        check(o.momentum.is_finite() && (0.0..1.0).contains(&o.momentum), || {
            "optimizer.momentum must lie in [0, 1)".into()
        })?;
        check(!self.out.as_os_str().is_empty(), || "out must not be empty".into())?;
        Ok(())
    }
}
