//! Command-line parsing and dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thor_core::data::{
    synth_stream, write_dataset, FeatureProvider, ImageKind, InputModality, SynthConfig, SyntheticFeatureProvider,
    Templates,
};
use thor_core::mesh::DeformConfig;

use crate::ablate::{cmd_ablate, ABLATION_CSV};
use crate::checkpoint::{read_manifest, resolve_checkpoint};
use crate::config::{Overrides, RunConfig};
use crate::error::Result;
use crate::eval::{cmd_eval, EvalRequest};
use crate::infer::cmd_infer;
use crate::meshcmd::{cmd_deform, cmd_icosphere, cmd_simplify};
use crate::train::train;

#[derive(Debug, Parser)]
#[command(name = "thor", version, about = "Hand-object pose and shape reconstruction at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InputArg {
    Heatmap,
    Pose2d,
    Pose3d,
}

impl From<InputArg> for InputModality {
    fn from(a: InputArg) -> Self {
        match a {
            InputArg::Heatmap => InputModality::Heatmap,
            InputArg::Pose2d => InputModality::Pose2d,
            InputArg::Pose3d => InputModality::Pose3d,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ImageArg {
    Sinusoids,
    Ramp,
}

impl From<ImageArg> for ImageKind {
    fn from(a: ImageArg) -> Self {
        match a {
            ImageArg::Sinusoids => ImageKind::Sinusoids,
            ImageArg::Ramp => ImageKind::Ramp,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON run configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..=3))]
    pub stages: Option<u64>,
    #[arg(long, value_parser = ["1024", "2048", "4096"])]
    pub feat: Option<String>,
    #[arg(long, value_enum)]
    pub input: Option<InputArg>,
    #[arg(long)]
    pub textured: bool,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..=2))]
    pub hands: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub deterministic: bool,
}

impl RunArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            steps: self.steps,
            stages: self.stages.map(|s| s as usize),
            feat: self.feat.as_ref().map(|f| f.parse().expect("validated by clap")),
            input: self.input.map(Into::into),
            textured: self.textured,
            hands: self.hands.map(|h| h as usize),
            out: self.out.clone(),
            deterministic: self.deterministic,
        }
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        RunConfig::resolve(self.config.as_deref(), &self.overrides())
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the pose lifter and shape network jointly.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Continue from a checkpoint directory (or a run's checkpoints/).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on its held-out split or a dataset directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..=2))]
        hands: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write meshes and poses for every sample of a dataset directory.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the seven stage-count and graph-input variants.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Write a synthetic dataset directory.
    Synth {
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..=2))]
        hands: u64,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        start: u64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// RoI feature width of the exported features.
        #[arg(long, value_parser = ["1024", "2048", "4096"])]
        feat: Option<String>,
        #[arg(long, default_value_t = 1)]
        feature_seed: u64,
        #[arg(long, value_enum, default_value_t = ImageArg::Sinusoids)]
        image: ImageArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mesh utilities.
    Mesh {
        #[command(subcommand)]
        op: MeshOp,
    },
}

#[derive(Debug, Subcommand)]
pub enum MeshOp {
    Icosphere {
        #[arg(long)]
        level: u32,
        #[arg(long)]
        out: PathBuf,
    },
    Simplify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long = "target-v")]
        target_v: usize,
        #[arg(long)]
        out: PathBuf,
    },
    Deform {
        #[arg(long)]
        target: PathBuf,
        /// Starting mesh; the 1000-vertex sphere by default.
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        iters: usize,
        #[arg(long, default_value_t = 1.0)]
        lr: f64,
        #[arg(long, default_value_t = 0.01)]
        lambda1: f64,
        #[arg(long, default_value_t = 0.1)]
        lambda2: f64,
        /// Surface points per side for Chamfer.
        #[arg(long, default_value_t = 5000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn checkpoint_out(checkpoint: &std::path::Path, out: Option<PathBuf>) -> Result<PathBuf> {
    match out {
        Some(o) => Ok(o),
        None => Ok(read_manifest(&resolve_checkpoint(checkpoint)?)?.config.out),
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("output serializes"));
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { run, resume } => {
            let cfg = run.resolve()?;
            let templates = Templates::from_env()?;
            let o = train(&cfg, &templates, resume.as_deref())?;
            println!("checkpoint {} sha256 {}", o.checkpoint.display(), o.sha256);
            if let Some((step, s)) = o.evals.last() {
                println!("step {step}");
                print_json(s);
            }
        }
        Command::Eval {
            checkpoint,
            data,
            hands,
            out,
        } => {
            let out = checkpoint_out(&checkpoint, out)?;
            let templates = Templates::from_env()?;
            let req = EvalRequest {
                checkpoint: &checkpoint,
                data: data.as_deref(),
                hands: hands.map(|h| h as usize),
                out: &out,
            };
            let (_, summary) = cmd_eval(&req, &templates)?;
            print_json(&summary);
        }
        Command::Infer { checkpoint, data, out } => {
            let out = checkpoint_out(&checkpoint, out)?;
            let templates = Templates::from_env()?;
            let files = cmd_infer(&checkpoint, &data, &out, &templates)?;
            println!("wrote {} files under {}", files.len(), out.join("meshes").display());
        }
        Command::Ablate { run } => {
            let cfg = run.resolve()?;
            let templates = Templates::from_env()?;
            let rows = cmd_ablate(&cfg, &templates)?;
            let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
            println!("{} ({} of {} rows failed)", cfg.out.join(ABLATION_CSV).display(), failed, rows.len());
        }
        Command::Synth {
            hands,
            count,
            start,
            seed,
            feat,
            feature_seed,
            image,
            out,
        } => {
            let templates = Templates::from_env()?;
            let synth = SynthConfig {
                hands: hands as usize,
                image: image.into(),
                ..SynthConfig::default()
            };
            let samples = synth_stream(&templates, &synth, seed, start, count).collect::<Result<Vec<_>, _>>()?;
            let provider = match feat {
                Some(f) => Some(SyntheticFeatureProvider::new(f.parse().expect("validated by clap"), feature_seed)?),
                None => None,
            };
            let m = write_dataset(&out, &samples, seed, provider.as_ref().map(|p| p as &dyn FeatureProvider))?;
            println!("wrote {} samples to {}", m.samples.len(), out.display());
        }
        Command::Mesh { op } => match op {
            MeshOp::Icosphere { level, out } => {
                let m = cmd_icosphere(level, &out)?;
                println!("{}: {} vertices", out.display(), m.num_vertices());
            }
            MeshOp::Simplify { input, target_v, out } => {
                let m = cmd_simplify(&input, target_v, &out)?;
                println!("{}: {} vertices", out.display(), m.num_vertices());
            }
            MeshOp::Deform {
                target,
                template,
                iters,
                lr,
                lambda1,
                lambda2,
                samples,
                seed,
                out,
            } => {
                let cfg = DeformConfig {
                    iters,
                    lr,
                    lambda1,
                    lambda2,
                    samples: Some(samples),
                    seed,
                    ..DeformConfig::default()
                };
                let (_, csv) = cmd_deform(&target, template.as_deref(), &cfg, &out)?;
                println!("{} and {}", out.display(), csv.display());
            }
        },
    }
    Ok(())
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn main_with<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { crate::error::EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
