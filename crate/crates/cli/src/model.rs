//! The joint network: pose lifter plus coarse-to-fine shape network with
//! independent parameters in one store, trained on the summed loss.

use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thor_core::autodiff::{Optimizer, ParamStore, Tape, Tensor, Var};
use thor_core::coarse2fine::{build_stage_plan, PhotoTarget, ShapeNetwork, StagePlan};
use thor_core::data::{
    normalized_pose2d, to_network_units, FeatureProvider, InputModality, NodeFeatures, Sample, Templates, HEATMAP_DIM,
};
use thor_core::graformer::{optimize_step, Ctx, GraFormerConfig, GraformerError, PoseLifter};
use thor_core::graph::SkeletonTemplate;
use thor_core::layout::PartLayout;
use thor_core::metrics::{combined_loss, LossWeights, PhotoInputs};
use thor_core::rng::SplitMix64;

use crate::config::ModelConfig;
use crate::error::{CliError, Result};

/// One sample with its network inputs and targets (network units).
#[derive(Debug, Clone)]
pub struct Prepared {
    pub index: u64,
    /// `K x 3136` lifter input.
    pub heatmaps: Rc<Tensor<f64>>,
    /// Shape-network node input besides the RoI features; `None` when it is
    /// the lifted pose.
    pub base: Option<Rc<Tensor<f64>>>,
    pub roi: Rc<Tensor<f64>>,
    pub pose: Tensor<f64>,
    pub vertices: Tensor<f64>,
    pub photo: Option<PhotoTarget<f64>>,
}

pub fn prepare(sample: &Sample, features: &NodeFeatures, model: &ModelConfig) -> Result<Prepared> {
    if features.roi.cols() != model.feature_size {
        return Err(CliError::Config(format!(
            "features have width {}, model expects {}",
            features.roi.cols(),
            model.feature_size
        )));
    }
    let heatmaps = Rc::new(features.heatmap_rows());
    let base = match model.input {
        InputModality::Heatmap => Some(heatmaps.clone()),
        InputModality::Pose2d => Some(Rc::new(normalized_pose2d(sample))),
        InputModality::Pose3d => None,
    };
    let photo = model.textured.then(|| PhotoTarget {
        image: sample.image.clone(),
        intrinsics: sample.intrinsics,
        vertices_camera: sample.vertices_camera(),
    });
    Ok(Prepared {
        index: sample.index,
        heatmaps,
        base,
        roi: Rc::new(features.roi.clone()),
        pose: to_network_units(&sample.pose3d),
        vertices: to_network_units(&sample.vertices()),
        photo,
    })
}

pub fn prepare_all(samples: &[Sample], provider: &dyn FeatureProvider, model: &ModelConfig) -> Result<Vec<Prepared>> {
    samples
        .iter()
        .map(|s| prepare(s, &provider.provide(s)?, model))
        .collect()
}

/// Batch-mean loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub pose: f64,
    pub shape: f64,
    pub photo: f64,
}

/// Network outputs in network units.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub pose: Tensor<f64>,
    pub vertices: Tensor<f64>,
    pub rgb: Option<Tensor<f64>>,
}

struct Outputs<'t> {
    pose: Var<'t, f64>,
    vertices: Var<'t, f64>,
    rgb: Option<Var<'t, f64>>,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub hands: usize,
    pub config: ModelConfig,
    pub layout: PartLayout,
    pub lifter: PoseLifter<f64>,
    pub shape: ShapeNetwork<f64>,
}

impl Network {
    /// Builds both branches; lifter parameters come first in the store.
    pub fn new(store: &mut ParamStore<f64>, hands: usize, config: &ModelConfig, templates: &Templates) -> Result<Self> {
        let skeleton = SkeletonTemplate::composite(hands);
        let lifter_cfg = GraFormerConfig {
            d_model: config.d_model,
            num_heads: config.heads,
            num_blocks: config.blocks,
            cheb_order: config.cheb_order,
            input_dim: HEATMAP_DIM,
            output_dim: 3,
            attention: true,
        };
        let seed = |k: u64| SplitMix64::derive(config.seed, k).next_u64();
        let lifter = PoseLifter::new(store, lifter_cfg, &skeleton.topology, seed(1))?;
        let shape_cfg = GraFormerConfig {
            num_heads: config.shape_heads,
            num_blocks: config.shape_blocks,
            cheb_order: config.cheb_order,
            ..GraFormerConfig::default()
        };
        let plan = build_stage_plan(
            hands,
            config.textured,
            &templates.levels,
            config.stages,
            &config.shape_widths[..config.stages],
            config.input.base_dim() + config.feature_size,
            shape_cfg,
        )?;
        let shape = ShapeNetwork::new(store, plan, seed(2))?;
        Ok(Self {
            hands,
            config: config.clone(),
            layout: PartLayout::new(hands),
            lifter,
            shape,
        })
    }

    pub fn plan(&self) -> &StagePlan {
        &self.shape.plan
    }

    fn forward<'t>(&self, ctx: &Ctx<'_, 't, f64>, ex: &Prepared) -> Result<Outputs<'t>> {
        let tape = ctx.tape;
        let pose = self.lifter.net.forward(ctx, &tape.constant_rc(ex.heatmaps.clone())?)?;
        let base = match &ex.base {
            Some(b) => tape.constant_rc(b.clone())?,
            None => pose,
        };
        let x = Var::concat(&[base, tape.constant_rc(ex.roi.clone())?], 1)?;
        let out = self.shape.forward(ctx, &x)?;
        Ok(Outputs {
            pose,
            vertices: out.vertices,
            rgb: out.rgb,
        })
    }

    /// Batch mean of `L_J + L_V (+ L_photo)`.
    pub fn loss<'t>(&self, ctx: &Ctx<'_, 't, f64>, batch: &[&Prepared]) -> Result<(Var<'t, f64>, LossTerms)> {
        if batch.is_empty() {
            return Err(CliError::Config("empty batch".into()));
        }
        let inv = 1.0 / batch.len() as f64;
        let mut terms = LossTerms::default();
        let mut total: Option<Var<'t, f64>> = None;
        for ex in batch {
            let out = self.forward(ctx, ex)?;
            let photo = match (&out.rgb, &ex.photo) {
                (Some(rgb), Some(p)) => Some(PhotoInputs {
                    image: &p.image,
                    intrinsics: &p.intrinsics,
                    vertices_camera: &p.vertices_camera,
                    rgb_pred: *rgb,
                }),
                _ => None,
            };
            let cl = combined_loss(
                &out.pose,
                &ex.pose,
                &out.vertices,
                &ex.vertices,
                &self.layout,
                self.config.textured,
                photo,
                &LossWeights::default(),
            )?;
            let b = &cl.breakdown;
            terms.pose += b.pose * inv;
            terms.shape += b.shape * inv;
            terms.photo += b.photo * inv;
            let l = cl.total.scale(inv)?;
            total = Some(match total {
                Some(t) => t.add(&l)?,
                None => l,
            });
        }
        let total = total.expect("non-empty batch");
        terms.total = total.item();
        if !terms.total.is_finite() {
            return Err(CliError::Numeric(format!(
                "L_J = {}, L_V = {}, L_photo = {}",
                terms.pose, terms.shape, terms.photo
            )));
        }
        Ok((total, terms))
    }

    /// Forward, backward and one optimizer step. The store is left untouched
    /// when the loss is not finite.
    pub fn train_step(
        &self,
        store: &mut ParamStore<f64>,
        opt: &mut Optimizer<f64>,
        batch: &[&Prepared],
    ) -> Result<LossTerms> {
        let mut terms = None;
        let mut failure = None;
        let r = optimize_step(store, opt, |ctx| match self.loss(ctx, batch) {
            Ok((l, t)) => {
                terms = Some(t);
                Ok(l)
            }
            Err(CliError::Numeric(m)) => Err(GraformerError::NonFinite(m)),
            Err(e) => {
                failure = Some(e);
                Err(GraformerError::Config("loss construction failed".into()))
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        r?;
        Ok(terms.expect("loss was built"))
    }

    /// Loss of a batch without updating anything.
    pub fn eval_loss(&self, store: &ParamStore<f64>, batch: &[&Prepared]) -> Result<LossTerms> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, store);
        Ok(self.loss(&ctx, batch)?.1)
    }

    pub fn predict(&self, store: &ParamStore<f64>, ex: &Prepared) -> Result<Prediction> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, store);
        let out = self.forward(&ctx, ex)?;
        Ok(Prediction {
            pose: (*out.pose.value()).clone(),
            vertices: (*out.vertices.value()).clone(),
            rgb: out.rgb.map(|c| (*c.value()).clone()),
        })
    }
}
