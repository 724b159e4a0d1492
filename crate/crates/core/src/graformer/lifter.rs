use crate::autodiff::{Optimizer, ParamStore, Tensor, Var};
use crate::graformer::{optimize_step, Ctx, GraFormer, GraFormerConfig, GraformerError};
use crate::graph::GraphTopology;
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

/// GraFormer mapping per-joint features (flattened heatmaps, 2D keypoints)
/// to palm-relative 3D joint positions.
#[derive(Debug, Clone)]
pub struct PoseLifter<T: Scalar> {
    pub net: GraFormer<T>,
}

impl<T: Scalar> PoseLifter<T> {
    pub fn new(
        store: &mut ParamStore<T>,
        config: GraFormerConfig,
        topology: &GraphTopology,
        seed: u64,
    ) -> Result<Self, GraformerError> {
        let mut rng = SplitMix64::new(seed);
        Ok(Self {
            net: GraFormer::new(store, "lifter", config, topology, &mut rng)?,
        })
    }

    /// Mean over the batch of the per-sample MSE.
    pub fn loss<'t>(
        &self,
        ctx: &Ctx<'_, 't, T>,
        batch: &[(Tensor<T>, Tensor<T>)],
    ) -> Result<Var<'t, T>, GraformerError> {
        if batch.is_empty() {
            return Err(GraformerError::Config("empty batch".into()));
        }
        let mut total: Option<Var<'t, T>> = None;
        for (x, y) in batch {
            let pred = self.net.forward(ctx, &ctx.tape.constant(x.clone())?)?;
            let target = ctx.tape.constant(y.clone())?;
            if pred.shape() != y.shape() {
                return Err(GraformerError::Shape {
                    what: "pose target",
                    expected: pred.shape(),
                    got: y.shape().to_vec(),
                });
            }
            let l = pred.mse(&target)?;
            total = Some(match total {
                Some(t) => t.add(&l)?,
                None => l,
            });
        }
        Ok(total.expect("non-empty").scale(T::of(1.0 / batch.len() as f64))?)
    }

    pub fn train_step(
        &self,
        store: &mut ParamStore<T>,
        opt: &mut Optimizer<T>,
        batch: &[(Tensor<T>, Tensor<T>)],
    ) -> Result<f64, GraformerError> {
        optimize_step(store, opt, |ctx| self.loss(ctx, batch))
    }

    pub fn predict(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>, GraformerError> {
        self.net.predict(store, x)
    }
}
