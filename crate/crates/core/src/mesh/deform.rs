use serde::{Deserialize, Serialize};

use crate::autodiff::{Optimizer, OptimizerConfig, ParamStore, Tape, Tensor};
use crate::mesh::losses::{LossValues, MeshRegularizer};
use crate::mesh::sampling::{sample_points_from_faces, tensor_points, PointGrid};
use crate::mesh::{norm3, sub3, Mesh, MeshError};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeformConfig {
    pub iters: usize,
    pub lr: f64,
    pub momentum: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Surface points per side for Chamfer; `None` compares vertices directly.
    pub samples: Option<usize>,
    pub seed: u64,
}

impl Default for DeformConfig {
    fn default() -> Self {
        Self {
            iters: 2000,
            lr: 1.0,
            momentum: 0.0,
            lambda1: 0.01,
            lambda2: 0.1,
            samples: Some(5000),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DeformStep {
    pub iteration: usize,
    pub total: f64,
    pub terms: LossValues,
}

#[derive(Debug, Clone)]
pub struct DeformResult<T> {
    pub mesh: Mesh<T>,
    /// Loss before each update.
    pub history: Vec<DeformStep>,
    /// Loss of the returned mesh, on a fresh surface sample.
    pub final_loss: DeformStep,
}

impl<T> DeformResult<T> {
    pub fn initial_loss(&self) -> f64 {
        self.history.first().map_or(self.final_loss.total, |s| s.total)
    }
}

/// Scales the template uniformly to the target's bounding-sphere radius and
/// centers it on the target. Radii and centers are taken about surface
/// centroids, so a template fitted to itself is unchanged.
pub fn fit_template<T: Scalar>(template: &Mesh<T>, target: &Mesh<T>) -> Mesh<T> {
    let c = target.surface_centroid();
    let radius = target
        .vertices
        .iter()
        .map(|&v| norm3(sub3(v, c)))
        .fold(T::zero(), T::max);
    let tc = template.surface_centroid();
    let t_radius = template
        .vertices
        .iter()
        .map(|&v| norm3(sub3(v, tc)))
        .fold(T::zero(), T::max);
    let s = if t_radius > T::zero() { radius / t_radius } else { T::one() };
    template.transformed(|v| {
        let d = sub3(v, tc);
        [c[0] + d[0] * s, c[1] + d[1] * s, c[2] + d[2] * s]
    })
}

/// Deforms a fitted copy of `template` toward `target` by SGD on
/// `chamfer + edge + lambda1 * normal + lambda2 * laplacian`.
///
/// Faces are never modified. Aborts when the loss exceeds ten times its
/// initial value.
pub fn deform_sphere<T: Scalar>(
    template: &Mesh<T>,
    target: &Mesh<T>,
    config: &DeformConfig,
) -> Result<DeformResult<T>, MeshError> {
    if target.vertices.is_empty() {
        return Err(MeshError::EmptyTarget);
    }
    let fitted = fit_template(template, target);
    let reg = MeshRegularizer::new(&fitted)?;
    let target_points = match config.samples {
        Some(n) => sample_points_from_faces(target, n, SplitMix64::derive(config.seed, u64::MAX).next_u64())?.points,
        None => target.vertex_tensor(),
    };
    let grid = PointGrid::new(tensor_points(&target_points));
    let base = fitted.vertex_tensor();
    let mut store = ParamStore::new();
    let offset = store.add("offset", Tensor::zeros(base.shape()));
    let mut opt = Optimizer::new(OptimizerConfig::sgd(config.lr).with_momentum(config.momentum));
    let (l1, l2) = (T::of(config.lambda1), T::of(config.lambda2));
    let mut history = Vec::with_capacity(config.iters);

    let evaluate = |store: &mut ParamStore<T>, it: usize, train: bool| -> Result<DeformStep, MeshError> {
        let tape = Tape::new();
        let b = tape.constant(base.clone())?;
        let verts = b.add(&tape.param(store, offset)?)?;
        let source = match config.samples {
            Some(n) => {
                let seed = SplitMix64::derive(config.seed, it as u64).next_u64();
                verts.spmm(sample_points_from_faces(&fitted, n, seed)?.weights)?
            }
            None => verts,
        };
        let tgt = tape.constant(target_points.clone())?;
        let losses = reg.losses(&verts, &source, &tgt, Some(&grid))?;
        let total = losses.total(l1, l2)?;
        let step = DeformStep {
            iteration: it,
            total: total.item().as_f64(),
            terms: losses.values(),
        };
        if train {
            tape.backward(total, Some(store))?;
        }
        Ok(step)
    };

    for it in 0..config.iters {
        let step = evaluate(&mut store, it, true)?;
        let initial = history.first().map_or(step.total, |s: &DeformStep| s.total);
        history.push(step);
        if !(step.total <= 10.0 * initial) {
            return Err(MeshError::Diverged {
                iteration: it,
                loss: step.total,
                initial,
                history: history.iter().map(|s| s.total).collect(),
            });
        }
        opt.step(&mut store)?;
    }
    let final_loss = evaluate(&mut store, config.iters, false)?;
    let verts = base.zip_map(store.value(offset), |a, b| a + b);
    Ok(DeformResult {
        mesh: fitted.with_vertex_tensor(&verts)?,
        history,
        final_loss,
    })
}
