use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tensor, Var};
use crate::layout::{PartKind, PartLayout};
use crate::metrics::{CameraIntrinsics, Image, MetricsError};
use crate::scalar::Scalar;

/// Photometric term and the number of vertices it averaged over.
#[derive(Debug, Clone, Copy)]
pub struct PhotoLoss<'t, T: Scalar> {
    pub loss: Var<'t, T>,
    pub visible: usize,
}

/// Image colors under the projected vertices, with the visibility mask.
pub fn sample_vertex_colors<T: Scalar>(
    image: &Image<T>,
    k: &CameraIntrinsics,
    vertices_camera: &Tensor<T>,
) -> (Vec<[T; 3]>, Vec<bool>) {
    let mut colors = Vec::with_capacity(vertices_camera.rows());
    let mut mask = Vec::with_capacity(vertices_camera.rows());
    for p in vertices_camera.data().chunks(3) {
        match k.project([p[0].as_f64(), p[1].as_f64(), p[2].as_f64()]) {
            Some(uv) if k.in_bounds(uv) => {
                colors.push(image.sample(uv[0], uv[1]));
                mask.push(true);
            }
            _ => {
                colors.push([T::zero(); 3]);
                mask.push(false);
            }
        }
    }
    (colors, mask)
}

/// Mean squared difference between predicted vertex colors and the image
/// sampled bilinearly at the projected ground-truth vertices, over visible
/// vertices only. Zero (still on the tape) when nothing is visible.
pub fn photometric_loss<'t, T: Scalar>(
    image: &Image<T>,
    k: &CameraIntrinsics,
    vertices_camera: &Tensor<T>,
    rgb_pred: &Var<'t, T>,
) -> Result<PhotoLoss<'t, T>, MetricsError> {
    let shape = rgb_pred.shape();
    if shape != [vertices_camera.rows(), 3] || vertices_camera.cols() != 3 {
        return Err(MetricsError::CountMismatch {
            what: "photometric vertices",
            pred: shape.first().copied().unwrap_or(0),
            gt: vertices_camera.rows(),
        });
    }
    let (colors, mask) = sample_vertex_colors(image, k, vertices_camera);
    let visible: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if visible.is_empty() {
        return Ok(PhotoLoss {
            loss: rgb_pred.scale(T::zero())?.sum()?,
            visible: 0,
        });
    }
    let target: Vec<T> = visible.iter().flat_map(|&i| colors[i]).collect();
    let n = visible.len();
    let target = rgb_pred.tape().constant(Tensor::new(&[n, 3], target)?)?;
    let loss = rgb_pred.gather_rows(Rc::new(visible))?.mse(&target)?;
    Ok(PhotoLoss { loss, visible: n })
}

/// Optional term weights; the unweighted sum is the default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub pose: f64,
    pub shape: f64,
    pub photo: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            pose: 1.0,
            shape: 1.0,
            photo: 1.0,
        }
    }
}

/// Inputs of the photometric term for one sample.
pub struct PhotoInputs<'a, 't, T: Scalar> {
    pub image: &'a Image<T>,
    pub intrinsics: &'a CameraIntrinsics,
    /// Ground-truth vertices in camera space (mm).
    pub vertices_camera: &'a Tensor<T>,
    pub rgb_pred: Var<'t, T>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub pose: f64,
    pub shape: f64,
    pub photo: f64,
    /// `(part, pose contribution, shape contribution)`; contributions of all
    /// parts add up to the pose and shape terms.
    pub parts: Vec<(PartKind, f64, f64)>,
    pub visible_vertices: usize,
}

#[derive(Debug, Clone)]
pub struct CombinedLoss<'t, T: Scalar> {
    pub total: Var<'t, T>,
    pub breakdown: LossBreakdown,
}

// sum over a row block of squared differences, divided by `denom`
fn part_sq<'t, T: Scalar>(
    pred: &Var<'t, T>,
    gt: &Var<'t, T>,
    rows: std::ops::Range<usize>,
    denom: usize,
) -> Result<Var<'t, T>, MetricsError> {
    let d = pred.slice(0, rows.start, rows.end)?.sub(&gt.slice(0, rows.start, rows.end)?)?;
    Ok(d.square()?.sum()?.scale(T::of(1.0 / denom as f64))?)
}

/// `L_J + L_V (+ L_photo)`: mean squared error over all pose coordinates,
/// over all vertex coordinates, and the photometric term when textured.
pub fn combined_loss<'t, T: Scalar>(
    pred_pose: &Var<'t, T>,
    gt_pose: &Tensor<T>,
    pred_shape: &Var<'t, T>,
    gt_shape: &Tensor<T>,
    layout: &PartLayout,
    textured: bool,
    photo: Option<PhotoInputs<'_, 't, T>>,
    weights: &LossWeights,
) -> Result<CombinedLoss<'t, T>, MetricsError> {
    let tape = pred_pose.tape();
    let check = |what: &'static str, pred: &Var<'t, T>, gt: &Tensor<T>, rows: usize| {
        if pred.shape() != gt.shape() || gt.rows() != rows {
            return Err(MetricsError::CountMismatch {
                what,
                pred: pred.shape().first().copied().unwrap_or(0),
                gt: gt.rows(),
            });
        }
        Ok(())
    };
    check("pose rows", pred_pose, gt_pose, layout.num_joints())?;
    check("shape rows", pred_shape, gt_shape, layout.num_vertices())?;
    let gp = tape.constant(gt_pose.clone())?;
    let gs = tape.constant(gt_shape.clone())?;
    let mut pose_terms = Vec::new();
    let mut shape_terms = Vec::new();
    let mut parts = Vec::new();
    for part in &layout.parts {
        let lj = part_sq(pred_pose, &gp, part.joints.clone(), gt_pose.numel())?;
        let lv = part_sq(pred_shape, &gs, part.vertices.clone(), gt_shape.numel())?;
        parts.push((part.kind, lj.item().as_f64(), lv.item().as_f64()));
        pose_terms.push(lj);
        shape_terms.push(lv);
    }
    let sum = |terms: &[Var<'t, T>]| -> Result<Var<'t, T>, MetricsError> {
        let mut acc = terms[0];
        for t in &terms[1..] {
            acc = acc.add(t)?;
        }
        Ok(acc)
    };
    let pose = sum(&pose_terms)?;
    let shape = sum(&shape_terms)?;
    let mut total = pose.scale(T::of(weights.pose))?.add(&shape.scale(T::of(weights.shape))?)?;
    let mut photo_value = 0.0;
    let mut visible = 0;
    if textured {
        let p = photo.ok_or(MetricsError::MissingPhotoInputs)?;
        let pl = photometric_loss(p.image, p.intrinsics, p.vertices_camera, &p.rgb_pred)?;
        photo_value = pl.loss.item().as_f64();
        visible = pl.visible;
        total = total.add(&pl.loss.scale(T::of(weights.photo))?)?;
    }
    let breakdown = LossBreakdown {
        total: total.item().as_f64(),
        pose: pose.item().as_f64(),
        shape: shape.item().as_f64(),
        photo: photo_value,
        parts,
        visible_vertices: visible,
    };
    Ok(CombinedLoss { total, breakdown })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn constant_gray_image_gives_zero() {
        let img = Image::<f64>::from_fn(32, 32, |_, _| [0.5; 3]);
        let k = CameraIntrinsics::new(30.0, 30.0, 16.0, 16.0, 32, 32).unwrap();
        let tape = Tape::new();
        let verts = Tensor::from_rows(&[[0.0, 0.0, 100.0], [10.0, -5.0, 120.0]]);
        let rgb = tape.leaf(Tensor::full(&[2, 3], 0.5)).unwrap();
        let p = photometric_loss(&img, &k, &verts, &rgb).unwrap();
        assert_eq!((p.loss.item(), p.visible), (0.0, 2));
    }

    #[test]
    fn nothing_visible_gives_zero() {
        let img = Image::<f64>::from_fn(8, 8, |u, _| [u as f64 / 8.0; 3]);
        let k = CameraIntrinsics::new(10.0, 10.0, 4.0, 4.0, 8, 8).unwrap();
        let tape = Tape::new();
        let verts = Tensor::from_rows(&[[0.0, 0.0, -5.0]]);
        let rgb = tape.leaf(Tensor::full(&[1, 3], 0.3)).unwrap();
        let p = photometric_loss(&img, &k, &verts, &rgb).unwrap();
        assert_eq!((p.loss.item(), p.visible), (0.0, 0));
        let g = tape.backward(p.loss, None).unwrap();
        assert!(g.wrt(&rgb).unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn count_mismatch_rejected() {
        let img = Image::<f64>::from_fn(8, 8, |_, _| [0.0; 3]);
        let k = CameraIntrinsics::new(10.0, 10.0, 4.0, 4.0, 8, 8).unwrap();
        let tape = Tape::new();
        let rgb = tape.leaf(Tensor::zeros(&[2, 3])).unwrap();
        assert!(photometric_loss(&img, &k, &Tensor::zeros(&[3, 3]), &rgb).is_err());
    }
}
