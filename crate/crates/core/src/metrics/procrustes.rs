use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::metrics::MetricsError;
use crate::scalar::{Mat3, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    /// Scale, rotation and translation.
    #[default]
    Similarity,
    /// Rotation and translation only.
    Rigid,
}

/// `aligned = s * R * pred + t`, row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment<T> {
    pub aligned: Tensor<T>,
    pub scale: f64,
    pub rotation: Mat3<f64>,
    pub translation: [f64; 3],
}

fn rows3<T: Scalar>(t: &Tensor<T>) -> Vec<[f64; 3]> {
    t.data().chunks(3).map(|r| [r[0].as_f64(), r[1].as_f64(), r[2].as_f64()]).collect()
}

fn centroid(p: &[[f64; 3]]) -> [f64; 3] {
    let n = p.len() as f64;
    let mut c = [0.0; 3];
    for q in p {
        for k in 0..3 {
            c[k] += q[k] / n;
        }
    }
    c
}

fn det3(m: &Mat3<f64>) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Closed-form least-squares alignment of `pred` onto `gt` (Umeyama). The
/// rotation is proper: reflections are never used, even if they would fit
/// better.
pub fn procrustes_align<T: Scalar>(
    pred: &Tensor<T>,
    gt: &Tensor<T>,
    mode: AlignMode,
) -> Result<Alignment<T>, MetricsError> {
    if pred.shape() != gt.shape() || pred.rank() != 2 || pred.cols() != 3 {
        return Err(MetricsError::CountMismatch {
            what: "procrustes points",
            pred: pred.rows(),
            gt: gt.rows(),
        });
    }
    let n = pred.rows();
    if n < 3 {
        return Err(MetricsError::Degenerate(format!("{n} points, need at least 3")));
    }
    let (p, g) = (rows3(pred), rows3(gt));
    let (mp, mg) = (centroid(&p), centroid(&g));
    let mut cov = [[0.0f64; 3]; 3];
    let mut pp = [[0.0f64; 3]; 3];
    let mut var_p = 0.0;
    for (a, b) in p.iter().zip(&g) {
        let da = [a[0] - mp[0], a[1] - mp[1], a[2] - mp[2]];
        let db = [b[0] - mg[0], b[1] - mg[1], b[2] - mg[2]];
        for i in 0..3 {
            var_p += da[i] * da[i] / n as f64;
            for j in 0..3 {
                cov[i][j] += db[i] * da[j] / n as f64;
                pp[i][j] += da[i] * da[j] / n as f64;
            }
        }
    }
    // Non-collinear means the centered prediction spans at least a plane.
    let (_, sp, _) = f64::svd3(pp);
    let mut sp = sp;
    sp.sort_by(|a, b| b.total_cmp(a));
    if !(sp[0] > 0.0) || sp[1] <= 1e-12 * sp[0] {
        return Err(MetricsError::Degenerate("prediction points are collinear or coincident".into()));
    }
    if p == g {
        return Ok(Alignment {
            aligned: pred.clone(),
            scale: 1.0,
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        });
    }

    let (u, d, v) = f64::svd3(cov);
    let sign = if det3(&u) * det3(&v) < 0.0 { -1.0 } else { 1.0 };
    // the smallest singular value takes the sign flip
    let kmin = (0..3).min_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap();
    let e = [0, 1, 2].map(|k| if k == kmin { sign } else { 1.0 });
    let mut r = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = (0..3).map(|k| u[i][k] * e[k] * v[j][k]).sum();
        }
    }
    let s = match mode {
        AlignMode::Similarity => (0..3).map(|k| d[k] * e[k]).sum::<f64>() / var_p,
        AlignMode::Rigid => 1.0,
    };
    let t = [0, 1, 2].map(|i| mg[i] - s * (0..3).map(|j| r[i][j] * mp[j]).sum::<f64>());
    let aligned: Vec<T> = p
        .iter()
        .flat_map(|q| [0, 1, 2].map(|i| T::of(s * (0..3).map(|j| r[i][j] * q[j]).sum::<f64>() + t[i])))
        .collect();
    Ok(Alignment {
        aligned: Tensor::new(&[n, 3], aligned)?,
        scale: s,
        rotation: r,
        translation: t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts() -> Tensor<f64> {
        Tensor::from_rows(&[[0.0, 0.0, 0.0], [1.0, 0.2, 0.0], [0.3, 1.5, 0.1], [0.2, 0.4, 2.0], [-1.0, 0.5, 0.7]])
    }

    #[test]
    fn identity() {
        let a = procrustes_align(&pts(), &pts(), AlignMode::Similarity).unwrap();
        assert!((a.scale - 1.0).abs() < 1e-12);
        for i in 0..3 {
            assert!(a.translation[i].abs() < 1e-12);
            for j in 0..3 {
                assert!((a.rotation[i][j] - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn collinear_rejected() {
        let p = Tensor::<f64>::from_rows(&[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [2.0, 2.0, 2.0]]);
        let g = Tensor::<f64>::from_rows(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        assert!(matches!(procrustes_align(&p, &g, AlignMode::Similarity), Err(MetricsError::Degenerate(_))));
    }
}
