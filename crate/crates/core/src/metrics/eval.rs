use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::layout::{PartKind, PartLayout};
use crate::metrics::{procrustes_align, AlignMode, MetricsError};
use crate::scalar::Scalar;

/// Euclidean distance per row.
pub fn per_point_errors<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<Vec<f64>, MetricsError> {
    if pred.shape() != gt.shape() || pred.rank() != 2 || pred.cols() != 3 {
        return Err(MetricsError::CountMismatch {
            what: "points",
            pred: pred.rows(),
            gt: gt.rows(),
        });
    }
    Ok(pred
        .data()
        .chunks(3)
        .zip(gt.data().chunks(3))
        .map(|(a, b)| {
            (0..3)
                .map(|k| (a[k].as_f64() - b[k].as_f64()).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}

/// Mean per-point Euclidean distance, in the input units.
pub fn mpjpe<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64, MetricsError> {
    let e = per_point_errors(pred, gt)?;
    if e.is_empty() {
        return Err(MetricsError::Empty("points"));
    }
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcvCurve {
    pub thresholds_mm: Vec<f64>,
    pub fractions: Vec<f64>,
}

/// Fraction of errors at or below each threshold.
pub fn pcv_curve(errors: &[f64], thresholds: &[f64]) -> Result<PcvCurve, MetricsError> {
    if errors.is_empty() {
        return Err(MetricsError::Empty("per-vertex errors"));
    }
    if thresholds.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(MetricsError::Invalid("thresholds must be sorted ascending".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let fractions = thresholds
        .iter()
        .map(|&t| sorted.partition_point(|&e| e <= t) as f64 / n)
        .collect();
    Ok(PcvCurve {
        thresholds_mm: thresholds.to_vec(),
        fractions,
    })
}

pub fn write_pcv_csv(curve: &PcvCurve, path: &Path) -> Result<(), MetricsError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "threshold_mm,fraction")?;
    for (t, v) in curve.thresholds_mm.iter().zip(&curve.fractions) {
        writeln!(f, "{t},{v}")?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartMetrics {
    pub part: PartKind,
    pub samples: usize,
    /// Pose error (mm), without and with per-sample alignment.
    pub mpjpe: f64,
    pub mpjpe_aligned: f64,
    /// Mesh vertex error (mm), without and with per-sample alignment.
    pub mesh_error: f64,
    pub mesh_error_aligned: f64,
    pub pcv: PcvCurve,
    pub pcv_aligned: PcvCurve,
}

/// Per-part evaluation report. All distances are millimeters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub align_mode: AlignMode,
    pub parts: Vec<PartMetrics>,
}

#[derive(Default, Clone)]
struct PartAcc {
    joint: (f64, usize),
    joint_al: (f64, usize),
    verts: Vec<f64>,
    verts_al: Vec<f64>,
    samples: usize,
}

/// Collects per-sample errors and turns them into a [`MetricReport`].
pub struct MetricAccumulator {
    layout: PartLayout,
    thresholds: Vec<f64>,
    mode: AlignMode,
    acc: Vec<PartAcc>,
}

impl MetricAccumulator {
    pub fn new(layout: PartLayout, thresholds: Vec<f64>, mode: AlignMode) -> Self {
        let acc = vec![PartAcc::default(); layout.parts.len()];
        Self {
            layout,
            thresholds,
            mode,
            acc,
        }
    }

    /// Default PCV thresholds: 0 to 50 mm in 1 mm steps.
    pub fn default_thresholds() -> Vec<f64> {
        (0..=50).map(f64::from).collect()
    }

    pub fn add<T: Scalar>(
        &mut self,
        pred_pose: &Tensor<T>,
        gt_pose: &Tensor<T>,
        pred_verts: &Tensor<T>,
        gt_verts: &Tensor<T>,
    ) -> Result<(), MetricsError> {
        if gt_pose.rows() != self.layout.num_joints() || gt_verts.rows() != self.layout.num_vertices() {
            return Err(MetricsError::CountMismatch {
                what: "layout rows",
                pred: gt_pose.rows(),
                gt: self.layout.num_joints(),
            });
        }
        for (part, acc) in self.layout.parts.iter().zip(&mut self.acc) {
            let rows = |t: &Tensor<T>, r: &std::ops::Range<usize>| {
                Tensor::new(&[r.len(), 3], t.data()[3 * r.start..3 * r.end].to_vec())
            };
            let (pj, gj) = (rows(pred_pose, &part.joints)?, rows(gt_pose, &part.joints)?);
            let (pv, gv) = (rows(pred_verts, &part.vertices)?, rows(gt_verts, &part.vertices)?);
            let ej = per_point_errors(&pj, &gj)?;
            let ej_al = per_point_errors(&procrustes_align(&pj, &gj, self.mode)?.aligned, &gj)?;
            acc.joint.0 += ej.iter().sum::<f64>();
            acc.joint.1 += ej.len();
            acc.joint_al.0 += ej_al.iter().sum::<f64>();
            acc.joint_al.1 += ej_al.len();
            acc.verts.extend(per_point_errors(&pv, &gv)?);
            acc.verts_al
                .extend(per_point_errors(&procrustes_align(&pv, &gv, self.mode)?.aligned, &gv)?);
            acc.samples += 1;
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<MetricReport, MetricsError> {
        let mut parts = Vec::new();
        for (part, acc) in self.layout.parts.iter().zip(&self.acc) {
            if acc.samples == 0 {
                return Err(MetricsError::Empty("evaluation samples"));
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            parts.push(PartMetrics {
                part: part.kind,
                samples: acc.samples,
                mpjpe: acc.joint.0 / acc.joint.1 as f64,
                mpjpe_aligned: acc.joint_al.0 / acc.joint_al.1 as f64,
                mesh_error: mean(&acc.verts),
                mesh_error_aligned: mean(&acc.verts_al),
                pcv: pcv_curve(&acc.verts, &self.thresholds)?,
                pcv_aligned: pcv_curve(&acc.verts_al, &self.thresholds)?,
            });
        }
        Ok(MetricReport {
            align_mode: self.mode,
            parts,
        })
    }
}

impl MetricReport {
    pub fn part(&self, kind: PartKind) -> Option<&PartMetrics> {
        self.parts.iter().find(|p| p.part == kind)
    }

    /// Writes `metrics.json` plus one PCV CSV per part and alignment.
    pub fn write(&self, dir: &Path) -> Result<(), MetricsError> {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self).map_err(|e| MetricsError::Invalid(e.to_string()))?;
        std::fs::write(dir.join("metrics.json"), json + "\n")?;
        for p in &self.parts {
            write_pcv_csv(&p.pcv, &dir.join(format!("pcv_{}.csv", p.part.name())))?;
            write_pcv_csv(&p.pcv_aligned, &dir.join(format!("pcv_{}_aligned.csv", p.part.name())))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_joint_off() {
        let gt = Tensor::<f64>::zeros(&[21, 3]);
        let mut pred = gt.clone();
        pred.set(7, 0, 3.0);
        pred.set(7, 1, 4.0);
        assert_eq!(mpjpe(&pred, &gt).unwrap(), 5.0 / 21.0);
        assert_eq!(mpjpe(&gt, &gt).unwrap(), 0.0);
    }

    #[test]
    fn pcv_examples() {
        let c = pcv_curve(&[1.0, 2.0, 3.0], &[0.5, 2.0, 10.0]).unwrap();
        assert_eq!(c.fractions, vec![0.0, 2.0 / 3.0, 1.0]);
        assert!(pcv_curve(&[], &[1.0]).is_err());
        assert!(pcv_curve(&[1.0], &[2.0, 1.0]).is_err());
    }

    #[test]
    fn mismatch_rejected() {
        assert!(mpjpe(&Tensor::<f64>::zeros(&[3, 3]), &Tensor::zeros(&[4, 3])).is_err());
    }
}
