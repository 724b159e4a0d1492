use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::DataError;

/// Side of the per-keypoint heatmap grid.
pub const HEATMAP_SIZE: usize = 56;
/// Gaussian spread in grid cells.
pub const HEATMAP_SIGMA: f64 = 2.0;
/// Default bounding-box margin, as a fraction of the longer side.
pub const BBOX_PADDING: f64 = 0.1;

/// Axis-aligned pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn union(&self, o: &BBox) -> BBox {
        BBox {
            x_min: self.x_min.min(o.x_min),
            y_min: self.y_min.min(o.y_min),
            x_max: self.x_max.max(o.x_max),
            y_max: self.y_max.max(o.y_max),
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }

    /// Continuous grid coordinates `(column, row)`: the box corner maps to 0
    /// and the far corner to [`HEATMAP_SIZE`].
    pub fn to_grid(&self, p: [f64; 2]) -> [f64; 2] {
        let s = HEATMAP_SIZE as f64;
        [(p[0] - self.x_min) / self.width() * s, (p[1] - self.y_min) / self.height() * s]
    }

    pub fn from_grid(&self, g: [f64; 2]) -> [f64; 2] {
        let s = HEATMAP_SIZE as f64;
        [self.x_min + g[0] / s * self.width(), self.y_min + g[1] / s * self.height()]
    }
}

/// Coordinate-wise min/max of `points`, grown on every side by
/// `padding * max(width, height, 1 px)`.
pub fn bbox_from_pose2d(points: &[[f64; 2]], padding: f64) -> Result<BBox, DataError> {
    let first = points.first().ok_or_else(|| DataError::Invalid("bounding box of no points".into()))?;
    let mut b = BBox {
        x_min: first[0],
        y_min: first[1],
        x_max: first[0],
        y_max: first[1],
    };
    for p in &points[1..] {
        b.x_min = b.x_min.min(p[0]);
        b.y_min = b.y_min.min(p[1]);
        b.x_max = b.x_max.max(p[0]);
        b.y_max = b.y_max.max(p[1]);
    }
    let pad = padding * b.width().max(b.height()).max(1.0);
    b.x_min -= pad;
    b.y_min -= pad;
    b.x_max += pad;
    b.y_max += pad;
    Ok(b)
}

/// One `56 x 56` Gaussian per keypoint in the grid of its part's box
/// (`boxes[i]` for point `i`). The value at grid point `(r, c)` is
/// `exp(-d^2 / (2 sigma^2))` with `d` the grid distance to the keypoint, so
/// it reaches 1 when the keypoint falls on a grid point. Keypoints outside
/// their box give all-zero maps. Returns a `K x 56 x 56` tensor.
pub fn gaussian_heatmap(points: &[[f64; 2]], boxes: &[BBox], sigma: f64) -> Result<Tensor<f64>, DataError> {
    if !(sigma > 0.0) {
        return Err(DataError::Invalid(format!("heatmap sigma {sigma} must be positive")));
    }
    if boxes.len() != points.len() {
        return Err(DataError::Invalid(format!("{} boxes for {} keypoints", boxes.len(), points.len())));
    }
    let s = HEATMAP_SIZE;
    let mut data = vec![0.0; points.len() * s * s];
    for (k, (p, b)) in points.iter().zip(boxes).enumerate() {
        if !(b.width() > 0.0 && b.height() > 0.0) {
            return Err(DataError::Invalid(format!("degenerate box {b:?} for keypoint {k}")));
        }
        if !b.contains(*p) {
            continue;
        }
        let g = b.to_grid(*p);
        let map = &mut data[k * s * s..(k + 1) * s * s];
        let inv = 1.0 / (2.0 * sigma * sigma);
        for r in 0..s {
            let dy = r as f64 - g[1];
            for c in 0..s {
                let dx = c as f64 - g[0];
                map[r * s + c] = (-(dx * dx + dy * dy) * inv).exp();
            }
        }
    }
    Ok(Tensor::new(&[points.len(), s, s], data)?)
}

/// Pixel position of the arg-max grid point of one flattened map, or `None`
/// for an all-zero map. Ties go to the first cell in row-major order.
pub fn decode_heatmap(map: &[f64], bbox: &BBox) -> Option<[f64; 2]> {
    let (mut best, mut at) = (0.0, None);
    for (i, &v) in map.iter().enumerate() {
        if v > best {
            best = v;
            at = Some(i);
        }
    }
    at.map(|i| bbox.from_grid([(i % HEATMAP_SIZE) as f64, (i / HEATMAP_SIZE) as f64]))
}
