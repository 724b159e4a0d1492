use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::metrics::MetricsError;
use crate::scalar::Scalar;

/// Points closer to the image plane than this (in mm) are treated as invisible.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self, MetricsError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(MetricsError::Invalid("focal lengths must be positive".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(MetricsError::Invalid("principal point outside the image".into()));
        }
        Ok(())
    }

    /// Pixel of a camera-space point, or `None` behind the camera.
    pub fn project(&self, p: [f64; 3]) -> Option<[f64; 2]> {
        (p[2] > MIN_DEPTH).then(|| [self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy])
    }

    pub fn in_bounds(&self, uv: [f64; 2]) -> bool {
        uv[0] >= 0.0 && uv[1] >= 0.0 && uv[0] < self.width as f64 && uv[1] < self.height as f64
    }

    /// Camera-space point at pixel `uv` and depth `z`.
    pub fn unproject(&self, uv: [f64; 2], z: f64) -> [f64; 3] {
        [(uv[0] - self.cx) * z / self.fx, (uv[1] - self.cy) * z / self.fy, z]
    }
}

/// Projects `n x 3` camera-space points. Returns `n x 2` pixels and a
/// visibility mask (false behind the camera or outside the image). Pixels of
/// points behind the camera are reported as NaN-free zeros.
pub fn project_points<T: Scalar>(points: &Tensor<T>, k: &CameraIntrinsics) -> (Tensor<T>, Vec<bool>) {
    let n = points.rows();
    let mut uv = Vec::with_capacity(2 * n);
    let mut mask = Vec::with_capacity(n);
    for p in points.data().chunks(3) {
        match k.project([p[0].as_f64(), p[1].as_f64(), p[2].as_f64()]) {
            Some(q) => {
                uv.extend([T::of(q[0]), T::of(q[1])]);
                mask.push(k.in_bounds(q));
            }
            None => {
                uv.extend([T::zero(), T::zero()]);
                mask.push(false);
            }
        }
    }
    (Tensor::new(&[n, 2], uv).expect("n x 2"), mask)
}

/// RGB image, row-major, values in [0, 1]. Pixel `(u, v)` is column `u`,
/// row `v`, with its center at integer coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[T; 3]>,
}

impl<T: Scalar> Image<T> {
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [T; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                data.push(f(u, v));
            }
        }
        Self { width, height, data }
    }

    pub fn pixel(&self, u: usize, v: usize) -> [T; 3] {
        self.data[v * self.width + u]
    }

    /// Bilinear interpolation with edge clamping.
    pub fn sample(&self, u: f64, v: f64) -> [T; 3] {
        let u = u.clamp(0.0, (self.width - 1) as f64);
        let v = v.clamp(0.0, (self.height - 1) as f64);
        let (u0, v0) = (u.floor() as usize, v.floor() as usize);
        let (u1, v1) = ((u0 + 1).min(self.width - 1), (v0 + 1).min(self.height - 1));
        let (a, b) = (T::of(u - u0 as f64), T::of(v - v0 as f64));
        let (p00, p10, p01, p11) = (self.pixel(u0, v0), self.pixel(u1, v0), self.pixel(u0, v1), self.pixel(u1, v1));
        let one = T::one();
        [0, 1, 2].map(|c| {
            (one - b) * ((one - a) * p00[c] + a * p10[c]) + b * ((one - a) * p01[c] + a * p11[c])
        })
    }

    /// Channel mean at a bilinear sample point.
    pub fn gray(&self, u: f64, v: f64) -> T {
        let c = self.sample(u, v);
        (c[0] + c[1] + c[2]) / T::of(3.0)
    }

    /// `H x W x 3` tensor view.
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(&[self.height, self.width, 3], self.data.iter().flatten().copied().collect()).expect("H x W x 3")
    }

    pub fn from_tensor(t: &Tensor<T>) -> Result<Self, MetricsError> {
        match t.shape() {
            &[h, w, 3] => Ok(Self {
                width: w,
                height: h,
                data: t.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
            }),
            s => Err(MetricsError::Invalid(format!("expected H x W x 3 image, got {s:?}"))),
        }
    }
}
