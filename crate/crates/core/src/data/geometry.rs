//! Small rigid-motion helpers for the scene generator.

pub type Rot = [[f64; 3]; 3];

pub const IDENTITY: Rot = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn normalize(a: [f64; 3]) -> [f64; 3] {
    scale(a, 1.0 / dot(a, a).sqrt())
}

/// Rotation by `angle` about the unit `axis` (Rodrigues).
pub fn axis_angle(axis: [f64; 3], angle: f64) -> Rot {
    let [x, y, z] = axis;
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
        [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
    ]
}

pub fn apply(r: &Rot, p: [f64; 3]) -> [f64; 3] {
    [dot(r[0], p), dot(r[1], p), dot(r[2], p)]
}

pub fn compose(a: &Rot, b: &Rot) -> Rot {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// `p -> r p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rigid {
    pub r: Rot,
    pub t: [f64; 3],
}

impl Rigid {
    pub const IDENTITY: Rigid = Rigid {
        r: IDENTITY,
        t: [0.0; 3],
    };

    /// Rotation `r` about the point `pivot`.
    pub fn about(r: Rot, pivot: [f64; 3]) -> Self {
        Self {
            r,
            t: sub(pivot, apply(&r, pivot)),
        }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        add(apply(&self.r, p), self.t)
    }

    /// `self` after `inner`.
    pub fn then_after(&self, inner: &Rigid) -> Rigid {
        Rigid {
            r: compose(&self.r, &inner.r),
            t: self.apply(inner.t),
        }
    }
}

pub fn segment_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = sub(b, a);
    let t = (dot(sub(p, a), ab) / dot(ab, ab)).clamp(0.0, 1.0);
    let d = sub(p, add(a, scale(ab, t)));
    dot(d, d).sqrt()
}
