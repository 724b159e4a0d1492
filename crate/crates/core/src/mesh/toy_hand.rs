use crate::graph::HAND_JOINTS;
use crate::mesh::{icosphere, qecd_simplify, Mesh, MeshError};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

pub const TOY_HAND_VERTICES: usize = 778;

/// Procedural right hand in millimeters: wrist at the origin, fingers along
/// +y, palm facing -z, thumb on the +x side.
#[derive(Debug, Clone)]
pub struct ToyHand<T> {
    pub mesh: Mesh<T>,
    /// Rest-pose joints in the wrist/thumb/index/middle/ring/pinky order.
    pub joints: Vec<[T; 3]>,
    /// Capsule radius of each finger, thumb first.
    pub finger_radii: [f64; 5],
}

struct Shape {
    palm_center: [f64; 3],
    palm_axes: [f64; 3],
    joints: Vec<[f64; 3]>,
    radii: [f64; 5],
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn scaled(v: [f64; 3], s: f64) -> [f64; 3] {
    [v[0] * s, v[1] * s, v[2] * s]
}

fn shape(seed: u64) -> Shape {
    let mut rng = SplitMix64::derive(seed, 0x4a4e);
    let mut jitter = |scale: f64| 1.0 + rng.uniform(-scale, scale);
    let size = jitter(0.05);
    // base position, direction and segment lengths per finger, thumb first
    let fingers: [([f64; 3], [f64; 3], [f64; 3], f64); 5] = [
        ([24.0, 22.0, -4.0], [0.75, 0.62, -0.2], [34.0, 30.0, 26.0], 10.0),
        ([22.0, 82.0, 0.0], [0.12, 1.0, 0.0], [40.0, 25.0, 21.0], 8.5),
        ([6.0, 86.0, 0.0], [0.0, 1.0, 0.0], [45.0, 28.0, 23.0], 8.8),
        ([-10.0, 83.0, 0.0], [-0.1, 1.0, 0.0], [42.0, 26.0, 22.0], 8.3),
        ([-25.0, 76.0, 0.0], [-0.22, 1.0, 0.0], [33.0, 20.0, 19.0], 7.2),
    ];
    let mut joints = vec![[0.0; 3]; HAND_JOINTS];
    let mut radii = [0.0; 5];
    for (f, (base, dir, lengths, radius)) in fingers.into_iter().enumerate() {
        let dir = normalize(dir);
        let l = jitter(0.06);
        let mut p = scaled(base, size);
        joints[1 + 4 * f] = p;
        for k in 0..3 {
            p = add(p, scaled(dir, lengths[k] * l * size));
            joints[2 + 4 * f + k] = p;
        }
        radii[f] = radius * size * jitter(0.05);
    }
    Shape {
        palm_center: scaled([0.0, 46.0, 0.0], size),
        palm_axes: scaled([41.0 * jitter(0.04), 50.0, 13.0 * jitter(0.06)], size),
        joints,
        radii,
    }
}

fn segment_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    let t = ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2).clamp(0.0, 1.0);
    let d = [ap[0] - t * ab[0], ap[1] - t * ab[1], ap[2] - t * ab[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

impl Shape {
    /// Negative inside the union of the palm ellipsoid and finger capsules.
    fn sdf(&self, p: [f64; 3]) -> f64 {
        let q = [0, 1, 2].map(|k| (p[k] - self.palm_center[k]) / self.palm_axes[k]);
        let r = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
        let min_axis = self.palm_axes.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut d = (r - 1.0) * min_axis;
        for f in 0..5 {
            for k in 0..3 {
                let a = self.joints[1 + 4 * f + k];
                let b = self.joints[2 + 4 * f + k];
                // slight taper toward the tip
                let radius = self.radii[f] * (1.0 - 0.08 * k as f64);
                d = d.min(segment_distance(p, a, b) - radius);
            }
        }
        d
    }

    /// Outermost surface crossing along a ray from the palm center.
    fn radial_hit(&self, dir: [f64; 3]) -> [f64; 3] {
        let c = self.palm_center;
        let at = |t: f64| add(c, scaled(dir, t));
        let (step, mut t) = (0.5, 220.0);
        while t > 0.0 && self.sdf(at(t)) > 0.0 {
            t -= step;
        }
        let (mut lo, mut hi) = (t.max(0.0), t + step);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if self.sdf(at(mid)) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        at(0.5 * (lo + hi))
    }
}

/// Hand mesh and skeleton. The implicit hand is sampled radially on a
/// level-5 icosphere (a closed genus-0 surface by construction) and
/// decimated to 778 vertices.
pub fn toy_hand_model<T: Scalar>(seed: u64) -> Result<ToyHand<T>, MeshError> {
    let s = shape(seed);
    let sphere = icosphere::<f64>(5);
    let dense = sphere.transformed(|v| s.radial_hit(v));
    let mesh = qecd_simplify(&dense, TOY_HAND_VERTICES)?;
    Ok(ToyHand {
        mesh: mesh.cast(),
        joints: s.joints.iter().map(|j| j.map(T::of)).collect(),
        finger_radii: s.radii,
    })
}

pub fn toy_hand_mesh<T: Scalar>(seed: u64) -> Result<Mesh<T>, MeshError> {
    Ok(toy_hand_model(seed)?.mesh)
}
