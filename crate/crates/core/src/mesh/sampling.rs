use std::rc::Rc;

use crate::autodiff::{CsrMatrix, Tensor};
use crate::mesh::{Mesh, MeshError};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

/// Points drawn on a mesh surface with their fixed barycentric weights.
///
/// `weights` is an `n x V` sparse matrix, so `weights * V` reproduces the
/// points for any vertex positions with the same topology.
#[derive(Debug, Clone)]
pub struct SurfaceSamples<T> {
    pub points: Tensor<T>,
    pub weights: Rc<CsrMatrix<T>>,
}

/// Area-weighted face choice, uniform barycentric position within the face.
pub fn sample_points_from_faces<T: Scalar>(
    mesh: &Mesh<T>,
    n: usize,
    seed: u64,
) -> Result<SurfaceSamples<T>, MeshError> {
    if n == 0 {
        return Err(MeshError::Invalid("sample count must be at least 1".into()));
    }
    if mesh.faces.is_empty() {
        return Err(MeshError::ZeroArea);
    }
    let mut cdf = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f).as_f64();
        cdf.push(total);
    }
    if !(total > 0.0) {
        return Err(MeshError::ZeroArea);
    }
    let mut rng = SplitMix64::new(seed);
    let mut triplets = Vec::with_capacity(3 * n);
    for i in 0..n {
        let r = rng.next_f64() * total;
        let f = cdf.partition_point(|&c| c <= r).min(cdf.len() - 1);
        let (u1, u2) = (rng.next_f64(), rng.next_f64());
        let s = u1.sqrt();
        let w = [1.0 - s, s * (1.0 - u2), s * u2];
        for k in 0..3 {
            triplets.push((i, mesh.faces[f][k], T::of(w[k])));
        }
    }
    let weights = CsrMatrix::from_triplets(n, mesh.num_vertices(), &triplets);
    let points = Tensor::new(&[n, 3], weights.mul_dense(mesh.vertex_tensor().data(), 3))?;
    Ok(SurfaceSamples {
        points,
        weights: Rc::new(weights),
    })
}

/// Uniform-grid index over a 3-D point set for exact nearest-neighbor queries.
#[derive(Debug, Clone)]
pub struct PointGrid {
    points: Vec<[f64; 3]>,
    lo: [f64; 3],
    hi: [f64; 3],
    cell: f64,
    dims: [usize; 3],
    starts: Vec<usize>,
    order: Vec<usize>,
}

impl PointGrid {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let n = points.len().max(1);
        let ext: Vec<f64> = (0..3).map(|k| (hi[k] - lo[k]).max(0.0)).collect();
        let max_ext = ext.iter().cloned().fold(0.0, f64::max);
        // about two points per occupied cell on a surface-like set
        let cell = if max_ext > 0.0 {
            (max_ext / (n as f64 / 2.0).sqrt().max(1.0)).max(max_ext * 1e-6)
        } else {
            1.0
        };
        let dims = [0, 1, 2].map(|k| ((ext[k] / cell).floor() as usize + 1).min(1 << 10));
        let cell_of = |p: &[f64; 3]| -> usize {
            let c = [0, 1, 2].map(|k| (((p[k] - lo[k]) / cell) as usize).min(dims[k] - 1));
            (c[2] * dims[1] + c[1]) * dims[0] + c[0]
        };
        let total = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0usize; total + 1];
        for p in &points {
            counts[cell_of(p) + 1] += 1;
        }
        for i in 0..total {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut order = vec![0; points.len()];
        for (i, p) in points.iter().enumerate() {
            let c = cell_of(p);
            order[fill[c]] = i;
            fill[c] += 1;
        }
        Self {
            points,
            lo,
            hi,
            cell,
            dims,
            starts: counts,
            order,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and squared distance of the closest stored point.
    pub fn nearest(&self, q: [f64; 3]) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        // Project onto the bounding box: distances to stored points can only shrink.
        let qc = [0, 1, 2].map(|k| q[k].clamp(self.lo[k], self.hi[k]));
        let home = [0, 1, 2].map(|k| (((qc[k] - self.lo[k]) / self.cell) as isize).min(self.dims[k] as isize - 1));
        let mut best = (usize::MAX, f64::INFINITY);
        let max_ring = *self.dims.iter().max().expect("3 dims") as isize;
        for r in 0..=max_ring {
            for dz in -r..=r {
                let z = home[2] + dz;
                if z < 0 || z >= self.dims[2] as isize {
                    continue;
                }
                for dy in -r..=r {
                    let y = home[1] + dy;
                    if y < 0 || y >= self.dims[1] as isize {
                        continue;
                    }
                    let on_face = dz.abs() == r || dy.abs() == r;
                    let xs: Vec<isize> = if on_face { (-r..=r).collect() } else { vec![-r, r] };
                    for dx in xs {
                        let x = home[0] + dx;
                        if x < 0 || x >= self.dims[0] as isize {
                            continue;
                        }
                        let c = ((z as usize * self.dims[1]) + y as usize) * self.dims[0] + x as usize;
                        for &i in &self.order[self.starts[c]..self.starts[c + 1]] {
                            let p = self.points[i];
                            let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                            if d < best.1 || (d == best.1 && i < best.0) {
                                best = (i, d);
                            }
                        }
                    }
                }
            }
            // every unvisited cell is at least r cells from the projected query
            let reach = r as f64 * self.cell;
            if best.0 != usize::MAX && best.1 <= reach * reach {
                break;
            }
        }
        Some(best)
    }
}

/// Nearest point of `target` for each row of `source` (both `n x 3`).
pub fn nearest_neighbors<T: Scalar>(source: &Tensor<T>, target: &PointGrid) -> Vec<usize> {
    source
        .data()
        .chunks(3)
        .map(|p| {
            target
                .nearest([p[0].as_f64(), p[1].as_f64(), p[2].as_f64()])
                .expect("non-empty target")
                .0
        })
        .collect()
}

pub(crate) fn tensor_points<T: Scalar>(t: &Tensor<T>) -> Vec<[f64; 3]> {
    t.data()
        .chunks(3)
        .map(|p| [p[0].as_f64(), p[1].as_f64(), p[2].as_f64()])
        .collect()
}
