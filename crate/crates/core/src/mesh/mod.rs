//! Triangle meshes and the geometry pipeline built on them: IO, icosphere
//! generation, quadric edge-collapse decimation, regularization losses and
//! sphere-to-target deformation.

mod deform;
mod icosphere;
mod io;
mod losses;
mod qecd;
mod sampling;
mod toy_hand;

use std::collections::HashMap;

use thiserror::Error;

use crate::autodiff::{Tensor, TensorError};
use crate::graph::{GraphError, GraphTopology};
use crate::scalar::Scalar;

pub use deform::{deform_sphere, fit_template, DeformConfig, DeformResult, DeformStep};
pub use icosphere::icosphere;
pub use io::{read_mesh, read_obj, read_ply, write_mesh, write_obj, write_ply, MeshFormat};
pub use losses::{chamfer, evaluate_losses, LossValues, MeshLosses, MeshRegularizer};
pub use qecd::qecd_simplify;
pub use sampling::{nearest_neighbors, sample_points_from_faces, PointGrid, SurfaceSamples};
pub use toy_hand::{toy_hand_mesh, toy_hand_model, ToyHand, TOY_HAND_VERTICES};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("face {face} references vertex {index} but the mesh has {num_vertices}")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        num_vertices: usize,
    },
    #[error("face {0} repeats a vertex")]
    DegenerateFace(usize),
    #[error("mesh is not a closed 2-manifold: {0}")]
    NotManifold(String),
    #[error("decimation stopped at {achieved} vertices, target was {target}")]
    TargetUnreachable { achieved: usize, target: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("target point set is empty")]
    EmptyTarget,
    #[error("mesh has zero total surface area")]
    ZeroArea,
    #[error("deformation diverged at iteration {iteration}: loss {loss:e} exceeds 10x initial {initial:e}")]
    Diverged {
        iteration: usize,
        loss: f64,
        initial: f64,
        history: Vec<f64>,
    },
    #[error("unsupported mesh format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Vertex positions, counter-clockwise triangles and optional per-vertex RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh<T> {
    pub vertices: Vec<[T; 3]>,
    pub faces: Vec<[usize; 3]>,
    pub colors: Option<Vec<[T; 3]>>,
}

pub(crate) fn sub3<T: Scalar>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn add3<T: Scalar>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn scale3<T: Scalar>(a: [T; 3], s: T) -> [T; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn dot3<T: Scalar>(a: [T; 3], b: [T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross3<T: Scalar>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm3<T: Scalar>(a: [T; 3]) -> T {
    dot3(a, a).sqrt()
}

impl<T: Scalar> Mesh<T> {
    /// Validates indices and rejects degenerate faces.
    pub fn new(vertices: Vec<[T; 3]>, faces: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        let mesh = Self {
            vertices,
            faces,
            colors: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn with_colors(mut self, colors: Vec<[T; 3]>) -> Result<Self, MeshError> {
        if colors.len() != self.vertices.len() {
            return Err(MeshError::Invalid(format!(
                "{} colors for {} vertices",
                colors.len(),
                self.vertices.len()
            )));
        }
        self.colors = Some(colors);
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let n = self.vertices.len();
        for (i, f) in self.faces.iter().enumerate() {
            if let Some(&index) = f.iter().find(|&&v| v >= n) {
                return Err(MeshError::IndexOutOfRange {
                    face: i,
                    index,
                    num_vertices: n,
                });
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(MeshError::DegenerateFace(i));
            }
        }
        if let Some(c) = &self.colors {
            if c.len() != n {
                return Err(MeshError::Invalid("color count mismatch".into()));
            }
        }
        Ok(())
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    /// Number of edge uses per undirected edge.
    pub fn edge_face_counts(&self) -> HashMap<(usize, usize), usize> {
        let mut counts = HashMap::with_capacity(self.faces.len() * 3 / 2);
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn num_edges(&self) -> usize {
        self.edge_face_counts().len()
    }

    /// `V - E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.num_edges() as i64 + self.faces.len() as i64
    }

    /// Closed 2-manifold check: every edge borders exactly two faces with
    /// opposite orientations, every vertex is used and its one-ring is a
    /// single fan.
    pub fn check_closed_manifold(&self) -> Result<(), MeshError> {
        self.validate()?;
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                *directed.entry((f[k], f[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        for (&(a, b), &count) in &directed {
            if count != 1 {
                return Err(MeshError::NotManifold(format!(
                    "directed edge ({a}, {b}) used {count} times"
                )));
            }
            if !directed.contains_key(&(b, a)) {
                return Err(MeshError::NotManifold(format!("boundary edge ({a}, {b})")));
            }
        }
        // One-ring of each vertex must form one cycle: follow next-edge links.
        let mut next_in_fan: Vec<HashMap<usize, usize>> = vec![HashMap::new(); self.vertices.len()];
        for f in &self.faces {
            for k in 0..3 {
                let (v, a, b) = (f[k], f[(k + 1) % 3], f[(k + 2) % 3]);
                next_in_fan[v].insert(a, b);
            }
        }
        for (v, fan) in next_in_fan.iter().enumerate() {
            let Some((&start, _)) = fan.iter().next() else {
                return Err(MeshError::NotManifold(format!("vertex {v} is unused")));
            };
            let mut steps = 1;
            let mut cur = fan[&start];
            while cur != start {
                cur = *fan.get(&cur).ok_or_else(|| {
                    MeshError::NotManifold(format!("open fan around vertex {v}"))
                })?;
                steps += 1;
                if steps > fan.len() {
                    break;
                }
            }
            if steps != fan.len() {
                return Err(MeshError::NotManifold(format!(
                    "vertex {v} has {} fans",
                    if steps < fan.len() { "multiple" } else { "broken" }
                )));
            }
        }
        Ok(())
    }

    pub fn face_normal(&self, f: usize) -> [T; 3] {
        let [a, b, c] = self.faces[f];
        let n = cross3(
            sub3(self.vertices[b], self.vertices[a]),
            sub3(self.vertices[c], self.vertices[a]),
        );
        let len = norm3(n);
        if len > T::zero() {
            scale3(n, T::one() / len)
        } else {
            n
        }
    }

    pub fn face_area(&self, f: usize) -> T {
        let [a, b, c] = self.faces[f];
        norm3(cross3(
            sub3(self.vertices[b], self.vertices[a]),
            sub3(self.vertices[c], self.vertices[a]),
        )) * T::of(0.5)
    }

    pub fn surface_area(&self) -> T {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Area-weighted centroid of the surface (vertex mean if the area is zero).
    pub fn surface_centroid(&self) -> [T; 3] {
        let mut acc = [T::zero(); 3];
        let mut total = T::zero();
        for (i, f) in self.faces.iter().enumerate() {
            let a = self.face_area(i);
            let c = scale3(
                add3(add3(self.vertices[f[0]], self.vertices[f[1]]), self.vertices[f[2]]),
                T::one() / T::of(3.0),
            );
            acc = add3(acc, scale3(c, a));
            total += a;
        }
        if total > T::zero() {
            scale3(acc, T::one() / total)
        } else {
            self.vertex_centroid()
        }
    }

    pub fn vertex_centroid(&self) -> [T; 3] {
        let n = T::of(self.vertices.len().max(1) as f64);
        let s = self
            .vertices
            .iter()
            .fold([T::zero(); 3], |acc, &v| add3(acc, v));
        scale3(s, T::one() / n)
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> ([T; 3], [T; 3]) {
        let mut lo = [T::infinity(); 3];
        let mut hi = [T::neg_infinity(); 3];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    pub fn transformed(&self, f: impl Fn([T; 3]) -> [T; 3]) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&v| f(v)).collect(),
            faces: self.faces.clone(),
            colors: self.colors.clone(),
        }
    }

    pub fn translated(&self, t: [T; 3]) -> Self {
        self.transformed(|v| add3(v, t))
    }

    /// Vertices as a `V x 3` tensor.
    pub fn vertex_tensor(&self) -> Tensor<T> {
        let data = self.vertices.iter().flatten().copied().collect();
        Tensor::new(&[self.vertices.len(), 3], data).expect("V x 3")
    }

    /// Same faces, vertices taken from a `V x 3` tensor.
    pub fn with_vertex_tensor(&self, t: &Tensor<T>) -> Result<Self, MeshError> {
        if t.shape() != [self.vertices.len(), 3] {
            return Err(MeshError::Invalid(format!(
                "expected [{}, 3] vertex tensor, got {:?}",
                self.vertices.len(),
                t.shape()
            )));
        }
        let vertices = t.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        Ok(Self {
            vertices,
            faces: self.faces.clone(),
            colors: self.colors.clone(),
        })
    }

    /// Vertex adjacency graph induced by the faces.
    pub fn topology(&self) -> Result<GraphTopology, MeshError> {
        Ok(GraphTopology::from_faces(&self.faces, self.vertices.len())?)
    }

    pub fn cast<U: Scalar>(&self) -> Mesh<U> {
        let conv = |v: &[T; 3]| [U::of(v[0].as_f64()), U::of(v[1].as_f64()), U::of(v[2].as_f64())];
        Mesh {
            vertices: self.vertices.iter().map(conv).collect(),
            faces: self.faces.clone(),
            colors: self.colors.as_ref().map(|c| c.iter().map(conv).collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tetra() -> Mesh<f64> {
        Mesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
            ],
            vec![[0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]],
        )
        .unwrap()
    }

    #[test]
    fn tetrahedron_is_closed_manifold() {
        let t = tetra();
        t.check_closed_manifold().unwrap();
        assert_eq!(t.euler_characteristic(), 2);
    }

    #[test]
    fn open_mesh_rejected() {
        let mut t = tetra();
        t.faces.pop();
        assert!(matches!(
            t.check_closed_manifold(),
            Err(MeshError::NotManifold(_))
        ));
    }

    #[test]
    fn two_tetras_sharing_a_vertex_rejected() {
        let a = tetra();
        let mut vertices = a.vertices.clone();
        vertices.extend([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]]);
        let mut faces = a.faces.clone();
        // second tetra reuses vertex 0
        faces.extend([[0, 5, 4], [0, 4, 6], [4, 5, 6], [0, 6, 5]]);
        let m = Mesh::new(vertices, faces).unwrap();
        assert!(m.check_closed_manifold().is_err());
    }

    #[test]
    fn index_and_degenerate_checks() {
        assert!(matches!(
            Mesh::<f64>::new(vec![[0.0; 3]; 3], vec![[0, 1, 3]]),
            Err(MeshError::IndexOutOfRange { index: 3, .. })
        ));
        assert!(matches!(
            Mesh::<f64>::new(vec![[0.0; 3]; 3], vec![[0, 1, 1]]),
            Err(MeshError::DegenerateFace(0))
        ));
    }

    #[test]
    fn vertex_tensor_roundtrip() {
        let t = tetra();
        let back = t.with_vertex_tensor(&t.vertex_tensor()).unwrap();
        assert_eq!(back, t);
    }
}
