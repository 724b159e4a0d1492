//! Graph topologies and the spectral operators used by graph convolutions.

mod skeleton;
mod spectral;

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{CsrMatrix, Tensor, TensorError};
use crate::scalar::Scalar;

pub use skeleton::{SkeletonLayout, SkeletonTemplate, BOX_CORNERS, FINGER_CHAINS, HAND_JOINTS};
pub use spectral::{cheb_basis_apply, cheb_basis_dense, cheb_basis_sparse, POWER_ITERATION_TOL, POWER_RESIDUAL_TOL};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    Empty,
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    IndexOutOfRange(usize, usize, usize),
    #[error("face {index} {face:?} repeats a vertex")]
    DegenerateFace { index: usize, face: [usize; 3] },
    #[error("face {index} {face:?} references a vertex outside 0..{num_vertices}")]
    FaceOutOfRange {
        index: usize,
        face: [usize; 3],
        num_vertices: usize,
    },
    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    PowerIteration { iterations: usize, residual: f64 },
    #[error("Chebyshev order must be at least 1, got {0}")]
    InvalidOrder(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid topology file: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Undirected simple graph over `0..num_nodes`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "TopologyFile", into = "TopologyFile")]
pub struct GraphTopology {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    lambda_max: OnceLock<Result<f64, (usize, f64)>>,
}

impl PartialEq for GraphTopology {
    fn eq(&self, other: &Self) -> bool {
        self.num_nodes == other.num_nodes && self.edges == other.edges
    }
}

/// On-disk edge-list form: `{"num_nodes": n, "edges": [[i, j], ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TopologyFile {
    num_nodes: usize,
    edges: Vec<[usize; 2]>,
}

impl TryFrom<TopologyFile> for GraphTopology {
    type Error = GraphError;

    fn try_from(f: TopologyFile) -> Result<Self, GraphError> {
        GraphTopology::new(f.num_nodes, f.edges.iter().map(|e| (e[0], e[1])))
    }
}

impl From<GraphTopology> for TopologyFile {
    fn from(g: GraphTopology) -> Self {
        TopologyFile {
            num_nodes: g.num_nodes,
            edges: g.edges.iter().map(|&(a, b)| [a, b]).collect(),
        }
    }
}

impl GraphTopology {
    /// Builds a graph from undirected edges; duplicates (in either order) are merged.
    pub fn new(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, GraphError> {
        if num_nodes == 0 {
            return Err(GraphError::Empty);
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(GraphError::IndexOutOfRange(a, b, num_nodes));
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); num_nodes];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        neighbors.iter_mut().for_each(|n| n.sort_unstable());
        Ok(Self {
            num_nodes,
            edges,
            neighbors,
            lambda_max: OnceLock::new(),
        })
    }

    /// Union of the three undirected edges of every triangle.
    pub fn from_faces(faces: &[[usize; 3]], num_vertices: usize) -> Result<Self, GraphError> {
        let mut edges = Vec::with_capacity(faces.len() * 3);
        for (index, &face) in faces.iter().enumerate() {
            let [a, b, c] = face;
            if a.max(b).max(c) >= num_vertices {
                return Err(GraphError::FaceOutOfRange {
                    index,
                    face,
                    num_vertices,
                });
            }
            if a == b || b == c || a == c {
                return Err(GraphError::DegenerateFace { index, face });
            }
            edges.extend([(a, b), (b, c), (c, a)]);
        }
        Self::new(num_vertices, edges)
    }

    /// Disjoint union; node indices of later parts are offset by earlier sizes.
    pub fn block_diagonal(parts: &[&GraphTopology]) -> Result<Self, GraphError> {
        let mut offset = 0;
        let mut edges = Vec::new();
        for p in parts {
            edges.extend(p.edges.iter().map(|&(a, b)| (a + offset, b + offset)));
            offset += p.num_nodes;
        }
        Self::new(offset, edges)
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, GraphError> {
        assert_eq!(perm.len(), self.num_nodes, "permutation length");
        Self::new(
            self.num_nodes,
            self.edges.iter().map(|&(a, b)| (perm[a], perm[b])),
        )
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges as `(low, high)` pairs in ascending order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    pub fn adjacency<T: Scalar>(&self) -> Tensor<T> {
        let n = self.num_nodes;
        let mut a = Tensor::zeros(&[n, n]);
        for &(i, j) in &self.edges {
            a.set(i, j, T::one());
            a.set(j, i, T::one());
        }
        a
    }

    /// `diag(deg)` as a dense matrix.
    pub fn degree_matrix<T: Scalar>(&self) -> Tensor<T> {
        let n = self.num_nodes;
        let mut d = Tensor::zeros(&[n, n]);
        for i in 0..n {
            d.set(i, i, T::of(self.degree(i) as f64));
        }
        d
    }

    /// `I - D^-1/2 A D^-1/2`, with all-zero rows for isolated nodes.
    pub fn normalized_laplacian<T: Scalar>(&self) -> Tensor<T> {
        let n = self.num_nodes;
        let mut l = Tensor::zeros(&[n, n]);
        for i in 0..n {
            if self.degree(i) > 0 {
                l.set(i, i, T::one());
            }
        }
        for &(i, j) in &self.edges {
            let w = -1.0 / ((self.degree(i) * self.degree(j)) as f64).sqrt();
            l.set(i, j, T::of(w));
            l.set(j, i, T::of(w));
        }
        l
    }

    pub(crate) fn laplacian_apply(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.num_nodes {
            let di = self.degree(i);
            if di == 0 {
                out[i] = 0.0;
                continue;
            }
            let mut acc = x[i];
            for &j in &self.neighbors[i] {
                acc -= x[j] / ((di * self.degree(j)) as f64).sqrt();
            }
            out[i] = acc;
        }
    }

    /// Largest eigenvalue of the normalized Laplacian (2 for edgeless graphs).
    pub fn lambda_max(&self) -> Result<f64, GraphError> {
        self.lambda_max
            .get_or_init(|| spectral::power_iteration(self))
            .map_err(|(iterations, residual)| GraphError::PowerIteration {
                iterations,
                residual,
            })
    }

    /// `(2 / lambda_max) L - I`.
    pub fn scaled_laplacian<T: Scalar>(&self) -> Result<Tensor<T>, GraphError> {
        let lambda = self.lambda_max()?;
        let mut l = self.normalized_laplacian::<T>();
        let s = T::of(2.0 / lambda);
        let n = self.num_nodes;
        for i in 0..n {
            for j in 0..n {
                let v = l.at(i, j) * s - if i == j { T::one() } else { T::zero() };
                l.set(i, j, v);
            }
        }
        Ok(l)
    }

    /// Sparse form of [`scaled_laplacian`](Self::scaled_laplacian), with the
    /// same entries including explicit diagonal terms.
    pub fn scaled_laplacian_csr<T: Scalar>(&self) -> Result<CsrMatrix<T>, GraphError> {
        let s = 2.0 / self.lambda_max()?;
        let mut trip = Vec::with_capacity(self.num_nodes + 2 * self.edges.len());
        for i in 0..self.num_nodes {
            let l = if self.degree(i) > 0 { 1.0 } else { 0.0 };
            trip.push((i, i, T::of(s * l - 1.0)));
        }
        for &(i, j) in &self.edges {
            let w = T::of(-s / ((self.degree(i) * self.degree(j)) as f64).sqrt());
            trip.push((i, j, w));
            trip.push((j, i, w));
        }
        Ok(CsrMatrix::from_triplets(self.num_nodes, self.num_nodes, &trip))
    }

    pub fn load_json(path: &Path) -> Result<Self, GraphError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save_json(&self, path: &Path) -> Result<(), GraphError> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }
}
