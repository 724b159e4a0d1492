use std::collections::HashMap;
use std::rc::Rc;

use crate::autodiff::{CsrMatrix, Tape, Tensor, Var};
use crate::mesh::sampling::{nearest_neighbors, sample_points_from_faces, tensor_points, PointGrid};
use crate::mesh::{Mesh, MeshError};
use crate::scalar::Scalar;

/// The four deformation loss terms as tape values.
#[derive(Debug, Clone, Copy)]
pub struct MeshLosses<'t, T: Scalar> {
    pub chamfer: Var<'t, T>,
    pub edge: Var<'t, T>,
    pub normal: Var<'t, T>,
    pub laplacian: Var<'t, T>,
}

impl<'t, T: Scalar> MeshLosses<'t, T> {
    /// `chamfer + edge + lambda1 * normal + lambda2 * laplacian`.
    pub fn total(&self, lambda1: T, lambda2: T) -> Result<Var<'t, T>, MeshError> {
        Ok(self
            .chamfer
            .add(&self.edge)?
            .add(&self.normal.scale(lambda1)?)?
            .add(&self.laplacian.scale(lambda2)?)?)
    }

    pub fn values(&self) -> LossValues {
        LossValues {
            chamfer: self.chamfer.item().as_f64(),
            edge: self.edge.item().as_f64(),
            normal: self.normal.item().as_f64(),
            laplacian: self.laplacian.item().as_f64(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct LossValues {
    pub chamfer: f64,
    pub edge: f64,
    pub normal: f64,
    pub laplacian: f64,
}

impl LossValues {
    pub fn total(&self, lambda1: f64, lambda2: f64) -> f64 {
        self.chamfer + self.edge + lambda1 * self.normal + lambda2 * self.laplacian
    }
}

/// Symmetric squared-distance Chamfer between two `n x 3` point sets.
///
/// Nearest-neighbor assignments are found on the current values and held
/// fixed, so gradients flow through the matched differences only.
pub fn chamfer<'t, T: Scalar>(
    source: &Var<'t, T>,
    target: &Var<'t, T>,
    target_grid: Option<&PointGrid>,
) -> Result<Var<'t, T>, MeshError> {
    let (sv, tv) = (source.value(), target.value());
    if tv.numel() == 0 {
        return Err(MeshError::EmptyTarget);
    }
    if sv.numel() == 0 {
        return Err(MeshError::Invalid("empty source point set".into()));
    }
    let owned;
    let tgrid = match target_grid {
        Some(g) => g,
        None => {
            owned = PointGrid::new(tensor_points(&tv));
            &owned
        }
    };
    let sgrid = PointGrid::new(tensor_points(&sv));
    let s_to_t = Rc::new(nearest_neighbors(&sv, tgrid));
    let t_to_s = Rc::new(nearest_neighbors(&tv, &sgrid));
    let forward = source
        .sub(&target.gather_rows(s_to_t)?)?
        .square()?
        .row_sum()?
        .mean()?;
    let backward = target
        .sub(&source.gather_rows(t_to_s)?)?
        .square()?
        .row_sum()?
        .mean()?;
    Ok(forward.add(&backward)?)
}

/// Index structures for the mesh regularizers, built once per topology.
#[derive(Debug, Clone)]
pub struct MeshRegularizer<T> {
    num_vertices: usize,
    edge_a: Rc<Vec<usize>>,
    edge_b: Rc<Vec<usize>>,
    corner: [Rc<Vec<usize>>; 3],
    pair_a: Rc<Vec<usize>>,
    pair_b: Rc<Vec<usize>>,
    laplacian: Rc<CsrMatrix<T>>,
}

impl<T: Scalar> MeshRegularizer<T> {
    pub fn new(mesh: &Mesh<T>) -> Result<Self, MeshError> {
        mesh.validate()?;
        if mesh.faces.is_empty() {
            return Err(MeshError::Invalid("mesh has no faces".into()));
        }
        let mut edge_faces: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (fi, f) in mesh.faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edge_faces.entry((a.min(b), a.max(b))).or_default().push(fi);
            }
        }
        let mut edges: Vec<(usize, usize)> = edge_faces.keys().copied().collect();
        edges.sort_unstable();
        let mut pair_a = Vec::new();
        let mut pair_b = Vec::new();
        for e in &edges {
            let fs = &edge_faces[e];
            for i in 0..fs.len() {
                for j in i + 1..fs.len() {
                    pair_a.push(fs[i]);
                    pair_b.push(fs[j]);
                }
            }
        }
        let n = mesh.num_vertices();
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        let mut triplets = Vec::new();
        for (i, nb) in neighbors.iter().enumerate() {
            if nb.is_empty() {
                continue;
            }
            let w = T::one() / T::of(nb.len() as f64);
            triplets.push((i, i, -T::one()));
            triplets.extend(nb.iter().map(|&j| (i, j, w)));
        }
        let corner = [0, 1, 2].map(|k| Rc::new(mesh.faces.iter().map(|f| f[k]).collect::<Vec<_>>()));
        Ok(Self {
            num_vertices: n,
            edge_a: Rc::new(edges.iter().map(|e| e.0).collect()),
            edge_b: Rc::new(edges.iter().map(|e| e.1).collect()),
            corner,
            pair_a: Rc::new(pair_a),
            pair_b: Rc::new(pair_b),
            laplacian: Rc::new(CsrMatrix::from_triplets(n, n, &triplets)),
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    /// Mean squared edge length.
    pub fn edge<'t>(&self, verts: &Var<'t, T>) -> Result<Var<'t, T>, MeshError> {
        let d = verts
            .gather_rows(self.edge_a.clone())?
            .sub(&verts.gather_rows(self.edge_b.clone())?)?;
        Ok(d.square()?.row_sum()?.mean()?)
    }

    /// Mean of `1 - cos` between normals of faces sharing an edge.
    pub fn normal<'t>(&self, verts: &Var<'t, T>) -> Result<Var<'t, T>, MeshError> {
        if self.pair_a.is_empty() {
            return Ok(verts.tape().constant(Tensor::scalar(T::zero()))?);
        }
        let [i, j, k] = &self.corner;
        let p0 = verts.gather_rows(i.clone())?;
        let e1 = verts.gather_rows(j.clone())?.sub(&p0)?;
        let e2 = verts.gather_rows(k.clone())?.sub(&p0)?;
        let normals = e1.cross_rows(&e2)?.normalize_rows(T::of(1e-20))?;
        let cos = normals
            .gather_rows(self.pair_a.clone())?
            .row_dot(&normals.gather_rows(self.pair_b.clone())?)?;
        Ok(cos.neg()?.add_scalar(T::one())?.mean()?)
    }

    /// Mean squared norm of the uniform Laplacian (neighbor centroid minus vertex).
    pub fn laplacian<'t>(&self, verts: &Var<'t, T>) -> Result<Var<'t, T>, MeshError> {
        Ok(verts
            .spmm(self.laplacian.clone())?
            .square()?
            .row_sum()?
            .mean()?)
    }

    /// All four terms. `source` are points on the mesh (sampled or the vertices).
    pub fn losses<'t>(
        &self,
        verts: &Var<'t, T>,
        source: &Var<'t, T>,
        target: &Var<'t, T>,
        target_grid: Option<&PointGrid>,
    ) -> Result<MeshLosses<'t, T>, MeshError> {
        Ok(MeshLosses {
            chamfer: chamfer(source, target, target_grid)?,
            edge: self.edge(verts)?,
            normal: self.normal(verts)?,
            laplacian: self.laplacian(verts)?,
        })
    }
}

/// Loss values of a mesh against target points. With `samples = None` the
/// mesh vertices serve as the source point set.
pub fn evaluate_losses<T: Scalar>(
    mesh: &Mesh<T>,
    target_points: &Tensor<T>,
    samples: Option<usize>,
    seed: u64,
) -> Result<LossValues, MeshError> {
    if target_points.numel() == 0 {
        return Err(MeshError::EmptyTarget);
    }
    let reg = MeshRegularizer::new(mesh)?;
    let tape = Tape::new();
    let verts = tape.constant(mesh.vertex_tensor())?;
    let source = match samples {
        Some(n) => verts.spmm(sample_points_from_faces(mesh, n, seed)?.weights)?,
        None => verts,
    };
    let target = tape.constant(target_points.clone())?;
    Ok(reg.losses(&verts, &source, &target, None)?.values())
}
