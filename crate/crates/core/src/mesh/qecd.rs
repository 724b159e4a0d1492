use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::mesh::{Mesh, MeshError};
use crate::scalar::Scalar;

type V3 = [f64; 3];

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: V3, b: V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Symmetric 4x4 quadric stored as its upper triangle.
#[derive(Debug, Clone, Copy, Default)]
struct Quadric([f64; 10]);

impl Quadric {
    fn from_plane(n: V3, d: f64) -> Self {
        let p = [n[0], n[1], n[2], d];
        let mut q = [0.0; 10];
        let mut k = 0;
        for i in 0..4 {
            for j in i..4 {
                q[k] = p[i] * p[j];
                k += 1;
            }
        }
        Self(q)
    }

    fn add(&self, o: &Self) -> Self {
        let mut q = self.0;
        for (a, b) in q.iter_mut().zip(o.0) {
            *a += b;
        }
        Self(q)
    }

    // index into upper triangle
    fn at(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let offset = [0, 4, 7, 9][i];
        self.0[offset + j - i]
    }

    fn error(&self, v: V3) -> f64 {
        let p = [v[0], v[1], v[2], 1.0];
        let mut e = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                e += p[i] * self.at(i, j) * p[j];
            }
        }
        e
    }

    /// Minimizer of `v^T Q v` with `v = [x, 1]`, if the 3x3 block is well conditioned.
    fn optimum(&self) -> Option<V3> {
        let a = [
            [self.at(0, 0), self.at(0, 1), self.at(0, 2)],
            [self.at(1, 0), self.at(1, 1), self.at(1, 2)],
            [self.at(2, 0), self.at(2, 1), self.at(2, 2)],
        ];
        let b = [-self.at(0, 3), -self.at(1, 3), -self.at(2, 3)];
        let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
        let scale = a[0][0].abs() + a[1][1].abs() + a[2][2].abs();
        if scale == 0.0 || det.abs() <= 1e-10 * scale.powi(3) {
            return None;
        }
        let solve_col = |col: usize| {
            let mut m = a;
            for r in 0..3 {
                m[r][col] = b[r];
            }
            (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]))
                / det
        };
        let x = [solve_col(0), solve_col(1), solve_col(2)];
        x.iter().all(|c| c.is_finite()).then_some(x)
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    cost: f64,
    a: usize,
    b: usize,
    stamp_a: u32,
    stamp_b: u32,
    target: V3,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // reversed so BinaryHeap pops the cheapest edge; ties broken by indices
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| (other.a, other.b).cmp(&(self.a, self.b)))
    }
}

struct State {
    pos: Vec<V3>,
    quadric: Vec<Quadric>,
    stamp: Vec<u32>,
    alive: Vec<bool>,
    faces: Vec<[usize; 3]>,
    face_alive: Vec<bool>,
    vertex_faces: Vec<Vec<usize>>,
}

impl State {
    fn neighbors(&self, v: usize) -> Vec<usize> {
        let mut n: Vec<usize> = self.vertex_faces[v]
            .iter()
            .flat_map(|&f| self.faces[f])
            .filter(|&u| u != v)
            .collect();
        n.sort_unstable();
        n.dedup();
        n
    }

    fn candidate(&self, a: usize, b: usize) -> Candidate {
        let (a, b) = (a.min(b), a.max(b));
        let q = self.quadric[a].add(&self.quadric[b]);
        let (target, cost) = match q.optimum() {
            Some(x) => (x, q.error(x)),
            None => {
                let (pa, pb) = (self.pos[a], self.pos[b]);
                let mid = [
                    (pa[0] + pb[0]) / 2.0,
                    (pa[1] + pb[1]) / 2.0,
                    (pa[2] + pb[2]) / 2.0,
                ];
                [pa, pb, mid]
                    .into_iter()
                    .map(|p| (p, q.error(p)))
                    .min_by(|x, y| x.1.total_cmp(&y.1))
                    .expect("three options")
            }
        };
        Candidate {
            cost: cost.max(0.0),
            a,
            b,
            stamp_a: self.stamp[a],
            stamp_b: self.stamp[b],
            target,
        }
    }

    /// Link condition plus the normal-flip test for collapsing `b` into `a` at `p`.
    fn collapse_allowed(&self, a: usize, b: usize, p: V3) -> bool {
        let na = self.neighbors(a);
        let nb = self.neighbors(b);
        if na.binary_search(&b).is_err() {
            return false;
        }
        let common = na.iter().filter(|v| nb.binary_search(v).is_ok()).count();
        if common != 2 {
            return false;
        }
        // Collapsing an edge of a tetrahedron would leave a degenerate solid.
        if na.len() <= 3 && nb.len() <= 3 {
            return false;
        }
        for &v in &[a, b] {
            for &f in &self.vertex_faces[v] {
                let face = self.faces[f];
                if face.contains(&a) && face.contains(&b) {
                    continue;
                }
                let before = face.map(|u| self.pos[u]);
                let after = face.map(|u| if u == a || u == b { p } else { self.pos[u] });
                let n0 = cross(sub(before[1], before[0]), sub(before[2], before[0]));
                let n1 = cross(sub(after[1], after[0]), sub(after[2], after[0]));
                let (l0, l1) = (dot(n0, n0).sqrt(), dot(n1, n1).sqrt());
                if l1 <= 1e-12 * l0.max(f64::MIN_POSITIVE) || dot(n0, n1) <= 0.0 {
                    return false;
                }
            }
        }
        true
    }

    fn collapse(&mut self, a: usize, b: usize, p: V3) {
        self.pos[a] = p;
        self.quadric[a] = self.quadric[a].add(&self.quadric[b]);
        self.alive[b] = false;
        self.stamp[a] += 1;
        self.stamp[b] += 1;
        let b_faces = std::mem::take(&mut self.vertex_faces[b]);
        for f in b_faces {
            if self.faces[f].contains(&a) {
                self.face_alive[f] = false;
                for u in self.faces[f] {
                    if u != b {
                        self.vertex_faces[u].retain(|&g| g != f);
                    }
                }
            } else {
                for u in self.faces[f].iter_mut() {
                    if *u == b {
                        *u = a;
                    }
                }
                self.vertex_faces[a].push(f);
            }
        }
    }
}

/// Quadric edge-collapse decimation of a closed 2-manifold to exactly
/// `target_vertices` vertices.
///
/// Collapses that would break the link condition or turn a face by more than
/// 90 degrees are skipped; if no legal collapse remains before the target is
/// reached the achieved count is reported.
pub fn qecd_simplify<T: Scalar>(mesh: &Mesh<T>, target_vertices: usize) -> Result<Mesh<T>, MeshError> {
    if target_vertices < 4 {
        return Err(MeshError::Invalid(format!(
            "target of {target_vertices} vertices is below the minimum of 4"
        )));
    }
    if target_vertices > mesh.num_vertices() {
        return Err(MeshError::Invalid(format!(
            "target {target_vertices} exceeds the {} input vertices",
            mesh.num_vertices()
        )));
    }
    mesh.check_closed_manifold()?;
    if target_vertices == mesh.num_vertices() {
        return Ok(mesh.clone());
    }
    let n = mesh.num_vertices();
    let pos: Vec<V3> = mesh
        .vertices
        .iter()
        .map(|v| [v[0].as_f64(), v[1].as_f64(), v[2].as_f64()])
        .collect();
    let mut quadric = vec![Quadric::default(); n];
    let mut vertex_faces = vec![Vec::new(); n];
    for (fi, f) in mesh.faces.iter().enumerate() {
        let nrm = cross(sub(pos[f[1]], pos[f[0]]), sub(pos[f[2]], pos[f[0]]));
        let len = dot(nrm, nrm).sqrt();
        if len > 0.0 {
            let nrm = [nrm[0] / len, nrm[1] / len, nrm[2] / len];
            let q = Quadric::from_plane(nrm, -dot(nrm, pos[f[0]]));
            for &v in f {
                quadric[v] = quadric[v].add(&q);
            }
        }
        for &v in f {
            vertex_faces[v].push(fi);
        }
    }
    let mut st = State {
        pos,
        quadric,
        stamp: vec![0; n],
        alive: vec![true; n],
        faces: mesh.faces.clone(),
        face_alive: vec![true; mesh.num_faces()],
        vertex_faces,
    };
    let mut heap = BinaryHeap::new();
    for (&(a, b), _) in mesh.edge_face_counts().iter() {
        heap.push(st.candidate(a, b));
    }
    let mut remaining = n;
    let mut keep_color = (0..n).collect::<Vec<_>>();
    while remaining > target_vertices {
        let Some(c) = heap.pop() else {
            return Err(MeshError::TargetUnreachable {
                achieved: remaining,
                target: target_vertices,
            });
        };
        if !st.alive[c.a] || !st.alive[c.b] {
            continue;
        }
        if c.stamp_a != st.stamp[c.a] || c.stamp_b != st.stamp[c.b] {
            // stale: re-validate against current quadrics
            if st.neighbors(c.a).binary_search(&c.b).is_ok() {
                heap.push(st.candidate(c.a, c.b));
            }
            continue;
        }
        if !st.collapse_allowed(c.a, c.b, c.target) {
            continue;
        }
        st.collapse(c.a, c.b, c.target);
        keep_color[c.b] = c.a;
        remaining -= 1;
        for w in st.neighbors(c.a) {
            heap.push(st.candidate(c.a, w));
        }
        // Neighbors of the merged vertex may now pass the flip test; requeue their edges.
        for w in st.neighbors(c.a) {
            for x in st.neighbors(w) {
                if x != c.a {
                    heap.push(st.candidate(w, x));
                }
            }
        }
    }

    let mut remap = vec![usize::MAX; n];
    let mut vertices = Vec::with_capacity(remaining);
    let mut colors = mesh.colors.as_ref().map(|_| Vec::with_capacity(remaining));
    for v in 0..n {
        if st.alive[v] {
            remap[v] = vertices.len();
            let p = st.pos[v];
            vertices.push([T::of(p[0]), T::of(p[1]), T::of(p[2])]);
            if let (Some(out), Some(src)) = (colors.as_mut(), mesh.colors.as_ref()) {
                out.push(src[v]);
            }
        }
    }
    let faces = st
        .faces
        .iter()
        .zip(&st.face_alive)
        .filter(|(_, &alive)| alive)
        .map(|(f, _)| f.map(|v| remap[v]))
        .collect();
    let out = Mesh {
        vertices,
        faces,
        colors,
    };
    out.check_closed_manifold()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;

    #[test]
    fn plane_quadric_measures_squared_distance() {
        let q = Quadric::from_plane([0.0, 0.0, 1.0], -2.0);
        assert!((q.error([5.0, -1.0, 5.0]) - 9.0).abs() < 1e-12);
        assert!(q.optimum().is_none());
    }

    #[test]
    fn three_planes_meet_at_corner() {
        let q = Quadric::from_plane([1.0, 0.0, 0.0], -1.0)
            .add(&Quadric::from_plane([0.0, 1.0, 0.0], -2.0))
            .add(&Quadric::from_plane([0.0, 0.0, 1.0], -3.0));
        let x = q.optimum().unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12 && (x[2] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn icosphere_to_194() {
        let m = qecd_simplify(&icosphere::<f64>(3), 194).unwrap();
        assert_eq!(m.num_vertices(), 194);
        assert_eq!(m.euler_characteristic(), 2);
    }

    #[test]
    fn identity_when_target_equals_count() {
        let s = icosphere::<f64>(1);
        assert_eq!(qecd_simplify(&s, s.num_vertices()).unwrap(), s);
    }

    #[test]
    fn rejects_small_target() {
        assert!(qecd_simplify(&icosphere::<f64>(1), 3).is_err());
    }

    #[test]
    fn down_to_a_tetrahedron() {
        let m = qecd_simplify(&icosphere::<f64>(1), 4).unwrap();
        assert_eq!((m.num_vertices(), m.num_faces()), (4, 4));
    }
}
