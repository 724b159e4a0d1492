use std::rc::Rc;

use crate::autodiff::{CsrMatrix, Tensor, Var};
use crate::graph::{GraphError, GraphTopology};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

/// Convergence tolerance on successive Rayleigh quotients.
pub const POWER_ITERATION_TOL: f64 = 1e-10;
/// Required eigen-residual `|Lx - rho x|` at convergence. The Rayleigh
/// quotient error is of order residual^2 / gap, far below 1e-10.
pub const POWER_RESIDUAL_TOL: f64 = 1e-7;

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Largest eigenvalue of the normalized Laplacian by power iteration.
///
/// `L` is positive semi-definite so the dominant eigenvalue is the largest
/// one. Connected components are iterated separately: top eigenvalues of
/// different components can be arbitrarily close, which stalls a single
/// iteration on the whole graph. Edgeless graphs report 2. On failure
/// returns `(iterations, residual)`.
pub(super) fn power_iteration(g: &GraphTopology) -> Result<f64, (usize, f64)> {
    let n = g.num_nodes();
    if g.num_edges() == 0 {
        return Ok(2.0);
    }
    let mut rng = SplitMix64::new(0x5eed_1a9c);
    let start: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let mut best = f64::NEG_INFINITY;
    for comp in components(g) {
        if comp.len() < 2 {
            continue;
        }
        let mut x = vec![0.0; n];
        for &i in &comp {
            x[i] = start[i];
        }
        best = best.max(power_iteration_from(g, x, comp.len())?);
    }
    Ok(best)
}

fn components(g: &GraphTopology) -> Vec<Vec<usize>> {
    let n = g.num_nodes();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for root in 0..n {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut comp = vec![root];
        let mut k = 0;
        while k < comp.len() {
            for &j in g.neighbors(comp[k]) {
                if !seen[j] {
                    seen[j] = true;
                    comp.push(j);
                }
            }
            k += 1;
        }
        out.push(comp);
    }
    out
}

// `x` is supported on one connected component of `size` nodes
fn power_iteration_from(g: &GraphTopology, mut x: Vec<f64>, size: usize) -> Result<f64, (usize, f64)> {
    let nx = norm(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut y = vec![0.0; x.len()];
    let mut rho_prev = f64::NAN;
    let cap = 100 * size.max(100);
    let mut residual = f64::INFINITY;
    for it in 0..cap {
        g.laplacian_apply(&x, &mut y);
        let rho: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        residual = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (b - rho * a).powi(2))
            .sum::<f64>()
            .sqrt();
        let ny = norm(&y);
        if ny == 0.0 {
            // Start vector orthogonal to every non-null eigenvector; cannot happen
            // with edges present and a random start, but guard anyway.
            return Err((it + 1, residual));
        }
        if (rho - rho_prev).abs() <= POWER_ITERATION_TOL * rho.max(1.0) && residual <= POWER_RESIDUAL_TOL {
            return Ok(rho);
        }
        rho_prev = rho;
        for (a, b) in x.iter_mut().zip(&y) {
            *a = b / ny;
        }
    }
    Err((cap, residual))
}

/// Chebyshev basis `[T_0(L)X, ..., T_{K-1}(L)X]` on the tape, differentiable in `x`.
pub fn cheb_basis_apply<'t, T: Scalar>(
    scaled_laplacian: &Var<'t, T>,
    x: &Var<'t, T>,
    order: usize,
) -> Result<Vec<Var<'t, T>>, GraphError> {
    if order < 1 {
        return Err(GraphError::InvalidOrder(order));
    }
    let mut out = Vec::with_capacity(order);
    out.push(*x);
    if order > 1 {
        out.push(scaled_laplacian.matmul(x)?);
    }
    for k in 2..order {
        let next = scaled_laplacian
            .matmul(&out[k - 1])?
            .scale(T::of(2.0))?
            .sub(&out[k - 2])?;
        out.push(next);
    }
    Ok(out)
}

/// [`cheb_basis_apply`] with a constant sparse `L~`; differentiable in `x`.
pub fn cheb_basis_sparse<'t, T: Scalar>(
    scaled_laplacian: &Rc<CsrMatrix<T>>,
    x: &Var<'t, T>,
    order: usize,
) -> Result<Vec<Var<'t, T>>, GraphError> {
    if order < 1 {
        return Err(GraphError::InvalidOrder(order));
    }
    let mut out = Vec::with_capacity(order);
    out.push(*x);
    if order > 1 {
        out.push(x.spmm(scaled_laplacian.clone())?);
    }
    for k in 2..order {
        let next = out[k - 1]
            .spmm(scaled_laplacian.clone())?
            .scale(T::of(2.0))?
            .sub(&out[k - 2])?;
        out.push(next);
    }
    Ok(out)
}

/// Untracked version of [`cheb_basis_apply`].
pub fn cheb_basis_dense<T: Scalar>(
    scaled_laplacian: &Tensor<T>,
    x: &Tensor<T>,
    order: usize,
) -> Result<Vec<Tensor<T>>, GraphError> {
    if order < 1 {
        return Err(GraphError::InvalidOrder(order));
    }
    let mut out = vec![x.clone()];
    if order > 1 {
        out.push(scaled_laplacian.matmul(x)?);
    }
    for k in 2..order {
        let lx = scaled_laplacian.matmul(&out[k - 1])?;
        let next = lx.zip_map(&out[k - 2], |a, b| T::of(2.0) * a - b);
        out.push(next);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn order_one_is_identity() {
        let g = GraphTopology::new(3, [(0, 1), (1, 2)]).unwrap();
        let lt = g.scaled_laplacian::<f64>().unwrap();
        let x = Tensor::from_fn(3, 2, |i, j| (i + 2 * j) as f64);
        let b = cheb_basis_dense(&lt, &x, 1).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0], x);
        assert!(matches!(
            cheb_basis_dense(&lt, &x, 0),
            Err(GraphError::InvalidOrder(0))
        ));
    }

    #[test]
    fn two_node_path_second_term_is_identity() {
        // L~ = [[0,-1],[-1,0]] squares to I, so T2 = 2 L~^2 - I = I.
        let g = GraphTopology::new(2, [(0, 1)]).unwrap();
        let lt = g.scaled_laplacian::<f64>().unwrap();
        let x = Tensor::from_rows(&[[1.0, 2.0], [3.0, -4.0]]);
        let b = cheb_basis_dense(&lt, &x, 3).unwrap();
        assert!(b[2].max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn sparse_and_dense_agree() {
        let g = GraphTopology::new(5, [(0, 1), (1, 2), (2, 3), (0, 2)]).unwrap();
        let lt = g.scaled_laplacian::<f64>().unwrap();
        let csr = Rc::new(g.scaled_laplacian_csr::<f64>().unwrap());
        let x = Tensor::from_fn(5, 2, |i, j| ((2 * i + j) as f64).cos());
        let dense = cheb_basis_dense(&lt, &x, 4).unwrap();
        let tape = Tape::new();
        let xv = tape.leaf(x).unwrap();
        for (a, b) in dense.iter().zip(cheb_basis_sparse(&csr, &xv, 4).unwrap()) {
            assert!(a.max_abs_diff(&b.value()) < 1e-14);
        }
    }

    #[test]
    fn tape_and_dense_agree() {
        let g = GraphTopology::new(4, [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]).unwrap();
        let lt = g.scaled_laplacian::<f64>().unwrap();
        let x = Tensor::from_fn(4, 3, |i, j| ((i * 3 + j) as f64).sin());
        let dense = cheb_basis_dense(&lt, &x, 4).unwrap();
        let tape = Tape::new();
        let ltv = tape.constant(lt).unwrap();
        let xv = tape.leaf(x).unwrap();
        let taped = cheb_basis_apply(&ltv, &xv, 4).unwrap();
        for (a, b) in dense.iter().zip(&taped) {
            assert!(a.max_abs_diff(&b.value()) < 1e-14);
        }
    }
}
