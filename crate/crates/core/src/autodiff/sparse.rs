use crate::scalar::Scalar;

/// Constant compressed-sparse-row matrix used as the left operand of
/// [`Var::spmm`](crate::autodiff::Var::spmm).
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut sorted: Vec<(usize, usize, T)> = triplets.to_vec();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<T> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            assert!(r < rows && c < cols, "triplet ({r}, {c}) outside {rows}x{cols}");
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            indptr[r + 1] += 1;
            indices.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// `self * x` for a row-major `cols x d` block.
    pub fn mul_dense(&self, x: &[T], d: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.rows * d];
        for r in 0..self.rows {
            let dst = &mut out[r * d..(r + 1) * d];
            for (c, v) in self.row_entries(r) {
                for (o, &xi) in dst.iter_mut().zip(&x[c * d..(c + 1) * d]) {
                    *o += v * xi;
                }
            }
        }
        out
    }

    /// `self^T * g` for a row-major `rows x d` block.
    pub fn tmul_dense(&self, g: &[T], d: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols * d];
        for r in 0..self.rows {
            let src = &g[r * d..(r + 1) * d];
            for (c, v) in self.row_entries(r) {
                for (o, &gi) in out[c * d..(c + 1) * d].iter_mut().zip(src) {
                    *o += v * gi;
                }
            }
        }
        out
    }
}
