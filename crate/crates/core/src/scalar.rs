//! Floating-point scalar abstraction shared by every numeric module.
//!
//! All math in the crate is written against [`Scalar`]; `f64` is the type used
//! for training and the CLI, `f32` is supported for inference and geometry.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use nalgebra::Matrix3;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Row-major 3x3 matrix used by the small closed-form solvers.
pub type Mat3<T> = [[T; 3]; 3];

pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Dtype code used by the THR1 tensor format.
    const DTYPE_CODE: u8;
    /// Bytes per element on disk.
    const BYTES: usize;

    /// Lossless-enough literal conversion. Panics only if `x` is not representable,
    /// which cannot happen for finite `f64` into `f32`/`f64`.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    /// `C = alpha * op(A) * op(B) + beta * C` with explicit strides.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`, each described by a
    /// (row stride, column stride) pair so transposes are free.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );

    /// Singular value decomposition `M = U diag(s) V^T` of a 3x3 matrix.
    fn svd3(m: Mat3<Self>) -> (Mat3<Self>, [Self; 3], Mat3<Self>);
}

fn check_extent(len: usize, rows: usize, cols: usize, strides: (isize, isize)) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows as isize - 1) * strides.0 + (cols as isize - 1) * strides.1;
    assert!(
        strides.0 >= 0 && strides.1 >= 0 && (last as usize) < len,
        "gemm operand out of bounds"
    );
}

macro_rules! impl_scalar {
    ($t:ty, $code:expr, $gemm:path) => {
        impl Scalar for $t {
            const DTYPE_CODE: u8 = $code;
            const BYTES: usize = std::mem::size_of::<$t>();

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                let mut buf = [0u8; std::mem::size_of::<$t>()];
                buf.copy_from_slice(&bytes[..std::mem::size_of::<$t>()]);
                <$t>::from_le_bytes(buf)
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_strides: (isize, isize),
            ) {
                check_extent(a.len(), m, k, a_strides);
                check_extent(b.len(), k, n, b_strides);
                check_extent(c.len(), m, n, c_strides);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every operand extent was bounds-checked above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    );
                }
            }

            fn svd3(m: Mat3<Self>) -> (Mat3<Self>, [Self; 3], Mat3<Self>) {
                let mat = Matrix3::from_fn(|i, j| m[i][j]);
                let svd = mat.svd(true, true);
                let u = svd.u.expect("requested U");
                let vt = svd.v_t.expect("requested V^T");
                let to_arr = |x: &Matrix3<$t>| -> Mat3<$t> {
                    let mut out = [[0.0; 3]; 3];
                    for i in 0..3 {
                        for j in 0..3 {
                            out[i][j] = x[(i, j)];
                        }
                    }
                    out
                };
                let v = vt.transpose();
                let s = svd.singular_values;
                (to_arr(&u), [s[0], s[1], s[2]], to_arr(&v))
            }
        }
    };
}

impl_scalar!(f32, 0, matrixmultiply::sgemm);
impl_scalar!(f64, 1, matrixmultiply::dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposed_operand() {
        // A = [[1,2],[3,4]] read as its transpose via swapped strides.
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [1.0f64, 0.0, 0.0, 1.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 2, 2, 1.0, &a, (1, 2), &b, (2, 1), 0.0, &mut c, (2, 1));
        assert_eq!(c, [1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn svd_reconstructs() {
        let m = [[2.0f64, 1.0, 0.0], [0.5, 3.0, 1.0], [0.0, -1.0, 1.5]];
        let (u, s, v) = f64::svd3(m);
        for i in 0..3 {
            for j in 0..3 {
                let r: f64 = (0..3).map(|k| u[i][k] * s[k] * v[j][k]).sum();
                assert!((r - m[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn le_roundtrip() {
        let mut buf = Vec::new();
        (-1.25f32).write_le(&mut buf);
        assert_eq!(f32::read_le(&buf), -1.25);
    }
}
