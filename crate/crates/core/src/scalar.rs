//! Element type of every differentiable value.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

/// Real scalar usable by tensors, the tape and the optimizers.
///
/// `gemm` computes `C = alpha * A * B + beta * C` on strided row/column
/// views. `beta == 0` overwrites `C` without reading it.
pub trait Scalar:
    Float
    + FromPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    /// Literal conversion; every f64 has a nearest representable value.
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 literal converts")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        beta: Self,
        c: &mut [Self],
        c_strides: (usize, usize),
    ) {
        check_views(m, k, n, a.len(), a_strides, b.len(), b_strides, c.len(), c_strides);
        let (rsa, csa) = a_strides;
        let (rsb, csb) = b_strides;
        let (rsc, csc) = c_strides;
        for i in 0..m {
            for j in 0..n {
                let mut acc = Self::zero();
                for p in 0..k {
                    acc += a[i * rsa + p * csa] * b[p * rsb + j * csb];
                }
                let dst = &mut c[i * rsc + j * csc];
                *dst = if beta == Self::zero() { alpha * acc } else { alpha * acc + beta * *dst };
            }
        }
    }
}

fn span(rows: usize, cols: usize, (rs, cs): (usize, usize)) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

#[allow(clippy::too_many_arguments)]
fn check_views(
    m: usize,
    k: usize,
    n: usize,
    a: usize,
    sa: (usize, usize),
    b: usize,
    sb: (usize, usize),
    c: usize,
    sc: (usize, usize),
) {
    assert!(span(m, k, sa) <= a, "gemm: A view exceeds buffer");
    assert!(span(k, n, sb) <= b, "gemm: B view exceeds buffer");
    assert!(span(m, n, sc) <= c, "gemm: C view exceeds buffer");
}

macro_rules! blas_scalar {
    ($t:ty, $name:literal, $kernel:path) => {
        impl Scalar for $t {
            const NAME: &'static str = $name;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (usize, usize),
                b: &[Self],
                b_strides: (usize, usize),
                beta: Self,
                c: &mut [Self],
                c_strides: (usize, usize),
            ) {
                check_views(m, k, n, a.len(), a_strides, b.len(), b_strides, c.len(), c_strides);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: check_views bounds every index the kernel touches,
                // and `c` is a unique borrow disjoint from `a` and `b`.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0 as isize,
                        a_strides.1 as isize,
                        b.as_ptr(),
                        b_strides.0 as isize,
                        b_strides.1 as isize,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0 as isize,
                        c_strides.1 as isize,
                    );
                }
            }
        }
    };
}

blas_scalar!(f64, "f64", matrixmultiply::dgemm);
blas_scalar!(f32, "f32", matrixmultiply::sgemm);
