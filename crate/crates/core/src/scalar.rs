//! Generic scalar abstraction over the floating-point element type.
//!
//! Everything numeric in this crate is written against [`Scalar`] so the
//! same code runs in `f32` (tracking, training) and `f64` (the
//! finite-difference gradient oracles, which need the extra precision).

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Default
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
    + 'static
{
    /// Lossy cast from `f64`.
    fn cast(v: f64) -> Self;

    /// Widen to `f64`.
    fn as_f64(self) -> f64;

    /// General matrix multiply `C = alpha * A * B + beta * C` with explicit
    /// strides, dispatching to the tuned kernel for the concrete type.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`; `rs*`/`cs*` are row
    /// and column strides in elements.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[inline(always)]
            fn cast(v: f64) -> Self {
                v as $t
            }

            #[inline(always)]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                debug_assert!(a.len() >= gemm_span(m, k, rsa, csa));
                debug_assert!(b.len() >= gemm_span(k, n, rsb, csb));
                debug_assert!(c.len() >= gemm_span(m, n, rsc, csc));
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Minimum slice length required to address an `r x c` matrix with the
/// given strides (non-negative strides only, which is all this crate uses).
fn gemm_span(r: usize, c: usize, rs: isize, cs: isize) -> usize {
    if r == 0 || c == 0 {
        return 0;
    }
    (r - 1) * rs.unsigned_abs() + (c - 1) * cs.unsigned_abs() + 1
}
