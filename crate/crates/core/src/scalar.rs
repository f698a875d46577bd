//! Floating-point scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the engine is generic over: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + FromStr
    + Send
    + Sync
    + 'static
{
    /// Short type name used in checkpoints and diagnostics.
    const NAME: &'static str;

    /// Error function.
    fn error_function(self) -> Self;

    /// Converts an `f64` literal, rounding to nearest.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    /// `C ← A·B + beta·C` for strided row/column layouts; `A` is `m×k`,
    /// `B` is `k×n`, `C` is `m×n` row-major and contiguous.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_strides: (usize, usize), b: &[Self], b_strides: (usize, usize), beta: Self, c: &mut [Self]);
}

/// Panics unless every strided index of an `rows×cols` view lies in `len`.
#[inline]
fn check_view(len: usize, rows: usize, cols: usize, (rs, cs): (usize, usize)) {
    if rows > 0 && cols > 0 {
        assert!((rows - 1) * rs + (cols - 1) * cs < len, "matrix view out of bounds");
    }
}

macro_rules! gemm_impl {
    ($kernel:path) => {
        fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_strides: (usize, usize), b: &[Self], b_strides: (usize, usize), beta: Self, c: &mut [Self]) {
            check_view(a.len(), m, k, a_strides);
            check_view(b.len(), k, n, b_strides);
            assert_eq!(c.len(), m * n, "output size");
            if m == 0 || n == 0 {
                return;
            }
            // SAFETY: the three views were bounds-checked above and `c`
            // does not alias the inputs.
            unsafe {
                $kernel(
                    m, k, n, 1.0,
                    a.as_ptr(), a_strides.0 as isize, a_strides.1 as isize,
                    b.as_ptr(), b_strides.0 as isize, b_strides.1 as isize,
                    beta,
                    c.as_mut_ptr(), n as isize, 1,
                );
            }
        }
    };
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn error_function(self) -> Self {
        libm::erff(self)
    }

    gemm_impl!(matrixmultiply::sgemm);
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn error_function(self) -> Self {
        libm::erf(self)
    }

    gemm_impl!(matrixmultiply::dgemm);
}
