//! Scalar abstraction shared by the numerical modules.
//!
//! Everything downstream of the corpus is generic over [`Real`], implemented
//! for `f32` and `f64`. Gradient checks and oracles run in `f64`; long
//! training runs can drop to `f32` for twice the GEMM throughput.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{Array2, ArrayView2, LinalgScalar, ScalarOperand};
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point type usable by the transport, training, index and eval code.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Short name written into manifests and checkpoints.
    const NAME: &'static str;

    /// Converts an `f64` literal. Values outside the range saturate to infinity.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).unwrap_or_else(|| if x > 0.0 { Self::infinity() } else { Self::neg_infinity() })
    }

    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable as float")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Smallest magnitude a shifted kernel sum may take before the fast path
    /// is considered unreliable (about the square root of the smallest normal).
    #[inline]
    fn underflow_guard() -> Self {
        Self::min_positive_value().sqrt()
    }

    /// Dense matrix product used by the kernel applications.
    fn matmul(a: ArrayView2<'_, Self>, b: ArrayView2<'_, Self>) -> Array2<Self> {
        a.dot(&b)
    }

    /// Elementwise `exp` over a slice.
    fn exp_in_place(xs: &mut [Self]) {
        xs.iter_mut().for_each(|x| *x = x.exp());
    }

    /// Elementwise `ln` over a slice.
    fn ln_in_place(xs: &mut [Self]) {
        xs.iter_mut().for_each(|x| *x = x.ln());
    }

    /// Tolerance for "sums to one" checks: 1e-9 in `f64`, a few ulps in `f32`.
    #[inline]
    fn simplex_tol() -> Self {
        Self::lit(1e-9).max(Self::epsilon() * Self::lit(64.0))
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    #[cfg(feature = "openblas")]
    fn matmul(a: ArrayView2<'_, Self>, b: ArrayView2<'_, Self>) -> Array2<Self> {
        crate::blas::sgemm(a, b).unwrap_or_else(|| a.dot(&b))
    }

    #[cfg(all(target_arch = "x86_64", target_os = "linux", target_env = "gnu"))]
    fn exp_in_place(xs: &mut [Self]) {
        crate::vmath::exp_in_place(xs);
    }

    #[cfg(all(target_arch = "x86_64", target_os = "linux", target_env = "gnu"))]
    fn ln_in_place(xs: &mut [Self]) {
        crate::vmath::ln_in_place(xs);
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";
}

/// `log(sum(exp(xs)))`, returning `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp<F: Real>(xs: impl IntoIterator<Item = F> + Clone) -> F {
    let max = xs.clone().into_iter().fold(F::neg_infinity(), F::max);
    if max == F::neg_infinity() {
        return max;
    }
    if max == F::infinity() {
        return max;
    }
    let s: F = xs.into_iter().map(|x| (x - max).exp()).sum();
    max + s.ln()
}
