//! Single precision matrix products through the system OpenBLAS.
//!
//! OpenBLAS has AVX-512 `sgemm` kernels and runs about twice as fast as the
//! portable ndarray product in `f32`. Its `dgemm` is slower than ndarray's
//! at the shapes used here, so `f64` stays on ndarray. OpenBLAS is pinned to
//! one thread: parallelism comes from the callers, and a single thread keeps
//! each product's summation order fixed.

use std::os::raw::c_int;
use std::sync::Once;

use cblas_sys::{cblas_sgemm, CBLAS_TRANSPOSE};
// linked for its symbols only
use openblas_src as _;
use ndarray::{Array2, ArrayView2};

extern "C" {
    fn openblas_set_num_threads(n: c_int);
}

static SINGLE_THREAD: Once = Once::new();

/// Leading dimension and transpose flag for a row- or column-major view.
fn operand(a: &ArrayView2<'_, f32>) -> Option<(CBLAS_TRANSPOSE, c_int)> {
    let (rows, cols) = a.dim();
    let [rs, cs] = [a.strides()[0], a.strides()[1]];
    if (cs == 1 || cols <= 1) && rs >= cols.max(1) as isize {
        Some((CBLAS_TRANSPOSE::CblasNoTrans, c_int::try_from(rs).ok()?))
    } else if (rs == 1 || rows <= 1) && cs >= rows.max(1) as isize {
        Some((CBLAS_TRANSPOSE::CblasTrans, c_int::try_from(cs).ok()?))
    } else {
        None
    }
}

/// `a · b`, or `None` when a view is not contiguous along one axis or a
/// dimension does not fit the BLAS integer type.
pub(crate) fn sgemm(a: ArrayView2<'_, f32>, b: ArrayView2<'_, f32>) -> Option<Array2<f32>> {
    let (m, k) = a.dim();
    let n = b.ncols();
    assert_eq!(k, b.nrows(), "inner dimensions differ");
    if m == 0 || n == 0 || k == 0 {
        return Some(Array2::zeros((m, n)));
    }
    let (ta, lda) = operand(&a)?;
    let (tb, ldb) = operand(&b)?;
    let (mi, ni, ki) = (c_int::try_from(m).ok()?, c_int::try_from(n).ok()?, c_int::try_from(k).ok()?);
    SINGLE_THREAD.call_once(|| {
        // SAFETY: plain setter in the linked OpenBLAS
        unsafe { openblas_set_num_threads(1) }
    });
    let mut c = Array2::<f32>::uninit((m, n));
    // SAFETY: shapes and leading dimensions were checked above; `c` is a
    // fresh row-major m x n buffer and beta = 0, so BLAS writes every entry
    // without reading any.
    unsafe {
        cblas_sgemm(
            cblas_sys::CBLAS_LAYOUT::CblasRowMajor,
            ta,
            tb,
            mi,
            ni,
            ki,
            1.0,
            a.as_ptr(),
            lda,
            b.as_ptr(),
            ldb,
            0.0,
            c.as_mut_ptr().cast::<f32>(),
            ni,
        );
        Some(c.assume_init())
    }
}
