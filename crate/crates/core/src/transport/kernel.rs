//! Log-domain products with the Gibbs kernel `K = exp(-C / eps)`.
//!
//! `log(K exp(g))` is evaluated column-wise as `m + log(K exp(g - m))` with
//! `m = max(g)`, so the bulk of the work is one dense matrix product. Entries
//! whose shifted sum is too small to trust fall back to an exact log-sum-exp
//! over the log kernel. The adjoints follow the same pattern.

use ndarray::{Array1, Array2, ArrayBase, ArrayView1, ArrayView2, Data, Ix2, Zip};

use crate::embedding::CostMatrix;
use crate::scalar::{log_sum_exp, Real};

#[derive(Debug, Clone)]
pub struct GibbsKernel<F> {
    epsilon: F,
    log_k: Array2<F>,
    k: Array2<F>,
    /// `K == K^T` exactly, so both sides can use the row-major matrix.
    symmetric: bool,
}

/// Which side of the kernel a product uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `(K x)_i = sum_j K_ij x_j`
    Left,
    /// `(K^T x)_j = sum_i K_ij x_i`
    Right,
}

impl Side {
    fn opposite(self) -> Self {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

impl<F: Real> GibbsKernel<F> {
    pub fn new(cost: &CostMatrix<F>, epsilon: F) -> Self {
        let log_k = cost.entries().mapv(|c| -c / epsilon);
        let tiny = F::min_positive_value();
        let k = log_k.mapv(|x| {
            let v = x.exp();
            if v < tiny {
                F::zero()
            } else {
                v
            }
        });
        let symmetric = log_k == log_k.t();
        Self { epsilon, log_k, k, symmetric }
    }

    pub fn epsilon(&self) -> F {
        self.epsilon
    }

    pub fn len(&self) -> usize {
        self.k.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.k.nrows() == 0
    }

    pub fn log_kernel(&self) -> &Array2<F> {
        &self.log_k
    }

    fn views(&self, side: Side) -> (ArrayView2<'_, F>, ArrayView2<'_, F>) {
        match side {
            Side::Left => (self.k.view(), self.log_k.view()),
            Side::Right if self.symmetric => (self.k.view(), self.log_k.view()),
            Side::Right => (self.k.t(), self.log_k.t()),
        }
    }

    /// Column-wise `log(K exp(g))` (or with `K^T`). `-inf` entries in `g`
    /// stand for zero scalings.
    pub fn log_apply(&self, side: Side, g: ArrayView2<'_, F>) -> Array2<F> {
        self.log_product(side, g).log
    }

    /// [`GibbsKernel::log_apply`], keeping what the adjoint needs.
    pub fn log_product(&self, side: Side, g: ArrayView2<'_, F>) -> LogProduct<F> {
        let _ftz = FlushDenormals::enter();
        let (k, log_k) = self.views(side);
        let g = g.as_standard_layout();
        let cols = g.ncols();
        let shift = column_max(g.view());
        // Shifting to max(g) - headroom instead of max(g) lets the sums run up
        // to about sqrt(max_value), which roughly doubles the range of outputs
        // the product resolves before falling back.
        let headroom = F::max_value().ln() / F::lit(2.0);
        // all -inf columns shift by zero so they map to zero sums and -inf logs;
        // NaN or +inf shifts propagate for the caller to reject
        let safe: Vec<F> = shift.iter().map(|&m| if m == F::neg_infinity() { F::zero() } else { m - headroom }).collect();
        let mut scaled = Vec::with_capacity(g.len());
        for x in flat_rows(&g, cols) {
            scaled.extend(x.iter().zip(&safe).map(|(&x, &m)| x - m));
        }
        F::exp_in_place(&mut scaled);
        let scaled = Array2::from_shape_vec(g.raw_dim(), scaled).expect("same length");
        let sums = standard(F::matmul(k, scaled.view()));
        let guard = F::underflow_guard();
        let mut slow = false;
        let mut log = sums.as_slice().expect("standard layout").to_vec();
        F::ln_in_place(&mut log);
        for (lv, sv) in log.chunks_exact_mut(cols.max(1)).zip(flat_rows(&sums, cols)) {
            for ((l, &sv), &m) in lv.iter_mut().zip(sv).zip(&safe) {
                slow |= sv < guard;
                *l += m;
            }
        }
        let mut log = Array2::from_shape_vec(sums.raw_dim(), log).expect("same length");
        if slow {
            for ((i, b), o) in log.indexed_iter_mut() {
                if sums[[i, b]] < guard && shift[b].is_finite() {
                    *o = exact_lse(log_k.row(i), g.column(b));
                }
            }
        }
        LogProduct { side, log, shift, scaled, sums }
    }

    /// Reverse-mode adjoint of [`GibbsKernel::log_apply`]: given the output
    /// adjoint `y_bar`, returns `g_bar_j = sum_i y_bar_i exp(logK_ij + g_j - y_i)`.
    pub fn log_apply_adjoint(&self, side: Side, g: ArrayView2<'_, F>, y_bar: ArrayView2<'_, F>) -> Array2<F> {
        self.log_product(side, g).adjoint(self, y_bar, || g.to_owned())
    }
}

/// Result of a log-domain kernel product plus the intermediates of its fast
/// path: `log = shift + ln(sums)` with `sums = K exp(g - shift)`.
pub struct LogProduct<F> {
    side: Side,
    pub log: Array2<F>,
    shift: Array1<F>,
    scaled: Array2<F>,
    sums: Array2<F>,
}

impl<F: Real> LogProduct<F> {
    /// Adjoint with respect to the input `g`. On the fast path
    /// `exp(logK_ij + g_j - y_i) = K_ij scaled_j / sums_i`, so no
    /// exponentials are needed. Rows that took the exact path are handled
    /// term by term; `input` rebuilds `g` only in that case.
    pub fn adjoint(&self, kernel: &GibbsKernel<F>, y_bar: ArrayView2<'_, F>, input: impl FnOnce() -> Array2<F>) -> Array2<F> {
        let _ftz = FlushDenormals::enter();
        let (_, log_k) = kernel.views(self.side);
        let (k_t, _) = kernel.views(self.side.opposite());
        let y_bar = y_bar.as_standard_layout();
        let cols = self.sums.ncols();
        let guard = F::underflow_guard();
        let mut exact_rows = false;
        let mut w = Vec::with_capacity(self.sums.len());
        for (sv, yb) in flat_rows(&self.sums, cols).zip(flat_rows(&y_bar, cols)) {
            w.extend(sv.iter().zip(yb).map(|(&sv, &yb)| {
                if sv >= guard {
                    yb / sv
                } else {
                    exact_rows |= yb != F::zero();
                    F::zero()
                }
            }));
        }
        let w = Array2::from_shape_vec(self.sums.raw_dim(), w).expect("same length");
        let mut out = standard(F::matmul(k_t, w.view()));
        out *= &self.scaled;
        if exact_rows {
            let g = input();
            for ((i, b), &sv) in self.sums.indexed_iter() {
                let (yb, m) = (y_bar[[i, b]], self.shift[b]);
                if sv >= guard || !m.is_finite() || yb == F::zero() {
                    continue;
                }
                let yi = self.log[[i, b]];
                for j in 0..out.nrows() {
                    let gj = g[[j, b]];
                    if gj != F::neg_infinity() {
                        out[[j, b]] += yb * (log_k[[i, j]] + gj - yi).exp();
                    }
                }
            }
        }
        out
    }
}

/// Sets flush-to-zero and denormals-are-zero on the current thread until
/// dropped. Subnormal terms are far below the underflow guard, so dropping
/// them cannot change a fast-path result beyond rounding, and it keeps the
/// matrix products off the slow microcode path.
struct FlushDenormals {
    #[cfg(target_arch = "x86_64")]
    saved: u32,
}

impl FlushDenormals {
    #[cfg(target_arch = "x86_64")]
    fn enter() -> Self {
        let mut saved = 0u32;
        // SAFETY: reads and writes only the SSE control register of this thread
        unsafe {
            std::arch::asm!("stmxcsr [{}]", in(reg) &mut saved, options(nostack));
            let set = saved | 0x8040;
            std::arch::asm!("ldmxcsr [{}]", in(reg) &set, options(nostack, readonly));
        }
        Self { saved }
    }

    #[cfg(not(target_arch = "x86_64"))]
    fn enter() -> Self {
        Self {}
    }
}

impl Drop for FlushDenormals {
    fn drop(&mut self) {
        #[cfg(target_arch = "x86_64")]
        // SAFETY: restores the value read in `enter`
        unsafe {
            std::arch::asm!("ldmxcsr [{}]", in(reg) &self.saved, options(nostack, readonly));
        }
    }
}

fn flat_rows<F, S: Data<Elem = F>>(a: &ArrayBase<S, Ix2>, cols: usize) -> std::slice::ChunksExact<'_, F> {
    a.as_slice().expect("standard layout").chunks_exact(cols.max(1))
}

fn standard<F: Real>(a: Array2<F>) -> Array2<F> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Per-column maximum, scanning rows so memory is read in order. NaN wins.
fn column_max<F: Real>(a: ArrayView2<'_, F>) -> Array1<F> {
    let mut m = Array1::from_elem(a.ncols(), F::neg_infinity());
    for row in a.rows() {
        Zip::from(&mut m).and(&row).for_each(|m, &x| {
            if x > *m || x.is_nan() {
                *m = x;
            }
        });
    }
    m
}

fn exact_lse<F: Real>(log_k_row: ArrayView1<'_, F>, g: ArrayView1<'_, F>) -> F {
    log_sum_exp(log_k_row.iter().zip(g.iter()).map(|(&a, &b)| a + b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn brute_lse(c: &Array2<f64>, eps: f64, g: &[f64], side: Side) -> Vec<f64> {
        let n = c.nrows();
        (0..n)
            .map(|i| {
                let s: f64 = (0..n)
                    .map(|j| {
                        let cij = if side == Side::Left { c[[i, j]] } else { c[[j, i]] };
                        (-cij / eps + g[j]).exp()
                    })
                    .sum();
                s.ln()
            })
            .collect()
    }

    #[test]
    fn matches_direct_sum() {
        let c = array![[0.0, 0.3, 1.2], [0.7, 0.0, 0.5], [2.0, 0.1, 0.0]];
        let cost = CostMatrix::new(c.clone()).unwrap();
        let ker = GibbsKernel::new(&cost, 0.5);
        let g = array![[0.1], [-2.0], [0.4]];
        for side in [Side::Left, Side::Right] {
            let y = ker.log_apply(side, g.view());
            let want = brute_lse(&c, 0.5, &[0.1, -2.0, 0.4], side);
            for i in 0..3 {
                assert!((y[[i, 0]] - want[i]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn fallback_handles_extreme_shift() {
        // row 0 only reaches column 1, whose scaling is tiny relative to column 0
        let c = array![[0.0, 1.0], [1.0, 0.0]];
        let cost = CostMatrix::new(c).unwrap();
        let ker = GibbsKernel::new(&cost, 1e-3);
        let g = array![[0.0f64], [-5.0]];
        let y = ker.log_apply(Side::Left, g.view());
        assert!((y[[0, 0]] - 0.0).abs() < 1e-12);
        assert!((y[[1, 0]] - (-5.0)).abs() < 1e-12);
        let g = array![[f64::NEG_INFINITY], [0.0]];
        let y = ker.log_apply(Side::Left, g.view());
        assert!((y[[0, 0]] + 1000.0).abs() < 1e-9);
    }

    #[test]
    fn all_neg_infinity_column() {
        let cost = CostMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let ker = GibbsKernel::new(&cost, 0.1);
        let g = array![[f64::NEG_INFINITY], [f64::NEG_INFINITY]];
        let y = ker.log_apply(Side::Left, g.view());
        assert!(y.iter().all(|&v| v == f64::NEG_INFINITY));
    }

    #[test]
    fn adjoint_matches_finite_differences() {
        let c = array![[0.0, 0.3, 1.2], [0.7, 0.0, 0.5], [2.0, 0.1, 0.0]];
        let cost = CostMatrix::new(c).unwrap();
        for eps in [0.5, 0.01, 1e-3] {
            let ker = GibbsKernel::new(&cost, eps);
            let g = array![[0.1, 3.0], [-2.0, 0.0], [0.4, -40.0]];
            let y_bar = array![[0.3, -1.0], [-0.7, 0.2], [1.1, 0.5]];
            for side in [Side::Left, Side::Right] {
                let gb = ker.log_apply_adjoint(side, g.view(), y_bar.view());
                let h = 1e-6;
                for j in 0..3 {
                    for b in 0..2 {
                        let mut gp = g.clone();
                        gp[[j, b]] += h;
                        let mut gm = g.clone();
                        gm[[j, b]] -= h;
                        let fp: f64 = (&ker.log_apply(side, gp.view()) * &y_bar).column(b).sum();
                        let fm: f64 = (&ker.log_apply(side, gm.view()) * &y_bar).column(b).sum();
                        let fd = (fp - fm) / (2.0 * h);
                        assert!((fd - gb[[j, b]]).abs() < 1e-6, "eps {eps} side {side:?} ({j},{b}): {fd} vs {}", gb[[j, b]]);
                    }
                }
            }
        }
    }
}
