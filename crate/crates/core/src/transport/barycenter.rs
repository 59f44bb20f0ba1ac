//! Fixed-support Sinkhorn barycenters by iterative Bregman projections,
//! with a reverse pass through the unrolled iterations.
//!
//! For topics `t_k` and weights `lambda` each iteration updates, in log space,
//!
//! ```text
//! u_k  = t_k / (K v_k)
//! beta = d * prod_k (K^T u_k)^lambda_k
//! v_k  = beta / (K^T u_k)
//! d    = sqrt(d * beta / (K d))          (debiased only)
//! ```
//!
//! starting from `v_k = d = 1`. The debiased variant removes the entropic
//! blur, so a single topic (or identical topics) is its own barycenter. The
//! plain entropic variant keeps `d = 1`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use super::kernel::{GibbsKernel, LogProduct, Side};
use super::{Histogram, SinkhornConfig};
use crate::embedding::CostMatrix;
use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BarycenterKind {
    #[default]
    Debiased,
    Entropic,
}

impl BarycenterKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BarycenterKind::Debiased => "debiased",
            BarycenterKind::Entropic => "entropic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "debiased" => Ok(BarycenterKind::Debiased),
            "entropic" => Ok(BarycenterKind::Entropic),
            other => Err(Error::InvalidConfig(format!("unknown barycenter kind `{other}`"))),
        }
    }
}

/// Barycenters of one topic matrix under many weight columns at once.
///
/// Columns of the internal N x (D*K) work arrays are laid out document-major:
/// column `d*K + k` belongs to document `d`, topic `k`.
pub struct BarycenterBatch<'a, F> {
    kernel: &'a GibbsKernel<F>,
    kind: BarycenterKind,
    iters: usize,
}

/// Quantities recorded by one iteration for the reverse pass.
struct Record<F> {
    /// `log(K v_k)` from the previous scalings.
    y1: LogProduct<F>,
    /// `log(K^T u_k)`.
    h: LogProduct<F>,
    /// `log beta` (unnormalized).
    beta: Array2<F>,
    /// `log d` before this iteration and `log(K d)`.
    d_prev: Option<Array2<F>>,
    z: Option<LogProduct<F>>,
}

/// Output of [`BarycenterBatch::forward`].
pub struct BarycenterTape<F> {
    log_b: Array2<F>,
    records: Vec<Record<F>>,
}

#[derive(Debug, Clone)]
pub struct BarycenterGradients<F> {
    /// Adjoint of the log topics, N x K.
    pub log_topics: Array2<F>,
    /// Adjoint of the weights, K x D.
    pub weights: Array2<F>,
}

struct State<F> {
    g: Array2<F>,
    d: Option<Array2<F>>,
}

impl<'a, F: Real> BarycenterBatch<'a, F> {
    pub fn new(kernel: &'a GibbsKernel<F>, kind: BarycenterKind, iters: usize) -> Self {
        Self { kernel, kind, iters }
    }

    fn init(&self, n: usize, docs: usize, topics: usize) -> State<F> {
        State {
            g: Array2::zeros((n, docs * topics)),
            d: (self.kind == BarycenterKind::Debiased).then(|| Array2::zeros((n, docs))),
        }
    }

    fn step(&self, log_topics: &Array2<F>, weights: ArrayView2<'_, F>, state: &mut State<F>) -> Result<Record<F>> {
        let docs = weights.ncols();
        let y1 = self.kernel.log_product(Side::Left, state.g.view());
        let f = log_topics - &y1.log;
        let h = self.kernel.log_product(Side::Right, f.view());
        drop(f);

        let mut beta = match &state.d {
            Some(d) => d.clone(),
            None => Array2::zeros((h.log.nrows(), docs)),
        };
        let k_topics = weights.nrows();
        let wflat = weights.t().as_standard_layout().into_owned();
        let wflat = wflat.as_slice().expect("standard layout");
        for (b, hr) in rows_mut(&mut beta).zip(rows(&h.log)) {
            for ((b, hs), ws) in b.iter_mut().zip(hr.chunks_exact(k_topics)).zip(wflat.chunks_exact(k_topics)) {
                let mut acc = *b;
                for (&w, &hv) in ws.iter().zip(hs) {
                    if w != F::zero() {
                        acc += w * hv;
                    }
                }
                *b = acc;
            }
        }
        if beta.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalCollapse("barycenter scaling is not finite".into()));
        }
        set_scalings(&mut state.g, &beta, &h.log);

        let (d_prev, z) = match state.d.take() {
            Some(d_prev) => {
                let z = self.kernel.log_product(Side::Left, d_prev.view());
                let half = F::lit(0.5);
                let mut next = Array2::zeros(d_prev.raw_dim());
                Zip::from(&mut next).and(&d_prev).and(&beta).and(&z.log).for_each(|n, &dp, &b, &zz| *n = half * (dp + b - zz));
                state.d = Some(next);
                (Some(d_prev), Some(z))
            }
            None => (None, None),
        };
        Ok(Record { y1, h, beta, d_prev, z })
    }

    fn tile(log_topics: ArrayView2<'_, F>, docs: usize) -> Array2<F> {
        let (n, k) = log_topics.dim();
        let mut out = Array2::zeros((n, docs * k));
        for d in 0..docs {
            out.slice_mut(s![.., d * k..(d + 1) * k]).assign(&log_topics);
        }
        out
    }

    /// Runs exactly `iters` iterations for every weight column. With `record`
    /// set, keeps what [`BarycenterTape::backward`] needs.
    pub fn forward(&self, log_topics: ArrayView2<'_, F>, weights: ArrayView2<'_, F>, record: bool) -> Result<BarycenterTape<F>> {
        let (n, k) = log_topics.dim();
        if weights.nrows() != k {
            return Err(Error::ShapeMismatch(format!("{} weight rows for {k} topics", weights.nrows())));
        }
        if n != self.kernel.len() {
            return Err(Error::ShapeMismatch(format!("topics have {n} words, kernel has {}", self.kernel.len())));
        }
        let docs = weights.ncols();
        let tiled = Self::tile(log_topics, docs);
        let mut state = self.init(n, docs, k);
        let mut records = Vec::with_capacity(if record { self.iters } else { 0 });
        let mut last = None;
        for _ in 0..self.iters {
            let rec = self.step(&tiled, weights, &mut state)?;
            if record {
                records.push(rec);
            } else {
                last = Some(rec.beta);
            }
        }
        let beta = if record { records.last().map(|r| r.beta.clone()) } else { last }.expect("at least one iteration");
        Ok(BarycenterTape { log_b: normalize_log_columns(beta), records })
    }

    /// Iterates until the normalized barycenters move less than `tol` in L1
    /// (per column), or `max_iter` is reached. Returns the log barycenters,
    /// the iteration count and whether the tolerance was met.
    pub fn forward_converged(
        &self,
        log_topics: ArrayView2<'_, F>,
        weights: ArrayView2<'_, F>,
        tol: F,
        max_iter: usize,
    ) -> Result<(Array2<F>, usize, bool)> {
        let (n, k) = log_topics.dim();
        let docs = weights.ncols();
        let tiled = Self::tile(log_topics, docs);
        let mut state = self.init(n, docs, k);
        let mut prev: Option<Array2<F>> = None;
        for it in 1..=max_iter {
            let rec = self.step(&tiled, weights, &mut state)?;
            let log_b = normalize_log_columns(rec.beta);
            if let Some(p) = &prev {
                let worst = (0..docs)
                    .map(|d| p.column(d).iter().zip(log_b.column(d)).map(|(&a, &b)| (a.exp() - b.exp()).abs()).sum::<F>())
                    .fold(F::zero(), F::max);
                if worst < tol {
                    return Ok((log_b, it, true));
                }
            }
            prev = Some(log_b);
        }
        Ok((prev.expect("max_iter >= 1"), max_iter, false))
    }
}

/// `g[:, d*K + k] = beta[:, d] - h[:, d*K + k]`, walking rows.
fn set_scalings<F: Real>(g: &mut Array2<F>, beta: &Array2<F>, h: &Array2<F>) {
    let k = g.ncols() / beta.ncols().max(1);
    for ((g, b), hr) in rows_mut(g).zip(rows(beta)).zip(rows(h)) {
        for ((gs, &b), hs) in g.chunks_exact_mut(k.max(1)).zip(b).zip(hr.chunks_exact(k.max(1))) {
            for (g, &hv) in gs.iter_mut().zip(hs) {
                *g = b - hv;
            }
        }
    }
}

fn rows<F>(a: &Array2<F>) -> std::slice::ChunksExact<'_, F> {
    a.as_slice().expect("standard layout").chunks_exact(a.ncols().max(1))
}

fn rows_mut<F>(a: &mut Array2<F>) -> std::slice::ChunksExactMut<'_, F> {
    let cols = a.ncols().max(1);
    a.as_slice_mut().expect("standard layout").chunks_exact_mut(cols)
}

fn normalize_log_columns<F: Real>(mut beta: Array2<F>) -> Array2<F> {
    for mut col in beta.columns_mut() {
        let lse = log_sum_exp(col.iter().copied());
        col.mapv_inplace(|x| x - lse);
    }
    beta
}

impl<F: Real> BarycenterTape<F> {
    /// Normalized log barycenters, N x D.
    pub fn log_barycenters(&self) -> &Array2<F> {
        &self.log_b
    }

    pub fn barycenters(&self) -> Array2<F> {
        self.log_b.mapv(F::exp)
    }

    /// Reverse pass. `log_b_bar` is the adjoint of the normalized log
    /// barycenters; returns adjoints of the log topics and of the weights.
    pub fn backward(
        &self,
        batch: &BarycenterBatch<'_, F>,
        log_topics: ArrayView2<'_, F>,
        weights: ArrayView2<'_, F>,
        log_b_bar: ArrayView2<'_, F>,
    ) -> Result<BarycenterGradients<F>> {
        if self.records.len() != batch.iters {
            return Err(Error::InvalidConfig("backward needs a recorded forward pass".into()));
        }
        let kernel = batch.kernel;
        let (n, k_topics) = log_topics.dim();
        let docs = weights.ncols();
        let tiled = BarycenterBatch::tile(log_topics, docs);
        let half = F::lit(0.5);

        // through the final normalization: log_b = beta - lse(beta)
        let mut beta_bar_out = log_b_bar.as_standard_layout().into_owned();
        for d in 0..docs {
            let total: F = log_b_bar.column(d).sum();
            Zip::from(beta_bar_out.column_mut(d)).and(self.log_b.column(d)).for_each(|bb, &lb| *bb -= lb.exp() * total);
        }

        let mut g_bar = Array2::<F>::zeros((n, docs * k_topics));
        let mut d_bar = Array2::<F>::zeros((n, docs));
        let mut topics_bar = Array2::<F>::zeros((n, k_topics));
        let mut weights_bar = Array2::<F>::zeros((k_topics, docs));

        for l in (0..self.records.len()).rev() {
            let rec = &self.records[l];
            let mut beta_bar = if l + 1 == self.records.len() { beta_bar_out.clone() } else { Array2::zeros((n, docs)) };
            let mut d_prev_bar = None;
            let mut z_bar = None;
            if rec.d_prev.is_some() {
                beta_bar.scaled_add(half, &d_bar);
                z_bar = Some(d_bar.mapv(|x| -half * x));
                d_prev_bar = Some(d_bar.mapv(|x| half * x));
            }
            // g = beta - h, then beta = d_prev + sum_k w_k h_k
            let mut h_bar = Array2::<F>::zeros((n, docs * k_topics));
            for (bb, gb) in rows_mut(&mut beta_bar).zip(rows(&g_bar)) {
                for (bb, gs) in bb.iter_mut().zip(gb.chunks_exact(k_topics)) {
                    *bb += gs.iter().copied().sum::<F>();
                }
            }
            if let Some(dpb) = d_prev_bar.as_mut() {
                *dpb += &beta_bar;
            }
            for (((hb, gb), bb), hr) in rows_mut(&mut h_bar).zip(rows(&g_bar)).zip(rows(&beta_bar)).zip(rows(&rec.h.log)) {
                for (d, &b) in bb.iter().enumerate() {
                    let c = d * k_topics..(d + 1) * k_topics;
                    for (k, ((hb, &gv), &hv)) in hb[c.clone()].iter_mut().zip(&gb[c.clone()]).zip(&hr[c]).enumerate() {
                        let w = weights[[k, d]];
                        *hb = w * b - gv;
                        weights_bar[[k, d]] += b * hv;
                    }
                }
            }
            if let (Some(dpb), Some(d_prev), Some(z), Some(zb)) = (d_prev_bar.as_mut(), &rec.d_prev, &rec.z, &z_bar) {
                *dpb += &z.adjoint(kernel, zb.view(), || d_prev.clone());
            }
            // h = log(K^T e^f), f = log t - y1
            let f_bar = rec.h.adjoint(kernel, h_bar.view(), || &tiled - &rec.y1.log);
            for (tb, fb) in rows_mut(&mut topics_bar).zip(rows(&f_bar)) {
                for fs in fb.chunks_exact(k_topics) {
                    for (t, &v) in tb.iter_mut().zip(fs) {
                        *t += v;
                    }
                }
            }
            if l > 0 {
                // y1 = log(K e^g) with g from the previous iteration
                let prev = &self.records[l - 1];
                let y1_bar = f_bar.mapv(|x| -x);
                g_bar = rec.y1.adjoint(kernel, y1_bar.view(), || {
                    let mut g_prev = Array2::zeros((n, docs * k_topics));
                    set_scalings(&mut g_prev, &prev.beta, &prev.h.log);
                    g_prev
                });
                d_bar = d_prev_bar.unwrap_or_else(|| Array2::zeros((n, docs)));
            }
        }
        Ok(BarycenterGradients { log_topics: topics_bar, weights: weights_bar })
    }
}

fn check_simplex_columns<F: Real>(m: ArrayView2<'_, F>, what: &str) -> Result<()> {
    for (j, col) in m.axis_iter(Axis(1)).enumerate() {
        if col.iter().any(|&x| !x.is_finite() || x < F::zero()) || (col.sum() - F::one()).abs() > F::simplex_tol() {
            return Err(Error::InvalidHistogram(format!("{what} column {j} is not on the simplex")));
        }
    }
    Ok(())
}

fn log_of<F: Real>(m: ArrayView2<'_, F>) -> Array2<F> {
    m.mapv(|x| if x > F::zero() { x.ln() } else { F::neg_infinity() })
}

fn validate_inputs<F: Real>(topics: ArrayView2<'_, F>, weights: ArrayView1<'_, F>, cost: &CostMatrix<F>) -> Result<()> {
    if topics.ncols() == 0 || topics.ncols() != weights.len() || topics.nrows() != cost.len() {
        return Err(Error::ShapeMismatch(format!(
            "topics {:?}, weights {}, cost {}",
            topics.dim(),
            weights.len(),
            cost.len()
        )));
    }
    check_simplex_columns(topics, "topic")?;
    check_simplex_columns(weights.insert_axis(Axis(1)), "weight")
}

/// Barycenter of the topic columns under `weights`, from exactly
/// `cfg.unroll_iters` iterations.
pub fn sinkhorn_barycenter<F: Real>(
    topics: ArrayView2<'_, F>,
    weights: ArrayView1<'_, F>,
    cost: &CostMatrix<F>,
    cfg: &SinkhornConfig<F>,
) -> Result<Histogram<F>> {
    cfg.validate()?;
    validate_inputs(topics, weights, cost)?;
    let kernel = GibbsKernel::new(cost, cfg.epsilon);
    let batch = BarycenterBatch::new(&kernel, cfg.barycenter, cfg.unroll_iters);
    let tape = batch.forward(log_of(topics).view(), weights.insert_axis(Axis(1)), false)?;
    Histogram::normalized(tape.barycenters().column(0).to_owned())
}

/// Barycenter iterated to convergence (`cfg.tol` in L1, at most `cfg.max_iter`
/// iterations). Returns the histogram, iterations used and convergence flag.
pub fn sinkhorn_barycenter_converged<F: Real>(
    topics: ArrayView2<'_, F>,
    weights: ArrayView1<'_, F>,
    cost: &CostMatrix<F>,
    cfg: &SinkhornConfig<F>,
) -> Result<(Histogram<F>, usize, bool)> {
    cfg.validate()?;
    validate_inputs(topics, weights, cost)?;
    let kernel = GibbsKernel::new(cost, cfg.epsilon);
    let batch = BarycenterBatch::new(&kernel, cfg.barycenter, cfg.unroll_iters);
    let (log_b, iters, converged) = batch.forward_converged(log_of(topics).view(), weights.insert_axis(Axis(1)), cfg.tol, cfg.max_iter)?;
    let b: Array1<F> = log_b.column(0).mapv(F::exp);
    Ok((Histogram::normalized(b)?, iters, converged))
}
