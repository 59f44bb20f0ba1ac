//! Loss and gradients for a minibatch, through the unrolled barycenters.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use rayon::prelude::*;

use super::loss::{log_softmax_columns, loss_and_log_adjoint, softmax_columns, LossKind};
use crate::embedding::CostMatrix;
use crate::error::Result;
use crate::scalar::Real;
use crate::transport::{BarycenterBatch, BarycenterKind, GibbsKernel, SinkhornConfig};

/// Summed loss over the batch and gradients for `R` and the batch columns of `A`.
#[derive(Debug, Clone)]
pub struct BatchGradients<F> {
    pub loss: F,
    pub grad_r: Array2<F>,
    pub grad_a: Array2<F>,
}

/// Everything needed to evaluate the reconstruction objective for a fixed
/// cost matrix.
pub struct Objective<F> {
    kernel: GibbsKernel<F>,
    kind: BarycenterKind,
    iters: usize,
    loss: LossKind,
    chunk: usize,
}

impl<F: Real> Objective<F> {
    pub fn new(cost: &CostMatrix<F>, scfg: &SinkhornConfig<F>, loss: LossKind, chunk: usize) -> Result<Self> {
        scfg.validate()?;
        Ok(Self {
            kernel: GibbsKernel::new(cost, scfg.epsilon),
            kind: scfg.barycenter,
            iters: scfg.unroll_iters,
            loss,
            chunk: chunk.max(1),
        })
    }

    pub fn kernel(&self) -> &GibbsKernel<F> {
        &self.kernel
    }

    fn batch(&self) -> BarycenterBatch<'_, F> {
        BarycenterBatch::new(&self.kernel, self.kind, self.iters)
    }

    /// Reconstructions (N x s) for the given topic and weight parameters.
    pub fn reconstruct(&self, r: ArrayView2<'_, F>, a: ArrayView2<'_, F>) -> Result<Array2<F>> {
        let log_t = log_softmax_columns(r);
        let lam = softmax_columns(a);
        let parts: Vec<Array2<F>> = self
            .chunks(a.ncols())
            .into_par_iter()
            .map(|(lo, hi)| Ok(self.batch().forward(log_t.view(), lam.slice(s![.., lo..hi]), false)?.barycenters()))
            .collect::<Result<_>>()?;
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        Ok(ndarray::concatenate(Axis(1), &views).expect("chunks share row count"))
    }

    fn chunks(&self, cols: usize) -> Vec<(usize, usize)> {
        (0..cols).step_by(self.chunk).map(|lo| (lo, (lo + self.chunk).min(cols))).collect()
    }

    /// Loss summed over the columns of `y` and gradients w.r.t. `r` (N x K)
    /// and `a` (K x s). `offset` is added to column indices in errors.
    ///
    /// Work is split into fixed-size column chunks evaluated in parallel and
    /// reduced in chunk order, so the result does not depend on thread count.
    pub fn loss_and_grads(&self, y: ArrayView2<'_, F>, r: ArrayView2<'_, F>, a: ArrayView2<'_, F>, offset: usize) -> Result<BatchGradients<F>> {
        let log_t = log_softmax_columns(r);
        let lam = softmax_columns(a);
        let (n, k) = r.dim();
        let parts: Vec<(F, Array2<F>, Array2<F>)> = self
            .chunks(a.ncols())
            .into_par_iter()
            .map(|(lo, hi)| {
                let batch = self.batch();
                let w = lam.slice(s![.., lo..hi]);
                let tape = batch.forward(log_t.view(), w, true)?;
                let log_b = tape.log_barycenters();
                let mut loss = F::zero();
                let mut log_b_bar = Array2::zeros(log_b.raw_dim());
                for j in 0..(hi - lo) {
                    let (l, adj) = loss_and_log_adjoint(y.column(lo + j), log_b.column(j), self.loss, offset + lo + j, true)?;
                    loss += l;
                    log_b_bar.column_mut(j).assign(&adj.expect("adjoint requested"));
                }
                let g = tape.backward(&batch, log_t.view(), w, log_b_bar.view())?;
                // softmax chain for the weights: a_bar = lam * (lam_bar - <lam, lam_bar>)
                let mut a_bar = g.weights;
                for (mut col, lcol) in a_bar.columns_mut().into_iter().zip(w.columns()) {
                    let inner: F = col.iter().zip(lcol).map(|(&gb, &l)| gb * l).sum();
                    Zip::from(&mut col).and(lcol).for_each(|gb, &l| *gb = l * (*gb - inner));
                }
                Ok((loss, g.log_topics, a_bar))
            })
            .collect::<Result<_>>()?;

        let mut loss = F::zero();
        let mut log_t_bar = Array2::zeros((n, k));
        let mut grad_a = Array2::zeros(a.raw_dim());
        for ((l, tb, ab), (lo, hi)) in parts.into_iter().zip(self.chunks(a.ncols())) {
            loss += l;
            log_t_bar += &tb;
            grad_a.slice_mut(s![.., lo..hi]).assign(&ab);
        }
        // log-softmax chain for the topics: r_bar = lt_bar - t * sum(lt_bar)
        let t = log_t.mapv(F::exp);
        let mut grad_r = log_t_bar;
        for (mut col, tcol) in grad_r.columns_mut().into_iter().zip(t.columns()) {
            let total = col.sum();
            Zip::from(&mut col).and(tcol).for_each(|g, &tv| *g -= tv * total);
        }
        Ok(BatchGradients { loss, grad_r, grad_a })
    }
}

/// Loss and gradients for one batch. Convenience wrapper around [`Objective`].
pub fn batch_loss_and_grads<F: Real>(
    y_batch: ArrayView2<'_, F>,
    r: ArrayView2<'_, F>,
    a_batch: ArrayView2<'_, F>,
    cost: &CostMatrix<F>,
    scfg: &SinkhornConfig<F>,
    loss: LossKind,
) -> Result<BatchGradients<F>> {
    Objective::new(cost, scfg, loss, 16)?.loss_and_grads(y_batch, r, a_batch, 0)
}
