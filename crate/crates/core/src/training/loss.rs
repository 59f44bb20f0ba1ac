//! Column softmax and reconstruction losses.

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, Zip};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::transport::Histogram;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    #[default]
    Kl,
    L2,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Kl => "kl",
            LossKind::L2 => "l2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kl" => Ok(LossKind::Kl),
            "l2" => Ok(LossKind::L2),
            other => Err(Error::InvalidConfig(format!("unknown loss `{other}` (expected kl or l2)"))),
        }
    }
}

fn softmax_into<F: Real>(src: ArrayView1<'_, F>, mut dst: ArrayViewMut1<'_, F>) {
    let max = src.iter().copied().fold(F::neg_infinity(), F::max);
    Zip::from(&mut dst).and(&src).for_each(|d, &s| *d = (s - max).exp());
    let total: F = dst.sum();
    dst.mapv_inplace(|x| x / total);
}

/// Column-wise softmax. Columns of the result sum to one.
pub fn softmax_columns<F: Real>(p: ArrayView2<'_, F>) -> Array2<F> {
    let mut out = Array2::zeros(p.raw_dim());
    for (src, dst) in p.columns().into_iter().zip(out.columns_mut()) {
        softmax_into(src, dst);
    }
    out
}

/// Column-wise log-softmax, `p - logsumexp(p)` per column.
pub fn log_softmax_columns<F: Real>(p: ArrayView2<'_, F>) -> Array2<F> {
    let mut out = p.to_owned();
    for mut col in out.columns_mut() {
        let lse = crate::scalar::log_sum_exp(col.iter().copied());
        col.mapv_inplace(|x| x - lse);
    }
    out
}

/// Loss between a document and its reconstruction.
pub fn reconstruction_loss<F: Real>(y: &Histogram<F>, y_hat: &Histogram<F>, kind: LossKind) -> Result<F> {
    if y.len() != y_hat.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} words", y.len(), y_hat.len())));
    }
    let log_hat = y_hat.mass().mapv(|x| if x > F::zero() { x.ln() } else { F::neg_infinity() });
    let (loss, _) = loss_and_log_adjoint(y.mass().view(), log_hat.view(), kind, 0, false)?;
    Ok(loss)
}

/// Loss for one column given the log reconstruction, and optionally the
/// adjoint with respect to that log reconstruction.
pub(crate) fn loss_and_log_adjoint<F: Real>(
    y: ArrayView1<'_, F>,
    log_b: ArrayView1<'_, F>,
    kind: LossKind,
    index: usize,
    want_adjoint: bool,
) -> Result<(F, Option<ndarray::Array1<F>>)> {
    match kind {
        LossKind::Kl => {
            let mut loss = F::zero();
            for (&yn, &lb) in y.iter().zip(log_b) {
                if yn > F::zero() {
                    if lb == F::neg_infinity() {
                        return Err(Error::DegenerateReconstruction { index });
                    }
                    loss += yn * (yn.ln() - lb);
                }
            }
            Ok((loss, want_adjoint.then(|| y.mapv(|yn| -yn))))
        }
        LossKind::L2 => {
            let b = log_b.mapv(F::exp);
            let loss = y.iter().zip(&b).map(|(&yn, &bn)| (yn - bn) * (yn - bn)).sum();
            let adj = want_adjoint.then(|| {
                let two = F::lit(2.0);
                Zip::from(&b).and(&y).map_collect(|&bn, &yn| two * (bn - yn) * bn)
            });
            Ok((loss, adj))
        }
    }
}
