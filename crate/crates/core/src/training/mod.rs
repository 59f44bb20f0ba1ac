//! Wasserstein dictionary learning: topics `T = softmax(R)` and weights
//! `Lambda = softmax(A)` fitted by minibatch Adam on the reconstruction loss.

mod adam;
mod grad;
mod loss;

pub use adam::{adam_step, AdamParams, AdamState};
pub use grad::{batch_loss_and_grads, BatchGradients, Objective};
pub use loss::{log_softmax_columns, reconstruction_loss, softmax_columns, LossKind};

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embedding::CostMatrix;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::transport::SinkhornConfig;

/// Topic and weight parameters together with their softmax images.
#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryModel<F> {
    r: Array2<F>,
    a: Array2<F>,
    t: Array2<F>,
    lambda: Array2<F>,
}

impl<F: Real> DictionaryModel<F> {
    /// `r` is N x K, `a` is K x M.
    pub fn from_params(r: Array2<F>, a: Array2<F>) -> Result<Self> {
        if r.ncols() != a.nrows() || r.ncols() == 0 || r.nrows() == 0 {
            return Err(Error::ShapeMismatch(format!("R is {:?}, A is {:?}", r.dim(), a.dim())));
        }
        if r.iter().chain(a.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NumericalCollapse("non-finite model parameter".into()));
        }
        let t = softmax_columns(r.view());
        let lambda = softmax_columns(a.view());
        Ok(Self { r, a, t, lambda })
    }

    pub fn r(&self) -> &Array2<F> {
        &self.r
    }

    pub fn a(&self) -> &Array2<F> {
        &self.a
    }

    /// Topics, N x K, column-stochastic.
    pub fn topics(&self) -> &Array2<F> {
        &self.t
    }

    /// Document weights, K x M, column-stochastic.
    pub fn weights(&self) -> &Array2<F> {
        &self.lambda
    }

    pub fn n_words(&self) -> usize {
        self.r.nrows()
    }

    pub fn n_topics(&self) -> usize {
        self.r.ncols()
    }

    pub fn n_docs(&self) -> usize {
        self.a.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStop {
    /// Minimum relative improvement of the epoch-mean loss.
    pub rel_tol: f64,
    /// Consecutive epochs below `rel_tol` before stopping.
    pub patience: usize,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self { rel_tol: 1e-4, patience: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub topics: usize,
    pub batch_size: usize,
    pub adam: AdamParams,
    pub epochs: usize,
    pub early_stop: Option<EarlyStop>,
    pub seed: u64,
    pub loss: LossKind,
    pub holdout_fraction: f64,
    /// Documents per parallel work item inside a batch. Part of the
    /// numerical definition: changing it may change low-order bits.
    pub chunk_docs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            topics: 4,
            batch_size: 64,
            adam: AdamParams::default(),
            epochs: 100,
            early_stop: Some(EarlyStop::default()),
            seed: 1,
            loss: LossKind::Kl,
            holdout_fraction: 0.0,
            chunk_docs: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.topics == 0 {
            return bad("topics must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1");
        }
        if !(self.adam.learning_rate > 0.0) || !self.adam.learning_rate.is_finite() {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam.eps_hat > 0.0) {
            return bad("adam eps_hat must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout fraction must lie in [0, 1)");
        }
        if self.chunk_docs == 0 {
            return bad("chunk size must be >= 1");
        }
        if let Some(es) = self.early_stop {
            if es.patience == 0 || !(es.rel_tol >= 0.0) {
                return bad("early stop needs patience >= 1 and rel_tol >= 0");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub heldout_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    pub model: DictionaryModel<F>,
    pub trace: Vec<EpochStats>,
    pub train_docs: Vec<usize>,
    pub heldout_docs: Vec<usize>,
    pub stopped_early: bool,
}

fn check_inputs<F: Real>(y: ArrayView2<'_, F>, n_words: usize) -> Result<()> {
    if y.nrows() != n_words {
        return Err(Error::ShapeMismatch(format!("documents have {} words, cost has {n_words}", y.nrows())));
    }
    if y.ncols() == 0 {
        return Err(Error::EmptyCorpus);
    }
    for (j, col) in y.axis_iter(Axis(1)).enumerate() {
        if col.iter().any(|&x| !x.is_finite() || x < F::zero()) || (col.sum() - F::one()).abs() > F::simplex_tol() {
            return Err(Error::InvalidHistogram(format!("document {j} is not on the simplex")));
        }
    }
    Ok(())
}

fn gather<F: Real>(m: &Array2<F>, cols: &[usize]) -> Array2<F> {
    m.select(Axis(1), cols)
}

/// Per-column Adam over a subset of columns of a parameter matrix.
struct ColumnAdam<F> {
    states: Vec<AdamState<F>>,
}

impl<F: Real> ColumnAdam<F> {
    fn new(rows: usize, cols: usize) -> Self {
        Self { states: (0..cols).map(|_| AdamState::new(rows, 1)).collect() }
    }

    fn step(&mut self, param: &mut Array2<F>, cols: &[usize], grad: &Array2<F>, hp: &AdamParams) {
        for (j, &c) in cols.iter().enumerate() {
            adam_step(param.slice_mut(s![.., c..c + 1]), grad.slice(s![.., j..j + 1]), &mut self.states[c], hp);
        }
    }
}

struct Stopper {
    cfg: Option<EarlyStop>,
    prev: Option<f64>,
    stalled: usize,
}

impl Stopper {
    fn new(cfg: Option<EarlyStop>) -> Self {
        Self { cfg, prev: None, stalled: 0 }
    }

    fn update(&mut self, loss: f64) -> bool {
        let Some(cfg) = self.cfg else { return false };
        if let Some(prev) = self.prev {
            let rel = (prev - loss) / prev.abs().max(f64::MIN_POSITIVE);
            if rel < cfg.rel_tol {
                self.stalled += 1;
            } else {
                self.stalled = 0;
            }
        }
        self.prev = Some(loss);
        self.stalled >= cfg.patience
    }
}

fn diagnostics<F: Real>(model_r: &Array2<F>, a: &Array2<F>, cols: &[usize], loss: F) -> String {
    let max_abs = |m: &Array2<F>| m.iter().fold(0.0f64, |acc, x| acc.max(x.to_f64_lossy().abs()));
    format!(
        "loss={} max|R|={} max|A|={} batch_docs={:?}",
        loss,
        max_abs(model_r),
        max_abs(a),
        &cols[..cols.len().min(16)]
    )
}

/// One pass of weight-only Adam updates over `cols` in batches. Returns the
/// summed loss before each batch's update.
fn weights_pass<F: Real>(
    obj: &Objective<F>,
    y: ArrayView2<'_, F>,
    r: &Array2<F>,
    a: &mut Array2<F>,
    adam: &mut ColumnAdam<F>,
    cols: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<F> {
    let mut total = F::zero();
    for (b, batch) in cols.chunks(cfg.batch_size).enumerate() {
        let yb = y.select(Axis(1), batch);
        let ab = gather(a, batch);
        let g = obj.loss_and_grads(yb.view(), r.view(), ab.view(), 0)?;
        if !g.loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: b, diagnostics: diagnostics(r, a, batch, g.loss) });
        }
        total += g.loss;
        adam.step(a, batch, &g.grad_a, &cfg.adam);
    }
    Ok(total)
}

/// Fits topics and weights to the columns of `y` (N x M, each on the simplex).
pub fn train<F: Real>(y: ArrayView2<'_, F>, cost: &CostMatrix<F>, cfg: &TrainConfig, scfg: &SinkhornConfig<F>) -> Result<TrainOutcome<F>> {
    train_observed(y, cost, cfg, scfg, |_, _| {})
}

/// Each batch chunk records tens of megabytes of tape and frees it before
/// the next one. By default glibc hands that memory back to the kernel and
/// faults it in again on every chunk; this keeps it in the heap instead.
fn retain_freed_memory() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    {
        static ONCE: std::sync::Once = std::sync::Once::new();
        ONCE.call_once(|| {
            // SAFETY: mallopt only adjusts allocator tuning parameters
            unsafe {
                libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
                libc::mallopt(libc::M_TOP_PAD, 256 << 20);
            }
        });
    }
}

/// [`train`] with a callback after every epoch, receiving the epoch
/// statistics and the current topic parameters `R`.
pub fn train_observed<F: Real>(
    y: ArrayView2<'_, F>,
    cost: &CostMatrix<F>,
    cfg: &TrainConfig,
    scfg: &SinkhornConfig<F>,
    mut observer: impl FnMut(&EpochStats, ArrayView2<'_, F>),
) -> Result<TrainOutcome<F>> {
    retain_freed_memory();
    cfg.validate()?;
    check_inputs(y, cost.len())?;
    let (n, m, k) = (y.nrows(), y.ncols(), cfg.topics);
    let obj = Objective::new(cost, scfg, cfg.loss, cfg.chunk_docs)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut draw = |rows, cols| Array2::from_shape_simple_fn((rows, cols), || F::lit(StandardNormal.sample(&mut rng)));
    let mut r: Array2<F> = draw(n, k);
    let mut a: Array2<F> = draw(k, m);

    let mut order: Vec<usize> = (0..m).collect();
    let mut heldout = Vec::new();
    if cfg.holdout_fraction > 0.0 {
        if m < 2 {
            return Err(Error::InvalidConfig("a holdout split needs at least two documents".into()));
        }
        let n_test = ((m as f64 * cfg.holdout_fraction).round() as usize).clamp(1, m - 1);
        order.shuffle(&mut rng);
        heldout = order.split_off(m - n_test);
        heldout.sort_unstable();
        order.sort_unstable();
    }
    let train_docs = order.clone();

    let mut r_adam = AdamState::new(n, k);
    let mut a_adam = ColumnAdam::new(k, m);
    let mut trace = Vec::new();
    let mut stopper = Stopper::new(cfg.early_stop);
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = F::zero();
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let yb = y.select(Axis(1), batch);
            let ab = gather(&a, batch);
            let g = obj.loss_and_grads(yb.view(), r.view(), ab.view(), 0)?;
            if !g.loss.is_finite() || g.grad_r.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b, diagnostics: diagnostics(&r, &a, batch, g.loss) });
            }
            total += g.loss;
            adam_step(r.view_mut(), g.grad_r.view(), &mut r_adam, &cfg.adam);
            a_adam.step(&mut a, batch, &g.grad_a, &cfg.adam);
        }
        let train_loss = total.to_f64_lossy() / train_docs.len() as f64;
        let heldout_loss = if heldout.is_empty() {
            None
        } else {
            let t = weights_pass(&obj, y, &r, &mut a, &mut a_adam, &heldout, cfg, epoch)?;
            Some(t.to_f64_lossy() / heldout.len() as f64)
        };
        let stats = EpochStats { epoch, train_loss, heldout_loss };
        observer(&stats, r.view());
        trace.push(stats);
        if stopper.update(train_loss) {
            stopped_early = epoch < cfg.epochs;
            break;
        }
    }

    let model = DictionaryModel::from_params(r, a)?;
    Ok(TrainOutcome { model, trace, train_docs, heldout_docs: heldout, stopped_early })
}

#[derive(Debug, Clone)]
pub struct HeldoutFit<F> {
    /// Raw weight parameters, K x M_test.
    pub a: Array2<F>,
    /// Fitted weights, K x M_test.
    pub weights: Array2<F>,
    /// Mean loss of the fitted reconstructions.
    pub mean_loss: f64,
    pub epochs: usize,
}

/// Fits weights for unseen documents with the topics `r` held fixed. Weight
/// parameters start at zero (uniform weights) and are updated by Adam in
/// document order, so the fit does not depend on the seed.
pub fn heldout_weights<F: Real>(
    y_test: ArrayView2<'_, F>,
    r: ArrayView2<'_, F>,
    cost: &CostMatrix<F>,
    cfg: &TrainConfig,
    scfg: &SinkhornConfig<F>,
) -> Result<HeldoutFit<F>> {
    cfg.validate()?;
    check_inputs(y_test, cost.len())?;
    if r.nrows() != cost.len() {
        return Err(Error::ShapeMismatch(format!("topics have {} words, cost has {}", r.nrows(), cost.len())));
    }
    let obj = Objective::new(cost, scfg, cfg.loss, cfg.chunk_docs)?;
    let (k, m) = (r.ncols(), y_test.ncols());
    let r = r.to_owned();
    let mut a = Array2::zeros((k, m));
    let mut adam = ColumnAdam::new(k, m);
    let cols: Vec<usize> = (0..m).collect();
    let mut stopper = Stopper::new(cfg.early_stop);
    let mut epochs = 0;
    if k > 1 {
        for epoch in 1..=cfg.epochs {
            epochs = epoch;
            let total = weights_pass(&obj, y_test, &r, &mut a, &mut adam, &cols, cfg, epoch)?;
            if stopper.update(total.to_f64_lossy() / m as f64) {
                break;
            }
        }
    }
    let recon = obj.reconstruct(r.view(), a.view())?;
    let mut total = 0.0;
    for j in 0..m {
        let log_b = recon.column(j).mapv(|x| if x > F::zero() { x.ln() } else { F::neg_infinity() });
        let (l, _) = loss::loss_and_log_adjoint(y_test.column(j), log_b.view(), cfg.loss, j, false)?;
        total += l.to_f64_lossy();
    }
    let weights = softmax_columns(a.view());
    Ok(HeldoutFit { a, weights, mean_loss: total / m as f64, epochs })
}
