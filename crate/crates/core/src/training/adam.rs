//! Adam updates.

use ndarray::{Array2, ArrayView2, ArrayViewMut2, Zip};

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { learning_rate: 0.005, beta1: 0.9, beta2: 0.999, eps_hat: 1e-8 }
    }
}

/// First and second moments for one parameter block plus its step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub m: Array2<F>,
    pub v: Array2<F>,
    pub t: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { m: Array2::zeros((rows, cols)), v: Array2::zeros((rows, cols)), t: 0 }
    }
}

/// One Adam step applied in place.
pub fn adam_step<F: Real>(mut param: ArrayViewMut2<'_, F>, grad: ArrayView2<'_, F>, state: &mut AdamState<F>, hp: &AdamParams) {
    assert_eq!(param.dim(), grad.dim(), "parameter and gradient shapes differ");
    assert_eq!(param.dim(), state.m.dim(), "parameter and state shapes differ");
    state.t += 1;
    let (b1, b2) = (F::lit(hp.beta1), F::lit(hp.beta2));
    let one = F::one();
    let c1 = one - b1.powi(state.t as i32);
    let c2 = one - b2.powi(state.t as i32);
    let (lr, eps) = (F::lit(hp.learning_rate), F::lit(hp.eps_hat));
    Zip::from(&mut param).and(&grad).and(&mut state.m).and(&mut state.v).for_each(|p, &g, m, v| {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    });
}
