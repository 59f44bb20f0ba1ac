use ndarray::{Array1, Array2, Axis};

use super::kernel::{GibbsKernel, Side};
use super::{Histogram, SinkhornConfig};
use crate::embedding::CostMatrix;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan<F> {
    pub plan: Array2<F>,
    /// `<pi, C>`
    pub cost_value: F,
    /// `<pi, log pi>` with `0 log 0 = 0`.
    pub entropy_value: F,
}

impl<F: Real> TransportPlan<F> {
    pub fn row_sums(&self) -> Array1<F> {
        self.plan.sum_axis(Axis(1))
    }

    pub fn col_sums(&self) -> Array1<F> {
        self.plan.sum_axis(Axis(0))
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornSolution<F> {
    /// `<pi, C> + eps <pi, log pi>`
    pub value: F,
    pub plan: TransportPlan<F>,
    pub iterations: usize,
    /// L1 error of the row marginal after each iteration.
    pub marginal_errors: Vec<F>,
    /// `false` when `max_iter` was reached first; the best iterate is returned.
    pub converged: bool,
}

impl<F: Real> SinkhornSolution<F> {
    pub fn marginal_error(&self) -> F {
        self.marginal_errors.last().copied().unwrap_or_else(F::infinity)
    }
}

fn log_mass<F: Real>(h: &Histogram<F>) -> Array2<F> {
    h.mass().mapv(|x| if x > F::zero() { x.ln() } else { F::neg_infinity() }).insert_axis(Axis(1))
}

/// Entropic transport between `mu` and `nu` by alternating log-domain
/// scalings `f = log mu - log(K e^g)`, `g = log nu - log(K^T e^f)`.
///
/// Zero-mass coordinates keep their scaling at `-inf`, so the matching plan
/// rows or columns are exactly zero. Iteration stops once the row marginal is
/// within `cfg.tol` in L1 (columns are exact after each update).
pub fn sinkhorn_distance<F: Real>(
    mu: &Histogram<F>,
    nu: &Histogram<F>,
    cost: &CostMatrix<F>,
    cfg: &SinkhornConfig<F>,
) -> Result<SinkhornSolution<F>> {
    cfg.validate()?;
    let n = cost.len();
    if mu.len() != n || nu.len() != n {
        return Err(Error::ShapeMismatch(format!("histograms {} and {} for cost {n}x{n}", mu.len(), nu.len())));
    }
    let kernel = GibbsKernel::new(cost, cfg.epsilon);
    let log_mu = log_mass(mu);
    let log_nu = log_mass(nu);

    let mut g = log_nu.mapv(|x| if x.is_finite() { F::zero() } else { x });
    let mut y = kernel.log_apply(Side::Left, g.view());
    let mut errors = Vec::new();
    let mut best: Option<(F, Array2<F>, Array2<F>)> = None;
    let mut converged = false;

    for _ in 0..cfg.max_iter {
        let f = pin(&log_mu, &log_mu - &y);
        let h = kernel.log_apply(Side::Right, f.view());
        g = pin(&log_nu, &log_nu - &h);
        y = kernel.log_apply(Side::Left, g.view());
        check_finite(&f, &log_mu, "row scaling")?;
        check_finite(&g, &log_nu, "column scaling")?;

        let err: F = (0..n)
            .map(|i| {
                let r = if f[[i, 0]].is_finite() { (f[[i, 0]] + y[[i, 0]]).exp() } else { F::zero() };
                (r - mu.mass()[i]).abs()
            })
            .sum();
        if !err.is_finite() {
            return Err(Error::NumericalCollapse("marginal error is not finite".into()));
        }
        errors.push(err);
        if best.as_ref().is_none_or(|(e, _, _)| err <= *e) {
            best = Some((err, f.clone(), g.clone()));
        }
        if err < cfg.tol {
            converged = true;
            break;
        }
    }

    let (_, f, g) = best.expect("at least one iteration");
    let plan = recover_plan(&kernel, cost, f.column(0).to_owned(), g.column(0).to_owned());
    Ok(SinkhornSolution {
        value: plan.cost_value + cfg.epsilon * plan.entropy_value,
        plan,
        iterations: errors.len(),
        marginal_errors: errors,
        converged,
    })
}

fn pin<F: Real>(log_marginal: &Array2<F>, mut scaling: Array2<F>) -> Array2<F> {
    scaling.zip_mut_with(log_marginal, |s, &lm| {
        if lm == F::neg_infinity() {
            *s = F::neg_infinity();
        }
    });
    scaling
}

fn check_finite<F: Real>(scaling: &Array2<F>, log_marginal: &Array2<F>, what: &str) -> Result<()> {
    for (&s, &lm) in scaling.iter().zip(log_marginal.iter()) {
        if lm.is_finite() && !s.is_finite() {
            return Err(Error::NumericalCollapse(format!("{what} became {s}")));
        }
    }
    Ok(())
}

fn recover_plan<F: Real>(kernel: &GibbsKernel<F>, cost: &CostMatrix<F>, f: Array1<F>, g: Array1<F>) -> TransportPlan<F> {
    let n = f.len();
    let log_k = kernel.log_kernel();
    let mut plan = Array2::zeros((n, n));
    let mut cost_value = F::zero();
    let mut entropy_value = F::zero();
    for i in 0..n {
        if !f[i].is_finite() {
            continue;
        }
        for j in 0..n {
            if !g[j].is_finite() {
                continue;
            }
            let lp = f[i] + log_k[[i, j]] + g[j];
            let p = lp.exp();
            if p > F::zero() {
                plan[[i, j]] = p;
                cost_value += p * cost.entries()[[i, j]];
                entropy_value += p * lp;
            }
        }
    }
    TransportPlan { plan, cost_value, entropy_value }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cfg(eps: f64) -> SinkhornConfig<f64> {
        SinkhornConfig { epsilon: eps, max_iter: 10_000, tol: 1e-12, ..Default::default() }
    }

    #[test]
    fn single_point() {
        let h = Histogram::from_slice(&[1.0]).unwrap();
        let c = CostMatrix::new(array![[0.0]]).unwrap();
        let s = sinkhorn_distance(&h, &h, &c, &cfg(0.1)).unwrap();
        assert!(s.value.abs() < 1e-15);
        assert!((s.plan.plan[[0, 0]] - 1.0).abs() < 1e-15);
        assert!(s.converged);
    }

    #[test]
    fn point_masses_force_the_plan() {
        let mu = Histogram::from_slice(&[1.0, 0.0]).unwrap();
        let nu = Histogram::from_slice(&[0.0, 1.0]).unwrap();
        let c = CostMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let s = sinkhorn_distance(&mu, &nu, &c, &cfg(0.1)).unwrap();
        assert_eq!(s.plan.plan[[0, 0]], 0.0);
        assert_eq!(s.plan.plan[[1, 0]], 0.0);
        assert_eq!(s.plan.plan[[1, 1]], 0.0);
        assert!((s.plan.plan[[0, 1]] - 1.0).abs() < 1e-12);
        assert!((s.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_convergence_is_reported() {
        let mu = Histogram::from_slice(&[0.9, 0.1]).unwrap();
        let nu = Histogram::from_slice(&[0.2, 0.8]).unwrap();
        let c = CostMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let s = sinkhorn_distance(&mu, &nu, &c, &SinkhornConfig { max_iter: 1, epsilon: 0.01, ..cfg(0.01) }).unwrap();
        assert!(!s.converged);
        assert_eq!(s.iterations, 1);
    }

    #[test]
    fn shape_mismatch() {
        let mu = Histogram::from_slice(&[1.0]).unwrap();
        let c = CostMatrix::new(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert!(matches!(sinkhorn_distance(&mu, &mu, &c, &cfg(0.1)), Err(Error::ShapeMismatch(_))));
    }
}
