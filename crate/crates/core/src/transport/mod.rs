//! Entropic optimal transport: Sinkhorn distances with plan recovery and
//! fixed-support Sinkhorn barycenters, all in the log domain.

mod barycenter;
mod kernel;
mod sinkhorn;

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub use barycenter::{
    sinkhorn_barycenter, sinkhorn_barycenter_converged, BarycenterBatch, BarycenterGradients, BarycenterKind,
};
pub use kernel::{GibbsKernel, Side};
pub use sinkhorn::{sinkhorn_distance, SinkhornSolution, TransportPlan};

/// Nonnegative vector summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram<F> {
    mass: Array1<F>,
}

impl<F: Real> Histogram<F> {
    pub fn new(mass: Array1<F>) -> Result<Self> {
        if mass.is_empty() {
            return Err(Error::InvalidHistogram("empty".into()));
        }
        if mass.iter().any(|&x| !x.is_finite() || x < F::zero()) {
            return Err(Error::InvalidHistogram("entries must be finite and nonnegative".into()));
        }
        let total: F = mass.sum();
        if (total - F::one()).abs() > F::simplex_tol() {
            return Err(Error::InvalidHistogram(format!("sums to {total}")));
        }
        Ok(Self { mass })
    }

    /// Rescales a nonnegative vector with positive total onto the simplex.
    pub fn normalized(mass: Array1<F>) -> Result<Self> {
        let total: F = mass.sum();
        if !(total > F::zero()) || !total.is_finite() {
            return Err(Error::InvalidHistogram(format!("cannot normalize total {total}")));
        }
        Self::new(mass.mapv(|x| x / total))
    }

    pub fn from_slice(mass: &[F]) -> Result<Self> {
        Self::new(Array1::from(mass.to_vec()))
    }

    pub fn mass(&self) -> &Array1<F> {
        &self.mass
    }

    pub fn into_inner(self) -> Array1<F> {
        self.mass
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn l1_distance(&self, other: &Self) -> F {
        self.mass.iter().zip(other.mass.iter()).map(|(&a, &b)| (a - b).abs()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornConfig<F> {
    /// Entropic weight.
    pub epsilon: F,
    /// Iteration cap for convergence-driven solves.
    pub max_iter: usize,
    /// L1 marginal error (distances) or L1 change (barycenters) to stop at.
    pub tol: F,
    /// Fixed number of barycenter iterations used for training.
    pub unroll_iters: usize,
    pub barycenter: BarycenterKind,
}

impl<F: Real> Default for SinkhornConfig<F> {
    fn default() -> Self {
        Self {
            epsilon: F::lit(0.1),
            max_iter: 1000,
            tol: F::lit(1e-9),
            unroll_iters: 50,
            barycenter: BarycenterKind::default(),
        }
    }
}

impl<F: Real> SinkhornConfig<F> {
    pub fn with_epsilon(epsilon: F) -> Self {
        Self { epsilon, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > F::zero()) || !self.epsilon.is_finite() {
            return Err(Error::InvalidConfig(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        if !(self.tol > F::zero()) {
            return Err(Error::InvalidConfig("tol must be positive".into()));
        }
        if self.unroll_iters == 0 {
            return Err(Error::InvalidConfig("unroll_iters must be at least 1".into()));
        }
        Ok(())
    }

    pub fn cast<G: Real>(&self) -> SinkhornConfig<G> {
        SinkhornConfig {
            epsilon: G::lit(self.epsilon.to_f64_lossy()),
            max_iter: self.max_iter,
            tol: G::lit(self.tol.to_f64_lossy()).max(G::epsilon()),
            unroll_iters: self.unroll_iters,
            barycenter: self.barycenter,
        }
    }
}
