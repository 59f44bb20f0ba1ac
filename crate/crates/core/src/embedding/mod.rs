//! Word embeddings and the squared-Euclidean ground cost between words.

mod sgns;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub use sgns::{train_embeddings, EmbedConfig, TrainedEmbedding};

/// N x D matrix of word vectors, one row per vocabulary entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix<F> {
    vectors: Array2<F>,
}

impl<F: Real> EmbeddingMatrix<F> {
    pub fn new(vectors: Array2<F>) -> Result<Self> {
        if vectors.ncols() == 0 {
            return Err(Error::InvalidConfig("embedding depth must be at least 1".into()));
        }
        if vectors.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalCollapse("embedding has non-finite entries".into()));
        }
        Ok(Self { vectors })
    }

    pub fn vectors(&self) -> &Array2<F> {
        &self.vectors
    }

    pub fn into_inner(self) -> Array2<F> {
        self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn depth(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, F> {
        self.vectors.row(i)
    }

    pub fn cosine(&self, i: usize, j: usize) -> F {
        let a = self.row(i);
        let b = self.row(j);
        let den = a.dot(&a).sqrt() * b.dot(&b).sqrt();
        if den == F::zero() {
            F::zero()
        } else {
            a.dot(&b) / den
        }
    }
}

/// Square, nonnegative, finite ground cost. Costs built from embeddings are
/// additionally symmetric with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix<F> {
    entries: Array2<F>,
}

impl<F: Real> CostMatrix<F> {
    pub fn new(entries: Array2<F>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::ShapeMismatch(format!("cost matrix is {}x{}", entries.nrows(), entries.ncols())));
        }
        if entries.iter().any(|x| !x.is_finite() || *x < F::zero()) {
            return Err(Error::InvalidConfig("cost entries must be finite and nonnegative".into()));
        }
        Ok(Self { entries })
    }

    /// Like [`CostMatrix::new`] but also requires symmetry and a zero diagonal.
    pub fn symmetric(entries: Array2<F>) -> Result<Self> {
        let c = Self::new(entries)?;
        let n = c.len();
        let tol = F::simplex_tol();
        for i in 0..n {
            if c.entries[[i, i]] != F::zero() {
                return Err(Error::InvalidConfig(format!("nonzero diagonal at {i}")));
            }
            for j in 0..i {
                if (c.entries[[i, j]] - c.entries[[j, i]]).abs() > tol {
                    return Err(Error::InvalidConfig(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.nrows() == 0
    }

    pub fn entries(&self) -> &Array2<F> {
        &self.entries
    }

    pub fn into_inner(self) -> Array2<F> {
        self.entries
    }

    pub fn transposed(&self) -> Self {
        Self { entries: self.entries.t().to_owned() }
    }

    pub fn cast<G: Real>(&self) -> CostMatrix<G> {
        CostMatrix { entries: self.entries.mapv(|x| G::lit(x.to_f64_lossy())) }
    }

    /// Median of the strict upper triangle, or `None` when N < 2.
    pub fn median_off_diagonal(&self) -> Option<F> {
        let n = self.len();
        if n < 2 {
            return None;
        }
        let mut vals: Vec<F> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).map(|(i, j)| self.entries[[i, j]]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).expect("finite costs"));
        let k = vals.len();
        Some(if k % 2 == 1 { vals[k / 2] } else { (vals[k / 2 - 1] + vals[k / 2]) / F::lit(2.0) })
    }

    /// Divides every entry by the median off-diagonal cost and returns the
    /// divisor (1 when N < 2).
    pub fn normalize_by_median(&mut self) -> Result<F> {
        let Some(med) = self.median_off_diagonal() else {
            return Ok(F::one());
        };
        if med <= F::zero() {
            return Err(Error::NumericalCollapse("median off-diagonal cost is zero".into()));
        }
        self.entries.mapv_inplace(|x| x / med);
        Ok(med)
    }
}

/// `C_ij = sum_d (x_id - x_jd)^2`, computed on the lower triangle and mirrored.
pub fn cost_matrix<F: Real>(emb: &EmbeddingMatrix<F>) -> CostMatrix<F> {
    let x = emb.vectors();
    let n = x.nrows();
    let rows: Vec<Vec<F>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            (0..i).map(|j| xi.iter().zip(x.row(j)).map(|(&a, &b)| (a - b) * (a - b)).sum()).collect()
        })
        .collect();
    let mut c = Array2::zeros((n, n));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            c[[i, j]] = v;
            c[[j, i]] = v;
        }
    }
    CostMatrix { entries: c }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn pythagorean_entry() {
        let emb = EmbeddingMatrix::new(array![[0.0, 0.0], [3.0, 4.0], [3.0, 4.0]]).unwrap();
        let c = cost_matrix(&emb);
        assert_eq!(c.entries()[[0, 1]], 25.0);
        assert_eq!(c.entries()[[1, 0]], 25.0);
        assert_eq!(c.entries()[[1, 2]], 0.0);
        for i in 0..3 {
            assert_eq!(c.entries()[[i, i]], 0.0);
        }
        assert!(CostMatrix::symmetric(c.into_inner()).is_ok());
    }

    #[test]
    fn median_normalization() {
        let mut c = CostMatrix::new(array![[0.0, 1.0, 4.0], [1.0, 0.0, 2.0], [4.0, 2.0, 0.0]]).unwrap();
        assert_eq!(c.normalize_by_median().unwrap(), 2.0);
        assert_eq!(c.entries()[[0, 2]], 2.0);
        let mut one = CostMatrix::new(array![[0.0]]).unwrap();
        assert_eq!(one.normalize_by_median().unwrap(), 1.0);
        let mut zero = CostMatrix::new(Array2::<f64>::zeros((3, 3))).unwrap();
        assert!(zero.normalize_by_median().is_err());
    }

    #[test]
    fn rejects_bad_costs() {
        assert!(CostMatrix::new(array![[0.0, -1.0], [1.0, 0.0]]).is_err());
        assert!(CostMatrix::new(Array2::<f64>::zeros((2, 3))).is_err());
        assert!(CostMatrix::symmetric(array![[0.0, 1.0], [2.0, 0.0]]).is_err());
        assert!(EmbeddingMatrix::new(array![[f64::NAN]]).is_err());
    }

    proptest! {
        #[test]
        fn permutation_equivariance(
            pts in proptest::collection::vec(-3.0f64..3.0, 12),
            perm in Just((0..4usize).collect::<Vec<_>>()).prop_shuffle(),
        ) {
            let x = Array2::from_shape_vec((4, 3), pts).unwrap();
            let px = Array2::from_shape_fn((4, 3), |(i, d)| x[[perm[i], d]]);
            let c = cost_matrix(&EmbeddingMatrix::new(x).unwrap());
            let pc = cost_matrix(&EmbeddingMatrix::new(px).unwrap());
            for i in 0..4 {
                for j in 0..4 {
                    prop_assert_eq!(pc.entries()[[i, j]], c.entries()[[perm[i], perm[j]]]);
                }
            }
        }
    }
}
