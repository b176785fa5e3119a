//! Sparse direct solves behind a deterministic, residual-checked contract.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("sparse matrix assembly failed: {0}")]
    Assembly(String),
    #[error("sparse LU factorization failed (matrix singular or ill-posed): {0}")]
    Factorization(String),
    #[error("direct solve residual {residual:.3e} exceeds contract {bound:.3e}")]
    ResidualTooLarge { residual: f64, bound: f64 },
}

/// Relative residual contract of the direct solver.
const RESIDUAL_TOL: f64 = 1e-12;

/// LU factorization of a square sparse matrix, kept together with the matrix
/// so every solve can verify its residual.
pub struct SparseLu {
    n: usize,
    mat: SparseColMat<usize, f64>,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    inf_norm: f64,
}

impl SparseLu {
    pub fn factor(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self, SolveError> {
        let trip: Vec<Triplet<usize, usize, f64>> = triplets
            .iter()
            .map(|&(r, c, v)| Triplet::new(r, c, v))
            .collect();
        let mat = SparseColMat::try_new_from_triplets(n, n, &trip)
            .map_err(|e| SolveError::Assembly(format!("{e:?}")))?;
        let lu = mat
            .sp_lu()
            .map_err(|e| SolveError::Factorization(format!("{e:?}")))?;
        // row-sum norm for the residual contract
        let mut row_sum = vec![0.0f64; n];
        for &(r, _, v) in triplets {
            row_sum[r] += v.abs();
        }
        let inf_norm = row_sum.iter().cloned().fold(0.0, f64::max);
        Ok(Self {
            n,
            mat,
            lu,
            inf_norm,
        })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, SolveError> {
        assert_eq!(rhs.len(), self.n);
        let b = faer::Mat::from_fn(self.n, 1, |i, _| rhs[i]);
        let x = self.lu.solve(&b);
        let ax = &self.mat * &x;
        let mut res: f64 = 0.0;
        let mut xmax: f64 = 0.0;
        let mut bmax: f64 = 0.0;
        for i in 0..self.n {
            res = res.max((ax[(i, 0)] - rhs[i]).abs());
            xmax = xmax.max(x[(i, 0)].abs());
            bmax = bmax.max(rhs[i].abs());
        }
        let bound = RESIDUAL_TOL * (self.inf_norm * xmax + bmax).max(f64::MIN_POSITIVE);
        if res > bound {
            return Err(SolveError::ResidualTooLarge {
                residual: res,
                bound,
            });
        }
        Ok((0..self.n).map(|i| x[(i, 0)]).collect())
    }
}
