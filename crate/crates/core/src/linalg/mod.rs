//! Minimal dense/sparse linear-algebra substrate.
//!
//! Dense kernels (Cholesky, QR, symmetric eigendecomposition, LU, pseudo
//! inverse) are written for problems with at most a few hundred columns;
//! no blocking or LAPACK-grade performance is attempted. Sparse matrices
//! are CSR. Everything is `f64`.

mod cg;
mod dense;
mod op;
mod sparse;

pub use cg::{cg_solve, CgOptions, CgReason, CgResult};
pub use dense::{
    back_substitute_lt, dense_cholesky, dense_eigh, dense_lu, dense_qr, dense_qr_permissive,
    forward_substitute, jacobi_svd, pinv, symmetric_ls_solve, DenseMat, LuFactors, SvdResult,
    SymmetricLs,
};
pub use op::{symmetry_defect, CountingOp, DiagOp, FnOp, IdentityOp, LinearOp, ShiftedOp};
pub use sparse::{Csr, CsrBuilder, SgsPrecond, SparseSym};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite: pivot {index} is {value:.3e}")]
    NotPositiveDefinite { index: usize, value: f64 },
    #[error("rank-deficient matrix: column {column} has negligible pivot")]
    RankDeficient { column: usize },
    #[error("matrix is not symmetric: asymmetry {asym:.3e} exceeds tolerance {tol:.3e}")]
    NotSymmetric { asym: f64, tol: f64 },
    #[error("singular matrix in LU factorization at column {column}")]
    Singular { column: usize },
    #[error("right-hand side contains NaN")]
    NanRhs,
    #[error("iterative solver stalled at residual {residual:.3e} after {iters} iterations")]
    NotConverged { residual: f64, iters: usize },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// y += alpha * x
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scaled(alpha: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| alpha * v).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}
