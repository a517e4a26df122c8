//! Dense verification oracles.
//!
//! These routines deliberately take the slow, direct path (materializing
//! operators column by column, Cholesky reduction, LU solves) so that tests
//! and the acceptance suite can check the fast algorithms against an
//! independent computation. They are not part of the production solve path.

use crate::linalg::{
    back_substitute_lt, dense_cholesky, dense_eigh, dense_lu, forward_substitute, DenseMat,
    LinearOp,
};

/// Materialize an operator by applying it to the unit vectors.
pub fn dense_from_op(op: &dyn LinearOp) -> DenseMat {
    let n = op.dim();
    let mut a = DenseMat::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        op.apply(&e, &mut col);
        e[j] = 0.0;
        for i in 0..n {
            a.set(i, j, col[i]);
        }
    }
    a
}

/// Dense generalized symmetric eigensolve `A v = lambda B v` via Cholesky
/// reduction `B = L L^T` to a standard symmetric problem. Eigenvalues come
/// back descending; eigenvectors are B-orthonormal columns.
pub fn dense_ghep(a: &DenseMat, b: &DenseMat) -> (Vec<f64>, DenseMat) {
    let n = a.rows();
    let l = dense_cholesky(&b.symmetrized()).expect("B must be SPD");
    // C = L^{-1} A L^{-T}
    let mut w = DenseMat::zeros(n, n);
    for j in 0..n {
        let col = forward_substitute(&l, &a.col(j));
        for i in 0..n {
            w.set(i, j, col[i]);
        }
    }
    let mut c = DenseMat::zeros(n, n);
    for i in 0..n {
        let row = forward_substitute(&l, w.row(i));
        for j in 0..n {
            c.set(i, j, row[j]);
        }
    }
    let (lambda, u) = dense_eigh(&c.symmetrized()).expect("reduced matrix is symmetric");
    // V = L^{-T} U
    let mut v = DenseMat::zeros(n, n);
    for j in 0..n {
        let col = back_substitute_lt(&l, &u.col(j));
        for i in 0..n {
            v.set(i, j, col[i]);
        }
    }
    (lambda, v)
}

pub fn dense_solve(a: &DenseMat, rhs: &[f64]) -> Vec<f64> {
    dense_lu(a).expect("matrix must be nonsingular").solve(rhs)
}

pub fn dense_inverse(a: &DenseMat) -> DenseMat {
    dense_lu(a).expect("matrix must be nonsingular").inverse()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ghep_reduces_to_standard_for_identity_b() {
        let n = 8;
        let base = DenseMat::from_rows(n, n, &crate::rng::gaussian_vector(3, 0, n * n));
        let a = base.symmetrized();
        let (lambda, v) = dense_ghep(&a, &DenseMat::identity(n));
        let (ls, _) = dense_eigh(&a).unwrap();
        for (x, y) in lambda.iter().zip(&ls) {
            assert!((x - y).abs() < 1e-10);
        }
        let vtv = v.transpose().matmul(&v);
        assert!(vtv.frobenius_distance(&DenseMat::identity(n)) < 1e-10);
    }

    #[test]
    fn ghep_satisfies_pencil_equation() {
        let n = 10;
        let x = DenseMat::from_rows(n, n, &crate::rng::gaussian_vector(5, 0, n * n));
        let a = x.matmul(&x.transpose());
        let y = DenseMat::from_rows(n, n, &crate::rng::gaussian_vector(6, 0, n * n));
        let mut b = y.matmul(&y.transpose());
        for i in 0..n {
            b.add_to(i, i, n as f64);
        }
        let (lambda, v) = dense_ghep(&a, &b);
        for j in 0..n {
            let vj = v.col(j);
            let av = a.matvec(&vj);
            let bv = b.matvec(&vj);
            let mut r = 0.0;
            for i in 0..n {
                r += (av[i] - lambda[j] * bv[i]).powi(2);
            }
            let scale = crate::linalg::norm2(&av).max(1e-12);
            assert!(r.sqrt() / scale < 1e-8, "mode {j}");
        }
        let bv = b.matmul(&v);
        let vt_bv = v.transpose().matmul(&bv);
        assert!(vt_bv.frobenius_distance(&DenseMat::identity(n)) < 1e-9);
    }
}
