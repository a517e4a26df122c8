//! Randomized solution of the generalized symmetric eigenproblem
//! `A v = lambda B v` with `A` symmetric and `B` SPD.
//!
//! All solvers sketch the range of `B^{-1} A` with a seeded Gaussian test
//! matrix, build a B-orthonormal basis `Q` with PreCholQR, reduce to a small
//! dense problem `T`, and lift the eigenvectors back as `V = Q S`. They
//! differ in how `T` is obtained:
//!
//! * `double_pass`: `T = Q^T A Q`, costing a second round of `A` applies.
//! * `single_pass`: `T` is the symmetrized least-squares solution of
//!   `T (Qbar^T Omega) = Qbar^T Y`, reusing the retained sketch.
//! * `single_pass_reference`: the sandwich estimate
//!   `T = (Qbar^T Omega)^{-T} (Omega^T A Omega) (Qbar^T Omega)^{-1}`,
//!   kept as the comparison baseline.
//!
//! Eigenvalues may come back negative (for example from an indefinite misfit
//! Hessian away from the optimum); no clipping happens here.

use thiserror::Error;

use crate::linalg::{
    dense_cholesky, dense_qr_permissive, pinv, symmetric_ls_solve, CountingOp, DenseMat,
    LinalgError,
    LinearOp,
};

#[derive(Debug, Error)]
pub enum EigError {
    #[error("randomized sketch is rank deficient ({0})")]
    SketchRankDeficient(LinalgError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy)]
pub struct GhepConfig {
    /// Number of eigenpairs to return.
    pub r: usize,
    /// Oversampling columns added to the sketch.
    pub l: usize,
    pub seed: u64,
    /// Worker threads for the independent operator applies (1 = sequential).
    pub threads: usize,
}

impl GhepConfig {
    pub fn new(r: usize, l: usize, seed: u64) -> Self {
        GhepConfig { r, l, seed, threads: 1 }
    }
}

/// Operator application counts, for cost accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ApplyCounts {
    pub a_applies: usize,
    pub b_applies: usize,
    pub b_solves: usize,
}

#[derive(Debug, Clone)]
pub struct GhepResult {
    /// Eigenvalues, descending; length `r`.
    pub lambda: Vec<f64>,
    /// B-orthonormal eigenvectors as columns (`V^T B V = I`).
    pub vectors: DenseMat,
    pub counts: ApplyCounts,
}

/// Apply `op` to each column of `x`, optionally across threads. Columns are
/// independent, so the result is deterministic regardless of the schedule.
pub fn apply_columns(op: &dyn LinearOp, x: &DenseMat, threads: usize) -> DenseMat {
    let n = op.dim();
    let cols = x.cols();
    let mut out = DenseMat::zeros(n, cols);
    if threads <= 1 || cols <= 1 {
        let mut y = vec![0.0; n];
        for j in 0..cols {
            op.apply(&x.col(j), &mut y);
            out.set_col(j, &y);
        }
        return out;
    }
    let results: Vec<Vec<f64>> = std::thread::scope(|scope| {
        let chunk = cols.div_ceil(threads.min(cols));
        let mut handles = Vec::new();
        for c0 in (0..cols).step_by(chunk) {
            let hi = (c0 + chunk).min(cols);
            let xref = &x;
            handles.push(scope.spawn(move || {
                let mut part = Vec::with_capacity(hi - c0);
                let mut y = vec![0.0; n];
                for j in c0..hi {
                    op.apply(&xref.col(j), &mut y);
                    part.push(y.clone());
                }
                part
            }));
        }
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    for (j, col) in results.iter().enumerate() {
        out.set_col(j, col);
    }
    out
}

/// Right-multiply by the inverse of an upper-triangular matrix: `X R^{-1}`.
fn right_tri_solve(x: &DenseMat, r: &DenseMat) -> DenseMat {
    let (n, k) = (x.rows(), x.cols());
    let mut q = DenseMat::zeros(n, k);
    for j in 0..k {
        let mut col = x.col(j);
        for i in 0..j {
            let rij = r.get(i, j);
            if rij != 0.0 {
                let qi = q.col(i);
                for t in 0..n {
                    col[t] -= rij * qi[t];
                }
            }
        }
        let d = r.get(j, j);
        for t in 0..n {
            col[t] /= d;
        }
        q.set_col(j, &col);
    }
    q
}

/// B-orthogonalization of a tall matrix: returns `(Q, Qbar, R)` with
/// `Q^T B Q = I`, `Qbar = B Q` (so `Qbar^T B^{-1} Qbar = I`) and `Q R = Y`.
pub fn pre_chol_qr(
    y: &DenseMat,
    b_apply: &dyn LinearOp,
    threads: usize,
) -> Result<(DenseMat, DenseMat, DenseMat), EigError> {
    // Permissive QR: a sketch of an exactly low-rank operator is legitimately
    // rank deficient, and the completed basis directions simply carry zero
    // eigenvalues downstream.
    let (z, r_y) = dense_qr_permissive(y);
    let zbar = apply_columns(b_apply, &z, threads);
    let ztbz = z.transpose().matmul(&zbar).symmetrized();
    let l = dense_cholesky(&ztbz).map_err(EigError::SketchRankDeficient)?;
    let r_z = l.transpose();
    let q = right_tri_solve(&z, &r_z);
    let qbar = right_tri_solve(&zbar, &r_z);
    let r = r_z.matmul(&r_y);
    Ok((q, qbar, r))
}

struct Sketch {
    omega: DenseMat,
    ybar: DenseMat,
    y: DenseMat,
    q: DenseMat,
    qbar: DenseMat,
}

fn build_sketch(
    a: &CountingOp,
    b_apply: &dyn LinearOp,
    b_solve: &CountingOp,
    cfg: &GhepConfig,
) -> Result<Sketch, EigError> {
    let n = a.dim();
    let k = cfg.r + cfg.l;
    if cfg.r == 0 {
        return Err(EigError::Config("r must be at least 1".into()));
    }
    if k > n {
        return Err(EigError::Config(format!(
            "r + l = {k} exceeds the operator dimension {n}"
        )));
    }
    let omega = crate::rng::gaussian_matrix(cfg.seed, n, k);
    let ybar = apply_columns(a, &omega, cfg.threads);
    let y = apply_columns(b_solve, &ybar, cfg.threads);
    let (q, qbar, _r) = pre_chol_qr(&y, b_apply, cfg.threads)?;
    Ok(Sketch { omega, ybar, y, q, qbar })
}

fn finish(
    t: &DenseMat,
    q: &DenseMat,
    r: usize,
    counts: ApplyCounts,
) -> Result<GhepResult, EigError> {
    let (lambda, s) = crate::linalg::dense_eigh(&t.symmetrized())?;
    let s_r = s.leading_cols(r);
    let vectors = q.matmul(&s_r);
    Ok(GhepResult { lambda: lambda[..r].to_vec(), vectors, counts })
}

/// Double-pass solver: exactly `2 (r + l)` applications of `A`, `(r + l)`
/// B-solves, and `(r + l)` B-applies for the orthogonalization.
pub fn double_pass(
    a: &dyn LinearOp,
    b_apply: &dyn LinearOp,
    b_solve: &dyn LinearOp,
    cfg: &GhepConfig,
) -> Result<GhepResult, EigError> {
    let a_c = CountingOp::new(a);
    let bs_c = CountingOp::new(b_solve);
    let ba_c = CountingOp::new(b_apply);
    let sk = build_sketch(&a_c, &ba_c, &bs_c, cfg)?;
    let aq = apply_columns(&a_c, &sk.q, cfg.threads);
    let t = sk.q.transpose().matmul(&aq);
    let counts = ApplyCounts {
        a_applies: a_c.count(),
        b_applies: ba_c.count(),
        b_solves: bs_c.count(),
    };
    finish(&t, &sk.q, cfg.r, counts)
}

/// Single-pass solver: exactly `(r + l)` applications of `A`. `T` comes from
/// the symmetrized least-squares fit to the retained sketch.
pub fn single_pass(
    a: &dyn LinearOp,
    b_apply: &dyn LinearOp,
    b_solve: &dyn LinearOp,
    cfg: &GhepConfig,
) -> Result<GhepResult, EigError> {
    let a_c = CountingOp::new(a);
    let bs_c = CountingOp::new(b_solve);
    let ba_c = CountingOp::new(b_apply);
    let sk = build_sketch(&a_c, &ba_c, &bs_c, cfg)?;
    let g = sk.qbar.transpose().matmul(&sk.omega);
    let f = sk.qbar.transpose().matmul(&sk.y);
    let t = symmetric_ls_solve(&g, &f).x;
    let counts = ApplyCounts {
        a_applies: a_c.count(),
        b_applies: ba_c.count(),
        b_solves: bs_c.count(),
    };
    finish(&t, &sk.q, cfg.r, counts)
}

/// Reference single-pass variant: the sandwich estimate
/// `T = (Qbar^T Omega)^{-T} (Omega^T A Omega) (Qbar^T Omega)^{-1}`, where
/// `Omega^T A Omega` is read off the retained sketch as `Omega^T Ybar`.
pub fn single_pass_reference(
    a: &dyn LinearOp,
    b_apply: &dyn LinearOp,
    b_solve: &dyn LinearOp,
    cfg: &GhepConfig,
) -> Result<GhepResult, EigError> {
    let a_c = CountingOp::new(a);
    let bs_c = CountingOp::new(b_solve);
    let ba_c = CountingOp::new(b_apply);
    let sk = build_sketch(&a_c, &ba_c, &bs_c, cfg)?;
    let g = sk.qbar.transpose().matmul(&sk.omega);
    let mid = sk.omega.transpose().matmul(&sk.ybar).symmetrized();
    let (g_pinv, _) = pinv(&g);
    let t = g_pinv.transpose().matmul(&mid).matmul(&g_pinv);
    let counts = ApplyCounts {
        a_applies: a_c.count(),
        b_applies: ba_c.count(),
        b_solves: bs_c.count(),
    };
    finish(&t, &sk.q, cfg.r, counts)
}

/// `||V^T B V - I||_F`, for checking B-orthonormality of a result.
pub fn b_orthonormality_defect(vectors: &DenseMat, b_apply: &dyn LinearOp) -> f64 {
    let bv = apply_columns(b_apply, vectors, 1);
    let vtbv = vectors.transpose().matmul(&bv);
    vtbv.frobenius_distance(&DenseMat::identity(vectors.cols()))
}

/// Relative residuals `||A v - lambda B v|| / (|lambda| ||B v||)` per mode.
pub fn eigen_residuals(
    result: &GhepResult,
    a: &dyn LinearOp,
    b_apply: &dyn LinearOp,
) -> Vec<f64> {
    let av = apply_columns(a, &result.vectors, 1);
    let bv = apply_columns(b_apply, &result.vectors, 1);
    result
        .lambda
        .iter()
        .enumerate()
        .map(|(j, &lam)| {
            let avj = av.col(j);
            let bvj = bv.col(j);
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..avj.len() {
                num += (avj[i] - lam * bvj[i]).powi(2);
                den += bvj[i] * bvj[i];
            }
            num.sqrt() / (lam.abs() * den.sqrt()).max(1e-300)
        })
        .collect()
}
