//! Preconditioned conjugate gradients with optional curvature monitoring.

use super::{dot, norm2, LinalgError, LinearOp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgReason {
    Converged,
    MaxIter,
    /// Only reported when curvature monitoring is enabled; the returned
    /// iterate is the last one before the indefinite direction.
    NegativeCurvature,
}

#[derive(Debug, Clone)]
pub struct CgResult {
    pub x: Vec<f64>,
    pub iters: usize,
    pub reason: CgReason,
    /// Final unpreconditioned residual norm ||b - A x||.
    pub residual: f64,
}

#[derive(Clone, Copy)]
pub struct CgOptions {
    pub rtol: f64,
    pub max_iter: usize,
    /// Stop with `NegativeCurvature` when `p^T A p <= 0` (Steihaug).
    pub monitor_curvature: bool,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions { rtol: 1e-10, max_iter: 10_000, monitor_curvature: false }
    }
}

/// Solve `op x = rhs` for an SPD operator, starting from zero.
///
/// Termination: `||rhs - op x|| <= rtol ||rhs||`, iteration cap, or negative
/// curvature when monitored. A zero right-hand side returns the zero vector
/// with zero iterations; a NaN right-hand side is an error.
pub fn cg_solve(
    op: &dyn LinearOp,
    rhs: &[f64],
    precond: Option<&dyn LinearOp>,
    opts: CgOptions,
) -> Result<CgResult, LinalgError> {
    let n = op.dim();
    if rhs.len() != n {
        return Err(LinalgError::DimMismatch(format!(
            "cg rhs has length {} but operator dimension is {}",
            rhs.len(),
            n
        )));
    }
    if rhs.iter().any(|v| v.is_nan()) {
        return Err(LinalgError::NanRhs);
    }
    assert!(opts.rtol > 0.0 && opts.rtol < 1.0, "rtol must lie in (0,1)");
    let bnorm = norm2(rhs);
    if bnorm == 0.0 {
        return Ok(CgResult { x: vec![0.0; n], iters: 0, reason: CgReason::Converged, residual: 0.0 });
    }
    let tol = opts.rtol * bnorm;

    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z = vec![0.0; n];
    match precond {
        Some(m) => m.apply(&r, &mut z),
        None => z.copy_from_slice(&r),
    }
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    let mut iters = 0;

    while iters < opts.max_iter {
        op.apply(&p, &mut q);
        let curv = dot(&p, &q);
        if opts.monitor_curvature && curv <= 0.0 {
            let residual = norm2(&r);
            return Ok(CgResult { x, iters, reason: CgReason::NegativeCurvature, residual });
        }
        let alpha = rz / curv;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        iters += 1;
        let rnorm = norm2(&r);
        if rnorm <= tol {
            return Ok(CgResult { x, iters, reason: CgReason::Converged, residual: rnorm });
        }
        match precond {
            Some(m) => m.apply(&r, &mut z),
            None => z.copy_from_slice(&r),
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let residual = norm2(&r);
    Ok(CgResult { x, iters, reason: CgReason::MaxIter, residual })
}
