//! Globalized inexact Newton-CG for the MAP point.
//!
//! The Newton system is solved by CG preconditioned with the inverse prior
//! precision, stopped early by the forcing term
//! `eta_i = sqrt(||g_i|| / ||g_0||)` (capped at 0.5) and by negative
//! curvature, in which case the current CG iterate is kept as the search
//! direction (the preconditioned steepest-descent direction when curvature
//! fails on the first iteration). Globalization is Armijo backtracking.

use thiserror::Error;

use crate::linalg::{cg_solve, CgOptions, CgReason, FnOp};
use crate::model::{
    eval_cost, HessianSpec, InverseModel, MisfitKind, ModelError, SolveContext,
};
use crate::prior::BiLaplacianPrior;

#[derive(Debug, Error)]
pub enum NewtonError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prior(#[from] crate::prior::PriorError),
    #[error(transparent)]
    Linalg(#[from] crate::linalg::LinalgError),
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonConfig {
    pub max_iter: usize,
    pub max_backtracking_iter: usize,
    /// Absolute gradient tolerance.
    pub grad_tol: f64,
    /// Relative gradient tolerance (against the initial gradient norm).
    pub grad_rtol: f64,
    pub c_armijo: f64,
    pub misfit: MisfitKind,
    /// Inner CG iteration cap; zero degenerates to preconditioned steepest
    /// descent.
    pub cg_max_iter: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            max_iter: 30,
            max_backtracking_iter: 10,
            grad_tol: 1e-9,
            grad_rtol: 1e-6,
            c_armijo: 1e-4,
            misfit: MisfitKind::Full,
            cg_max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NewtonStatus {
    Converged,
    MaxIterReached,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct NewtonIter {
    pub iter: usize,
    pub cost: f64,
    pub misfit: f64,
    pub reg: f64,
    pub grad_norm: f64,
    pub cg_iters: usize,
    pub cg_residual: f64,
    pub forcing: f64,
    pub alpha: f64,
    pub line_search_evals: usize,
    pub negative_curvature: bool,
    pub direction_replaced: bool,
}

#[derive(Debug, Clone)]
pub struct NewtonTrace {
    pub iterations: Vec<NewtonIter>,
    pub status: NewtonStatus,
    pub final_grad_norm: f64,
    pub initial_grad_norm: f64,
}

impl NewtonTrace {
    /// Forward PDE solves consumed: one per accepted iterate plus the line
    /// search evaluations (the initial solve counts as one).
    pub fn forward_solves(&self) -> usize {
        1 + self
            .iterations
            .iter()
            .map(|r| 1 + r.line_search_evals)
            .sum::<usize>()
    }

    /// Incremental forward/adjoint solve pairs consumed by the inner CG.
    pub fn incremental_solve_pairs(&self) -> usize {
        self.total_cg_iters()
    }

    /// Trace of a run that never happened (stage skipped).
    pub fn empty() -> Self {
        NewtonTrace {
            iterations: Vec::new(),
            status: NewtonStatus::Converged,
            final_grad_norm: 0.0,
            initial_grad_norm: 0.0,
        }
    }

    pub fn newton_iters(&self) -> usize {
        self.iterations.len()
    }

    pub fn total_cg_iters(&self) -> usize {
        self.iterations.iter().map(|r| r.cg_iters).sum()
    }

    pub fn write_csv(&self, path: &std::path::Path) -> std::io::Result<()> {
        use std::io::Write;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "iter,cost,misfit,reg,gradnorm,cg_iters,alpha")?;
        for r in &self.iterations {
            writeln!(
                f,
                "{},{:.17e},{:.17e},{:.17e},{:.17e},{},{:.17e}",
                r.iter, r.cost, r.misfit, r.reg, r.grad_norm, r.cg_iters, r.alpha
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LineSearchOutcome {
    pub m: Vec<f64>,
    pub cost: f64,
    pub alpha: f64,
    pub evaluations: usize,
    pub backtracks: usize,
    pub accepted: bool,
}

/// Armijo backtracking from unit step: accept the first `alpha = 2^{-j}`
/// with `cost(m + alpha d) < cost(m) + alpha c <g, d>`. The direction is
/// expected to be a descent direction.
pub fn armijo_linesearch<E>(
    mut cost_fn: impl FnMut(&[f64]) -> Result<f64, E>,
    m: &[f64],
    direction: &[f64],
    cost0: f64,
    gdotd: f64,
    c_armijo: f64,
    max_backtracking_iter: usize,
) -> Result<LineSearchOutcome, E> {
    debug_assert!(gdotd < 0.0, "line search needs a descent direction");
    let mut alpha = 1.0;
    let mut evaluations = 0;
    for j in 0..max_backtracking_iter {
        let mut trial = m.to_vec();
        crate::linalg::axpy(alpha, direction, &mut trial);
        let c = cost_fn(&trial)?;
        evaluations += 1;
        if c < cost0 + alpha * c_armijo * gdotd {
            return Ok(LineSearchOutcome {
                m: trial,
                cost: c,
                alpha,
                evaluations,
                backtracks: j,
                accepted: true,
            });
        }
        alpha *= 0.5;
    }
    Ok(LineSearchOutcome {
        m: m.to_vec(),
        cost: cost0,
        alpha: 0.0,
        evaluations,
        backtracks: max_backtracking_iter,
        accepted: false,
    })
}

/// Replace a non-descent direction by the preconditioned steepest-descent
/// direction `-R^{-1} g`. Returns the direction, its slope, and whether the
/// replacement happened.
fn ensure_descent(
    prior: &BiLaplacianPrior,
    g: &[f64],
    dir: Vec<f64>,
) -> Result<(Vec<f64>, f64, bool), NewtonError> {
    let slope = crate::linalg::dot(g, &dir);
    if slope < 0.0 {
        return Ok((dir, slope, false));
    }
    let mut sd = prior.solve_r(g)?;
    for v in &mut sd {
        *v = -*v;
    }
    let slope = crate::linalg::dot(g, &sd);
    Ok((sd, slope, true))
}

/// Inexact Newton-CG iteration for the MAP point, starting from `m0`.
pub fn solve<M: InverseModel>(
    model: &M,
    prior: &BiLaplacianPrior,
    m0: &[f64],
    cfg: &NewtonConfig,
) -> Result<(Vec<f64>, NewtonTrace), NewtonError> {
    let mut m = m0.to_vec();
    let mut ctx = SolveContext::new(model, prior, &m)?;
    let initial_grad_norm = crate::linalg::norm2(ctx.gradient());
    let tol = cfg.grad_tol.max(cfg.grad_rtol * initial_grad_norm);

    let mut iterations: Vec<NewtonIter> = Vec::new();
    let mut status = NewtonStatus::MaxIterReached;
    let mut final_grad_norm = initial_grad_norm;

    for iter in 0..cfg.max_iter {
        let g = ctx.gradient().to_vec();
        let grad_norm = crate::linalg::norm2(&g);
        final_grad_norm = grad_norm;
        if grad_norm <= tol {
            status = NewtonStatus::Converged;
            break;
        }

        // Forcing term, capped to avoid oversolving and floored so the inner
        // tolerance never drops below 1e-9 * ||g_0||.
        let forcing = (grad_norm / initial_grad_norm)
            .sqrt()
            .max(1e-9 * initial_grad_norm / grad_norm)
            .min(0.5);

        let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
        let spec = HessianSpec { misfit: cfg.misfit, with_prior: true };
        let (raw_dir, cg_iters, cg_residual, negative_curvature) = if cfg.cg_max_iter == 0 {
            (prior.solve_r(&rhs)?, 0, grad_norm, false)
        } else {
            let hop = ctx.hessian_op(spec);
            let precond = FnOp::new(prior.n(), true, |x: &[f64], y: &mut [f64]| {
                y.copy_from_slice(&prior.solve_r(x).expect("prior solve failed"));
            });
            let out = cg_solve(
                &hop,
                &rhs,
                Some(&precond),
                CgOptions {
                    rtol: forcing,
                    max_iter: cfg.cg_max_iter,
                    monitor_curvature: true,
                },
            )?;
            let neg = out.reason == CgReason::NegativeCurvature;
            if neg && out.iters == 0 {
                // Steihaug at the very first iteration: fall back to the
                // preconditioned gradient direction.
                (prior.solve_r(&rhs)?, 0, grad_norm, true)
            } else {
                (out.x, out.iters, out.residual, neg)
            }
        };

        let (direction, slope, direction_replaced) = ensure_descent(prior, &g, raw_dir)?;
        let cost = ctx.cost();
        let ls = armijo_linesearch(
            |trial| eval_cost(model, prior, trial).map(|c| c.total),
            &m,
            &direction,
            cost.total,
            slope,
            cfg.c_armijo,
            cfg.max_backtracking_iter,
        )?;

        iterations.push(NewtonIter {
            iter,
            cost: cost.total,
            misfit: cost.misfit,
            reg: cost.reg,
            grad_norm,
            cg_iters,
            cg_residual,
            forcing,
            alpha: ls.alpha,
            line_search_evals: ls.evaluations,
            negative_curvature,
            direction_replaced,
        });

        if !ls.accepted {
            status = NewtonStatus::LineSearchFailed;
            break;
        }
        m = ls.m;
        ctx = SolveContext::new(model, prior, &m)?;
        final_grad_norm = crate::linalg::norm2(ctx.gradient());
        if final_grad_norm <= tol {
            status = NewtonStatus::Converged;
            break;
        }
    }

    Ok((
        m,
        NewtonTrace { iterations, status, final_grad_norm, initial_grad_norm },
    ))
}
