//! Low-rank Laplace approximation of the posterior.
//!
//! At the MAP point the misfit Hessian is paired with the prior precision in
//! the generalized eigenproblem `H_misfit v = lambda R v`; keeping the modes
//! with `lambda` above a cutoff yields the low-rank correction in
//!
//! `H^{-1} = (R + H_misfit)^{-1} ~= R^{-1} - V D V^T`,
//! `D = diag(lambda_i / (1 + lambda_i))`,
//!
//! which drives inverse-Hessian applications, posterior sampling through
//! `y = (I - V S V^T R) x` with `S = diag(1 - 1/sqrt(1 + lambda_i))`, and
//! the pointwise posterior variance.

use thiserror::Error;

use crate::linalg::DenseMat;
use crate::model::{HessianSpec, InverseModel, MisfitKind, ModelError, SolveContext};
use crate::prior::{BiLaplacianPrior, PriorError};
use crate::randeig::{double_pass, single_pass, ApplyCounts, EigError, GhepConfig};

/// Eigenvalues below this are dropped from the low-rank correction.
pub const DEFAULT_LAMBDA_CUT: f64 = 0.07;

#[derive(Debug, Error)]
pub enum PosteriorError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Eig(#[from] EigError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigSolver {
    DoublePass,
    SinglePass,
}

#[derive(Debug, Clone, Copy)]
pub struct PosteriorConfig {
    pub ghep: GhepConfig,
    pub lambda_cut: f64,
    pub misfit: MisfitKind,
    pub solver: EigSolver,
}

impl PosteriorConfig {
    pub fn new(ghep: GhepConfig) -> Self {
        PosteriorConfig {
            ghep,
            lambda_cut: DEFAULT_LAMBDA_CUT,
            misfit: MisfitKind::GaussNewton,
            solver: EigSolver::DoublePass,
        }
    }
}

pub struct LaplacePosterior<'a, M: InverseModel> {
    ctx: SolveContext<'a, M>,
    /// Kept eigenvalues, descending, all above the cutoff.
    lambda: Vec<f64>,
    /// R-orthonormal eigenvectors for the kept modes (columns).
    vectors: DenseMat,
    /// Raw spectrum before clipping (for spectrum exports).
    lambda_raw: Vec<f64>,
    pub counts: ApplyCounts,
    pub warnings: Vec<String>,
}

impl<'a, M: InverseModel> LaplacePosterior<'a, M> {
    /// Run the randomized eigensolver on `(H_misfit, R)` at the MAP point
    /// and keep the modes above `lambda_cut`.
    pub fn build(
        model: &'a M,
        prior: &'a BiLaplacianPrior,
        m_map: &[f64],
        cfg: &PosteriorConfig,
    ) -> Result<Self, PosteriorError> {
        let ctx = SolveContext::new(model, prior, m_map)?;
        let a_op = ctx.hessian_op(HessianSpec::misfit_only(cfg.misfit));
        let b_apply = prior.r_op();
        let b_solve = prior.r_inv_op();
        let out = match cfg.solver {
            EigSolver::DoublePass => double_pass(&a_op, &b_apply, &b_solve, &cfg.ghep)?,
            EigSolver::SinglePass => single_pass(&a_op, &b_apply, &b_solve, &cfg.ghep)?,
        };
        let mut warnings = Vec::new();
        let scale = out.lambda.first().map(|l| l.abs()).unwrap_or(1.0).max(1e-300);
        for (j, lam) in out.lambda.iter().enumerate() {
            if *lam < -1e-8 * scale {
                warnings.push(format!(
                    "clipped negative eigenvalue {lam:.3e} at index {j}"
                ));
            }
        }
        let kept: Vec<usize> = (0..out.lambda.len())
            .filter(|&j| out.lambda[j] > cfg.lambda_cut)
            .collect();
        let n = prior.n();
        let mut vectors = DenseMat::zeros(n, kept.len());
        let mut lambda = Vec::with_capacity(kept.len());
        for (col, &j) in kept.iter().enumerate() {
            lambda.push(out.lambda[j]);
            let vj = out.vectors.col(j);
            for i in 0..n {
                vectors.set(i, col, vj[i]);
            }
        }
        Ok(LaplacePosterior {
            ctx,
            lambda,
            vectors,
            lambda_raw: out.lambda,
            counts: out.counts,
            warnings,
        })
    }

    pub fn map_point(&self) -> &[f64] {
        self.ctx.m()
    }

    pub fn prior(&self) -> &BiLaplacianPrior {
        self.ctx.prior
    }

    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.lambda
    }

    pub fn eigenvalues_raw(&self) -> &[f64] {
        &self.lambda_raw
    }

    pub fn vectors(&self) -> &DenseMat {
        &self.vectors
    }

    /// `V^T w` for the kept modes.
    fn project(&self, w: &[f64]) -> Vec<f64> {
        self.vectors.matvec_transpose(w)
    }

    /// `w <- w + V c`
    fn add_combination(&self, c: &[f64], w: &mut [f64]) {
        for (j, &cj) in c.iter().enumerate() {
            if cj != 0.0 {
                let col = self.vectors.col(j);
                for i in 0..w.len() {
                    w[i] += cj * col[i];
                }
            }
        }
    }

    /// `H^{-1} w ~= R^{-1} w - V D V^T w`.
    pub fn apply_hinv(&self, w: &[f64]) -> Result<Vec<f64>, PosteriorError> {
        let mut out = self.prior().solve_r(w)?;
        let mut c = self.project(w);
        for (j, cj) in c.iter_mut().enumerate() {
            *cj *= -self.lambda[j] / (1.0 + self.lambda[j]);
        }
        self.add_combination(&c, &mut out);
        Ok(out)
    }

    /// Draw from the Laplace approximation:
    /// `m_MAP + (I - V S V^T R) x` with `x` a zero-mean prior fluctuation.
    pub fn sample(&self, seed: u64) -> Result<Vec<f64>, PosteriorError> {
        let x = self.prior().sample_fluctuation(seed)?;
        let rx = self.prior().apply_r(&x)?;
        let mut c = self.project(&rx);
        for (j, cj) in c.iter_mut().enumerate() {
            *cj *= -(1.0 - 1.0 / (1.0 + self.lambda[j]).sqrt());
        }
        let mut y = x;
        self.add_combination(&c, &mut y);
        Ok(crate::linalg::add(self.map_point(), &y))
    }

    /// Data-informed variance reduction `sum_i (lambda_i/(1+lambda_i)) v_i^2`
    /// per dof; nonnegative everywhere.
    pub fn correction_field(&self) -> Vec<f64> {
        let n = self.prior().n();
        let mut corr = vec![0.0; n];
        for j in 0..self.rank() {
            let w = self.lambda[j] / (1.0 + self.lambda[j]);
            let col = self.vectors.col(j);
            for i in 0..n {
                corr[i] += w * col[i] * col[i];
            }
        }
        corr
    }

    /// Pointwise posterior variance: randomized prior variance estimate
    /// minus the low-rank correction.
    pub fn pointwise_variance(
        &self,
        prior_rank: usize,
        seed: u64,
    ) -> Result<Vec<f64>, PosteriorError> {
        let prior_var = self.prior().pointwise_variance_randomized(prior_rank, seed)?;
        let corr = self.correction_field();
        Ok(crate::linalg::sub(&prior_var, &corr))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::build_unit_square_mesh;
    use crate::oracle::{dense_from_op, dense_inverse};
    use crate::poisson::{PoissonProblem, PoissonSetup};
    use crate::prior::PriorParams;
    use std::sync::Arc;

    fn desk(nx: usize, q: usize) -> (PoissonProblem, BiLaplacianPrior) {
        let mesh = Arc::new(build_unit_square_mesh(nx, nx, &[]).unwrap());
        let setup = PoissonSetup::defaults(Arc::clone(&mesh));
        let points = crate::rng::uniform_points(31, q, [0.1, 0.1, 0.9, 0.5]);
        let mut problem = PoissonProblem::new(setup, &points, 0.01).unwrap();
        let m_true = problem.param_space().interpolate(|x, y| {
            (2.0 + 2.0 * (-50.0 * ((x - 0.5).powi(2) + (y - 0.3).powi(2))).exp()).ln()
        });
        problem.synthesize_data(&m_true, 7).unwrap();
        let prior = BiLaplacianPrior::zero_mean(
            Arc::clone(problem.param_space()),
            PriorParams::isotropic(0.1, 0.5),
        )
        .unwrap();
        (problem, prior)
    }

    fn dense_r_and_hmis(
        problem: &PoissonProblem,
        prior: &BiLaplacianPrior,
        m: &[f64],
    ) -> (DenseMat, DenseMat) {
        let ctx = SolveContext::new(problem, prior, m).unwrap();
        let h = dense_from_op(&ctx.hessian_op(HessianSpec::misfit_only(MisfitKind::GaussNewton)));
        let r = dense_from_op(&prior.r_op());
        (r.symmetrized(), h.symmetrized())
    }

    fn dense_sum(a: &DenseMat, b: &DenseMat) -> DenseMat {
        DenseMat::from_fn(a.rows(), a.cols(), |i, j| a.get(i, j) + b.get(i, j))
    }

    #[test]
    fn shrinkage_identity_holds() {
        // 2s - s^2 = lambda / (1 + lambda) with s = 1 - 1/sqrt(1 + lambda).
        for lam in [0.0f64, 0.5, 1.0, 10.0, 1000.0] {
            let s = 1.0 - 1.0 / (1.0 + lam).sqrt();
            let lhs = 2.0 * s - s * s;
            let rhs = lam / (1.0 + lam);
            assert!((lhs - rhs).abs() < 1e-14, "lambda {lam}");
        }
    }

    #[test]
    fn build_keeps_modes_above_cut_with_r_orthonormal_vectors() {
        let (problem, prior) = desk(5, 20);
        let m_map = vec![0.0; prior.n()];
        let cfg = PosteriorConfig::new(GhepConfig::new(12, 8, 3));
        let post = LaplacePosterior::build(&problem, &prior, &m_map, &cfg).unwrap();
        assert!(post.rank() > 0);
        assert!(post.eigenvalues().iter().all(|&l| l > cfg.lambda_cut));
        let defect =
            crate::randeig::b_orthonormality_defect(post.vectors(), &prior.r_op());
        assert!(defect < 1e-8, "R-orthonormality defect {defect}");
        // Eigen-identity residuals for the top half of the kept spectrum.
        let ctx = SolveContext::new(&problem, &prior, &m_map).unwrap();
        let hop = ctx.hessian_op(HessianSpec::misfit_only(MisfitKind::GaussNewton));
        for j in 0..(post.rank() / 2).max(1) {
            let v = post.vectors().col(j);
            let hv = crate::linalg::LinearOp::apply_vec(&hop, &v);
            let rv = prior.apply_r(&v).unwrap();
            let lam = post.eigenvalues()[j];
            let mut num = 0.0f64;
            for i in 0..v.len() {
                num += (hv[i] - lam * rv[i]).powi(2);
            }
            let rel = num.sqrt() / (lam * crate::linalg::norm2(&rv));
            assert!(rel < 1e-4, "mode {j}: residual {rel}");
        }
    }

    #[test]
    fn hinv_matches_dense_inverse_at_machine_cut() {
        let (problem, prior) = desk(4, 15); // n = 25
        let m_map = vec![0.0; prior.n()];
        let mut cfg = PosteriorConfig::new(GhepConfig::new(15, 10, 5));
        cfg.lambda_cut = 1e-10;
        let post = LaplacePosterior::build(&problem, &prior, &m_map, &cfg).unwrap();
        let (r, h) = dense_r_and_hmis(&problem, &prior, &m_map);
        let hinv_dense = dense_inverse(&dense_sum(&r, &h));
        let w = crate::rng::gaussian_vector(17, 0, prior.n());
        let ours = post.apply_hinv(&w).unwrap();
        let truth = hinv_dense.matvec(&w);
        let rel = crate::linalg::norm2(&crate::linalg::sub(&ours, &truth))
            / crate::linalg::norm2(&truth);
        assert!(rel < 1e-6, "inverse-Hessian application error {rel}");
    }

    #[test]
    fn hinv_of_scaled_top_eigenvector_shrinks_by_eigenvalue() {
        let (problem, prior) = desk(5, 20);
        let m_map = vec![0.0; prior.n()];
        let cfg = PosteriorConfig::new(GhepConfig::new(10, 10, 3));
        let post = LaplacePosterior::build(&problem, &prior, &m_map, &cfg).unwrap();
        let v1 = post.vectors().col(0);
        let lam = post.eigenvalues()[0];
        let w = prior.apply_r(&v1).unwrap();
        let got = post.apply_hinv(&w).unwrap();
        let expect: Vec<f64> = v1.iter().map(|v| v / (1.0 + lam)).collect();
        let rel = crate::linalg::norm2(&crate::linalg::sub(&got, &expect))
            / crate::linalg::norm2(&expect);
        assert!(rel < 1e-6, "eigen identity error {rel}");
    }

    #[test]
    fn sampling_transform_reproduces_low_rank_covariance() {
        // Dense identity: (I - V S V^T R) R^{-1} (.)^T = R^{-1} - V D V^T.
        let (problem, prior) = desk(4, 12);
        let m_map = vec![0.0; prior.n()];
        let cfg = PosteriorConfig::new(GhepConfig::new(8, 8, 11));
        let post = LaplacePosterior::build(&problem, &prior, &m_map, &cfg).unwrap();
        let n = prior.n();
        let r = dense_from_op(&prior.r_op()).symmetrized();
        let rinv = dense_inverse(&r);
        let v = post.vectors().clone();
        let mut vs = v.clone();
        let mut vd = v.clone();
        for j in 0..post.rank() {
            let lam = post.eigenvalues()[j];
            let s = 1.0 - 1.0 / (1.0 + lam).sqrt();
            let d = lam / (1.0 + lam);
            for i in 0..n {
                vs.set(i, j, v.get(i, j) * s);
                vd.set(i, j, v.get(i, j) * d);
            }
        }
        let mut transform = DenseMat::identity(n);
        let vsvr = vs.matmul(&v.transpose().matmul(&r));
        for i in 0..n {
            for j in 0..n {
                transform.add_to(i, j, -vsvr.get(i, j));
            }
        }
        let lhs = transform.matmul(&rinv).matmul(&transform.transpose());
        let mut rhs = rinv.clone();
        let vdv = vd.matmul(&v.transpose());
        for i in 0..n {
            for j in 0..n {
                rhs.add_to(i, j, -vdv.get(i, j));
            }
        }
        let rel = lhs.frobenius_distance(&rhs) / rhs.frobenius_norm();
        assert!(rel < 1e-10, "covariance transform identity error {rel}");
    }

    #[test]
    fn rank_zero_posterior_degenerates_to_prior() {
        let (problem, prior) = desk(4, 12);
        let m_map = crate::rng::gaussian_vector(5, 0, prior.n());
        let mut cfg = PosteriorConfig::new(GhepConfig::new(6, 6, 3));
        cfg.lambda_cut = f64::INFINITY; // clip everything
        let post = LaplacePosterior::build(&problem, &prior, &m_map, &cfg).unwrap();
        assert_eq!(post.rank(), 0);
        let w = crate::rng::gaussian_vector(6, 0, prior.n());
        let ours = post.apply_hinv(&w).unwrap();
        let prior_only = prior.solve_r(&w).unwrap();
        assert_eq!(ours, prior_only);
        let s = post.sample(33).unwrap();
        let fluct = prior.sample_fluctuation(33).unwrap();
        let expect = crate::linalg::add(&m_map, &fluct);
        assert_eq!(s, expect);
    }

    #[test]
    fn zero_observations_degenerate_to_the_prior() {
        // q = 0: the misfit Hessian is the zero operator, every sketch
        // eigenvalue collapses to zero and gets clipped.
        let mesh = Arc::new(crate::fem::build_unit_square_mesh(4, 4, &[]).unwrap());
        let setup = crate::poisson::PoissonSetup::defaults(Arc::clone(&mesh));
        let problem = PoissonProblem::new(setup, &[], 0.01).unwrap();
        let prior = BiLaplacianPrior::zero_mean(
            Arc::clone(problem.param_space()),
            PriorParams::isotropic(0.1, 0.5),
        )
        .unwrap();
        let m_map = vec![0.0; prior.n()];
        let cfg = PosteriorConfig::new(GhepConfig::new(5, 3, 3));
        let post = LaplacePosterior::build(&problem, &prior, &m_map, &cfg).unwrap();
        assert_eq!(post.rank(), 0);
        let w = crate::rng::gaussian_vector(4, 0, prior.n());
        assert_eq!(post.apply_hinv(&w).unwrap(), prior.solve_r(&w).unwrap());
        let pv = post.pointwise_variance(prior.n(), 5).unwrap();
        let prior_v = prior.pointwise_variance_randomized(prior.n(), 5).unwrap();
        assert_eq!(pv, prior_v);
    }

    #[test]
    fn pointwise_variance_matches_dense_diagonal() {
        let (problem, prior) = desk(4, 15);
        let m_map = vec![0.0; prior.n()];
        let mut cfg = PosteriorConfig::new(GhepConfig::new(15, 10, 5));
        cfg.lambda_cut = 1e-10;
        let post = LaplacePosterior::build(&problem, &prior, &m_map, &cfg).unwrap();
        let (r, h) = dense_r_and_hmis(&problem, &prior, &m_map);
        let hinv = dense_inverse(&dense_sum(&r, &h));
        let est = post.pointwise_variance(prior.n(), 9).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..prior.n() {
            num += (est[i] - hinv.get(i, i)).powi(2);
            den += hinv.get(i, i).powi(2);
        }
        let rel = (num / den).sqrt();
        assert!(rel < 1e-5, "posterior variance error {rel}");
        // Correction is nonnegative, so posterior variance never exceeds the
        // prior variance estimate.
        let corr = post.correction_field();
        assert!(corr.iter().all(|&c| c >= 0.0));
    }

    #[test]
    fn sample_covariance_statistics() {
        let (problem, prior) = desk(4, 12); // n = 25
        let m_map = vec![0.0; prior.n()];
        let cfg = PosteriorConfig::new(GhepConfig::new(8, 8, 3));
        let post = LaplacePosterior::build(&problem, &prior, &m_map, &cfg).unwrap();
        let n = prior.n();
        // Dense target: R^{-1} - V D V^T.
        let r = dense_from_op(&prior.r_op()).symmetrized();
        let mut target = dense_inverse(&r);
        for j in 0..post.rank() {
            let d = post.eigenvalues()[j] / (1.0 + post.eigenvalues()[j]);
            let col = post.vectors().col(j);
            for a in 0..n {
                for b in 0..n {
                    target.add_to(a, b, -d * col[a] * col[b]);
                }
            }
        }
        let samples = 2000;
        let mut cov = DenseMat::zeros(n, n);
        for s in 0..samples {
            let y = post.sample(10_000 + s as u64).unwrap();
            let d = crate::linalg::sub(&y, post.map_point());
            for a in 0..n {
                for b in 0..n {
                    cov.add_to(a, b, d[a] * d[b] / samples as f64);
                }
            }
        }
        let rel = cov.frobenius_distance(&target) / target.frobenius_norm();
        assert!(rel < 0.10, "empirical covariance error {rel}");
    }
}
