//! Gaussian smoothness prior whose precision is the square of an elliptic
//! operator: one application of the operator is the sparse matrix `K`
//! (diffusion + reaction + Robin boundary term), and the precision acts as
//! `R x = K M^{-1} K x` with `M` the mass matrix. The inverse acts as
//! `R^{-1} x = K^{-1} M K^{-1} x` (two sparse solves).
//!
//! Sampling uses the rectangular factor of the mass matrix: a draw solves
//! `K x = C_M eta` with white noise `eta`, giving `cov(x) = K^{-1} M K^{-1}`.
//! Pointwise variance (the diagonal of `R^{-1}`) is estimated either
//! stochastically with Rademacher probes or through a randomized
//! eigendecomposition of `R^{-1}`, which is far more accurate per solve.

use std::sync::Arc;

use thiserror::Error;

use crate::fem::{
    elliptic, mass, rect_factor_mass, AnisoTensor, FemError, FnSpace, RectFactor,
};
use crate::linalg::{
    cg_solve, CgOptions, FnOp, IdentityOp, LinalgError, LinearOp, SgsPrecond, SparseSym,
};
use crate::randeig::{double_pass, EigError, GhepConfig};

/// The Robin weight is `robin_scale * sqrt(gamma * delta)`; the default
/// scale follows the boundary-artifact-minimizing choice.
pub const DEFAULT_ROBIN_SCALE: f64 = 1.0 / 1.42;

#[derive(Debug, Error)]
pub enum PriorError {
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Eig(#[from] EigError),
}

#[derive(Debug, Clone, Copy)]
pub struct PriorParams {
    pub gamma: f64,
    pub delta: f64,
    pub theta: AnisoTensor,
    pub robin_scale: f64,
}

impl PriorParams {
    pub fn isotropic(gamma: f64, delta: f64) -> Self {
        PriorParams {
            gamma,
            delta,
            theta: AnisoTensor::identity(),
            robin_scale: DEFAULT_ROBIN_SCALE,
        }
    }

    pub fn robin_beta(&self) -> f64 {
        self.robin_scale * (self.gamma * self.delta).sqrt()
    }
}

pub struct BiLaplacianPrior {
    space: Arc<FnSpace>,
    params: PriorParams,
    mean: Vec<f64>,
    k: SparseSym,
    m: SparseSym,
    c_m: RectFactor,
    /// Solver tolerance for sampling and variance paths.
    rtol_tight: f64,
    /// Solver tolerance for cost/gradient/precision applications.
    rtol_loose: f64,
}

impl BiLaplacianPrior {
    pub fn new(
        space: Arc<FnSpace>,
        params: PriorParams,
        mean: Vec<f64>,
    ) -> Result<Self, PriorError> {
        assert!(params.gamma > 0.0 && params.delta > 0.0);
        assert_eq!(mean.len(), space.ndof());
        let k = elliptic(&space, params.gamma, params.theta, params.delta, params.robin_beta())?;
        let m = mass(&space);
        let c_m = rect_factor_mass(&space);
        Ok(BiLaplacianPrior {
            space,
            params,
            mean,
            k,
            m,
            c_m,
            rtol_tight: 1e-12,
            rtol_loose: 1e-10,
        })
    }

    pub fn zero_mean(space: Arc<FnSpace>, params: PriorParams) -> Result<Self, PriorError> {
        let n = space.ndof();
        Self::new(space, params, vec![0.0; n])
    }

    pub fn n(&self) -> usize {
        self.space.ndof()
    }

    pub fn space(&self) -> &FnSpace {
        &self.space
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn params(&self) -> &PriorParams {
        &self.params
    }

    pub fn k_matrix(&self) -> &SparseSym {
        &self.k
    }

    pub fn mass_matrix(&self) -> &SparseSym {
        &self.m
    }

    pub fn mass_factor(&self) -> &RectFactor {
        &self.c_m
    }

    fn pcg(&self, a: &SparseSym, rhs: &[f64], rtol: f64) -> Result<Vec<f64>, PriorError> {
        let precond = SgsPrecond::new(a);
        let out = cg_solve(
            a,
            rhs,
            Some(&precond),
            CgOptions { rtol, max_iter: 100 * self.n().max(100), monitor_curvature: false },
        )?;
        if out.reason != crate::linalg::CgReason::Converged {
            return Err(PriorError::Linalg(LinalgError::NotConverged {
                residual: out.residual,
                iters: out.iters,
            }));
        }
        Ok(out.x)
    }

    pub fn solve_k(&self, rhs: &[f64], rtol: f64) -> Result<Vec<f64>, PriorError> {
        self.pcg(&self.k, rhs, rtol)
    }

    fn solve_m(&self, rhs: &[f64], rtol: f64) -> Result<Vec<f64>, PriorError> {
        self.pcg(&self.m, rhs, rtol)
    }

    /// `R x = K M^{-1} K x`
    pub fn apply_r(&self, x: &[f64]) -> Result<Vec<f64>, PriorError> {
        let kx = self.k.matvec(x);
        let mkx = self.solve_m(&kx, self.rtol_loose)?;
        Ok(self.k.matvec(&mkx))
    }

    /// `R^{-1} x = K^{-1} M K^{-1} x`
    pub fn solve_r(&self, x: &[f64]) -> Result<Vec<f64>, PriorError> {
        self.solve_r_tol(x, self.rtol_loose)
    }

    fn solve_r_tol(&self, x: &[f64], rtol: f64) -> Result<Vec<f64>, PriorError> {
        let k1 = self.solve_k(x, rtol)?;
        let mk = self.m.matvec(&k1);
        self.solve_k(&mk, rtol)
    }

    /// Cost `0.5 <m - mean, R (m - mean)>` and its gradient `R (m - mean)`.
    pub fn cost_grad(&self, m: &[f64]) -> Result<(f64, Vec<f64>), PriorError> {
        let d = crate::linalg::sub(m, &self.mean);
        if d.iter().all(|&v| v == 0.0) {
            return Ok((0.0, vec![0.0; self.n()]));
        }
        let g = self.apply_r(&d)?;
        Ok((0.5 * crate::linalg::dot(&d, &g), g))
    }

    /// Zero-mean fluctuation with covariance `R^{-1}`: solves
    /// `K x = C_M eta`, `eta ~ N(0, I)` over the quadrature channels.
    pub fn sample_fluctuation(&self, seed: u64) -> Result<Vec<f64>, PriorError> {
        let eta = crate::rng::gaussian_vector(seed, 0, self.c_m.ncols());
        let rhs = self.c_m.apply(&eta);
        self.solve_k(&rhs, self.rtol_tight)
    }

    /// Draw `mean + fluctuation` for the given seed.
    pub fn sample(&self, seed: u64) -> Result<Vec<f64>, PriorError> {
        let x = self.sample_fluctuation(seed)?;
        Ok(crate::linalg::add(&self.mean, &x))
    }

    /// Unbiased stochastic estimate of `diag(R^{-1})` from `probes`
    /// Rademacher vectors: elementwise `[sum z .* w] ./ [sum z .* z]` with
    /// `R w = z`. Rademacher probes make the denominator exactly `probes`.
    pub fn pointwise_variance_stochastic(
        &self,
        probes: usize,
        seed: u64,
    ) -> Result<Vec<f64>, PriorError> {
        assert!(probes >= 1);
        let n = self.n();
        let rinv = self.r_inv_op_tol(self.rtol_tight);
        Ok(stochastic_diag_estimate(&rinv, n, probes, seed))
    }

    /// Randomized estimate of `diag(R^{-1})` from the dominant `rbar`
    /// eigenpairs of `R^{-1}` (double-pass sketch without oversampling).
    /// The partial sums are nondecreasing in the rank, so the estimate is a
    /// lower bound up to solver error.
    pub fn pointwise_variance_randomized(
        &self,
        rbar: usize,
        seed: u64,
    ) -> Result<Vec<f64>, PriorError> {
        let modes = self.variance_modes(rbar, seed)?;
        let n = self.n();
        let mut diag = vec![0.0; n];
        for (mu, v) in &modes {
            let mu = mu.max(0.0);
            for i in 0..n {
                diag[i] += mu * v[i] * v[i];
            }
        }
        Ok(diag)
    }

    /// Dominant eigenpairs of `R^{-1}` used by the randomized variance
    /// estimator (and by the posterior variance field).
    pub fn variance_modes(
        &self,
        rbar: usize,
        seed: u64,
    ) -> Result<Vec<(f64, Vec<f64>)>, PriorError> {
        let n = self.n();
        let rinv = self.r_inv_op_tol(self.rtol_tight);
        let id = IdentityOp(n);
        let cfg = GhepConfig::new(rbar.min(n), 0, seed);
        let out = double_pass(&rinv, &id, &id, &cfg)?;
        Ok((0..out.lambda.len())
            .map(|j| (out.lambda[j], out.vectors.col(j)))
            .collect())
    }

    /// `R` as a matrix-free symmetric operator.
    pub fn r_op(&self) -> impl LinearOp + '_ {
        FnOp::new(self.n(), true, move |x: &[f64], y: &mut [f64]| {
            y.copy_from_slice(&self.apply_r(x).expect("prior precision apply failed"));
        })
    }

    /// `R^{-1}` as a matrix-free symmetric operator.
    pub fn r_inv_op(&self) -> impl LinearOp + '_ {
        self.r_inv_op_tol(self.rtol_loose)
    }

    fn r_inv_op_tol(&self, rtol: f64) -> impl LinearOp + '_ {
        FnOp::new(self.n(), true, move |x: &[f64], y: &mut [f64]| {
            y.copy_from_slice(&self.solve_r_tol(x, rtol).expect("prior precision solve failed"));
        })
    }
}

/// Stochastic diagonal estimator over Rademacher probes for an operator
/// applying the target matrix (here `R^{-1}`).
pub fn stochastic_diag_estimate(
    op: &dyn LinearOp,
    n: usize,
    probes: usize,
    seed: u64,
) -> Vec<f64> {
    let mut num = vec![0.0; n];
    let mut den = vec![0.0; n];
    let mut w = vec![0.0; n];
    for j in 0..probes {
        let z = crate::rng::rademacher_vector(seed, j as u64, n);
        op.apply(&z, &mut w);
        for i in 0..n {
            num[i] += z[i] * w[i];
            den[i] += z[i] * z[i];
        }
    }
    (0..n).map(|i| num[i] / den[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::build_unit_square_mesh;
    use crate::linalg::DenseMat;
    use crate::oracle::{dense_inverse, dense_solve};

    fn make_prior(nx: usize, gamma: f64, delta: f64) -> BiLaplacianPrior {
        let mesh = Arc::new(build_unit_square_mesh(nx, nx, &[]).unwrap());
        let space = Arc::new(FnSpace::new(mesh, 1));
        BiLaplacianPrior::zero_mean(space, PriorParams::isotropic(gamma, delta)).unwrap()
    }

    fn dense_r(prior: &BiLaplacianPrior) -> DenseMat {
        let k = prior.k_matrix().to_dense();
        let m = prior.mass_matrix().to_dense();
        let n = k.rows();
        let mut minv_k = DenseMat::zeros(n, n);
        for j in 0..n {
            let col = dense_solve(&m, &k.col(j));
            for i in 0..n {
                minv_k.set(i, j, col[i]);
            }
        }
        k.matmul(&minv_k)
    }

    fn dense_r_inv(prior: &BiLaplacianPrior) -> DenseMat {
        dense_inverse(&dense_r(prior))
    }

    #[test]
    fn cost_and_gradient_vanish_at_mean() {
        let prior = make_prior(4, 0.5, 1.0);
        let (c, g) = prior.cost_grad(prior.mean()).unwrap();
        assert_eq!(c, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_perturbation_reads_off_precision_entries() {
        let prior = make_prior(4, 0.5, 1.0);
        let n = prior.n();
        let r = dense_r(&prior);
        let j = n / 2;
        let mut m = vec![0.0; n];
        m[j] = 1.0;
        let (c, g) = prior.cost_grad(&m).unwrap();
        assert!((c - 0.5 * r.get(j, j)).abs() < 1e-9 * r.get(j, j).abs());
        for i in 0..n {
            assert!((g[i] - r.get(i, j)).abs() < 1e-8 * r.frobenius_norm());
        }
    }

    #[test]
    fn random_cost_grad_matches_dense_oracle() {
        let prior = make_prior(5, 0.3, 0.8);
        let n = prior.n();
        let r = dense_r(&prior);
        let m = crate::rng::gaussian_vector(11, 0, n);
        let (c, g) = prior.cost_grad(&m).unwrap();
        let rd = r.matvec(&m);
        let c_oracle = 0.5 * crate::linalg::dot(&m, &rd);
        assert!((c - c_oracle).abs() < 1e-10 * c_oracle.abs().max(1.0));
        let gerr = crate::linalg::norm2(&crate::linalg::sub(&g, &rd))
            / crate::linalg::norm2(&rd);
        assert!(gerr < 1e-10, "gradient error {gerr}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let prior = make_prior(4, 0.4, 1.2);
        let n = prior.n();
        let m = crate::rng::gaussian_vector(13, 0, n);
        let (_, g) = prior.cost_grad(&m).unwrap();
        let eps = 1e-5;
        for s in 0..5u64 {
            let dir = crate::rng::gaussian_vector(14, s, n);
            let mut mp = m.clone();
            let mut mm = m.clone();
            crate::linalg::axpy(eps, &dir, &mut mp);
            crate::linalg::axpy(-eps, &dir, &mut mm);
            let (cp, _) = prior.cost_grad(&mp).unwrap();
            let (cm, _) = prior.cost_grad(&mm).unwrap();
            let fd = (cp - cm) / (2.0 * eps);
            let an = crate::linalg::dot(&g, &dir);
            assert!((fd - an).abs() / an.abs().max(1e-12) < 1e-6);
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let prior = make_prior(4, 0.5, 1.0);
        let a = prior.sample(42).unwrap();
        let b = prior.sample(42).unwrap();
        assert_eq!(a, b);
        let c = prior.sample(43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn effective_factor_reproduces_inverse_precision() {
        // Dense identity: (K^{-1} C_M)(K^{-1} C_M)^T = R^{-1}.
        let prior = make_prior(5, 0.5, 1.0);
        let n = prior.n();
        let k = prior.k_matrix().to_dense();
        let c = prior.mass_factor().csr().to_dense();
        let mut kc = DenseMat::zeros(n, c.cols());
        for j in 0..c.cols() {
            let col = dense_solve(&k, &c.col(j));
            for i in 0..n {
                kc.set(i, j, col[i]);
            }
        }
        let cov = kc.matmul(&kc.transpose());
        let rinv = dense_r_inv(&prior);
        let rel = cov.frobenius_distance(&rinv) / rinv.frobenius_norm();
        assert!(rel < 1e-10, "covariance identity error {rel}");
    }

    #[test]
    fn increasing_delta_decreases_variance() {
        let base = make_prior(6, 0.5, 1.0);
        let tighter = make_prior(6, 0.5, 4.0);
        let ri0 = dense_r_inv(&base);
        let ri1 = dense_r_inv(&tighter);
        let d0: f64 = (0..base.n()).map(|i| ri0.get(i, i)).sum();
        let d1: f64 = (0..tighter.n()).map(|i| ri1.get(i, i)).sum();
        assert!(d1 < d0, "variance should shrink: {d1} vs {d0}");
    }

    #[test]
    fn stochastic_estimator_exact_for_identity() {
        let id = IdentityOp(12);
        for probes in [1usize, 3, 7] {
            let d = stochastic_diag_estimate(&id, 12, probes, 5);
            assert!(d.iter().all(|v| (v - 1.0).abs() < 1e-14));
        }
    }

    #[test]
    fn stochastic_estimator_accuracy_and_trend() {
        let prior = make_prior(8, 0.1, 1.0);
        let rinv = dense_r_inv(&prior);
        let n = prior.n();
        let exact: Vec<f64> = (0..n).map(|i| rinv.get(i, i)).collect();
        let l2 = |est: &[f64]| {
            let d: f64 = est
                .iter()
                .zip(&exact)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            d / crate::linalg::norm2(&exact)
        };
        let e200 = l2(&prior.pointwise_variance_stochastic(200, 17).unwrap());
        assert!(e200 < 0.3, "200-probe error {e200}");
        // Error decreases with probe count on average over seeds.
        let mut avg = [0.0f64; 3];
        for seed in 0..10u64 {
            for (k, s) in [10usize, 40, 160].iter().enumerate() {
                avg[k] += l2(&prior.pointwise_variance_stochastic(*s, 100 + seed).unwrap());
            }
        }
        assert!(avg[0] > avg[1] && avg[1] > avg[2], "trend {avg:?}");
    }

    #[test]
    fn randomized_estimator_full_rank_is_exact() {
        let prior = make_prior(6, 0.5, 1.0); // n = 49
        let n = prior.n();
        let rinv = dense_r_inv(&prior);
        let exact: Vec<f64> = (0..n).map(|i| rinv.get(i, i)).collect();
        let est = prior.pointwise_variance_randomized(n, 3).unwrap();
        for i in 0..n {
            assert!((est[i] - exact[i]).abs() < 1e-8 * exact[i].max(1e-12));
        }
    }

    #[test]
    fn randomized_partial_sums_are_monotone() {
        let prior = make_prior(6, 0.5, 1.0);
        let n = prior.n();
        let modes = prior.variance_modes(20, 9).unwrap();
        for (mu, v) in &modes {
            assert!(*mu > -1e-10, "eigenvalue of SPD inverse came out {mu}");
            let mu = mu.max(0.0);
            for i in 0..n {
                assert!(mu * v[i] * v[i] >= 0.0);
            }
        }
    }
}
