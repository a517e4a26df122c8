//! Abstract inverse-problem contract: forward/adjoint solves, misfit cost
//! and gradient, Hessian actions through incremental solves, and finite
//! difference verification.
//!
//! A model implements the building blocks; [`SolveContext`] holds the state
//! and adjoint for one parameter point so that the many Hessian applications
//! of an outer Newton or eigensolver loop reuse them. The context is
//! invalidated by construction: build a new one per parameter point.

use thiserror::Error;

use crate::linalg::{Csr, LinearOp};
use crate::prior::{BiLaplacianPrior, PriorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Fem(#[from] crate::fem::FemError),
    #[error(transparent)]
    Linalg(#[from] crate::linalg::LinalgError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error("{0}")]
    Other(String),
}

/// Pointwise observations: operator, data vector and i.i.d. noise level.
#[derive(Debug, Clone)]
pub struct ObsData {
    pub op: Csr,
    pub data: Vec<f64>,
    /// Noise standard deviation (the covariance is `sigma^2 I`).
    pub sigma: f64,
}

impl ObsData {
    pub fn count(&self) -> usize {
        self.op.nrows()
    }
}

/// Which misfit Hessian to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MisfitKind {
    /// All second-order terms.
    Full,
    /// Parameter-to-observable map linearized: second-derivative PDE terms
    /// dropped. Positive semidefinite at any parameter point.
    GaussNewton,
}

/// Hessian application mode: misfit kind plus whether the prior precision
/// term is added.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HessianSpec {
    pub misfit: MisfitKind,
    pub with_prior: bool,
}

impl HessianSpec {
    pub fn full() -> Self {
        HessianSpec { misfit: MisfitKind::Full, with_prior: true }
    }

    pub fn gauss_newton() -> Self {
        HessianSpec { misfit: MisfitKind::GaussNewton, with_prior: true }
    }

    pub fn misfit_only(kind: MisfitKind) -> Self {
        HessianSpec { misfit: kind, with_prior: false }
    }
}

pub trait InverseModel: Sync {
    /// Forward bundle: the state plus whatever operator caches the
    /// incremental solves need at this parameter point.
    type State: Sync;
    /// Adjoint bundle.
    type Adjoint: Sync;
    /// Incremental state/adjoint representation.
    type Increment: Sync;

    fn param_dim(&self) -> usize;

    fn solve_forward(&self, m: &[f64]) -> Result<Self::State, ModelError>;

    fn misfit_cost(&self, state: &Self::State) -> f64;

    fn solve_adjoint(&self, state: &Self::State, m: &[f64]) -> Result<Self::Adjoint, ModelError>;

    /// Misfit part of the gradient (the prior part is added by the caller).
    fn misfit_gradient(
        &self,
        state: &Self::State,
        adjoint: &Self::Adjoint,
        m: &[f64],
    ) -> Vec<f64>;

    fn solve_incremental_forward(
        &self,
        state: &Self::State,
        m: &[f64],
        mhat: &[f64],
    ) -> Result<Self::Increment, ModelError>;

    fn solve_incremental_adjoint(
        &self,
        state: &Self::State,
        adjoint: &Self::Adjoint,
        m: &[f64],
        mhat: &[f64],
        inc_fwd: &Self::Increment,
        kind: MisfitKind,
    ) -> Result<Self::Increment, ModelError>;

    /// Assemble the misfit Hessian action from the incremental solutions.
    fn hessian_terms(
        &self,
        state: &Self::State,
        adjoint: &Self::Adjoint,
        m: &[f64],
        mhat: &[f64],
        inc_fwd: &Self::Increment,
        inc_adj: &Self::Increment,
        kind: MisfitKind,
    ) -> Vec<f64>;

    /// One misfit Hessian application: incremental forward, incremental
    /// adjoint, then the term assembly.
    fn misfit_hessian_apply(
        &self,
        state: &Self::State,
        adjoint: &Self::Adjoint,
        m: &[f64],
        mhat: &[f64],
        kind: MisfitKind,
    ) -> Result<Vec<f64>, ModelError> {
        let uhat = self.solve_incremental_forward(state, m, mhat)?;
        let phat = self.solve_incremental_adjoint(state, adjoint, m, mhat, &uhat, kind)?;
        Ok(self.hessian_terms(state, adjoint, m, mhat, &uhat, &phat, kind))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CostBreakdown {
    pub total: f64,
    pub misfit: f64,
    pub reg: f64,
}

/// Total cost without building a full context (forward solve only).
pub fn eval_cost<M: InverseModel>(
    model: &M,
    prior: &BiLaplacianPrior,
    m: &[f64],
) -> Result<CostBreakdown, ModelError> {
    let state = model.solve_forward(m)?;
    let misfit = model.misfit_cost(&state);
    let (reg, _) = prior.cost_grad(m)?;
    Ok(CostBreakdown { total: misfit + reg, misfit, reg })
}

/// State, adjoint, cost and gradient at one parameter point.
pub struct SolveContext<'a, M: InverseModel> {
    pub model: &'a M,
    pub prior: &'a BiLaplacianPrior,
    m: Vec<f64>,
    state: M::State,
    adjoint: M::Adjoint,
    cost: CostBreakdown,
    gradient: Vec<f64>,
}

impl<'a, M: InverseModel> SolveContext<'a, M> {
    pub fn new(model: &'a M, prior: &'a BiLaplacianPrior, m: &[f64]) -> Result<Self, ModelError> {
        let state = model.solve_forward(m)?;
        let misfit = model.misfit_cost(&state);
        let (reg, prior_grad) = prior.cost_grad(m)?;
        let adjoint = model.solve_adjoint(&state, m)?;
        let mut gradient = model.misfit_gradient(&state, &adjoint, m);
        crate::linalg::axpy(1.0, &prior_grad, &mut gradient);
        Ok(SolveContext {
            model,
            prior,
            m: m.to_vec(),
            state,
            adjoint,
            cost: CostBreakdown { total: misfit + reg, misfit, reg },
            gradient,
        })
    }

    pub fn m(&self) -> &[f64] {
        &self.m
    }

    pub fn state(&self) -> &M::State {
        &self.state
    }

    pub fn adjoint(&self) -> &M::Adjoint {
        &self.adjoint
    }

    pub fn cost(&self) -> CostBreakdown {
        self.cost
    }

    pub fn gradient(&self) -> &[f64] {
        &self.gradient
    }

    pub fn hessian_apply(&self, mhat: &[f64], spec: HessianSpec) -> Result<Vec<f64>, ModelError> {
        let mut out = self.model.misfit_hessian_apply(
            &self.state,
            &self.adjoint,
            &self.m,
            mhat,
            spec.misfit,
        )?;
        if spec.with_prior {
            let r_mhat = self.prior.apply_r(mhat)?;
            crate::linalg::axpy(1.0, &r_mhat, &mut out);
        }
        Ok(out)
    }

    /// The Hessian as a matrix-free operator, for Newton-CG and the
    /// randomized eigensolvers. Solver failures inside `apply` are
    /// programming or configuration errors at this point and panic.
    pub fn hessian_op(&self, spec: HessianSpec) -> HessianOp<'_, 'a, M> {
        HessianOp { ctx: self, spec }
    }
}

pub struct HessianOp<'c, 'a, M: InverseModel> {
    ctx: &'c SolveContext<'a, M>,
    spec: HessianSpec,
}

impl<M: InverseModel> LinearOp for HessianOp<'_, '_, M> {
    fn dim(&self) -> usize {
        self.ctx.model.param_dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let out = self
            .ctx
            .hessian_apply(x, self.spec)
            .expect("hessian application failed");
        y.copy_from_slice(&out);
    }
}

/// Free-function counterparts of the context methods.
pub fn total_cost<M: InverseModel>(
    model: &M,
    prior: &BiLaplacianPrior,
    m: &[f64],
) -> Result<CostBreakdown, ModelError> {
    eval_cost(model, prior, m)
}

pub fn gradient<M: InverseModel>(
    model: &M,
    prior: &BiLaplacianPrior,
    m: &[f64],
) -> Result<Vec<f64>, ModelError> {
    Ok(SolveContext::new(model, prior, m)?.gradient().to_vec())
}

pub fn hessian_apply<M: InverseModel>(
    model: &M,
    prior: &BiLaplacianPrior,
    m: &[f64],
    mhat: &[f64],
    spec: HessianSpec,
) -> Result<Vec<f64>, ModelError> {
    SolveContext::new(model, prior, m)?.hessian_apply(mhat, spec)
}

#[derive(Debug, Clone)]
pub struct VerifyEntry {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Report of the derivative-verification sweep.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    /// `(eps, relative gradient FD error)` pairs; the curve is V-shaped with
    /// truncation error on the left and roundoff on the right.
    pub gradient_sweep: Vec<(f64, f64)>,
    pub entries: Vec<VerifyEntry>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn min_gradient_error(&self) -> f64 {
        self.gradient_sweep.iter().map(|e| e.1).fold(f64::INFINITY, f64::min)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("gradient finite-difference sweep (eps, relative error):\n");
        for (eps, err) in &self.gradient_sweep {
            s.push_str(&format!("  {eps:.1e}  {err:.3e}\n"));
        }
        for e in &self.entries {
            s.push_str(&format!(
                "{}: {:.3e} (threshold {:.1e}) {}\n",
                e.name,
                e.value,
                e.threshold,
                if e.passed { "PASS" } else { "FAIL" }
            ));
        }
        s
    }

    pub fn write_csv(&self, path: &std::path::Path) -> std::io::Result<()> {
        use std::io::Write;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "eps,fd_error")?;
        for (eps, err) in &self.gradient_sweep {
            writeln!(f, "{eps:.17e},{err:.17e}")?;
        }
        Ok(())
    }
}

/// Finite-difference and symmetry checks of the model derivatives at `m0`.
/// Never fails; problems show up as failed entries in the report.
pub fn verify_model<M: InverseModel>(
    model: &M,
    prior: &BiLaplacianPrior,
    m0: &[f64],
    seed: u64,
) -> VerifyReport {
    let n = model.param_dim();
    let mut entries = Vec::new();
    let mut gradient_sweep = Vec::new();

    let ctx = match SolveContext::new(model, prior, m0) {
        Ok(c) => c,
        Err(e) => {
            entries.push(VerifyEntry {
                name: format!("forward/adjoint solve ({e})"),
                value: f64::INFINITY,
                threshold: 0.0,
                passed: false,
            });
            return VerifyReport { gradient_sweep, entries };
        }
    };
    let g = ctx.gradient().to_vec();

    // Gradient sweep with central differences over a fixed direction set.
    let dirs: Vec<Vec<f64>> = (0..3).map(|k| crate::rng::gaussian_vector(seed, k, n)).collect();
    for &eps in &[1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8] {
        let mut worst = 0.0f64;
        for dir in &dirs {
            let mut mp = m0.to_vec();
            let mut mm = m0.to_vec();
            crate::linalg::axpy(eps, dir, &mut mp);
            crate::linalg::axpy(-eps, dir, &mut mm);
            let (cp, cm) = match (eval_cost(model, prior, &mp), eval_cost(model, prior, &mm)) {
                (Ok(a), Ok(b)) => (a.total, b.total),
                _ => {
                    worst = f64::INFINITY;
                    break;
                }
            };
            let fd = (cp - cm) / (2.0 * eps);
            let an = crate::linalg::dot(&g, dir);
            worst = worst.max((fd - an).abs() / an.abs().max(1e-14));
        }
        gradient_sweep.push((eps, worst));
    }
    let min_err = gradient_sweep.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
    entries.push(VerifyEntry {
        name: "gradient FD sweep minimum".into(),
        value: min_err,
        threshold: 1e-5,
        passed: min_err < 1e-5,
    });

    // Hessian symmetry probe.
    let hop = ctx.hessian_op(HessianSpec::full());
    let sym = crate::linalg::symmetry_defect(&hop, seed.wrapping_add(1), 3);
    entries.push(VerifyEntry {
        name: "Hessian symmetry probe".into(),
        value: sym,
        threshold: 1e-8,
        passed: sym < 1e-8,
    });

    // Hessian vs gradient finite differences at eps = 1e-5.
    let eps = 1e-5;
    let dir = crate::rng::gaussian_vector(seed, 10, n);
    let hmv = ctx.hessian_apply(&dir, HessianSpec::full());
    let hess_entry = match hmv {
        Ok(hd) => {
            let mut mp = m0.to_vec();
            let mut mm = m0.to_vec();
            crate::linalg::axpy(eps, &dir, &mut mp);
            crate::linalg::axpy(-eps, &dir, &mut mm);
            match (gradient(model, prior, &mp), gradient(model, prior, &mm)) {
                (Ok(gp), Ok(gm)) => {
                    let fd: Vec<f64> = gp
                        .iter()
                        .zip(&gm)
                        .map(|(a, b)| (a - b) / (2.0 * eps))
                        .collect();
                    let num = crate::linalg::norm2(&crate::linalg::sub(&hd, &fd));
                    let den = crate::linalg::norm2(&hd).max(1e-14);
                    num / den
                }
                _ => f64::INFINITY,
            }
        }
        Err(_) => f64::INFINITY,
    };
    entries.push(VerifyEntry {
        name: "Hessian vs gradient FD".into(),
        value: hess_entry,
        threshold: 1e-4,
        passed: hess_entry < 1e-4,
    });

    // Gauss-Newton positivity on a few probes.
    let mut min_curv: f64 = f64::INFINITY;
    for k in 0..3u64 {
        let d = crate::rng::gaussian_vector(seed, 20 + k, n);
        if let Ok(hd) = ctx.hessian_apply(&d, HessianSpec::misfit_only(MisfitKind::GaussNewton)) {
            let nd = crate::linalg::dot(&d, &d);
            min_curv = min_curv.min(crate::linalg::dot(&hd, &d) / nd);
        }
    }
    entries.push(VerifyEntry {
        name: "Gauss-Newton curvature lower bound".into(),
        value: min_curv,
        threshold: -1e-10,
        passed: min_curv >= -1e-10,
    });

    VerifyReport { gradient_sweep, entries }
}

/// Negative-control fixture: emulates an adjoint solved with the wrong sign
/// by negating the misfit gradient. The verification suite must flag it.
pub struct AdjointSignFlip<M>(pub M);

impl<M: InverseModel> InverseModel for AdjointSignFlip<M> {
    type State = M::State;
    type Adjoint = M::Adjoint;
    type Increment = M::Increment;

    fn param_dim(&self) -> usize {
        self.0.param_dim()
    }

    fn solve_forward(&self, m: &[f64]) -> Result<Self::State, ModelError> {
        self.0.solve_forward(m)
    }

    fn misfit_cost(&self, state: &Self::State) -> f64 {
        self.0.misfit_cost(state)
    }

    fn solve_adjoint(&self, state: &Self::State, m: &[f64]) -> Result<Self::Adjoint, ModelError> {
        self.0.solve_adjoint(state, m)
    }

    fn misfit_gradient(
        &self,
        state: &Self::State,
        adjoint: &Self::Adjoint,
        m: &[f64],
    ) -> Vec<f64> {
        self.0
            .misfit_gradient(state, adjoint, m)
            .into_iter()
            .map(|v| -v)
            .collect()
    }

    fn solve_incremental_forward(
        &self,
        state: &Self::State,
        m: &[f64],
        mhat: &[f64],
    ) -> Result<Self::Increment, ModelError> {
        self.0.solve_incremental_forward(state, m, mhat)
    }

    fn solve_incremental_adjoint(
        &self,
        state: &Self::State,
        adjoint: &Self::Adjoint,
        m: &[f64],
        mhat: &[f64],
        inc_fwd: &Self::Increment,
        kind: MisfitKind,
    ) -> Result<Self::Increment, ModelError> {
        self.0.solve_incremental_adjoint(state, adjoint, m, mhat, inc_fwd, kind)
    }

    fn hessian_terms(
        &self,
        state: &Self::State,
        adjoint: &Self::Adjoint,
        m: &[f64],
        mhat: &[f64],
        inc_fwd: &Self::Increment,
        inc_adj: &Self::Increment,
        kind: MisfitKind,
    ) -> Vec<f64> {
        self.0.hessian_terms(state, adjoint, m, mhat, inc_fwd, inc_adj, kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::build_unit_square_mesh;
    use crate::poisson::{PoissonProblem, PoissonSetup};
    use crate::prior::{BiLaplacianPrior, PriorParams};
    use std::sync::Arc;

    fn fixture(sigma: f64) -> (PoissonProblem, BiLaplacianPrior) {
        let mesh = Arc::new(build_unit_square_mesh(8, 8, &[]).unwrap());
        let setup = PoissonSetup::defaults(Arc::clone(&mesh));
        let points = crate::rng::uniform_points(2024, 20, [0.1, 0.1, 0.9, 0.5]);
        let mut problem = PoissonProblem::new(setup, &points, sigma).unwrap();
        let m_true = problem.param_space().interpolate(crate::poisson::default_truth);
        problem.synthesize_data(&m_true, 99).unwrap();
        let prior = BiLaplacianPrior::zero_mean(
            Arc::clone(problem.param_space()),
            PriorParams::isotropic(0.1, 0.5),
        )
        .unwrap();
        (problem, prior)
    }

    #[test]
    fn cost_decomposition_and_recomputation_oracle() {
        let (problem, prior) = fixture(0.01);
        let m = problem.param_space().interpolate(|x, y| 0.2 * x - 0.3 * y);
        let cost = eval_cost(&problem, &prior, &m).unwrap();
        assert_eq!(cost.total, cost.misfit + cost.reg);
        // Independent scalar recomputation from the state and the data.
        let state = problem.solve_forward(&m).unwrap();
        let obs = problem.observations();
        let pred = obs.op.matvec(&state.u);
        let mut misfit = 0.0;
        for (p, d) in pred.iter().zip(&obs.data) {
            misfit += 0.5 * (p - d) * (p - d) / (obs.sigma * obs.sigma);
        }
        assert!((misfit - cost.misfit).abs() <= 1e-12 * cost.misfit.max(1.0));
    }

    #[test]
    fn single_datum_perturbation_is_quadratic() {
        let (mut problem, prior) = fixture(0.01);
        let m = vec![0.0; problem.param_dim()];
        let base = eval_cost(&problem, &prior, &m).unwrap();
        let mut data = problem.observations().data.clone();
        let eps = 3e-3;
        // Perturbing one datum changes the misfit by
        // (r - eps)^2/2s^2 - r^2/2s^2 = (-2 r eps + eps^2) / 2s^2 computed
        // against the fixed prediction; check the closed form.
        let state = problem.solve_forward(&m).unwrap();
        let pred = problem.observations().op.matvec(&state.u);
        let r0 = pred[4] - data[4];
        data[4] += eps;
        problem.set_data(data);
        let bumped = eval_cost(&problem, &prior, &m).unwrap();
        let s2 = problem.observations().sigma.powi(2);
        let expect = base.misfit + (-2.0 * r0 * eps + eps * eps) / (2.0 * s2);
        assert!(
            (bumped.misfit - expect).abs() < 1e-9 * bumped.misfit.max(1.0),
            "misfit {} vs expected {expect}",
            bumped.misfit
        );
        assert_eq!(bumped.reg, base.reg);
    }

    #[test]
    fn doubling_sigma_quarters_the_misfit_gradient() {
        let (problem1, _prior) = fixture(0.01);
        let (mut problem2, _) = fixture(0.02);
        // Same data in both problems so only sigma differs.
        problem2.set_data(problem1.observations().data.clone());
        let m = problem1.param_space().interpolate(|x, _| 0.1 * x);
        let s1 = problem1.solve_forward(&m).unwrap();
        let a1 = problem1.solve_adjoint(&s1, &m).unwrap();
        let g1 = problem1.misfit_gradient(&s1, &a1, &m);
        let s2 = problem2.solve_forward(&m).unwrap();
        let a2 = problem2.solve_adjoint(&s2, &m).unwrap();
        let g2 = problem2.misfit_gradient(&s2, &a2, &m);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - 4.0 * b).abs() < 1e-8 * a.abs().max(1e-12));
        }
    }

    #[test]
    fn verify_report_csv_round_trip() {
        let (problem, prior) = fixture(0.01);
        let m0 = vec![0.0; problem.param_dim()];
        let report = verify_model(&problem, &prior, &m0, 3);
        assert!(report.passed());
        let dir = std::env::temp_dir().join("invpde_verify_csv");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("sweep.csv");
        report.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("eps,fd_error"));
        assert_eq!(text.lines().count(), 1 + report.gradient_sweep.len());
        assert!(report.to_text().contains("PASS"));
    }
}
