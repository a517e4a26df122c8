//! Log-coefficient inversion for the diffusion equation
//! `-div(exp(m) grad u) = f` from pointwise observations of `u`.
//!
//! The state lives in a (default quadratic) Lagrange space with Dirichlet
//! data on the bottom and top edges and natural (Neumann) data on the left
//! and right; the parameter is a (default linear) field on the same mesh.
//! All parameter-dependent forms are integrated with the state space's
//! quadrature rule, so gradients and Hessian actions below are the exact
//! derivatives of the discrete cost.

use std::sync::Arc;

use crate::fem::{
    load_vector, neumann_load, point_observation, weighted_stiffness, BasisTable, BoundaryTag,
    ConstrainedSpd, DirichletBc, FnSpace, Mesh,
};
use crate::model::{InverseModel, MisfitKind, ModelError, ObsData};

type BoundaryFn = Box<dyn Fn(f64, f64) -> f64 + Sync + Send>;

/// Geometry, spaces and boundary data of the forward problem.
pub struct PoissonSetup {
    pub mesh: Arc<Mesh>,
    pub state_degree: u8,
    pub param_degree: u8,
    pub dirichlet: Vec<(BoundaryTag, BoundaryFn)>,
    pub neumann: Vec<(BoundaryTag, BoundaryFn)>,
    pub source: Option<BoundaryFn>,
}

impl PoissonSetup {
    /// Unit-square defaults: quadratic state, linear parameter, `u = 0` on
    /// the bottom edge, `u = 1` on the top, zero flux left and right, no
    /// source.
    pub fn defaults(mesh: Arc<Mesh>) -> Self {
        PoissonSetup {
            mesh,
            state_degree: 2,
            param_degree: 1,
            dirichlet: vec![
                (BoundaryTag::Bottom, Box::new(|_, _| 0.0)),
                (BoundaryTag::Top, Box::new(|_, _| 1.0)),
            ],
            neumann: Vec::new(),
            source: None,
        }
    }
}

pub struct PoissonProblem {
    state_space: Arc<FnSpace>,
    param_space: Arc<FnSpace>,
    /// Parameter basis tabulated at the state quadrature rule.
    param_table: BasisTable,
    dirichlet: DirichletBc,
    neumann: Vec<(BoundaryTag, BoundaryFn)>,
    source: Option<BoundaryFn>,
    obs: ObsData,
    rtol: f64,
}

/// Forward bundle: state, the (eliminated) operator shared by the adjoint
/// and incremental solves, and quadrature caches.
pub struct PoissonState {
    pub u: Vec<f64>,
    system: ConstrainedSpd,
    em_qp: Vec<f64>,
    grad_u_qp: Vec<[f64; 2]>,
}

pub struct PoissonAdjoint {
    pub p: Vec<f64>,
    grad_p_qp: Vec<[f64; 2]>,
}

impl PoissonProblem {
    pub fn new(
        setup: PoissonSetup,
        obs_points: &[[f64; 2]],
        sigma: f64,
    ) -> Result<Self, ModelError> {
        assert!(sigma > 0.0);
        let state_space = Arc::new(FnSpace::new(Arc::clone(&setup.mesh), setup.state_degree));
        let param_space = Arc::new(FnSpace::new(setup.mesh, setup.param_degree));
        let param_table = param_space.basis_at(state_space.rule());
        let specs: Vec<(BoundaryTag, &dyn Fn(f64, f64) -> f64)> = setup
            .dirichlet
            .iter()
            .map(|(tag, f)| (*tag, f.as_ref() as &dyn Fn(f64, f64) -> f64))
            .collect();
        let dirichlet = DirichletBc::from_tags(&state_space, &specs)?;
        let op = point_observation(&state_space, obs_points)?;
        let q = op.nrows();
        Ok(PoissonProblem {
            state_space,
            param_space,
            param_table,
            dirichlet,
            neumann: setup.neumann,
            source: setup.source,
            obs: ObsData { op, data: vec![0.0; q], sigma },
            rtol: 1e-12,
        })
    }

    pub fn state_space(&self) -> &Arc<FnSpace> {
        &self.state_space
    }

    pub fn param_space(&self) -> &Arc<FnSpace> {
        &self.param_space
    }

    pub fn observations(&self) -> &ObsData {
        &self.obs
    }

    pub fn set_data(&mut self, data: Vec<f64>) {
        assert_eq!(data.len(), self.obs.count());
        self.obs.data = data;
    }

    /// Solve the forward problem at `m_true` and install noisy observations
    /// `B u + sigma * xi`. Returns the noise-free observations.
    pub fn synthesize_data(
        &mut self,
        m_true: &[f64],
        noise_seed: u64,
    ) -> Result<Vec<f64>, ModelError> {
        let state = self.solve_forward(m_true)?;
        let clean = self.obs.op.matvec(&state.u);
        let xi = crate::rng::gaussian_vector(noise_seed, 0, clean.len());
        let data: Vec<f64> =
            clean.iter().zip(&xi).map(|(c, x)| c + self.obs.sigma * x).collect();
        self.obs.data = data;
        Ok(clean)
    }

    fn eval_param_qp(&self, field: &[f64]) -> Vec<f64> {
        self.param_space.eval_at_table(field, &self.param_table)
    }

    /// `out_i = integral(phi^param_i * w * (ga . gb))` over param dofs.
    fn weighted_grad_dot_param(
        &self,
        w_qp: &[f64],
        ga: &[[f64; 2]],
        gb: &[[f64; 2]],
    ) -> Vec<f64> {
        let sp = &self.state_space;
        let rule = sp.rule();
        let nq = rule.nq();
        let mut out = vec![0.0; self.param_space.ndof()];
        for e in 0..sp.nelems() {
            let area = sp.geom(e).area;
            let pdofs = self.param_space.elem_dofs(e);
            for q in 0..nq {
                let k = e * nq + q;
                let dot = ga[k][0] * gb[k][0] + ga[k][1] * gb[k][1];
                let c = rule.weights[q] * area * w_qp[k] * dot;
                for (l, &d) in pdofs.iter().enumerate() {
                    out[d] += c * self.param_table.value(q, l);
                }
            }
        }
        out
    }

    /// `out_j = integral(c * (gsrc . grad phi^state_j))` over state dofs.
    fn weighted_grad_to_state(&self, c_qp: &[f64], gsrc: &[[f64; 2]]) -> Vec<f64> {
        let sp = &self.state_space;
        let rule = sp.rule();
        let basis = sp.basis();
        let nq = rule.nq();
        let mut out = vec![0.0; sp.ndof()];
        for e in 0..sp.nelems() {
            let geom = sp.geom(e);
            let dofs = sp.elem_dofs(e);
            for q in 0..nq {
                let k = e * nq + q;
                let w = rule.weights[q] * geom.area * c_qp[k];
                if w == 0.0 {
                    continue;
                }
                for (l, &d) in dofs.iter().enumerate() {
                    let g = geom.phys_grad(basis.grad_ref(q, l));
                    out[d] += w * (gsrc[k][0] * g[0] + gsrc[k][1] * g[1]);
                }
            }
        }
        out
    }

    fn obs_rhs(&self, residual_scaled: &[f64]) -> Vec<f64> {
        let mut rhs = self.obs.op.matvec_transpose(residual_scaled);
        for v in &mut rhs {
            *v = -*v;
        }
        rhs
    }
}

impl InverseModel for PoissonProblem {
    type State = PoissonState;
    type Adjoint = PoissonAdjoint;
    type Increment = Vec<f64>;

    fn param_dim(&self) -> usize {
        self.param_space.ndof()
    }

    fn solve_forward(&self, m: &[f64]) -> Result<PoissonState, ModelError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Other("parameter contains non-finite entries".into()));
        }
        let em_qp: Vec<f64> = self.eval_param_qp(m).iter().map(|v| v.exp()).collect();
        let a = weighted_stiffness(&self.state_space, &em_qp)?;
        let system = ConstrainedSpd::new(a, self.dirichlet.clone());
        let mut rhs = match &self.source {
            Some(f) => load_vector(&self.state_space, &**f),
            None => vec![0.0; self.state_space.ndof()],
        };
        for (tag, h) in &self.neumann {
            let nm = neumann_load(&self.state_space, &[*tag], &**h);
            crate::linalg::axpy(1.0, &nm, &mut rhs);
        }
        let u = system.solve(&rhs, true, self.rtol)?;
        let grad_u_qp = self.state_space.grad_at_table(&u, self.state_space.basis());
        Ok(PoissonState { u, system, em_qp, grad_u_qp })
    }

    fn misfit_cost(&self, state: &PoissonState) -> f64 {
        let r = crate::linalg::sub(&self.obs.op.matvec(&state.u), &self.obs.data);
        0.5 * crate::linalg::dot(&r, &r) / (self.obs.sigma * self.obs.sigma)
    }

    fn solve_adjoint(&self, state: &PoissonState, _m: &[f64]) -> Result<PoissonAdjoint, ModelError> {
        let mut r = crate::linalg::sub(&self.obs.op.matvec(&state.u), &self.obs.data);
        let s2 = self.obs.sigma * self.obs.sigma;
        for v in &mut r {
            *v /= s2;
        }
        let rhs = self.obs_rhs(&r);
        let p = state.system.solve(&rhs, false, self.rtol)?;
        let grad_p_qp = self.state_space.grad_at_table(&p, self.state_space.basis());
        Ok(PoissonAdjoint { p, grad_p_qp })
    }

    fn misfit_gradient(
        &self,
        state: &PoissonState,
        adjoint: &PoissonAdjoint,
        _m: &[f64],
    ) -> Vec<f64> {
        self.weighted_grad_dot_param(&state.em_qp, &state.grad_u_qp, &adjoint.grad_p_qp)
    }

    fn solve_incremental_forward(
        &self,
        state: &PoissonState,
        _m: &[f64],
        mhat: &[f64],
    ) -> Result<Vec<f64>, ModelError> {
        let mhat_qp = self.eval_param_qp(mhat);
        let c_qp: Vec<f64> =
            mhat_qp.iter().zip(&state.em_qp).map(|(mh, em)| mh * em).collect();
        let mut rhs = self.weighted_grad_to_state(&c_qp, &state.grad_u_qp);
        for v in &mut rhs {
            *v = -*v;
        }
        let uhat = state.system.solve(&rhs, false, self.rtol)?;
        Ok(uhat)
    }

    fn solve_incremental_adjoint(
        &self,
        state: &PoissonState,
        adjoint: &PoissonAdjoint,
        _m: &[f64],
        mhat: &[f64],
        inc_fwd: &Vec<f64>,
        kind: MisfitKind,
    ) -> Result<Vec<f64>, ModelError> {
        let s2 = self.obs.sigma * self.obs.sigma;
        let mut buhat = self.obs.op.matvec(inc_fwd);
        for v in &mut buhat {
            *v /= s2;
        }
        let mut rhs = self.obs_rhs(&buhat);
        if kind == MisfitKind::Full {
            let mhat_qp = self.eval_param_qp(mhat);
            let c_qp: Vec<f64> =
                mhat_qp.iter().zip(&state.em_qp).map(|(mh, em)| mh * em).collect();
            let coupling = self.weighted_grad_to_state(&c_qp, &adjoint.grad_p_qp);
            crate::linalg::axpy(-1.0, &coupling, &mut rhs);
        }
        let phat = state.system.solve(&rhs, false, self.rtol)?;
        Ok(phat)
    }

    fn hessian_terms(
        &self,
        state: &PoissonState,
        adjoint: &PoissonAdjoint,
        _m: &[f64],
        mhat: &[f64],
        inc_fwd: &Vec<f64>,
        inc_adj: &Vec<f64>,
        kind: MisfitKind,
    ) -> Vec<f64> {
        let grad_phat = self.state_space.grad_at_table(inc_adj, self.state_space.basis());
        let mut out =
            self.weighted_grad_dot_param(&state.em_qp, &state.grad_u_qp, &grad_phat);
        if kind == MisfitKind::Full {
            let grad_uhat =
                self.state_space.grad_at_table(inc_fwd, self.state_space.basis());
            let t1 =
                self.weighted_grad_dot_param(&state.em_qp, &grad_uhat, &adjoint.grad_p_qp);
            let mhat_qp = self.eval_param_qp(mhat);
            let c_qp: Vec<f64> =
                mhat_qp.iter().zip(&state.em_qp).map(|(mh, em)| mh * em).collect();
            let t2 =
                self.weighted_grad_dot_param(&c_qp, &state.grad_u_qp, &adjoint.grad_p_qp);
            crate::linalg::axpy(1.0, &t1, &mut out);
            crate::linalg::axpy(1.0, &t2, &mut out);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::build_unit_square_mesh;
    use crate::model::{verify_model, AdjointSignFlip, HessianSpec, SolveContext};
    use crate::prior::{BiLaplacianPrior, PriorParams};

    fn desk_problem(nx: usize, q: usize) -> (PoissonProblem, BiLaplacianPrior) {
        let mesh = Arc::new(build_unit_square_mesh(nx, nx, &[]).unwrap());
        let setup = PoissonSetup::defaults(Arc::clone(&mesh));
        let points = crate::rng::uniform_points(2024, q, [0.1, 0.1, 0.9, 0.5]);
        let mut problem = PoissonProblem::new(setup, &points, 0.01).unwrap();
        let m_true = problem
            .param_space()
            .interpolate(|x, y| {
                (2.0 + 2.0 * (-50.0 * ((x - 0.5).powi(2) + (y - 0.3).powi(2))).exp()).ln()
            });
        problem.synthesize_data(&m_true, 99).unwrap();
        let prior = BiLaplacianPrior::zero_mean(
            Arc::clone(problem.param_space()),
            PriorParams::isotropic(0.1, 0.5),
        )
        .unwrap();
        (problem, prior)
    }

    #[test]
    fn constant_parameter_gives_harmonic_linear_state() {
        // With f = 0 and pure Dirichlet data 0/1 the solution is u = y for
        // any constant coefficient (it cancels).
        let mesh = Arc::new(build_unit_square_mesh(6, 6, &[]).unwrap());
        let setup = PoissonSetup::defaults(Arc::clone(&mesh));
        let problem = PoissonProblem::new(setup, &[[0.5, 0.25]], 0.01).unwrap();
        for c in [0.0, 1.3, -0.7] {
            let m = vec![c; problem.param_dim()];
            let state = problem.solve_forward(&m).unwrap();
            let exact = problem.state_space().interpolate(|_, y| y);
            let err = crate::linalg::norm2(&crate::linalg::sub(&state.u, &exact));
            assert!(err < 1e-10, "c = {c}: error {err}");
        }
    }

    #[test]
    fn manufactured_solution_convergence() {
        // m = x, u = sin(pi x) sin(pi y):
        // f = -div(e^x grad u) = e^x (2 pi^2 sin sin - pi cos(pi x) sin(pi y)).
        // Dirichlet on bottom/top is zero; Neumann flux e^m du/dx on the
        // left/right edges.
        let pi = std::f64::consts::PI;
        let exact = move |x: f64, y: f64| (pi * x).sin() * (pi * y).sin();
        let mut errs = Vec::new();
        for nx in [8usize, 16] {
            let mesh = Arc::new(build_unit_square_mesh(nx, nx, &[]).unwrap());
            let setup = PoissonSetup {
                mesh,
                state_degree: 1,
                param_degree: 1,
                dirichlet: vec![
                    (BoundaryTag::Bottom, Box::new(|_, _| 0.0)),
                    (BoundaryTag::Top, Box::new(|_, _| 0.0)),
                ],
                neumann: vec![
                    (
                        BoundaryTag::Left,
                        Box::new(move |_x: f64, y: f64| -pi * (pi * y).sin()),
                    ),
                    (
                        BoundaryTag::Right,
                        Box::new(move |_x: f64, y: f64| {
                            1.0f64.exp() * pi * (pi * 1.0).cos() * (pi * y).sin()
                        }),
                    ),
                ],
                source: Some(Box::new(move |x: f64, y: f64| {
                    x.exp()
                        * (2.0 * pi * pi * (pi * x).sin() * (pi * y).sin()
                            - pi * (pi * x).cos() * (pi * y).sin())
                })),
            };
            let problem = PoissonProblem::new(setup, &[[0.5, 0.25]], 0.01).unwrap();
            let m = problem.param_space().interpolate(|x, _| x);
            let state = problem.solve_forward(&m).unwrap();
            errs.push(problem.state_space().l2_error(&state.u, exact));
        }
        let rate = errs[0] / errs[1];
        assert!(rate > 3.5, "convergence ratio {rate} (errors {errs:?})");
    }

    #[test]
    fn zero_misfit_gives_zero_adjoint_and_gradient() {
        let (mut problem, _prior) = desk_problem(6, 20);
        let m = problem.param_space().interpolate(|x, y| 0.3 * x - 0.1 * y);
        let state = problem.solve_forward(&m).unwrap();
        let clean = problem.observations().op.matvec(&state.u);
        problem.set_data(clean);
        let state = problem.solve_forward(&m).unwrap();
        let adjoint = problem.solve_adjoint(&state, &m).unwrap();
        assert!(crate::linalg::norm2(&adjoint.p) < 1e-10);
        let g = problem.misfit_gradient(&state, &adjoint, &m);
        assert!(crate::linalg::norm2(&g) < 1e-8);
    }

    #[test]
    fn adjoint_weak_residual_identity() {
        // <e^m grad p, grad w> + <B^T Gamma^{-1}(Bu - d), w> = 0 for all
        // test functions w vanishing on the Dirichlet boundary.
        let (problem, _) = desk_problem(6, 15);
        let m = problem.param_space().interpolate(|x, y| 0.2 * (x + y));
        let state = problem.solve_forward(&m).unwrap();
        let adjoint = problem.solve_adjoint(&state, &m).unwrap();
        let ap = state.system.eliminated().matvec(&adjoint.p);
        let mut r = crate::linalg::sub(
            &problem.observations().op.matvec(&state.u),
            &problem.observations().data,
        );
        let s2 = problem.observations().sigma.powi(2);
        for v in &mut r {
            *v /= s2;
        }
        let mut bt = problem.observations().op.matvec_transpose(&r);
        for (i, v) in bt.iter_mut().enumerate() {
            if problem.dirichlet.is_constrained(i) {
                *v = 0.0;
            }
        }
        let res = crate::linalg::add(&ap, &bt);
        let scale = crate::linalg::norm2(&bt).max(1e-30);
        assert!(
            crate::linalg::norm2(&res) / scale < 1e-9,
            "weak residual {}",
            crate::linalg::norm2(&res) / scale
        );
    }

    #[test]
    fn gradient_misfit_matches_sensitivity_oracle() {
        // Dense Jacobian by forward sensitivity solves, column per param dof.
        let (problem, _) = desk_problem(4, 10); // param dim 25
        let m = problem.param_space().interpolate(|x, y| 0.1 * x * y);
        let state = problem.solve_forward(&m).unwrap();
        let adjoint = problem.solve_adjoint(&state, &m).unwrap();
        let g = problem.misfit_gradient(&state, &adjoint, &m);

        let n = problem.param_dim();
        let q = problem.observations().count();
        let mut jac = crate::linalg::DenseMat::zeros(q, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let uhat = problem.solve_incremental_forward(&state, &m, &e).unwrap();
            let col = problem.observations().op.matvec(&uhat);
            for i in 0..q {
                jac.set(i, j, col[i]);
            }
        }
        let mut r = crate::linalg::sub(
            &problem.observations().op.matvec(&state.u),
            &problem.observations().data,
        );
        let s2 = problem.observations().sigma.powi(2);
        for v in &mut r {
            *v /= s2;
        }
        let g_oracle = jac.matvec_transpose(&r);
        let err = crate::linalg::norm2(&crate::linalg::sub(&g, &g_oracle))
            / crate::linalg::norm2(&g_oracle);
        assert!(err < 1e-8, "adjoint vs sensitivity-Jacobian error {err}");
    }

    #[test]
    fn hessian_zero_direction_and_prior_term() {
        let (problem, prior) = desk_problem(5, 12);
        let m = prior.mean().to_vec();
        let ctx = SolveContext::new(&problem, &prior, &m).unwrap();
        let zero = vec![0.0; problem.param_dim()];
        let h0 = ctx.hessian_apply(&zero, HessianSpec::full()).unwrap();
        assert!(crate::linalg::norm2(&h0) == 0.0);
    }

    #[test]
    fn misfit_gradient_with_adjoint_equal_to_state_is_nonnegative() {
        // With p = u the misfit-gradient entries integrate
        // phi_i e^m |grad u|^2 >= 0.
        let (problem, _) = desk_problem(5, 10);
        let m = problem.param_space().interpolate(|x, y| 0.1 * (x + y));
        let state = problem.solve_forward(&m).unwrap();
        let self_adjoint = PoissonAdjoint {
            p: state.u.clone(),
            grad_p_qp: state.grad_u_qp.clone(),
        };
        let g = problem.misfit_gradient(&state, &self_adjoint, &m);
        assert!(g.iter().all(|&v| v >= -1e-14));
        assert!(g.iter().sum::<f64>() > 0.0);
    }

    #[test]
    fn verify_model_passes_on_desk_meshes() {
        for nx in [8usize, 16] {
            let (problem, prior) = desk_problem(nx, 30);
            let m0 = problem.param_space().interpolate(|x, y| 0.1 * (x - y));
            let report = verify_model(&problem, &prior, &m0, 7);
            assert!(report.passed(), "report:\n{}", report.to_text());
            assert!(report.min_gradient_error() < 1e-5);
        }
    }

    #[test]
    fn corrupted_adjoint_fails_verification() {
        let (problem, prior) = desk_problem(5, 10);
        let m0 = vec![0.0; problem.param_dim()];
        let report = verify_model(&AdjointSignFlip(problem), &prior, &m0, 7);
        assert!(!report.passed());
    }

    #[test]
    fn constant_shift_invariance() {
        let (problem, _) = desk_problem(6, 12);
        let base = problem.param_space().interpolate(|x, y| 0.2 * x + 0.1 * y * y);
        let shifted: Vec<f64> = base.iter().map(|v| v + 0.8).collect();
        let u1 = problem.solve_forward(&base).unwrap().u;
        let u2 = problem.solve_forward(&shifted).unwrap().u;
        let err = crate::linalg::norm2(&crate::linalg::sub(&u1, &u2));
        assert!(err < 1e-10, "shift changed the state by {err}");
    }

    #[test]
    fn gauss_newton_curvature_nonnegative() {
        let (problem, prior) = desk_problem(5, 15);
        let m = problem.param_space().interpolate(|x, _| 0.3 * x);
        let ctx = SolveContext::new(&problem, &prior, &m).unwrap();
        for s in 0..5u64 {
            let d = crate::rng::gaussian_vector(31, s, problem.param_dim());
            let hd = ctx
                .hessian_apply(&d, HessianSpec::misfit_only(MisfitKind::GaussNewton))
                .unwrap();
            let c = crate::linalg::dot(&hd, &d);
            assert!(c >= -1e-10 * crate::linalg::dot(&d, &d), "curvature {c}");
        }
    }
}

/// Which pipeline stages to execute. Later stages depend on earlier ones:
/// the eigensolve uses the MAP point (falling back to the prior mean when
/// the MAP stage is off), the posterior variance and posterior samples need
/// the eigensolve.
#[derive(Debug, Clone, Copy)]
pub struct StagePlan {
    pub sample_prior: bool,
    pub map: bool,
    pub eigens: bool,
    pub variance: bool,
    pub sample_posterior: bool,
}

impl Default for StagePlan {
    fn default() -> Self {
        StagePlan {
            sample_prior: true,
            map: true,
            eigens: true,
            variance: true,
            sample_posterior: true,
        }
    }
}

impl StagePlan {
    pub fn validate(&self) -> Result<(), String> {
        if self.sample_posterior && !self.eigens {
            return Err("stage sample-posterior requires stage eigens".into());
        }
        Ok(())
    }
}

/// Named seeds for the experiment stages; every random draw in a run flows
/// from one of these.
#[derive(Debug, Clone, Copy)]
pub struct ExperimentSeeds {
    pub obs_points: u64,
    pub noise: u64,
    pub prior_samples: u64,
    pub eigensolver: u64,
    pub variance: u64,
}

impl Default for ExperimentSeeds {
    fn default() -> Self {
        ExperimentSeeds {
            obs_points: 1,
            noise: 2,
            prior_samples: 3,
            eigensolver: 4,
            variance: 5,
        }
    }
}

/// Desk-scale experiment configuration with the standard defaults:
/// anisotropic prior (gamma 0.1, delta 0.5, rotation pi/4 with weights 2 and
/// 0.5), 50 observations in the lower window, one-percent noise, a rank-50
/// eigensolve with 20 oversampling columns, spectrum cut at 0.07.
pub struct PoissonExperimentConfig {
    pub nx: usize,
    pub ny: usize,
    pub state_degree: u8,
    pub prior: crate::prior::PriorParams,
    pub obs_count: usize,
    /// Observation window `[x0, y0, x1, y1]`.
    pub obs_window: [f64; 4],
    pub sigma: f64,
    pub truth: Box<dyn Fn(f64, f64) -> f64 + Sync + Send>,
    pub newton: crate::newtoncg::NewtonConfig,
    pub ghep_r: usize,
    pub ghep_l: usize,
    pub lambda_cut: f64,
    pub solver: crate::posterior::EigSolver,
    pub prior_variance_rank: usize,
    pub sample_count: usize,
    pub seeds: ExperimentSeeds,
    pub threads: usize,
    pub stages: StagePlan,
}

/// Default truth field: a smooth bump over a constant background,
/// `ln(2 + 2 exp(-50 ((x - 0.5)^2 + (y - 0.3)^2)))`.
pub fn default_truth(x: f64, y: f64) -> f64 {
    (2.0 + 2.0 * (-50.0 * ((x - 0.5).powi(2) + (y - 0.3).powi(2))).exp()).ln()
}

impl Default for PoissonExperimentConfig {
    fn default() -> Self {
        PoissonExperimentConfig {
            nx: 32,
            ny: 32,
            state_degree: 2,
            prior: crate::prior::PriorParams {
                gamma: 0.1,
                delta: 0.5,
                theta: crate::fem::AnisoTensor::rotated_diag(
                    std::f64::consts::FRAC_PI_4,
                    2.0,
                    0.5,
                ),
                robin_scale: crate::prior::DEFAULT_ROBIN_SCALE,
            },
            obs_count: 50,
            obs_window: [0.1, 0.1, 0.9, 0.5],
            sigma: 0.01,
            truth: Box::new(default_truth),
            newton: crate::newtoncg::NewtonConfig::default(),
            ghep_r: 50,
            ghep_l: 20,
            lambda_cut: crate::posterior::DEFAULT_LAMBDA_CUT,
            solver: crate::posterior::EigSolver::DoublePass,
            prior_variance_rank: 300,
            sample_count: 3,
            seeds: ExperimentSeeds::default(),
            threads: 1,
            stages: StagePlan::default(),
        }
    }
}

/// Everything a desk run produces, kept in memory; `write_artifacts` puts it
/// on disk in the documented formats.
pub struct PoissonRunOutput {
    pub problem: PoissonProblem,
    pub prior: crate::prior::BiLaplacianPrior,
    pub obs_points: Vec<[f64; 2]>,
    pub m_true: Vec<f64>,
    pub m_map: Vec<f64>,
    pub newton_trace: crate::newtoncg::NewtonTrace,
    /// Raw spectrum of the misfit-precision pencil (descending).
    pub spectrum: Vec<f64>,
    pub kept_rank: usize,
    pub ghep_counts: crate::randeig::ApplyCounts,
    pub prior_variance: Vec<f64>,
    pub posterior_variance: Vec<f64>,
    pub prior_samples: Vec<Vec<f64>>,
    pub posterior_samples: Vec<Vec<f64>>,
    /// Stage timings in seconds, in execution order.
    pub timings: Vec<(String, f64)>,
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

pub fn stage_timed<T, E: std::error::Error + Send + Sync + 'static>(
    name: &'static str,
    timings: &mut Vec<(String, f64)>,
    f: impl FnOnce() -> Result<T, E>,
) -> Result<T, ExperimentError> {
    let t0 = std::time::Instant::now();
    let out = f().map_err(|e| ExperimentError::Stage { stage: name, source: Box::new(e) })?;
    timings.push((name.to_string(), t0.elapsed().as_secs_f64()));
    Ok(out)
}

/// Run the full desk pipeline: data synthesis, MAP by Newton-CG, randomized
/// eigensolve of the misfit-precision pencil, variance fields, and samples.
pub fn run_experiment(cfg: PoissonExperimentConfig) -> Result<PoissonRunOutput, ExperimentError> {
    use crate::posterior::{LaplacePosterior, PosteriorConfig};
    let mut timings = Vec::new();

    let mesh = stage_timed("mesh", &mut timings, || {
        crate::fem::build_unit_square_mesh(cfg.nx, cfg.ny, &[])
    })?;
    let mesh = Arc::new(mesh);

    let (mut problem, m_true, obs_points) = stage_timed("setup", &mut timings, || {
        let mut setup = PoissonSetup::defaults(Arc::clone(&mesh));
        setup.state_degree = cfg.state_degree;
        let [x0, y0, x1, y1] = cfg.obs_window;
        let obs_points = crate::rng::uniform_points(cfg.seeds.obs_points, cfg.obs_count, [x0, y0, x1, y1]);
        let problem = PoissonProblem::new(setup, &obs_points, cfg.sigma)?;
        let m_true = problem.param_space().interpolate(&*cfg.truth);
        Ok::<_, ModelError>((problem, m_true, obs_points))
    })?;

    stage_timed("data", &mut timings, || {
        problem.synthesize_data(&m_true, cfg.seeds.noise).map(|_| ())
    })?;

    let prior = stage_timed("prior", &mut timings, || {
        crate::prior::BiLaplacianPrior::zero_mean(
            Arc::clone(problem.param_space()),
            cfg.prior,
        )
    })?;

    cfg.stages.validate().map_err(|msg| ExperimentError::Stage {
        stage: "plan",
        source: Box::new(ModelError::Other(msg)),
    })?;

    let (m_map, newton_trace) = if cfg.stages.map {
        stage_timed("map", &mut timings, || {
            crate::newtoncg::solve(&problem, &prior, prior.mean(), &cfg.newton)
        })?
    } else {
        (prior.mean().to_vec(), crate::newtoncg::NewtonTrace::empty())
    };

    let posterior = if cfg.stages.eigens {
        Some(stage_timed("eigens", &mut timings, || {
            let mut ghep =
                crate::randeig::GhepConfig::new(cfg.ghep_r, cfg.ghep_l, cfg.seeds.eigensolver);
            ghep.threads = cfg.threads;
            let mut pcfg = PosteriorConfig::new(ghep);
            pcfg.lambda_cut = cfg.lambda_cut;
            pcfg.solver = cfg.solver;
            LaplacePosterior::build(&problem, &prior, &m_map, &pcfg)
        })?)
    } else {
        None
    };

    let (prior_variance, posterior_variance) = if cfg.stages.variance {
        let pv = stage_timed("variance", &mut timings, || {
            prior.pointwise_variance_randomized(
                cfg.prior_variance_rank.min(prior.n()),
                cfg.seeds.variance,
            )
        })?;
        let qv = match &posterior {
            Some(post) => crate::linalg::sub(&pv, &post.correction_field()),
            None => Vec::new(),
        };
        (pv, qv)
    } else {
        (Vec::new(), Vec::new())
    };

    let (prior_samples, posterior_samples) = stage_timed("samples", &mut timings, || {
        let mut ps = Vec::new();
        let mut qs = Vec::new();
        // Seed streams for prior and posterior draws are split so the two
        // sample sets are independent.
        if cfg.stages.sample_prior {
            for k in 0..cfg.sample_count {
                let seed = crate::rng::split_seed(cfg.seeds.prior_samples, k as u64);
                ps.push(prior.sample(seed)?);
            }
        }
        if cfg.stages.sample_posterior {
            let post = posterior.as_ref().expect("plan validated");
            for k in 0..cfg.sample_count {
                let seed = crate::rng::split_seed(cfg.seeds.prior_samples, 1000 + k as u64);
                qs.push(post.sample(seed)?);
            }
        }
        Ok::<_, crate::posterior::PosteriorError>((ps, qs))
    })?;

    let (spectrum, kept_rank, ghep_counts) = match &posterior {
        Some(post) => (post.eigenvalues_raw().to_vec(), post.rank(), post.counts),
        None => (Vec::new(), 0, crate::randeig::ApplyCounts::default()),
    };
    drop(posterior);

    Ok(PoissonRunOutput {
        problem,
        prior,
        obs_points,
        m_true,
        m_map,
        newton_trace,
        spectrum,
        kept_rank,
        ghep_counts,
        prior_variance,
        posterior_variance,
        prior_samples,
        posterior_samples,
        timings,
    })
}

impl PoissonRunOutput {
    /// Write every artifact of the run into `dir` (created if missing);
    /// returns the paths in a deterministic order.
    pub fn write_artifacts(
        &self,
        dir: &std::path::Path,
    ) -> Result<Vec<std::path::PathBuf>, crate::fem::FemError> {
        use std::io::Write;
        std::fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        let param_space = self.prior.space();

        let mesh_path = dir.join("mesh.txt");
        crate::fem::write_mesh(&mesh_path, param_space.mesh())?;
        paths.push(mesh_path);

        for (name, field) in [
            ("m_true.txt", &self.m_true),
            ("m_map.txt", &self.m_map),
            ("prior_variance.txt", &self.prior_variance),
            ("posterior_variance.txt", &self.posterior_variance),
        ] {
            let p = dir.join(name);
            crate::fem::write_field(&p, param_space, field)?;
            paths.push(p);
        }
        for (k, s) in self.prior_samples.iter().enumerate() {
            let p = dir.join(format!("prior_sample_{k}.txt"));
            crate::fem::write_field(&p, param_space, s)?;
            paths.push(p);
        }
        for (k, s) in self.posterior_samples.iter().enumerate() {
            let p = dir.join(format!("posterior_sample_{k}.txt"));
            crate::fem::write_field(&p, param_space, s)?;
            paths.push(p);
        }

        let eig_path = dir.join("eigenvalues.csv");
        {
            let mut f = std::io::BufWriter::new(std::fs::File::create(&eig_path)?);
            writeln!(f, "index,lambda")?;
            for (i, l) in self.spectrum.iter().enumerate() {
                writeln!(f, "{i},{l:.17e}")?;
            }
        }
        paths.push(eig_path);

        let trace_path = dir.join("newton_trace.csv");
        self.newton_trace.write_csv(&trace_path)?;
        paths.push(trace_path);

        let obs_path = dir.join("obs_points.csv");
        {
            let mut f = std::io::BufWriter::new(std::fs::File::create(&obs_path)?);
            writeln!(f, "x,y,data")?;
            for (p, d) in self.obs_points.iter().zip(&self.problem.observations().data) {
                writeln!(f, "{:.17e},{:.17e},{:.17e}", p[0], p[1], d)?;
            }
        }
        paths.push(obs_path);

        let summary_path = dir.join("summary.txt");
        {
            let mut f = std::io::BufWriter::new(std::fs::File::create(&summary_path)?);
            writeln!(f, "problem: poisson log-coefficient inversion")?;
            writeln!(f, "parameter dofs: {}", param_space.ndof())?;
            writeln!(f, "state dofs: {}", self.problem.state_space().ndof())?;
            writeln!(f, "observations: {}", self.obs_points.len())?;
            writeln!(
                f,
                "newton: {} iterations, {} total inner CG iterations, status {:?}",
                self.newton_trace.newton_iters(),
                self.newton_trace.total_cg_iters(),
                self.newton_trace.status
            )?;
            writeln!(
                f,
                "newton gradient norms: initial {:.6e}, final {:.6e}",
                self.newton_trace.initial_grad_norm, self.newton_trace.final_grad_norm
            )?;
            writeln!(
                f,
                "newton solve counts: {} forward solves, {} incremental forward/adjoint pairs",
                self.newton_trace.forward_solves(),
                self.newton_trace.incremental_solve_pairs()
            )?;
            writeln!(
                f,
                "eigensolve: kept {} modes of {}; operator applies: {} misfit-Hessian, {} precision, {} precision solves",
                self.kept_rank,
                self.spectrum.len(),
                self.ghep_counts.a_applies,
                self.ghep_counts.b_applies,
                self.ghep_counts.b_solves
            )?;
            writeln!(f, "cost history (iter, total, misfit, reg):")?;
            for r in &self.newton_trace.iterations {
                writeln!(f, "  {} {:.9e} {:.9e} {:.9e}", r.iter, r.cost, r.misfit, r.reg)?;
            }
            writeln!(f, "stage timings (s):")?;
            for (name, t) in &self.timings {
                writeln!(f, "  {name}: {t:.3}")?;
            }
        }
        paths.push(summary_path);
        Ok(paths)
    }
}
