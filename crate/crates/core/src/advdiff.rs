//! Initial-condition inversion for the advection-diffusion equation
//! `u_t - kappa lap(u) + v . grad(u) = 0` with homogeneous Neumann data,
//! observed pointwise at discrete times.
//!
//! Time discretization is implicit Euler with a fixed step matrix
//! `A = M/dt + kappa K + N + S` factored once (dense LU at desk scale) and
//! reused across the whole run. The adjoint is the exact algebraic
//! transpose of the discrete forward map including stabilization, so the
//! transpose probe `<F m, w> = <m, F* w>` holds to machine precision; the
//! continuous backward-in-time equation is its documented counterpart. The
//! parameter-to-observable map is linear: the misfit Hessian is independent
//! of the parameter and the MAP point solves the normal equations, handled
//! by CG preconditioned with the inverse prior precision.

use std::sync::Arc;

use crate::fem::{
    advection, mass, point_observation, streamline_diffusion, weighted_stiffness, FnSpace, Mesh,
};
use crate::linalg::{cg_solve, CgOptions, Csr, FnOp, LuFactors, SparseSym};
use crate::model::{InverseModel, MisfitKind, ModelError, ObsData};
use crate::prior::BiLaplacianPrior;

/// One state vector per time node, node 0 being the initial condition.
#[derive(Debug, Clone)]
pub struct TimeSeriesField(pub Vec<Vec<f64>>);

impl TimeSeriesField {
    pub fn nodes(&self) -> usize {
        self.0.len()
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.0[k]
    }
}

/// Advective velocity: either the curl of a stream function interpolated in
/// a quadratic space on the mesh (elementwise polynomial, divergence-free,
/// with continuous normal components, hence exactly mass-conserving in the
/// transport step), or a nodal vector field loaded from file.
pub struct Velocity {
    source: VelocitySource,
}

enum VelocitySource {
    Stream { psi_space: Arc<FnSpace>, psi: Vec<f64>, scale: f64 },
    Fields { space: Arc<FnSpace>, vx: Vec<f64>, vy: Vec<f64> },
}

impl Velocity {
    /// Default field: `v = scale * curl(psi_h)` with
    /// `psi = sin^2(pi x) sin^2(pi y) / pi` interpolated quadratically and
    /// `scale` normalizing the maximum speed to one.
    pub fn default_stream(mesh: Arc<Mesh>) -> Self {
        let pi = std::f64::consts::PI;
        let psi_space = Arc::new(FnSpace::new(mesh, 2));
        let psi = psi_space
            .interpolate(|x, y| (pi * x).sin().powi(2) * (pi * y).sin().powi(2) / pi);
        // Normalize by the largest speed over the quadrature points.
        let grads = psi_space.grad_at_table(&psi, psi_space.basis());
        let vmax = grads
            .iter()
            .map(|g| (g[0] * g[0] + g[1] * g[1]).sqrt())
            .fold(0.0, f64::max);
        Velocity {
            source: VelocitySource::Stream { psi_space, psi, scale: 1.0 / vmax },
        }
    }

    /// Nodal vector field on the given space (for file-loaded velocities).
    pub fn from_fields(space: Arc<FnSpace>, vx: Vec<f64>, vy: Vec<f64>) -> Result<Self, ModelError> {
        if vx.len() != space.ndof() || vy.len() != space.ndof() {
            return Err(ModelError::Other(format!(
                "velocity field has {} values but the space has {} dofs",
                vx.len(),
                space.ndof()
            )));
        }
        Ok(Velocity { source: VelocitySource::Fields { space, vx, vy } })
    }

    /// Velocity at the quadrature points of `space` (element-major).
    pub fn at_quadrature(&self, space: &FnSpace) -> Vec<[f64; 2]> {
        match &self.source {
            VelocitySource::Stream { psi_space, psi, scale } => {
                let table = psi_space.basis_at(space.rule());
                psi_space
                    .grad_at_table(psi, &table)
                    .iter()
                    .map(|g| [-scale * g[1], scale * g[0]])
                    .collect()
            }
            VelocitySource::Fields { space: vsp, vx, vy } => {
                let table = vsp.basis_at(space.rule());
                let xs = vsp.eval_at_table(vx, &table);
                let ys = vsp.eval_at_table(vy, &table);
                xs.iter().zip(&ys).map(|(a, b)| [*a, *b]).collect()
            }
        }
    }

    /// Largest |v . n| sampled along the outer boundary, with the trace
    /// taken from each boundary edge's owning triangle.
    pub fn max_outer_normal_flux(&self, space: &FnSpace) -> f64 {
        let mesh = space.mesh();
        let mut worst = 0.0f64;
        for edge in mesh.boundary_edges() {
            if edge.tag == crate::fem::BoundaryTag::Hole {
                continue;
            }
            let [a, b] = edge.vertices;
            let (pa, pb) = (mesh.vertex(a), mesh.vertex(b));
            let len = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
            // Outward normal: the domain lies to the left of (a -> b).
            let nrm = [(pb[1] - pa[1]) / len, -(pb[0] - pa[0]) / len];
            for t in [0.2, 0.5, 0.8] {
                let x = pa[0] + t * (pb[0] - pa[0]);
                let y = pa[1] + t * (pb[1] - pa[1]);
                let v = self.eval_in_element(edge.triangle, x, y);
                worst = worst.max((v[0] * nrm[0] + v[1] * nrm[1]).abs());
            }
        }
        worst
    }

    /// Velocity at a point evaluated from a prescribed element.
    fn eval_in_element(&self, elem: usize, x: f64, y: f64) -> [f64; 2] {
        match &self.source {
            VelocitySource::Stream { psi_space, psi, scale } => {
                let bary = psi_space.mesh().barycentric(elem, x, y);
                let geom = psi_space.geom(elem);
                let grads = p2_grad_at(bary);
                let mut g = [0.0; 2];
                for (l, &d) in psi_space.elem_dofs(elem).iter().enumerate() {
                    let gp = geom.phys_grad(grads[l]);
                    g[0] += gp[0] * psi[d];
                    g[1] += gp[1] * psi[d];
                }
                [-scale * g[1], scale * g[0]]
            }
            VelocitySource::Fields { space, vx, vy } => {
                let vxe = space.eval(vx, x, y).unwrap_or(0.0);
                let vye = space.eval(vy, x, y).unwrap_or(0.0);
                [vxe, vye]
            }
        }
    }

    /// Nodal values on a target space (for export; gradients of the stream
    /// function are one-sided at element boundaries).
    pub fn nodal_on(&self, space: &FnSpace) -> (Vec<f64>, Vec<f64>) {
        match &self.source {
            VelocitySource::Stream { psi_space, psi, scale } => {
                let mut vx = vec![0.0; space.ndof()];
                let mut vy = vec![0.0; space.ndof()];
                for (i, p) in space.dof_coords().iter().enumerate() {
                    if let Some((t, bary)) = psi_space.mesh().locate(p[0], p[1]) {
                        // Gradient of psi_h restricted to that element.
                        let geom = psi_space.geom(t);
                        let mut g = [0.0; 2];
                        let grads = p2_grad_at(bary);
                        for (l, &d) in psi_space.elem_dofs(t).iter().enumerate() {
                            let gp = geom.phys_grad(grads[l]);
                            g[0] += gp[0] * psi[d];
                            g[1] += gp[1] * psi[d];
                        }
                        vx[i] = -scale * g[1];
                        vy[i] = scale * g[0];
                    }
                }
                (vx, vy)
            }
            VelocitySource::Fields { space: vsp, vx, vy } => {
                let out_x = space
                    .dof_coords()
                    .iter()
                    .map(|p| vsp.eval(vx, p[0], p[1]).unwrap_or(0.0))
                    .collect();
                let out_y = space
                    .dof_coords()
                    .iter()
                    .map(|p| vsp.eval(vy, p[0], p[1]).unwrap_or(0.0))
                    .collect();
                (out_x, out_y)
            }
        }
    }
}

fn p2_grad_at(bary: [f64; 3]) -> Vec<[f64; 2]> {
    let [l0, l1, l2] = bary;
    let d0 = 4.0 * l0 - 1.0;
    let d1 = 4.0 * l1 - 1.0;
    let d2 = 4.0 * l2 - 1.0;
    vec![
        [-d0, -d0],
        [d1, 0.0],
        [0.0, d2],
        [4.0 * l2, 4.0 * l1],
        [-4.0 * l2, 4.0 * (l0 - l2)],
        [4.0 * (l0 - l1), -4.0 * l1],
    ]
}

#[derive(Debug, Clone, Copy)]
pub struct AdvDiffSetup {
    pub kappa: f64,
    pub t_final: f64,
    pub steps: usize,
    /// Observations live at time-grid nodes in `(obs_start, t_final]`,
    /// spaced `obs_every` apart.
    pub obs_start: f64,
    pub obs_every: f64,
    pub gls: bool,
    pub state_degree: u8,
    pub param_degree: u8,
}

impl Default for AdvDiffSetup {
    fn default() -> Self {
        AdvDiffSetup {
            kappa: 1e-3,
            t_final: 4.0,
            steps: 40,
            obs_start: 1.0,
            obs_every: 0.2,
            gls: true,
            state_degree: 1,
            param_degree: 1,
        }
    }
}

pub struct AdvDiffProblem {
    state_space: Arc<FnSpace>,
    param_space: Arc<FnSpace>,
    mass: SparseSym,
    step_lu: LuFactors,
    dt: f64,
    steps: usize,
    obs_nodes: Vec<usize>,
    obs_op: Csr,
    /// One data vector per observation node.
    data: Vec<Vec<f64>>,
    sigma: f64,
    /// Parameter-to-state interpolation; None when the spaces coincide.
    interp: Option<Csr>,
    setup: AdvDiffSetup,
}

pub struct AdvDiffAdjoint {
    pub series: TimeSeriesField,
    misfit_grad: Vec<f64>,
}

impl AdvDiffProblem {
    pub fn new(
        mesh: Arc<Mesh>,
        setup: AdvDiffSetup,
        velocity: &Velocity,
        obs_points: &[[f64; 2]],
        sigma: f64,
    ) -> Result<Self, ModelError> {
        assert!(setup.kappa > 0.0 && setup.t_final > 0.0 && setup.steps > 0 && sigma > 0.0);
        let state_space = Arc::new(FnSpace::new(Arc::clone(&mesh), setup.state_degree));
        let param_space = if setup.param_degree == setup.state_degree {
            Arc::clone(&state_space)
        } else {
            Arc::new(FnSpace::new(Arc::clone(&mesh), setup.param_degree))
        };
        let dt = setup.t_final / setup.steps as f64;

        // Observation nodes: multiples of obs_every in (obs_start, t_final],
        // snapped onto the time grid.
        let mut obs_nodes = Vec::new();
        let mut j = 1usize;
        loop {
            let t = setup.obs_start + j as f64 * setup.obs_every;
            if t > setup.t_final + 1e-9 {
                break;
            }
            let node = (t / dt).round() as usize;
            if (node as f64 * dt - t).abs() > 1e-9 {
                return Err(ModelError::Other(format!(
                    "observation time {t} does not lie on the time grid (dt = {dt})"
                )));
            }
            obs_nodes.push(node);
            j += 1;
        }
        if obs_nodes.is_empty() {
            return Err(ModelError::Other(
                "observation window contains no time samples".into(),
            ));
        }

        let m = mass(&state_space);
        let nq = state_space.basis().nq * state_space.nelems();
        let k = weighted_stiffness(&state_space, &vec![1.0; nq])?;
        let v_qp = velocity.at_quadrature(&state_space);
        let n_adv = advection(&state_space, &v_qp);
        let mut step = m.csr().scaled(1.0 / dt).add(&k.csr().scaled(setup.kappa));
        step = step.add(&n_adv);
        if setup.gls {
            let s = streamline_diffusion(&state_space, &v_qp, setup.kappa);
            step = step.add(s.csr());
        }
        let step_lu = crate::linalg::dense_lu(&step.to_dense())?;

        let obs_op = point_observation(&state_space, obs_points)?;
        let interp = if Arc::ptr_eq(&state_space, &param_space) {
            None
        } else {
            Some(state_space.interpolation_from(&param_space)?)
        };
        let data = vec![vec![0.0; obs_op.nrows()]; obs_nodes.len()];
        Ok(AdvDiffProblem {
            state_space,
            param_space,
            mass: m,
            step_lu,
            dt,
            steps: setup.steps,
            obs_nodes,
            obs_op,
            data,
            sigma,
            interp,
            setup,
        })
    }

    pub fn state_space(&self) -> &Arc<FnSpace> {
        &self.state_space
    }

    pub fn param_space(&self) -> &Arc<FnSpace> {
        &self.param_space
    }

    pub fn setup(&self) -> &AdvDiffSetup {
        &self.setup
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn obs_nodes(&self) -> &[usize] {
        &self.obs_nodes
    }

    pub fn obs_count(&self) -> usize {
        self.obs_nodes.len() * self.obs_op.nrows()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn observations(&self) -> ObsData {
        ObsData {
            op: self.obs_op.clone(),
            data: self.data.concat(),
            sigma: self.sigma,
        }
    }

    fn param_to_state(&self, m: &[f64]) -> Vec<f64> {
        match &self.interp {
            Some(p) => p.matvec(m),
            None => m.to_vec(),
        }
    }

    fn state_to_param(&self, w: &[f64]) -> Vec<f64> {
        match &self.interp {
            Some(p) => p.matvec_transpose(w),
            None => w.to_vec(),
        }
    }

    /// Forward sweep from an initial condition in the parameter space.
    fn sweep_forward(&self, m: &[f64]) -> TimeSeriesField {
        let mut series = Vec::with_capacity(self.steps + 1);
        series.push(self.param_to_state(m));
        for k in 1..=self.steps {
            let rhs = crate::linalg::scaled(1.0 / self.dt, &self.mass.matvec(&series[k - 1]));
            series.push(self.step_lu.solve(&rhs));
        }
        TimeSeriesField(series)
    }

    /// Observation stack `F m` (one vector per observation node).
    pub fn apply_f(&self, m: &[f64]) -> Vec<Vec<f64>> {
        let series = self.sweep_forward(m);
        self.obs_nodes
            .iter()
            .map(|&k| self.obs_op.matvec(series.node(k)))
            .collect()
    }

    /// Adjoint sweep: exact transpose of the forward map against the given
    /// per-node observation weights. Returns the multiplier series (index k
    /// holding the multiplier of step k; index 0 holds the continuous-
    /// convention initial-time adjoint `-p_1/dt`) and `F* w`.
    pub fn apply_f_star(&self, weights: &[Vec<f64>]) -> (TimeSeriesField, Vec<f64>) {
        assert_eq!(weights.len(), self.obs_nodes.len());
        let n = self.state_space.ndof();
        let mut series = vec![vec![0.0; n]; self.steps + 1];
        let mut carry = vec![0.0; n]; // M/dt * p^{k+1}
        for k in (1..=self.steps).rev() {
            let mut rhs = carry.clone();
            if let Some(pos) = self.obs_nodes.iter().position(|&node| node == k) {
                let bt = self.obs_op.matvec_transpose(&weights[pos]);
                crate::linalg::axpy(1.0, &bt, &mut rhs);
            }
            let p = self.step_lu.solve_transpose(&rhs);
            carry = crate::linalg::scaled(1.0 / self.dt, &self.mass.matvec(&p));
            series[k] = p;
        }
        // carry now holds M/dt * p^1 = F* w in the state space.
        let fstar = self.state_to_param(&carry);
        series[0] = crate::linalg::scaled(-1.0 / self.dt, &series[1]);
        (TimeSeriesField(series), fstar)
    }

    /// Misfit Hessian action `sigma^{-2} F* F mhat` (independent of the
    /// parameter point; the model is linear).
    pub fn misfit_hessian(&self, mhat: &[f64]) -> Vec<f64> {
        let obs = self.apply_f(mhat);
        let s2 = self.sigma * self.sigma;
        let weights: Vec<Vec<f64>> = obs
            .iter()
            .map(|w| w.iter().map(|v| v / s2).collect())
            .collect();
        self.apply_f_star(&weights).1
    }

    /// Full gradient `R (m - m_pr) - M p(.,0)` assembled from an adjoint
    /// sweep (the misfit part) and the prior.
    pub fn gradient_field(
        &self,
        adjoint: &AdvDiffAdjoint,
        m: &[f64],
        prior: &BiLaplacianPrior,
    ) -> Result<Vec<f64>, ModelError> {
        let (_, rg) = prior.cost_grad(m).map(|(c, g)| (c, g))?;
        Ok(crate::linalg::add(&rg, &adjoint.misfit_grad))
    }

    /// Install synthetic observations `F m_true + sigma xi`.
    pub fn synthesize_data(&mut self, m_true: &[f64], noise_seed: u64) -> Vec<Vec<f64>> {
        let clean = self.apply_f(m_true);
        for (j, node_obs) in clean.iter().enumerate() {
            let xi = crate::rng::gaussian_vector(noise_seed, j as u64, node_obs.len());
            self.data[j] = node_obs
                .iter()
                .zip(&xi)
                .map(|(c, x)| c + self.sigma * x)
                .collect();
        }
        clean
    }

    pub fn set_window_data(&mut self, data: Vec<Vec<f64>>) {
        assert_eq!(data.len(), self.obs_nodes.len());
        self.data = data;
    }

    /// MAP point of the linear problem by CG on the normal operator
    /// `H = sigma^{-2} F* F + R`, preconditioned with `R^{-1}`, stopped at
    /// `||gradient|| <= tol_rel * ||gradient at m_pr... at zero||`.
    pub fn solve_map_cg(
        &self,
        prior: &BiLaplacianPrior,
        tol_rel: f64,
        max_iter: usize,
    ) -> Result<(Vec<f64>, usize), ModelError> {
        let n = self.param_space.ndof();
        let s2 = self.sigma * self.sigma;
        // rhs = sigma^{-2} F* d + R m_pr
        let weights: Vec<Vec<f64>> = self
            .data
            .iter()
            .map(|d| d.iter().map(|v| v / s2).collect())
            .collect();
        let mut rhs = self.apply_f_star(&weights).1;
        let rmean = prior
            .apply_r(prior.mean())
            .map_err(|e| ModelError::Other(format!("prior apply failed: {e}")))?;
        crate::linalg::axpy(1.0, &rmean, &mut rhs);

        let hop = FnOp::new(n, true, |x: &[f64], y: &mut [f64]| {
            let mut out = self.misfit_hessian(x);
            let rx = prior.apply_r(x).expect("prior apply failed");
            crate::linalg::axpy(1.0, &rx, &mut out);
            y.copy_from_slice(&out);
        });
        let precond = FnOp::new(n, true, |x: &[f64], y: &mut [f64]| {
            y.copy_from_slice(&prior.solve_r(x).expect("prior solve failed"));
        });
        let out = cg_solve(
            &hop,
            &rhs,
            Some(&precond),
            CgOptions { rtol: tol_rel, max_iter, monitor_curvature: false },
        )
        .map_err(ModelError::Linalg)?;
        if out.reason != crate::linalg::CgReason::Converged {
            return Err(ModelError::Linalg(crate::linalg::LinalgError::NotConverged {
                residual: out.residual,
                iters: out.iters,
            }));
        }
        Ok((out.x, out.iters))
    }
}

impl InverseModel for AdvDiffProblem {
    type State = TimeSeriesField;
    type Adjoint = AdvDiffAdjoint;
    type Increment = TimeSeriesField;

    fn param_dim(&self) -> usize {
        self.param_space.ndof()
    }

    fn solve_forward(&self, m: &[f64]) -> Result<TimeSeriesField, ModelError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Other("parameter contains non-finite entries".into()));
        }
        Ok(self.sweep_forward(m))
    }

    fn misfit_cost(&self, state: &TimeSeriesField) -> f64 {
        let s2 = self.sigma * self.sigma;
        let mut total = 0.0;
        for (j, &node) in self.obs_nodes.iter().enumerate() {
            let y = self.obs_op.matvec(state.node(node));
            let r = crate::linalg::sub(&y, &self.data[j]);
            total += 0.5 * crate::linalg::dot(&r, &r) / s2;
        }
        total
    }

    fn solve_adjoint(
        &self,
        state: &TimeSeriesField,
        _m: &[f64],
    ) -> Result<AdvDiffAdjoint, ModelError> {
        let s2 = self.sigma * self.sigma;
        let weights: Vec<Vec<f64>> = self
            .obs_nodes
            .iter()
            .enumerate()
            .map(|(j, &node)| {
                let y = self.obs_op.matvec(state.node(node));
                y.iter()
                    .zip(&self.data[j])
                    .map(|(a, d)| (a - d) / s2)
                    .collect()
            })
            .collect();
        let (series, misfit_grad) = self.apply_f_star(&weights);
        Ok(AdvDiffAdjoint { series, misfit_grad })
    }

    fn misfit_gradient(
        &self,
        _state: &TimeSeriesField,
        adjoint: &AdvDiffAdjoint,
        _m: &[f64],
    ) -> Vec<f64> {
        adjoint.misfit_grad.clone()
    }

    fn solve_incremental_forward(
        &self,
        _state: &TimeSeriesField,
        _m: &[f64],
        mhat: &[f64],
    ) -> Result<TimeSeriesField, ModelError> {
        Ok(self.sweep_forward(mhat))
    }

    fn solve_incremental_adjoint(
        &self,
        _state: &TimeSeriesField,
        _adjoint: &AdvDiffAdjoint,
        _m: &[f64],
        _mhat: &[f64],
        inc_fwd: &TimeSeriesField,
        _kind: MisfitKind,
    ) -> Result<TimeSeriesField, ModelError> {
        let s2 = self.sigma * self.sigma;
        let weights: Vec<Vec<f64>> = self
            .obs_nodes
            .iter()
            .map(|&node| {
                self.obs_op
                    .matvec(inc_fwd.node(node))
                    .iter()
                    .map(|v| v / s2)
                    .collect()
            })
            .collect();
        Ok(self.apply_f_star(&weights).0)
    }

    fn hessian_terms(
        &self,
        _state: &TimeSeriesField,
        _adjoint: &AdvDiffAdjoint,
        _m: &[f64],
        _mhat: &[f64],
        _inc_fwd: &TimeSeriesField,
        inc_adj: &TimeSeriesField,
        _kind: MisfitKind,
    ) -> Vec<f64> {
        // The linear model has no second-derivative PDE terms; the action is
        // M/dt times the first multiplier, mapped back to the parameter
        // space (matching the closing step of the adjoint sweep).
        let carry = crate::linalg::scaled(1.0 / self.dt, &self.mass.matvec(inc_adj.node(1)));
        self.state_to_param(&carry)
    }
}


/// Desk-scale experiment configuration. Defaults follow the transport
/// benchmark: unit square with two rectangular buildings, diffusivity 1e-3,
/// final time 4 with 40 implicit-Euler steps, 80 sensors sampled every 0.2
/// time units after t = 1, noise variance 2.45e-7, rank-50 eigensolves with
/// 10 extra columns, and the window comparison over (1,4], (2,4], (3,4].
pub struct AdvDiffExperimentConfig {
    pub nx: usize,
    pub ny: usize,
    pub holes: Vec<[f64; 4]>,
    pub setup: AdvDiffSetup,
    pub prior: crate::prior::PriorParams,
    pub n_sensors: usize,
    /// Noise variance (sigma^2).
    pub noise_var: f64,
    pub truth: Box<dyn Fn(f64, f64) -> f64 + Sync + Send>,
    pub map_tol: f64,
    pub map_max_iter: usize,
    pub ghep_r: usize,
    pub ghep_l: usize,
    pub lambda_cut: f64,
    /// Observation windows for the spectrum comparison; the first window's
    /// eigendecomposition drives the posterior variance and samples.
    pub windows: Vec<[f64; 2]>,
    pub prior_variance_rank: usize,
    pub sample_count: usize,
    pub seeds: crate::poisson::ExperimentSeeds,
    pub threads: usize,
    pub stages: crate::poisson::StagePlan,
}

/// Default initial condition: a Gaussian bump upstream of the first
/// building.
pub fn default_truth(x: f64, y: f64) -> f64 {
    (-100.0 * ((x - 0.35).powi(2) + (y - 0.7).powi(2))).exp()
}

impl Default for AdvDiffExperimentConfig {
    fn default() -> Self {
        AdvDiffExperimentConfig {
            nx: 24,
            ny: 24,
            holes: vec![
                [0.25, 0.125, 0.5, 0.375],
                [0.625, 0.625, 0.75, 0.875],
            ],
            setup: AdvDiffSetup::default(),
            prior: crate::prior::PriorParams::isotropic(1.0, 8.0),
            n_sensors: 80,
            noise_var: 2.45e-7,
            truth: Box::new(default_truth),
            map_tol: 1e-6,
            map_max_iter: 500,
            ghep_r: 50,
            ghep_l: 10,
            lambda_cut: crate::posterior::DEFAULT_LAMBDA_CUT,
            windows: vec![[1.0, 4.0], [2.0, 4.0], [3.0, 4.0]],
            prior_variance_rank: 300,
            sample_count: 3,
            seeds: crate::poisson::ExperimentSeeds::default(),
            threads: 1,
            stages: crate::poisson::StagePlan::default(),
        }
    }
}

pub struct AdvDiffRunOutput {
    pub problem: AdvDiffProblem,
    pub prior: crate::prior::BiLaplacianPrior,
    pub sensors: Vec<[f64; 2]>,
    pub m_true: Vec<f64>,
    pub m_map: Vec<f64>,
    pub map_cg_iters: usize,
    /// Raw spectra per requested window, in the order of `windows`.
    pub window_spectra: Vec<Vec<f64>>,
    pub kept_rank: usize,
    pub prior_variance: Vec<f64>,
    pub posterior_variance: Vec<f64>,
    pub prior_samples: Vec<Vec<f64>>,
    pub posterior_samples: Vec<Vec<f64>>,
    pub timings: Vec<(String, f64)>,
}

/// Uniform points over the meshed domain (holes excluded) drawn by
/// rejection from the seeded stream.
pub fn sensors_in_mesh(seed: u64, count: usize, mesh: &Mesh) -> Vec<[f64; 2]> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let p = [rng.gen::<f64>(), rng.gen::<f64>()];
        if mesh.locate(p[0], p[1]).is_some() {
            out.push(p);
        }
    }
    out
}

/// Run the transport experiment: data synthesis, MAP by preconditioned CG on
/// the normal operator, window spectra, variance fields, and samples.
pub fn run_experiment(
    cfg: AdvDiffExperimentConfig,
) -> Result<AdvDiffRunOutput, crate::poisson::ExperimentError> {
    use crate::poisson::{stage_timed as stage, ExperimentError};
    use crate::posterior::{LaplacePosterior, PosteriorConfig};
    let mut timings = Vec::new();

    let mesh = stage("mesh", &mut timings, || {
        crate::fem::build_unit_square_mesh(cfg.nx, cfg.ny, &cfg.holes)
    })?;
    let mesh = Arc::new(mesh);
    let velocity = Velocity::default_stream(Arc::clone(&mesh));
    let sensors = sensors_in_mesh(cfg.seeds.obs_points, cfg.n_sensors, &mesh);
    let sigma = cfg.noise_var.sqrt();

    let mut problem = stage("setup", &mut timings, || {
        AdvDiffProblem::new(Arc::clone(&mesh), cfg.setup, &velocity, &sensors, sigma)
    })?;
    let m_true = problem.param_space().interpolate(&*cfg.truth);
    stage("data", &mut timings, || {
        problem.synthesize_data(&m_true, cfg.seeds.noise);
        Ok::<_, ModelError>(())
    })?;

    let prior = stage("prior", &mut timings, || {
        crate::prior::BiLaplacianPrior::zero_mean(Arc::clone(problem.param_space()), cfg.prior)
    })?;

    cfg.stages.validate().map_err(|msg| ExperimentError::Stage {
        stage: "plan",
        source: Box::new(ModelError::Other(msg)),
    })?;

    let (m_map, map_cg_iters) = if cfg.stages.map {
        stage("map", &mut timings, || {
            problem.solve_map_cg(&prior, cfg.map_tol, cfg.map_max_iter)
        })?
    } else {
        (prior.mean().to_vec(), 0)
    };

    // Spectra per observation window; the misfit Hessian is linear in the
    // data, so window problems carry zero data. Problems are built first so
    // the posteriors can borrow them.
    if cfg.stages.eigens && cfg.windows.is_empty() {
        return Err(ExperimentError::Stage {
            stage: "eigens",
            source: Box::new(ModelError::Other("no observation windows requested".into())),
        });
    }
    let windows: &[[f64; 2]] = if cfg.stages.eigens { &cfg.windows } else { &[] };
    let mut window_problems: Vec<AdvDiffProblem> = Vec::new();
    for w in windows {
        let [t0, t1] = *w;
        let wp = stage("eigens-setup", &mut timings, || {
            let mut s = cfg.setup;
            s.obs_start = t0;
            s.t_final = t1.min(cfg.setup.t_final);
            s.steps = ((s.t_final / cfg.setup.t_final) * cfg.setup.steps as f64).round() as usize;
            AdvDiffProblem::new(Arc::clone(&mesh), s, &velocity, &sensors, sigma)
        })?;
        window_problems.push(wp);
    }
    let mut window_spectra = Vec::new();
    let mut full_posterior: Option<LaplacePosterior<AdvDiffProblem>> = None;
    for (w_idx, wp) in window_problems.iter().enumerate() {
        let mut ghep =
            crate::randeig::GhepConfig::new(cfg.ghep_r, cfg.ghep_l, cfg.seeds.eigensolver);
        ghep.threads = cfg.threads;
        let mut pcfg = PosteriorConfig::new(ghep);
        pcfg.lambda_cut = cfg.lambda_cut;
        pcfg.misfit = crate::model::MisfitKind::Full;
        let post = stage("eigens", &mut timings, || {
            LaplacePosterior::build(wp, &prior, &m_map, &pcfg)
        })?;
        window_spectra.push(post.eigenvalues_raw().to_vec());
        if w_idx == 0 {
            full_posterior = Some(post);
        }
    }
    let posterior = full_posterior;
    let kept_rank = posterior.as_ref().map(|p| p.rank()).unwrap_or(0);

    let (prior_variance, posterior_variance) = if cfg.stages.variance {
        let pv = stage("variance", &mut timings, || {
            prior.pointwise_variance_randomized(
                cfg.prior_variance_rank.min(prior.n()),
                cfg.seeds.variance,
            )
        })?;
        let qv = match &posterior {
            Some(p) => crate::linalg::sub(&pv, &p.correction_field()),
            None => Vec::new(),
        };
        (pv, qv)
    } else {
        (Vec::new(), Vec::new())
    };

    let (prior_samples, posterior_samples) = stage("samples", &mut timings, || {
        let mut ps = Vec::new();
        let mut qs = Vec::new();
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
    drop(posterior);
    drop(window_problems);

    Ok(AdvDiffRunOutput {
        problem,
        prior,
        sensors,
        m_true,
        m_map,
        map_cg_iters,
        window_spectra,
        kept_rank,
        prior_variance,
        posterior_variance,
        prior_samples,
        posterior_samples,
        timings,
    })
}

impl AdvDiffRunOutput {
    /// Write every artifact of the run into `dir`; returns the paths in a
    /// deterministic order.
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

        let vel_path = dir.join("velocity.txt");
        let vel = Velocity::default_stream(param_space.mesh_arc());
        let (vx, vy) = vel.nodal_on(param_space);
        crate::fem::write_vector_field(&vel_path, param_space, &vx, &vy)?;
        paths.push(vel_path);

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

        for (k, spectrum) in self.window_spectra.iter().enumerate() {
            let p = dir.join(format!("spectrum_window_{k}.csv"));
            let mut f = std::io::BufWriter::new(std::fs::File::create(&p)?);
            writeln!(f, "index,lambda")?;
            for (i, l) in spectrum.iter().enumerate() {
                writeln!(f, "{i},{l:.17e}")?;
            }
            paths.push(p);
        }

        let sensors_path = dir.join("sensors.csv");
        {
            let mut f = std::io::BufWriter::new(std::fs::File::create(&sensors_path)?);
            writeln!(f, "x,y")?;
            for p in &self.sensors {
                writeln!(f, "{:.17e},{:.17e}", p[0], p[1])?;
            }
        }
        paths.push(sensors_path);

        let summary_path = dir.join("summary.txt");
        {
            let mut f = std::io::BufWriter::new(std::fs::File::create(&summary_path)?);
            writeln!(f, "problem: advection-diffusion initial-condition inversion")?;
            writeln!(f, "parameter dofs: {}", param_space.ndof())?;
            writeln!(f, "time steps: {} (dt = {:.6})", self.problem.setup().steps, self.problem.dt())?;
            writeln!(f, "sensors: {} at {} observation times", self.sensors.len(), self.problem.obs_nodes().len())?;
            writeln!(f, "map: {} preconditioned CG iterations", self.map_cg_iters)?;
            writeln!(
                f,
                "map solve counts: {} forward sweeps and {} adjoint sweeps of {} steps",
                self.map_cg_iters + 1,
                self.map_cg_iters + 1,
                self.problem.setup().steps
            )?;
            writeln!(f, "eigensolve: kept {} modes; windows: {}", self.kept_rank, self.window_spectra.len())?;
            writeln!(f, "stage timings (s):")?;
            for (name, t) in &self.timings {
                writeln!(f, "  {name}: {t:.3}")?;
            }
        }
        paths.push(summary_path);
        Ok(paths)
    }
}
