//! Sparse assembly of mass, anisotropic-diffusion, advection and boundary
//! forms, plus symmetric Dirichlet elimination.

use crate::linalg::{cg_solve, CgOptions, Csr, CsrBuilder, SgsPrecond, SparseSym};

use super::quad::EdgeRule;
use super::{BoundaryTag, FemError, FnSpace};

/// Symmetric 2x2 diffusion tensor.
#[derive(Debug, Clone, Copy)]
pub struct AnisoTensor {
    pub a00: f64,
    pub a01: f64,
    pub a11: f64,
}

impl AnisoTensor {
    pub fn identity() -> Self {
        AnisoTensor { a00: 1.0, a01: 0.0, a11: 1.0 }
    }

    /// Direction-weighted tensor
    /// `[[t1 sin^2 a, (t1-t2) sin a cos a], [(t1-t2) sin a cos a, t2 cos^2 a]]`.
    /// Not positive definite for every parameter choice; check `is_spd`.
    pub fn from_angles(alpha: f64, theta1: f64, theta2: f64) -> Self {
        let (s, c) = alpha.sin_cos();
        AnisoTensor {
            a00: theta1 * s * s,
            a01: (theta1 - theta2) * s * c,
            a11: theta2 * c * c,
        }
    }

    /// Rotation of `diag(theta1, theta2)` by angle `alpha`; SPD whenever both
    /// weights are positive.
    pub fn rotated_diag(alpha: f64, theta1: f64, theta2: f64) -> Self {
        let (s, c) = alpha.sin_cos();
        AnisoTensor {
            a00: theta1 * c * c + theta2 * s * s,
            a01: (theta1 - theta2) * s * c,
            a11: theta1 * s * s + theta2 * c * c,
        }
    }

    pub fn is_spd(&self) -> bool {
        self.a00 > 0.0 && self.a00 * self.a11 - self.a01 * self.a01 > 0.0
    }

    /// Symmetric square root (via the 2x2 eigendecomposition).
    pub fn sqrt(&self) -> Result<AnisoTensor, FemError> {
        let tr = self.a00 + self.a11;
        let det = self.a00 * self.a11 - self.a01 * self.a01;
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        let (l1, l2) = (tr / 2.0 + disc, tr / 2.0 - disc);
        if l2 < -1e-14 * l1.abs().max(1.0) || l1 <= 0.0 {
            return Err(FemError::TensorNotSpd);
        }
        let (s1, s2) = (l1.max(0.0).sqrt(), l2.max(0.0).sqrt());
        // sqrt(A) = (A + sqrt(det) I) / sqrt(tr + 2 sqrt(det))
        let sd = s1 * s2;
        let denom = (tr + 2.0 * sd).sqrt();
        Ok(AnisoTensor {
            a00: (self.a00 + sd) / denom,
            a01: self.a01 / denom,
            a11: (self.a11 + sd) / denom,
        })
    }

    #[inline]
    pub fn apply(&self, g: [f64; 2]) -> [f64; 2] {
        [self.a00 * g[0] + self.a01 * g[1], self.a01 * g[0] + self.a11 * g[1]]
    }
}

/// Mass matrix `M_ij = integral(phi_i phi_j)`.
pub fn mass(space: &FnSpace) -> SparseSym {
    let nloc = space.nloc();
    let basis = space.basis();
    let rule = space.rule();
    let mut b = CsrBuilder::new(space.ndof(), space.ndof());
    for e in 0..space.nelems() {
        let dofs = space.elem_dofs(e);
        let area = space.geom(e).area;
        for q in 0..basis.nq {
            let w = rule.weights[q] * area;
            for i in 0..nloc {
                let vi = basis.value(q, i) * w;
                for j in 0..nloc {
                    b.add(dofs[i], dofs[j], vi * basis.value(q, j));
                }
            }
        }
    }
    SparseSym::from_csr(b.build())
}

/// Boundary mass matrix over all boundary edges (outer and hole).
pub fn boundary_mass(space: &FnSpace) -> SparseSym {
    let rule = EdgeRule::for_degree(space.degree());
    let mut b = CsrBuilder::new(space.ndof(), space.ndof());
    for edge in space.mesh().boundary_edges() {
        let [va, vb] = edge.vertices;
        let (pa, pb) = (space.mesh().vertex(va), space.mesh().vertex(vb));
        let len = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
        let dofs = space.edge_dofs_of(va, vb);
        for (&t, &w) in rule.points.iter().zip(&rule.weights) {
            let vals = space.edge_basis(t);
            let wl = w * len;
            for i in 0..dofs.len() {
                for j in 0..dofs.len() {
                    b.add(dofs[i], dofs[j], wl * vals[i] * vals[j]);
                }
            }
        }
    }
    SparseSym::from_csr(b.build())
}

/// `K = gamma * stiffness(Theta) + delta * mass + robin_beta * boundary_mass`.
///
/// The tensor must be SPD whenever `gamma > 0`.
pub fn elliptic(
    space: &FnSpace,
    gamma: f64,
    theta: AnisoTensor,
    delta: f64,
    robin_beta: f64,
) -> Result<SparseSym, FemError> {
    assert!(gamma >= 0.0 && delta >= 0.0 && robin_beta >= 0.0);
    if gamma > 0.0 && !theta.is_spd() {
        return Err(FemError::TensorNotSpd);
    }
    let nloc = space.nloc();
    let basis = space.basis();
    let rule = space.rule();
    let mut b = CsrBuilder::new(space.ndof(), space.ndof());
    for e in 0..space.nelems() {
        let dofs = space.elem_dofs(e);
        let geom = space.geom(e);
        for q in 0..basis.nq {
            let w = rule.weights[q] * geom.area;
            let grads: Vec<[f64; 2]> =
                (0..nloc).map(|l| geom.phys_grad(basis.grad_ref(q, l))).collect();
            for i in 0..nloc {
                let tg = theta.apply(grads[i]);
                let vi = basis.value(q, i);
                for j in 0..nloc {
                    let stiff = gamma * (tg[0] * grads[j][0] + tg[1] * grads[j][1]);
                    let ms = delta * vi * basis.value(q, j);
                    b.add(dofs[i], dofs[j], w * (stiff + ms));
                }
            }
        }
    }
    let mut k = SparseSym::from_csr(b.build());
    if robin_beta > 0.0 {
        k = k.add(&boundary_mass(space).scaled(robin_beta));
    }
    Ok(k)
}

/// Stiffness matrix weighted by a coefficient given at the space's own
/// quadrature points (element-major layout `w[e * nq + q]`). The weight must
/// be nonnegative everywhere; callers evaluating `exp(m)` satisfy this by
/// construction.
pub fn weighted_stiffness(space: &FnSpace, w_qp: &[f64]) -> Result<SparseSym, FemError> {
    let nloc = space.nloc();
    let basis = space.basis();
    let rule = space.rule();
    assert_eq!(w_qp.len(), space.nelems() * basis.nq);
    let mut b = CsrBuilder::new(space.ndof(), space.ndof());
    for e in 0..space.nelems() {
        let dofs = space.elem_dofs(e);
        let geom = space.geom(e);
        for q in 0..basis.nq {
            let wq = w_qp[e * basis.nq + q];
            if wq < 0.0 {
                return Err(FemError::NegativeWeight { elem: e, qp: q, value: wq });
            }
            let w = rule.weights[q] * geom.area * wq;
            let grads: Vec<[f64; 2]> =
                (0..nloc).map(|l| geom.phys_grad(basis.grad_ref(q, l))).collect();
            for i in 0..nloc {
                for j in 0..nloc {
                    b.add(
                        dofs[i],
                        dofs[j],
                        w * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]),
                    );
                }
            }
        }
    }
    Ok(SparseSym::from_csr(b.build()))
}

/// Advection operator `N_ij = integral(phi_i v . grad(phi_j))` with the
/// velocity given at the space's quadrature points (element-major layout
/// `v_qp[e * nq + q]`). Constants are in the kernel pointwise. When the
/// velocity is elementwise polynomial, divergence-free and has continuous
/// normal components across edges (a discrete stream-function curl), the
/// column sums also vanish identically, so implicit transport steps conserve
/// mass exactly.
pub fn advection(space: &FnSpace, v_qp: &[[f64; 2]]) -> Csr {
    let nloc = space.nloc();
    let basis = space.basis();
    let rule = space.rule();
    assert_eq!(v_qp.len(), space.nelems() * basis.nq);
    let mut b = CsrBuilder::new(space.ndof(), space.ndof());
    for e in 0..space.nelems() {
        let dofs = space.elem_dofs(e);
        let geom = space.geom(e);
        for q in 0..basis.nq {
            let w = rule.weights[q] * geom.area;
            let v = v_qp[e * basis.nq + q];
            for j in 0..nloc {
                let gj = geom.phys_grad(basis.grad_ref(q, j));
                let vdotg = v[0] * gj[0] + v[1] * gj[1];
                for i in 0..nloc {
                    b.add(dofs[i], dofs[j], w * basis.value(q, i) * vdotg);
                }
            }
        }
    }
    b.build()
}

/// Streamline-diffusion (GLS) stabilization of the convective term:
/// `S_ij = sum_e tau_e integral_e (v . grad phi_i)(v . grad phi_j)` with
/// `tau_e = 1 / (4 kappa / h_e^2 + 2 |v|_e / h_e)`.
pub fn streamline_diffusion(space: &FnSpace, v_qp: &[[f64; 2]], kappa: f64) -> SparseSym {
    let nloc = space.nloc();
    let basis = space.basis();
    let rule = space.rule();
    assert_eq!(v_qp.len(), space.nelems() * basis.nq);
    let mut b = CsrBuilder::new(space.ndof(), space.ndof());
    for e in 0..space.nelems() {
        let dofs = space.elem_dofs(e);
        let geom = space.geom(e);
        let coords = space.mesh().tri_coords(e);
        let h = (0..3)
            .map(|k| {
                let (a, c) = (coords[k], coords[(k + 1) % 3]);
                ((c[0] - a[0]).powi(2) + (c[1] - a[1]).powi(2)).sqrt()
            })
            .fold(0.0, f64::max);
        let vmax = (0..basis.nq)
            .map(|q| {
                let v = v_qp[e * basis.nq + q];
                (v[0] * v[0] + v[1] * v[1]).sqrt()
            })
            .fold(0.0, f64::max);
        let tau = 1.0 / (4.0 * kappa / (h * h) + 2.0 * vmax / h);
        for q in 0..basis.nq {
            let w = rule.weights[q] * geom.area * tau;
            let v = v_qp[e * basis.nq + q];
            let vg: Vec<f64> = (0..nloc)
                .map(|l| {
                    let g = geom.phys_grad(basis.grad_ref(q, l));
                    v[0] * g[0] + v[1] * g[1]
                })
                .collect();
            for i in 0..nloc {
                for j in 0..nloc {
                    b.add(dofs[i], dofs[j], w * vg[i] * vg[j]);
                }
            }
        }
    }
    SparseSym::from_csr(b.build())
}

/// Load vector `b_i = integral(f phi_i)`.
pub fn load_vector(space: &FnSpace, f: &dyn Fn(f64, f64) -> f64) -> Vec<f64> {
    let basis = space.basis();
    let rule = space.rule();
    let mut out = vec![0.0; space.ndof()];
    for e in 0..space.nelems() {
        let dofs = space.elem_dofs(e);
        let geom = space.geom(e);
        for q in 0..basis.nq {
            let p = geom.map_point(rule.points[q]);
            let w = rule.weights[q] * geom.area * f(p[0], p[1]);
            for (l, &d) in dofs.iter().enumerate() {
                out[d] += w * basis.value(q, l);
            }
        }
    }
    out
}

/// Boundary load `b_i = integral_{tagged edges}(h phi_i)`.
pub fn neumann_load(
    space: &FnSpace,
    tags: &[BoundaryTag],
    h: &dyn Fn(f64, f64) -> f64,
) -> Vec<f64> {
    let rule = EdgeRule::for_degree(space.degree());
    let mut out = vec![0.0; space.ndof()];
    for edge in space.mesh().boundary_edges() {
        if !tags.contains(&edge.tag) {
            continue;
        }
        let [va, vb] = edge.vertices;
        let (pa, pb) = (space.mesh().vertex(va), space.mesh().vertex(vb));
        let len = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
        let dofs = space.edge_dofs_of(va, vb);
        for (&t, &w) in rule.points.iter().zip(&rule.weights) {
            let x = pa[0] + t * (pb[0] - pa[0]);
            let y = pa[1] + t * (pb[1] - pa[1]);
            let vals = space.edge_basis(t);
            let c = w * len * h(x, y);
            for (l, &d) in dofs.iter().enumerate() {
                out[d] += c * vals[l];
            }
        }
    }
    out
}

/// Dirichlet constraints: dof indices with prescribed values.
#[derive(Debug, Clone)]
pub struct DirichletBc {
    pub dofs: Vec<usize>,
    pub values: Vec<f64>,
    constrained: Vec<bool>,
}

impl DirichletBc {
    /// Collect the dofs on the tagged parts of the boundary and evaluate the
    /// boundary data there. Errors when a tag matches no boundary edge.
    pub fn from_tags(
        space: &FnSpace,
        specs: &[(BoundaryTag, &dyn Fn(f64, f64) -> f64)],
    ) -> Result<Self, FemError> {
        let mut constrained = vec![false; space.ndof()];
        let mut values = vec![0.0; space.ndof()];
        for (tag, g) in specs {
            let mut seen = false;
            for edge in space.mesh().boundary_edges() {
                if edge.tag != *tag {
                    continue;
                }
                seen = true;
                let [va, vb] = edge.vertices;
                let dofs = space.edge_dofs_of(va, vb);
                for &d in &dofs {
                    let p = space.dof_coords()[d];
                    constrained[d] = true;
                    values[d] = g(p[0], p[1]);
                }
            }
            if !seen {
                return Err(FemError::UnknownBoundaryTag { tag: *tag });
            }
        }
        let dofs: Vec<usize> =
            (0..space.ndof()).filter(|&d| constrained[d]).collect();
        let vals: Vec<f64> = dofs.iter().map(|&d| values[d]).collect();
        Ok(DirichletBc { dofs, values: vals, constrained })
    }

    pub fn none(ndof: usize) -> Self {
        DirichletBc { dofs: Vec::new(), values: Vec::new(), constrained: vec![false; ndof] }
    }

    pub fn is_constrained(&self, d: usize) -> bool {
        self.constrained[d]
    }
}

/// Symmetric elimination: constrained rows and columns become identity, and
/// the right-hand side absorbs the coupling terms. Returns the eliminated
/// matrix together with the modified right-hand side for the given data.
pub fn apply_dirichlet(
    a: &SparseSym,
    rhs: &[f64],
    bc: &DirichletBc,
) -> (SparseSym, Vec<f64>) {
    let sys = ConstrainedSpd::new(a.clone(), bc.clone());
    let b = sys.constrained_rhs(rhs, true);
    (sys.eliminated, b)
}

/// An SPD system with symmetric Dirichlet elimination applied once and
/// reused across solves (the adjoint and incremental problems share the
/// operator with homogeneous data).
pub struct ConstrainedSpd {
    full: SparseSym,
    eliminated: SparseSym,
    bc: DirichletBc,
}

impl ConstrainedSpd {
    pub fn new(a: SparseSym, bc: DirichletBc) -> Self {
        let n = a.n();
        let mut b = CsrBuilder::new(n, n);
        for i in 0..n {
            if bc.constrained[i] {
                b.add(i, i, 1.0);
                continue;
            }
            let (cols, vals) = a.csr().row(i);
            for (c, v) in cols.iter().zip(vals) {
                if !bc.constrained[*c] {
                    b.add(i, *c, *v);
                }
            }
        }
        ConstrainedSpd { full: a, eliminated: SparseSym::from_csr(b.build()), bc }
    }

    pub fn n(&self) -> usize {
        self.full.n()
    }

    pub fn eliminated(&self) -> &SparseSym {
        &self.eliminated
    }

    pub fn full(&self) -> &SparseSym {
        &self.full
    }

    pub fn bc(&self) -> &DirichletBc {
        &self.bc
    }

    /// Right-hand side after elimination. With `inhomogeneous` the stored
    /// boundary values are imposed; otherwise the data is zero (adjoint and
    /// incremental problems).
    pub fn constrained_rhs(&self, rhs: &[f64], inhomogeneous: bool) -> Vec<f64> {
        let n = self.n();
        let mut out = rhs.to_vec();
        if inhomogeneous && !self.bc.dofs.is_empty() {
            let mut g_ext = vec![0.0; n];
            for (&d, &v) in self.bc.dofs.iter().zip(&self.bc.values) {
                g_ext[d] = v;
            }
            let ag = self.full.matvec(&g_ext);
            for i in 0..n {
                out[i] -= ag[i];
            }
        }
        for (&d, &v) in self.bc.dofs.iter().zip(&self.bc.values) {
            out[d] = if inhomogeneous { v } else { 0.0 };
        }
        out
    }

    /// PCG solve with a symmetric Gauss-Seidel preconditioner. Failing to
    /// reach the tolerance within the iteration cap is an error.
    pub fn solve(
        &self,
        rhs: &[f64],
        inhomogeneous: bool,
        rtol: f64,
    ) -> Result<Vec<f64>, FemError> {
        let b = self.constrained_rhs(rhs, inhomogeneous);
        let precond = SgsPrecond::new(&self.eliminated);
        let out = cg_solve(
            &self.eliminated,
            &b,
            Some(&precond),
            CgOptions { rtol, max_iter: 50 * self.n().max(100), monitor_curvature: false },
        )?;
        if out.reason != crate::linalg::CgReason::Converged {
            return Err(FemError::Solver(crate::linalg::LinalgError::NotConverged {
                residual: out.residual,
                iters: out.iters,
            }));
        }
        Ok(out.x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{build_unit_square_mesh, FnSpace, TriRule};
    use std::sync::Arc;

    fn space(nx: usize, ny: usize, degree: u8) -> FnSpace {
        FnSpace::new(Arc::new(build_unit_square_mesh(nx, ny, &[]).unwrap()), degree)
    }

    #[test]
    fn mass_sums_to_area() {
        for degree in [1u8, 2] {
            let sp = space(4, 3, degree);
            let m = mass(&sp);
            let ones = vec![1.0; sp.ndof()];
            let total = crate::linalg::dot(&m.matvec(&ones), &ones);
            assert!((total - 1.0).abs() < 1e-12, "degree {degree}: {total}");
        }
    }

    #[test]
    fn mass_row_sums_are_basis_integrals() {
        let sp = space(3, 3, 2);
        let m = mass(&sp);
        let ones = vec![1.0; sp.ndof()];
        let row_sums = m.matvec(&ones);
        // Row sums must equal integral(phi_i): compare against load_vector
        // of the constant one.
        let ints = load_vector(&sp, &|_, _| 1.0);
        for (a, b) in row_sums.iter().zip(&ints) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn single_triangle_p1_mass_closed_form() {
        let sp = space(1, 1, 1);
        let m = mass(&sp);
        // Element mass for a triangle of area A is (A/12) [[2,1,1],[1,2,1],[1,1,2]].
        // The two triangles of the unit cell share the diagonal; check one
        // off-diagonal and one diagonal entry of the assembled matrix.
        let area = 0.5;
        // Vertex 1 = (1,0) belongs to the lower triangle only.
        assert!((m.get(1, 1) - 2.0 * area / 12.0).abs() < 1e-14);
        // Vertices 1 = (1,0) and 3 = (1,1) share exactly the lower triangle.
        assert!((m.get(1, 3) - area / 12.0).abs() < 1e-14);
        // Vertices 1 = (1,0) and 2 = (0,1) share no triangle.
        assert_eq!(m.get(1, 2), 0.0);
    }

    #[test]
    fn elliptic_reduces_to_mass() {
        let sp = space(4, 4, 1);
        let k = elliptic(&sp, 0.0, AnisoTensor::identity(), 1.0, 0.0).unwrap();
        let m = mass(&sp);
        let d = k.to_dense().frobenius_distance(&m.to_dense());
        assert!(d < 1e-14);
    }

    #[test]
    fn stiffness_kills_constants() {
        let sp = space(4, 4, 1);
        let k = elliptic(&sp, 1.0, AnisoTensor::identity(), 0.0, 0.0).unwrap();
        let ones = vec![1.0; sp.ndof()];
        let r = k.matvec(&ones);
        assert!(crate::linalg::norm2(&r) < 1e-12);
    }

    #[test]
    fn paper_angles_tensor_entries() {
        let t = AnisoTensor::from_angles(std::f64::consts::FRAC_PI_4, 2.0, 0.5);
        assert!((t.a00 - 1.0).abs() < 1e-12);
        assert!((t.a01 - 0.75).abs() < 1e-12);
        assert!((t.a11 - 0.25).abs() < 1e-12);
        assert!(!t.is_spd());
        let r = AnisoTensor::rotated_diag(std::f64::consts::FRAC_PI_4, 2.0, 0.5);
        assert!(r.is_spd());
        assert!((r.a00 - 1.25).abs() < 1e-12 && (r.a01 - 0.75).abs() < 1e-12);
    }

    #[test]
    fn tensor_sqrt_squares_back() {
        let t = AnisoTensor::rotated_diag(0.6, 3.0, 0.4);
        let s = t.sqrt().unwrap();
        let sq = AnisoTensor {
            a00: s.a00 * s.a00 + s.a01 * s.a01,
            a01: s.a01 * (s.a00 + s.a11),
            a11: s.a01 * s.a01 + s.a11 * s.a11,
        };
        assert!((sq.a00 - t.a00).abs() < 1e-13);
        assert!((sq.a01 - t.a01).abs() < 1e-13);
        assert!((sq.a11 - t.a11).abs() < 1e-13);
    }

    #[test]
    fn weighted_stiffness_linearity() {
        let sp = space(3, 3, 1);
        let nq = sp.basis().nq * sp.nelems();
        let plain = weighted_stiffness(&sp, &vec![1.0; nq]).unwrap();
        let doubled = weighted_stiffness(&sp, &vec![2.0; nq]).unwrap();
        let d = doubled.to_dense().frobenius_distance(&plain.scaled(2.0).to_dense());
        assert!(d < 1e-14);
        let k = elliptic(&sp, 1.0, AnisoTensor::identity(), 0.0, 0.0).unwrap();
        assert!(plain.to_dense().frobenius_distance(&k.to_dense()) < 1e-14);
    }

    #[test]
    fn weighted_stiffness_rejects_negative_weight() {
        let sp = space(2, 2, 1);
        let nq = sp.basis().nq * sp.nelems();
        let mut w = vec![1.0; nq];
        w[3] = -0.5;
        assert!(matches!(
            weighted_stiffness(&sp, &w),
            Err(FemError::NegativeWeight { .. })
        ));
    }

    /// Brute-force assembly with a higher-order rule as an independent check.
    fn brute_force_mass(sp: &FnSpace) -> crate::linalg::DenseMat {
        let rule = TriRule::degree6();
        let table = sp.basis_at(&rule);
        let mut a = crate::linalg::DenseMat::zeros(sp.ndof(), sp.ndof());
        for e in 0..sp.nelems() {
            let dofs = sp.elem_dofs(e);
            let area = sp.geom(e).area;
            for q in 0..rule.nq() {
                let w = rule.weights[q] * area;
                for (i, &di) in dofs.iter().enumerate() {
                    for (j, &dj) in dofs.iter().enumerate() {
                        a.add_to(di, dj, w * table.value(q, i) * table.value(q, j));
                    }
                }
            }
        }
        a
    }

    #[test]
    fn p2_mass_matches_high_order_quadrature_oracle() {
        let sp = space(4, 4, 2);
        let m = mass(&sp).to_dense();
        let oracle = brute_force_mass(&sp);
        let err = m.frobenius_distance(&oracle) / oracle.frobenius_norm();
        assert!(err < 1e-12, "relative error {err}");
    }

    #[test]
    fn random_weight_matches_quadrature_oracle() {
        // Weighted stiffness with a P1 weight field evaluated at the same
        // quadrature points must match a direct dense recomputation.
        let sp = space(3, 3, 1);
        let w_field = crate::rng::gaussian_vector(9, 0, sp.ndof())
            .iter()
            .map(|v| v.exp())
            .collect::<Vec<_>>();
        let w_qp = sp.eval_at_table(&w_field, sp.basis());
        let k = weighted_stiffness(&sp, &w_qp).unwrap().to_dense();
        // Dense oracle: loop with explicit barycentric evaluation.
        let mut oracle = crate::linalg::DenseMat::zeros(sp.ndof(), sp.ndof());
        let rule = sp.rule().clone();
        let basis = sp.basis();
        for e in 0..sp.nelems() {
            let dofs = sp.elem_dofs(e);
            let geom = sp.geom(e);
            for q in 0..rule.nq() {
                let wq = w_qp[e * rule.nq() + q];
                let w = rule.weights[q] * geom.area * wq;
                for (i, &di) in dofs.iter().enumerate() {
                    let gi = geom.phys_grad(basis.grad_ref(q, i));
                    for (j, &dj) in dofs.iter().enumerate() {
                        let gj = geom.phys_grad(basis.grad_ref(q, j));
                        oracle.add_to(di, dj, w * (gi[0] * gj[0] + gi[1] * gj[1]));
                    }
                }
            }
        }
        assert!(k.frobenius_distance(&oracle) < 1e-12);
    }

    #[test]
    fn advection_kills_constants_and_curl_velocity_conserves_mass() {
        let sp = space(4, 4, 1);
        let nq = sp.basis().nq;
        // Rigid-rotation field sampled at quadrature points.
        let mut v_qp = vec![[0.0; 2]; sp.nelems() * nq];
        for e in 0..sp.nelems() {
            for q in 0..nq {
                let p = sp.geom(e).map_point(sp.rule().points[q]);
                v_qp[e * nq + q] = [p[1] - 0.5, 0.5 - p[0]];
            }
        }
        let n = advection(&sp, &v_qp);
        let ones = vec![1.0; sp.ndof()];
        // Constants in the kernel pointwise.
        assert!(crate::linalg::norm2(&n.matvec(&ones)) < 1e-13);
        // A discrete stream-function curl makes the column sums vanish too:
        // v = curl(psi_h) elementwise with psi_h continuous.
        let psi_sp = space(4, 4, 2);
        // Stream function vanishing on the boundary, so the interpolant is
        // identically zero along every boundary edge.
        let psi = psi_sp.interpolate(|x, y| x * (1.0 - x) * y * (1.0 - y));
        let table = psi_sp.basis_at(sp.rule());
        let grads = psi_sp.grad_at_table(&psi, &table);
        let v_curl: Vec<[f64; 2]> = grads.iter().map(|g| [-g[1], g[0]]).collect();
        let nc = advection(&sp, &v_curl);
        let col_sums = nc.matvec_transpose(&ones);
        assert!(
            crate::linalg::norm2(&col_sums) < 1e-13,
            "column sums {}",
            crate::linalg::norm2(&col_sums)
        );
        let s = streamline_diffusion(&sp, &v_qp, 1e-3);
        assert!(crate::linalg::norm2(&s.matvec(&ones)) < 1e-13);
        let cs = s.csr().matvec_transpose(&ones);
        assert!(crate::linalg::norm2(&cs) < 1e-13);
    }

    #[test]
    fn laplace_strip_solution_is_linear() {
        // u = 0 on the bottom, u = 1 on the top: the solution of the Laplace
        // equation is u(x, y) = y, which lies in the FE space.
        let sp = space(6, 6, 1);
        let k = elliptic(&sp, 1.0, AnisoTensor::identity(), 0.0, 0.0).unwrap();
        let zero = |_: f64, _: f64| 0.0;
        let one = |_: f64, _: f64| 1.0;
        let bc = DirichletBc::from_tags(
            &sp,
            &[(BoundaryTag::Bottom, &zero), (BoundaryTag::Top, &one)],
        )
        .unwrap();
        let sys = ConstrainedSpd::new(k, bc);
        let u = sys.solve(&vec![0.0; sp.ndof()], true, 1e-14).unwrap();
        let exact = sp.interpolate(|_, y| y);
        let err = crate::linalg::norm2(&crate::linalg::sub(&u, &exact));
        assert!(err < 1e-10, "strip error {err}");
    }

    #[test]
    fn unknown_tag_is_an_error() {
        let sp = space(2, 2, 1);
        let zero = |_: f64, _: f64| 0.0;
        let r = DirichletBc::from_tags(&sp, &[(BoundaryTag::Hole, &zero)]);
        assert!(matches!(r, Err(FemError::UnknownBoundaryTag { .. })));
    }

    #[test]
    fn homogeneous_elimination_keeps_spd() {
        let sp = space(4, 4, 1);
        let k = elliptic(&sp, 1.0, AnisoTensor::identity(), 1.0, 0.0).unwrap();
        let zero = |_: f64, _: f64| 0.0;
        let bc = DirichletBc::from_tags(&sp, &[(BoundaryTag::Bottom, &zero)]).unwrap();
        let (ke, rhs) = apply_dirichlet(&k, &vec![1.0; sp.ndof()], &bc);
        assert!(ke.max_asymmetry() < 1e-14);
        for &d in &bc.dofs {
            assert_eq!(ke.get(d, d), 1.0);
            assert_eq!(rhs[d], 0.0);
        }
        assert!(crate::linalg::dense_cholesky(&ke.to_dense()).is_ok());
    }

    /// Manufactured solution u = x^2 + y^2 with f = -4 (m = 0), Dirichlet on
    /// top/bottom, Neumann on left/right. P1 first-order rate in H1 gives
    /// second order in L2: the error ratio between h and h/2 approaches 4.
    #[test]
    fn manufactured_solution_converges_quadratically() {
        let exact = |x: f64, y: f64| x * x + y * y;
        let mut errs = Vec::new();
        for n in [8usize, 16, 32] {
            let sp = space(n, n, 1);
            let k = elliptic(&sp, 1.0, AnisoTensor::identity(), 0.0, 0.0).unwrap();
            // -lap(u) = f with u = x^2 + y^2 gives f = -4.
            let mut rhs = load_vector(&sp, &|_, _| -4.0);
            // Neumann flux grad(u).n: zero at x=0, equal to 2 at x=1.
            let h = |x: f64, _y: f64| if x > 0.5 { 2.0 } else { 0.0 };
            let nm = neumann_load(&sp, &[BoundaryTag::Left, BoundaryTag::Right], &h);
            for i in 0..sp.ndof() {
                rhs[i] += nm[i];
            }
            let bc = DirichletBc::from_tags(
                &sp,
                &[(BoundaryTag::Bottom, &exact), (BoundaryTag::Top, &exact)],
            )
            .unwrap();
            let sys = ConstrainedSpd::new(k, bc);
            let u = sys.solve(&rhs, true, 1e-13).unwrap();
            errs.push(sp.l2_error(&u, exact));
        }
        let r1 = errs[0] / errs[1];
        let r2 = errs[1] / errs[2];
        assert!(r1 > 3.5 && r2 > 3.5, "ratios {r1} {r2}");
    }
}
