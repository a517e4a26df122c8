//! Rectangular factor `C` with `C C^T = A` for assembled forms, built from
//! per-element square roots of the (block-)diagonal quadrature weights. The
//! quadrature channels of distinct elements are disjoint columns, so the
//! cross terms of `C C^T` vanish identically.

use crate::linalg::{Csr, CsrBuilder};

use super::quad::EdgeRule;
use super::{AnisoTensor, FemError, FnSpace};

/// Sparse `n x q_tot` factor of an assembled symmetric form.
#[derive(Debug, Clone)]
pub struct RectFactor {
    c: Csr,
}

impl RectFactor {
    pub fn nrows(&self) -> usize {
        self.c.nrows()
    }

    /// Total number of quadrature channels (the stochastic dimension when
    /// the factor drives white-noise sampling).
    pub fn ncols(&self) -> usize {
        self.c.ncols()
    }

    pub fn csr(&self) -> &Csr {
        &self.c
    }

    /// `C eta`
    pub fn apply(&self, eta: &[f64]) -> Vec<f64> {
        self.c.matvec(eta)
    }

    /// Dense `C C^T`, for verification at small sizes.
    pub fn gram_dense(&self) -> crate::linalg::DenseMat {
        let d = self.c.to_dense();
        d.matmul(&d.transpose())
    }
}

/// Factor of the mass matrix: one channel per volume quadrature point with
/// entries `sqrt(w_q) phi_l(x_q)`.
pub fn rect_factor_mass(space: &FnSpace) -> RectFactor {
    let basis = space.basis();
    let rule = space.rule();
    let nq = basis.nq;
    let mut b = CsrBuilder::new(space.ndof(), space.nelems() * nq);
    for e in 0..space.nelems() {
        let dofs = space.elem_dofs(e);
        let area = space.geom(e).area;
        for q in 0..nq {
            let col = e * nq + q;
            let sw = (rule.weights[q] * area).sqrt();
            for (l, &d) in dofs.iter().enumerate() {
                b.add(d, col, sw * basis.value(q, l));
            }
        }
    }
    RectFactor { c: b.build() }
}

/// Factor of `gamma stiffness(Theta) + delta mass + beta boundary_mass`.
///
/// Each volume quadrature point contributes three channels (two for the
/// tensor square root applied to the gradient, one for the scaled value) and
/// each boundary quadrature point one channel.
pub fn rect_factor_elliptic(
    space: &FnSpace,
    gamma: f64,
    theta: AnisoTensor,
    delta: f64,
    robin_beta: f64,
) -> Result<RectFactor, FemError> {
    assert!(gamma >= 0.0 && delta >= 0.0 && robin_beta >= 0.0);
    let theta_sqrt = if gamma > 0.0 {
        if !theta.is_spd() {
            return Err(FemError::TensorNotSpd);
        }
        theta.sqrt()?
    } else {
        AnisoTensor::identity()
    };
    let basis = space.basis();
    let rule = space.rule();
    let nq = basis.nq;
    let nloc = space.nloc();
    let edge_rule = EdgeRule::for_degree(space.degree());
    let n_edge_q = edge_rule.points.len();
    let vol_cols = space.nelems() * nq * 3;
    let total_cols = vol_cols + space.mesh().boundary_edges().len() * n_edge_q;
    let mut b = CsrBuilder::new(space.ndof(), total_cols);

    for e in 0..space.nelems() {
        let dofs = space.elem_dofs(e);
        let geom = space.geom(e);
        for q in 0..nq {
            let w = rule.weights[q] * geom.area;
            let col = (e * nq + q) * 3;
            let sg = (gamma * w).sqrt();
            let sd = (delta * w).sqrt();
            for l in 0..nloc {
                let g = geom.phys_grad(basis.grad_ref(q, l));
                let tg = theta_sqrt.apply(g);
                b.add(dofs[l], col, sg * tg[0]);
                b.add(dofs[l], col + 1, sg * tg[1]);
                b.add(dofs[l], col + 2, sd * basis.value(q, l));
            }
        }
    }
    if robin_beta > 0.0 {
        for (k, edge) in space.mesh().boundary_edges().iter().enumerate() {
            let [va, vb] = edge.vertices;
            let (pa, pb) = (space.mesh().vertex(va), space.mesh().vertex(vb));
            let len = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
            let dofs = space.edge_dofs_of(va, vb);
            for (t_idx, (&t, &w)) in
                edge_rule.points.iter().zip(&edge_rule.weights).enumerate()
            {
                let col = vol_cols + k * n_edge_q + t_idx;
                let sb = (robin_beta * w * len).sqrt();
                let vals = space.edge_basis(t);
                for (l, &d) in dofs.iter().enumerate() {
                    b.add(d, col, sb * vals[l]);
                }
            }
        }
    }
    Ok(RectFactor { c: b.build() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{build_unit_square_mesh, elliptic, mass};
    use std::sync::Arc;

    fn space(nx: usize, ny: usize, degree: u8) -> FnSpace {
        FnSpace::new(Arc::new(build_unit_square_mesh(nx, ny, &[]).unwrap()), degree)
    }

    #[test]
    fn single_triangle_mass_factor() {
        let sp = space(1, 1, 1);
        let f = rect_factor_mass(&sp);
        let m = mass(&sp).to_dense();
        let rel = f.gram_dense().frobenius_distance(&m) / m.frobenius_norm();
        assert!(rel < 1e-14);
        assert_eq!(f.ncols(), sp.nelems() * sp.basis().nq);
    }

    #[test]
    fn mesh_mass_factor_recomposes() {
        for degree in [1u8, 2] {
            let sp = space(2, 2, degree);
            let f = rect_factor_mass(&sp);
            let m = mass(&sp).to_dense();
            let rel = f.gram_dense().frobenius_distance(&m) / m.frobenius_norm();
            assert!(rel < 1e-12, "degree {degree}: {rel}");
        }
    }

    #[test]
    fn elliptic_factor_recomposes() {
        let sp = space(4, 4, 1);
        let theta = AnisoTensor::rotated_diag(0.3, 2.0, 0.5);
        let beta = 0.4;
        let f = rect_factor_elliptic(&sp, 1.0, theta, 1.0, beta).unwrap();
        let k = elliptic(&sp, 1.0, theta, 1.0, beta).unwrap().to_dense();
        let rel = f.gram_dense().frobenius_distance(&k) / k.frobenius_norm();
        assert!(rel < 1e-12, "relative error {rel}");
    }

    #[test]
    fn elliptic_factor_rejects_indefinite_tensor() {
        let sp = space(2, 2, 1);
        let t = AnisoTensor::from_angles(std::f64::consts::FRAC_PI_4, 2.0, 0.5);
        assert!(matches!(
            rect_factor_elliptic(&sp, 1.0, t, 1.0, 0.0),
            Err(FemError::TensorNotSpd)
        ));
    }
}
