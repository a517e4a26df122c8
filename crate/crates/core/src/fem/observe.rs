//! Pointwise observation operators.

use crate::linalg::{Csr, CsrBuilder};

use super::{FemError, FnSpace};

/// Sparse q-by-n matrix whose row i evaluates a coefficient field at the
/// i-th point: `(B u)_i = u_h(x_i)`.
pub fn point_observation(space: &FnSpace, points: &[[f64; 2]]) -> Result<Csr, FemError> {
    let mut b = CsrBuilder::new(points.len(), space.ndof());
    for (i, p) in points.iter().enumerate() {
        let (t, bary) = space
            .mesh()
            .locate(p[0], p[1])
            .ok_or(FemError::PointOutsideDomain { index: i, x: p[0], y: p[1] })?;
        let dofs = space.elem_dofs(t);
        // Clamp tiny negative barycentric coordinates from roundoff.
        let bary = [bary[0].max(0.0), bary[1].max(0.0), bary[2].max(0.0)];
        let vals = match space.degree() {
            1 => vec![bary[0], bary[1], bary[2]],
            2 => {
                let [l0, l1, l2] = bary;
                vec![
                    l0 * (2.0 * l0 - 1.0),
                    l1 * (2.0 * l1 - 1.0),
                    l2 * (2.0 * l2 - 1.0),
                    4.0 * l1 * l2,
                    4.0 * l2 * l0,
                    4.0 * l0 * l1,
                ]
            }
            _ => unreachable!(),
        };
        for (l, &d) in dofs.iter().enumerate() {
            b.add(i, d, vals[l]);
        }
    }
    Ok(b.build())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::build_unit_square_mesh;
    use std::sync::Arc;

    fn space(nx: usize, degree: u8) -> FnSpace {
        FnSpace::new(Arc::new(build_unit_square_mesh(nx, nx, &[]).unwrap()), degree)
    }

    #[test]
    fn row_at_dof_location_is_unit_vector() {
        let sp = space(4, 1);
        let p = sp.dof_coords()[7];
        let b = point_observation(&sp, &[p]).unwrap();
        let (cols, vals) = b.row(0);
        let mut found = false;
        for (c, v) in cols.iter().zip(vals) {
            if *c == 7 {
                assert!((v - 1.0).abs() < 1e-12);
                found = true;
            } else {
                assert!(v.abs() < 1e-12);
            }
        }
        assert!(found);
    }

    #[test]
    fn barycenter_weights_are_thirds() {
        let sp = space(1, 1);
        let tri = sp.mesh().tri_coords(0);
        let cx = (tri[0][0] + tri[1][0] + tri[2][0]) / 3.0;
        let cy = (tri[0][1] + tri[1][1] + tri[2][1]) / 3.0;
        let b = point_observation(&sp, &[[cx, cy]]).unwrap();
        let (_, vals) = b.row(0);
        for v in vals {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_function_reproduced_at_random_points() {
        let sp = space(6, 1);
        let field = sp.interpolate(|x, y| x + y);
        let pts = crate::rng::uniform_points(77, 50, [0.0, 0.0, 1.0, 1.0]);
        let b = point_observation(&sp, &pts).unwrap();
        let obs = b.matvec(&field);
        for (o, p) in obs.iter().zip(&pts) {
            assert!((o - (p[0] + p[1])).abs() < 1e-12);
        }
        // Partition of unity: rows sum to one.
        let ones = vec![1.0; sp.ndof()];
        for v in b.matvec(&ones) {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn point_in_hole_is_error() {
        let mesh = Arc::new(
            build_unit_square_mesh(4, 4, &[[0.25, 0.25, 0.5, 0.5]]).unwrap(),
        );
        let sp = FnSpace::new(mesh, 1);
        let err = point_observation(&sp, &[[0.3, 0.3]]).unwrap_err();
        match err {
            FemError::PointOutsideDomain { index, .. } => assert_eq!(index, 0),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
