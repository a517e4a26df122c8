//! Lagrange finite-element spaces of degree 1 and 2 on triangular meshes.

use std::collections::HashMap;
use std::sync::Arc;

use super::quad::TriRule;
use super::{FemError, Mesh};

/// Basis values and reference gradients tabulated at the points of one
/// quadrature rule: `val[q * nloc + l]`, `dref[(q * nloc + l) * 2 + c]`.
#[derive(Debug, Clone)]
pub struct BasisTable {
    pub nq: usize,
    pub nloc: usize,
    val: Vec<f64>,
    dref: Vec<f64>,
}

impl BasisTable {
    #[inline]
    pub fn value(&self, q: usize, l: usize) -> f64 {
        self.val[q * self.nloc + l]
    }

    #[inline]
    pub fn grad_ref(&self, q: usize, l: usize) -> [f64; 2] {
        let k = (q * self.nloc + l) * 2;
        [self.dref[k], self.dref[k + 1]]
    }
}

/// Per-element affine geometry: area and the transpose inverse Jacobian that
/// maps reference gradients to physical ones.
#[derive(Debug, Clone, Copy)]
pub struct ElemGeom {
    pub area: f64,
    pub inv_jt: [[f64; 2]; 2],
    /// First vertex and Jacobian columns, for mapping reference points.
    pub origin: [f64; 2],
    pub jac: [[f64; 2]; 2],
}

impl ElemGeom {
    #[inline]
    pub fn phys_grad(&self, g_ref: [f64; 2]) -> [f64; 2] {
        [
            self.inv_jt[0][0] * g_ref[0] + self.inv_jt[0][1] * g_ref[1],
            self.inv_jt[1][0] * g_ref[0] + self.inv_jt[1][1] * g_ref[1],
        ]
    }

    /// Map a barycentric point to physical coordinates.
    #[inline]
    pub fn map_point(&self, bary: [f64; 3]) -> [f64; 2] {
        let (xi, eta) = (bary[1], bary[2]);
        [
            self.origin[0] + self.jac[0][0] * xi + self.jac[0][1] * eta,
            self.origin[1] + self.jac[1][0] * xi + self.jac[1][1] * eta,
        ]
    }
}

#[derive(Debug)]
pub struct FnSpace {
    mesh: Arc<Mesh>,
    degree: u8,
    ndof: usize,
    nloc: usize,
    elem_dofs: Vec<usize>,
    dof_coords: Vec<[f64; 2]>,
    /// P2 only: edge dof lookup keyed by sorted vertex pair.
    edge_dofs: HashMap<(usize, usize), usize>,
    rule: TriRule,
    basis: BasisTable,
    geom: Vec<ElemGeom>,
}

fn basis_eval(degree: u8, bary: [f64; 3]) -> Vec<f64> {
    let [l0, l1, l2] = bary;
    match degree {
        1 => vec![l0, l1, l2],
        2 => vec![
            l0 * (2.0 * l0 - 1.0),
            l1 * (2.0 * l1 - 1.0),
            l2 * (2.0 * l2 - 1.0),
            4.0 * l1 * l2,
            4.0 * l2 * l0,
            4.0 * l0 * l1,
        ],
        _ => unreachable!(),
    }
}

/// Gradients with respect to reference coordinates (xi, eta), where
/// l0 = 1 - xi - eta, l1 = xi, l2 = eta.
fn basis_grad_ref(degree: u8, bary: [f64; 3]) -> Vec<[f64; 2]> {
    let [l0, l1, l2] = bary;
    match degree {
        1 => vec![[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]],
        2 => {
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
        _ => unreachable!(),
    }
}

fn tabulate(degree: u8, rule: &TriRule) -> BasisTable {
    let nloc = if degree == 1 { 3 } else { 6 };
    let nq = rule.nq();
    let mut val = Vec::with_capacity(nq * nloc);
    let mut dref = Vec::with_capacity(nq * nloc * 2);
    for q in 0..nq {
        let b = rule.points[q];
        val.extend(basis_eval(degree, b));
        for g in basis_grad_ref(degree, b) {
            dref.extend_from_slice(&g);
        }
    }
    BasisTable { nq, nloc, val, dref }
}

impl FnSpace {
    /// Lagrange space of the given degree (1 or 2). The quadrature rule is
    /// chosen by degree: three-point for P1 forms, six-point for P2.
    pub fn new(mesh: Arc<Mesh>, degree: u8) -> Self {
        assert!(degree == 1 || degree == 2, "only P1/P2 supported");
        let nv = mesh.nvertices();
        let nt = mesh.ntriangles();
        let nloc = if degree == 1 { 3 } else { 6 };

        let mut edge_dofs = HashMap::new();
        let mut dof_coords: Vec<[f64; 2]> = (0..nv).map(|i| mesh.vertex(i)).collect();
        let mut elem_dofs = Vec::with_capacity(nt * nloc);

        if degree == 2 {
            // Deterministic edge numbering: sorted unique vertex pairs.
            let mut edges: Vec<(usize, usize)> = Vec::new();
            for t in 0..nt {
                let tri = mesh.triangle(t);
                for (a, b) in [(tri[1], tri[2]), (tri[2], tri[0]), (tri[0], tri[1])] {
                    let key = (a.min(b), a.max(b));
                    edges.push(key);
                }
            }
            edges.sort_unstable();
            edges.dedup();
            for (k, &(a, b)) in edges.iter().enumerate() {
                edge_dofs.insert((a, b), nv + k);
                let (pa, pb) = (mesh.vertex(a), mesh.vertex(b));
                dof_coords.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
            }
        }

        for t in 0..nt {
            let tri = mesh.triangle(t);
            elem_dofs.extend_from_slice(&tri);
            if degree == 2 {
                for (a, b) in [(tri[1], tri[2]), (tri[2], tri[0]), (tri[0], tri[1])] {
                    let key = (a.min(b), a.max(b));
                    elem_dofs.push(edge_dofs[&key]);
                }
            }
        }

        let geom = (0..nt)
            .map(|t| {
                let [p0, p1, p2] = mesh.tri_coords(t);
                let jac = [
                    [p1[0] - p0[0], p2[0] - p0[0]],
                    [p1[1] - p0[1], p2[1] - p0[1]],
                ];
                let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
                let inv_j = [
                    [jac[1][1] / det, -jac[0][1] / det],
                    [-jac[1][0] / det, jac[0][0] / det],
                ];
                // inv_jt = (J^{-1})^T
                let inv_jt = [
                    [inv_j[0][0], inv_j[1][0]],
                    [inv_j[0][1], inv_j[1][1]],
                ];
                ElemGeom { area: 0.5 * det, inv_jt, origin: p0, jac }
            })
            .collect();

        let rule = TriRule::for_degree(degree);
        let basis = tabulate(degree, &rule);
        let ndof = dof_coords.len();
        FnSpace {
            mesh,
            degree,
            ndof,
            nloc,
            elem_dofs,
            dof_coords,
            edge_dofs,
            rule,
            basis,
            geom,
        }
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> Arc<Mesh> {
        Arc::clone(&self.mesh)
    }

    pub fn degree(&self) -> u8 {
        self.degree
    }

    pub fn ndof(&self) -> usize {
        self.ndof
    }

    pub fn nloc(&self) -> usize {
        self.nloc
    }

    pub fn nelems(&self) -> usize {
        self.geom.len()
    }

    pub fn elem_dofs(&self, e: usize) -> &[usize] {
        &self.elem_dofs[e * self.nloc..(e + 1) * self.nloc]
    }

    pub fn geom(&self, e: usize) -> &ElemGeom {
        &self.geom[e]
    }

    pub fn rule(&self) -> &TriRule {
        &self.rule
    }

    pub fn basis(&self) -> &BasisTable {
        &self.basis
    }

    /// Tabulate this space's basis at the points of another rule (used when
    /// two spaces on the same mesh are integrated together).
    pub fn basis_at(&self, rule: &TriRule) -> BasisTable {
        tabulate(self.degree, rule)
    }

    pub fn dof_coords(&self) -> &[[f64; 2]] {
        &self.dof_coords
    }

    /// Dofs lying on a given edge of an element (endpoint dofs first), with
    /// their basis values as functions of the edge parameter.
    pub fn edge_dofs_of(&self, a: usize, b: usize) -> Vec<usize> {
        let mut dofs = vec![a, b];
        if self.degree == 2 {
            dofs.push(self.edge_dofs[&(a.min(b), a.max(b))]);
        }
        dofs
    }

    /// Basis values of the edge dofs (ordered as `edge_dofs_of`) at edge
    /// parameter `t` in `[0,1]` measured from vertex `a` to `b`.
    pub fn edge_basis(&self, t: f64) -> Vec<f64> {
        match self.degree {
            1 => vec![1.0 - t, t],
            2 => vec![(1.0 - t) * (1.0 - 2.0 * t), t * (2.0 * t - 1.0), 4.0 * t * (1.0 - t)],
            _ => unreachable!(),
        }
    }

    /// Nodal interpolation of a function.
    pub fn interpolate(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.dof_coords.iter().map(|p| f(p[0], p[1])).collect()
    }

    /// Evaluate a coefficient field at an arbitrary point.
    pub fn eval(&self, field: &[f64], x: f64, y: f64) -> Option<f64> {
        assert_eq!(field.len(), self.ndof);
        let (t, bary) = self.mesh.locate(x, y)?;
        let vals = basis_eval(self.degree, bary);
        let dofs = self.elem_dofs(t);
        Some(vals.iter().zip(dofs).map(|(v, &d)| v * field[d]).sum())
    }

    /// Values of a coefficient field at every quadrature point of `table`
    /// (laid out element-major: `out[e * nq + q]`).
    pub fn eval_at_table(&self, field: &[f64], table: &BasisTable) -> Vec<f64> {
        assert_eq!(field.len(), self.ndof);
        let mut out = vec![0.0; self.nelems() * table.nq];
        for e in 0..self.nelems() {
            let dofs = self.elem_dofs(e);
            for q in 0..table.nq {
                let mut s = 0.0;
                for (l, &d) in dofs.iter().enumerate() {
                    s += table.value(q, l) * field[d];
                }
                out[e * table.nq + q] = s;
            }
        }
        out
    }

    /// Physical gradient of a coefficient field at every quadrature point of
    /// `table` (`out[e * nq + q]`).
    pub fn grad_at_table(&self, field: &[f64], table: &BasisTable) -> Vec<[f64; 2]> {
        assert_eq!(field.len(), self.ndof);
        let mut out = vec![[0.0; 2]; self.nelems() * table.nq];
        for e in 0..self.nelems() {
            let dofs = self.elem_dofs(e);
            let geom = &self.geom[e];
            for q in 0..table.nq {
                let mut g = [0.0; 2];
                for (l, &d) in dofs.iter().enumerate() {
                    let gp = geom.phys_grad(table.grad_ref(q, l));
                    g[0] += gp[0] * field[d];
                    g[1] += gp[1] * field[d];
                }
                out[e * table.nq + q] = g;
            }
        }
        out
    }

    /// L2 norm of the difference between a coefficient field and an exact
    /// function, integrated with a degree-6 rule.
    pub fn l2_error(&self, field: &[f64], exact: impl Fn(f64, f64) -> f64) -> f64 {
        let rule = TriRule::degree6();
        let table = self.basis_at(&rule);
        let mut total = 0.0;
        for e in 0..self.nelems() {
            let dofs = self.elem_dofs(e);
            let geom = &self.geom[e];
            for q in 0..rule.nq() {
                let p = geom.map_point(rule.points[q]);
                let mut s = 0.0;
                for (l, &d) in dofs.iter().enumerate() {
                    s += table.value(q, l) * field[d];
                }
                let diff = s - exact(p[0], p[1]);
                total += rule.weights[q] * geom.area * diff * diff;
            }
        }
        total.sqrt()
    }

    /// Integral of a coefficient field over the domain.
    pub fn integral(&self, field: &[f64]) -> f64 {
        let mut total = 0.0;
        for e in 0..self.nelems() {
            let dofs = self.elem_dofs(e);
            let geom = &self.geom[e];
            for q in 0..self.basis.nq {
                let mut s = 0.0;
                for (l, &d) in dofs.iter().enumerate() {
                    s += self.basis.value(q, l) * field[d];
                }
                total += self.rule.weights[q] * geom.area * s;
            }
        }
        total
    }

    /// Interpolation matrix from `other` onto this space's dof locations
    /// (rows: this space's dofs). Identity when the spaces coincide.
    pub fn interpolation_from(&self, other: &FnSpace) -> Result<crate::linalg::Csr, FemError> {
        let mut b = crate::linalg::CsrBuilder::new(self.ndof, other.ndof());
        for (i, p) in self.dof_coords.iter().enumerate() {
            let (t, bary) = other.mesh().locate(p[0], p[1]).ok_or(
                FemError::PointOutsideDomain { index: i, x: p[0], y: p[1] },
            )?;
            let vals = basis_eval(other.degree(), bary);
            for (l, &d) in other.elem_dofs(t).iter().enumerate() {
                b.add(i, d, vals[l]);
            }
        }
        Ok(b.build())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::build_unit_square_mesh;

    #[test]
    fn dof_counts() {
        let mesh = Arc::new(build_unit_square_mesh(4, 4, &[]).unwrap());
        let p1 = FnSpace::new(Arc::clone(&mesh), 1);
        assert_eq!(p1.ndof(), 25);
        let p2 = FnSpace::new(mesh, 2);
        // vertices + edges: 25 + (horizontal 20 + vertical 20 + diagonal 16)
        assert_eq!(p2.ndof(), 25 + 56);
    }

    #[test]
    fn p2_dof_count_matches_formula() {
        for (nx, ny) in [(8usize, 8usize), (16, 16), (32, 32)] {
            let mesh = Arc::new(build_unit_square_mesh(nx, ny, &[]).unwrap());
            let p2 = FnSpace::new(mesh, 2);
            let verts = (nx + 1) * (ny + 1);
            let edges = nx * (ny + 1) + ny * (nx + 1) + nx * ny;
            assert_eq!(p2.ndof(), verts + edges);
        }
    }

    #[test]
    fn partition_of_unity_at_quadrature() {
        let mesh = Arc::new(build_unit_square_mesh(3, 3, &[]).unwrap());
        for degree in [1u8, 2] {
            let sp = FnSpace::new(Arc::clone(&mesh), degree);
            let ones = vec![1.0; sp.ndof()];
            let vals = sp.eval_at_table(&ones, sp.basis());
            assert!(vals.iter().all(|v| (v - 1.0).abs() < 1e-13));
            let grads = sp.grad_at_table(&ones, sp.basis());
            assert!(grads.iter().all(|g| g[0].abs() < 1e-12 && g[1].abs() < 1e-12));
        }
    }

    #[test]
    fn linear_field_reproduced() {
        let mesh = Arc::new(build_unit_square_mesh(5, 4, &[]).unwrap());
        for degree in [1u8, 2] {
            let sp = FnSpace::new(Arc::clone(&mesh), degree);
            let f = sp.interpolate(|x, y| 2.0 * x - 3.0 * y + 0.5);
            for (x, y) in [(0.3, 0.7), (0.11, 0.52), (0.99, 0.01)] {
                let v = sp.eval(&f, x, y).unwrap();
                assert!((v - (2.0 * x - 3.0 * y + 0.5)).abs() < 1e-12);
            }
            let err = sp.l2_error(&f, |x, y| 2.0 * x - 3.0 * y + 0.5);
            assert!(err < 1e-13);
        }
    }

    #[test]
    fn p2_quadratic_reproduced() {
        let mesh = Arc::new(build_unit_square_mesh(3, 3, &[]).unwrap());
        let sp = FnSpace::new(mesh, 2);
        let f = sp.interpolate(|x, y| x * x + x * y - y * y);
        let err = sp.l2_error(&f, |x, y| x * x + x * y - y * y);
        assert!(err < 1e-13);
        let g = sp.grad_at_table(&f, sp.basis());
        // Check one gradient value: grad = (2x + y, x - 2y) at a quad point.
        let geom = sp.geom(0);
        let p = geom.map_point(sp.rule().points[0]);
        let gq = g[0];
        assert!((gq[0] - (2.0 * p[0] + p[1])).abs() < 1e-12);
        assert!((gq[1] - (p[0] - 2.0 * p[1])).abs() < 1e-12);
    }

    #[test]
    fn interpolation_between_spaces() {
        let mesh = Arc::new(build_unit_square_mesh(4, 4, &[]).unwrap());
        let p1 = FnSpace::new(Arc::clone(&mesh), 1);
        let p2 = FnSpace::new(Arc::clone(&mesh), 2);
        let interp = p2.interpolation_from(&p1).unwrap();
        let m1 = p1.interpolate(|x, y| 1.0 - x + 2.0 * y);
        let m2 = interp.matvec(&m1);
        let direct = p2.interpolate(|x, y| 1.0 - x + 2.0 * y);
        for (a, b) in m2.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-13);
        }
    }
}
