//! Structured triangular meshes of the unit square with optional
//! rectangular holes.

use std::collections::HashMap;

use super::FemError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    Bottom,
    Top,
    Left,
    Right,
    Hole,
}

impl BoundaryTag {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bottom" => Some(Self::Bottom),
            "top" => Some(Self::Top),
            "left" => Some(Self::Left),
            "right" => Some(Self::Right),
            "hole" => Some(Self::Hole),
            _ => None,
        }
    }
}

/// Oriented boundary edge (domain lies to its left) with the owning triangle.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryEdge {
    pub vertices: [usize; 2],
    pub triangle: usize,
    pub tag: BoundaryTag,
}

#[derive(Debug)]
pub struct Mesh {
    nx: usize,
    ny: usize,
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    holes: Vec<[f64; 4]>,
    /// Per grid cell, the two triangle ids (lower, upper); None when masked.
    cell_tris: Vec<Option<(usize, usize)>>,
}

/// Triangulate the unit square on a regular nx-by-ny grid. Each cell is split
/// along its bottom-left-to-top-right diagonal into a lower and an upper
/// triangle, both counterclockwise. Holes are axis-aligned rectangles whose
/// corners must sit on grid lines; the cells they cover are removed and their
/// interior edges tagged [`BoundaryTag::Hole`].
pub fn build_unit_square_mesh(
    nx: usize,
    ny: usize,
    holes: &[[f64; 4]],
) -> Result<Mesh, FemError> {
    assert!(nx >= 1 && ny >= 1, "mesh needs at least one cell per direction");
    let snap = |v: f64, n: usize| -> Option<usize> {
        let s = v * n as f64;
        let r = s.round();
        if (s - r).abs() <= 1e-9 * n as f64 {
            Some(r as usize)
        } else {
            None
        }
    };
    let mut masked = vec![false; nx * ny];
    for h in holes {
        let [x0, y0, x1, y1] = *h;
        let bad = || FemError::HoleNotOnGrid(x0, y0, x1, y1);
        if !(x0 < x1 && y0 < y1 && x0 > 0.0 && y0 > 0.0 && x1 < 1.0 && y1 < 1.0) {
            return Err(bad());
        }
        let (i0, i1) = (snap(x0, nx).ok_or_else(bad)?, snap(x1, nx).ok_or_else(bad)?);
        let (j0, j1) = (snap(y0, ny).ok_or_else(bad)?, snap(y1, ny).ok_or_else(bad)?);
        if i0 >= i1 || j0 >= j1 {
            return Err(bad());
        }
        for j in j0..j1 {
            for i in i0..i1 {
                masked[j * nx + i] = true;
            }
        }
    }

    let grid_id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut triangles_grid: Vec<[usize; 3]> = Vec::new();
    let mut cell_tris = vec![None; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            if masked[j * nx + i] {
                continue;
            }
            let v00 = grid_id(i, j);
            let v10 = grid_id(i + 1, j);
            let v01 = grid_id(i, j + 1);
            let v11 = grid_id(i + 1, j + 1);
            let lower = triangles_grid.len();
            triangles_grid.push([v00, v10, v11]);
            triangles_grid.push([v00, v11, v01]);
            cell_tris[j * nx + i] = Some((lower, lower + 1));
        }
    }

    // Drop unused grid vertices, renumbering in grid order.
    let ngrid = (nx + 1) * (ny + 1);
    let mut used = vec![false; ngrid];
    for t in &triangles_grid {
        for &v in t {
            used[v] = true;
        }
    }
    let mut remap = vec![usize::MAX; ngrid];
    let mut vertices = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            let g = grid_id(i, j);
            if used[g] {
                remap[g] = vertices.len();
                vertices.push([i as f64 / nx as f64, j as f64 / ny as f64]);
            }
        }
    }
    let triangles: Vec<[usize; 3]> = triangles_grid
        .iter()
        .map(|t| [remap[t[0]], remap[t[1]], remap[t[2]]])
        .collect();

    // Boundary edges: directed edges appearing without a reverse partner.
    let mut edge_owner: HashMap<(usize, usize), usize> = HashMap::new();
    for (t, tri) in triangles.iter().enumerate() {
        for k in 0..3 {
            edge_owner.insert((tri[k], tri[(k + 1) % 3]), t);
        }
    }
    let mut boundary_edges = Vec::new();
    for (t, tri) in triangles.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            if edge_owner.contains_key(&(b, a)) {
                continue;
            }
            let (pa, pb) = (vertices[a], vertices[b]);
            let tag = if pa[1] == 0.0 && pb[1] == 0.0 {
                BoundaryTag::Bottom
            } else if pa[1] == 1.0 && pb[1] == 1.0 {
                BoundaryTag::Top
            } else if pa[0] == 0.0 && pb[0] == 0.0 {
                BoundaryTag::Left
            } else if pa[0] == 1.0 && pb[0] == 1.0 {
                BoundaryTag::Right
            } else {
                BoundaryTag::Hole
            };
            boundary_edges.push(BoundaryEdge { vertices: [a, b], triangle: t, tag });
        }
    }

    Ok(Mesh {
        nx,
        ny,
        vertices,
        triangles,
        boundary_edges,
        holes: holes.to_vec(),
        cell_tris,
    })
}

impl Mesh {
    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn nvertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn ntriangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertex(&self, i: usize) -> [f64; 2] {
        self.vertices[i]
    }

    pub fn triangle(&self, t: usize) -> [usize; 3] {
        self.triangles[t]
    }

    pub fn tri_coords(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn tri_area(&self, t: usize) -> f64 {
        let [p0, p1, p2] = self.tri_coords(t);
        0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn holes(&self) -> &[[f64; 4]] {
        &self.holes
    }

    /// Containing triangle and barycentric coordinates, or None for points
    /// outside the domain (including inside holes).
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, [f64; 3])> {
        let eps = 1e-12;
        if !(-eps..=1.0 + eps).contains(&x) || !(-eps..=1.0 + eps).contains(&y) {
            return None;
        }
        let i = ((x * self.nx as f64).floor() as isize).clamp(0, self.nx as isize - 1) as usize;
        let j = ((y * self.ny as f64).floor() as isize).clamp(0, self.ny as isize - 1) as usize;
        let (lower, upper) = self.cell_tris[j * self.nx + i]?;
        // Local cell coordinates decide the sub-triangle.
        let xi = x * self.nx as f64 - i as f64;
        let eta = y * self.ny as f64 - j as f64;
        let t = if xi >= eta { lower } else { upper };
        let bary = self.barycentric(t, x, y);
        Some((t, bary))
    }

    pub fn barycentric(&self, t: usize, x: f64, y: f64) -> [f64; 3] {
        let [p0, p1, p2] = self.tri_coords(t);
        let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        let l1 = ((x - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (y - p0[1])) / det;
        let l2 = ((p1[0] - p0[0]) * (y - p0[1]) - (x - p0[0]) * (p1[1] - p0[1])) / det;
        [1.0 - l1 - l2, l1, l2]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_cell_mesh() {
        let m = build_unit_square_mesh(1, 1, &[]).unwrap();
        assert_eq!(m.ntriangles(), 2);
        assert_eq!(m.nvertices(), 4);
        for t in 0..2 {
            assert!(m.tri_area(t) > 0.0);
        }
    }

    #[test]
    fn two_by_two_counts() {
        let m = build_unit_square_mesh(2, 2, &[]).unwrap();
        assert_eq!(m.ntriangles(), 8);
        assert_eq!(m.nvertices(), 9);
    }

    #[test]
    fn hole_masks_cells_and_tags_edges() {
        let m = build_unit_square_mesh(8, 8, &[[0.25, 0.25, 0.5, 0.5]]).unwrap();
        assert_eq!(m.ntriangles(), 120); // 128 - 8
        let hole_edges: Vec<_> = m
            .boundary_edges()
            .iter()
            .filter(|e| e.tag == BoundaryTag::Hole)
            .collect();
        assert_eq!(hole_edges.len(), 8); // 2 cells per side
        // Every boundary edge belongs to exactly one triangle by construction;
        // check the reverse orientation is never also boundary.
        for e in m.boundary_edges() {
            let [a, b] = e.vertices;
            assert!(!m
                .boundary_edges()
                .iter()
                .any(|f| f.vertices == [b, a]));
        }
    }

    #[test]
    fn misaligned_hole_is_rejected() {
        let err = build_unit_square_mesh(8, 8, &[[0.26, 0.25, 0.5, 0.5]]).unwrap_err();
        assert!(matches!(err, FemError::HoleNotOnGrid(..)));
    }

    #[test]
    fn all_areas_positive_and_sum_to_domain() {
        let m = build_unit_square_mesh(5, 3, &[]).unwrap();
        let total: f64 = (0..m.ntriangles()).map(|t| m.tri_area(t)).sum();
        assert!((total - 1.0).abs() < 1e-14);
        assert!((0..m.ntriangles()).all(|t| m.tri_area(t) > 0.0));
    }

    #[test]
    fn locate_points() {
        let m = build_unit_square_mesh(4, 4, &[[0.25, 0.25, 0.5, 0.5]]).unwrap();
        assert!(m.locate(0.9, 0.9).is_some());
        assert!(m.locate(0.3, 0.3).is_none()); // inside the hole
        assert!(m.locate(1.2, 0.5).is_none());
        let (t, bary) = m.locate(0.6875, 0.0625).unwrap();
        assert!(m.tri_area(t) > 0.0);
        assert!(bary.iter().all(|&l| (-1e-12..=1.0 + 1e-12).contains(&l)));
        let sum: f64 = bary.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_numbering() {
        let a = build_unit_square_mesh(6, 6, &[[0.5, 0.5, 1.0 - 1.0 / 6.0, 1.0 - 1.0 / 6.0]])
            .unwrap();
        let b = build_unit_square_mesh(6, 6, &[[0.5, 0.5, 1.0 - 1.0 / 6.0, 1.0 - 1.0 / 6.0]])
            .unwrap();
        assert_eq!(a.nvertices(), b.nvertices());
        for i in 0..a.nvertices() {
            assert_eq!(a.vertex(i), b.vertex(i));
        }
        for t in 0..a.ntriangles() {
            assert_eq!(a.triangle(t), b.triangle(t));
        }
    }
}
