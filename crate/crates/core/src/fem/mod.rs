//! 2D structured triangular finite elements on the unit square.
//!
//! Meshes are regular nx-by-ny grids in which every cell is split along the
//! bottom-left-to-top-right diagonal; rectangular holes are realized as cell
//! masks whose internal edges are tagged as boundary. Lagrange spaces of
//! degree 1 and 2 are supported, with degree-matched quadrature rules so that
//! polynomial integrands are integrated exactly.

mod assemble;
mod factor;
mod io;
mod mesh;
mod observe;
mod quad;
mod space;

pub use assemble::{
    advection, apply_dirichlet, boundary_mass, elliptic, load_vector, mass, neumann_load,
    streamline_diffusion, weighted_stiffness, AnisoTensor, ConstrainedSpd, DirichletBc,
};
pub use factor::{rect_factor_elliptic, rect_factor_mass, RectFactor};
pub use io::{read_field, read_vector_field, write_field, write_mesh, write_vector_field};
pub use mesh::{build_unit_square_mesh, BoundaryEdge, BoundaryTag, Mesh};
pub use observe::point_observation;
pub use quad::{EdgeRule, TriRule};
pub use space::{BasisTable, ElemGeom, FnSpace};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("hole rectangle [{0}, {1}] x [{2}, {3}] is not representable on the grid")]
    HoleNotOnGrid(f64, f64, f64, f64),
    #[error("observation point {index} at ({x}, {y}) lies outside the mesh")]
    PointOutsideDomain { index: usize, x: f64, y: f64 },
    #[error("negative weight {value:.3e} in element {elem} at quadrature point {qp}")]
    NegativeWeight { elem: usize, qp: usize, value: f64 },
    #[error("diffusion tensor is not symmetric positive definite")]
    TensorNotSpd,
    #[error("no boundary edges carry tag {tag:?}")]
    UnknownBoundaryTag { tag: BoundaryTag },
    #[error("field has {got} values but the space has {expected} dofs")]
    FieldLengthMismatch { expected: usize, got: usize },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Solver(#[from] crate::linalg::LinalgError),
}
