//! Piecewise-constant conductivity reconstruction on polygonal partitions of
//! the unit square from boundary voltage data.

pub mod geometry;
pub mod meshing;
pub mod solver;
pub mod fem;
pub mod gradients;
pub mod measurements;
pub mod recon;
pub mod verify;

pub use fem::{Conductivity, ForwardSolver};
pub use geometry::{Partition, Point2, Polygon};
pub use measurements::{phantom, synthesize, MeasurementSet};
pub use meshing::{coarse_mesh, refine, MeshOptions, TriMesh};
pub use recon::{parse_guess_spec, reconstruct, InitialGuess, ReconConfig};

/// Any error raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] geometry::GeometryError),
    #[error(transparent)]
    Mesh(#[from] meshing::MeshError),
    #[error(transparent)]
    Solve(#[from] solver::SolveError),
    #[error(transparent)]
    Fem(#[from] fem::FemError),
    #[error(transparent)]
    Gradient(#[from] gradients::GradientError),
    #[error(transparent)]
    Measurement(#[from] measurements::MeasurementError),
    #[error(transparent)]
    Recon(#[from] recon::ReconError),
    #[error(transparent)]
    ReconFailed(#[from] Box<recon::ReconFailure>),
}
