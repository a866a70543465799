//! Phase-space density on a grid: Gaussian initial data, Fokker-Planck
//! evolution, Wigner transforms and snapshot formats.

pub mod grid;
pub mod io;
pub mod solver;
pub mod wigner;

pub use grid::{gaussian_wigner, grid_moments, GridGeometry, GridMoments, PhaseSpaceGrid};
pub use solver::{check_stability, evolve_fpe, evolve_fpe_with, stable_dt, FpeOptions, Splitting};
pub use wigner::{wigner_from_density, wigner_transform, DensityMatrixGrid, WignerTransform};
