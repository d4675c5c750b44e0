//! Harmonic Hermitian metrics with prescribed pole behaviour on flat bundles
//! over punctured surfaces.

pub mod analysis;
pub mod cli_io;
pub mod energy_forms;
pub mod error;
pub mod field;
pub mod flat_bundle;
pub mod grid;
pub(crate) mod kernel;
pub mod model_metric;
pub mod pd_geometry;
pub mod problem;
pub mod solver;

pub use error::{Error, Result, SolveError};
pub use num_complex::Complex64;
