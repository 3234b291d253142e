//! Numerical groundtruth, message passing neural PDE solver, training and
//! evaluation for one-dimensional PDEs.

pub mod datagen;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod grid;
pub mod model;
pub mod stencil;
pub mod timestep;
pub mod training;
pub mod validate;
pub mod weno;

pub use error::{Error, Result};
