//! Fast-marching Eikonal solvers on Cartesian grids and triangle meshes.
//!
//! The wavefront engine ([`engine`]) is shared by every domain and takes a
//! pluggable local solver: first/second-order upwind updates on grids
//! ([`grid_solvers`]), the planar triangle update on meshes
//! ([`mesh_solver`]), or a trained network ([`neural`]). The remaining
//! modules generate training data, train the networks and measure accuracy.

pub mod bench;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod field;
pub mod grid;
pub mod grid_solvers;
pub mod mesh;
pub mod mesh_solver;
pub mod neural;
pub mod nn;

pub use error::{Error, Result};
