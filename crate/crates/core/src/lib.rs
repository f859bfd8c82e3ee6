//! Coherent quantum LQG controller synthesis by gradient descent over the
//! Hamiltonian parameterization `u = (R, b, e)` of physically realizable
//! controllers.

pub mod calculus;
pub mod closed_loop;
pub mod error;
pub mod fixtures;
pub mod io;
pub mod matlib;
pub mod model;
pub mod optimizer;
pub mod par;

pub use error::{Error, Result};
pub use matlib::{CcrMatrix, RealMatrix};
pub use model::{ControllerParams, Dims, PlantModel, Triple};
pub use optimizer::SolverConfig;
