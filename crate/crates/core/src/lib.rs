//! Low-rank compression of perturbation ensembles and fast solvers for the
//! perturbed linear systems they define.

pub mod error;
pub mod fem;
pub mod lowrank;
pub mod numerics;
pub mod perturbed_solver;
pub mod socp;
pub mod spde;

pub use error::{Error, Result};
