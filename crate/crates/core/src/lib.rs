//! Semidefinite relaxations of box-constrained submodular quadratic
//! minimization, moment-based worst-case bounds built on them, and the
//! primal-dual conic solver they are lowered to.

pub mod conic;
pub mod covbound;
pub mod error;
pub mod graphs;
pub mod linalg;
pub mod moments;
pub mod qsmb;
pub mod symmat;

pub use error::{Error, Result};
