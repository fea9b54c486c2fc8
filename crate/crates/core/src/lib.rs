//! Learned sparse preconditioners for conjugate gradient on FEM systems.

pub mod bench;
pub mod error;
pub mod fem;
pub mod gnn;
pub mod mesh;
pub mod pcg;
pub mod precond;
pub mod sparse;
pub mod train;

pub use error::{Error, Result};
