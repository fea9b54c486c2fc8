//! Sparse and dense linear-algebra kernels.

pub mod csr;
pub mod dense;
pub mod eigen;
pub mod factor;
pub mod mtx;
pub mod vector;

pub use csr::CsrMatrix;
pub use dense::{dense_cholesky, DenseMatrix, DENSE_LIMIT};
pub use eigen::{condition_number_dense, symmetric_eigenvalues};
pub use factor::LowerFactor;
