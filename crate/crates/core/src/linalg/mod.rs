//! Dense linear algebra for small matrices: arithmetic, covariance, and a
//! one-sided Jacobi SVD.

mod matrix;
mod svd;

pub use matrix::{covariance, matmul, Matrix};
pub use svd::{svd, SvdResult};
