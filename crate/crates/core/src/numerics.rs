//! Dense row-major matrices, the seeded generator, and the finite-difference
//! gradient oracle.

mod finite_diff;
mod matrix;
mod rng;

pub use finite_diff::finite_diff_grad;
pub use matrix::Matrix;
pub use rng::Rng;

use crate::Result;

/// `a * b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.matmul(b)
}

/// Elementwise `max(0, x)`.
pub fn relu(m: &Matrix) -> Matrix {
    m.relu()
}
