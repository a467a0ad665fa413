use super::Matrix;
use crate::{Error, Result};

/// Central-difference gradient of a scalar function of a matrix.
///
/// Each entry is `(f(x + eps e) - f(x - eps e)) / (2 eps)`.
pub fn finite_diff_grad<F>(mut f: F, at: &Matrix, eps: f64) -> Result<Matrix>
where
    F: FnMut(&Matrix) -> f64,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Parameter(format!("eps must be positive, got {eps}")));
    }
    let mut x = at.clone();
    let mut grad = Matrix::zeros(at.rows(), at.cols());
    for idx in 0..at.data().len() {
        let orig = x.data()[idx];
        x.data_mut()[idx] = orig + eps;
        let plus = f(&x);
        x.data_mut()[idx] = orig - eps;
        let minus = f(&x);
        x.data_mut()[idx] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "function value not finite at entry {idx}"
            )));
        }
        grad.data_mut()[idx] = (plus - minus) / (2.0 * eps);
    }
    Ok(grad)
}
