use serde::{Deserialize, Serialize};

use crate::numerics::Matrix;
use crate::{Error, Pose, Result};

/// Mean pose loss and its two terms.
///
/// `total` is always computed as `position_term + alpha * orientation_term`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub position_term: f64,
    pub orientation_term: f64,
}

impl LossReport {
    pub(crate) fn from_terms(position_term: f64, orientation_term: f64, alpha: f64) -> Self {
        Self {
            total: position_term + alpha * orientation_term,
            position_term,
            orientation_term,
        }
    }
}

fn check(pred_pos: &Matrix, pred_ori: &Matrix, truth: &[Pose], mask: Option<&[usize]>) -> Result<Vec<usize>> {
    if pred_pos.cols() != 3 || pred_ori.cols() != 4 {
        return Err(Error::shape("pose_loss", pred_pos.shape_string(), pred_ori.shape_string()));
    }
    if pred_pos.rows() != truth.len() || pred_ori.rows() != truth.len() {
        return Err(Error::shape(
            "pose_loss",
            format!("{} labels", truth.len()),
            format!("{} / {} predictions", pred_pos.rows(), pred_ori.rows()),
        ));
    }
    let rows: Vec<usize> = match mask {
        Some(m) => m.to_vec(),
        None => (0..truth.len()).collect(),
    };
    if rows.is_empty() {
        return Err(Error::Parameter("pose loss over an empty node set".into()));
    }
    if let Some(&bad) = rows.iter().find(|&&i| i >= truth.len()) {
        return Err(Error::Parameter(format!("mask index {bad} out of range")));
    }
    Ok(rows)
}

fn residual<const N: usize>(pred: &[f64], truth: &[f64; N]) -> ([f64; N], f64) {
    let r: [f64; N] = std::array::from_fn(|i| pred[i] - truth[i]);
    let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
    (r, norm)
}

/// `mean(||p_hat - p|| + alpha ||q_hat - q||)` over the masked rows.
///
/// Predicted quaternions are compared raw; labels are unit quaternions.
pub fn pose_loss(
    pred_pos: &Matrix,
    pred_ori: &Matrix,
    truth: &[Pose],
    alpha: f64,
    mask: Option<&[usize]>,
) -> Result<LossReport> {
    let rows = check(pred_pos, pred_ori, truth, mask)?;
    let (mut pos, mut ori) = (0.0, 0.0);
    for &i in &rows {
        pos += residual(pred_pos.row(i), &truth[i].position).1;
        ori += residual(pred_ori.row(i), &truth[i].orientation).1;
    }
    let m = rows.len() as f64;
    Ok(LossReport::from_terms(pos / m, ori / m, alpha))
}

/// Loss plus its gradient with respect to both prediction matrices.
/// Rows outside the mask get zero gradient; a zero residual uses the zero
/// subgradient.
pub fn pose_loss_with_grad(
    pred_pos: &Matrix,
    pred_ori: &Matrix,
    truth: &[Pose],
    alpha: f64,
    mask: Option<&[usize]>,
) -> Result<(LossReport, Matrix, Matrix)> {
    let rows = check(pred_pos, pred_ori, truth, mask)?;
    let m = rows.len() as f64;
    let mut d_pos = Matrix::zeros(pred_pos.rows(), 3);
    let mut d_ori = Matrix::zeros(pred_ori.rows(), 4);
    let (mut pos, mut ori) = (0.0, 0.0);
    for &i in &rows {
        let (rp, np) = residual(pred_pos.row(i), &truth[i].position);
        let (rq, nq) = residual(pred_ori.row(i), &truth[i].orientation);
        pos += np;
        ori += nq;
        if np > 0.0 {
            for (g, r) in d_pos.row_mut(i).iter_mut().zip(rp) {
                *g += r / (np * m);
            }
        }
        if nq > 0.0 {
            for (g, r) in d_ori.row_mut(i).iter_mut().zip(rq) {
                *g += alpha * r / (nq * m);
            }
        }
    }
    Ok((LossReport::from_terms(pos / m, ori / m, alpha), d_pos, d_ori))
}
