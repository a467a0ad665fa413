use serde::{Deserialize, Serialize};

use super::config::Mode;
use super::network::GnnModel;
use crate::graph::{stitch_test_graph, Graph};
use crate::numerics::Matrix;
use crate::pose::{median, orientation_error, position_error, quat_normalize};
use crate::{Error, Pose, Result};

/// Median localization errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub median_position_m: f64,
    pub median_orientation_deg: f64,
}

/// Turns raw head outputs into poses, normalizing the quaternions.
pub fn poses_from_outputs(pos: &Matrix, ori: &Matrix) -> Result<Vec<Pose>> {
    pos.iter_rows()
        .zip(ori.iter_rows())
        .map(|(p, q)| {
            Ok(Pose {
                position: [p[0], p[1], p[2]],
                orientation: quat_normalize([q[0], q[1], q[2], q[3]])?,
            })
        })
        .collect()
}

/// Poses of unseen images by stitching them onto their `k` nearest
/// training images. Only features are consumed; no labels enter this path.
pub fn infer_node_pose(model: &GnnModel, train_features: &Matrix, test_features: &Matrix, k: usize) -> Result<Vec<Pose>> {
    let stitched = stitch_test_graph(train_features, test_features, k)?;
    let (pos, ori) = model.forward_node_pose(&stitched.graph, stitched.graph.node_features())?;
    let test: Vec<usize> = stitched.test_nodes().collect();
    poses_from_outputs(&pos.select_rows(&test), &ori.select_rows(&test))
}

pub fn infer_graph_pose(model: &GnnModel, graphs: &[Graph]) -> Result<Vec<Pose>> {
    if model.spec().mode != Mode::GraphPose {
        return Err(Error::Parameter("not a graph-pose model".into()));
    }
    let (pos, ori) = model.forward_graph_pose(graphs)?;
    poses_from_outputs(&pos, &ori)
}

/// Median position and orientation error over paired predictions.
pub fn evaluate(predictions: &[Pose], truths: &[Pose]) -> Result<Metrics> {
    if predictions.len() != truths.len() {
        return Err(Error::Parameter(format!(
            "{} predictions for {} ground-truth poses",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Parameter("nothing to evaluate".into()));
    }
    let pos: Vec<f64> = predictions.iter().zip(truths).map(|(p, t)| position_error(p, t)).collect();
    let ori = predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| orientation_error(p, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(Metrics {
        median_position_m: median(&pos)?,
        median_orientation_deg: median(&ori)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(x: f64) -> Pose {
        Pose::new([x, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn evaluate_cases() {
        let truth = vec![at(0.0), at(0.0), at(0.0)];
        assert_eq!(
            evaluate(&truth, &truth).unwrap(),
            Metrics {
                median_position_m: 0.0,
                median_orientation_deg: 0.0
            }
        );
        let pred = vec![at(1.0), at(2.0), at(9.0)];
        assert_eq!(evaluate(&pred, &truth).unwrap().median_position_m, 2.0);
        assert!(evaluate(&pred[..2], &truth).is_err());
        assert!(evaluate(&[], &[]).is_err());
    }
}
