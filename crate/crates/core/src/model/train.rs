use super::config::{Mode, TrainConfig, MOMENTUM};
use super::loss::LossReport;
use super::network::{GnnModel, Gradients};
use crate::graph::Graph;
use crate::numerics::Matrix;
use crate::{Error, Pose, Result, Rng};

/// Training inputs for either pipeline.
#[derive(Clone, Copy, Debug)]
pub enum TrainData<'a> {
    /// One graph over all training images, trained full batch.
    Nodes { graph: &'a Graph, poses: &'a [Pose] },
    /// One small graph per image.
    Graphs { graphs: &'a [Graph], poses: &'a [Pose] },
}

/// Plain gradient descent with optional heavy-ball momentum.
struct Sgd {
    learning_rate: f64,
    velocity: Option<Vec<Matrix>>,
}

impl Sgd {
    fn new(cfg: &TrainConfig, model: &GnnModel) -> Self {
        let velocity = cfg.momentum.then(|| {
            model
                .params()
                .iter()
                .map(|p| Matrix::zeros(p.rows(), p.cols()))
                .collect()
        });
        Self {
            learning_rate: cfg.learning_rate,
            velocity,
        }
    }

    fn step(&mut self, model: &mut GnnModel) -> Result<()> {
        let grads: Vec<Matrix> = model.grads().into_iter().cloned().collect();
        let lr = self.learning_rate;
        match &mut self.velocity {
            None => {
                for (p, g) in model.params_mut().into_iter().zip(&grads) {
                    p.add_scaled(g, -lr)?;
                }
            }
            Some(vel) => {
                for ((p, g), v) in model.params_mut().into_iter().zip(&grads).zip(vel.iter_mut()) {
                    *v = v.scale(MOMENTUM);
                    v.add_scaled(g, 1.0)?;
                    p.add_scaled(v, -lr)?;
                }
            }
        }
        Ok(())
    }
}

/// Salt separating the shuffle stream from the initialisation stream.
const SHUFFLE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Trains `model` in place and returns one loss report per epoch.
///
/// Node-pose: each epoch is one full-batch step over every node of the
/// training graph; the report is the loss before the step.
/// Graph-pose: each epoch visits the graphs in a seeded shuffled order in
/// batches of `cfg.batch_size`; the report is the mean pre-step loss over
/// the epoch's graphs.
pub fn train(model: &mut GnnModel, data: TrainData<'_>, cfg: &TrainConfig) -> Result<Vec<LossReport>> {
    cfg.validate()?;
    if cfg.mode != model.spec().mode {
        return Err(Error::Parameter(format!(
            "config mode {:?} does not match model mode {:?}",
            cfg.mode,
            model.spec().mode
        )));
    }
    let mut opt = Sgd::new(cfg, model);
    let mut history = Vec::with_capacity(cfg.epochs);
    let diverged = |epoch: usize| Error::Divergence {
        epoch,
        learning_rate: cfg.learning_rate,
    };
    // Overflow inside a product surfaces as a numeric error; report it as
    // divergence of this epoch.
    let in_epoch = |epoch: usize, e: Error| match e {
        Error::Numeric(_) => diverged(epoch),
        other => other,
    };

    match data {
        TrainData::Nodes { graph, poses } => {
            if model.spec().mode != Mode::NodePose {
                return Err(Error::Parameter("graph-pose model given node data".into()));
            }
            for epoch in 0..cfg.epochs {
                let (report, grads) = model
                    .node_pose_gradients(graph, graph.node_features(), poses, cfg.alpha, None)
                    .map_err(|e| in_epoch(epoch, e))?;
                if !report.total.is_finite() {
                    return Err(diverged(epoch));
                }
                apply(model, &mut opt, &grads).map_err(|e| in_epoch(epoch, e))?;
                history.push(report);
            }
        }
        TrainData::Graphs { graphs, poses } => {
            if model.spec().mode != Mode::GraphPose {
                return Err(Error::Parameter("node-pose model given graph data".into()));
            }
            if graphs.is_empty() || graphs.len() != poses.len() {
                return Err(Error::Parameter(format!(
                    "{} graphs with {} poses",
                    graphs.len(),
                    poses.len()
                )));
            }
            let mut rng = Rng::new(cfg.seed ^ SHUFFLE_SALT);
            let mut order: Vec<usize> = (0..graphs.len()).collect();
            for epoch in 0..cfg.epochs {
                rng.shuffle(&mut order);
                let (mut pos, mut ori) = (0.0, 0.0);
                for batch in order.chunks(cfg.batch_size) {
                    let gs: Vec<Graph> = batch.iter().map(|&i| graphs[i].clone()).collect();
                    let ps: Vec<Pose> = batch.iter().map(|&i| poses[i]).collect();
                    let (report, grads) = model
                        .graph_pose_gradients(&gs, &ps, cfg.alpha)
                        .map_err(|e| in_epoch(epoch, e))?;
                    if !report.total.is_finite() {
                        return Err(diverged(epoch));
                    }
                    pos += report.position_term * batch.len() as f64;
                    ori += report.orientation_term * batch.len() as f64;
                    apply(model, &mut opt, &grads).map_err(|e| in_epoch(epoch, e))?;
                }
                let n = graphs.len() as f64;
                history.push(LossReport::from_terms(pos / n, ori / n, cfg.alpha));
            }
        }
    }
    Ok(history)
}

fn apply(model: &mut GnnModel, opt: &mut Sgd, grads: &Gradients) -> Result<()> {
    model.zero_grad();
    model.accumulate(grads)?;
    opt.step(model)?;
    if model.params().iter().all(|p| p.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric("parameter update produced a non-finite value".into()))
    }
}
