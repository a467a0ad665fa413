use super::config::{Activation, ConvType, Mode, ModelSpec};
use super::loss::{pose_loss_with_grad, LossReport};
use crate::graph::Graph;
use crate::layers::{mean_readout, mean_readout_backward, GcnCache, GcnLayer, LinearHead, WlCache, WlLayer};
use crate::numerics::Matrix;
use crate::{par, Error, Pose, Result, Rng};

#[derive(Clone, Debug, PartialEq)]
pub enum ConvLayer {
    Gcn(GcnLayer),
    Wl(WlLayer),
}

#[derive(Clone, Debug)]
enum ConvCache {
    Gcn(GcnCache),
    Wl(WlCache),
}

impl ConvLayer {
    fn new(conv: ConvType, d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        match conv {
            ConvType::Gcn => ConvLayer::Gcn(GcnLayer::new(d_in, d_out, rng)),
            ConvType::Wl => ConvLayer::Wl(WlLayer::new(d_in, d_out, rng)),
        }
    }

    pub fn forward(&self, g: &Graph, x: &Matrix) -> Result<Matrix> {
        match self {
            ConvLayer::Gcn(l) => l.forward(g, x),
            ConvLayer::Wl(l) => l.forward(g, x),
        }
    }

    fn forward_cached(&self, g: &Graph, x: &Matrix) -> Result<(Matrix, ConvCache)> {
        Ok(match self {
            ConvLayer::Gcn(l) => {
                let (o, c) = l.forward_cached(g, x)?;
                (o, ConvCache::Gcn(c))
            }
            ConvLayer::Wl(l) => {
                let (o, c) = l.forward_cached(g, x)?;
                (o, ConvCache::Wl(c))
            }
        })
    }

    /// Parameter gradients in [`params`](Self::params) order, plus the input
    /// gradient.
    fn backward(&self, g: &Graph, cache: &ConvCache, upstream: &Matrix) -> Result<(Vec<Matrix>, Matrix)> {
        match (self, cache) {
            (ConvLayer::Gcn(l), ConvCache::Gcn(c)) => {
                let (gt, gx) = l.backward(g, c, upstream)?;
                Ok((vec![gt], gx))
            }
            (ConvLayer::Wl(l), ConvCache::Wl(c)) => {
                let (g1, g2, gx) = l.backward(g, c, upstream)?;
                Ok((vec![g1, g2], gx))
            }
            _ => Err(Error::State("cache belongs to a different layer type".into())),
        }
    }

    fn params(&self) -> Vec<&Matrix> {
        match self {
            ConvLayer::Gcn(l) => vec![&l.theta],
            ConvLayer::Wl(l) => vec![&l.theta1, &l.theta2],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            ConvLayer::Gcn(l) => vec![&mut l.theta],
            ConvLayer::Wl(l) => vec![&mut l.theta1, &mut l.theta2],
        }
    }

    fn grads_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            ConvLayer::Gcn(l) => vec![&mut l.grad_theta],
            ConvLayer::Wl(l) => vec![&mut l.grad_theta1, &mut l.grad_theta2],
        }
    }

    fn grads(&self) -> Vec<&Matrix> {
        match self {
            ConvLayer::Gcn(l) => vec![&l.grad_theta],
            ConvLayer::Wl(l) => vec![&l.grad_theta1, &l.grad_theta2],
        }
    }
}

/// Three graph convolutions followed by a 3-d position head and a 4-d
/// quaternion head.
#[derive(Clone, Debug, PartialEq)]
pub struct GnnModel {
    spec: ModelSpec,
    convs: Vec<ConvLayer>,
    pos_head: LinearHead,
    ori_head: LinearHead,
}

/// Gradients of one loss evaluation, parameters in
/// [`GnnModel::params`] order.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: Vec<Matrix>,
    /// Gradient with respect to the node features (node-pose) or `None` for
    /// multi-graph evaluations.
    pub input: Option<Matrix>,
}

struct Trace {
    caches: Vec<ConvCache>,
    /// Conv outputs before the activation.
    pre: Vec<Matrix>,
    /// Per-node embeddings after the last convolution.
    embedding: Matrix,
}

impl GnnModel {
    /// Fresh model with uniform fan-in/fan-out weights and zero head biases.
    pub fn new(spec: ModelSpec, rng: &mut Rng) -> Self {
        let mut d_in = spec.d_feat;
        let mut convs = Vec::with_capacity(3);
        for &w in &spec.widths {
            convs.push(ConvLayer::new(spec.conv, d_in, w, rng));
            d_in = w;
        }
        let pos_head = LinearHead::new(d_in, 3, rng);
        let ori_head = LinearHead::new(d_in, 4, rng);
        Self {
            spec,
            convs,
            pos_head,
            ori_head,
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn convs(&self) -> &[ConvLayer] {
        &self.convs
    }

    pub fn pos_head(&self) -> &LinearHead {
        &self.pos_head
    }

    pub fn ori_head(&self) -> &LinearHead {
        &self.ori_head
    }

    /// All parameter matrices: each convolution's weights in layer order,
    /// then position weight, position bias, orientation weight, orientation
    /// bias.
    pub fn params(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = self.convs.iter().flat_map(|c| c.params()).collect();
        out.extend([&self.pos_head.weight, &self.pos_head.bias, &self.ori_head.weight, &self.ori_head.bias]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = self.convs.iter_mut().flat_map(|c| c.params_mut()).collect();
        out.extend([
            &mut self.pos_head.weight,
            &mut self.pos_head.bias,
            &mut self.ori_head.weight,
            &mut self.ori_head.bias,
        ]);
        out
    }

    /// Gradient buffers, aligned with [`params`](Self::params).
    pub fn grads(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = self.convs.iter().flat_map(|c| c.grads()).collect();
        out.extend([
            &self.pos_head.grad_weight,
            &self.pos_head.grad_bias,
            &self.ori_head.grad_weight,
            &self.ori_head.grad_bias,
        ]);
        out
    }

    fn grads_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = self.convs.iter_mut().flat_map(|c| c.grads_mut()).collect();
        out.extend([
            &mut self.pos_head.grad_weight,
            &mut self.pos_head.grad_bias,
            &mut self.ori_head.grad_weight,
            &mut self.ori_head.grad_bias,
        ]);
        out
    }

    pub fn zero_grad(&mut self) {
        self.grads_mut().into_iter().for_each(|g| g.fill(0.0));
    }

    /// Adds `grads` into the gradient buffers.
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        let bufs = self.grads_mut();
        if bufs.len() != grads.params.len() {
            return Err(Error::State(format!(
                "expected {} parameter gradients, got {}",
                bufs.len(),
                grads.params.len()
            )));
        }
        for (b, g) in bufs.into_iter().zip(&grads.params) {
            b.add_scaled(g, 1.0)?;
        }
        Ok(())
    }

    /// Replaces every parameter, checking shapes.
    pub fn set_params(&mut self, values: Vec<Matrix>) -> Result<()> {
        let slots = self.params_mut();
        if slots.len() != values.len() {
            return Err(Error::Incompatible(format!(
                "model has {} parameter matrices, got {}",
                slots.len(),
                values.len()
            )));
        }
        for (i, (slot, v)) in slots.into_iter().zip(values).enumerate() {
            if slot.shape() != v.shape() {
                return Err(Error::Incompatible(format!(
                    "parameter {i}: expected {}, got {}",
                    slot.shape_string(),
                    v.shape_string()
                )));
            }
            *slot = v;
        }
        Ok(())
    }

    fn activate(&self, layer: usize, m: &Matrix) -> Matrix {
        match self.spec.activation {
            Activation::Relu if layer + 1 < self.convs.len() => m.relu(),
            _ => m.clone(),
        }
    }

    fn check_features(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.spec.d_feat {
            return Err(Error::shape(
                "model input",
                format!("feature width {}", self.spec.d_feat),
                x.shape_string(),
            ));
        }
        Ok(())
    }

    /// Node embeddings after the convolution stack.
    pub fn embed(&self, g: &Graph, x: &Matrix) -> Result<Matrix> {
        self.check_features(x)?;
        let mut h = x.clone();
        for (l, conv) in self.convs.iter().enumerate() {
            h = self.activate(l, &conv.forward(g, &h)?);
        }
        Ok(h)
    }

    fn embed_traced(&self, g: &Graph, x: &Matrix) -> Result<Trace> {
        self.check_features(x)?;
        let mut caches = Vec::with_capacity(self.convs.len());
        let mut pre = Vec::with_capacity(self.convs.len());
        let mut h = x.clone();
        for (l, conv) in self.convs.iter().enumerate() {
            let (out, cache) = conv.forward_cached(g, &h)?;
            h = self.activate(l, &out);
            caches.push(cache);
            pre.push(out);
        }
        Ok(Trace {
            caches,
            pre,
            embedding: h,
        })
    }

    fn embed_backward(&self, g: &Graph, trace: &Trace, upstream: Matrix) -> Result<(Vec<Matrix>, Matrix)> {
        if trace.caches.len() != self.convs.len() {
            return Err(Error::State("trace does not match the layer stack".into()));
        }
        let mut grad = upstream;
        let mut per_layer = Vec::with_capacity(self.convs.len());
        for l in (0..self.convs.len()).rev() {
            if self.spec.activation == Activation::Relu && l + 1 < self.convs.len() {
                grad = Matrix::relu_backward(&trace.pre[l], &grad).map_err(|e| Error::State(e.to_string()))?;
            }
            let (pg, gx) = self.convs[l].backward(g, &trace.caches[l], &grad)?;
            per_layer.push(pg);
            grad = gx;
        }
        per_layer.reverse();
        Ok((per_layer.into_iter().flatten().collect(), grad))
    }

    fn heads(&self, h: &Matrix) -> Result<(Matrix, Matrix)> {
        Ok((self.pos_head.forward(h)?, self.ori_head.forward(h)?))
    }

    fn heads_backward(&self, h: &Matrix, d_pos: &Matrix, d_ori: &Matrix) -> Result<([Matrix; 4], Matrix)> {
        let (pw, pb, px) = self.pos_head.backward(h, d_pos)?;
        let (ow, ob, ox) = self.ori_head.backward(h, d_ori)?;
        Ok(([pw, pb, ow, ob], px.add(&ox)?))
    }

    fn require(&self, mode: Mode) -> Result<()> {
        if self.spec.mode != mode {
            return Err(Error::Parameter(format!(
                "model is configured for {:?}, not {mode:?}",
                self.spec.mode
            )));
        }
        Ok(())
    }

    /// Per-node `(n x 3, n x 4)` predictions.
    pub fn forward_node_pose(&self, g: &Graph, x: &Matrix) -> Result<(Matrix, Matrix)> {
        self.require(Mode::NodePose)?;
        self.heads(&self.embed(g, x)?)
    }

    /// One `(position, quaternion)` row per graph: convolutions over each
    /// graph's own node features, mean readout, heads.
    pub fn forward_graph_pose(&self, graphs: &[Graph]) -> Result<(Matrix, Matrix)> {
        self.require(Mode::GraphPose)?;
        if graphs.is_empty() {
            return Err(Error::Parameter("no graphs to evaluate".into()));
        }
        let pooled = par::map_slice(graphs, |g| mean_readout(&self.embed(g, g.node_features())?));
        let mut stacked = Matrix::zeros(0, 0);
        for p in pooled {
            stacked = stacked.vstack(&p?)?;
        }
        self.heads(&stacked)
    }

    /// Node-pose loss and gradients on one graph; `mask` restricts the loss
    /// to labelled rows.
    pub fn node_pose_gradients(
        &self,
        g: &Graph,
        x: &Matrix,
        truth: &[Pose],
        alpha: f64,
        mask: Option<&[usize]>,
    ) -> Result<(LossReport, Gradients)> {
        self.require(Mode::NodePose)?;
        let trace = self.embed_traced(g, x)?;
        let (pos, ori) = self.heads(&trace.embedding)?;
        let (report, d_pos, d_ori) = pose_loss_with_grad(&pos, &ori, truth, alpha, mask)?;
        let (head_grads, d_h) = self.heads_backward(&trace.embedding, &d_pos, &d_ori)?;
        let (mut params, d_x) = self.embed_backward(g, &trace, d_h)?;
        params.extend(head_grads);
        Ok((
            report,
            Gradients {
                params,
                input: Some(d_x),
            },
        ))
    }

    /// Loss of one graph treated as a batch of size one, scaled by `weight`.
    fn single_graph_gradients(&self, g: &Graph, truth: &Pose, alpha: f64, weight: f64) -> Result<(LossReport, Vec<Matrix>, Matrix)> {
        let trace = self.embed_traced(g, g.node_features())?;
        let pooled = mean_readout(&trace.embedding)?;
        let (pos, ori) = self.heads(&pooled)?;
        let (report, d_pos, d_ori) = pose_loss_with_grad(&pos, &ori, std::slice::from_ref(truth), alpha, None)?;
        let (head_grads, d_pooled) = self.heads_backward(&pooled, &d_pos.scale(weight), &d_ori.scale(weight))?;
        let d_h = mean_readout_backward(g.n(), &d_pooled)?;
        let (mut params, d_x) = self.embed_backward(g, &trace, d_h)?;
        params.extend(head_grads);
        Ok((report, params, d_x))
    }

    /// Mean graph-pose loss over `graphs` and its gradients. Graphs are
    /// processed in parallel and reduced in index order. The input gradient
    /// stacks each graph's node-feature gradient in graph order.
    pub fn graph_pose_gradients(&self, graphs: &[Graph], truth: &[Pose], alpha: f64) -> Result<(LossReport, Gradients)> {
        self.require(Mode::GraphPose)?;
        if graphs.is_empty() {
            return Err(Error::Parameter("no graphs to evaluate".into()));
        }
        if graphs.len() != truth.len() {
            return Err(Error::shape("graph_pose_gradients", format!("{} graphs", graphs.len()), format!("{} labels", truth.len())));
        }
        let weight = 1.0 / graphs.len() as f64;
        let idx: Vec<usize> = (0..graphs.len()).collect();
        let results = par::map_slice(&idx, |&i| self.single_graph_gradients(&graphs[i], &truth[i], alpha, weight));
        let mut params: Option<Vec<Matrix>> = None;
        let mut input = Matrix::zeros(0, 0);
        let (mut pos, mut ori) = (0.0, 0.0);
        for r in results {
            let (report, grads, d_x) = r?;
            input = input.vstack(&d_x)?;
            pos += report.position_term;
            ori += report.orientation_term;
            match params.as_mut() {
                None => params = Some(grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&grads) {
                        a.add_scaled(g, 1.0)?;
                    }
                }
            }
        }
        Ok((
            LossReport::from_terms(pos * weight, ori * weight, alpha),
            Gradients {
                params: params.expect("non-empty"),
                input: Some(input),
            },
        ))
    }
}
