//! Graph convolution layers, linear heads and the mean readout, each with a
//! hand-written backward pass.
//!
//! Layers are immutable during a forward/backward pair: `forward_cached`
//! returns the activations the backward pass needs, and `backward` returns
//! parameter gradients instead of writing them. The model sums those into
//! the per-parameter gradient buffers in a fixed order.

use crate::graph::Graph;
use crate::numerics::Matrix;
use crate::{Error, Result, Rng};

/// Uniform `±sqrt(6 / (d_in + d_out))` initialisation.
pub fn glorot(d_in: usize, d_out: usize, rng: &mut Rng) -> Matrix {
    let limit = (6.0 / (d_in + d_out) as f64).sqrt();
    Matrix::from_fn(d_in, d_out, |_, _| rng.uniform_range(-limit, limit))
}

fn check_input(op: &'static str, x: &Matrix, d_in: usize) -> Result<()> {
    if x.cols() != d_in {
        return Err(Error::shape(op, format!("layer input width {d_in}"), x.shape_string()));
    }
    Ok(())
}

fn check_cache(op: &str, cached: &Matrix, upstream: &Matrix, d_out: usize) -> Result<()> {
    if cached.rows() != upstream.rows() || upstream.cols() != d_out {
        return Err(Error::State(format!(
            "{op}: cached activation {} does not match upstream gradient {}",
            cached.shape_string(),
            upstream.shape_string()
        )));
    }
    Ok(())
}

/// Spectral layer: `X' = D^-1/2 (A + I) D^-1/2 X theta`.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnLayer {
    pub theta: Matrix,
    pub grad_theta: Matrix,
}

#[derive(Clone, Debug)]
pub struct GcnCache {
    aggregated: Matrix,
}

impl GcnLayer {
    pub fn new(d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        Self::from_theta(glorot(d_in, d_out, rng))
    }

    pub fn from_theta(theta: Matrix) -> Self {
        let grad_theta = Matrix::zeros(theta.rows(), theta.cols());
        Self { theta, grad_theta }
    }

    pub fn forward(&self, g: &Graph, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(g, x)?.0)
    }

    pub fn forward_cached(&self, g: &Graph, x: &Matrix) -> Result<(Matrix, GcnCache)> {
        check_input("gcn_forward", x, self.theta.rows())?;
        let aggregated = g.normalized_aggregate(x)?;
        let out = aggregated.matmul(&self.theta)?;
        Ok((out, GcnCache { aggregated }))
    }

    /// Returns `(grad_theta, grad_x)`. The propagation matrix is symmetric,
    /// so the input gradient re-uses the forward aggregation.
    pub fn backward(&self, g: &Graph, cache: &GcnCache, upstream: &Matrix) -> Result<(Matrix, Matrix)> {
        check_cache("gcn_backward", &cache.aggregated, upstream, self.theta.cols())?;
        let grad_theta = cache.aggregated.matmul_tn(upstream)?;
        let grad_x = g.normalized_aggregate(&upstream.matmul_nt(&self.theta)?)?;
        Ok((grad_theta, grad_x))
    }
}

/// Spatial layer: `x'_i = x_i theta1 + sum_{j in N(i)} x_j theta2`.
#[derive(Clone, Debug, PartialEq)]
pub struct WlLayer {
    pub theta1: Matrix,
    pub theta2: Matrix,
    pub grad_theta1: Matrix,
    pub grad_theta2: Matrix,
}

#[derive(Clone, Debug)]
pub struct WlCache {
    input: Matrix,
    neighbor_sum: Matrix,
}

impl WlLayer {
    pub fn new(d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        let theta1 = glorot(d_in, d_out, rng);
        let theta2 = glorot(d_in, d_out, rng);
        Self::from_thetas(theta1, theta2).expect("equal shapes")
    }

    pub fn from_thetas(theta1: Matrix, theta2: Matrix) -> Result<Self> {
        if theta1.shape() != theta2.shape() {
            return Err(Error::shape("WlLayer", theta1.shape_string(), theta2.shape_string()));
        }
        let (r, c) = theta1.shape();
        Ok(Self {
            theta1,
            theta2,
            grad_theta1: Matrix::zeros(r, c),
            grad_theta2: Matrix::zeros(r, c),
        })
    }

    pub fn forward(&self, g: &Graph, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(g, x)?.0)
    }

    pub fn forward_cached(&self, g: &Graph, x: &Matrix) -> Result<(Matrix, WlCache)> {
        check_input("wl_forward", x, self.theta1.rows())?;
        let neighbor_sum = g.neighbor_sum(x)?;
        let out = x
            .matmul(&self.theta1)?
            .add(&neighbor_sum.matmul(&self.theta2)?)?;
        Ok((
            out,
            WlCache {
                input: x.clone(),
                neighbor_sum,
            },
        ))
    }

    /// Returns `(grad_theta1, grad_theta2, grad_x)`.
    pub fn backward(&self, g: &Graph, cache: &WlCache, upstream: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
        check_cache("wl_backward", &cache.input, upstream, self.theta1.cols())?;
        let grad_theta1 = cache.input.matmul_tn(upstream)?;
        let grad_theta2 = cache.neighbor_sum.matmul_tn(upstream)?;
        // adjacency is symmetric: d/dX of (A X) theta2 is A (U theta2^T)
        let grad_x = upstream
            .matmul_nt(&self.theta1)?
            .add(&g.neighbor_sum(&upstream.matmul_nt(&self.theta2)?)?)?;
        Ok((grad_theta1, grad_theta2, grad_x))
    }
}

/// Fully connected head `y = x W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearHead {
    pub weight: Matrix,
    /// `1 x d_out`.
    pub bias: Matrix,
    pub grad_weight: Matrix,
    pub grad_bias: Matrix,
}

impl LinearHead {
    pub fn new(d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        Self::from_parts(glorot(d_in, d_out, rng), Matrix::zeros(1, d_out)).expect("shapes agree")
    }

    pub fn from_parts(weight: Matrix, bias: Matrix) -> Result<Self> {
        if bias.rows() != 1 || bias.cols() != weight.cols() {
            return Err(Error::shape("LinearHead", weight.shape_string(), bias.shape_string()));
        }
        Ok(Self {
            grad_weight: Matrix::zeros(weight.rows(), weight.cols()),
            grad_bias: Matrix::zeros(1, weight.cols()),
            weight,
            bias,
        })
    }

    pub fn d_out(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        check_input("head_forward", x, self.weight.rows())?;
        x.matmul(&self.weight)?.add_row_broadcast(self.bias.data())
    }

    /// Returns `(grad_weight, grad_bias, grad_x)`; `input` is the forward input.
    pub fn backward(&self, input: &Matrix, upstream: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
        check_cache("head_backward", input, upstream, self.d_out())?;
        let grad_weight = input.matmul_tn(upstream)?;
        let grad_bias = Matrix::row_vector(&upstream.col_sums());
        let grad_x = upstream.matmul_nt(&self.weight)?;
        Ok((grad_weight, grad_bias, grad_x))
    }
}

/// Column-wise mean over nodes, as a `1 x d` row.
pub fn mean_readout(x: &Matrix) -> Result<Matrix> {
    if x.rows() == 0 {
        return Err(Error::Parameter("mean readout of a graph with no nodes".into()));
    }
    let n = x.rows() as f64;
    Ok(Matrix::row_vector(&x.col_sums().iter().map(|s| s / n).collect::<Vec<_>>()))
}

/// Spreads a `1 x d` readout gradient evenly over `n` nodes.
pub fn mean_readout_backward(n: usize, upstream: &Matrix) -> Result<Matrix> {
    if upstream.rows() != 1 || n == 0 {
        return Err(Error::State(format!(
            "mean readout backward over {n} nodes with gradient {}",
            upstream.shape_string()
        )));
    }
    let scaled: Vec<f64> = upstream.data().iter().map(|g| g / n as f64).collect();
    Ok(Matrix::from_fn(n, upstream.cols(), |_, j| scaled[j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::knn_graph;
    use crate::graph::tests::{dense_aggregate, random_features};
    use crate::numerics::finite_diff_grad;
    use crate::Rng;
    use proptest::prelude::*;

    fn rel_close(a: &Matrix, b: &Matrix) -> bool {
        a.data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| (x - y).abs() <= 1e-7_f64.max(1e-5 * x.abs().max(y.abs())))
    }

    fn two_node() -> (Graph, Matrix) {
        let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        (Graph::from_neighbors(1, vec![vec![1], vec![0]], x.clone()).unwrap(), x)
    }

    /// Per-node loop form of the spatial update.
    fn wl_oracle(g: &Graph, x: &Matrix, t1: &Matrix, t2: &Matrix) -> Matrix {
        Matrix::from_fn(x.rows(), t1.cols(), |i, c| {
            let mut s = 0.0;
            for p in 0..x.cols() {
                s += x.get(i, p) * t1.get(p, c);
            }
            for &j in g.neighbors(i) {
                for p in 0..x.cols() {
                    s += x.get(j, p) * t2.get(p, c);
                }
            }
            s
        })
    }

    #[test]
    fn gcn_forward_cases() {
        let x = Matrix::from_rows(&[[0.3, -1.2, 4.0]]).unwrap();
        let g = Graph::from_neighbors(1, vec![vec![]], x.clone()).unwrap();
        let layer = GcnLayer::from_theta(Matrix::identity(3));
        assert_eq!(layer.forward(&g, &x).unwrap(), x);

        let (g, x) = two_node();
        let out = GcnLayer::from_theta(Matrix::identity(2)).forward(&g, &x).unwrap();
        assert!(out.max_abs_diff(&Matrix::from_rows(&[[0.5, 0.5], [0.5, 0.5]]).unwrap()) <= 1e-15);

        let mut rng = Rng::new(1);
        let x = random_features(&mut rng, 6, 4);
        let g = knn_graph(&x, 2).unwrap();
        let layer = GcnLayer::new(4, 3, &mut rng);
        let oracle = dense_aggregate(&g, &x).matmul(&layer.theta).unwrap();
        assert!(layer.forward(&g, &x).unwrap().max_abs_diff(&oracle) <= 1e-12);
        assert!(matches!(layer.forward(&g, &Matrix::zeros(6, 5)), Err(Error::Shape { .. })));
    }

    #[test]
    fn wl_forward_cases() {
        let mut rng = Rng::new(2);
        let x = random_features(&mut rng, 5, 3);
        let edgeless = Graph::from_neighbors(1, vec![vec![]; 5], x.clone()).unwrap();
        let layer = WlLayer::new(3, 2, &mut rng);
        assert_eq!(layer.forward(&edgeless, &x).unwrap(), x.matmul(&layer.theta1).unwrap());

        let g = knn_graph(&x, 2).unwrap();
        let no_nb = WlLayer::from_thetas(layer.theta1.clone(), Matrix::zeros(3, 2)).unwrap();
        assert_eq!(no_nb.forward(&g, &x).unwrap(), x.matmul(&layer.theta1).unwrap());

        let x = random_features(&mut rng, 6, 4);
        let g = knn_graph(&x, 2).unwrap();
        let layer = WlLayer::new(4, 3, &mut rng);
        let oracle = wl_oracle(&g, &x, &layer.theta1, &layer.theta2);
        assert!(layer.forward(&g, &x).unwrap().max_abs_diff(&oracle) <= 1e-12);
    }

    #[test]
    fn wl_shared_weights_is_sum_aggregation() {
        let mut rng = Rng::new(3);
        let x = random_features(&mut rng, 7, 3);
        let g = knn_graph(&x, 3).unwrap();
        let t = glorot(3, 2, &mut rng);
        let layer = WlLayer::from_thetas(t.clone(), t.clone()).unwrap();
        let summed = Matrix::from_fn(7, 3, |i, c| {
            x.get(i, c) + g.neighbors(i).iter().map(|&j| x.get(j, c)).sum::<f64>()
        });
        let oracle = summed.matmul(&t).unwrap();
        assert!(layer.forward(&g, &x).unwrap().max_abs_diff(&oracle) <= 1e-12);
    }

    #[test]
    fn readout_cases() {
        let row = Matrix::from_rows(&[[1.0, -2.0, 3.0]]).unwrap();
        assert_eq!(mean_readout(&row).unwrap(), row);
        let two = Matrix::from_rows(&[[0.0, 2.0], [2.0, 0.0]]).unwrap();
        assert_eq!(mean_readout(&two).unwrap(), Matrix::from_rows(&[[1.0, 1.0]]).unwrap());
        let mut rng = Rng::new(4);
        let x = random_features(&mut rng, 49, 64);
        let got = mean_readout(&x).unwrap();
        for c in 0..64 {
            let s: f64 = (0..49).map(|i| x.get(i, c)).sum();
            assert!((got.get(0, c) - s / 49.0).abs() <= 1e-12);
        }
        assert!(matches!(mean_readout(&Matrix::zeros(0, 3)), Err(Error::Parameter(_))));
    }

    #[test]
    fn head_cases() {
        let bias = Matrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        let head = LinearHead::from_parts(Matrix::zeros(4, 3), bias.clone()).unwrap();
        let out = head.forward(&Matrix::from_fn(5, 4, |i, j| (i * j) as f64)).unwrap();
        assert!(out.iter_rows().all(|r| r == bias.data()));

        let head = LinearHead::from_parts(Matrix::identity(3), Matrix::zeros(1, 3)).unwrap();
        let x = Matrix::from_fn(2, 3, |i, j| i as f64 - j as f64);
        assert_eq!(head.forward(&x).unwrap(), x);

        let mut rng = Rng::new(5);
        let head = LinearHead::from_parts(glorot(4, 3, &mut rng), Matrix::row_vector(&[0.1, -0.2, 0.3])).unwrap();
        let x = random_features(&mut rng, 6, 4);
        let oracle = Matrix::from_fn(6, 3, |i, c| {
            (0..4).map(|p| x.get(i, p) * head.weight.get(p, c)).sum::<f64>() + head.bias.get(0, c)
        });
        assert!(head.forward(&x).unwrap().max_abs_diff(&oracle) <= 1e-12);
    }

    /// Random linear functional `sum(U .* f(x))` for gradient checks.
    fn probe(rng: &mut Rng, r: usize, c: usize) -> Matrix {
        random_features(rng, r, c)
    }

    fn dot(a: &Matrix, b: &Matrix) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn gcn_gradients_match_finite_differences() {
        let mut rng = Rng::new(6);
        let x = random_features(&mut rng, 5, 3);
        let g = knn_graph(&x, 2).unwrap();
        let layer = GcnLayer::new(3, 2, &mut rng);
        let u = probe(&mut rng, 5, 2);
        let (_, cache) = layer.forward_cached(&g, &x).unwrap();
        let (gt, gx) = layer.backward(&g, &cache, &u).unwrap();
        let fd_t = finite_diff_grad(|t| dot(&u, &GcnLayer::from_theta(t.clone()).forward(&g, &x).unwrap()), &layer.theta, 1e-5).unwrap();
        let fd_x = finite_diff_grad(|xx| dot(&u, &layer.forward(&g, xx).unwrap()), &x, 1e-5).unwrap();
        assert!(rel_close(&gt, &fd_t));
        assert!(rel_close(&gx, &fd_x));
    }

    #[test]
    fn wl_gradients_match_finite_differences() {
        let mut rng = Rng::new(7);
        let x = random_features(&mut rng, 5, 3);
        let g = knn_graph(&x, 2).unwrap();
        let layer = WlLayer::new(3, 2, &mut rng);
        let u = probe(&mut rng, 5, 2);
        let (_, cache) = layer.forward_cached(&g, &x).unwrap();
        let (g1, g2, gx) = layer.backward(&g, &cache, &u).unwrap();
        let fd1 = finite_diff_grad(
            |t| dot(&u, &WlLayer::from_thetas(t.clone(), layer.theta2.clone()).unwrap().forward(&g, &x).unwrap()),
            &layer.theta1,
            1e-5,
        )
        .unwrap();
        let fd2 = finite_diff_grad(
            |t| dot(&u, &WlLayer::from_thetas(layer.theta1.clone(), t.clone()).unwrap().forward(&g, &x).unwrap()),
            &layer.theta2,
            1e-5,
        )
        .unwrap();
        let fdx = finite_diff_grad(|xx| dot(&u, &layer.forward(&g, xx).unwrap()), &x, 1e-5).unwrap();
        assert!(rel_close(&g1, &fd1));
        assert!(rel_close(&g2, &fd2));
        assert!(rel_close(&gx, &fdx));
    }

    #[test]
    fn head_and_readout_gradients() {
        let mut rng = Rng::new(8);
        let head = LinearHead::new(4, 3, &mut rng);
        let x = random_features(&mut rng, 6, 4);
        let u = probe(&mut rng, 1, 3);
        let f = |h: &LinearHead, xx: &Matrix| dot(&u, &h.forward(&mean_readout(xx).unwrap()).unwrap());
        let pooled = mean_readout(&x).unwrap();
        let (gw, gb, gp) = head.backward(&pooled, &u).unwrap();
        let gx = mean_readout_backward(6, &gp).unwrap();
        let fdw = finite_diff_grad(|w| f(&LinearHead::from_parts(w.clone(), head.bias.clone()).unwrap(), &x), &head.weight, 1e-5).unwrap();
        let fdb = finite_diff_grad(|b| f(&LinearHead::from_parts(head.weight.clone(), b.clone()).unwrap(), &x), &head.bias, 1e-5).unwrap();
        let fdx = finite_diff_grad(|xx| f(&head, xx), &x, 1e-5).unwrap();
        assert!(rel_close(&gw, &fdw));
        assert!(rel_close(&gb, &fdb));
        assert!(rel_close(&gx, &fdx));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = Rng::new(9);
        let x = random_features(&mut rng, 4, 3);
        let g = knn_graph(&x, 1).unwrap();
        let wl = WlLayer::new(3, 2, &mut rng);
        let (_, cache) = wl.forward_cached(&g, &x).unwrap();
        let (a, b, c) = wl.backward(&g, &cache, &Matrix::zeros(4, 2)).unwrap();
        assert!(a.max_abs() == 0.0 && b.max_abs() == 0.0 && c.max_abs() == 0.0);
    }

    #[test]
    fn single_weight_perturbation_is_local() {
        // The head is linear in its weights, so each weight's gradient is
        // independent of the others' values.
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let u = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let base = LinearHead::from_parts(Matrix::zeros(2, 2), Matrix::zeros(1, 2)).unwrap();
        let mut moved = base.clone();
        moved.weight.set(0, 0, 5.0);
        let (g0, _, _) = base.backward(&x, &u).unwrap();
        let (g1, _, _) = moved.backward(&x, &u).unwrap();
        assert_eq!(g0, g1);
        assert_eq!(g0, Matrix::from_rows(&[[1.0, 0.0], [2.0, 0.0]]).unwrap());
    }

    #[test]
    fn mismatched_cache_is_state_error() {
        let mut rng = Rng::new(10);
        let x = random_features(&mut rng, 4, 3);
        let g = knn_graph(&x, 1).unwrap();
        let layer = GcnLayer::new(3, 2, &mut rng);
        let (_, cache) = layer.forward_cached(&g, &x).unwrap();
        assert!(matches!(layer.backward(&g, &cache, &Matrix::zeros(3, 2)), Err(Error::State(_))));
        assert!(matches!(mean_readout_backward(3, &Matrix::zeros(2, 2)), Err(Error::State(_))));
    }

    proptest! {
        #[test]
        fn layers_are_permutation_equivariant(seed in any::<u64>(), n in 3usize..12) {
            let mut rng = Rng::new(seed);
            let x = random_features(&mut rng, n, 3);
            let g = knn_graph(&x, 2).unwrap();
            let mut perm: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut perm);
            let gp = g.permuted(&perm).unwrap();
            let xp = gp.node_features().clone();
            let gcn = GcnLayer::new(3, 2, &mut rng);
            let wl = WlLayer::new(3, 2, &mut rng);
            for (a, b) in [
                (gcn.forward(&g, &x).unwrap(), gcn.forward(&gp, &xp).unwrap()),
                (wl.forward(&g, &x).unwrap(), wl.forward(&gp, &xp).unwrap()),
            ] {
                for i in 0..n {
                    for c in 0..2 {
                        prop_assert!((a.get(i, c) - b.get(perm[i], c)).abs() <= 1e-12);
                    }
                }
            }
        }
    }
}
