//! Similarity graphs over image features.
//!
//! Edges come from an exact k-nearest-neighbour search under L2 distance.
//! The directed k-NN relation is symmetrized by union, and self-loops are
//! never stored; the spectral layer adds them implicitly.

use std::fmt::Write as _;

use crate::numerics::Matrix;
use crate::{par, Error, Result};

/// Undirected graph with per-node feature rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    k: usize,
    neighbors: Vec<Vec<usize>>,
    node_features: Matrix,
}

/// Origin of a node in a stitched inference graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeRole {
    Train,
    Test,
}

/// Inference graph: test nodes first, then the training nodes they pulled
/// in, in ascending training-row order.
#[derive(Clone, Debug)]
pub struct StitchedGraph {
    pub graph: Graph,
    pub roles: Vec<NodeRole>,
    /// Row index into the test matrix (for test nodes) or the train matrix.
    pub origin: Vec<usize>,
}

impl StitchedGraph {
    pub fn test_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == NodeRole::Test)
            .map(|(i, _)| i)
    }
}

/// `L x W x d` feature map, stored as `(L*W) x d` rows in row-major cell order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    cells: Matrix,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, cells: Matrix) -> Result<Self> {
        if cells.rows() != height * width {
            return Err(Error::shape(
                "FeatureMap::new",
                format!("{height}x{width} map"),
                format!("{} rows", cells.rows()),
            ));
        }
        Ok(Self {
            height,
            width,
            cells,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.cells.cols()
    }

    pub fn cells(&self) -> &Matrix {
        &self.cells
    }
}

impl Graph {
    /// Builds a graph from explicit neighbour lists, checking symmetry, range
    /// and the absence of self-loops.
    pub fn from_neighbors(k: usize, neighbors: Vec<Vec<usize>>, node_features: Matrix) -> Result<Self> {
        let n = neighbors.len();
        if node_features.rows() != n {
            return Err(Error::shape(
                "Graph::from_neighbors",
                format!("{n} nodes"),
                node_features.shape_string(),
            ));
        }
        let mut neighbors = neighbors;
        for (i, list) in neighbors.iter_mut().enumerate() {
            list.sort_unstable();
            list.dedup();
            if let Some(&j) = list.iter().find(|&&j| j >= n || j == i) {
                return Err(Error::Parameter(format!("invalid neighbour {j} of node {i}")));
            }
        }
        for (i, list) in neighbors.iter().enumerate() {
            for &j in list {
                if neighbors[j].binary_search(&i).is_err() {
                    return Err(Error::Parameter(format!("edge {i}->{j} has no reverse")));
                }
            }
        }
        Ok(Self {
            k,
            neighbors,
            node_features,
        })
    }

    fn from_selections(k: usize, selections: &[Vec<usize>], node_features: Matrix) -> Self {
        let mut neighbors = vec![Vec::new(); selections.len()];
        for (i, sel) in selections.iter().enumerate() {
            for &j in sel {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Self {
            k,
            neighbors,
            node_features,
        }
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    /// Neighbour count requested at construction.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn node_features(&self) -> &Matrix {
        &self.node_features
    }

    /// Undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, list) in self.neighbors.iter().enumerate() {
            out.extend(list.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        let n = self.n();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Parameter("not a permutation".into()));
        }
        let mut neighbors = vec![Vec::new(); n];
        let mut rows = vec![0; n];
        for i in 0..n {
            neighbors[perm[i]] = self.neighbors[i].iter().map(|&j| perm[j]).collect();
            rows[perm[i]] = i;
        }
        Graph::from_neighbors(self.k, neighbors, self.node_features.select_rows(&rows))
    }

    /// Debug export: header `n k`, then one `i j` line per undirected edge.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("{} {}\n", self.n(), self.k);
        for (i, j) in self.edges() {
            let _ = writeln!(s, "{i} {j}");
        }
        s
    }

    /// `D^-1/2 (A + I) D^-1/2 x` from the neighbour lists, where
    /// `D_ii = degree(i) + 1`.
    pub fn normalized_aggregate(&self, x: &Matrix) -> Result<Matrix> {
        self.check_rows("normalized_aggregate", x)?;
        let inv_sqrt: Vec<f64> = (0..self.n())
            .map(|i| 1.0 / ((self.degree(i) + 1) as f64).sqrt())
            .collect();
        let d = x.cols();
        let nnz: usize = self.neighbors.iter().map(|l| l.len() + 1).sum();
        let mut out = Matrix::zeros(x.rows(), d);
        par::for_each_row(out.data_mut(), d, nnz * d, |i, row| {
            let si = inv_sqrt[i];
            let w = si * si;
            for (o, &v) in row.iter_mut().zip(x.row(i)) {
                *o = w * v;
            }
            for &j in &self.neighbors[i] {
                let w = si * inv_sqrt[j];
                for (o, &v) in row.iter_mut().zip(x.row(j)) {
                    *o += w * v;
                }
            }
        });
        Ok(out)
    }

    /// Row `i` is the sum of `x_j` over `j` in `N(i)`; no self term.
    pub fn neighbor_sum(&self, x: &Matrix) -> Result<Matrix> {
        self.check_rows("neighbor_sum", x)?;
        let d = x.cols();
        let nnz: usize = self.neighbors.iter().map(Vec::len).sum();
        let mut out = Matrix::zeros(x.rows(), d);
        par::for_each_row(out.data_mut(), d, nnz * d, |i, row| {
            for &j in &self.neighbors[i] {
                for (o, &v) in row.iter_mut().zip(x.row(j)) {
                    *o += v;
                }
            }
        });
        Ok(out)
    }

    fn check_rows(&self, op: &'static str, x: &Matrix) -> Result<()> {
        if x.rows() != self.n() {
            Err(Error::shape(op, format!("graph of {} nodes", self.n()), x.shape_string()))
        } else {
            Ok(())
        }
    }
}

/// Parsed form of the edge-list debug format.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeList {
    pub n: usize,
    pub k: usize,
    pub edges: Vec<(usize, usize)>,
}

pub fn parse_edge_list(text: &str) -> Result<EdgeList> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let parse_pair = |lineno: usize, l: &str| -> Result<(usize, usize)> {
        let mut it = l.split_whitespace().map(str::parse::<usize>);
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(a)), Some(Ok(b)), None) => Ok((a, b)),
            _ => Err(Error::Parameter(format!("edge list line {}: expected two integers", lineno + 1))),
        }
    };
    let (lineno, header) = lines.next().ok_or(Error::Empty("edge list"))?;
    let (n, k) = parse_pair(lineno, header)?;
    let mut edges = Vec::new();
    for (lineno, l) in lines {
        let (i, j) = parse_pair(lineno, l)?;
        if i >= n || j >= n || i == j {
            return Err(Error::Parameter(format!("edge list line {}: bad edge {i} {j}", lineno + 1)));
        }
        edges.push((i, j));
    }
    Ok(EdgeList { n, k, edges })
}

/// Euclidean distance between feature vectors.
pub fn l2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("l2_distance", a.len(), b.len()));
    }
    Ok(l2_unchecked(a, b))
}

fn l2_unchecked(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// The `k` rows of `pool` closest to `query`, nearest first, ties to the
/// lower index. `skip` excludes one row (the query itself).
fn nearest(query: &[f64], pool: &Matrix, k: usize, skip: Option<usize>) -> Vec<usize> {
    let mut cand: Vec<(f64, usize)> = (0..pool.rows())
        .filter(|&j| Some(j) != skip)
        .map(|j| (l2_unchecked(query, pool.row(j)), j))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < cand.len() {
        cand.select_nth_unstable_by(k, cmp);
        cand.truncate(k);
    }
    cand.sort_unstable_by(cmp);
    cand.into_iter().map(|(_, j)| j).collect()
}

/// Directed k-NN selections: for each row, its `k` nearest other rows.
pub fn knn_select(features: &Matrix, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = features.rows();
    if k == 0 || k >= n {
        return Err(Error::Parameter(format!("k must be in 1..={} for {n} nodes, got {k}", n.saturating_sub(1))));
    }
    Ok(par::map_range(n, |i| nearest(features.row(i), features, k, Some(i))))
}

/// Exact k-NN graph, symmetrized by union.
pub fn knn_graph(features: &Matrix, k: usize) -> Result<Graph> {
    let sel = knn_select(features, k)?;
    Ok(Graph::from_selections(k, &sel, features.clone()))
}

/// Inference graph linking each test row to its `k` nearest training rows.
///
/// Test nodes never link to each other. Training nodes pulled in by any test
/// node are re-linked among themselves with the same k-NN rule, using
/// `min(k, included - 1)` neighbours.
pub fn stitch_test_graph(train: &Matrix, test: &Matrix, k: usize) -> Result<StitchedGraph> {
    if test.rows() == 0 {
        return Err(Error::Parameter("empty test set".into()));
    }
    if train.cols() != test.cols() {
        return Err(Error::shape("stitch_test_graph", train.shape_string(), test.shape_string()));
    }
    if k == 0 || k > train.rows() {
        return Err(Error::Parameter(format!(
            "k must be in 1..={} training rows, got {k}",
            train.rows()
        )));
    }
    let m = test.rows();
    let picks = par::map_range(m, |i| nearest(test.row(i), train, k, None));

    let mut included: Vec<usize> = picks.iter().flatten().copied().collect();
    included.sort_unstable();
    included.dedup();
    let slot = |train_row: usize| m + included.binary_search(&train_row).expect("included");

    let mut selections: Vec<Vec<usize>> = picks
        .iter()
        .map(|p| p.iter().map(|&j| slot(j)).collect())
        .collect();
    let train_feats = train.select_rows(&included);
    let inner_k = k.min(included.len() - 1);
    if inner_k > 0 {
        for sel in knn_select(&train_feats, inner_k)? {
            selections.push(sel.into_iter().map(|j| m + j).collect());
        }
    } else {
        selections.push(Vec::new());
    }

    let features = test.vstack(&train_feats)?;
    let mut roles = vec![NodeRole::Test; m];
    roles.extend(std::iter::repeat_n(NodeRole::Train, included.len()));
    let mut origin: Vec<usize> = (0..m).collect();
    origin.extend_from_slice(&included);
    Ok(StitchedGraph {
        graph: Graph::from_selections(k, &selections, features),
        roles,
        origin,
    })
}

/// Treats each cell of a feature map as a node and links cells by k-NN.
pub fn feature_map_to_graph(map: &FeatureMap, k: usize) -> Result<Graph> {
    if map.cells.rows() < 2 {
        return Err(Error::Parameter("feature map needs at least 2 cells".into()));
    }
    knn_graph(&map.cells, k)
}
