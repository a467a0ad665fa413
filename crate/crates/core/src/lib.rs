//! Camera pose regression with graph neural networks.
//!
//! Two pipelines are provided:
//!
//! * **node-pose**: every image is a node of a k-nearest-neighbour similarity
//!   graph built over precomputed image features. Graph convolutions
//!   aggregate neighbouring images and two linear heads regress a position
//!   and a quaternion per node.
//! * **graph-pose**: every image is its own small graph whose nodes are the
//!   cells of an `L x W x d` feature map. Node embeddings are mean-pooled
//!   into one pose per graph.
//!
//! All arithmetic is `f64` and all gradients are written out by hand, so the
//! whole model can be checked against central finite differences.
//!
//! With the default `parallel` feature, neighbour search, dense products and
//! per-graph work fan out over rayon. Every parallel path reduces in a fixed
//! order, so results are bit-identical to the sequential build.

pub mod data;
pub mod error;
pub mod graph;
pub mod layers;
pub mod model;
pub mod numerics;
pub mod par;
pub mod pose;

pub use error::{Error, Result};
pub use graph::{FeatureMap, Graph, NodeRole, StitchedGraph};
pub use model::{ConvType, GnnModel, LossReport, Mode, TrainConfig};
pub use numerics::{Matrix, Rng};
pub use pose::Pose;
