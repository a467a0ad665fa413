//! Node-pose and graph-pose models, the pose loss, training and inference.

mod checkpoint;
mod config;
mod infer;
mod loss;
mod network;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Activation, ConvType, Environment, Mode, ModelSpec, TrainConfig};
pub use infer::{evaluate, infer_graph_pose, infer_node_pose, poses_from_outputs, Metrics};
pub use loss::{pose_loss, pose_loss_with_grad, LossReport};
pub use network::{ConvLayer, GnnModel, Gradients};
pub use train::{train, TrainData};
