use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvType {
    /// Spectral, symmetric-normalized aggregation with self-loops.
    Gcn,
    /// Spatial, separate central and neighbour weights.
    Wl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One node per image; per-node regression.
    NodePose,
    /// One graph per image; mean-pooled per-graph regression.
    GraphPose,
}

/// Nonlinearity after the first two convolutions. The third convolution
/// always feeds the heads directly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

/// Loss-weight presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Environment {
    Indoor,
    Outdoor,
}

impl Environment {
    pub fn alpha(self) -> f64 {
        match self {
            Environment::Indoor => 10.0,
            Environment::Outdoor => 200.0,
        }
    }
}

/// Layer shapes of a [`GnnModel`](super::GnnModel).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub conv: ConvType,
    pub mode: Mode,
    pub activation: Activation,
    pub d_feat: usize,
    pub widths: [usize; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub k: usize,
    pub alpha: f64,
    pub learning_rate: f64,
    /// Heavy-ball momentum coefficient 0.9 when set.
    pub momentum: bool,
    pub epochs: usize,
    pub seed: u64,
    /// Graphs per update in graph-pose mode. Ignored by node-pose, which is
    /// always full batch.
    pub batch_size: usize,
    pub conv: ConvType,
    pub mode: Mode,
    pub activation: Activation,
    pub widths: [usize; 3],
}

pub const MOMENTUM: f64 = 0.9;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 8,
            alpha: Environment::Indoor.alpha(),
            learning_rate: 1e-3,
            momentum: false,
            epochs: 200,
            seed: 0,
            batch_size: 1,
            conv: ConvType::Wl,
            mode: Mode::NodePose,
            activation: Activation::Relu,
            widths: [256, 128, 64],
        }
    }
}

impl TrainConfig {
    pub fn with_environment(mut self, env: Environment) -> Self {
        self.alpha = env.alpha();
        self
    }

    pub fn model_spec(&self, d_feat: usize) -> ModelSpec {
        ModelSpec {
            conv: self.conv,
            mode: self.mode,
            activation: self.activation,
            d_feat,
            widths: self.widths,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be >= 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.widths.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        Ok(())
    }
}
