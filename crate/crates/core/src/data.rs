//! Feature/pose datasets: file I/O, the synthetic scene generator and the
//! feature-map fixture used by the graph-pose pipeline.

mod io;
mod synth;

pub use io::{
    load_dataset, load_feature_maps, parse_dataset, parse_feature_maps, render_dataset, render_feature_maps,
    save_dataset, save_feature_maps,
};
pub use synth::{
    feature_map_fixture, generate_poses, generate_synthetic, mean_nearest_spacing, FeatureMapConfig, SynthConfig,
    Trajectory,
};

use serde::{Deserialize, Serialize};

use crate::graph::{feature_map_to_graph, FeatureMap, Graph};
use crate::numerics::Matrix;
use crate::{Error, Pose, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub(crate) fn flag(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }

    pub(crate) fn from_flag(s: &str) -> Option<Self> {
        match s {
            "0" => Some(Split::Train),
            "1" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureOrigin {
    Ingested,
    Synthetic,
}

impl FeatureOrigin {
    pub(crate) fn as_str(self) -> &'static str {
        match self {
            FeatureOrigin::Ingested => "ingested",
            FeatureOrigin::Synthetic => "synthetic",
        }
    }
}

/// Per-image features with ground-truth poses and a train/test split.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: Matrix,
    pub poses: Vec<Pose>,
    pub split: Vec<Split>,
    pub origin: FeatureOrigin,
}

fn rows_with(split: &[Split], which: Split) -> Vec<usize> {
    split.iter().enumerate().filter(|(_, s)| **s == which).map(|(i, _)| i).collect()
}

impl Dataset {
    pub fn new(name: String, features: Matrix, poses: Vec<Pose>, split: Vec<Split>, origin: FeatureOrigin) -> Result<Self> {
        if features.rows() != poses.len() || poses.len() != split.len() {
            return Err(Error::Data(format!(
                "{} feature rows, {} poses, {} split flags",
                features.rows(),
                poses.len(),
                split.len()
            )));
        }
        Ok(Self {
            name,
            features,
            poses,
            split,
            origin,
        })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn indices(&self, which: Split) -> Vec<usize> {
        rows_with(&self.split, which)
    }

    /// Features and poses of one split, in file order.
    pub fn part(&self, which: Split) -> (Matrix, Vec<Pose>) {
        let idx = self.indices(which);
        let poses = idx.iter().map(|&i| self.poses[i]).collect();
        (self.features.select_rows(&idx), poses)
    }
}

/// Per-image feature maps with poses and a split.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMapDataset {
    pub name: String,
    pub maps: Vec<FeatureMap>,
    pub poses: Vec<Pose>,
    pub split: Vec<Split>,
    pub origin: FeatureOrigin,
}

impl FeatureMapDataset {
    pub fn new(name: String, maps: Vec<FeatureMap>, poses: Vec<Pose>, split: Vec<Split>, origin: FeatureOrigin) -> Result<Self> {
        if maps.len() != poses.len() || poses.len() != split.len() {
            return Err(Error::Data(format!(
                "{} maps, {} poses, {} split flags",
                maps.len(),
                poses.len(),
                split.len()
            )));
        }
        if let Some(first) = maps.first() {
            let shape = (first.height(), first.width(), first.depth());
            if maps.iter().any(|m| (m.height(), m.width(), m.depth()) != shape) {
                return Err(Error::Data("feature maps differ in shape".into()));
            }
        }
        Ok(Self {
            name,
            maps,
            poses,
            split,
            origin,
        })
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    /// `(L, W, d)` of the maps, if any.
    pub fn shape(&self) -> Option<(usize, usize, usize)> {
        self.maps.first().map(|m| (m.height(), m.width(), m.depth()))
    }

    pub fn indices(&self, which: Split) -> Vec<usize> {
        rows_with(&self.split, which)
    }

    /// k-NN graphs and poses of one split.
    pub fn graphs(&self, which: Split, k: usize) -> Result<(Vec<Graph>, Vec<Pose>)> {
        let idx = self.indices(which);
        let maps: Vec<&FeatureMap> = idx.iter().map(|&i| &self.maps[i]).collect();
        let graphs = crate::par::map_slice(&maps, |m| feature_map_to_graph(m, k))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok((graphs, idx.iter().map(|&i| self.poses[i]).collect()))
    }
}
