use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use posegnn::data::Trajectory;
use posegnn::model::{Activation, Environment};
use posegnn::{ConvType, Mode, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "posegnn", version, about = "Camera pose regression with graph neural networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset.
    Gen(GenArgs),
    /// Train a model and write a checkpoint, a loss CSV and a manifest line.
    Train(TrainArgs),
    /// Median pose errors of a checkpoint on a dataset's test split.
    Eval(EvalArgs),
    /// Train and evaluate once per neighbour count.
    SweepK(SweepArgs),
    /// Write the training KNN graph as an edge list.
    ExportGraph(ExportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Node,
    Graph,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Node => Mode::NodePose,
            ModeArg::Graph => Mode::GraphPose,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ConvArg {
    Gcn,
    Wl,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ActivationArg {
    Relu,
    None,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum EnvArg {
    Indoor,
    Outdoor,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TrajectoryArg {
    Grid,
    Loop,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    #[arg(long)]
    pub n_train: usize,
    #[arg(long)]
    pub n_test: usize,
    /// Feature dimension.
    #[arg(long, default_value_t = 64)]
    pub d: usize,
    #[arg(long, value_enum, default_value = "grid")]
    pub trajectory: TrajectoryArg,
    /// Standard deviation of the Gaussian feature noise.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    /// Length scale of the pose-to-feature embedding.
    #[arg(long, default_value_t = 4.0)]
    pub smoothness: f64,
    /// Distance between neighbouring trajectory poses, in meters.
    #[arg(long, default_value_t = 1.0)]
    pub spacing: f64,
    /// Feature-map rows (graph mode).
    #[arg(long, default_value_t = 7)]
    pub height: usize,
    /// Feature-map columns (graph mode).
    #[arg(long, default_value_t = 7)]
    pub width: usize,
    #[arg(long, env = "POSEGNN_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long, short)]
    pub out: PathBuf,
}

impl GenArgs {
    pub fn trajectory(&self) -> Trajectory {
        match self.trajectory {
            TrajectoryArg::Grid => Trajectory::Grid,
            TrajectoryArg::Loop => Trajectory::Loop,
        }
    }
}

fn parse_widths(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated widths, got {s:?}"));
    }
    let mut out = [0; 3];
    for (slot, p) in out.iter_mut().zip(parts) {
        *slot = p.trim().parse().map_err(|_| format!("bad width {p:?}"))?;
    }
    Ok(out)
}

/// Hyperparameters shared by `train` and `sweep-k`.
#[derive(Clone, Debug, Args)]
pub struct HyperArgs {
    #[arg(long, value_enum, default_value = "wl")]
    pub conv: ConvArg,
    /// Neighbour count.
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    /// Orientation weight; overrides the `--env` preset.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Orientation weight preset: indoor 10, outdoor 200.
    #[arg(long, value_enum, default_value = "indoor")]
    pub env: EnvArg,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Heavy-ball momentum 0.9.
    #[arg(long)]
    pub momentum: bool,
    #[arg(long, value_enum, default_value = "relu")]
    pub activation: ActivationArg,
    /// Widths of the three convolutions.
    #[arg(long, value_parser = parse_widths, default_value = "256,128,64")]
    pub widths: [usize; 3],
    /// Graphs per step in graph mode.
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,
    #[arg(long, env = "POSEGNN_SEED", default_value_t = 0)]
    pub seed: u64,
}

impl HyperArgs {
    pub fn config(&self, mode: Mode) -> TrainConfig {
        let env = match self.env {
            EnvArg::Indoor => Environment::Indoor,
            EnvArg::Outdoor => Environment::Outdoor,
        };
        let mut cfg = TrainConfig {
            k: self.k,
            learning_rate: self.lr,
            momentum: self.momentum,
            epochs: self.epochs,
            seed: self.seed,
            batch_size: self.batch_size,
            conv: match self.conv {
                ConvArg::Gcn => ConvType::Gcn,
                ConvArg::Wl => ConvType::Wl,
            },
            mode,
            activation: match self.activation {
                ActivationArg::Relu => Activation::Relu,
                ActivationArg::None => Activation::None,
            },
            widths: self.widths,
            ..TrainConfig::default()
        }
        .with_environment(env);
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        cfg
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset file.
    pub data: PathBuf,
    /// Expected dataset kind; inferred from the file when omitted.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Checkpoint path.
    #[arg(long, short, default_value = "model.ckpt")]
    pub out: PathBuf,
    /// Per-epoch loss CSV; defaults to the checkpoint path with `.loss.csv`.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// Run manifest, one JSON object appended per run.
    #[arg(long, default_value = "runs.jsonl")]
    pub manifest: PathBuf,
    /// Do not print per-epoch losses.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset file.
    pub data: PathBuf,
    #[arg(long, short)]
    pub checkpoint: PathBuf,
    /// Neighbour count at inference; defaults to the training value.
    #[arg(long)]
    pub k: Option<usize>,
    /// Metrics CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Dataset file.
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long, default_value_t = 1)]
    pub k_min: usize,
    #[arg(long, default_value_t = 15)]
    pub k_max: usize,
    #[arg(long, default_value = "sweep.csv")]
    pub csv: PathBuf,
    /// Also write a whitespace-separated table for gnuplot.
    #[arg(long)]
    pub gnuplot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Node dataset file.
    pub data: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn widths_parse() {
        assert_eq!(parse_widths("8, 4,2"), Ok([8, 4, 2]));
        assert!(parse_widths("8,4").is_err());
        assert!(parse_widths("8,x,2").is_err());
    }

    #[test]
    fn explicit_alpha_beats_preset() {
        let cli = Cli::try_parse_from(["posegnn", "train", "d.txt", "--env", "outdoor"]).unwrap();
        let Command::Train(a) = cli.command else { panic!() };
        assert_eq!(a.hyper.config(Mode::NodePose).alpha, 200.0);
        let cli = Cli::try_parse_from(["posegnn", "train", "d.txt", "--env", "outdoor", "--alpha", "3"]).unwrap();
        let Command::Train(a) = cli.command else { panic!() };
        assert_eq!(a.hyper.config(Mode::NodePose).alpha, 3.0);
    }
}
