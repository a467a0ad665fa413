use std::fs;
use std::path::Path;
use std::time::Instant;

use posegnn::data::{
    feature_map_fixture, generate_synthetic, parse_dataset, parse_feature_maps, save_dataset, save_feature_maps, Dataset,
    FeatureMapConfig, FeatureMapDataset, Split, SynthConfig,
};
use posegnn::graph::knn_graph;
use posegnn::model::{
    evaluate, infer_graph_pose, infer_node_pose, load_checkpoint, save_checkpoint, train, Metrics, TrainData,
};
use posegnn::{GnnModel, LossReport, Mode, Rng, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::args::{EvalArgs, ExportArgs, GenArgs, ModeArg, SweepArgs, TrainArgs};
use crate::output::{append_manifest, loss_rows, sha256_hex, write_rows, DatasetRef, EvalRow, Manifest};
use crate::{CliError, CliResult};

/// A dataset file of either kind.
pub enum Loaded {
    Nodes(Dataset),
    Maps(FeatureMapDataset),
}

impl Loaded {
    pub fn mode(&self) -> Mode {
        match self {
            Loaded::Nodes(_) => Mode::NodePose,
            Loaded::Maps(_) => Mode::GraphPose,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Loaded::Nodes(d) => d.dim(),
            Loaded::Maps(d) => d.shape().map_or(0, |s| s.2),
        }
    }

    /// Largest usable neighbour count.
    pub fn max_k(&self) -> usize {
        match self {
            Loaded::Nodes(d) => d.indices(Split::Train).len().saturating_sub(1),
            Loaded::Maps(d) => d.shape().map_or(0, |(l, w, _)| l * w - 1),
        }
    }
}

/// Reads a dataset and returns it with the raw bytes. The kind comes from
/// the first non-comment line: `n d` for nodes, `m L W d` for feature maps.
pub fn load(path: &Path) -> CliResult<(Loaded, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| CliError::Failed(posegnn::Error::Io(e)))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Output(format!("{}: not UTF-8 text", path.display())))?;
    let header_tokens = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .map_or(0, |l| l.split_whitespace().count());
    let loaded = if header_tokens == 4 {
        Loaded::Maps(parse_feature_maps(&text, path)?)
    } else {
        Loaded::Nodes(parse_dataset(&text, path)?)
    };
    Ok((loaded, bytes))
}

fn check_mode(expected: Option<ModeArg>, loaded: &Loaded, path: &Path) -> CliResult<()> {
    match expected {
        Some(m) if Mode::from(m) != loaded.mode() => Err(CliError::Usage(format!(
            "--mode {m:?} given but {} holds {} data",
            path.display(),
            mode_name(loaded.mode())
        ))),
        _ => Ok(()),
    }
}

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::NodePose => "node",
        Mode::GraphPose => "graph",
    }
}

fn conv_name(c: posegnn::ConvType) -> &'static str {
    match c {
        posegnn::ConvType::Gcn => "gcn",
        posegnn::ConvType::Wl => "wl",
    }
}

pub fn cmd_gen(a: &GenArgs) -> CliResult<()> {
    let name = a.name.clone();
    match a.mode {
        ModeArg::Node => {
            let mut ds = generate_synthetic(&SynthConfig {
                n_train: a.n_train,
                n_test: a.n_test,
                d: a.d,
                trajectory: a.trajectory(),
                feature_noise_sigma: a.sigma,
                embed_smoothness: a.smoothness,
                spacing: a.spacing,
                seed: a.seed,
            })?;
            if let Some(n) = name {
                ds.name = n;
            }
            save_dataset(&ds, &a.out)?;
            println!(
                "wrote {}: {} images ({} train, {} test), d = {}",
                a.out.display(),
                ds.len(),
                ds.indices(Split::Train).len(),
                ds.indices(Split::Test).len(),
                ds.dim()
            );
        }
        ModeArg::Graph => {
            let mut ds = feature_map_fixture(&FeatureMapConfig {
                n_train: a.n_train,
                n_test: a.n_test,
                height: a.height,
                width: a.width,
                d: a.d,
                trajectory: a.trajectory(),
                feature_noise_sigma: a.sigma,
                embed_smoothness: a.smoothness,
                spacing: a.spacing,
                seed: a.seed,
            })?;
            if let Some(n) = name {
                ds.name = n;
            }
            save_feature_maps(&ds, &a.out)?;
            println!(
                "wrote {}: {} images of {}x{}x{} feature maps ({} train, {} test)",
                a.out.display(),
                ds.len(),
                a.height,
                a.width,
                a.d,
                ds.indices(Split::Train).len(),
                ds.indices(Split::Test).len()
            );
        }
    }
    Ok(())
}

/// Builds, trains and returns a fresh model.
pub fn fit(data: &Loaded, cfg: &TrainConfig) -> posegnn::Result<(GnnModel, Vec<LossReport>)> {
    let mut model = GnnModel::new(cfg.model_spec(data.dim()), &mut Rng::new(cfg.seed));
    let history = match data {
        Loaded::Nodes(ds) => {
            let (x, poses) = ds.part(Split::Train);
            let graph = knn_graph(&x, cfg.k)?;
            train(&mut model, TrainData::Nodes { graph: &graph, poses: &poses }, cfg)?
        }
        Loaded::Maps(ds) => {
            let (graphs, poses) = ds.graphs(Split::Train, cfg.k)?;
            train(&mut model, TrainData::Graphs { graphs: &graphs, poses: &poses }, cfg)?
        }
    };
    Ok((model, history))
}

/// Median test-split errors of `model` with `k` inference neighbours.
pub fn test_metrics(model: &GnnModel, data: &Loaded, k: usize) -> posegnn::Result<Metrics> {
    match data {
        Loaded::Nodes(ds) => {
            let (xtr, _) = ds.part(Split::Train);
            let (xte, truth) = ds.part(Split::Test);
            if xte.rows() == 0 {
                return Err(posegnn::Error::Empty("test split"));
            }
            evaluate(&infer_node_pose(model, &xtr, &xte, k)?, &truth)
        }
        Loaded::Maps(ds) => {
            let (graphs, truth) = ds.graphs(Split::Test, k)?;
            if graphs.is_empty() {
                return Err(posegnn::Error::Empty("test split"));
            }
            evaluate(&infer_graph_pose(model, &graphs)?, &truth)
        }
    }
}

fn check_k(k: usize, data: &Loaded) -> CliResult<()> {
    if k == 0 || k > data.max_k() {
        return Err(CliError::Usage(format!("k = {k} outside 1..={}", data.max_k())));
    }
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<Manifest> {
    let start = Instant::now();
    let (data, bytes) = load(&a.data)?;
    check_mode(a.mode, &data, &a.data)?;
    let cfg = a.hyper.config(data.mode());
    cfg.validate()?;
    check_k(cfg.k, &data)?;
    let loss_csv = a.loss_csv.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".loss.csv");
        s.into()
    });
    let mut manifest = Manifest {
        status: "ok".into(),
        config: cfg.clone(),
        dataset: DatasetRef {
            path: a.data.display().to_string(),
            sha256: sha256_hex(&bytes),
        },
        checkpoint: None,
        loss_csv: None,
        final_loss: None,
        test: None,
        error: None,
        wall_time_s: 0.0,
    };

    let (model, history) = match fit(&data, &cfg) {
        Ok(r) => r,
        Err(e) => {
            let err = CliError::from(e);
            if matches!(err, CliError::Divergence { .. }) {
                manifest.status = "diverged".into();
                manifest.error = Some(err.to_string());
                manifest.wall_time_s = start.elapsed().as_secs_f64();
                append_manifest(&a.manifest, &manifest)?;
            }
            return Err(err);
        }
    };
    if !a.quiet {
        for (epoch, r) in history.iter().enumerate() {
            println!(
                "epoch {epoch:>5}  loss {:.6}  position {:.6}  orientation {:.6}",
                r.total, r.position_term, r.orientation_term
            );
        }
    }
    save_checkpoint(&a.out, &model, &cfg)?;
    write_rows(&loss_csv, &loss_rows(&history))?;

    manifest.checkpoint = Some(a.out.display().to_string());
    manifest.loss_csv = Some(loss_csv.display().to_string());
    manifest.final_loss = history.last().copied();
    manifest.test = match test_metrics(&model, &data, cfg.k) {
        Ok(m) => Some(m.into()),
        Err(posegnn::Error::Empty(_)) => None,
        Err(e) => return Err(e.into()),
    };
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    append_manifest(&a.manifest, &manifest)?;
    println!("wrote {} and {}", a.out.display(), loss_csv.display());
    Ok(manifest)
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<EvalRow> {
    let (model, cfg) = load_checkpoint(&a.checkpoint)?;
    let (data, _) = load(&a.data)?;
    let spec = model.spec();
    if spec.mode != data.mode() {
        return Err(CliError::Incompatible(format!(
            "checkpoint is a {} model, dataset holds {} data",
            mode_name(spec.mode),
            mode_name(data.mode())
        )));
    }
    if spec.d_feat != data.dim() {
        return Err(CliError::Incompatible(format!(
            "checkpoint expects {} features, dataset has {}",
            spec.d_feat,
            data.dim()
        )));
    }
    let k = a.k.unwrap_or(cfg.k);
    check_k(k, &data)?;
    let m = test_metrics(&model, &data, k).map_err(|e| match e {
        posegnn::Error::Shape { .. } => CliError::Incompatible(e.to_string()),
        other => other.into(),
    })?;
    let row = EvalRow {
        k,
        conv: conv_name(spec.conv).into(),
        mode: mode_name(spec.mode).into(),
        alpha: cfg.alpha,
        med_pos_m: m.median_position_m,
        med_ori_deg: m.median_orientation_deg,
    };
    println!("{:>4} {:>5} {:>6} {:>8} {:>12} {:>12}", "k", "conv", "mode", "alpha", "med_pos_m", "med_ori_deg");
    println!(
        "{:>4} {:>5} {:>6} {:>8} {:>12.4} {:>12.3}",
        row.k, row.conv, row.mode, row.alpha, row.med_pos_m, row.med_ori_deg
    );
    if let Some(path) = &a.csv {
        write_rows(path, std::slice::from_ref(&row))?;
    }
    Ok(row)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub med_pos_m: f64,
    pub med_ori_deg: f64,
}

fn sweep_one(data: &Loaded, base: &TrainConfig, k: usize) -> posegnn::Result<SweepRow> {
    let cfg = TrainConfig { k, ..base.clone() };
    let (model, _) = fit(data, &cfg)?;
    let m = test_metrics(&model, data, k)?;
    Ok(SweepRow {
        k,
        med_pos_m: m.median_position_m,
        med_ori_deg: m.median_orientation_deg,
    })
}

#[cfg(feature = "parallel")]
fn sweep_all(data: &Loaded, base: &TrainConfig, ks: &[usize]) -> Vec<posegnn::Result<SweepRow>> {
    use rayon::prelude::*;
    if posegnn::par::is_parallel() {
        return ks.par_iter().map(|&k| sweep_one(data, base, k)).collect();
    }
    ks.iter().map(|&k| sweep_one(data, base, k)).collect()
}

#[cfg(not(feature = "parallel"))]
fn sweep_all(data: &Loaded, base: &TrainConfig, ks: &[usize]) -> Vec<posegnn::Result<SweepRow>> {
    ks.iter().map(|&k| sweep_one(data, base, k)).collect()
}

pub fn cmd_sweep_k(a: &SweepArgs) -> CliResult<Vec<SweepRow>> {
    let (data, _) = load(&a.data)?;
    check_mode(a.mode, &data, &a.data)?;
    if a.k_min == 0 || a.k_min > a.k_max {
        return Err(CliError::Usage(format!("empty k range {}..={}", a.k_min, a.k_max)));
    }
    check_k(a.k_max, &data)?;
    let base = a.hyper.config(data.mode());
    base.validate()?;
    let ks: Vec<usize> = (a.k_min..=a.k_max).collect();
    // Results come back in k order; the first failure by k wins.
    let rows = sweep_all(&data, &base, &ks).into_iter().collect::<posegnn::Result<Vec<_>>>()?;

    println!("{:>4} {:>12} {:>12}", "k", "med_pos_m", "med_ori_deg");
    for r in &rows {
        println!("{:>4} {:>12.4} {:>12.3}", r.k, r.med_pos_m, r.med_ori_deg);
    }
    write_rows(&a.csv, &rows)?;
    if let Some(path) = &a.gnuplot {
        let mut text = String::from("# k med_pos_m med_ori_deg\n");
        for r in &rows {
            text.push_str(&format!("{} {} {}\n", r.k, r.med_pos_m, r.med_ori_deg));
        }
        fs::write(path, text)?;
    }
    Ok(rows)
}

pub fn cmd_export_graph(a: &ExportArgs) -> CliResult<()> {
    let (data, _) = load(&a.data)?;
    let Loaded::Nodes(ds) = &data else {
        return Err(CliError::Usage("export-graph needs a node dataset".into()));
    };
    check_k(a.k, &data)?;
    let (x, _) = ds.part(Split::Train);
    fs::write(&a.out, knn_graph(&x, a.k)?.to_edge_list())?;
    println!("wrote {}", a.out.display());
    Ok(())
}
