use std::fs;
use std::path::{Path, PathBuf};

use posegnn::data::load_dataset;
use posegnn::model::load_checkpoint;
use posegnn_cli::{run, Manifest};

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

fn cli(args: &[&str]) -> i32 {
    let mut all = vec!["posegnn"];
    all.extend_from_slice(args);
    run(all)
}

fn gen_node(dir: &Path, name: &str, d: &str) -> PathBuf {
    let out = p(dir, name);
    assert_eq!(
        cli(&["gen", "--mode", "node", "--n-train", "30", "--n-test", "6", "--d", d, "--seed", "7", "--out", &out]),
        0
    );
    PathBuf::from(out)
}

const SMALL: [&str; 6] = ["--k", "3", "--epochs", "5", "--widths", "8,8,8"];

fn train(dir: &Path, data: &Path, ckpt: &str, extra: &[&str]) -> i32 {
    let ckpt = p(dir, ckpt);
    let manifest = p(dir, "runs.jsonl");
    let data = data.display().to_string();
    let mut args = vec!["train", data.as_str(), "-q", "-o", ckpt.as_str(), "--manifest", manifest.as_str()];
    args.extend_from_slice(&SMALL);
    args.extend_from_slice(extra);
    cli(&args)
}

fn manifests(dir: &Path) -> Vec<Manifest> {
    fs::read_to_string(dir.join("runs.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn gen_is_deterministic_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen_node(dir.path(), "a.txt", "8");
    let b = gen_node(dir.path(), "b.txt", "8");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let ds = load_dataset(&a).unwrap();
    assert_eq!((ds.len(), ds.dim()), (36, 8));
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    assert_eq!(cli(&["gen", "--mode", "node", "--n-test", "3", "--out", "x.txt"]), 2);
    assert_eq!(cli(&["frobnicate"]), 2);
}

#[test]
fn outdoor_preset_is_recorded_in_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_node(dir.path(), "d.txt", "8");
    assert_eq!(train(dir.path(), &data, "m.ckpt", &["--env", "outdoor"]), 0);
    let m = manifests(dir.path());
    assert_eq!(m.len(), 1);
    assert_eq!(m[0].config.alpha, 200.0);
    assert_eq!(m[0].status, "ok");
    assert_eq!(m[0].dataset.sha256.len(), 64);
    assert!(m[0].test.is_some());
}

#[test]
fn conv_types_give_distinct_loadable_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_node(dir.path(), "d.txt", "8");
    assert_eq!(train(dir.path(), &data, "gcn.ckpt", &["--conv", "gcn"]), 0);
    assert_eq!(train(dir.path(), &data, "wl.ckpt", &["--conv", "wl"]), 0);
    let gcn = fs::read(dir.path().join("gcn.ckpt")).unwrap();
    let wl = fs::read(dir.path().join("wl.ckpt")).unwrap();
    assert_ne!(gcn, wl);
    load_checkpoint(dir.path().join("gcn.ckpt")).unwrap();
    load_checkpoint(dir.path().join("wl.ckpt")).unwrap();
    // Manifests are appended, one per run.
    assert_eq!(manifests(dir.path()).len(), 2);
}

#[test]
fn divergence_exits_3_and_still_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_node(dir.path(), "d.txt", "8");
    assert_eq!(train(dir.path(), &data, "m.ckpt", &["--lr", "1e300"]), 3);
    let m = manifests(dir.path());
    assert_eq!(m[0].status, "diverged");
    assert!(!dir.path().join("m.ckpt").exists());
}

#[test]
fn eval_writes_the_metrics_csv_and_rejects_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_node(dir.path(), "d.txt", "8");
    let other = gen_node(dir.path(), "d16.txt", "16");
    assert_eq!(train(dir.path(), &data, "m.ckpt", &[]), 0);
    let ckpt = p(dir.path(), "m.ckpt");
    let csv = p(dir.path(), "eval.csv");
    assert_eq!(cli(&["eval", data.to_str().unwrap(), "-c", &ckpt, "--csv", &csv]), 0);
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("k,conv,mode,alpha,med_pos_m,med_ori_deg"));
    assert!(lines.next().unwrap().starts_with("3,wl,node,10.0,"));

    assert_eq!(cli(&["eval", other.to_str().unwrap(), "-c", &ckpt]), 4);

    let maps = p(dir.path(), "maps.txt");
    let gen = ["gen", "--mode", "graph", "--n-train", "4", "--n-test", "2", "--d", "8", "--height", "2", "--width", "2"];
    assert_eq!(cli(&[&gen[..], &["--out", &maps]].concat()), 0);
    assert_eq!(cli(&["eval", &maps, "-c", &ckpt]), 4);
}

#[test]
fn sweep_checks_the_k_range_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_node(dir.path(), "d.txt", "8");
    let data = data.to_str().unwrap();
    let a = p(dir.path(), "a.csv");
    let b = p(dir.path(), "b.csv");
    let plot = p(dir.path(), "a.dat");
    let base = ["sweep-k", data, "--k-min", "1", "--k-max", "3", "--epochs", "3", "--widths", "8,8,8"];
    assert_eq!(cli(&[&base[..], &["--csv", &a, "--gnuplot", &plot]].concat()), 0);
    assert_eq!(cli(&[&base[..], &["--csv", &b]].concat()), 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 4);
    assert!(fs::read_to_string(&plot).unwrap().starts_with("# k med_pos_m med_ori_deg\n1 "));

    assert_eq!(cli(&["sweep-k", data, "--k-max", "30", "--csv", &a]), 2);
    assert_eq!(cli(&["sweep-k", data, "--k-min", "4", "--k-max", "2", "--csv", &a]), 2);
}

#[test]
fn mode_flag_must_match_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_node(dir.path(), "d.txt", "8");
    assert_eq!(train(dir.path(), &data, "m.ckpt", &["--mode", "graph"]), 2);
}

#[test]
fn export_graph_writes_an_edge_list() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_node(dir.path(), "d.txt", "8");
    let out = p(dir.path(), "edges.txt");
    assert_eq!(cli(&["export-graph", data.to_str().unwrap(), "--k", "2", "-o", &out]), 0);
    let edges = posegnn::graph::parse_edge_list(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!((edges.n, edges.k), (30, 2));
}
