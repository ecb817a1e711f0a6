use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lrfr::training::ExperimentConfig;

const TINY: &str = "\
[data]
n_identities = 4
images_per_identity = 4
eval_per_identity = 3
[network]
channel_widths = 4, 8
embedding_dim = 8
input_size = 32
[optim]
epochs = 2
batch_size = 8
milestones = 1
[eval]
pairs = 20
resolutions = 7, 14, 32
";

fn lrfr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lrfr"))
        .args(args)
        .current_dir(dir)
        .env("LRFR_THREADS", "1")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.cfg"), TINY).unwrap();
    dir
}

fn repo_config(name: &str) -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs", name].iter().collect()
}

#[test]
fn usage_errors_exit_2() {
    let dir = workspace();
    for args in [
        vec!["bogus"],
        vec!["train"],
        vec!["train", "--config", "c.cfg", "--bogus"],
        vec!["train", "--config", "c.cfg", "--seed", "x"],
        vec![],
    ] {
        let o = lrfr(dir.path(), &args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(stderr(&o).contains("--help"), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn runtime_errors_exit_1_with_diagnostic() {
    let dir = workspace();
    let o = lrfr(dir.path(), &["train", "--config", "missing.cfg"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.cfg"));

    fs::write(dir.path().join("bad.cfg"), "[optim]\nlr = fast\n").unwrap();
    let o = lrfr(dir.path(), &["train", "--config", "bad.cfg"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("[optim]") && err.contains("lr"), "{err}");

    let o = Command::new(env!("CARGO_BIN_EXE_lrfr"))
        .args(["grad-check", "--seeds", "1"])
        .env("LRFR_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gen_data_writes_manifest_and_pngs() {
    let dir = workspace();
    let o = lrfr(dir.path(), &["gen-data", "--config", "c.cfg", "--out", "data/nested"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let root = dir.path().join("data/nested");
    let manifest = fs::read_to_string(root.join("manifest.txt")).unwrap();
    assert_eq!(manifest.lines().count(), 4 * 4);
    let pngs = fs::read_dir(root.join("id0000")).unwrap().count();
    assert_eq!(pngs, 4);
}

#[test]
fn grad_check_prints_table_and_passes() {
    let dir = workspace();
    let o = lrfr(dir.path(), &["grad-check", "--seeds", "2", "--out", "gc"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("net.fc.weight") && out.contains("cosface.emb"), "{out}");
    assert!(out.trim_end().ends_with("PASS"));
    assert!(dir.path().join("gc/grad_check.json").exists());
}

#[test]
fn train_then_analyse() {
    let dir = workspace();
    let o = lrfr(dir.path(), &["train", "--config", "c.cfg", "--out", "run", "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let saved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run/config.json")).unwrap()).unwrap();
    assert_eq!(saved["train"]["seed"], 7);
    assert_eq!(saved["data"]["seed"], 7);
    for f in ["final.ckpt", "epoch_001.ckpt", "train_log.jsonl", "train_log.csv"] {
        assert!(dir.path().join("run").join(f).exists(), "{f}");
    }

    let model = ["--config", "c.cfg", "--checkpoint", "run/final.ckpt", "--out", "rep", "--seed", "7"];
    let run = |cmd: &str, extra: &[&str]| {
        let args: Vec<&str> = [cmd].iter().chain(&model).chain(extra).copied().collect();
        let o = lrfr(dir.path(), &args);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    };
    run("sweep-accuracy", &[]);
    let csv = fs::read_to_string(dir.path().join("rep/sweep_accuracy_run_7.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "resolution,accuracy");
    assert_eq!(rows.len(), 1 + 3);
    assert!(dir.path().join("rep/sweep_accuracy_run_7.json").exists());

    run("sweep-gradnorm", &["--resolutions", "7,20,32"]);
    let csv = fs::read_to_string(dir.path().join("rep/sweep_gradnorm_run_7.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    run("eval", &["--pairs", "10"]);
    assert_eq!(fs::read_to_string(dir.path().join("rep/eval_run_7.csv")).unwrap().lines().count(), 4);

    run("sim-hist", &["--resolutions", "14"]);
    assert!(dir.path().join("rep/sim_hist_14px_run_7.csv").exists());

    run("dim-error", &["--resolutions", "7,32"]);
    let full = fs::read_to_string(dir.path().join("rep/dim_error_32px_run_7.csv")).unwrap();
    assert!(full.lines().skip(1).all(|l| l.ends_with(",0")), "{full}");

    run("pca", &["--resolutions", "14"]);
    let pca = fs::read_to_string(dir.path().join("rep/pca_run_7.csv")).unwrap();
    // Three eval images per identity, at 32 and 14 px.
    assert_eq!(pca.lines().count(), 1 + 4 * 3 * 2);
    let centroids = fs::read_to_string(dir.path().join("rep/pca_centroids_run_7.csv")).unwrap();
    assert_eq!(centroids.lines().count(), 1 + 4 * 2);
}

#[test]
fn reruns_reproduce_outputs() {
    let dir = workspace();
    for out in ["a", "b"] {
        let o = lrfr(dir.path(), &["train", "--config", "c.cfg", "--out", out]);
        assert!(o.status.success(), "{}", stderr(&o));
        let o = lrfr(
            dir.path(),
            &["sweep-accuracy", "--config", "c.cfg", "--checkpoint", &format!("{out}/final.ckpt"), "--out", out, "--model-id", "m"],
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["final.ckpt", "train_log.jsonl", "sweep_accuracy_m_0.csv", "config.json"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn augment_reports_ssim_and_tiers() {
    let dir = workspace();
    let img = lrfr::imageops::ImageBuffer::new(
        24,
        24,
        (0..24 * 24 * 3).map(|i| ((i * 37) % 101) as f64 / 100.0).collect(),
    )
    .unwrap();
    img.save_png(&dir.path().join("face.png")).unwrap();
    let o = lrfr(dir.path(), &["augment", "--input", "face.png", "--resolutions", "7,14,20", "--out", "aug"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("aug/augment_face.csv")).unwrap();
    let rows: Vec<Vec<String>> = csv.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][2], "extremely-hard");
    assert_eq!(rows[1][2], "hard");
    assert_eq!(rows[2][2], "semi-hard");
    let ssims: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(ssims.windows(2).all(|w| w[0] < w[1]), "{ssims:?}");
    assert!(dir.path().join("aug/face_7px.png").exists());
}

#[test]
fn shipped_configs_parse() {
    let example = ExperimentConfig::load(&repo_config("example.cfg")).unwrap();
    let t = &example.train;
    assert_eq!((t.loss.lambda, t.loss.cosface_scale, t.loss.cosface_margin), (1.0, 48.0, 0.4));
    assert_eq!(t.plan.entries, vec![(7, 1.0), (14, 1.0), (20, 2.0)]);
    assert_eq!(example, ExperimentConfig::default());

    let acceptance = ExperimentConfig::load(&repo_config("acceptance.cfg")).unwrap();
    assert_eq!(acceptance.data.n_identities, 50);
    assert_eq!(acceptance.data.images_per_identity, 40);
}
