use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use affectcae::data::Partition;
use affectcae_cli::stages::{self, read_predictions, write_predictions, PredictionRow};
use affectcae_cli::{Layout, RunConfig};

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_affectcae"))
        .args(args)
        .env("RUST_LOG", "warn")
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Tiny synthetic run: 2 subjects x 60 frames, narrow nets, one-cell grids.
fn tiny_config(root: &Path, extra: &str) -> String {
    let run = root.join("run");
    let text = format!(
        r#"seed = 3
out-dir = "{run}"
[data]
fer-csv = "{run}/synth/fer.csv"
recola-root = "{run}/synth/recola"
[arch]
conv-widths = [2, 2, 2]
decoder-widths = [2, 2, 2]
dense-units = [8, 8, 8]
[pretrain]
max-epochs = 1
[cae]
encoder-size = 8
[cae.train]
max-epochs = 1
[svr]
c-grid = [1.0]
epsilon-grid = [0.05]
max-iter = 20000
[postprocess]
median-windows = [1, 5]
shifts = [0, 2]
[synth]
subjects = 2
frames = 60
images-per-class = 2
test-images-per-class = 1
{extra}"#,
        run = run.display()
    );
    let path = root.join("cfg.toml");
    fs::write(&path, &text).unwrap();
    path.display().to_string()
}

#[test]
fn bad_config_key_exits_1_and_names_key() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[svr]\nc-gird = [1.0]\n").unwrap();
    let o = bin(dir.path(), &["--config", "bad.toml", "evaluate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("c-gird"), "{}", stderr(&o));
}

#[test]
fn unknown_subcommand_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bin(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(bin(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn missing_prerequisites_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let o = bin(dir.path(), &["--config", &cfg, "pretrain"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("synth-data"));
    let o = bin(dir.path(), &["--config", &cfg, "postprocess"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train-svr"), "{}", stderr(&o));
    let o = bin(dir.path(), &["--config", &cfg, "encode"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train-cae"), "{}", stderr(&o));
}

#[test]
fn locked_directory_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    fs::create_dir_all(dir.path().join("run")).unwrap();
    fs::write(dir.path().join("run/.lock"), "1\n").unwrap();
    let o = bin(dir.path(), &["--config", &cfg, "synth-data"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("locked"));
}

#[test]
fn evaluate_perfect_fixture_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let layout = Layout::new(&dir.path().join("run"));
    fs::create_dir_all(&layout.svr).unwrap();
    let rows: Vec<PredictionRow> = (0..20)
        .map(|i| {
            let t = i as f64 / 10.0;
            let g = [t.sin() * 0.5, (2.0 * t).cos() * 0.3];
            PredictionRow {
                partition: if i < 12 {
                    Partition::Train
                } else {
                    Partition::Val
                },
                subject: "s".into(),
                timestamp: i as f64 * 0.04,
                gold: g,
                pred: g,
            }
        })
        .collect();
    write_predictions(&layout.raw_predictions(), &rows).unwrap();
    assert_eq!(read_predictions(&layout.raw_predictions()).unwrap(), rows);
    let o = bin(dir.path(), &["--config", &cfg, "evaluate"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(lines.len(), 4);
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        assert_eq!(f[2], "raw");
        assert_eq!(f[4].parse::<f64>().unwrap(), 1.0, "{l}");
    }
    assert!(layout.evaluate.join("config.toml").exists());
}

fn pipeline(dir: &Path, cfg: &str, delay: &str) {
    for args in [
        vec!["synth-data"],
        vec!["pretrain"],
        vec!["train-cae"],
        vec!["encode"],
        vec!["train-svr", "--delay", delay],
        vec!["postprocess"],
        vec!["evaluate"],
    ] {
        let mut a = vec!["--config", cfg];
        a.extend(args.iter());
        let o = bin(dir, &a);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn delay_shortens_every_series() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let layout = Layout::new(&dir.path().join("run"));
    pipeline(dir.path(), &cfg, "0");
    let full = read_predictions(&layout.raw_predictions()).unwrap();
    let o = bin(
        dir.path(),
        &["--config", &cfg, "train-svr", "--delay", "40"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let short = read_predictions(&layout.raw_predictions()).unwrap();
    for p in [Partition::Train, Partition::Val] {
        let n = |rows: &[PredictionRow]| rows.iter().filter(|r| r.partition == p).count();
        assert_eq!(n(&full), 60);
        assert_eq!(n(&short), 20);
    }
    // frame t is paired with the label at t + 40
    let first = short
        .iter()
        .find(|r| r.partition == Partition::Train)
        .unwrap();
    let later = full
        .iter()
        .filter(|r| r.partition == Partition::Train)
        .nth(40)
        .unwrap();
    assert_eq!(first.timestamp, 0.0);
    assert_eq!(first.gold, later.gold);
    let echoed = RunConfig::load(&layout.svr.join("config.toml")).unwrap();
    assert_eq!(echoed.delay, 40);
    let o = bin(
        dir.path(),
        &["--config", &cfg, "train-svr", "--delay", "60"],
    );
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn post_chain_never_lowers_dev_ccc() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    pipeline(dir.path(), &cfg, "0");
    let layout = Layout::new(&dir.path().join("run"));
    let scores = fs::read_to_string(layout.scores()).unwrap();
    for dim in ["valence", "arousal"] {
        let get = |stage: &str| -> f64 {
            let l = scores
                .lines()
                .find(|l| l.starts_with(&format!("{dim},val,{stage},")))
                .unwrap();
            l.split(',').nth(4).unwrap().parse().unwrap()
        };
        assert!(get("postprocessed") >= get("raw"));
    }
    for sub in [
        "synth",
        "pretrain",
        "cae",
        "features",
        "svr",
        "postprocess",
        "evaluate",
    ] {
        assert!(layout.root.join(sub).join("config.toml").exists(), "{sub}");
    }
    assert!(!layout.root.join(".lock").exists());
}

#[test]
fn no_transfer_runs_without_pretrain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    assert_eq!(
        bin(dir.path(), &["--config", &cfg, "synth-data"])
            .status
            .code(),
        Some(0)
    );
    let o = bin(dir.path(), &["--config", &cfg, "train-cae"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = bin(
        dir.path(),
        &[
            "--config",
            &cfg,
            "train-cae",
            "--no-transfer",
            "--freeze",
            "3",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let loss = fs::read_to_string(dir.path().join("run/cae/loss.csv")).unwrap();
    let mut lines = loss.lines();
    assert_eq!(
        lines.next(),
        Some("epoch,loss,grad_norm_conv1,grad_norm_conv2,grad_norm_conv3,grad_norm_encoder")
    );
    let f: Vec<f64> = lines
        .next()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(&f[2..5], &[0.0, 0.0, 0.0]);
    assert!(f[5] > 0.0);
}

#[test]
fn sweep_table_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(
        dir.path(),
        "[sweep]\nfreeze = [0, 1, 2]\nencoder-sizes = [100, 900]\n",
    );
    let o = bin(dir.path(), &["--config", &cfg, "synth-data"]);
    assert_eq!(o.status.code(), Some(0));
    let o = bin(dir.path(), &["--config", &cfg, "--jobs", "2", "sweep"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let sweep = fs::read_to_string(dir.path().join("run/sweep/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 2 * 3 * 2);
    assert!(sweep.lines().skip(1).all(|l| l.ends_with(",ok")), "{sweep}");
    let table = fs::read_to_string(dir.path().join("run/sweep/freeze_table.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(
        lines[0],
        "dimension,encoder_size,delay,ccc_freeze0,ccc_freeze1,ccc_freeze2"
    );
    for dim in ["valence", "arousal"] {
        assert_eq!(lines.iter().filter(|l| l.starts_with(dim)).count(), 2);
    }
    assert!(lines[1..]
        .iter()
        .all(|l| l.split(',').skip(3).all(|v| v.parse::<f64>().is_ok())));
}

#[test]
fn sweep_records_failed_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "[sweep]\ndelays = [0, 59]\n");
    assert_eq!(
        bin(dir.path(), &["--config", &cfg, "synth-data"])
            .status
            .code(),
        Some(0)
    );
    let o = bin(dir.path(), &["--config", &cfg, "sweep"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let sweep = fs::read_to_string(dir.path().join("run/sweep/sweep.csv")).unwrap();
    assert!(sweep
        .lines()
        .any(|l| l.contains(",0,") && l.ends_with(",ok")));
    assert!(
        sweep
            .lines()
            .any(|l| l.contains(",59,") && l.contains("failed")),
        "{sweep}"
    );
}

#[test]
fn tiny_blob_set_is_learned() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = tiny_config(dir.path(), "");
    let mut cfg = RunConfig::load(Path::new(&cfg_path)).unwrap();
    cfg.arch.conv_widths = [4, 4, 8];
    cfg.arch.dense_units = [32, 16, 16];
    cfg.arch.cnn_dropout = 0.0;
    cfg.arch.bn_momentum = 0.9;
    cfg.synth.images_per_class = 10;
    cfg.synth.test_images_per_class = 0;
    cfg.pretrain.max_epochs = 200;
    cfg.pretrain.learning_rate = 3e-3;
    let layout = Layout::new(&cfg.out_dir);
    stages::synth_data(&cfg, &layout).unwrap();
    let report = stages::pretrain(&cfg, &layout).unwrap();
    assert_eq!(report.len(), 1);
    let (p, n, acc) = report[0];
    assert_eq!((p, n), (Partition::Train, 70));
    assert!(acc > 0.9, "train accuracy {acc}");
}
