//! One function per pipeline stage. Each reads its inputs from the layout,
//! writes its artifacts and the resolved config into its own directory.

use std::fs;
use std::path::{Path, PathBuf};

use affectcae::data::{
    export_fer_csv, export_recola_layout, load_fer_csv, load_recola_layout,
    substitute_missing_frames, synth_blob_classes, synth_dataset, training_frames, AnnotationTrack,
    FrameSequence, LabeledImageSet, Partition,
};
use affectcae::metrics::{accuracy, Dimension, ScoreReport};
use affectcae::models::{
    build_cae, build_pretrain_cnn, encode as encode_frames, set_frozen, transfer_weights,
    EncodedFeatures,
};
use affectcae::nn::{
    load_checkpoint, predict, save_checkpoint, train_with, Dataset, LossKind, Targets, TrainHistory,
};
use affectcae::postprocess::{delay_compensate, optimize_chain};
use affectcae::svr::{fit_svr, grid_search, SvrParams};
use affectcae::tensor::Tensor;

use crate::config::RunConfig;
use crate::error::CliError;

/// Scalar type of the networks. Regression runs in `f64`.
pub type Net = f32;

const PRETRAIN_INIT: u64 = 1;
const PRETRAIN_TRAIN: u64 = 2;
const CAE_INIT: u64 = 3;
const CAE_TRAIN: u64 = 4;
const SYNTH_TEST: u64 = 5;

/// Gradient-norm columns written to the CAE loss CSV.
const WATCHED_LAYERS: [&str; 4] = ["conv1", "conv2", "conv3", "encoder"];

fn stage_seed(seed: u64, stage: u64) -> u64 {
    seed.wrapping_add(stage.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Artifact directories of one run.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
    pub synth: PathBuf,
    pub pretrain: PathBuf,
    pub cae: PathBuf,
    pub features: PathBuf,
    pub svr: PathBuf,
    pub postprocess: PathBuf,
    pub evaluate: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            synth: root.join("synth"),
            pretrain: root.join("pretrain"),
            cae: root.join("cae"),
            features: root.join("features"),
            svr: root.join("svr"),
            postprocess: root.join("postprocess"),
            evaluate: root.join("evaluate"),
        }
    }

    pub fn pretrain_checkpoint(&self) -> PathBuf {
        self.pretrain.join("cnn.ckpt")
    }

    pub fn cae_checkpoint(&self) -> PathBuf {
        self.cae.join("cae.ckpt")
    }

    pub fn raw_predictions(&self) -> PathBuf {
        self.svr.join("predictions.csv")
    }

    pub fn post_predictions(&self) -> PathBuf {
        self.postprocess.join("predictions.csv")
    }

    pub fn scores(&self) -> PathBuf {
        self.evaluate.join("scores.csv")
    }
}

fn runtime(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| runtime(path, e))
}

fn begin(dir: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| runtime(dir, e))?;
    write(&dir.join("config.toml"), &cfg.to_toml())
}

fn require(path: &Path, stage: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Missing(format!(
            "{} not found; run `{stage}` first",
            path.display()
        )))
    }
}

pub fn synth_data(cfg: &RunConfig, layout: &Layout) -> Result<(), CliError> {
    begin(&layout.synth, cfg)?;
    let s = &cfg.synth;
    let mut sets = vec![synth_blob_classes::<f64>(cfg.seed, s.images_per_class)?];
    if s.test_images_per_class > 0 {
        let mut test =
            synth_blob_classes::<f64>(stage_seed(cfg.seed, SYNTH_TEST), s.test_images_per_class)?;
        test.partition = Partition::Test;
        sets.push(test);
    }
    let fer = layout.synth.join("fer.csv");
    export_fer_csv(&fer, &sets)?;
    let mut subjects = synth_dataset(cfg.seed, s.subjects, s.frames)?;
    let first_dev = subjects.len() - s.dev_subjects;
    for (seq, _) in subjects.iter_mut().skip(first_dev) {
        seq.partition = Partition::Val;
    }
    let root = layout.synth.join("recola");
    if root.exists() {
        fs::remove_dir_all(&root).map_err(|e| runtime(&root, e))?;
    }
    export_recola_layout(&root, &subjects)?;
    log::info!("wrote {} and {}", fer.display(), root.display());
    Ok(())
}

fn argmax_rows(t: &Tensor<Net>) -> Vec<usize> {
    (0..t.batch())
        .map(|i| {
            let r = t.row(i);
            (0..r.len()).fold(0, |b, k| if r[k] > r[b] { k } else { b })
        })
        .collect()
}

fn labeled(set: &LabeledImageSet<Net>) -> Result<Dataset<Net>, CliError> {
    Ok(Dataset::new(
        set.images.clone(),
        Targets::Tensor(set.one_hot()),
    )?)
}

/// Trains the classification CNN; returns `(partition, n, accuracy)` per set.
pub fn pretrain(
    cfg: &RunConfig,
    layout: &Layout,
) -> Result<Vec<(Partition, usize, f64)>, CliError> {
    let path = &cfg.data.fer_csv;
    if !path.exists() {
        return Err(CliError::Missing(format!(
            "FER CSV {} not found (set data.fer-csv or run `synth-data`)",
            path.display()
        )));
    }
    let sets = load_fer_csv::<Net>(path)?;
    let train = sets
        .iter()
        .find(|s| s.partition == Partition::Train)
        .ok_or_else(|| CliError::Runtime(format!("{} has no training rows", path.display())))?;
    let val = sets
        .iter()
        .find(|s| s.partition == Partition::Val)
        .map(labeled)
        .transpose()?;
    begin(&layout.pretrain, cfg)?;
    let (spec, mut w) =
        build_pretrain_cnn::<Net>(&cfg.arch.arch(), stage_seed(cfg.seed, PRETRAIN_INIT))?;
    let tc = cfg.pretrain.train_config(
        LossKind::CategoricalCrossentropy,
        stage_seed(cfg.seed, PRETRAIN_TRAIN),
    );
    let history = train_with(&spec, &mut w, &labeled(train)?, val.as_ref(), &tc, |r| {
        log::info!("pretrain epoch {} loss {:.6}", r.epoch, r.loss);
    })?;
    save_checkpoint(&layout.pretrain_checkpoint(), &spec, &w)?;

    let mut loss = String::from("epoch,loss,val_loss\n");
    for r in &history.epochs {
        let v = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
        loss.push_str(&format!("{},{},{v}\n", r.epoch, r.loss));
    }
    write(&layout.pretrain.join("loss.csv"), &loss)?;

    let mut report = Vec::new();
    let mut acc = String::from("partition,n,accuracy\n");
    for set in &sets {
        let a = accuracy(&argmax_rows(&predict(&spec, &w, &set.images)?), &set.labels)?;
        log::info!(
            "pretrain {} accuracy {:.4} on {} images",
            set.partition,
            a,
            set.len()
        );
        acc.push_str(&format!("{},{},{a}\n", set.partition, set.len()));
        report.push((set.partition, set.len(), a));
    }
    write(&layout.pretrain.join("accuracy.csv"), &acc)?;
    Ok(report)
}

/// Subjects of the configured layout with missing frames substituted.
pub fn load_subjects(cfg: &RunConfig) -> Result<Vec<(FrameSequence, AnnotationTrack)>, CliError> {
    let root = &cfg.data.recola_root;
    if !root.is_dir() {
        return Err(CliError::Missing(format!(
            "frame layout {} not found (set data.recola-root or run `synth-data`)",
            root.display()
        )));
    }
    load_recola_layout(root)?
        .into_iter()
        .map(|(s, a)| Ok((substitute_missing_frames(&s)?, a)))
        .collect()
}

pub fn train_cae(cfg: &RunConfig, layout: &Layout) -> Result<TrainHistory, CliError> {
    let subjects = load_subjects(cfg)?;
    let train: Vec<&FrameSequence> = subjects
        .iter()
        .map(|(s, _)| s)
        .filter(|s| s.partition == Partition::Train)
        .collect();
    if train.is_empty() {
        return Err(CliError::Runtime("no training-partition subjects".into()));
    }
    let frames = training_frames::<Net>(&train)?;
    let arch = cfg.arch.arch();
    let (spec, init) =
        build_cae::<Net>(&arch, cfg.cae.encoder_size, stage_seed(cfg.seed, CAE_INIT))?;
    let mut w = if cfg.cae.transfer {
        let ckpt = layout.pretrain_checkpoint();
        require(&ckpt, "pretrain` (or pass `--no-transfer")?;
        let (src_spec, src) = load_checkpoint::<Net>(&ckpt)?;
        transfer_weights(&src_spec, &src, &spec, &init)?
    } else {
        init
    };
    set_frozen(&spec, &mut w, cfg.cae.freeze)?;
    w.freeze_bn_stats = cfg.cae.freeze_bn_stats;
    begin(&layout.cae, cfg)?;
    let watched: Vec<usize> = WATCHED_LAYERS
        .iter()
        .filter_map(|n| spec.index_of(n))
        .collect();
    let tc = cfg
        .cae
        .train
        .train_config(LossKind::Mse, stage_seed(cfg.seed, CAE_TRAIN));
    let data = Dataset::new(frames, Targets::Autoencode)?;
    let history = train_with(&spec, &mut w, &data, None, &tc, |r| {
        let norms: Vec<String> = watched
            .iter()
            .map(|&i| format!("{:.3e}", r.grad_norms[i]))
            .collect();
        log::info!(
            "cae epoch {} mse {:.6} grad norms [conv1 conv2 conv3 encoder] {}",
            r.epoch,
            r.loss,
            norms.join(" ")
        );
    })?;
    save_checkpoint(&layout.cae_checkpoint(), &spec, &w)?;
    let mut loss = String::from("epoch,loss");
    for name in WATCHED_LAYERS {
        loss.push_str(&format!(",grad_norm_{name}"));
    }
    loss.push('\n');
    for r in &history.epochs {
        loss.push_str(&format!("{},{}", r.epoch, r.loss));
        for &i in &watched {
            loss.push_str(&format!(",{}", r.grad_norms[i]));
        }
        loss.push('\n');
    }
    write(&layout.cae.join("loss.csv"), &loss)?;
    Ok(history)
}

fn features_path(layout: &Layout, partition: Partition, subject: &str) -> PathBuf {
    layout
        .features
        .join(partition.to_string())
        .join(format!("{subject}.csv"))
}

pub fn encode(cfg: &RunConfig, layout: &Layout) -> Result<(), CliError> {
    let ckpt = layout.cae_checkpoint();
    require(&ckpt, "train-cae")?;
    let (spec, w) = load_checkpoint::<Net>(&ckpt)?;
    let subjects = load_subjects(cfg)?;
    begin(&layout.features, cfg)?;
    for (seq, _) in &subjects {
        let f = encode_frames(&spec, &w, &seq.to_tensor::<Net>()?)?;
        let ef = EncodedFeatures::new(seq.timestamps(), f.cast::<f64>())?;
        let path = features_path(layout, seq.partition, &seq.subject);
        let dir = path.parent().expect("features path has a parent");
        fs::create_dir_all(dir).map_err(|e| runtime(dir, e))?;
        ef.write(&path)?;
        log::info!("encoded {} frames of {}", seq.len(), seq.subject);
    }
    Ok(())
}

/// Delay-compensated features and gold of one subject.
struct Series {
    partition: Partition,
    subject: String,
    timestamps: Vec<f64>,
    features: Tensor<f64>,
    gold: [Vec<f64>; 2],
}

fn load_series(cfg: &RunConfig, layout: &Layout) -> Result<Vec<Series>, CliError> {
    let subjects = load_subjects(cfg)?;
    let mut out = Vec::new();
    for (seq, track) in &subjects {
        let path = features_path(layout, seq.partition, &seq.subject);
        require(&path, "encode")?;
        let ef = EncodedFeatures::<f64>::read(&path)?;
        if ef.timestamps != seq.timestamps() {
            return Err(CliError::Runtime(format!(
                "{}: timestamps differ from the frame layout",
                path.display()
            )));
        }
        let rows: Vec<usize> = (0..seq.len()).collect();
        let (keep, _) = delay_compensate(&rows, &track.valence, cfg.delay)?;
        let gold = Dimension::ALL.map(|d| track.dimension(d)[cfg.delay..].to_vec());
        out.push(Series {
            partition: seq.partition,
            subject: seq.subject.clone(),
            timestamps: ef.timestamps[..keep.len()].to_vec(),
            features: ef.features.select_rows(keep),
            gold,
        });
    }
    Ok(out)
}

fn stack(series: &[&Series], dim: usize) -> Result<(Tensor<f64>, Vec<f64>), CliError> {
    let x = Tensor::concat(&series.iter().map(|s| &s.features).collect::<Vec<_>>())?;
    let y = series
        .iter()
        .flat_map(|s| s.gold[dim].iter().copied())
        .collect();
    Ok((x, y))
}

/// One prediction row; `gold` and `pred` are indexed by dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub partition: Partition,
    pub subject: String,
    pub timestamp: f64,
    pub gold: [f64; 2],
    pub pred: [f64; 2],
}

const PREDICTION_HEADER: &str =
    "partition,subject,timestamp,gold_valence,pred_valence,gold_arousal,pred_arousal";

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<(), CliError> {
    let mut out = format!("{PREDICTION_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.partition, r.subject, r.timestamp, r.gold[0], r.pred[0], r.gold[1], r.pred[1]
        ));
    }
    write(path, &out)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| runtime(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(PREDICTION_HEADER) {
        return Err(CliError::Runtime(format!(
            "{}: unexpected header",
            path.display()
        )));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || CliError::Runtime(format!("{}: bad row {}", path.display(), i + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(PredictionRow {
                partition: f[0].parse().map_err(|_| bad())?,
                subject: f[1].to_string(),
                timestamp: num(f[2])?,
                gold: [num(f[3])?, num(f[5])?],
                pred: [num(f[4])?, num(f[6])?],
            })
        })
        .collect()
}

fn dim_name(k: usize) -> String {
    Dimension::ALL[k].to_string()
}

pub fn train_svr(cfg: &RunConfig, layout: &Layout) -> Result<(), CliError> {
    let series = load_series(cfg, layout)?;
    let pick = |p: Partition| {
        series
            .iter()
            .filter(|s| s.partition == p)
            .collect::<Vec<_>>()
    };
    let (train, dev) = (pick(Partition::Train), pick(Partition::Val));
    if train.is_empty() || dev.is_empty() {
        return Err(CliError::Missing(
            "train-svr needs subjects in both the train and val partitions".into(),
        ));
    }
    begin(&layout.svr, cfg)?;
    let kernel = cfg.kernel()?;
    let mut preds: Vec<[Vec<f64>; 2]> = series.iter().map(|_| [Vec::new(), Vec::new()]).collect();
    for k in 0..2 {
        let (tx, ty) = stack(&train, k)?;
        let (dx, dy) = stack(&dev, k)?;
        let report = grid_search(
            &tx,
            &ty,
            &dx,
            &dy,
            &cfg.svr.c_grid,
            &cfg.svr.epsilon_grid,
            kernel,
            cfg.svr.tol,
            cfg.svr.max_iter,
        )?;
        write(
            &layout.svr.join(format!("{}_grid.csv", dim_name(k))),
            &report.to_csv(),
        )?;
        let best = report.chosen();
        log::info!(
            "{}: chose C={} epsilon={} (dev CCC {:.4})",
            dim_name(k),
            best.c,
            best.epsilon,
            best.dev_ccc
        );
        let params = SvrParams {
            c: best.c,
            epsilon: best.epsilon,
            kernel,
            tol: cfg.svr.tol,
            max_iter: cfg.svr.max_iter,
        };
        let model = fit_svr(&tx, &ty, &params)?;
        model.save(&layout.svr.join(format!("{}.svrm", dim_name(k))))?;
        for (s, p) in series.iter().zip(preds.iter_mut()) {
            p[k] = model.predict(&s.features)?;
        }
    }
    let mut rows = Vec::new();
    for (s, p) in series.iter().zip(&preds) {
        for i in 0..s.timestamps.len() {
            rows.push(PredictionRow {
                partition: s.partition,
                subject: s.subject.clone(),
                timestamp: s.timestamps[i],
                gold: [s.gold[0][i], s.gold[1][i]],
                pred: [p[0][i], p[1][i]],
            });
        }
    }
    write_predictions(&layout.raw_predictions(), &rows)
}

fn partitions(rows: &[PredictionRow]) -> Vec<Partition> {
    let mut ps: Vec<Partition> = rows.iter().map(|r| r.partition).collect();
    ps.sort();
    ps.dedup();
    ps
}

fn column(rows: &[PredictionRow], p: Partition, k: usize) -> (Vec<f64>, Vec<f64>) {
    rows.iter()
        .filter(|r| r.partition == p)
        .map(|r| (r.gold[k], r.pred[k]))
        .unzip()
}

pub fn postprocess(cfg: &RunConfig, layout: &Layout) -> Result<(), CliError> {
    let src = layout.raw_predictions();
    require(&src, "train-svr")?;
    let mut rows = read_predictions(&src)?;
    let grid = cfg.chain_grid()?;
    begin(&layout.postprocess, cfg)?;
    for k in 0..2 {
        let (gt, pt) = column(&rows, Partition::Train, k);
        let (gd, pd) = column(&rows, Partition::Val, k);
        if gt.is_empty() || gd.is_empty() {
            return Err(CliError::Missing(
                "postprocess needs train and val predictions".into(),
            ));
        }
        let chain = optimize_chain(&gt, &pt, &gd, &pd, &grid)?;
        log::info!(
            "{}: dev CCC {:.4} -> {:.4} with {} step(s)",
            dim_name(k),
            chain.raw_dev_ccc,
            chain.dev_ccc(),
            chain.steps.len()
        );
        write(
            &layout.postprocess.join(format!("{}.chain", dim_name(k))),
            &chain.to_string(),
        )?;
        for p in partitions(&rows) {
            let (_, pred) = column(&rows, p, k);
            let out = chain.apply(&pred)?;
            for (r, v) in rows.iter_mut().filter(|r| r.partition == p).zip(out) {
                r.pred[k] = v;
            }
        }
    }
    write_predictions(&layout.post_predictions(), &rows)
}

pub fn evaluate(cfg: &RunConfig, layout: &Layout) -> Result<Vec<ScoreReport>, CliError> {
    let src = layout.raw_predictions();
    require(&src, "train-svr")?;
    let raw = read_predictions(&src)?;
    let post = if layout.post_predictions().exists() {
        Some(read_predictions(&layout.post_predictions())?)
    } else {
        log::warn!("no post-processed predictions; scoring raw predictions only");
        None
    };
    begin(&layout.evaluate, cfg)?;
    let mut reports = Vec::new();
    for (k, dim) in Dimension::ALL.into_iter().enumerate() {
        for p in partitions(&raw) {
            let stages = [("raw", Some(&raw)), ("postprocessed", post.as_ref())];
            for (stage, rows) in stages {
                let Some(rows) = rows else { continue };
                let (gold, pred) = column(rows, p, k);
                reports.push(ScoreReport::compute(
                    dim,
                    &p.to_string(),
                    stage,
                    &gold,
                    &pred,
                )?);
            }
        }
    }
    write(&layout.scores(), &ScoreReport::to_csv(&reports))?;
    Ok(reports)
}
