//! Run configuration and the training loop.

mod config;

pub use config::{parse_key_values, DatasetKind, MilestoneSpec, RunConfig, CONFIG_KEYS};

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crate::data::{augment, load_cifar10_binary, load_mnist_dir, standardize_per_channel, CifarSplit, Dataset, MnistSplit};
use crate::error::{Error, Result};
use crate::export::{checkpoint_model, export_model, PackedNetwork};
use crate::nn::{build_lenet5_for, ForwardCtx, LayerFlags, LayerGraph};
use crate::optim::{lr_at_step, wd_at_step, Sgdw};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Column names of `metrics.csv`. `val_top1` is top-1 accuracy in `[0, 1]`
/// on the evaluation split with `sign(phi)` weights.
pub const METRICS_HEADER: &str = "epoch,step,lr,wd,alpha,zeta,train_loss,val_top1";

pub const METRICS_FILE: &str = "metrics.csv";
pub const MODEL_FILE: &str = "model.bwn";
pub const CHECKPOINT_FILE: &str = "checkpoint.bwn";
pub const CONFIG_FILE: &str = "config.txt";
pub const PROVENANCE_FILE: &str = "provenance.txt";
pub const NAN_DUMP_FILE: &str = "nan_dump.txt";

const EVAL_CHUNK: usize = 500;

/// One row of `metrics.csv`; schedule values are those of the epoch's last step.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub wd: f64,
    pub alpha: f64,
    pub zeta: f64,
    pub train_loss: f64,
    pub val_top1: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch, self.step, self.lr, self.wd, self.alpha, self.zeta, self.train_loss, self.val_top1
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_top1: f64,
    pub output_dir: PathBuf,
    pub elapsed: Duration,
    /// The network at the best epoch.
    pub best_graph: LayerGraph<f32>,
}

/// Training and evaluation splits for `cfg`, with sample limits applied.
/// For CIFAR-10 with `standardize`, both splits use training statistics.
pub fn load_datasets(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let (mut train, mut test) = match cfg.dataset {
        DatasetKind::Mnist => (
            load_mnist_dir(&cfg.data_dir, MnistSplit::Train)?,
            load_mnist_dir(&cfg.data_dir, MnistSplit::Test)?,
        ),
        DatasetKind::Cifar10 => (
            load_cifar10_binary(&cfg.data_dir, CifarSplit::Train)?,
            load_cifar10_binary(&cfg.data_dir, CifarSplit::Test)?,
        ),
    };
    if cfg.train_limit > 0 {
        train = train.take(cfg.train_limit);
    }
    if cfg.test_limit > 0 {
        test = test.take(cfg.test_limit);
    }
    if cfg.standardize && cfg.dataset == DatasetKind::Cifar10 {
        let reference = train.images().clone();
        let mut tr = train.images().clone();
        let mut te = test.images().clone();
        standardize_per_channel(&mut tr, &reference)?;
        standardize_per_channel(&mut te, &reference)?;
        train = Dataset::new(tr, train.labels().to_vec(), train.num_classes(), train.name())?;
        test = Dataset::new(te, test.labels().to_vec(), test.num_classes(), test.name())?;
    }
    Ok((train, test))
}

pub fn build_model(cfg: &RunConfig, input_shape: &[usize]) -> Result<LayerGraph<f32>> {
    let flags = LayerFlags::for_bits(cfg.bits, 5)?;
    build_lenet5_for(input_shape.to_vec(), &flags, cfg.u_mode, cfg.pool, cfg.seed)
}

/// Top-1 accuracy with `sign(phi)` weights and running statistics.
pub fn evaluate_graph(graph: &mut LayerGraph<f32>, ds: &Dataset) -> Result<f64> {
    let preds = predict_graph(graph, ds.images())?;
    Ok(accuracy(&preds, ds.labels()))
}

pub fn predict_graph(graph: &mut LayerGraph<f32>, images: &Tensor<f32>) -> Result<Vec<usize>> {
    let n = images.shape()[0];
    let idx: Vec<usize> = (0..n).collect();
    let per = images.len() / n;
    let mut out = Vec::with_capacity(n);
    for chunk in idx.chunks(EVAL_CHUNK) {
        let mut shape = images.shape().to_vec();
        shape[0] = chunk.len();
        let batch = Tensor::new(shape, images.data()[chunk[0] * per..(chunk[0] + chunk.len()) * per].to_vec())?;
        out.extend(graph.predict(&batch, &ForwardCtx::inference())?);
    }
    Ok(out)
}

pub fn evaluate_packed(net: &PackedNetwork, ds: &Dataset) -> Result<f64> {
    let preds = net.predict(ds.images(), EVAL_CHUNK)?;
    Ok(accuracy(&preds, ds.labels()))
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len().max(1) as f64
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::path(path, e))
}

fn provenance(cfg: &RunConfig) -> String {
    format!(
        "source_hash = {}\ncrate_version = {}\nrng = {}\nseed = {}\n",
        crate::SOURCE_HASH,
        env!("CARGO_PKG_VERSION"),
        Rng::ALGORITHM,
        cfg.seed
    )
}

fn nan_dump(graph: &LayerGraph<f32>, info: &str, labels: &[usize]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{info}");
    let _ = writeln!(s, "batch_labels = {labels:?}");
    for p in graph.params() {
        let d = p.value.data();
        let bad = d.iter().filter(|v| !v.is_finite()).count();
        let (lo, hi) = d.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let g = p.grad.data();
        let gbad = g.iter().filter(|v| !v.is_finite()).count();
        let gmax = g.iter().fold(0.0f32, |a, v| a.max(v.abs()));
        let _ = writeln!(
            s,
            "param = {} shape={:?} min={lo} max={hi} non_finite={bad} grad_abs_max={gmax} grad_non_finite={gbad}",
            p.name,
            p.value.shape()
        );
    }
    s
}

/// Loads data per `cfg` and trains.
pub fn run(cfg: &RunConfig) -> Result<TrainSummary> {
    let (train_ds, test_ds) = load_datasets(cfg)?;
    train(cfg, &train_ds, &test_ds)
}

/// Full training loop: linear warmup and milestone decay of lr and weight
/// decay, alpha and zeta schedules, evaluation after every epoch. Writes
/// `config.txt`, `provenance.txt`, `metrics.csv` and, whenever the evaluation
/// accuracy strictly improves, `checkpoint.bwn` (latent values) and
/// `model.bwn` (sign bits) into `cfg.output_dir`.
pub fn train(cfg: &RunConfig, train_ds: &Dataset, eval_ds: &Dataset) -> Result<TrainSummary> {
    cfg.validate()?;
    if train_ds.is_empty() || eval_ds.is_empty() {
        return Err(Error::Consistency("training and evaluation splits must be non-empty".into()));
    }
    let start = Instant::now();
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::path(out, e))?;
    write_file(&out.join(CONFIG_FILE), cfg.to_text().as_bytes())?;
    write_file(&out.join(PROVENANCE_FILE), provenance(cfg).as_bytes())?;
    let metrics_path = out.join(METRICS_FILE);
    let mut csv = File::create(&metrics_path).map_err(|e| Error::path(&metrics_path, e))?;
    writeln!(csv, "{METRICS_HEADER}")?;

    let mut graph = build_model(cfg, train_ds.sample_shape())?;
    let sgdw = cfg.sgdw();
    let bcfg = cfg.binarize();
    let spec = cfg.augment_spec();
    let steps_per_epoch = train_ds.len().div_ceil(cfg.batch_size) as u64;
    let total = steps_per_epoch * cfg.epochs as u64;
    let warmup = (steps_per_epoch * cfg.warmup_epochs as u64).min(total);
    let root = Rng::new(cfg.seed);
    let mut shuffle_rng = root.fork(10);
    let mut augment_rng = root.fork(11);
    let mut opt = Sgdw::new(cfg.momentum);

    log::info!(
        "training {} bits={} on {} ({} samples), {} epochs x {steps_per_epoch} steps",
        cfg.architecture,
        cfg.bits,
        train_ds.name(),
        train_ds.len(),
        cfg.epochs
    );

    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, LayerGraph<f32>)> = None;
    let mut t: u64 = 0;
    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        let (mut lr, mut wd, mut ctx) = (0.0, 0.0, ForwardCtx::at_step(0, total, &bcfg));
        for (images, labels) in train_ds.batches(cfg.batch_size, true, &mut shuffle_rng)? {
            let images = augment(&images, &spec, &mut augment_rng)?;
            ctx = ForwardCtx::at_step(t, total, &bcfg);
            lr = lr_at_step(t, total, warmup, &sgdw);
            wd = wd_at_step(t, total, warmup, &sgdw);
            let (loss, _) = graph.loss_and_backward(&images, &labels, &ctx)?;
            if !loss.is_finite() {
                let info = format!(
                    "epoch = {epoch}\nstep = {t}\nloss = {loss}\nlr = {lr}\nwd = {wd}\nalpha = {}\nzeta = {}",
                    ctx.alpha, ctx.zeta
                );
                let path = out.join(NAN_DUMP_FILE);
                write_file(&path, nan_dump(&graph, &info, &labels).as_bytes())?;
                return Err(Error::Numeric(format!(
                    "loss became {loss} at step {t} (epoch {epoch}); state written to {}",
                    path.display()
                )));
            }
            opt.step(&mut graph.params_mut(), lr, wd)?;
            loss_sum += loss as f64;
            batches += 1;
            t += 1;
        }
        let val = evaluate_graph(&mut graph, eval_ds)?;
        let row = EpochMetrics {
            epoch,
            step: t,
            lr,
            wd,
            alpha: ctx.alpha,
            zeta: ctx.zeta,
            train_loss: loss_sum / batches as f64,
            val_top1: val,
        };
        writeln!(csv, "{}", row.csv_row())?;
        csv.flush()?;
        log::info!(
            "epoch {epoch}/{}: loss {:.4} val_top1 {:.4} (alpha {:.3}, zeta {:.2}, lr {:.2e}) {:.1?}",
            cfg.epochs,
            row.train_loss,
            val,
            ctx.alpha,
            ctx.zeta,
            lr,
            start.elapsed()
        );
        metrics.push(row);
        if best.as_ref().map_or(true, |(_, b, _)| val > *b) {
            write_file(&out.join(CHECKPOINT_FILE), &checkpoint_model(&graph)?)?;
            write_file(&out.join(MODEL_FILE), &export_model(&graph)?)?;
            best = Some((epoch, val, graph.clone()));
        }
    }
    let (best_epoch, best_val_top1, best_graph) = best.expect("at least one epoch");
    let degenerate = graph.degenerate_groups();
    if degenerate > 0 {
        log::warn!("{degenerate} partition groups lacked two members on a side in the last pass");
    }
    Ok(TrainSummary {
        metrics,
        best_epoch,
        best_val_top1,
        output_dir: out.clone(),
        elapsed: start.elapsed(),
        best_graph,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(n: usize, seed: u64) -> Dataset {
        // Class k has a bright square at a class-specific position.
        let mut rng = Rng::new(seed);
        let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
        let mut images = Tensor::<f32>::uniform(vec![n, 28, 28, 1], 0.0, 0.1, &mut rng).unwrap();
        for (i, &l) in labels.iter().enumerate() {
            let (oy, ox) = (2 + (l / 5) * 12, 2 + (l % 5) * 5);
            for y in oy..oy + 6 {
                for x in ox..ox + 4 {
                    images.data_mut()[i * 784 + y * 28 + x] = 1.0;
                }
            }
        }
        Dataset::new(images, labels, 10, "synthetic").unwrap()
    }

    fn cfg(dir: &Path, bits: u32) -> RunConfig {
        RunConfig {
            bits,
            epochs: 3,
            warmup_epochs: 1,
            batch_size: 20,
            lr0: 0.05,
            output_dir: dir.to_path_buf(),
            ..RunConfig::default()
        }
    }

    #[test]
    fn writes_outputs_and_learns() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synthetic(200, 1);
        let summary = train(&cfg(dir.path(), 32), &ds, &ds).unwrap();
        assert_eq!(summary.metrics.len(), 3);
        assert!(summary.best_val_top1 > 0.5, "{:?}", summary.metrics);
        for f in [METRICS_FILE, MODEL_FILE, CHECKPOINT_FILE, CONFIG_FILE, PROVENANCE_FILE] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let csv = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(csv.lines().next().unwrap(), METRICS_HEADER);
        assert_eq!(csv.lines().count(), 4);
        let prov = fs::read_to_string(dir.path().join(PROVENANCE_FILE)).unwrap();
        assert!(prov.contains(crate::SOURCE_HASH));
    }

    #[test]
    fn same_seed_same_metrics() {
        let ds = synthetic(100, 2);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        train(&cfg(a.path(), 1), &ds, &ds).unwrap();
        train(&cfg(b.path(), 1), &ds, &ds).unwrap();
        let read = |d: &Path| fs::read(d.join(METRICS_FILE)).unwrap();
        assert_eq!(read(a.path()), read(b.path()));
        let read = |d: &Path| fs::read(d.join(MODEL_FILE)).unwrap();
        assert_eq!(read(a.path()), read(b.path()));
    }

    #[test]
    fn nan_loss_aborts_with_dump() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synthetic(40, 3);
        let c = RunConfig {
            lr0: 1e30,
            warmup_epochs: 0,
            ..cfg(dir.path(), 32)
        };
        let err = train(&c, &ds, &ds).unwrap_err();
        assert!(err.is_numeric(), "{err}");
        let dump = fs::read_to_string(dir.path().join(NAN_DUMP_FILE)).unwrap();
        assert!(dump.contains("step = "));
        assert!(dump.contains("param = 0.conv2d.weight"));
    }

    #[test]
    fn missing_dataset_is_path_error() {
        let c = RunConfig {
            data_dir: "/nonexistent/mnist".into(),
            ..RunConfig::default()
        };
        assert!(matches!(load_datasets(&c), Err(Error::Path { .. })));
    }
}
