//! Deterministic training loop and evaluation.
//!
//! The loop is logically single-streamed: one seeded RNG stream shuffles the
//! training split each epoch, and every sample gets its own augmentation
//! stream derived from (seed, epoch, sample id), so batch contents do not
//! depend on how data loading is scheduled.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{save_checkpoint, CheckpointMeta, TrainMeta};
use super::conv::ConvScratch;
use super::loss::{argmax_row, cross_entropy_smoothed};
use super::model::{ModelConfig, ResNet};
use super::optim::{lr_at, sgd_step, TrainConfig};
use super::tensor::Tensor;
use super::NnError;

/// A finite, indexable set of labeled samples that can materialize any sample
/// as a normalized CHW float slab, optionally augmented with a caller-supplied
/// RNG stream.
pub trait SampleSource {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// (channels, height, width) of every sample.
    fn sample_shape(&self) -> (usize, usize, usize);
    fn label(&self, idx: usize) -> u8;
    /// Write sample `idx` into `out` (length c·h·w), normalized; when `rng`
    /// is provided the sample is augmented first.
    fn fill(&self, idx: usize, rng: Option<&mut ChaCha8Rng>, out: &mut [f32]);
}

/// splitmix64; used to derive independent RNG streams from one seed.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the augmentation stream of `sample` in `epoch`. Depends only on
/// sample identity, never on shuffle position or worker scheduling.
pub fn sample_stream_seed(seed: u64, epoch: u64, sample: u64) -> u64 {
    splitmix64(splitmix64(seed ^ epoch.rotate_left(32)) ^ sample)
}

fn shuffle_stream_seed(seed: u64, epoch: u64) -> u64 {
    sample_stream_seed(seed, epoch, u64::MAX)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

pub const METRICS_HEADER: &str = "epoch,lr,train_loss,train_acc,val_loss,val_acc";

pub fn metrics_to_csv(rows: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{},{},{},{},{},{}", r.epoch, r.lr, r.train_loss, r.train_acc, r.val_loss, r.val_acc)
            .expect("writing to a String cannot fail");
    }
    out
}

/// Where a training run leaves its artifacts.
#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub metrics_csv: PathBuf,
    pub best_checkpoint: PathBuf,
    pub final_checkpoint: PathBuf,
}

#[derive(Debug)]
pub struct TrainArtifacts {
    pub net: ResNet<f32>,
    pub metrics: Vec<EpochMetrics>,
    /// Epoch with the highest validation accuracy (earliest on ties);
    /// `None` when no epochs ran.
    pub best_epoch: Option<usize>,
    pub best_val_acc: f64,
}

pub struct EvalReport {
    pub accuracy: f64,
    /// confusion[true][pred]
    pub confusion: Vec<Vec<u64>>,
    pub n: usize,
}

fn assemble_batch(
    set: &dyn SampleSource,
    order: &[usize],
    start: usize,
    bs: usize,
    augment: Option<(u64, u64)>, // (seed, epoch)
    x: &mut Tensor<f32>,
    labels: &mut Vec<u8>,
) {
    let (c, h, w) = set.sample_shape();
    let slab = c * h * w;
    labels.clear();
    for bi in 0..bs {
        let idx = order[start + bi];
        let out = &mut x.data_mut()[bi * slab..(bi + 1) * slab];
        match augment {
            Some((seed, epoch)) => {
                let mut rng = ChaCha8Rng::seed_from_u64(sample_stream_seed(seed, epoch, idx as u64));
                set.fill(idx, Some(&mut rng), out);
            }
            None => set.fill(idx, None, out),
        }
        labels.push(set.label(idx));
    }
}

/// Mean loss and accuracy of `net` on `set` in eval mode (no augmentation).
fn eval_pass(
    net: &ResNet<f32>,
    set: &dyn SampleSource,
    batch_size: usize,
    alpha: f32,
    scratch: &mut ConvScratch<f32>,
    confusion: Option<&mut [Vec<u64>]>,
) -> Result<(f64, f64), NnError> {
    let n = set.len();
    if n == 0 {
        return Err(NnError::EmptySampleSet { detail: "evaluation set is empty".into() });
    }
    let (c, h, w) = set.sample_shape();
    let order: Vec<usize> = (0..n).collect();
    let mut labels = Vec::with_capacity(batch_size);
    let mut loss_sum = 0.0f64;
    let mut correct = 0u64;
    let mut confusion = confusion;
    let mut start = 0;
    while start < n {
        let bs = batch_size.min(n - start);
        let mut x = Tensor::zeros(vec![bs, c, h, w]);
        assemble_batch(set, &order, start, bs, None, &mut x, &mut labels);
        let logits = net.forward_eval(&x, scratch)?;
        let (loss, _) = cross_entropy_smoothed(&logits, &labels, alpha)?;
        loss_sum += loss as f64 * bs as f64;
        for (bi, &lab) in labels.iter().enumerate() {
            let pred = argmax_row(&logits.data()[bi * net.cfg.n_classes..(bi + 1) * net.cfg.n_classes]);
            if pred == lab as usize {
                correct += 1;
            }
            if let Some(cm) = confusion.as_deref_mut() {
                cm[lab as usize][pred] += 1;
            }
        }
        start += bs;
    }
    Ok((loss_sum / n as f64, correct as f64 / n as f64))
}

/// Accuracy and K×K confusion matrix of `net` over `set`.
pub fn evaluate(
    net: &ResNet<f32>,
    set: &dyn SampleSource,
    batch_size: usize,
) -> Result<EvalReport, NnError> {
    let k = net.cfg.n_classes;
    let mut confusion = vec![vec![0u64; k]; k];
    let mut scratch = ConvScratch::new();
    let (_, accuracy) = eval_pass(net, set, batch_size.max(1), 0.0, &mut scratch, Some(&mut confusion))?;
    Ok(EvalReport { accuracy, confusion, n: set.len() })
}

/// Run the full training loop: per-epoch seeded shuffle, augmentation,
/// SGD updates, a validation pass per epoch, and metric/checkpoint artifacts.
///
/// Any non-finite loss, logits, or batch statistics during a training step —
/// and any non-finite parameter after an optimizer step — aborts with
/// [`NnError::DivergedLoss`] carrying the epoch and batch index.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train_set: &dyn SampleSource,
    val_set: &dyn SampleSource,
    outputs: &TrainOutputs,
    ckpt_meta: &CheckpointMeta,
) -> Result<TrainArtifacts, NnError> {
    cfg.validate()?;
    let mut net = ResNet::<f32>::new(model_cfg.clone(), cfg.seed)?;
    if train_set.is_empty() {
        return Err(NnError::EmptySampleSet { detail: "training split is empty".into() });
    }
    let (c, h, w) = train_set.sample_shape();
    if c != model_cfg.in_channels {
        return Err(NnError::ShapeMismatch {
            op: "train",
            detail: format!("samples have {c} channels, model expects {}", model_cfg.in_channels),
        });
    }
    let alpha = cfg.label_smoothing as f32;
    let n = train_set.len();
    let mut scratch = ConvScratch::new();
    let mut labels = Vec::with_capacity(cfg.batch_size);
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut best_epoch = None;
    let mut best_val_acc = f64::NEG_INFINITY;

    let meta_with_train = |epoch: usize| CheckpointMeta {
        train_meta: Some(TrainMeta { epoch, seed: cfg.seed, momentum: true }),
        ..ckpt_meta.clone()
    };

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(shuffle_stream_seed(cfg.seed, epoch as u64));
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0f64;
        let mut correct = 0u64;
        let mut start = 0;
        let mut batch_index = 0usize;
        while start < n {
            let bs = cfg.batch_size.min(n - start);
            let mut x = Tensor::zeros(vec![bs, c, h, w]);
            assemble_batch(train_set, &order, start, bs, Some((cfg.seed, epoch as u64)), &mut x, &mut labels);
            let diverged = |_| NnError::DivergedLoss { epoch, batch_index };
            let (logits, cache) = net.forward_train(&x, &mut scratch).map_err(&diverged)?;
            let (loss, dlogits) = cross_entropy_smoothed(&logits, &labels, alpha).map_err(&diverged)?;
            if !loss.is_finite() {
                return Err(NnError::DivergedLoss { epoch, batch_index });
            }
            loss_sum += loss as f64 * bs as f64;
            for (bi, &lab) in labels.iter().enumerate() {
                let row = &logits.data()[bi * model_cfg.n_classes..(bi + 1) * model_cfg.n_classes];
                if argmax_row(row) == lab as usize {
                    correct += 1;
                }
            }
            net.backward(&cache, &dlogits, &mut scratch).map_err(&diverged)?;
            let lr_t = lr as f32;
            let (mu, wd) = (cfg.momentum as f32, cfg.weight_decay as f32);
            let mut step_result = Ok(());
            net.visit_params_mut(&mut |_, v, g, b| {
                if step_result.is_ok() {
                    step_result = sgd_step(v.data_mut(), g.data(), b.data_mut(), lr_t, mu, wd);
                }
            });
            step_result?;
            if !net.params_finite() {
                return Err(NnError::DivergedLoss { epoch, batch_index });
            }
            start += bs;
            batch_index += 1;
        }
        let train_loss = loss_sum / n as f64;
        let train_acc = correct as f64 / n as f64;
        let (val_loss, val_acc) = eval_pass(&net, val_set, cfg.batch_size, alpha, &mut scratch, None)?;
        metrics.push(EpochMetrics { epoch, lr, train_loss, train_acc, val_loss, val_acc });
        if val_acc > best_val_acc {
            best_val_acc = val_acc;
            best_epoch = Some(epoch);
            save_checkpoint(&outputs.best_checkpoint, &mut net, ckpt_meta)?;
        }
    }

    if cfg.epochs == 0 {
        // No training happened: the "best" artifact is the initialization too.
        save_checkpoint(&outputs.best_checkpoint, &mut net, ckpt_meta)?;
    }
    save_checkpoint(&outputs.final_checkpoint, &mut net, &meta_with_train(cfg.epochs))?;
    fs::write(&outputs.metrics_csv, metrics_to_csv(&metrics))?;
    Ok(TrainArtifacts {
        net,
        metrics,
        best_epoch,
        best_val_acc: if best_epoch.is_some() { best_val_acc } else { f64::NAN },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::StemKind;
    use rand::prelude::*;

    /// Five linearly separable "classes": per-band constant offsets plus a
    /// little seeded noise. Normalization is baked into generation.
    struct Blobs {
        data: Vec<Vec<f32>>,
        labels: Vec<u8>,
        shape: (usize, usize, usize),
    }

    impl Blobs {
        fn new(per_class: usize, shape: (usize, usize, usize), seed: u64) -> Self {
            let (c, h, w) = shape;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut data = Vec::new();
            let mut labels = Vec::new();
            for class in 0..5u8 {
                for _ in 0..per_class {
                    let tile: Vec<f32> = (0..c * h * w)
                        .map(|i| {
                            let band = i / (h * w);
                            let base = (class as f32 - 2.0) * 0.8 + band as f32 * 0.1;
                            base + rng.random_range(-0.3..0.3)
                        })
                        .collect();
                    data.push(tile);
                    labels.push(class);
                }
            }
            Self { data, labels, shape }
        }
    }

    impl SampleSource for Blobs {
        fn len(&self) -> usize {
            self.data.len()
        }
        fn sample_shape(&self) -> (usize, usize, usize) {
            self.shape
        }
        fn label(&self, idx: usize) -> u8 {
            self.labels[idx]
        }
        fn fill(&self, idx: usize, _rng: Option<&mut ChaCha8Rng>, out: &mut [f32]) {
            out.copy_from_slice(&self.data[idx]);
        }
    }

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            stem: StemKind::Cifar,
            stage_blocks: [1, 1, 1, 1],
            stage_widths: [4, 4, 8, 8],
            in_channels: 4,
            n_classes: 5,
        }
    }

    fn outputs_in(dir: &std::path::Path) -> TrainOutputs {
        TrainOutputs {
            metrics_csv: dir.join("metrics.csv"),
            best_checkpoint: dir.join("best.cnn1"),
            final_checkpoint: dir.join("final.cnn1"),
        }
    }

    #[test]
    fn learns_a_separable_toy_problem() {
        let dir = tempfile::tempdir().unwrap();
        let train_set = Blobs::new(40, (4, 8, 8), 1);
        let val_set = Blobs::new(8, (4, 8, 8), 2);
        let cfg = TrainConfig {
            epochs: 6,
            batch_size: 25,
            lr0: 0.05,
            seed: 3,
            ..TrainConfig::default()
        };
        let out = outputs_in(dir.path());
        let art = train(&tiny_cfg(), &cfg, &train_set, &val_set, &out, &CheckpointMeta::default()).unwrap();
        assert_eq!(art.metrics.len(), 6);
        assert!(art.metrics.iter().all(|m| m.train_loss.is_finite()));
        assert!(art.best_val_acc >= 0.9, "val accuracy {}", art.best_val_acc);
        let csv = std::fs::read_to_string(&out.metrics_csv).unwrap();
        assert!(csv.starts_with(METRICS_HEADER));
        assert_eq!(csv.lines().count(), 7);

        let report = evaluate(&art.net, &val_set, 16).unwrap();
        assert!(report.accuracy >= 0.9);
        let trace: u64 = (0..5).map(|i| report.confusion[i][i]).sum();
        let total: u64 = report.confusion.iter().flatten().sum();
        assert_eq!(total, 40);
        assert_eq!(trace as f64 / total as f64, report.accuracy);
    }

    #[test]
    fn same_seed_reproduces_artifacts_bitwise() {
        let train_set = Blobs::new(12, (4, 8, 8), 1);
        let val_set = Blobs::new(4, (4, 8, 8), 2);
        let cfg = TrainConfig { epochs: 2, batch_size: 16, lr0: 0.02, seed: 9, ..TrainConfig::default() };
        let mut artifacts = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().unwrap();
            let out = outputs_in(dir.path());
            train(&tiny_cfg(), &cfg, &train_set, &val_set, &out, &CheckpointMeta::default()).unwrap();
            artifacts.push((
                std::fs::read(&out.metrics_csv).unwrap(),
                std::fs::read(&out.final_checkpoint).unwrap(),
                std::fs::read(&out.best_checkpoint).unwrap(),
            ));
        }
        assert_eq!(artifacts[0], artifacts[1]);
    }

    #[test]
    fn zero_epochs_leaves_initialization_and_empty_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let set = Blobs::new(4, (4, 8, 8), 1);
        let cfg = TrainConfig { epochs: 0, seed: 17, ..TrainConfig::default() };
        let out = outputs_in(dir.path());
        let art = train(&tiny_cfg(), &cfg, &set, &set, &out, &CheckpointMeta::default()).unwrap();
        assert!(art.metrics.is_empty());
        assert_eq!(art.best_epoch, None);
        let csv = std::fs::read_to_string(&out.metrics_csv).unwrap();
        assert_eq!(csv.trim_end(), METRICS_HEADER);

        let (mut loaded, _) = crate::nn::checkpoint::load_checkpoint::<f32>(&out.final_checkpoint).unwrap();
        let mut fresh = ResNet::<f32>::new(tiny_cfg(), 17).unwrap();
        let mut same = true;
        let mut fresh_bits = Vec::new();
        fresh.visit_params_mut(&mut |_, v, _, _| fresh_bits.extend(v.data().iter().map(|x| x.to_bits())));
        let mut i = 0;
        loaded.visit_params_mut(&mut |_, v, _, _| {
            for x in v.data() {
                same &= x.to_bits() == fresh_bits[i];
                i += 1;
            }
        });
        assert!(same);
    }

    #[test]
    fn absurd_learning_rate_reports_divergence() {
        let dir = tempfile::tempdir().unwrap();
        let set = Blobs::new(10, (4, 8, 8), 1);
        let cfg = TrainConfig { epochs: 3, batch_size: 16, lr0: 1e30, seed: 5, ..TrainConfig::default() };
        let out = outputs_in(dir.path());
        let err = train(&tiny_cfg(), &cfg, &set, &set, &out, &CheckpointMeta::default()).unwrap_err();
        assert!(matches!(err, NnError::DivergedLoss { .. }), "got {err:?}");
    }

    #[test]
    fn empty_sets_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let empty = Blobs::new(0, (4, 8, 8), 1);
        let set = Blobs::new(4, (4, 8, 8), 1);
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
        let out = outputs_in(dir.path());
        assert!(matches!(
            train(&tiny_cfg(), &cfg, &empty, &set, &out, &CheckpointMeta::default()),
            Err(NnError::EmptySampleSet { .. })
        ));
        let net = ResNet::<f32>::new(tiny_cfg(), 0).unwrap();
        assert!(matches!(evaluate(&net, &empty, 8), Err(NnError::EmptySampleSet { .. })));
    }

    #[test]
    fn sample_streams_are_stable_and_distinct() {
        let a = sample_stream_seed(1, 2, 3);
        assert_eq!(a, sample_stream_seed(1, 2, 3));
        assert_ne!(a, sample_stream_seed(1, 2, 4));
        assert_ne!(a, sample_stream_seed(1, 3, 3));
        assert_ne!(a, sample_stream_seed(2, 2, 3));
    }
}
