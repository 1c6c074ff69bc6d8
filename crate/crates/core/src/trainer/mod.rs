//! Supervised training: SGD with momentum, step schedule, cross-entropy on
//! logits, evaluation metrics, checkpoints and a CSV metrics log.

pub mod checkpoint;
pub mod optim;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{augment, AugmentOp, SetBatch, SetDataset};
use crate::error::{Error, Result};
use crate::models::{argmax, Model};
use crate::nn::{Mode, Pass};
use crate::rng::RngState;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use optim::{sgd_step, LrSchedule, OptimizerState, MOMENTUM, WEIGHT_DECAY};

pub const METRICS_HEADER: &str = "epoch,split,loss,accuracy,error_rate,lr,wall_seconds";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Augmentations applied to every training batch.
    pub augment: Vec<AugmentOp>,
    /// Leading channels treated as coordinates by the augmentations.
    pub coord_channels: usize,
    /// Also writes `checkpoint-epoch<k>.dmpp` every this many epochs.
    pub checkpoint_every: Option<usize>,
    pub out_dir: Option<PathBuf>,
    /// Off by default so metrics files are byte-identical across runs.
    pub record_wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 250,
            batch_size: 32,
            eval_batch_size: 128,
            schedule: LrSchedule::step(0.01, Some(200)),
            momentum: MOMENTUM,
            weight_decay: WEIGHT_DECAY,
            augment: Vec::new(),
            coord_channels: 2,
            checkpoint_every: None,
            out_dir: None,
            record_wall_clock: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    pub error_rate: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch,
            r.split.as_str(),
            r.loss,
            r.accuracy,
            r.error_rate,
            r.lr,
            r.wall_seconds
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: usize,
    pub correct: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub error_rate: f64,
    pub per_class: Vec<ClassAccuracy>,
}

impl EvalReport {
    fn from_predictions(pred: &[usize], labels: &[usize], class_count: usize) -> Self {
        let mut per_class: Vec<ClassAccuracy> = (0..class_count)
            .map(|class| ClassAccuracy {
                class,
                correct: 0,
                total: 0,
            })
            .collect();
        let mut correct = 0;
        for (&p, &l) in pred.iter().zip(labels) {
            per_class[l].total += 1;
            if p == l {
                per_class[l].correct += 1;
                correct += 1;
            }
        }
        let total = labels.len();
        let accuracy = correct as f64 / total as f64;
        Self {
            correct,
            total,
            accuracy,
            error_rate: 1.0 - accuracy,
            per_class,
        }
    }
}

/// Anything that assigns a class to each set of a batch.
pub trait Classifier {
    fn predict_batch(&self, batch: &SetBatch) -> Result<Vec<usize>>;
}

impl<T: Scalar> Classifier for Model<T> {
    fn predict_batch(&self, batch: &SetBatch) -> Result<Vec<usize>> {
        self.predict(&batch.stacked().cast(), batch.set_size())
    }
}

fn chunks(len: usize, size: usize) -> impl Iterator<Item = Vec<usize>> {
    let size = size.max(1);
    (0..len.div_ceil(size)).map(move |k| (k * size..((k + 1) * size).min(len)).collect())
}

/// Accuracy, error rate and per-class accuracy in eval mode.
pub fn evaluate(model: &impl Classifier, data: &SetDataset, batch_size: usize) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Consistency("cannot evaluate on an empty dataset".into()));
    }
    let mut pred = Vec::with_capacity(data.len());
    for idx in chunks(data.len(), batch_size) {
        pred.extend(model.predict_batch(&data.batch(&idx)?)?);
    }
    Ok(EvalReport::from_predictions(&pred, &data.labels, data.class_count))
}

/// Mean cross-entropy and report in eval mode.
pub fn evaluate_with_loss<T: Scalar>(model: &Model<T>, data: &SetDataset, batch_size: usize) -> Result<(f64, EvalReport)> {
    if data.is_empty() {
        return Err(Error::Consistency("cannot evaluate on an empty dataset".into()));
    }
    let mut pred = Vec::with_capacity(data.len());
    let mut loss = 0.0;
    for idx in chunks(data.len(), batch_size) {
        let batch = data.batch(&idx)?;
        let tape = Tape::new();
        let mut pass = Pass::new(&tape, model.store(), Mode::Eval, false);
        let x = pass.input(batch.stacked().cast());
        let logits = model.forward(&mut pass, x, batch.set_size())?;
        let l = logits.cross_entropy(&batch.labels)?.value().data()[0].as_f64();
        loss += l * idx.len() as f64;
        let v = logits.value();
        pred.extend((0..v.rows()).map(|r| argmax(v.row(r))));
    }
    Ok((loss / data.len() as f64, EvalReport::from_predictions(&pred, &data.labels, data.class_count)))
}

/// Loss, per-parameter gradients and side effects of one train-mode batch.
pub struct BatchGradients<T> {
    pub loss: f64,
    pub grads: Vec<Tensor<T>>,
    pub logits: Tensor<T>,
    pub outcome: crate::nn::pass::PassOutcome<T>,
}

pub fn batch_gradients<T: Scalar>(model: &Model<T>, batch: &SetBatch, dropout: Option<RngState>) -> Result<BatchGradients<T>> {
    let tape = Tape::new();
    let mut pass = Pass::new(&tape, model.store(), Mode::Train, true);
    if let Some(rng) = dropout {
        pass = pass.with_dropout_rng(rng);
    }
    let x = pass.input(batch.stacked().cast());
    let logits = model.forward(&mut pass, x, batch.set_size())?;
    let loss = logits.cross_entropy(&batch.labels)?;
    let g = tape.backward(loss)?;
    let grads = pass.params().iter().map(|v| g.wrt(*v)).collect();
    Ok(BatchGradients {
        loss: loss.value().data()[0].as_f64(),
        grads,
        logits: logits.value(),
        outcome: pass.finish(),
    })
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<MetricsRow>,
    pub checkpoint: Checkpoint,
    pub warnings: Vec<String>,
}

impl TrainOutcome {
    pub fn metrics_csv(&self) -> String {
        metrics_csv(&self.history)
    }
}

fn write_file(path: PathBuf, bytes: &[u8]) -> Result<()> {
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

/// Trains `model` in place. One train row (and one test row when `test` is
/// given) is recorded per epoch. With `out_dir` set, `metrics.csv` and
/// `checkpoint-final.dmpp` are written there.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    train_set: &SetDataset,
    test_set: Option<&SetDataset>,
    cfg: &TrainConfig,
    rng: &mut RngState,
) -> Result<TrainOutcome> {
    if !model.is_classifier() {
        return Err(Error::Config {
            key: "model.head".into(),
            reason: "training needs a classifier head".into(),
        });
    }
    if cfg.batch_size < 2 {
        return Err(Error::Config {
            key: "train.batch_size".into(),
            reason: "batch normalization needs batches of at least 2 sets".into(),
        });
    }
    if train_set.is_empty() && cfg.epochs > 0 {
        return Err(Error::Consistency("empty training set".into()));
    }
    let start = Instant::now();
    let wall = |start: &Instant| if cfg.record_wall_clock { start.elapsed().as_secs_f64() } else { 0.0 };
    let mut opt = OptimizerState::with_coefficients(model.store(), cfg.schedule.rate(0), cfg.momentum, cfg.weight_decay);
    let mut history = Vec::new();
    let mut warnings: Vec<String> = Vec::new();
    for epoch in 0..cfg.epochs {
        opt.lr = cfg.schedule.rate(epoch);
        let order = rng.permutation(train_set.len());
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let mut batch = train_set.batch(idx)?;
            if !cfg.augment.is_empty() {
                batch = augment(&batch, &cfg.augment, cfg.coord_channels, rng)?;
            }
            let dropout = RngState::new(rng.next_u64());
            let step = batch_gradients(model, &batch, Some(dropout))?;
            if !step.loss.is_finite() || step.grads.iter().any(|g| !g.all_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    loss: step.loss,
                });
            }
            sgd_step(model.store_mut(), &step.grads, &mut opt)?;
            model.store_mut().apply_stats(&step.outcome.updates);
            for w in step.outcome.warnings {
                if !warnings.contains(&w) {
                    warnings.push(w);
                }
            }
            loss_sum += step.loss * idx.len() as f64;
            seen += idx.len();
            correct += (0..idx.len())
                .filter(|&r| argmax(step.logits.row(r)) == batch.labels[r])
                .count();
        }
        let accuracy = correct as f64 / seen.max(1) as f64;
        history.push(MetricsRow {
            epoch,
            split: Split::Train,
            loss: loss_sum / seen.max(1) as f64,
            accuracy,
            error_rate: 1.0 - accuracy,
            lr: opt.lr,
            wall_seconds: wall(&start),
        });
        if let Some(test) = test_set {
            let (loss, report) = evaluate_with_loss(model, test, cfg.eval_batch_size)?;
            history.push(MetricsRow {
                epoch,
                split: Split::Test,
                loss,
                accuracy: report.accuracy,
                error_rate: report.error_rate,
                lr: opt.lr,
                wall_seconds: wall(&start),
            });
        }
        if let (Some(every), Some(dir)) = (cfg.checkpoint_every, &cfg.out_dir) {
            if every > 0 && (epoch + 1) % every == 0 {
                Checkpoint::capture(model, Some(&opt), epoch + 1, rng).save(dir.join(format!("checkpoint-epoch{}.dmpp", epoch + 1)))?;
            }
        }
    }
    let checkpoint = Checkpoint::capture(model, Some(&opt), cfg.epochs, rng);
    if let Some(dir) = &cfg.out_dir {
        write_file(dir.join("metrics.csv"), metrics_csv(&history).as_bytes())?;
        checkpoint.save(dir.join("checkpoint-final.dmpp"))?;
    }
    Ok(TrainOutcome {
        history,
        checkpoint,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic_task, SyntheticTaskSpec};
    use crate::models::{build_model, ModelConfig};

    struct Constant(usize);

    impl Classifier for Constant {
        fn predict_batch(&self, batch: &SetBatch) -> Result<Vec<usize>> {
            Ok(vec![self.0; batch.batch_size()])
        }
    }

    struct Oracle<'a>(&'a SetDataset);

    impl Classifier for Oracle<'_> {
        fn predict_batch(&self, batch: &SetBatch) -> Result<Vec<usize>> {
            Ok(batch
                .unstack()
                .iter()
                .map(|s| self.0.labels[self.0.sets.iter().position(|t| t == s).unwrap()])
                .collect())
        }
    }

    fn balanced() -> SetDataset {
        let sets = (0..50).map(|i| Tensor::full(&[2, 1], i as f64)).collect();
        SetDataset::new(sets, (0..50).map(|i| i % 10).collect(), 10).unwrap()
    }

    #[test]
    fn constant_and_oracle_classifiers() {
        let data = balanced();
        let r = evaluate(&Constant(3), &data, 7).unwrap();
        assert_eq!((r.correct, r.total), (5, 50));
        assert!((r.accuracy - 0.1).abs() < 1e-15);
        assert_eq!(r.per_class[3], ClassAccuracy { class: 3, correct: 5, total: 5 });
        let r = evaluate(&Oracle(&data), &data, 16).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.error_rate, 0.0);
    }

    #[test]
    fn empty_dataset() {
        let empty = SetDataset::new(Vec::new(), Vec::new(), 10).unwrap();
        assert!(matches!(evaluate(&Constant(0), &empty, 8), Err(Error::Consistency(_))));
    }

    fn small_task() -> (SetDataset, SetDataset) {
        make_synthetic_task(&SyntheticTaskSpec {
            set_size: 8,
            train_count: 64,
            test_count: 16,
            seed: 1,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_epochs_changes_nothing() {
        let (train_set, _) = small_task();
        let mut model: Model<f64> = build_model(&ModelConfig::synthetic(2, 4), &mut RngState::new(0)).unwrap();
        let before = model.store().clone();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let out = train(&mut model, &train_set, None, &cfg, &mut RngState::new(1)).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(model.store(), &before);
    }

    #[test]
    fn identical_seeds_identical_curves() {
        let (train_set, test_set) = small_task();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 16,
            schedule: LrSchedule::step(0.05, None),
            ..Default::default()
        };
        let run = || {
            let mut model: Model<f64> = build_model(&ModelConfig::synthetic(2, 4), &mut RngState::new(9)).unwrap();
            train(&mut model, &train_set, Some(&test_set), &cfg, &mut RngState::new(10)).unwrap().metrics_csv()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.starts_with(METRICS_HEADER));
        assert_eq!(a.lines().count(), 5);
    }

    #[test]
    fn divergence_names_epoch_and_batch() {
        let (train_set, _) = small_task();
        let mut model: Model<f64> = build_model(&ModelConfig::synthetic(2, 4), &mut RngState::new(0)).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            schedule: LrSchedule::step(1e200, None),
            ..Default::default()
        };
        match train(&mut model, &train_set, None, &cfg, &mut RngState::new(1)) {
            Err(Error::Divergence { epoch, batch, .. }) => assert!(epoch < 3 && batch < 4),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_unit_batches() {
        let (train_set, _) = small_task();
        let mut model: Model<f64> = build_model(&ModelConfig::synthetic(2, 4), &mut RngState::new(0)).unwrap();
        let cfg = TrainConfig {
            batch_size: 1,
            ..Default::default()
        };
        assert!(matches!(
            train(&mut model, &train_set, None, &cfg, &mut RngState::new(1)),
            Err(Error::Config { .. })
        ));
    }
}
