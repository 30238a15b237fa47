//! Splitting, the minibatch training loop with early stopping, prediction
//! and confusion-matrix evaluation.

pub mod data;
pub mod metrics;
pub mod split;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::edf::Label;
use crate::error::{Error, Result};
use crate::nn::model::commit_running_stats;
use crate::nn::{model_backward, model_forward, model_infer, LayerSpec, LossKind, Mode, ModelSpec, Parameters, Tensor};
use crate::optim::{Optimizer, OptimizerConfig, OptimizerKind};

pub use data::{batch_loss, pm_one_targets, standardize_features, Dataset, Standardizer};
pub use metrics::{metrics, render_table, ConfusionMatrix, EvalReport, Metrics, Rate};
pub use split::{split_indices, split_subject_holdout, split_train_val, Holdout};

const EVAL_CHUNK: usize = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Consecutive validation evaluations without strict improvement before stopping.
    pub patience: usize,
    pub val_fraction: f64,
    pub batch_size: usize,
    pub loss: LossKind,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// z-score inputs with statistics of the training split.
    pub standardize_features: bool,
}

impl TrainConfig {
    /// Per-sample gradient descent on tanh outputs with squared error.
    pub fn mlp() -> Self {
        TrainConfig {
            max_epochs: 100,
            patience: 15,
            val_fraction: 0.15,
            batch_size: 1,
            loss: LossKind::Mse,
            optimizer: OptimizerConfig::gd(),
            seed: 0,
            standardize_features: true,
        }
    }

    pub fn convnet(kind: OptimizerKind) -> Self {
        TrainConfig {
            batch_size: 100,
            loss: LossKind::CrossEntropy,
            optimizer: OptimizerConfig::convnet(kind),
            standardize_features: false,
            ..Self::mlp()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Argument(format!("val_fraction {} must lie in (0, 1)", self.val_fraction)));
        }
        if self.patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Argument("patience, batch_size and max_epochs must be >= 1".into()));
        }
        self.optimizer.validate()
    }
}

/// Strict-improvement patience counter over validation losses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_loss: f64,
    pub best_epoch: Option<usize>,
    pub since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: None,
            since_best: 0,
        }
    }

    /// Records one evaluation; returns whether it strictly improved on the best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best_loss {
            self.best_loss = loss;
            self.best_epoch = Some(epoch);
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Patience,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "epoch,train_loss,val_loss,lr")?;
        for r in &self.epochs {
            writeln!(w, "{},{:e},{:e},{:e}", r.epoch, r.train_loss, r.val_loss, r.lr)?;
        }
        Ok(())
    }
}

/// Everything needed to continue training after epoch `next_epoch - 1`.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub next_epoch: usize,
    pub params: Parameters,
    pub optimizer: Optimizer,
    pub best: Parameters,
    pub stopper: EarlyStopping,
    pub history: Vec<EpochRecord>,
}

/// The serializable part of [`TrainState`] that is not a tensor.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Progress {
    pub next_epoch: usize,
    pub stopper: EarlyStopping,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn progress(&self) -> Progress {
        Progress {
            next_epoch: self.next_epoch,
            stopper: self.stopper.clone(),
            history: self.history.clone(),
        }
    }

    pub fn to_checkpoint(&self, spec: &ModelSpec) -> crate::nn::Checkpoint {
        let mut ck = crate::nn::Checkpoint::new(spec.clone(), self.params.clone());
        ck.best = Some(self.best.clone());
        ck.optimizer = Some(self.optimizer.clone());
        ck.extra = serde_json::to_value(self.progress()).unwrap_or_default();
        ck
    }

    pub fn from_checkpoint(ck: crate::nn::Checkpoint) -> Result<Self> {
        let progress: Progress = serde_json::from_value(ck.extra)
            .map_err(|e| Error::Checkpoint(format!("no training progress in checkpoint: {e}")))?;
        let optimizer = ck
            .optimizer
            .ok_or_else(|| Error::Checkpoint("no optimizer state in checkpoint".into()))?;
        Ok(TrainState {
            next_epoch: progress.next_epoch,
            best: ck.best.unwrap_or_else(|| ck.params.clone()),
            params: ck.params,
            optimizer,
            stopper: progress.stopper,
            history: progress.history,
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Snapshot from the best validation epoch.
    pub params: Parameters,
    pub history: TrainHistory,
    pub standardizer: Option<Standardizer>,
}

fn epoch_rng(seed: u64, epoch: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + 2 * epoch as u64 + purpose);
    rng
}

fn has_batchnorm(spec: &ModelSpec) -> bool {
    spec.layers.iter().any(|l| matches!(l, LayerSpec::BatchNorm { .. }))
}

/// Consecutive slices of `order`; a trailing single-sample batch is merged
/// into its predecessor when the model normalizes over the batch.
fn minibatches(order: &[usize], size: usize, merge_singleton: bool) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if merge_singleton && out.len() > 1 && out.last().map_or(false, |b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().expect("at least one batch") = &order[start..];
    }
    out
}

/// Mean loss over `ds` in inference mode.
pub fn dataset_loss(spec: &ModelSpec, params: &Parameters, ds: &Dataset, loss: LossKind) -> Result<f64> {
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, labels) = ds.batch(chunk);
        let out = model_infer(spec, params, &x)?;
        total += batch_loss(loss, &out, &labels)?.0 * chunk.len() as f64;
    }
    Ok(total / ds.len() as f64)
}

/// Fresh state for training `params` with `cfg`.
pub fn initial_state(params: Parameters, cfg: &TrainConfig) -> Result<TrainState> {
    let optimizer = {
        let refs: Vec<&Tensor> = params.trainable().into_iter().map(|(_, t)| t).collect();
        Optimizer::new(cfg.optimizer.clone(), &refs)?
    };
    Ok(TrainState {
        next_epoch: 0,
        best: params.clone(),
        params,
        optimizer,
        stopper: EarlyStopping::new(cfg.patience),
        history: Vec::new(),
    })
}

/// Runs epochs from `state.next_epoch` until the epoch limit or patience is
/// exhausted. `on_epoch` sees the state after every epoch.
pub fn fit(
    spec: &ModelSpec,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    mut state: TrainState,
    on_epoch: &mut dyn FnMut(&TrainState) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} training and {} validation samples",
            train.len(),
            val.len()
        )));
    }
    let merge = has_batchnorm(spec);
    let mut reason = StopReason::MaxEpochs;
    if state.stopper.should_stop() {
        reason = StopReason::Patience;
    }
    while reason == StopReason::MaxEpochs && state.next_epoch < cfg.max_epochs {
        let epoch = state.next_epoch;
        let lr = state.optimizer.start_epoch(epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut epoch_rng(cfg.seed, epoch, 0));
        let mut dropout_rng = epoch_rng(cfg.seed, epoch, 1);
        let mut sum = 0.0;
        for (b, idx) in minibatches(&order, cfg.batch_size, merge).into_iter().enumerate() {
            let (x, labels) = train.batch(idx);
            let pass = model_forward(spec, &state.params, &x, Mode::Train, &mut dropout_rng)?;
            let (loss, grad) = batch_loss(cfg.loss, &pass.output, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    at: format!("batch {b}"),
                    loss,
                });
            }
            let (grads, _) = model_backward(spec, &state.params, &pass.caches, &grad)?;
            if !grads.tensors.iter().all(Tensor::all_finite) {
                return Err(Error::Divergence {
                    epoch,
                    at: format!("batch {b} gradient"),
                    loss,
                });
            }
            state
                .optimizer
                .step(&mut state.params.trainable_mut(), &grads.tensors)?;
            commit_running_stats(&mut state.params, &pass.caches);
            sum += loss * idx.len() as f64;
        }
        let val_loss = dataset_loss(spec, &state.params, val, cfg.loss)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                at: "validation".into(),
                loss: val_loss,
            });
        }
        state.history.push(EpochRecord {
            epoch,
            train_loss: sum / train.len() as f64,
            val_loss,
            lr,
        });
        if state.stopper.observe(epoch, val_loss) {
            state.best = state.params.clone();
        }
        log::info!(
            "epoch {epoch:3}  lr {lr:.1e}  train {:.5}  val {val_loss:.5}{}",
            sum / train.len() as f64,
            if state.stopper.since_best == 0 { "  *" } else { "" }
        );
        state.next_epoch += 1;
        if state.stopper.should_stop() {
            reason = StopReason::Patience;
        }
        on_epoch(&state)?;
    }
    let best_epoch = state
        .stopper
        .best_epoch
        .ok_or_else(|| Error::Contract("training ran no epochs".into()))?;
    Ok(TrainOutcome {
        params: state.best,
        history: TrainHistory {
            epochs: state.history,
            best_epoch,
            best_val_loss: state.stopper.best_loss,
            stop_reason: reason,
        },
        standardizer: None,
    })
}

/// Splits `data` 85/15 (by `cfg`), optionally standardizes, and trains.
pub fn train(spec: &ModelSpec, params: Parameters, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (tr, va) = split_indices(data.len(), cfg.val_fraction, cfg.seed)?;
    let (mut train_set, mut val_set) = (data.subset(&tr), data.subset(&va));
    let standardizer = if cfg.standardize_features {
        Some(standardize_features(&mut train_set, &mut [&mut val_set])?)
    } else {
        None
    };
    let state = initial_state(params, cfg)?;
    let mut out = fit(spec, &train_set, &val_set, cfg, state, &mut |_| Ok(()))?;
    out.standardizer = standardizer;
    Ok(out)
}

/// Argmax over each output row; ties go to the lower class index (Left).
pub fn decide(output: &Tensor) -> Result<Vec<Label>> {
    if output.shape().len() != 2 || output.shape()[1] != Label::ALL.len() {
        return Err(Error::Shape(format!(
            "expected [batch, {}] outputs, got {:?}",
            Label::ALL.len(),
            output.shape()
        )));
    }
    Ok((0..output.batch())
        .map(|i| {
            let r = output.row(i);
            if r[1] > r[0] {
                Label::Right
            } else {
                Label::Left
            }
        })
        .collect())
}

pub fn predict(spec: &ModelSpec, params: &Parameters, sample: &[f64]) -> Result<Label> {
    let mut shape = vec![1];
    shape.extend_from_slice(&spec.input_shape);
    let x = Tensor::new(shape, sample.to_vec())?;
    Ok(decide(&model_infer(spec, params, &x)?)?[0])
}

pub fn predict_dataset(spec: &ModelSpec, params: &Parameters, ds: &Dataset) -> Result<Vec<Label>> {
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut out = Vec::with_capacity(ds.len());
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, _) = ds.batch(chunk);
        out.extend(decide(&model_infer(spec, params, &x)?)?);
    }
    Ok(out)
}

pub fn evaluate(spec: &ModelSpec, params: &Parameters, test: &Dataset) -> Result<ConfusionMatrix> {
    if test.is_empty() {
        return Err(Error::EmptyDataset("nothing to evaluate".into()));
    }
    let pred = predict_dataset(spec, params, test)?;
    Ok(ConfusionMatrix::from_pairs(test.labels.iter().copied().zip(pred)))
}
