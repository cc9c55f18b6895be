//! Mini-batch training with Adam, L2 decay, early stopping and plateau
//! learning-rate reduction, plus test-set evaluation.

use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamState};
use super::loss::{bce_data, bce_loss, l2_penalty};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, confusion, EvalReport};
use crate::nn::model::{batch_from_rows, predict_proba, ParamKind};
use crate::nn::{model_backward, model_forward, ModelConfig, ModelParams, Mode, Tensor};

/// Probability above which a segment is labelled a seizure.
pub const DECISION_THRESHOLD: f64 = 0.5;

pub const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHyper {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub patience_es: usize,
    pub patience_lr: usize,
    pub lr_factor: f64,
    pub min_lr: f64,
    /// Minimum decrease in validation loss that counts as an improvement.
    pub min_delta: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            seed: 42,
            patience_es: 10,
            patience_lr: 5,
            lr_factor: 0.5,
            min_lr: 1e-5,
            min_delta: 1e-4,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: String| Err(Error::config(f, m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", format!("must be positive, got {}", self.lr));
        }
        if self.batch_size < 2 {
            return bad("batch_size", format!("must be at least 2, got {}", self.batch_size));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs", "must be at least 1".into());
        }
        if self.patience_es == 0 || self.patience_lr == 0 {
            return bad("patience_es", "patience values must be at least 1".into());
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return bad("lr_factor", format!("must lie in (0, 1), got {}", self.lr_factor));
        }
        if !(self.min_lr >= 0.0 && self.min_lr <= self.lr) {
            return bad("min_lr", format!("must lie in [0, lr], got {}", self.min_lr));
        }
        if self.min_delta.is_nan() || self.min_delta < 0.0 {
            return bad("min_delta", format!("must be non-negative, got {}", self.min_delta));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

/// Outcome of feeding one validation loss to a [`PlateauMonitor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonitorAction {
    pub improved: bool,
    pub reduce_lr: bool,
    pub stop: bool,
}

/// Patience bookkeeping shared by early stopping and learning-rate decay.
/// Both counters reset whenever the loss beats the reference by more than
/// `min_delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauMonitor {
    reference: f64,
    wait_es: usize,
    wait_lr: usize,
    patience_es: usize,
    patience_lr: usize,
    min_delta: f64,
}

impl PlateauMonitor {
    pub fn new(patience_es: usize, patience_lr: usize, min_delta: f64) -> Self {
        Self {
            reference: f64::INFINITY,
            wait_es: 0,
            wait_lr: 0,
            patience_es,
            patience_lr,
            min_delta,
        }
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.wait_es
    }

    pub fn observe(&mut self, val_loss: f64) -> MonitorAction {
        if val_loss < self.reference - self.min_delta {
            self.reference = val_loss;
            self.wait_es = 0;
            self.wait_lr = 0;
            return MonitorAction {
                improved: true,
                reduce_lr: false,
                stop: false,
            };
        }
        self.wait_es += 1;
        self.wait_lr += 1;
        let reduce_lr = self.wait_lr >= self.patience_lr;
        if reduce_lr {
            self.wait_lr = 0;
        }
        MonitorAction {
            improved: false,
            reduce_lr,
            stop: self.wait_es >= self.patience_es,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub history: Vec<EpochRecord>,
    pub best_val_loss: f64,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
    pub lr: f64,
    pub stopped_early: bool,
    pub hyper: TrainHyper,
}

impl TrainState {
    pub fn epochs(&self) -> usize {
        self.history.len()
    }

    /// Curves CSV: one row per epoch, fixed 6-decimal formatting.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_acc,val_loss,val_acc,lr\n");
        for r in &self.history {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.lr
            ));
        }
        s
    }
}

fn check_split(d: &Dataset, what: &str, cfg: &ModelConfig) -> Result<()> {
    if d.is_empty() {
        return Err(Error::Data(format!("{what} set is empty")));
    }
    if let Some(r) = d.features.iter().find(|r| r.len() != cfg.input_len) {
        return Err(Error::shape(format!(
            "{what} rows have {} features, model expects {}",
            r.len(),
            cfg.input_len
        )));
    }
    let pos = d.n_positive();
    if pos == 0 || pos == d.len() {
        return Err(Error::Data(format!("{what} set contains a single class")));
    }
    Ok(())
}

/// Mini-batches over a shuffled order; a trailing batch of one sample is
/// folded into its predecessor because train-mode batch norm needs two.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

fn accuracy(probs: &[f64], labels: &[u8]) -> f64 {
    let correct = probs
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| u8::from(p > DECISION_THRESHOLD) == y)
        .count();
    correct as f64 / labels.len() as f64
}

/// Validation loss (data + L2) and accuracy in infer mode.
fn validate(cfg: &ModelConfig, params: &ModelParams, val: &Dataset) -> Result<(f64, f64)> {
    let probs = predict_proba(cfg, params, &val.features, EVAL_CHUNK)?;
    let (data, _) = bce_data(&probs, &val.labels)?;
    let loss = data + l2_penalty(params, cfg.l2_lambda);
    if !loss.is_finite() {
        return Err(Error::NonFinite("validation loss".into()));
    }
    Ok((loss, accuracy(&probs, &val.labels)))
}

/// One optimizer step on one mini-batch; returns (loss, correct count).
fn train_step(
    cfg: &ModelConfig,
    params: &mut ModelParams,
    adam: &mut AdamState,
    train: &Dataset,
    idx: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<(f64, usize)> {
    let rows: Vec<&[f64]> = idx.iter().map(|&i| train.features[i].as_slice()).collect();
    let labels: Vec<u8> = idx.iter().map(|&i| train.labels[i]).collect();
    let batch = batch_from_rows(&rows)?;
    let (probs, trace) = model_forward(cfg, params, &batch, Mode::Train, rng)?;
    let trace = trace.expect("train mode returns a trace");
    let (loss, grad_probs) = bce_loss(&probs, &labels, params, cfg.l2_lambda)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    let mut grads = model_backward(cfg, params, &trace, &grad_probs)?;

    let lambda = cfg.l2_lambda;
    for ((kind, g), slot) in grads.trainable_mut().into_iter().zip(params.trainable()) {
        if kind == ParamKind::Kernel && lambda > 0.0 {
            for (gv, &w) in g.data_mut().iter_mut().zip(slot.tensor.data()) {
                *gv += 2.0 * lambda * w;
            }
        }
    }
    let grad_refs: Vec<&Tensor> = grads.trainable().into_iter().map(|s| s.tensor).collect();
    let mut param_refs: Vec<&mut Tensor> =
        params.trainable_mut().into_iter().map(|(_, t)| t).collect();
    adam_step(&mut param_refs, &grad_refs, adam)?;
    params.update_running_stats(&trace);

    let correct = probs
        .iter()
        .zip(&labels)
        .filter(|(&p, &y)| u8::from(p > DECISION_THRESHOLD) == y)
        .count();
    Ok((loss, correct))
}

/// Train from a seeded initialization. Returns the parameters of the epoch
/// with the lowest validation loss.
pub fn train(
    cfg: &ModelConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    hyper: &TrainHyper,
) -> Result<(ModelParams, TrainState)> {
    train_with(cfg, train_set, val_set, hyper, |_, _| ControlFlow::Continue(()))
}

/// [`train`] with a per-epoch observer that may end the run early.
pub fn train_with<F>(
    cfg: &ModelConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    hyper: &TrainHyper,
    mut observer: F,
) -> Result<(ModelParams, TrainState)>
where
    F: FnMut(&EpochRecord, &ModelParams) -> ControlFlow<()>,
{
    cfg.validate()?;
    hyper.validate()?;
    check_split(train_set, "training", cfg)?;
    check_split(val_set, "validation", cfg)?;
    if train_set.len() < 2 {
        return Err(Error::Data("training set needs at least 2 rows".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut params = ModelParams::init(cfg, rng.gen())?;
    let mut adam = AdamState::new(
        params.trainable().iter().map(|s| s.tensor.shape()),
        hyper.lr,
    );
    let mut monitor = PlateauMonitor::new(hyper.patience_es, hyper.patience_lr, hyper.min_delta);
    let mut best = params.clone();
    let mut state = TrainState {
        history: Vec::new(),
        best_val_loss: f64::INFINITY,
        best_epoch: 0,
        epochs_since_improvement: 0,
        lr: hyper.lr,
        stopped_early: false,
        hyper: hyper.clone(),
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=hyper.max_epochs {
        order.shuffle(&mut rng);
        let lr = adam.lr;
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for idx in batches(&order, hyper.batch_size) {
            let (loss, c) = train_step(cfg, &mut params, &mut adam, train_set, idx, &mut rng)?;
            loss_sum += loss * idx.len() as f64;
            correct += c;
        }
        let (val_loss, val_acc) = validate(cfg, &params, val_set)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            val_loss,
            val_acc,
            lr,
        };
        state.history.push(record);
        if val_loss < state.best_val_loss {
            state.best_val_loss = val_loss;
            state.best_epoch = epoch;
            best = params.clone();
        }

        let action = monitor.observe(val_loss);
        if action.reduce_lr {
            adam.lr = (adam.lr * hyper.lr_factor).max(hyper.min_lr);
        }
        state.lr = adam.lr;
        state.epochs_since_improvement = monitor.epochs_since_improvement();
        if observer(&record, &params).is_break() {
            break;
        }
        if action.stop {
            state.stopped_early = true;
            break;
        }
    }
    Ok((best, state))
}

/// Infer-mode evaluation at the 0.5 threshold.
pub fn evaluate(cfg: &ModelConfig, params: &ModelParams, data: &Dataset) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let probs = predict_proba(cfg, params, &data.features, EVAL_CHUNK)?;
    let cm = confusion(&probs, &data.labels, DECISION_THRESHOLD)?;
    compute_metrics(&cm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monitor_stops_after_patience() {
        let mut m = PlateauMonitor::new(3, 2, 1e-4);
        let losses = [1.0, 1.0, 1.2, 1.00005];
        let actions: Vec<MonitorAction> = losses.iter().map(|&l| m.observe(l)).collect();
        assert!(actions[0].improved);
        assert!(!actions[1].stop && !actions[2].stop);
        assert!(actions[2].reduce_lr);
        assert!(actions[3].stop);
    }

    #[test]
    fn monitor_resets_on_real_improvement() {
        let mut m = PlateauMonitor::new(2, 5, 1e-4);
        m.observe(1.0);
        assert!(!m.observe(0.99995).improved);
        assert!(m.observe(0.9).improved);
        assert_eq!(m.epochs_since_improvement(), 0);
    }

    #[test]
    fn trailing_singleton_batch_is_merged() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.len(), 2);
        assert_eq!(b[1], &[4, 5, 6, 7, 8]);
        let b = batches(&order[..8], 4);
        assert_eq!(b.iter().map(|x| x.len()).collect::<Vec<_>>(), vec![4, 4]);
    }

    #[test]
    fn hyper_validation() {
        assert!(TrainHyper::default().validate().is_ok());
        let bad = TrainHyper {
            lr_factor: 1.5,
            ..TrainHyper::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { .. })));
        let bad = TrainHyper {
            batch_size: 1,
            ..TrainHyper::default()
        };
        assert!(bad.validate().is_err());
    }
}
