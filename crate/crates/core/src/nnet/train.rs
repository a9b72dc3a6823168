use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Adam, Batch, Dims, ModelState};
use crate::cancel::CancelToken;
use crate::error::{Error, Result};
use crate::seed;

/// How many epochs each training phase runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpochSchedule {
    /// Phase k runs `epochs[k]`; the last entry repeats.
    Table,
    /// Phase epochs are `epoch_constant / √N`, N the phase's training-set size.
    /// A zero constant anchors the rule at `epochs[0]` for the first phase.
    InverseSqrt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: Vec<usize>,
    pub epoch_rule: EpochSchedule,
    pub epoch_constant: f64,
    /// Profiles are mean-pooled to this many inputs; 0 keeps every bin.
    pub input_dim: usize,
    pub hidden: [usize; 2],
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 512,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: vec![400, 300, 250, 200],
            epoch_rule: EpochSchedule::Table,
            epoch_constant: 0.0,
            input_dim: 0,
            hidden: [256, 64],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train: {m}")));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.epochs.is_empty() || self.epochs.contains(&0) {
            return bad("every phase needs at least one epoch");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return bad("moment coefficients must lie in [0, 1) and epsilon must be positive");
        }
        if self.epoch_constant < 0.0 || !self.epoch_constant.is_finite() {
            return bad("epoch_constant must be >= 0");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }

    pub fn dims(&self, n_bins: usize) -> Dims {
        let input = if self.input_dim == 0 || self.input_dim >= n_bins {
            n_bins
        } else {
            self.input_dim
        };
        Dims {
            input,
            h1: self.hidden[0],
            h2: self.hidden[1],
        }
    }

    /// Epochs for training phase `phase` on `n_train` samples; `n_first` is
    /// the training-set size of phase 0 (anchors the inverse-√N rule).
    pub fn epochs_for(&self, phase: usize, n_train: usize, n_first: usize) -> usize {
        match self.epoch_rule {
            EpochSchedule::Table => self.epochs[phase.min(self.epochs.len() - 1)],
            EpochSchedule::InverseSqrt => self.inverse_sqrt_epochs(n_train, n_first),
        }
    }

    /// Epochs for a single bulk training run on `n_train` samples. The
    /// inverse-√N rule applies in both schedule modes, anchored at
    /// `epochs[0]` on `n_first` samples unless a constant is configured.
    pub fn bulk_epochs(&self, n_train: usize, n_first: usize) -> usize {
        self.inverse_sqrt_epochs(n_train, n_first)
    }

    fn inverse_sqrt_epochs(&self, n_train: usize, n_first: usize) -> usize {
        let constant = if self.epoch_constant > 0.0 {
            self.epoch_constant
        } else {
            self.epochs[0] as f64 * (n_first.max(1) as f64).sqrt()
        };
        ((constant / (n_train.max(1) as f64).sqrt()).round() as usize).max(1)
    }
}

/// Evaluation of a model on a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub class_loss: f64,
    pub reg_loss: f64,
    pub total: f64,
    /// Mean over samples of ‖m⊙(y − ŷ)‖², without variance weighting.
    pub mse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_total: f64,
    pub val_total: f64,
    pub val_class: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// State with the lowest validation total loss (epoch 0 included).
    pub best: ModelState,
    pub best_epoch: usize,
    /// Row 0 holds the losses before any update.
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,train_total,val_total,val_class,val_mse\n");
        for r in &self.history {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.train_total, r.val_total, r.val_class, r.val_mse
            ));
        }
        out
    }
}

const EVAL_CHUNK: usize = 512;

/// Class loss, heteroscedastic loss and MSE over `data`. Chunks run on the
/// current rayon pool and are summed in order.
pub fn evaluate(model: &ModelState, data: &Batch) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty dataset".into()));
    }
    let starts: Vec<usize> = (0..data.len()).step_by(EVAL_CHUNK).collect();
    let parts = starts
        .par_iter()
        .map(|&lo| {
            let hi = (lo + EVAL_CHUNK).min(data.len());
            let chunk = data.slice(lo, hi);
            let n = (hi - lo) as f64;
            let parts = model.loss(&chunk)?;
            let out = model.forward_batch(chunk.x.view())?;
            let resid = &chunk.targets - &out.y_hat;
            Ok([parts.class * n, parts.reg * n, (&resid * &resid * &chunk.masks).sum()])
        })
        .collect::<Result<Vec<[f64; 3]>>>()?;
    let (mut class_sum, mut reg_sum, mut sq_sum) = (0.0, 0.0, 0.0);
    for [c, r, q] in parts {
        class_sum += c;
        reg_sum += r;
        sq_sum += q;
    }
    let n = data.len() as f64;
    let (class_loss, reg_loss) = (class_sum / n, reg_sum / n);
    Ok(Metrics {
        class_loss,
        reg_loss,
        total: class_loss + reg_loss,
        mse: sq_sum / n,
    })
}

/// Shuffled minibatch training for `epochs` epochs with a fresh optimiser.
/// Validation loss is measured after every epoch and the best state kept.
pub fn train(model: &ModelState, train_set: &Batch, val_set: &Batch, cfg: &TrainConfig, epochs: usize) -> Result<TrainOutcome> {
    train_cancellable(model, train_set, val_set, cfg, epochs, &CancelToken::new())
}

/// [`train`] that stops with [`Error::Cancelled`] once `cancel` is set.
pub fn train_cancellable(
    model: &ModelState,
    train_set: &Batch,
    val_set: &Batch,
    cfg: &TrainConfig,
    epochs: usize,
    cancel: &CancelToken,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidArgument("training and validation sets must be nonempty".into()));
    }
    let mut current = model.clone();
    let initial_train = evaluate(&current, train_set)?;
    let initial_val = evaluate(&current, val_set)?;
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_total: initial_train.total,
        val_total: initial_val.total,
        val_class: initial_val.class_loss,
        val_mse: initial_val.mse,
    }];
    let mut best = current.clone();
    let mut best_val = initial_val.total;
    let mut best_epoch = 0;
    if epochs == 0 {
        return Ok(TrainOutcome { best, best_epoch, history });
    }

    let mut opt = Adam::new(current.params().len(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
    let mut rng = seed::rng(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            if cancel.is_cancelled() {
                return Err(Error::Cancelled);
            }
            let batch = train_set.select(idx);
            let (parts, grad) = current.grad(&batch)?;
            if !parts.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("minibatch loss {parts:?}"),
                });
            }
            loss_sum += parts.total * idx.len() as f64;
            opt.step(current.params_mut(), &grad);
        }
        let val = evaluate(&current, val_set)?;
        if !val.total.is_finite() || !current.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("validation loss {}", val.total),
            });
        }
        history.push(EpochRecord {
            epoch,
            train_total: loss_sum / train_set.len() as f64,
            val_total: val.total,
            val_class: val.class_loss,
            val_mse: val.mse,
        });
        if val.total < best_val {
            best_val = val.total;
            best = current.clone();
            best_epoch = epoch;
        }
    }
    Ok(TrainOutcome { best, best_epoch, history })
}
