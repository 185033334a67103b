use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Metrics, Trainable};
use crate::dataset::{DatasetSplit, Sample};
use crate::error::{Error, Result};
use crate::stats::{sigmoid, softplus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Weight of the positive-class term in the cross-entropy.
    pub pos_weight: f64,
    pub threshold: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay, applied as `p -= lr * weight_decay * p`.
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 30,
            batch: 32,
            seed: 0,
            pos_weight: 5.0,
            threshold: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    /// Parameters from the epoch with the best validation accuracy
    /// (ties go to the lower validation loss, then the earlier epoch).
    /// Without a validation split, the last epoch.
    pub model: M,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

fn weighted_bce(z: f64, y: u8, pos_weight: f64) -> (f64, f64) {
    if y == 1 {
        (pos_weight * softplus(-z), pos_weight * (sigmoid(z) - 1.0))
    } else {
        (softplus(z), sigmoid(z))
    }
}

fn mean_loss<M: Trainable>(model: &M, samples: &[Sample], pos_weight: f64) -> Result<(f64, Vec<f64>)> {
    let logits: Vec<f64> = samples.par_iter().map(|s| model.logit(s.input.data())).collect::<Result<_>>()?;
    let loss = logits.iter().zip(samples).map(|(&z, s)| weighted_bce(z, s.label, pos_weight).0).sum::<f64>()
        / samples.len() as f64;
    Ok((loss, logits))
}

/// Mini-batch Adam on class-weighted binary cross-entropy.
///
/// Per-sample gradients are computed in parallel but summed in batch order,
/// so results do not depend on the thread count.
pub fn train<M: Trainable>(mut model: M, split: &DatasetSplit, cfg: &TrainConfig) -> Result<TrainOutcome<M>> {
    if split.train.is_empty() {
        return Err(Error::Empty("training split".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let n_params = model.params().len();
    let mut m = vec![0.0; n_params];
    let mut v = vec![0.0; n_params];
    let mut step = 0i32;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..split.train.len()).collect();

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, usize, M)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch) {
            let per_sample: Vec<(f64, f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&i| {
                    let s = &split.train[i];
                    let (z, g) = model.logit_param_grad(s.input.data())?;
                    let (loss, dz) = weighted_bce(z, s.label, cfg.pos_weight);
                    Ok((loss, dz, g))
                })
                .collect::<Result<_>>()?;
            let mut grad = vec![0.0; n_params];
            let scale = 1.0 / batch.len() as f64;
            for (loss, dz, g) in &per_sample {
                epoch_loss += loss;
                let k = dz * scale;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += k * b;
                }
            }
            step += 1;
            let bc1 = 1.0 - cfg.beta1.powi(step);
            let bc2 = 1.0 - cfg.beta2.powi(step);
            for (((p, g), m), v) in model.params_mut().iter_mut().zip(&grad).zip(&mut m).zip(&mut v) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *p -= cfg.lr * ((*m / bc1) / ((*v / bc2).sqrt() + cfg.eps) + cfg.weight_decay * *p);
            }
        }
        let train_loss = epoch_loss / split.train.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Diverged { epoch, loss: train_loss });
        }

        let (val_loss, val_accuracy) = if split.val.is_empty() {
            (None, None)
        } else {
            let (loss, logits) = mean_loss(&model, &split.val, cfg.pos_weight)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            let probs: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
            let labels: Vec<u8> = split.val.iter().map(|s| s.label).collect();
            let acc = Metrics::from_predictions(&probs, &labels, cfg.threshold).accuracy();
            (Some(loss), acc)
        };
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:?} acc {val_accuracy:?}");
        history.push(EpochRecord { epoch, train_loss, val_loss, val_accuracy });

        let key = (val_accuracy.unwrap_or(0.0), val_loss.unwrap_or(train_loss));
        let better = match &best {
            None => true,
            Some(_) if split.val.is_empty() => true,
            Some((acc, loss, _, _)) => key.0 > *acc || (key.0 == *acc && key.1 < *loss),
        };
        if better {
            best = Some((key.0, key.1, epoch, model.clone()));
        }
    }

    match best {
        Some((_, _, best_epoch, best_model)) => Ok(TrainOutcome { model: best_model, history, best_epoch }),
        None => Ok(TrainOutcome { model, history, best_epoch: 0 }),
    }
}

pub fn write_history_csv(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.10}")).unwrap_or_default();
    let mut out = String::from("epoch,train_loss,val_loss,val_accuracy\n");
    for r in history {
        out.push_str(&format!("{},{:.10},{},{}\n", r.epoch, r.train_loss, opt(r.val_loss), opt(r.val_accuracy)));
    }
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
