//! Differentiable binary classifiers, their training loop and confusion
//! metrics.

mod checkpoint;
mod conv_attn;
pub mod layers;
mod linear;
mod train;

use serde::{Deserialize, Serialize};

use crate::dataset::{PeriodBins, Sample};
use crate::error::{Error, Result};
use crate::stats::sigmoid;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};
pub use conv_attn::{ConvAttnConfig, ConvAttnModel, Gradients, Trace};
pub use linear::LogisticModel;
pub use train::{train, write_history_csv, EpochRecord, TrainConfig, TrainOutcome};

/// A frozen binary classifier with a differentiable logit.
///
/// Implementations take the flattened `[7 * V, H, W]` input.
pub trait Classifier: Send + Sync {
    fn input_len(&self) -> usize;

    /// Pre-sigmoid output.
    fn logit(&self, x: &[f64]) -> Result<f64>;

    /// The logit and its gradient with respect to every input element.
    fn logit_input_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn probability(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit(x)?))
    }
}

/// A classifier whose parameters can be optimized.
pub trait Trainable: Classifier + Clone {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// The logit and its gradient with respect to every parameter.
    fn logit_param_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Confusion counts and the ratios derived from them. Ratios with a zero
/// denominator are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl Metrics {
    pub fn from_counts(tp: u64, fn_: u64, fp: u64, tn: u64) -> Self {
        Self { tp, fn_, fp, tn }
    }

    /// Counts from probabilities: predicted positive iff `p >= threshold`.
    pub fn from_predictions(probabilities: &[f64], labels: &[u8], threshold: f64) -> Self {
        let mut m = Self::default();
        for (&p, &y) in probabilities.iter().zip(labels) {
            match (p >= threshold, y == 1) {
                (true, true) => m.tp += 1,
                (false, true) => m.fn_ += 1,
                (true, false) => m.fp += 1,
                (false, false) => m.tn += 1,
            }
        }
        m
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }

    /// Sensitivity.
    pub fn tpr(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Specificity.
    pub fn tnr(&self) -> Option<f64> {
        ratio(self.tn, self.tn + self.fp)
    }

    /// Precision.
    pub fn ppv(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    /// Miss rate, `1 - tpr`.
    pub fn fnr(&self) -> Option<f64> {
        self.tpr().map(|t| 1.0 - t)
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }

    /// The five ratios as percentages in table order:
    /// sensitivity, specificity, precision, miss rate, accuracy.
    pub fn percentages(&self) -> [Option<f64>; 5] {
        [self.tpr(), self.tnr(), self.ppv(), self.fnr(), self.accuracy()].map(|r| r.map(|v| 100.0 * v))
    }
}

/// Probabilities for each sample.
pub fn predict(model: &dyn Classifier, samples: &[Sample]) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    samples.par_iter().map(|s| model.probability(s.input.data())).collect()
}

pub fn evaluate(model: &dyn Classifier, samples: &[Sample], threshold: f64) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation samples".into()));
    }
    let probs = predict(model, samples)?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    Ok(Metrics::from_predictions(&probs, &labels, threshold))
}

/// Metrics per period bin; bins without samples are `None`.
pub fn evaluate_by_period(
    model: &dyn Classifier,
    samples: &[Sample],
    bins: &PeriodBins,
    threshold: f64,
) -> Result<Vec<Option<Metrics>>> {
    let binned = crate::dataset::bin_by_period(samples, bins)?;
    binned
        .into_iter()
        .map(|b| {
            if b.is_empty() {
                return Ok(None);
            }
            let owned: Vec<Sample> = b.into_iter().cloned().collect();
            evaluate(model, &owned, threshold).map(Some)
        })
        .collect()
}
