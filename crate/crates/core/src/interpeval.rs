//! Faithfulness of relevance maps: mask the most relevant inputs first and
//! watch the classifier degrade.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{Baseline, RelevanceMap};
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::model::Classifier;
use crate::stats::sigmoid;
use crate::tensor::Tensor;

pub const DEFAULT_FRACTIONS: [f64; 6] = [0.0, 0.05, 0.1, 0.2, 0.4, 0.8];

/// How masked elements are replaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PerturbMode {
    #[default]
    ToBaseline,
    /// Masked elements are shuffled among themselves.
    Permute { seed: u64 },
}

/// What gets ranked and masked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    Element,
    /// Whole variable channels of a `[lead, V, H, W]` input, ranked by their
    /// mean relevance.
    Variable,
}

/// Indices ordered by relevance, largest first; equal values keep array order.
pub fn relevance_order(relevance: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..relevance.len()).collect();
    idx.sort_by(|&a, &b| relevance[b].total_cmp(&relevance[a]));
    idx
}

fn masked_count(fraction: f64, n: usize) -> usize {
    // Guard against 0.1 * 10 landing a hair above 1.
    ((fraction * n as f64) - 1e-9).ceil().clamp(0.0, n as f64) as usize
}

fn variable_groups(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [_, v, h, w] => Ok((*v, h * w)),
        _ => Err(Error::ShapeMismatch(format!("variable-level masking needs [lead, V, H, W], got {shape:?}"))),
    }
}

/// Elements to mask for `fraction`, in masking order.
fn chosen(relevance: &Tensor, fraction: f64, granularity: Granularity) -> Result<Vec<usize>> {
    let r = relevance.data();
    match granularity {
        Granularity::Element => {
            let k = masked_count(fraction, r.len());
            let mut order = relevance_order(r);
            order.truncate(k);
            Ok(order)
        }
        Granularity::Variable => {
            let (nv, plane) = variable_groups(relevance.shape())?;
            let mut sums = vec![0.0; nv];
            for (i, &v) in r.iter().enumerate() {
                sums[(i / plane) % nv] += v;
            }
            let k = masked_count(fraction, nv);
            let vars = &relevance_order(&sums)[..k];
            Ok((0..r.len()).filter(|i| vars.contains(&((i / plane) % nv))).collect())
        }
    }
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("masking fraction {fraction} outside [0, 1]")));
    }
    Ok(())
}

fn apply(x: &Tensor, baseline: &Tensor, idx: &[usize], mode: PerturbMode) -> Tensor {
    let mut out = x.clone();
    match mode {
        PerturbMode::ToBaseline => {
            for &i in idx {
                out.data_mut()[i] = baseline.data()[i];
            }
        }
        PerturbMode::Permute { seed } => {
            let mut vals: Vec<f64> = idx.iter().map(|&i| x.data()[i]).collect();
            vals.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            for (&i, v) in idx.iter().zip(vals) {
                out.data_mut()[i] = v;
            }
        }
    }
    out
}

/// Replaces the `ceil(fraction * N)` most relevant elements of `x`.
pub fn perturb_topk(
    x: &Tensor,
    relevance: &RelevanceMap,
    baseline: &Tensor,
    fraction: f64,
    mode: PerturbMode,
    granularity: Granularity,
) -> Result<Tensor> {
    check_fraction(fraction)?;
    if relevance.values.shape() != x.shape() || baseline.shape() != x.shape() {
        return Err(Error::ShapeMismatch(format!(
            "input {:?}, relevance {:?}, baseline {:?}",
            x.shape(),
            relevance.values.shape(),
            baseline.shape()
        )));
    }
    let idx = chosen(&relevance.values, fraction, granularity)?;
    Ok(apply(x, baseline, &idx, mode))
}

/// Which degradation a curve tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaithMetric {
    /// Accuracy against the sample labels.
    Accuracy,
    /// Mean of `logit(x) - logit(perturbed x)`.
    LogitDrop,
}

impl FaithMetric {
    pub fn name(self) -> &'static str {
        match self {
            FaithMetric::Accuracy => "accuracy",
            FaithMetric::LogitDrop => "logit_drop",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessCurve {
    pub metric: FaithMetric,
    pub fractions: Vec<f64>,
    pub metric_at_fraction: Vec<f64>,
    /// Trapezoid area under the drop curve: `m(0) - m(f)` for accuracy,
    /// the value itself for the logit drop. Larger means more faithful.
    pub auc: f64,
}

impl FaithfulnessCurve {
    pub fn new(metric: FaithMetric, fractions: Vec<f64>, metric_at_fraction: Vec<f64>) -> Self {
        let drop: Vec<f64> = match metric {
            FaithMetric::Accuracy => metric_at_fraction.iter().map(|m| metric_at_fraction[0] - m).collect(),
            FaithMetric::LogitDrop => metric_at_fraction.clone(),
        };
        let auc = fractions.windows(2).zip(drop.windows(2)).map(|(f, d)| (f[1] - f[0]) * (d[0] + d[1]) / 2.0).sum();
        Self { metric, fractions, metric_at_fraction, auc }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessConfig {
    pub fractions: Vec<f64>,
    pub mode: PerturbMode,
    pub granularity: Granularity,
    pub threshold: f64,
}

impl Default for FaithfulnessConfig {
    fn default() -> Self {
        Self {
            fractions: DEFAULT_FRACTIONS.to_vec(),
            mode: PerturbMode::ToBaseline,
            granularity: Granularity::Element,
            threshold: 0.5,
        }
    }
}

/// Both curves for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Faithfulness {
    pub accuracy: FaithfulnessCurve,
    pub logit_drop: FaithfulnessCurve,
}

/// Perturbs every sample at every fraction by its own map and reports the
/// accuracy and mean logit drop per fraction.
pub fn faithfulness(
    model: &dyn Classifier,
    samples: &[Sample],
    maps: &[RelevanceMap],
    baseline: &Baseline,
    cfg: &FaithfulnessConfig,
) -> Result<Faithfulness> {
    if samples.len() != maps.len() {
        return Err(Error::ShapeMismatch(format!("{} samples but {} relevance maps", samples.len(), maps.len())));
    }
    if samples.is_empty() {
        return Err(Error::Empty("faithfulness samples".into()));
    }
    let fr = &cfg.fractions;
    if fr.first() != Some(&0.0) || fr.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("fractions must ascend from 0".into()));
    }
    fr.iter().try_for_each(|&f| check_fraction(f))?;

    // logits[sample][fraction]
    let logits: Vec<Vec<f64>> = samples
        .par_iter()
        .zip(maps)
        .enumerate()
        .map(|(i, (s, m))| {
            let b = baseline.materialize(s.input.shape())?;
            let mode = match cfg.mode {
                PerturbMode::Permute { seed } => PerturbMode::Permute { seed: seed.wrapping_add(i as u64) },
                other => other,
            };
            fr.iter()
                .map(|&f| {
                    let x = perturb_topk(&s.input, m, &b, f, mode, cfg.granularity)?;
                    model.logit(x.data())
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let n = samples.len() as f64;
    let mut acc = vec![0.0; fr.len()];
    let mut drop = vec![0.0; fr.len()];
    for (row, s) in logits.iter().zip(samples) {
        for (j, &z) in row.iter().enumerate() {
            if (sigmoid(z) >= cfg.threshold) == (s.label == 1) {
                acc[j] += 1.0;
            }
            drop[j] += row[0] - z;
        }
    }
    acc.iter_mut().for_each(|v| *v /= n);
    drop.iter_mut().for_each(|v| *v /= n);
    Ok(Faithfulness {
        accuracy: FaithfulnessCurve::new(FaithMetric::Accuracy, fr.clone(), acc),
        logit_drop: FaithfulnessCurve::new(FaithMetric::LogitDrop, fr.clone(), drop),
    })
}

/// Methods by descending AUC; equal AUCs in name order.
pub fn rank_methods(curves: &BTreeMap<String, FaithfulnessCurve>) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = curves.iter().map(|(k, c)| (k.clone(), c.auc)).collect();
    // BTreeMap iteration is already name-ordered and the sort is stable.
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    out
}

pub fn write_curves_csv(curves: &BTreeMap<String, Faithfulness>, path: &Path) -> Result<()> {
    let mut out = String::from("method,metric_name,fraction,metric,auc\n");
    for (method, f) in curves {
        for c in [&f.accuracy, &f.logit_drop] {
            for (fr, m) in c.fractions.iter().zip(&c.metric_at_fraction) {
                out.push_str(&format!("{method},{},{fr},{m:.10},{:.10}\n", c.metric.name(), c.auc));
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankingEntry {
    pub rank: usize,
    pub method: String,
    pub auc: f64,
}

pub fn write_ranking_json(ranking: &[(String, f64)], metric: FaithMetric, path: &Path) -> Result<()> {
    let entries: Vec<RankingEntry> = ranking
        .iter()
        .enumerate()
        .map(|(i, (m, a))| RankingEntry { rank: i + 1, method: m.clone(), auc: *a })
        .collect();
    let doc = serde_json::json!({ "metric": metric.name(), "ranking": entries });
    std::fs::write(path, serde_json::to_string_pretty(&doc)?).map_err(|e| Error::io(path, e))
}
