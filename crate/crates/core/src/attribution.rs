//! Gradient-based relevance maps for a frozen classifier.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::griddata::{read_xg1, write_xg1};
use crate::model::Classifier;
use crate::stats::sigmoid;
use crate::tensor::Tensor;

/// Which model output is attributed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    #[default]
    Logit,
    Probability,
}

/// Attribution values shaped like the attributed input, plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceMap {
    pub values: Tensor,
    pub method: String,
    pub baseline_spec: String,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub sample_date: Option<NaiveDate>,
    /// `|sum(attributions) - (f(x) - f(baseline))|` for path methods.
    #[serde(default)]
    pub completeness_gap: Option<f64>,
    pub target: Target,
}

impl RelevanceMap {
    pub fn with_date(mut self, date: NaiveDate) -> Self {
        self.sample_date = Some(date);
        self
    }
}

/// Output value and input gradient for the chosen target.
pub fn target_grad(model: &dyn Classifier, x: &[f64], target: Target) -> Result<(f64, Vec<f64>)> {
    let (z, mut g) = model.logit_input_grad(x)?;
    match target {
        Target::Logit => Ok((z, g)),
        Target::Probability => {
            let p = sigmoid(z);
            let d = p * (1.0 - p);
            g.iter_mut().for_each(|v| *v *= d);
            Ok((p, g))
        }
    }
}

pub fn target_value(model: &dyn Classifier, x: &[f64], target: Target) -> Result<f64> {
    let z = model.logit(x)?;
    Ok(match target {
        Target::Logit => z,
        Target::Probability => sigmoid(z),
    })
}

fn check_same_shape(x: &Tensor, b: &Tensor) -> Result<()> {
    if x.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("input {:?} vs baseline {:?}", x.shape(), b.shape())));
    }
    Ok(())
}

/// Path sum `(x - b) * mean_k grad f(b + alpha_k (x - b))` over arbitrary
/// path positions.
pub fn path_attribution(
    model: &dyn Classifier,
    x: &Tensor,
    baseline: &Tensor,
    alphas: &[f64],
    target: Target,
) -> Result<Vec<f64>> {
    check_same_shape(x, baseline)?;
    let diff: Vec<f64> = x.data().iter().zip(baseline.data()).map(|(a, b)| a - b).collect();
    let mut acc = vec![0.0; diff.len()];
    let mut point = vec![0.0; diff.len()];
    for &alpha in alphas {
        for ((p, &b), &d) in point.iter_mut().zip(baseline.data()).zip(&diff) {
            *p = b + alpha * d;
        }
        let (_, g) = target_grad(model, &point, target)?;
        for (a, gv) in acc.iter_mut().zip(&g) {
            *a += gv;
        }
    }
    let m = alphas.len() as f64;
    Ok(acc.iter().zip(&diff).map(|(a, d)| d * a / m).collect())
}

/// Integrated Gradients with the right-endpoint Riemann rule:
/// `IG_i = (x_i - b_i) / m * sum_{k=1..m} df/dx_i (b + k/m (x - b))`.
pub fn integrated_gradients(
    model: &dyn Classifier,
    x: &Tensor,
    baseline: &Tensor,
    steps: usize,
    target: Target,
) -> Result<RelevanceMap> {
    if steps < 1 {
        return Err(Error::InvalidArgument("integrated gradients needs at least one step".into()));
    }
    let alphas: Vec<f64> = (1..=steps).map(|k| k as f64 / steps as f64).collect();
    let values = path_attribution(model, x, baseline, &alphas, target)?;
    let delta = target_value(model, x.data(), target)? - target_value(model, baseline.data(), target)?;
    let gap = (values.iter().sum::<f64>() - delta).abs();
    Ok(RelevanceMap {
        values: Tensor::new(x.shape().to_vec(), values),
        method: "integrated_gradients".into(),
        baseline_spec: String::new(),
        steps: Some(steps),
        seed: None,
        sample_date: None,
        completeness_gap: Some(gap),
        target,
    })
}

/// GradSHAP / expected gradients: average of `(x - b) * grad f(b + a (x - b))`
/// over `n_samples` draws of a baseline from the pool and `a ~ U(0, 1)`.
pub fn grad_shap(
    model: &dyn Classifier,
    x: &Tensor,
    baseline_pool: &[Tensor],
    n_samples: usize,
    seed: u64,
    target: Target,
) -> Result<RelevanceMap> {
    if baseline_pool.is_empty() {
        return Err(Error::Empty("baseline pool".into()));
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("grad_shap needs at least one sample".into()));
    }
    for b in baseline_pool {
        check_same_shape(x, b)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.len();
    let mut acc = vec![0.0; n];
    let mut point = vec![0.0; n];
    for _ in 0..n_samples {
        let b = &baseline_pool[rng.random_range(0..baseline_pool.len())];
        let alpha: f64 = rng.random();
        for ((p, &bv), &xv) in point.iter_mut().zip(b.data()).zip(x.data()) {
            *p = bv + alpha * (xv - bv);
        }
        let (_, g) = target_grad(model, &point, target)?;
        for i in 0..n {
            acc[i] += (x.data()[i] - b.data()[i]) * g[i];
        }
    }
    acc.iter_mut().for_each(|v| *v /= n_samples as f64);
    Ok(RelevanceMap {
        values: Tensor::new(x.shape().to_vec(), acc),
        method: "grad_shap".into(),
        baseline_spec: format!("pool of {}", baseline_pool.len()),
        steps: Some(n_samples),
        seed: Some(seed),
        sample_date: None,
        completeness_gap: None,
        target,
    })
}

/// `x * grad f(x)`.
pub fn gradient_x_input(model: &dyn Classifier, x: &Tensor, target: Target) -> Result<RelevanceMap> {
    let (_, g) = target_grad(model, x.data(), target)?;
    let values = x.data().iter().zip(&g).map(|(a, b)| a * b).collect();
    Ok(RelevanceMap {
        values: Tensor::new(x.shape().to_vec(), values),
        method: "gradient_x_input".into(),
        baseline_spec: "none".into(),
        steps: None,
        seed: None,
        sample_date: None,
        completeness_gap: None,
        target,
    })
}

/// Uniform random relevance, a reference point for faithfulness ranking.
pub fn random_relevance(shape: &[usize], seed: u64) -> RelevanceMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let values = (0..n).map(|_| rng.random::<f64>()).collect();
    RelevanceMap {
        values: Tensor::new(shape.to_vec(), values),
        method: "random".into(),
        baseline_spec: "none".into(),
        steps: None,
        seed: Some(seed),
        sample_date: None,
        completeness_gap: None,
        target: Target::Logit,
    }
}

/// Samples labelled 1 whose predicted probability reaches `threshold`.
pub fn filter_true_positives(model: &dyn Classifier, samples: &[Sample], threshold: f64) -> Result<Vec<Sample>> {
    let keep: Vec<bool> = samples
        .par_iter()
        .map(|s| Ok(s.label == 1 && model.probability(s.input.data())? >= threshold))
        .collect::<Result<_>>()?;
    Ok(samples.iter().zip(keep).filter(|(_, k)| *k).map(|(s, _)| s.clone()).collect())
}

/// Baseline choices for path methods.
#[derive(Debug, Clone, PartialEq)]
pub enum Baseline {
    /// The all-zero field, i.e. the climatological mean after standardization.
    Zero,
    /// An explicit tensor with a descriptive name.
    Tensor { name: String, value: Tensor },
}

impl Baseline {
    pub fn describe(&self) -> String {
        match self {
            Baseline::Zero => "zero".into(),
            Baseline::Tensor { name, .. } => name.clone(),
        }
    }

    pub fn materialize(&self, shape: &[usize]) -> Result<Tensor> {
        match self {
            Baseline::Zero => Ok(Tensor::zeros(shape.to_vec())),
            Baseline::Tensor { value, .. } if value.shape() == shape => Ok(value.clone()),
            Baseline::Tensor { value, .. } => {
                Err(Error::ShapeMismatch(format!("baseline {:?} vs input {shape:?}", value.shape())))
            }
        }
    }
}

/// Element-wise mean of sample inputs.
pub fn mean_sample(samples: &[&Sample]) -> Result<Tensor> {
    let first = samples.first().ok_or_else(|| Error::Empty("samples for mean baseline".into()))?;
    let mut acc = vec![0.0; first.input.len()];
    for s in samples {
        for (a, v) in acc.iter_mut().zip(s.input.data()) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|v| *v /= samples.len() as f64);
    Ok(Tensor::new(first.input.shape().to_vec(), acc))
}

/// Integrated Gradients for every sample, in parallel, each map dated.
pub fn integrated_gradients_many(
    model: &dyn Classifier,
    samples: &[Sample],
    baseline: &Baseline,
    steps: usize,
    target: Target,
) -> Result<Vec<RelevanceMap>> {
    samples
        .par_iter()
        .map(|s| {
            let b = baseline.materialize(s.input.shape())?;
            let mut map = integrated_gradients(model, &s.input, &b, steps, target)?;
            map.baseline_spec = baseline.describe();
            Ok(map.with_date(s.event_date))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    method: String,
    baseline_spec: String,
    steps: Option<usize>,
    seed: Option<u64>,
    sample_date: Option<NaiveDate>,
    completeness_gap: Option<f64>,
    target: Target,
    shape: Vec<usize>,
}

/// Writes `<stem>.xg1` (`[7 * V, H, W]`) and `<stem>.json`.
pub fn save_relevance(map: &RelevanceMap, stem: &Path) -> Result<PathBuf> {
    let shape = map.values.shape();
    if shape.len() < 2 {
        return Err(Error::ShapeMismatch("relevance maps need at least two axes".into()));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let t = map.values.len() / (h * w);
    let xg = stem.with_extension("xg1");
    write_xg1(&xg, [t, h, w], map.values.data())?;
    let side = Sidecar {
        method: map.method.clone(),
        baseline_spec: map.baseline_spec.clone(),
        steps: map.steps,
        seed: map.seed,
        sample_date: map.sample_date,
        completeness_gap: map.completeness_gap,
        target: map.target,
        shape: shape.to_vec(),
    };
    let json = stem.with_extension("json");
    std::fs::write(&json, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&json, e))?;
    Ok(xg)
}

/// Reads a map written by [`save_relevance`], or an external one following
/// the same layout.
pub fn load_relevance(stem: &Path) -> Result<RelevanceMap> {
    let json = stem.with_extension("json");
    let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let side: Sidecar = serde_json::from_str(&text)?;
    let (_, values) = read_xg1(&stem.with_extension("xg1"))?;
    if values.len() != side.shape.iter().product::<usize>() {
        return Err(Error::ShapeMismatch(format!("{}: sidecar shape {:?}", json.display(), side.shape)));
    }
    Ok(RelevanceMap {
        values: Tensor::new(side.shape, values),
        method: side.method,
        baseline_spec: side.baseline_spec,
        steps: side.steps,
        seed: side.seed,
        sample_date: side.sample_date,
        completeness_gap: side.completeness_gap,
        target: side.target,
    })
}
