//! The stages strung together in memory. The CLI runs the same stage
//! functions with files in between.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analysis::{
    composite_anomaly, mean_relevance, relevance_vs_anomaly_report, Climatology, CompositeAnomaly, RelevanceSummary,
    Report, Variant,
};
use crate::attribution::{integrated_gradients_many, filter_true_positives, random_relevance, Baseline, RelevanceMap, Target};
use crate::dataset::{build_samples, split_chronological, DatasetSplit, PeriodBins, Sample, LOOKBACK_DAYS};
use crate::error::{Error, Result};
use crate::griddata::{apply_standardization, fit_standardization, GridStack, RegionMask, Standardization};
use crate::heatwave::{detect_events, DetectConfig, Detection, EventSet};
use crate::interpeval::{faithfulness, Faithfulness, FaithfulnessConfig};
use crate::model::{evaluate, evaluate_by_period, train, ConvAttnConfig, ConvAttnModel, Metrics, TrainConfig, TrainOutcome};
use crate::synth::{generate, GroundTruth, SynthConfig};

/// Seeds for each stage, derived from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub synth: u64,
    pub negatives: u64,
    pub init: u64,
    pub train: u64,
    pub random_relevance: u64,
}

impl StageSeeds {
    pub fn from_master(seed: u64) -> Self {
        let mix = |k: u64| seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k);
        Self { synth: seed, negatives: mix(1), init: mix(2), train: mix(3), random_relevance: mix(4) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributionConfig {
    pub steps: usize,
    pub target: Target,
    pub threshold: f64,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        Self { steps: 256, target: Target::Logit, threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub detect: DetectConfig,
    /// Channel widths of the three conv blocks; the input shape comes from
    /// the data.
    pub widths: [usize; 3],
    pub se_reduction: usize,
    pub train: TrainConfig,
    pub split: (f64, f64, f64),
    pub attribution: AttributionConfig,
    pub faithfulness: FaithfulnessConfig,
    pub period_starts: Vec<i32>,
    pub period_end_year: i32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            synth: SynthConfig::default(),
            detect: DetectConfig::default(),
            widths: [8, 16, 32],
            se_reduction: 4,
            train: TrainConfig { lr: 2e-3, epochs: 25, ..TrainConfig::default() },
            split: (0.6, 0.2, 0.2),
            attribution: AttributionConfig::default(),
            faithfulness: FaithfulnessConfig::default(),
            period_starts: vec![1959, 1972, 1984, 1997, 2010],
            period_end_year: 2022,
        }
    }
}

impl PipelineConfig {
    pub fn bins(&self) -> Result<PeriodBins> {
        PeriodBins::from_years(&self.period_starts, self.period_end_year)
    }

    pub fn model_config(&self, stack: &GridStack) -> ConvAttnConfig {
        ConvAttnConfig {
            days: LOOKBACK_DAYS,
            variables: stack.n_vars(),
            height: stack.height(),
            width: stack.width(),
            widths: self.widths,
            kernel: 3,
            se_reduction: self.se_reduction,
        }
    }
}

/// Heatwave events on the first variable of `stack` over `region`.
pub fn detect(stack: &GridStack, tmax_variable: usize, region: &RegionMask, cfg: &DetectConfig, seed: u64) -> Result<Detection> {
    region.check_shape(stack.height(), stack.width())?;
    detect_events(&stack.variable_cube(tmax_variable), &stack.time, region, cfg, seed)
}

/// Samples from a stack standardized with statistics of the training
/// period only.
pub struct Prepared {
    pub split: DatasetSplit,
    pub stats: Vec<Standardization>,
    pub standardized: GridStack,
    pub dropped: usize,
}

pub fn prepare(stack: &GridStack, events: &EventSet, fractions: (f64, f64, f64)) -> Result<Prepared> {
    let (raw, _) = build_samples(stack, events, LOOKBACK_DAYS)?;
    let raw_split = split_chronological(raw, fractions)?;
    let train_end = raw_split.train_end().ok_or_else(|| Error::Empty("training split".into()))?;
    let t_end = stack.time.index_of(train_end).expect("sample date inside the record");
    let stats = fit_standardization(stack, 0..t_end)?;
    let standardized = apply_standardization(stack, &stats)?;
    let (samples, dropped) = build_samples(&standardized, events, LOOKBACK_DAYS)?;
    let split = split_chronological(samples, fractions)?;
    Ok(Prepared { split, stats, standardized, dropped })
}

pub fn fit(split: &DatasetSplit, model_cfg: ConvAttnConfig, train_cfg: &TrainConfig, init_seed: u64) -> Result<TrainOutcome<ConvAttnModel>> {
    let model = ConvAttnModel::new(model_cfg, init_seed)?;
    train(model, split, train_cfg)
}

/// Every sample of the split, chronologically.
pub fn all_samples(split: &DatasetSplit) -> Vec<Sample> {
    split.train.iter().chain(&split.val).chain(&split.test).cloned().collect()
}

/// True positives of `samples` and their IG maps against the zero baseline.
pub fn attribute_true_positives(
    model: &ConvAttnModel,
    samples: &[Sample],
    cfg: &AttributionConfig,
) -> Result<(Vec<Sample>, Vec<RelevanceMap>)> {
    let tps = filter_true_positives(model, samples, cfg.threshold)?;
    if tps.is_empty() {
        return Err(Error::Empty("true-positive samples".into()));
    }
    let maps = integrated_gradients_many(model, &tps, &Baseline::Zero, cfg.steps, cfg.target)?;
    Ok((tps, maps))
}

/// Named analysis regions for the synthetic world: the precursor region,
/// the event region and their union.
pub fn synth_regions(cfg: &SynthConfig) -> Result<Vec<RegionMask>> {
    let r1 = cfg.precursor_region.to_mask("region1", cfg.height, cfg.width)?;
    let r2 = cfg.event_region.to_mask("region2", cfg.height, cfg.width)?;
    let both = r1.union(&r2, "region1+2")?;
    Ok(vec![r1, r2, both])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutput {
    pub summaries: Vec<RelevanceSummary>,
    pub anomalies: Vec<CompositeAnomaly>,
    pub report: Report,
}

/// Relevance summaries (both variants) and composite anomalies of the raw
/// fields for every region, and the signed-relevance comparison report.
pub fn analyze(
    raw: &GridStack,
    tps: &[Sample],
    maps: &[RelevanceMap],
    regions: &[RegionMask],
    bins: &PeriodBins,
    window_half_width: u32,
) -> Result<AnalysisOutput> {
    let names: Vec<String> = raw.variables.iter().map(|v| v.name.clone()).collect();
    let clim = Climatology::fit(raw, window_half_width)?;
    let onsets: Vec<_> = tps.iter().map(|s| s.event_date).collect();
    let mut out = AnalysisOutput { summaries: Vec::new(), anomalies: Vec::new(), report: Report::default() };
    for region in regions {
        let signed = mean_relevance(maps, &names, region, bins, Variant::Signed)?;
        let positive = mean_relevance(maps, &names, region, bins, Variant::PositiveOnly)?;
        let anomaly = composite_anomaly(raw, &clim, &onsets, region, bins)?;
        out.report.extend(relevance_vs_anomaly_report(&signed, &anomaly)?);
        out.summaries.push(signed);
        out.summaries.push(positive);
        out.anomalies.push(anomaly);
    }
    Ok(out)
}

/// The true positives (and their maps) whose dates fall in `test`, or all of
/// them when none do.
pub fn test_subset(tps: &[Sample], maps: &[RelevanceMap], test: &[Sample]) -> (Vec<Sample>, Vec<RelevanceMap>) {
    let keep: Vec<usize> =
        (0..tps.len()).filter(|&i| test.iter().any(|t| t.event_date == tps[i].event_date)).collect();
    if keep.is_empty() {
        return (tps.to_vec(), maps.to_vec());
    }
    (keep.iter().map(|&i| tps[i].clone()).collect(), keep.iter().map(|&i| maps[i].clone()).collect())
}

/// IG against uniform random relevance on the same samples.
pub fn compare_faithfulness(
    model: &ConvAttnModel,
    tps: &[Sample],
    ig_maps: &[RelevanceMap],
    cfg: &FaithfulnessConfig,
    random_seed: u64,
) -> Result<BTreeMap<String, Faithfulness>> {
    let random: Vec<RelevanceMap> = tps
        .iter()
        .enumerate()
        .map(|(i, s)| random_relevance(s.input.shape(), random_seed.wrapping_add(i as u64)))
        .collect();
    let mut out = BTreeMap::new();
    out.insert("integrated_gradients".to_string(), faithfulness(model, tps, ig_maps, &Baseline::Zero, cfg)?);
    out.insert("random".to_string(), faithfulness(model, tps, &random, &Baseline::Zero, cfg)?);
    Ok(out)
}

pub struct PipelineRun {
    pub seeds: StageSeeds,
    pub raw: GridStack,
    pub truth: GroundTruth,
    pub detection: Detection,
    pub prepared: Prepared,
    pub outcome: TrainOutcome<ConvAttnModel>,
    pub test_metrics: Metrics,
    pub period_metrics: Vec<Option<Metrics>>,
    pub true_positives: Vec<Sample>,
    pub maps: Vec<RelevanceMap>,
    pub analysis: AnalysisOutput,
    pub faithfulness: BTreeMap<String, Faithfulness>,
}

/// Synthetic world to faithfulness curves in one call.
pub fn run_synthetic(cfg: &PipelineConfig) -> Result<PipelineRun> {
    let seeds = StageSeeds::from_master(cfg.seed);
    let synth = SynthConfig { seed: seeds.synth, ..cfg.synth.clone() };
    let (raw, truth) = generate(&synth)?;
    let regions = synth_regions(&synth)?;
    let bins = cfg.bins()?;

    let detection = detect(&raw, 0, &regions[1], &cfg.detect, seeds.negatives)?;
    let prepared = prepare(&raw, &detection.events, cfg.split)?;
    let train_cfg = TrainConfig { seed: seeds.train, ..cfg.train.clone() };
    let outcome = fit(&prepared.split, cfg.model_config(&raw), &train_cfg, seeds.init)?;
    let model = &outcome.model;

    let test_metrics = evaluate(model, &prepared.split.test, train_cfg.threshold)?;
    let everything = all_samples(&prepared.split);
    let period_metrics = evaluate_by_period(model, &everything, &bins, train_cfg.threshold)?;

    let (true_positives, maps) = attribute_true_positives(model, &everything, &cfg.attribution)?;
    let analysis = analyze(&raw, &true_positives, &maps, &regions, &bins, cfg.detect.window_half_width)?;

    let (f_samples, f_maps) = test_subset(&true_positives, &maps, &prepared.split.test);
    let faithfulness = compare_faithfulness(model, &f_samples, &f_maps, &cfg.faithfulness, seeds.random_relevance)?;

    Ok(PipelineRun {
        seeds,
        raw,
        truth,
        detection,
        prepared,
        outcome,
        test_metrics,
        period_metrics,
        true_positives,
        maps,
        analysis,
        faithfulness,
    })
}
