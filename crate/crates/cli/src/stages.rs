//! One function per subcommand. Each reads its predecessors' files under the
//! output directory and writes its own.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use log::info;
use serde::{Deserialize, Serialize};

use heatxai::analysis::{format_report, mean_maps, write_long_csv, write_pgm, write_report_json, Report};
use heatxai::attribution::{load_relevance, save_relevance};
use heatxai::dataset::{load_dataset, save_dataset, DatasetSplit, LOOKBACK_DAYS};
use heatxai::griddata::{load_grid_with, write_xg1, LoadOptions, Standardization};
use heatxai::interpeval::{rank_methods, write_curves_csv, write_ranking_json, FaithMetric};
use heatxai::model::{evaluate, evaluate_by_period, load_checkpoint, save_checkpoint, write_history_csv, Metrics, TrainConfig};
use heatxai::pipeline::{
    all_samples, analyze, attribute_true_positives, compare_faithfulness, detect, fit, prepare, test_subset, StageSeeds,
};
use heatxai::synth::{generate, write_world, SynthConfig};
use heatxai::{ConvAttnConfig, ConvAttnModel, EventSet, GridStack, RelevanceMap, Sample};

use crate::config::Config;
use crate::netcdf::{convert, ConvertOptions};
use crate::provenance::record_stage;

/// What a stage read and wrote, for the provenance record.
#[derive(Default)]
pub struct Io {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

pub struct Ctx<'a> {
    pub cfg: &'a Config,
    pub out: &'a Path,
    pub seeds: StageSeeds,
}

impl Ctx<'_> {
    fn dir(&self, name: &str) -> anyhow::Result<PathBuf> {
        let d = self.out.join(name);
        std::fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
        Ok(d)
    }

    fn grid_path(&self) -> PathBuf {
        self.cfg.data.grid.clone().unwrap_or_else(|| self.out.join("world").join("manifest.json"))
    }

    fn load_grid(&self, io: &mut Io) -> anyhow::Result<GridStack> {
        let path = self.grid_path();
        let opts = LoadOptions { fill_missing: self.cfg.data.fill_missing };
        let grid = load_grid_with(&path, opts).with_context(|| format!("loading grid {}", path.display()))?;
        io.inputs.push(path);
        Ok(grid)
    }

    fn events_path(&self) -> PathBuf {
        self.out.join("detect").join("events.json")
    }

    fn dataset_index(&self) -> PathBuf {
        self.out.join("dataset").join("index.json")
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.out.join("model").join("model.ck")
    }

    fn relevance_index(&self) -> PathBuf {
        self.out.join("relevance").join("index.json")
    }

    fn load_split(&self, io: &mut Io) -> anyhow::Result<DatasetSplit> {
        let path = self.dataset_index();
        let (_, split) = load_dataset(&path).with_context(|| format!("loading dataset {}; run build-dataset first", path.display()))?;
        io.inputs.push(path);
        Ok(split)
    }

    fn load_model(&self, io: &mut Io) -> anyhow::Result<ConvAttnModel> {
        let path = self.checkpoint_path();
        let (_, model) = load_checkpoint(&path).with_context(|| format!("loading {}; run train first", path.display()))?;
        io.inputs.push(path);
        Ok(model)
    }

    /// Relevance maps listed in the index, and the samples they belong to.
    fn load_relevance(&self, split: &DatasetSplit, io: &mut Io) -> anyhow::Result<(Vec<Sample>, Vec<RelevanceMap>)> {
        let index_path = self.relevance_index();
        let index: RelevanceIndex = read_json(&index_path).context("run attribute first")?;
        io.inputs.push(index_path.clone());
        let base = index_path.parent().unwrap();
        let everything = all_samples(split);
        let mut samples = Vec::new();
        let mut maps = Vec::new();
        for stem in &index.maps {
            let map = load_relevance(&base.join(stem))?;
            let date = map.sample_date.ok_or_else(|| anyhow!("map {stem} has no sample date"))?;
            let s = everything
                .iter()
                .find(|s| s.event_date == date && s.is_positive())
                .ok_or_else(|| anyhow!("map {stem}: no positive sample dated {date} in the dataset"))?;
            samples.push(s.clone());
            maps.push(map);
        }
        Ok((samples, maps))
    }

    pub fn record(&self, stage: &str, io: &Io) -> anyhow::Result<()> {
        record_stage(self.out, stage, self.cfg, &io.inputs, &io.outputs)
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> anyhow::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn synth(ctx: &Ctx) -> anyhow::Result<Io> {
    let cfg = SynthConfig { seed: ctx.seeds.synth, ..ctx.cfg.synth.clone() };
    let (stack, truth) = generate(&cfg)?;
    let dir = ctx.dir("world")?;
    let manifest = write_world(&stack, &truth, &dir)?;
    println!(
        "world: {} days, {} variables on {}x{}, {} planted onsets",
        stack.n_time(),
        stack.n_vars(),
        stack.height(),
        stack.width(),
        truth.onsets.len()
    );
    Ok(Io { inputs: vec![], outputs: vec![manifest, dir.join("ground_truth.json")] })
}

pub fn convert_netcdf(ctx: &Ctx, input: &Path, opts: &ConvertOptions) -> anyhow::Result<Io> {
    let dir = ctx.dir("world")?;
    let manifest = convert(input, &dir, opts)?;
    println!("converted {} -> {}", input.display(), manifest.display());
    Ok(Io { inputs: vec![input.to_path_buf()], outputs: vec![manifest] })
}

pub fn detect_stage(ctx: &Ctx) -> anyhow::Result<Io> {
    let mut io = Io::default();
    let grid = ctx.load_grid(&mut io)?;
    let tmax = match &ctx.cfg.data.tmax_variable {
        Some(name) => grid.variable_index(name)?,
        None => 0,
    };
    let region = ctx.cfg.event_region(&grid)?;
    let det = detect(&grid, tmax, &region, &ctx.cfg.detect, ctx.seeds.negatives)?;
    let dir = ctx.dir("detect")?;
    let (h, w) = (grid.height(), grid.width());

    let thr = dir.join("thresholds.xg1");
    write_xg1(&thr, [det.calendar.thresholds.values().len() / (h * w), h, w], det.calendar.thresholds.values())?;
    let cal = dir.join("calendar.xg1");
    let flags: Vec<f64> = det.calendar.flags().iter().map(|&f| if f { 1.0 } else { 0.0 }).collect();
    write_xg1(&cal, [grid.n_time(), h, w], &flags)?;

    let counts = dir.join("counts.csv");
    let mut text = String::from("date,count\n");
    for (t, c) in det.counts.iter().enumerate() {
        text.push_str(&format!("{},{c}\n", grid.time.date(t)));
    }
    std::fs::write(&counts, text).with_context(|| format!("writing {}", counts.display()))?;

    let events = ctx.events_path();
    write_json(&det.events, &events)?;
    println!(
        "events on {:?}: {} onsets, {} negatives, ratio {:.3}, count threshold {}",
        region.name,
        det.events.onsets.len(),
        det.events.negatives.len(),
        det.events.ratio_achieved,
        det.events.count_threshold
    );
    if det.events.ratio_achieved < ctx.cfg.detect.ratio as f64 {
        log::warn!("negative ratio {:.3} short of {}", det.events.ratio_achieved, ctx.cfg.detect.ratio);
    }
    io.outputs = vec![thr, cal, counts, events];
    Ok(io)
}

#[derive(Serialize, Deserialize)]
struct StandardizationRecord {
    variables: Vec<String>,
    stats: Vec<Standardization>,
    /// Statistics come from days before this date.
    train_end: chrono::NaiveDate,
    dropped_samples: usize,
}

pub fn build_dataset(ctx: &Ctx) -> anyhow::Result<Io> {
    let mut io = Io::default();
    let grid = ctx.load_grid(&mut io)?;
    let events_path = ctx.events_path();
    let events: EventSet = read_json(&events_path).context("run detect first")?;
    io.inputs.push(events_path);
    let prepared = prepare(&grid, &events, ctx.cfg.dataset.split)?;
    let names: Vec<String> = grid.variables.iter().map(|v| v.name.clone()).collect();
    let dir = ctx.dir("dataset")?;
    let index = save_dataset(&prepared.split, &names, &ctx.cfg.pipeline().bins()?, &dir)?;
    let stats = dir.join("standardization.json");
    write_json(
        &StandardizationRecord {
            variables: names,
            stats: prepared.stats.clone(),
            train_end: prepared.split.train_end().expect("non-empty training split"),
            dropped_samples: prepared.dropped,
        },
        &stats,
    )?;
    let s = &prepared.split;
    println!(
        "dataset: {} train, {} val, {} test samples ({} dropped for lack of history)",
        s.train.len(),
        s.val.len(),
        s.test.len(),
        prepared.dropped
    );
    io.outputs = vec![index, stats];
    Ok(io)
}

fn model_config(ctx: &Ctx, split: &DatasetSplit) -> anyhow::Result<ConvAttnConfig> {
    let first = split.train.first().ok_or_else(|| anyhow!("empty training split"))?;
    let [days, variables, height, width] = first.input.shape() else {
        bail!("sample shape {:?} is not [days, V, H, W]", first.input.shape());
    };
    if *days != LOOKBACK_DAYS {
        log::warn!("samples hold {days} days, the model default is {LOOKBACK_DAYS}");
    }
    Ok(ConvAttnConfig {
        days: *days,
        variables: *variables,
        height: *height,
        width: *width,
        widths: ctx.cfg.model.widths,
        kernel: 3,
        se_reduction: ctx.cfg.model.se_reduction,
    })
}

fn train_config(ctx: &Ctx) -> TrainConfig {
    TrainConfig { seed: ctx.seeds.train, ..ctx.cfg.train.clone() }
}

pub fn train(ctx: &Ctx) -> anyhow::Result<Io> {
    let mut io = Io::default();
    let split = ctx.load_split(&mut io)?;
    let mcfg = model_config(ctx, &split)?;
    let tcfg = train_config(ctx);
    let outcome = fit(&split, mcfg, &tcfg, ctx.seeds.init)?;
    let val = if split.val.is_empty() { None } else { Some(evaluate(&outcome.model, &split.val, tcfg.threshold)?) };
    let dir = ctx.dir("model")?;
    let ck = ctx.checkpoint_path();
    save_checkpoint(&outcome.model, ctx.seeds.init, outcome.best_epoch, val, &ck)?;
    let history = dir.join("history.csv");
    write_history_csv(&outcome.history, &history)?;
    info!("trained {} epochs", outcome.history.len());
    println!(
        "model: best epoch {}, validation accuracy {}",
        outcome.best_epoch,
        val.and_then(|m| m.accuracy()).map(|a| format!("{:.2}%", 100.0 * a)).unwrap_or_else(|| "n/a".into())
    );
    io.outputs = vec![ck, history];
    Ok(io)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub counts: Metrics,
    /// TPR, TNR, PPV, FNR and accuracy in percent.
    pub percentages: [Option<f64>; 5],
}

impl From<Metrics> for MetricsRecord {
    fn from(m: Metrics) -> Self {
        Self { counts: m, percentages: m.percentages() }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalRecord {
    pub threshold: f64,
    pub test: MetricsRecord,
    /// Over every sample, by period.
    pub periods: BTreeMap<String, Option<MetricsRecord>>,
}

fn fmt_pct(p: &[Option<f64>; 5]) -> String {
    p.iter().map(|v| v.map(|x| format!("{x:>7.2}")).unwrap_or_else(|| format!("{:>7}", "-"))).collect::<Vec<_>>().join(" ")
}

pub fn eval(ctx: &Ctx) -> anyhow::Result<Io> {
    let mut io = Io::default();
    let split = ctx.load_split(&mut io)?;
    let model = ctx.load_model(&mut io)?;
    let threshold = ctx.cfg.train.threshold;
    let bins = ctx.cfg.pipeline().bins()?;
    let test = evaluate(&model, &split.test, threshold)?;
    let periods = evaluate_by_period(&model, &all_samples(&split), &bins, threshold)?;
    let record = EvalRecord {
        threshold,
        test: test.into(),
        periods: bins.labels().into_iter().zip(periods).map(|(l, m)| (l, m.map(Into::into))).collect(),
    };
    println!("{:<12} {:>7} {:>7} {:>7} {:>7} {:>7}", "", "TPR", "TNR", "PPV", "FNR", "ACC");
    println!("{:<12} {}", "test", fmt_pct(&record.test.percentages));
    for (label, m) in &record.periods {
        if let Some(m) = m {
            println!("{label:<12} {}", fmt_pct(&m.percentages));
        }
    }
    let path = ctx.out.join("eval.json");
    write_json(&record, &path)?;
    io.outputs = vec![path];
    Ok(io)
}

#[derive(Debug, Serialize, Deserialize)]
struct RelevanceIndex {
    method: String,
    steps: usize,
    /// Stems relative to the index, one per true-positive sample.
    maps: Vec<String>,
    max_completeness_gap: Option<f64>,
}

pub fn attribute(ctx: &Ctx) -> anyhow::Result<Io> {
    let mut io = Io::default();
    let split = ctx.load_split(&mut io)?;
    let model = ctx.load_model(&mut io)?;
    let (_, maps) = attribute_true_positives(&model, &all_samples(&split), &ctx.cfg.attribution)?;
    let dir = ctx.dir("relevance")?;
    let mut stems = Vec::new();
    for m in &maps {
        let stem = format!("ig_{}", m.sample_date.expect("sample maps carry dates"));
        io.outputs.push(save_relevance(m, &dir.join(&stem))?);
        stems.push(stem);
    }
    let gap = maps.iter().filter_map(|m| m.completeness_gap).fold(None, |a: Option<f64>, g| Some(a.map_or(g, |a| a.max(g))));
    let index = RelevanceIndex {
        method: "integrated_gradients".into(),
        steps: ctx.cfg.attribution.steps,
        maps: stems,
        max_completeness_gap: gap,
    };
    let path = ctx.relevance_index();
    write_json(&index, &path)?;
    println!("attributed {} true positives, largest completeness gap {:.3e}", maps.len(), gap.unwrap_or(0.0));
    io.outputs.push(path);
    Ok(io)
}

pub fn faithfulness(ctx: &Ctx) -> anyhow::Result<Io> {
    let mut io = Io::default();
    let split = ctx.load_split(&mut io)?;
    let model = ctx.load_model(&mut io)?;
    let (tps, maps) = ctx.load_relevance(&split, &mut io)?;
    let (samples, maps) = test_subset(&tps, &maps, &split.test);
    let curves = compare_faithfulness(&model, &samples, &maps, &ctx.cfg.faithfulness, ctx.seeds.random_relevance)?;
    let dir = ctx.dir("faithfulness")?;
    let csv = dir.join("curves.csv");
    write_curves_csv(&curves, &csv)?;
    for metric in [FaithMetric::Accuracy, FaithMetric::LogitDrop] {
        let by_metric = curves
            .iter()
            .map(|(k, f)| (k.clone(), if metric == FaithMetric::Accuracy { f.accuracy.clone() } else { f.logit_drop.clone() }))
            .collect();
        let ranking = rank_methods(&by_metric);
        let path = dir.join(format!("ranking_{}.json", metric.name()));
        write_ranking_json(&ranking, metric, &path)?;
        println!(
            "{} drop AUC: {}",
            metric.name(),
            ranking.iter().map(|(m, a)| format!("{m} {a:.4}")).collect::<Vec<_>>().join(", ")
        );
        io.outputs.push(path);
    }
    io.outputs.insert(0, csv);
    Ok(io)
}

pub fn analyze_stage(ctx: &Ctx) -> anyhow::Result<Io> {
    let mut io = Io::default();
    let grid = ctx.load_grid(&mut io)?;
    let split = ctx.load_split(&mut io)?;
    let (tps, maps) = ctx.load_relevance(&split, &mut io)?;
    let regions = ctx.cfg.regions(&grid)?;
    let bins = ctx.cfg.pipeline().bins()?;
    let out = analyze(&grid, &tps, &maps, &regions, &bins, ctx.cfg.detect.window_half_width)?;
    let dir = ctx.dir("analysis")?;

    let rel = dir.join("relevance.csv");
    let tables: Vec<(&str, _)> = out.summaries.iter().map(|s| (s.variant.name(), &s.table)).collect();
    write_long_csv(&tables, &rel)?;
    let anom = dir.join("anomaly.csv");
    let tables: Vec<(&str, _)> = out.anomalies.iter().map(|a| ("anomaly", &a.table)).collect();
    write_long_csv(&tables, &anom)?;
    let report = dir.join("report.json");
    write_report_json(&out.report, &report)?;
    let full = dir.join("analysis.json");
    write_json(&out, &full)?;
    io.outputs = vec![rel, anom, report, full];

    let names: Vec<String> = grid.variables.iter().map(|v| v.name.clone()).collect();
    for (name, field) in mean_maps(&maps, &names)? {
        let p = dir.join(format!("mean_relevance_{name}.pgm"));
        write_pgm(&field, grid.height(), grid.width(), &p)?;
        io.outputs.push(p);
    }
    println!(
        "analysis: {} regions, {} report rows, {} divergences",
        regions.len(),
        out.report.rows.len(),
        out.report.divergences().count()
    );
    Ok(io)
}

pub fn report(ctx: &Ctx) -> anyhow::Result<Io> {
    let mut io = Io::default();
    let report_path = ctx.out.join("analysis").join("report.json");
    let report: Report = read_json(&report_path).context("run analyze first")?;
    io.inputs.push(report_path);

    let mut text = String::new();
    let eval_path = ctx.out.join("eval.json");
    if eval_path.exists() {
        let e: EvalRecord = read_json(&eval_path)?;
        io.inputs.push(eval_path);
        text.push_str(&format!("{:<12} {:>7} {:>7} {:>7} {:>7} {:>7}\n", "metrics", "TPR", "TNR", "PPV", "FNR", "ACC"));
        text.push_str(&format!("{:<12} {}\n", "test", fmt_pct(&e.test.percentages)));
        for (label, m) in &e.periods {
            if let Some(m) = m {
                text.push_str(&format!("{label:<12} {}\n", fmt_pct(&m.percentages)));
            }
        }
        text.push('\n');
    }
    let rank_path = ctx.out.join("faithfulness").join("ranking_accuracy.json");
    if rank_path.exists() {
        let doc: serde_json::Value = read_json(&rank_path)?;
        io.inputs.push(rank_path);
        text.push_str("faithfulness (accuracy drop AUC)\n");
        for entry in doc["ranking"].as_array().into_iter().flatten() {
            text.push_str(&format!("  {} {} {:.4}\n", entry["rank"], entry["method"].as_str().unwrap_or("?"), entry["auc"].as_f64().unwrap_or(f64::NAN)));
        }
        text.push('\n');
    }
    text.push_str("relevance vs composite anomaly trends\n");
    text.push_str(&format_report(&report));
    let n = report.divergences().count();
    text.push_str(&format!("\n{n} of {} rows diverge\n", report.rows.len()));
    print!("{text}");
    let path = ctx.out.join("report.txt");
    std::fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
    io.outputs.push(path);
    Ok(io)
}
