//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Exits zero regardless of the verdicts so that `cargo test` reports the
//! suite without aborting the run; set `ACCEPTANCE_STRICT=1` to exit non-zero
//! when any criterion fails. `ACCEPTANCE_ONLY=3,9` runs a subset.

mod common;

use std::collections::BTreeSet;
use std::time::Instant;

use chrono::NaiveDate;
use rayon::prelude::*;

use heatxai::analysis::{region_contrast, trend, TrendSign};
use heatxai::attribution::{integrated_gradients, target_value, Target};
use heatxai::model::{evaluate, save_checkpoint, Classifier};
use heatxai::pipeline::{run_synthetic, synth_regions, PipelineConfig, PipelineRun};
use heatxai::stats::ols_fit;
use heatxai::{Result, Sample, Tensor};

use common::gradcheck::all_checks;
use common::instances::{compare_stages, event_set_violations, random_instance};
use common::{decade_heatwave_counts, normal_vec, rng};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

// ---------------------------------------------------------------- 1

const TABLES: [(&str, [&str; 5]); 7] = [
    ("Transformer 1959-1972", ["52.38", "100.00", "100.00", "47.62", "93.06"]),
    ("Transformer 1972-1984", ["35.48", "100.00", "100.00", "64.52", "86.11"]),
    ("Transformer 1984-1997", ["57.69", "99.15", "93.75", "42.31", "91.67"]),
    ("Transformer 1997-2010", ["50.00", "100.00", "100.00", "50.00", "93.75"]),
    ("Transformer 2010-2022", ["66.67", "99.17", "94.12", "33.33", "93.75"]),
    ("Conv+Attn test", ["70.83", "96.67", "80.95", "29.16", "92.36"]),
    ("FourCastNet test", ["70.83", "97.50", "85.00", "29.16", "93.75"]),
];

fn pct(num: u64, den: u64) -> String {
    format!("{:.2}", 100.0 * num as f64 / den as f64)
}

/// Confusion counts `(tp, fn, fp, tn)` agreeing with the most printed
/// columns; sensitivity and specificity must match. Ties go to the total
/// nearest 144, the sample count every fully determined row shares.
fn solve_counts(row: &[&str; 5]) -> Option<(u64, u64, u64, u64)> {
    let pos: Vec<(u64, u64)> =
        (1..=80u64).flat_map(|p| (0..=p).map(move |tp| (p, tp))).filter(|&(p, tp)| pct(tp, p) == row[0]).collect();
    let neg: Vec<(u64, u64)> =
        (1..=400u64).flat_map(|n| (0..=n).map(move |tn| (n, tn))).filter(|&(n, tn)| pct(tn, n) == row[1]).collect();
    let mut best: Option<(usize, u64, (u64, u64, u64, u64))> = None;
    for &(p, tp) in &pos {
        for &(n, tn) in &neg {
            let (fn_, fp) = (p - tp, n - tn);
            let ppv = if tp + fp > 0 { pct(tp, tp + fp) } else { String::new() };
            let score = [ppv == row[2], pct(fn_, p) == row[3], pct(tp + tn, p + n) == row[4]].iter().filter(|&&b| b).count();
            let better = match best {
                None => true,
                Some((s, dist, _)) => score > s || (score == s && (p + n).abs_diff(144) < dist),
            };
            if better {
                best = Some((score, (p + n).abs_diff(144), (tp, fn_, fp, tn)));
            }
        }
    }
    best.map(|b| b.2)
}

/// Predicts positive exactly when the first input element is positive.
struct SignModel;

impl Classifier for SignModel {
    fn input_len(&self) -> usize {
        1
    }
    fn logit(&self, x: &[f64]) -> Result<f64> {
        Ok(10.0 * x[0])
    }
    fn logit_input_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.logit(x)?, vec![10.0]))
    }
}

fn samples_for(tp: u64, fn_: u64, fp: u64, tn: u64) -> Vec<Sample> {
    let date = NaiveDate::from_ymd_opt(2000, 3, 1).unwrap();
    let mk = |pred: f64, label: u8, n: u64| {
        (0..n).map(move |_| Sample { input: Tensor::new(vec![1], vec![pred]), label, event_date: date })
    };
    mk(1.0, 1, tp).chain(mk(-1.0, 1, fn_)).chain(mk(1.0, 0, fp)).chain(mk(-1.0, 0, tn)).collect()
}

fn criterion_1() -> Verdict {
    let mut mismatches = Vec::new();
    let mut solved = Vec::new();
    for (name, row) in &TABLES {
        let Some((tp, fn_, fp, tn)) = solve_counts(row) else {
            mismatches.push(format!("{name}: no counts"));
            continue;
        };
        solved.push(format!("{name} {tp}/{fn_}/{fp}/{tn}"));
        let m = evaluate(&SignModel, &samples_for(tp, fn_, fp, tn), 0.5).unwrap();
        let cols = ["TPR", "TNR", "PPV", "FNR", "ACC"];
        for (i, v) in m.percentages().iter().enumerate() {
            let got = v.map(|v| format!("{v:.2}")).unwrap_or_default();
            if got != row[i] {
                mismatches.push(format!("{name} {}: {got} vs {}", cols[i], row[i]));
            }
        }
    }
    let n_cells = TABLES.len() * 5;
    let detail = format!(
        "{}/{n_cells} percentages reproduced; counts tp/fn/fp/tn: {}{}",
        n_cells - mismatches.len(),
        solved.join(", "),
        if mismatches.is_empty() { String::new() } else { format!("; mismatched: {}", mismatches.join(", ")) }
    );
    verdict(mismatches.is_empty(), detail)
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Verdict {
    let checks: Vec<_> = (0..3).flat_map(all_checks).collect();
    let worst = checks.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error)).unwrap();
    let kinds: BTreeSet<&str> = checks.iter().map(|c| c.name.split('/').next().unwrap()).collect();
    verdict(
        checks.iter().all(|c| c.rel_error < 1e-5),
        format!(
            "{} checks over {} layer types, worst {} at {:.2e} (need < 1e-5)",
            checks.len(),
            kinds.len(),
            worst.name,
            worst.rel_error
        ),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3(run: &PipelineRun) -> Verdict {
    let model = &run.outcome.model;
    let test = &run.prepared.split.test;
    let zero = Tensor::zeros(test[0].input.shape().to_vec());
    let steps = [16, 32, 64, 128, 256, 512, 1024];
    // Per sample: relative tolerance ratio at every step count.
    let per_sample: Vec<Vec<f64>> = test
        .par_iter()
        .map(|s| {
            let delta = target_value(model, s.input.data(), Target::Logit).unwrap()
                - target_value(model, zero.data(), Target::Logit).unwrap();
            let scale = delta.abs().max(1.0);
            steps
                .iter()
                .map(|&m| {
                    let ig = integrated_gradients(model, &s.input, &zero, m, Target::Logit).unwrap();
                    ig.completeness_gap.unwrap() / scale
                })
                .collect()
        })
        .collect();
    let at = |k: usize| per_sample.iter().map(|r| r[k]).collect::<Vec<f64>>();
    let i256 = steps.iter().position(|&m| m == 256).unwrap();
    let ok_frac = at(i256).iter().filter(|&&g| g < 1e-3).count() as f64 / per_sample.len() as f64;
    let means: Vec<f64> = (0..steps.len()).map(|k| at(k).iter().sum::<f64>() / per_sample.len() as f64).collect();
    // "Within noise": each doubling may not raise the mean gap by more than 5 %.
    let monotone = means.windows(2).all(|w| w[1] <= 1.05 * w[0]);
    let mut med = at(i256);
    med.sort_by(f64::total_cmp);
    verdict(
        ok_frac >= 0.95 && monotone,
        format!(
            "{:.1}% of {} test samples within 1e-3*max(1,|dlogit|) at 256 steps (need 95%), median scaled gap {:.2e}; \
             mean scaled gap 16..1024: [{}] monotone={monotone}",
            100.0 * ok_frac,
            per_sample.len(),
            med[med.len() / 2],
            means.iter().map(|m| format!("{m:.1e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Verdict {
    let results: Vec<_> = (0..1000u64).into_par_iter().map(|s| compare_stages(&random_instance(s))).collect();
    let count = |f: &dyn Fn(&common::instances::StageAgreement) -> bool| results.iter().filter(|r| f(r)).count();
    let (t, r, c, o) = (count(&|a| a.thresholds), count(&|a| a.run_marking), count(&|a| a.count_threshold), count(&|a| a.onsets));
    verdict(
        results.iter().all(|r| r.all()),
        format!("of 1000 instances: thresholds {t}, run marking {r}, count threshold {c}, onsets {o} exact matches"),
    )
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Verdict {
    let bad: Vec<(u64, Vec<String>)> = (0..500u64)
        .into_par_iter()
        .map(|s| (s, event_set_violations(s)))
        .filter(|(_, v)| !v.is_empty())
        .collect();
    let first = bad.first().map(|(s, v)| format!("; first: seed {s} {}", v[0])).unwrap_or_default();
    verdict(bad.is_empty(), format!("{} of 500 seeded worlds violate an invariant{first}", bad.len()))
}

// ---------------------------------------------------------------- 6, 7

struct RunSummary {
    seed: u64,
    accuracy: f64,
    tpr: f64,
    inside: f64,
    outside: f64,
    trend: TrendSign,
    ig_auc: f64,
    random_auc: f64,
    ig_logit_auc: f64,
    random_logit_auc: f64,
}

fn pipeline_config(seed: u64) -> PipelineConfig {
    PipelineConfig { seed, ..PipelineConfig::default() }
}

fn summarize(seed: u64, run: &PipelineRun) -> RunSummary {
    let cfg = pipeline_config(seed);
    let regions = synth_regions(&cfg.synth).unwrap();
    let pv = cfg.synth.precursor_variable;
    let (inside, outside) = region_contrast(&run.maps, pv, &regions[0]).unwrap();
    let signed = run
        .analysis
        .summaries
        .iter()
        .find(|s| s.table.region == regions[0].name && s.variant == heatxai::Variant::Signed)
        .unwrap();
    let f = &run.faithfulness;
    RunSummary {
        seed,
        accuracy: run.test_metrics.accuracy().unwrap_or(0.0),
        tpr: run.test_metrics.tpr().unwrap_or(0.0),
        inside,
        outside,
        trend: trend(&signed.table.period_series(pv)).map(|t| t.sign).unwrap_or(TrendSign::Flat),
        ig_auc: f["integrated_gradients"].accuracy.auc,
        random_auc: f["random"].accuracy.auc,
        ig_logit_auc: f["integrated_gradients"].logit_drop.auc,
        random_logit_auc: f["random"].logit_drop.auc,
    }
}

fn criterion_6(runs: &[RunSummary]) -> Verdict {
    let runs = &runs[..10];
    let trained = runs.iter().filter(|r| r.accuracy >= 0.85 && r.tpr >= 0.6).count();
    let contrast = runs.iter().filter(|r| r.inside > r.outside).count();
    let up = runs.iter().filter(|r| r.trend == TrendSign::Up).count();
    let (amin, amax) = runs.iter().fold((1.0f64, 0.0f64), |(a, b), r| (a.min(r.accuracy), b.max(r.accuracy)));
    let tmin = runs.iter().map(|r| r.tpr).fold(1.0, f64::min);
    verdict(
        trained == 10 && contrast == 10 && up >= 9,
        format!(
            "(a) {trained}/10 runs with accuracy >= 0.85 and TPR >= 0.6 (accuracy {amin:.3}..{amax:.3}, min TPR {tmin:.3}); \
             (b) inside > outside in {contrast}/10; (c) upward trend in {up}/10 (need 9)"
        ),
    )
}

fn criterion_7(runs: &[RunSummary]) -> Verdict {
    let wins = runs.iter().filter(|r| r.ig_auc > r.random_auc).count();
    let logit_wins = runs.iter().filter(|r| r.ig_logit_auc > r.random_logit_auc).count();
    let need = (0.95 * runs.len() as f64).ceil() as usize;
    let losers: Vec<String> = runs.iter().filter(|r| r.ig_auc <= r.random_auc).map(|r| r.seed.to_string()).collect();
    let mean = |f: &dyn Fn(&RunSummary) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    verdict(
        wins >= need,
        format!(
            "IG beats random on accuracy-drop AUC in {wins}/{} runs (need {need}), mean {:.3} vs {:.3}; \
             logit-drop AUC {logit_wins}/{} wins{}",
            runs.len(),
            mean(&|r| r.ig_auc),
            mean(&|r| r.random_auc),
            runs.len(),
            if losers.is_empty() { String::new() } else { format!("; losing seeds {}", losers.join(",")) }
        ),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Verdict {
    let mut worst = 0.0f64;
    for seed in 0..200u64 {
        let mut g = rng(seed);
        let slope = 0.01 + (seed as f64 * 0.37).sin().abs() * 3.0;
        let n = 30 + (seed as usize * 97) % 5000;
        let noise = normal_vec(&mut g, n, 1.0);
        let y: Vec<f64> = noise.iter().enumerate().map(|(t, e)| 2.0 + slope * t as f64 + e).collect();
        let r = heatxai::griddata::detrend_linear(&y).unwrap();
        worst = worst.max(ols_fit(&r).0.abs() / slope);
    }
    let counts = decade_heatwave_counts(0, 0.05, true);
    let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    let dev = counts.iter().map(|&c| (c as f64 - mean).abs() / mean).fold(0.0, f64::max);
    verdict(
        worst < 1e-10 && dev <= 0.2,
        format!(
            "worst refit |slope|/planted {worst:.1e} over 200 series (need < 1e-10); \
             decade heatwave-day counts {counts:?}, max deviation {:.1}% (need 20%)",
            100.0 * dev
        ),
    )
}

// ---------------------------------------------------------------- 9

fn checkpoint_bytes(run: &PipelineRun) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ck");
    save_checkpoint(&run.outcome.model, run.seeds.init, run.outcome.best_epoch, Some(run.test_metrics), &path).unwrap();
    std::fs::read(path).unwrap()
}

fn criterion_9(a: &PipelineRun) -> Verdict {
    let b = run_synthetic(&pipeline_config(0)).unwrap();
    let bits = |r: &PipelineRun| -> Vec<u64> { r.maps.iter().flat_map(|m| m.values.data().iter().map(|v| v.to_bits())).collect() };
    let json = |r: &PipelineRun| serde_json::to_string(&(&r.analysis, &r.faithfulness)).unwrap();
    let parts = [
        ("synthetic world", a.raw == b.raw && a.truth == b.truth),
        ("event set", a.detection.events == b.detection.events),
        ("checkpoint", checkpoint_bytes(a) == checkpoint_bytes(&b)),
        ("relevance maps", bits(a) == bits(&b) && a.maps.iter().zip(&b.maps).all(|(x, y)| x.sample_date == y.sample_date)),
        ("reports", json(a) == json(&b)),
    ];
    let differing: Vec<&str> = parts.iter().filter(|p| !p.1).map(|p| p.0).collect();
    verdict(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} components bit-identical across two seed-0 runs", parts.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

// ----------------------------------------------------------------

fn main() {
    let only: Option<BTreeSet<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |k: u32| only.as_ref().is_none_or(|o| o.contains(&k));
    let names = [
        "metrics exactness",
        "gradient correctness",
        "IG completeness",
        "detector oracle equivalence",
        "event-set invariants",
        "planted-precursor recovery",
        "faithfulness discriminates",
        "detrending property",
        "determinism",
    ];

    let needs_runs = [3, 6, 7, 9].iter().any(|&k| wanted(k));
    let n_runs = if wanted(7) { 20 } else if wanted(6) { 10 } else { 1 };
    let t0 = Instant::now();
    let (seed0, summaries) = if needs_runs {
        let first = run_synthetic(&pipeline_config(0)).expect("seed-0 pipeline run");
        let mut summaries = vec![summarize(0, &first)];
        if wanted(6) || wanted(7) {
            for seed in 1..n_runs {
                match run_synthetic(&pipeline_config(seed)) {
                    Ok(run) => summaries.push(summarize(seed, &run)),
                    Err(e) => {
                        eprintln!("seed {seed}: pipeline failed: {e}");
                        summaries.push(RunSummary {
                            seed,
                            accuracy: 0.0,
                            tpr: 0.0,
                            inside: 0.0,
                            outside: 0.0,
                            trend: TrendSign::Flat,
                            ig_auc: 0.0,
                            random_auc: f64::INFINITY,
                            ig_logit_auc: 0.0,
                            random_logit_auc: f64::INFINITY,
                        });
                    }
                }
            }
        }
        (Some(first), summaries)
    } else {
        (None, Vec::new())
    };
    if needs_runs {
        eprintln!("{} pipeline runs in {:.1?}", summaries.len(), t0.elapsed());
    }

    let mut failed = 0;
    for k in 1..=9u32 {
        if !wanted(k) {
            continue;
        }
        let t = Instant::now();
        let v = match k {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(seed0.as_ref().unwrap()),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(&summaries),
            7 => criterion_7(&summaries),
            8 => criterion_8(),
            9 => criterion_9(seed0.as_ref().unwrap()),
            _ => unreachable!(),
        };
        if !v.pass {
            failed += 1;
        }
        println!(
            "{} criterion {k} ({}): {} [{:.1?}]",
            if v.pass { "PASS" } else { "FAIL" },
            names[k as usize - 1],
            v.detail,
            t.elapsed()
        );
    }
    println!("acceptance: {failed} criteria failed");
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
