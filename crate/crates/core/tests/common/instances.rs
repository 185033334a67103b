//! Randomized detector instances and the comparisons against the oracles.

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::Rng;

use heatxai::griddata::{RegionMask, TimeAxis};
use heatxai::heatwave::{
    count_threshold, detect_events, detect_onsets, mark_heatwave_days, regional_counts, tx90_thresholds, DetectConfig,
    Season,
};
use heatxai::synth::{generate, Rect, SynthConfig};
use heatxai::Error;

use super::*;

pub struct Instance {
    pub time: TimeAxis,
    pub dates: Vec<NaiveDate>,
    pub height: usize,
    pub width: usize,
    pub tmax: Vec<f64>,
    pub region: RegionMask,
    pub half_width: u32,
    pub quantile: f64,
    pub min_run: usize,
    pub months: Vec<u32>,
    pub count_quantile: f64,
    pub separation: usize,
}

/// Up to three years on up to an 8x8 grid. Values are rounded to a coarse
/// step so that pools contain ties.
pub fn random_instance(seed: u64) -> Instance {
    let mut g = rng(seed);
    let year = g.random_range(1995..=2004);
    let start = NaiveDate::from_ymd_opt(year, g.random_range(1..=12), 1).unwrap();
    let days = g.random_range(400..=3 * 365);
    let time = TimeAxis::new(start, days).unwrap();
    let dates: Vec<NaiveDate> = time.dates().collect();
    let (height, width) = (g.random_range(1..=8), g.random_range(1..=8));
    let n_cells = height * width;
    let step = [0.0, 0.25, 0.5][g.random_range(0..3)];
    let mut tmax = Vec::with_capacity(days * n_cells);
    for (t, d) in dates.iter().enumerate() {
        let season = 8.0 * (2.0 * std::f64::consts::PI * d.ordinal() as f64 / 365.25).sin();
        for _ in 0..n_cells {
            let v: f64 = season + 3.0 * g.sample::<f64, _>(rand_distr::StandardNormal) + 0.001 * t as f64;
            tmax.push(if step > 0.0 { (v / step).round() * step } else { v });
        }
    }
    let mut mask: Vec<bool> = (0..n_cells).map(|_| g.random_bool(0.5)).collect();
    mask[g.random_range(0..n_cells)] = true;
    let region = RegionMask::new("r", height, width, mask).unwrap();
    let mut all_months: Vec<u32> = (1..=12).collect();
    all_months.shuffle(&mut g);
    let mut months: Vec<u32> = all_months[..g.random_range(1..=6)].to_vec();
    months.sort_unstable();
    Instance {
        time,
        dates,
        height,
        width,
        tmax,
        region,
        half_width: g.random_range(0..=7),
        quantile: [0.5, 0.75, 0.9, 0.95, g.random_range(0.0..1.0)][g.random_range(0..5)],
        min_run: g.random_range(1..=4),
        months,
        count_quantile: [0.5, 0.9, g.random_range(0.0..1.0)][g.random_range(0..3)],
        separation: g.random_range(1..=10),
    }
}

/// Which detector stages agreed with their oracle on one instance.
#[derive(Debug, Clone, Copy, Default)]
pub struct StageAgreement {
    pub thresholds: bool,
    pub run_marking: bool,
    pub count_threshold: bool,
    pub onsets: bool,
}

impl StageAgreement {
    pub fn all(&self) -> bool {
        self.thresholds && self.run_marking && self.count_threshold && self.onsets
    }
}

pub fn compare_stages(inst: &Instance) -> StageAgreement {
    let n_cells = inst.height * inst.width;
    let mut out = StageAgreement::default();

    let lib = tx90_thresholds(&inst.tmax, n_cells, &inst.time, inst.half_width, inst.quantile);
    let oracle = thresholds_oracle(&inst.tmax, &inst.dates, n_cells, inst.half_width, inst.quantile);
    let thresholds = match (lib, oracle) {
        (Err(Error::InsufficientPool { .. }), None) => {
            // Both refuse; the later stages are compared on a flat threshold.
            out.thresholds = true;
            None
        }
        (Ok(th), Some(o)) => {
            out.thresholds = (1..=366u32).all(|d| (0..n_cells).all(|c| th.get(d, c) == o[d as usize - 1][c]));
            Some(th)
        }
        _ => return out,
    };
    let thresholds = match thresholds {
        Some(th) => th,
        None => return out_with_rest_true(out),
    };

    let Ok(cal) = mark_heatwave_days(&inst.tmax, &inst.time, &thresholds, inst.min_run) else { return out };
    out.run_marking = (0..n_cells).all(|c| {
        let exceed: Vec<bool> = (0..inst.time.len)
            .map(|t| inst.tmax[t * n_cells + c] > thresholds.get(inst.dates[t].ordinal(), c))
            .collect();
        let expect = heatwave_days_oracle(&exceed, inst.min_run);
        (0..inst.time.len).all(|t| cal.is_heatwave_day(t, c) == expect[t])
    });

    let counts = regional_counts(&cal, &inst.region).unwrap();
    let counts_ok = (0..inst.time.len).all(|t| {
        counts[t] as usize == inst.region.cells().filter(|&c| cal.is_heatwave_day(t, c)).count()
    });
    let season = Season::new(inst.months.clone()).unwrap();
    let has_season = inst.dates.iter().any(|d| in_season(*d, &inst.months));
    let thr = count_threshold(&counts, &inst.time, &season, inst.count_quantile);
    let thr = match (thr, has_season) {
        (Ok(v), true) => {
            out.count_threshold =
                counts_ok && v == count_threshold_oracle(&counts, &inst.dates, &inst.months, inst.count_quantile);
            v
        }
        (Err(Error::NoSeasonDays), false) => {
            out.count_threshold = counts_ok;
            out.onsets = true;
            return out;
        }
        _ => return out,
    };

    let lib_onsets = detect_onsets(&counts, thr, &inst.time, &season, inst.separation);
    out.onsets = lib_onsets == onsets_oracle(&counts, thr, &inst.dates, &inst.months, inst.separation);
    out
}

fn out_with_rest_true(mut out: StageAgreement) -> StageAgreement {
    out.run_marking = true;
    out.count_threshold = true;
    out.onsets = true;
    out
}

/// A small synthetic world and detector settings drawn from `seed`, and an
/// independent check of every event-set invariant on the detection.
pub fn event_set_violations(seed: u64) -> Vec<String> {
    let mut g = rng(seed.wrapping_add(0x5EED));
    let first_year = g.random_range(1960..=2010);
    let synth = SynthConfig {
        seed,
        first_year,
        last_year: first_year + g.random_range(2..=6),
        events_per_year: g.random_range(0..=4),
        burst_days: g.random_range(3..=8),
        burst_gap: g.random_range(2..=12),
        event_region: Rect::new(g.random_range(0..4)..8, 0..g.random_range(4..=8)),
        period_starts: vec![1900],
        amplitude_per_period: vec![1.0],
        ..SynthConfig::default()
    };
    let (stack, _) = match generate(&synth) {
        Ok(v) => v,
        Err(e) => return vec![format!("generate failed: {e}")],
    };
    let region = synth.event_region.to_mask("event", synth.height, synth.width).unwrap();
    let cfg = DetectConfig {
        separation: g.random_range(1..=10),
        clearance: g.random_range(1..=10),
        ratio: g.random_range(1..=6),
        detrend: g.random_bool(0.5),
        ..DetectConfig::default()
    };
    let neg_seed = g.random();
    let det = match detect_events(&stack.variable_cube(0), &stack.time, &region, &cfg, neg_seed) {
        Ok(d) => d,
        Err(e) => return vec![format!("detect failed: {e}")],
    };
    let ev = &det.events;
    let counts = &det.counts;
    let thr = ev.count_threshold;
    let months = cfg.season.months().to_vec();
    let dates: Vec<NaiveDate> = stack.time.dates().collect();
    let idx = |d: &NaiveDate| stack.time.index_of(*d).unwrap();
    let onsets: Vec<usize> = ev.onsets.iter().map(idx).collect();
    let negs: Vec<usize> = ev.negatives.iter().map(idx).collect();
    let exceeds = |t: usize| counts[t] as f64 > thr;

    let mut bad = Vec::new();
    if let Err(e) = ev.check_invariants(counts, &stack.time, cfg.separation, cfg.clearance, cfg.ratio) {
        bad.push(format!("library check: {e}"));
    }
    if onsets != onsets_oracle(counts, thr, &dates, &months, cfg.separation) {
        bad.push("onsets differ from oracle".into());
    }
    if !onsets.windows(2).all(|w| w[0] < w[1]) || !negs.windows(2).all(|w| w[0] < w[1]) {
        bad.push("dates not strictly increasing".into());
    }
    for &o in &onsets {
        if (o.saturating_sub(cfg.separation)..o).any(exceeds) {
            bad.push(format!("onset {} inside separation window", dates[o]));
        }
    }
    for &n in &negs {
        if !in_season(dates[n], &months) {
            bad.push(format!("negative {} out of season", dates[n]));
        }
        if exceeds(n) {
            bad.push(format!("negative {} exceeds the count threshold", dates[n]));
        }
        if onsets.iter().any(|&o| o.abs_diff(n) <= cfg.clearance) {
            bad.push(format!("negative {} too close to an onset", dates[n]));
        }
    }
    if negs.windows(2).any(|w| w[1] - w[0] <= cfg.clearance) {
        bad.push("negatives too close to each other".into());
    }
    if negs.len() > cfg.ratio * onsets.len() {
        bad.push("more negatives than the ratio allows".into());
    }
    let expect_ratio = if onsets.is_empty() { 0.0 } else { negs.len() as f64 / onsets.len() as f64 };
    if ev.ratio_achieved != expect_ratio {
        bad.push("ratio_achieved misreported".into());
    }
    // Falling short of the ratio is only allowed when no admissible day is left.
    if negs.len() < cfg.ratio * onsets.len() {
        let free = (0..counts.len()).any(|t| {
            in_season(dates[t], &months)
                && !exceeds(t)
                && onsets.iter().chain(&negs).all(|&o| o.abs_diff(t) > cfg.clearance)
        });
        if free {
            bad.push("ratio short although admissible days remain".into());
        }
    }
    let again = detect_events(&stack.variable_cube(0), &stack.time, &region, &cfg, neg_seed).unwrap();
    if again.events != *ev {
        bad.push("detection not reproducible".into());
    }
    bad
}
