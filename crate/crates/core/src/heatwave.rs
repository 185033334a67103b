//! Two-stage heatwave identification.
//!
//! Stage one marks per-cell heatwave days: a day whose maximum temperature
//! strictly exceeds the calendar-day 90th percentile (centered 15-day
//! window pooled across years) and which lies in a run of at least three
//! such days. Stage two counts heatwave cells inside a region, thresholds
//! the count at its seasonal 90th percentile and turns exceedances into
//! onset dates, then samples quiet non-event dates.

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::griddata::{RegionMask, TimeAxis};
use crate::stats::quantile_sorted;

pub const DAYS_IN_CALENDAR: usize = 366;

/// A set of calendar months, 1 = January.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Season {
    months: Vec<u32>,
}

impl Season {
    pub fn new(mut months: Vec<u32>) -> Result<Self> {
        months.sort_unstable();
        months.dedup();
        if months.is_empty() || months.iter().any(|m| !(1..=12).contains(m)) {
            return Err(Error::InvalidArgument(format!("bad season months {months:?}")));
        }
        Ok(Self { months })
    }

    /// February through May.
    pub fn fmam() -> Self {
        Self { months: vec![2, 3, 4, 5] }
    }

    pub fn contains_month(&self, month: u32) -> bool {
        self.months.contains(&month)
    }

    pub fn contains(&self, time: &TimeAxis, index: usize) -> bool {
        self.contains_month(time.month(index))
    }

    pub fn months(&self) -> &[u32] {
        &self.months
    }
}

impl Default for Season {
    fn default() -> Self {
        Self::fmam()
    }
}

/// Calendar-day thresholds, laid out `[day_of_year - 1, cell]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdField {
    values: Vec<f64>,
    n_cells: usize,
}

impl ThresholdField {
    pub fn get(&self, day_of_year: u32, cell: usize) -> f64 {
        self.values[(day_of_year as usize - 1) * self.n_cells + cell]
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Day-of-year values within `half_width` of `day` on a 366-day circle.
pub fn window_days(day: u32, half_width: u32) -> impl Iterator<Item = u32> {
    let n = DAYS_IN_CALENDAR as i64;
    let hw = half_width as i64;
    (-hw..=hw).map(move |k| ((day as i64 - 1 + k).rem_euclid(n) + 1) as u32)
}

/// Time indices pooled for each calendar day (index 0 is day 1), ascending.
/// Identical for every cell.
pub fn calendar_pools(time: &TimeAxis, window_half_width: u32) -> Vec<Vec<usize>> {
    let mut by_day: Vec<Vec<usize>> = vec![Vec::new(); DAYS_IN_CALENDAR + 1];
    for t in 0..time.len {
        by_day[time.day_of_year(t) as usize].push(t);
    }
    (1..=DAYS_IN_CALENDAR as u32)
        .map(|d| {
            let mut idx: Vec<usize> =
                window_days(d, window_half_width).flat_map(|w| by_day[w as usize].iter().copied()).collect();
            idx.sort_unstable();
            idx
        })
        .collect()
}

/// Calendar-day mean of a `[T, cells]` cube over the same pooled windows as
/// the thresholds, laid out `[366, cells]`.
pub fn calendar_mean(cube: &[f64], n_cells: usize, time: &TimeAxis, window_half_width: u32) -> Result<ThresholdField> {
    if cube.len() != time.len * n_cells {
        return Err(Error::ShapeMismatch(format!("cube holds {} values, expected {}", cube.len(), time.len * n_cells)));
    }
    let pools = calendar_pools(time, window_half_width);
    let mut values = vec![0.0; DAYS_IN_CALENDAR * n_cells];
    for (d, pool) in pools.iter().enumerate() {
        if pool.is_empty() {
            return Err(Error::InsufficientPool { day_of_year: d as u32 + 1, got: 0, need: 1 });
        }
        let row = &mut values[d * n_cells..(d + 1) * n_cells];
        for &t in pool {
            for (r, v) in row.iter_mut().zip(&cube[t * n_cells..(t + 1) * n_cells]) {
                *r += v;
            }
        }
        row.iter_mut().for_each(|r| *r /= pool.len() as f64);
    }
    Ok(ThresholdField { values, n_cells })
}

/// Calendar-day quantile thresholds of a `[T, cells]` cube.
///
/// Every value whose day-of-year falls in the centered window around a
/// calendar day is pooled, across all years in the record. The window wraps
/// over the year boundary in day-of-year only; the first and last years
/// contribute only days that exist.
pub fn tx90_thresholds(
    tmax: &[f64],
    n_cells: usize,
    time: &TimeAxis,
    window_half_width: u32,
    quantile: f64,
) -> Result<ThresholdField> {
    if tmax.len() != time.len * n_cells {
        return Err(Error::ShapeMismatch(format!(
            "tmax holds {} values, time axis and grid imply {}",
            tmax.len(),
            time.len * n_cells
        )));
    }
    let need = 2 * window_half_width as usize + 1;
    let pools = calendar_pools(time, window_half_width);
    for (d, pool) in pools.iter().enumerate() {
        if pool.len() < need {
            return Err(Error::InsufficientPool { day_of_year: d as u32 + 1, got: pool.len(), need });
        }
    }

    let per_cell: Vec<Vec<f64>> = (0..n_cells)
        .into_par_iter()
        .map(|c| {
            let mut buf = Vec::new();
            pools
                .iter()
                .map(|pool| {
                    buf.clear();
                    buf.extend(pool.iter().map(|&t| tmax[t * n_cells + c]));
                    buf.sort_by(f64::total_cmp);
                    quantile_sorted(&buf, quantile)
                })
                .collect()
        })
        .collect();

    let mut values = vec![0.0; DAYS_IN_CALENDAR * n_cells];
    for (c, col) in per_cell.iter().enumerate() {
        for (d, &v) in col.iter().enumerate() {
            values[d * n_cells + c] = v;
        }
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "threshold field".into(), index });
    }
    Ok(ThresholdField { values, n_cells })
}

/// Per-cell heatwave-day flags, laid out `[T, cells]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatwaveCalendar {
    flags: Vec<bool>,
    n_time: usize,
    n_cells: usize,
    pub thresholds: ThresholdField,
}

impl HeatwaveCalendar {
    /// Builds a calendar from raw flags (useful for tests and replays).
    pub fn from_flags(flags: Vec<bool>, n_time: usize, n_cells: usize, thresholds: ThresholdField) -> Result<Self> {
        if flags.len() != n_time * n_cells || thresholds.n_cells != n_cells {
            return Err(Error::ShapeMismatch("calendar flags".into()));
        }
        Ok(Self { flags, n_time, n_cells, thresholds })
    }

    pub fn is_heatwave_day(&self, t: usize, cell: usize) -> bool {
        self.flags[t * self.n_cells + cell]
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }
}

/// Marks days that lie in a maximal run of at least `min_run` consecutive
/// strict exceedances of the calendar-day threshold.
pub fn mark_heatwave_days(
    tmax: &[f64],
    time: &TimeAxis,
    thresholds: &ThresholdField,
    min_run: usize,
) -> Result<HeatwaveCalendar> {
    let n_cells = thresholds.n_cells;
    if tmax.len() != time.len * n_cells {
        return Err(Error::ShapeMismatch("tmax does not match thresholds".into()));
    }
    let n_time = time.len;
    let mut flags = vec![false; n_time * n_cells];
    let doy: Vec<u32> = (0..n_time).map(|t| time.day_of_year(t)).collect();
    for c in 0..n_cells {
        let mut run_start = 0;
        let mut run_len = 0;
        for t in 0..=n_time {
            let exceeds = t < n_time && tmax[t * n_cells + c] > thresholds.get(doy[t], c);
            if exceeds {
                if run_len == 0 {
                    run_start = t;
                }
                run_len += 1;
            } else {
                if run_len >= min_run {
                    for s in run_start..run_start + run_len {
                        flags[s * n_cells + c] = true;
                    }
                }
                run_len = 0;
            }
        }
    }
    Ok(HeatwaveCalendar { flags, n_time, n_cells, thresholds: thresholds.clone() })
}

/// Per-day number of masked cells flagged as heatwave days.
pub fn regional_counts(cal: &HeatwaveCalendar, region: &RegionMask) -> Result<Vec<u32>> {
    if region.height * region.width != cal.n_cells {
        return Err(Error::ShapeMismatch("region mask does not match calendar grid".into()));
    }
    let cells: Vec<usize> = region.cells().collect();
    if cells.is_empty() {
        return Err(Error::EmptyMask(region.name.clone()));
    }
    Ok((0..cal.n_time)
        .map(|t| cells.iter().filter(|&&c| cal.is_heatwave_day(t, c)).count() as u32)
        .collect())
}

/// Quantile of the counts restricted to season days.
pub fn count_threshold(counts: &[u32], time: &TimeAxis, season: &Season, quantile: f64) -> Result<f64> {
    let mut vals: Vec<f64> = counts
        .iter()
        .enumerate()
        .filter(|&(t, _)| season.contains(time, t))
        .map(|(_, &c)| f64::from(c))
        .collect();
    if vals.is_empty() {
        return Err(Error::NoSeasonDays);
    }
    vals.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&vals, quantile))
}

/// Season days whose count exceeds `threshold` with no exceedance in the
/// preceding `separation` days. Returns time indices in chronological order.
pub fn detect_onsets(
    counts: &[u32],
    threshold: f64,
    time: &TimeAxis,
    season: &Season,
    separation: usize,
) -> Vec<usize> {
    let exceeds = |t: usize| f64::from(counts[t]) > threshold;
    // index of the most recent exceedance strictly before t
    let mut last_exceed: Option<usize> = None;
    let mut onsets = Vec::new();
    for t in 0..counts.len() {
        if exceeds(t) {
            let clear = last_exceed.is_none_or(|l| t - l > separation);
            if clear && season.contains(time, t) {
                onsets.push(t);
            }
            last_exceed = Some(t);
        }
    }
    onsets
}

/// Seeded sampling of non-event days.
///
/// Candidates are season days with counts at or below the threshold and no
/// onset within `clearance` days either side. Candidates are visited in a
/// seeded random order and accepted while no already-chosen negative lies
/// within `clearance` days. Stops at `ratio * onsets.len()` picks or when
/// candidates run out. Returned in chronological order.
#[allow(clippy::too_many_arguments)]
pub fn sample_negatives(
    counts: &[u32],
    onsets: &[usize],
    threshold: f64,
    time: &TimeAxis,
    season: &Season,
    ratio: usize,
    clearance: usize,
    seed: u64,
) -> Vec<usize> {
    let target = ratio * onsets.len();
    let near = |a: usize, b: usize| a.abs_diff(b) <= clearance;
    let mut candidates: Vec<usize> = (0..counts.len())
        .filter(|&t| season.contains(time, t) && f64::from(counts[t]) <= threshold)
        .filter(|&t| !onsets.iter().any(|&o| near(o, t)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);

    let mut chosen: Vec<usize> = Vec::with_capacity(target);
    for t in candidates {
        if chosen.len() >= target {
            break;
        }
        if !chosen.iter().any(|&c| near(c, t)) {
            chosen.push(t);
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Regional onsets and sampled non-event dates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSet {
    pub season: Season,
    pub count_threshold: f64,
    pub onsets: Vec<NaiveDate>,
    pub negatives: Vec<NaiveDate>,
    pub seed: u64,
    pub ratio_achieved: f64,
}

impl EventSet {
    pub fn from_indices(
        time: &TimeAxis,
        season: Season,
        count_threshold: f64,
        onsets: &[usize],
        negatives: &[usize],
        seed: u64,
    ) -> Self {
        let ratio_achieved =
            if onsets.is_empty() { 0.0 } else { negatives.len() as f64 / onsets.len() as f64 };
        Self {
            season,
            count_threshold,
            onsets: onsets.iter().map(|&t| time.date(t)).collect(),
            negatives: negatives.iter().map(|&t| time.date(t)).collect(),
            seed,
            ratio_achieved,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.onsets.is_empty() && self.negatives.is_empty()
    }

    /// Checks separation, clearance and ratio invariants against the counts
    /// the set was derived from. Returns a description of the first breach.
    pub fn check_invariants(
        &self,
        counts: &[u32],
        time: &TimeAxis,
        separation: usize,
        clearance: usize,
        ratio: usize,
    ) -> std::result::Result<(), String> {
        if self.onsets.windows(2).any(|w| w[0] >= w[1]) {
            return Err("onsets not strictly increasing".into());
        }
        let idx = |d: &NaiveDate| time.index_of(*d).ok_or_else(|| format!("{d} outside time axis"));
        for o in &self.onsets {
            let t = idx(o)?;
            if f64::from(counts[t]) <= self.count_threshold {
                return Err(format!("onset {o} does not exceed threshold"));
            }
            for back in 1..=separation.min(t) {
                if f64::from(counts[t - back]) > self.count_threshold {
                    return Err(format!("onset {o} preceded by exceedance {back} days earlier"));
                }
            }
        }
        let onset_idx: Vec<usize> = self.onsets.iter().map(idx).collect::<std::result::Result<_, _>>()?;
        let neg_idx: Vec<usize> = self.negatives.iter().map(idx).collect::<std::result::Result<_, _>>()?;
        for (i, &n) in neg_idx.iter().enumerate() {
            if f64::from(counts[n]) > self.count_threshold {
                return Err(format!("negative {} exceeds threshold", self.negatives[i]));
            }
            if onset_idx.iter().any(|&o| o.abs_diff(n) <= clearance) {
                return Err(format!("negative {} within {clearance} days of an onset", self.negatives[i]));
            }
            if neg_idx.iter().enumerate().any(|(j, &m)| j != i && m.abs_diff(n) <= clearance) {
                return Err(format!("negative {} within {clearance} days of another", self.negatives[i]));
            }
        }
        if self.negatives.len() > ratio * self.onsets.len() {
            return Err("negative count exceeds ratio".into());
        }
        Ok(())
    }
}

/// Parameters of the full detection chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    pub window_half_width: u32,
    pub quantile: f64,
    pub min_run: usize,
    pub season: Season,
    pub count_quantile: f64,
    pub separation: usize,
    pub ratio: usize,
    pub clearance: usize,
    pub detrend: bool,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            window_half_width: 7,
            quantile: 0.90,
            min_run: 3,
            season: Season::fmam(),
            count_quantile: 0.90,
            separation: 7,
            ratio: 5,
            clearance: 7,
            detrend: true,
        }
    }
}

/// Everything produced by [`detect_events`].
#[derive(Debug, Clone)]
pub struct Detection {
    pub calendar: HeatwaveCalendar,
    pub counts: Vec<u32>,
    pub events: EventSet,
}

/// Thresholds, calendar, regional counts, onsets and negatives for one
/// `[T, cells]` maximum-temperature cube.
pub fn detect_events(
    tmax: &[f64],
    time: &TimeAxis,
    region: &RegionMask,
    cfg: &DetectConfig,
    seed: u64,
) -> Result<Detection> {
    let n_cells = region.height * region.width;
    let mut cube = tmax.to_vec();
    if cfg.detrend {
        crate::griddata::detrend_cube(&mut cube, time.len, n_cells)?;
    }
    let thresholds = tx90_thresholds(&cube, n_cells, time, cfg.window_half_width, cfg.quantile)?;
    let calendar = mark_heatwave_days(&cube, time, &thresholds, cfg.min_run)?;
    let counts = regional_counts(&calendar, region)?;
    let thr = count_threshold(&counts, time, &cfg.season, cfg.count_quantile)?;
    let onsets = detect_onsets(&counts, thr, time, &cfg.season, cfg.separation);
    let negatives = sample_negatives(&counts, &onsets, thr, time, &cfg.season, cfg.ratio, cfg.clearance, seed);
    let events = EventSet::from_indices(time, cfg.season.clone(), thr, &onsets, &negatives, seed);
    Ok(Detection { calendar, counts, events })
}
