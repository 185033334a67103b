//! Brute-force oracles and numeric helpers shared by the integration tests
//! and the acceptance harness. Written directly from the definitions, without
//! reusing the library's own pooling or run-scanning code.
#![allow(dead_code)]

pub mod gradcheck;
pub mod instances;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect()
}

/// Distance between two calendar days on the 366-day circle.
pub fn circular_distance(a: u32, b: u32) -> u32 {
    let d = a.abs_diff(b);
    d.min(366 - d)
}

/// Interpolated quantile at 1-based rank `h = (n - 1) q + 1`. The fractional
/// part is taken from `(n - 1) q` so that adding one cannot round it.
pub fn quantile_h(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    let pos = (n - 1) as f64 * q;
    let h = pos.floor() as usize + 1;
    if h >= n {
        return v[n - 1];
    }
    v[h - 1] + pos.fract() * (v[h] - v[h - 1])
}

/// Calendar-day thresholds `[366][cells]`, or `None` when some pool is
/// smaller than the window.
pub fn thresholds_oracle(
    tmax: &[f64],
    dates: &[NaiveDate],
    n_cells: usize,
    half_width: u32,
    q: f64,
) -> Option<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(366);
    for day in 1..=366u32 {
        let pool: Vec<usize> =
            (0..dates.len()).filter(|&t| circular_distance(dates[t].ordinal(), day) <= half_width).collect();
        if pool.len() < 2 * half_width as usize + 1 {
            return None;
        }
        out.push((0..n_cells).map(|c| quantile_h(&pool.iter().map(|&t| tmax[t * n_cells + c]).collect::<Vec<_>>(), q)).collect());
    }
    Some(out)
}

/// A day is a heatwave day when some window of `min_run` consecutive
/// exceedance days contains it.
pub fn heatwave_days_oracle(exceed: &[bool], min_run: usize) -> Vec<bool> {
    let n = exceed.len();
    (0..n)
        .map(|t| {
            (t.saturating_sub(min_run - 1)..=t)
                .any(|s| s + min_run <= n && (s..s + min_run).all(|u| exceed[u]))
        })
        .collect()
}

pub fn in_season(date: NaiveDate, months: &[u32]) -> bool {
    months.contains(&date.month())
}

pub fn count_threshold_oracle(counts: &[u32], dates: &[NaiveDate], months: &[u32], q: f64) -> f64 {
    let vals: Vec<f64> =
        counts.iter().zip(dates).filter(|(_, d)| in_season(**d, months)).map(|(&c, _)| c as f64).collect();
    quantile_h(&vals, q)
}

/// An onset is an in-season exceedance day with no exceedance on any of the
/// preceding `separation` days held in the record.
pub fn onsets_oracle(counts: &[u32], thr: f64, dates: &[NaiveDate], months: &[u32], separation: usize) -> Vec<usize> {
    (0..counts.len())
        .filter(|&t| {
            counts[t] as f64 > thr
                && in_season(dates[t], months)
                && (t.saturating_sub(separation)..t).all(|s| counts[s] as f64 <= thr)
        })
        .collect()
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_grad(f: &dyn Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + eps;
            let up = f(&p);
            p[i] = orig - eps;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Heatwave-day cell counts per full decade (1960s to 2010s) on a
/// synthetic world holding only a linear warming trend and red noise.
pub fn decade_heatwave_counts(seed: u64, trend_per_year: f64, detrend: bool) -> Vec<usize> {
    use heatxai::heatwave::{mark_heatwave_days, tx90_thresholds, DetectConfig};
    use heatxai::synth::{generate, SynthConfig};

    let synth = SynthConfig { seed, events_per_year: 0, trend_per_year, seasonal_amplitude: 0.0, ..SynthConfig::default() };
    let (stack, _) = generate(&synth).unwrap();
    let n_cells = stack.n_cells();
    let mut cube = stack.variable_cube(0);
    if detrend {
        heatxai::griddata::detrend_cube(&mut cube, stack.n_time(), n_cells).unwrap();
    }
    let cfg = DetectConfig::default();
    let th = tx90_thresholds(&cube, n_cells, &stack.time, cfg.window_half_width, cfg.quantile).unwrap();
    let cal = mark_heatwave_days(&cube, &stack.time, &th, cfg.min_run).unwrap();
    let mut counts = vec![0; 6];
    for t in 0..stack.n_time() {
        let y = stack.time.date(t).year();
        if (1960..2020).contains(&y) {
            counts[((y - 1960) / 10) as usize] += (0..n_cells).filter(|&c| cal.is_heatwave_day(t, c)).count();
        }
    }
    counts
}
