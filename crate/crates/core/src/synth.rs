//! A deterministic synthetic world: seasonal cycle plus AR(1) noise, injected
//! warm bursts over an event region, and a planted precursor whose amplitude
//! drifts across periods.

use std::ops::Range;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::griddata::{save_grid, GridStack, RegionMask, TimeAxis, VariableSpec};

/// A half-open rectangle of grid cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

impl Rect {
    pub fn new(rows: Range<usize>, cols: Range<usize>) -> Self {
        Self { rows, cols }
    }

    pub fn to_mask(&self, name: &str, height: usize, width: usize) -> Result<RegionMask> {
        if self.rows.end > height || self.cols.end > width {
            return Err(Error::InvalidArgument(format!("region {name:?} extends past the {height}x{width} grid")));
        }
        RegionMask::rect(name, height, width, self.rows.clone(), self.cols.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub first_year: i32,
    pub last_year: i32,
    pub height: usize,
    pub width: usize,
    /// Variable 0 is the maximum temperature that carries the bursts.
    pub n_variables: usize,
    pub precursor_variable: usize,
    pub precursor_region: Rect,
    /// Days between the precursor anomaly and the burst start, in `1..=7`.
    pub precursor_lead: usize,
    /// Precursor amplitude in noise standard deviations, one per period.
    pub amplitude_per_period: Vec<f64>,
    pub period_starts: Vec<i32>,
    pub noise_std: f64,
    pub ar_coefficient: f64,
    pub seasonal_amplitude: f64,
    /// Linear warming of variable 0, per year.
    pub trend_per_year: f64,
    pub event_region: Rect,
    pub events_per_year: usize,
    pub burst_days: usize,
    /// Burst peak in noise standard deviations; the first and last burst day
    /// get `burst_edge` of it.
    pub burst_amplitude: f64,
    pub burst_edge: f64,
    /// Quiet days required between one burst's end and the next start.
    pub burst_gap: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            first_year: 1959,
            last_year: 2022,
            height: 8,
            width: 8,
            n_variables: 3,
            precursor_variable: 1,
            precursor_region: Rect::new(0..4, 4..8),
            precursor_lead: 3,
            amplitude_per_period: vec![0.5, 1.0, 1.5, 2.0, 2.5],
            period_starts: vec![1959, 1972, 1984, 1997, 2010],
            noise_std: 1.0,
            ar_coefficient: 0.7,
            seasonal_amplitude: 10.0,
            trend_per_year: 0.0,
            event_region: Rect::new(3..8, 0..6),
            events_per_year: 2,
            burst_days: 7,
            burst_amplitude: 4.0,
            burst_edge: 0.6,
            burst_gap: 12,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(1..=7).contains(&self.precursor_lead) {
            return bad("precursor_lead must lie in 1..=7");
        }
        if self.n_variables < 2 || self.precursor_variable == 0 || self.precursor_variable >= self.n_variables {
            return bad("need at least two variables with the precursor outside variable 0");
        }
        if self.last_year < self.first_year || self.first_year < 1 {
            return bad("year range is empty");
        }
        if self.amplitude_per_period.len() != self.period_starts.len() || self.period_starts.is_empty() {
            return bad("one precursor amplitude per period start is required");
        }
        if self.period_starts.windows(2).any(|w| w[1] <= w[0]) {
            return bad("period starts must increase");
        }
        let finite = [self.noise_std, self.ar_coefficient, self.seasonal_amplitude, self.trend_per_year, self.burst_amplitude, self.burst_edge];
        if self.amplitude_per_period.iter().chain(&finite).any(|v| !v.is_finite()) {
            return bad("amplitudes must be finite");
        }
        if self.noise_std <= 0.0 || self.ar_coefficient.abs() >= 1.0 {
            return bad("noise_std must be positive and |ar_coefficient| < 1");
        }
        if self.burst_days == 0 {
            return bad("burst_days must be positive");
        }
        self.precursor_region.to_mask("precursor", self.height, self.width)?;
        self.event_region.to_mask("event", self.height, self.width)?;
        Ok(())
    }

    pub fn amplitude_for(&self, date: NaiveDate) -> f64 {
        let p = self.period_starts.iter().rposition(|&y| date.year() >= y).unwrap_or(0);
        self.amplitude_per_period[p]
    }

    pub fn variable_names(&self) -> Vec<String> {
        (0..self.n_variables)
            .map(|v| match v {
                0 => "txm".to_string(),
                v if v == self.precursor_variable => "t_200hPa".to_string(),
                v => format!("noise{v}"),
            })
            .collect()
    }
}

/// What was planted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// First day of every injected burst.
    pub onsets: Vec<NaiveDate>,
    pub precursor_dates: Vec<NaiveDate>,
    /// Precursor amplitude used for each onset, in noise standard deviations.
    pub amplitudes: Vec<f64>,
    pub precursor_variable: String,
    /// Flat cell indices of the precursor region.
    pub informative_cells: Vec<usize>,
    pub event_cells: Vec<usize>,
}

fn season_bounds(year: i32) -> (NaiveDate, NaiveDate) {
    (NaiveDate::from_ymd_opt(year, 2, 1).unwrap(), NaiveDate::from_ymd_opt(year, 5, 31).unwrap())
}

/// Burst start dates for one year, at least `gap` quiet days apart and
/// wholly inside February to May.
fn place_bursts(rng: &mut ChaCha8Rng, year: i32, cfg: &SynthConfig) -> Vec<NaiveDate> {
    let (first, last) = season_bounds(year);
    let lo = first.num_days_from_ce() + cfg.burst_gap as i32;
    let hi = last.num_days_from_ce() - cfg.burst_days as i32 + 1;
    let span = cfg.burst_days as i32 + cfg.burst_gap as i32;
    let mut starts: Vec<i32> = Vec::new();
    let mut tries = 0;
    while starts.len() < cfg.events_per_year && tries < 1000 && hi > lo {
        tries += 1;
        let s = rng.random_range(lo..=hi);
        if starts.iter().all(|&o| s >= o + span || s + span <= o) {
            starts.push(s);
        }
    }
    starts.sort_unstable();
    starts.into_iter().map(|d| NaiveDate::from_num_days_from_ce_opt(d).unwrap()).collect()
}

/// Builds the world. The same config always yields the same bits.
pub fn generate(cfg: &SynthConfig) -> Result<(GridStack, GroundTruth)> {
    cfg.validate()?;
    let start = NaiveDate::from_ymd_opt(cfg.first_year, 1, 1).unwrap();
    let end = NaiveDate::from_ymd_opt(cfg.last_year, 12, 31).unwrap();
    let time = TimeAxis::spanning(start, end)?;
    let (h, w, nv) = (cfg.height, cfg.width, cfg.n_variables);
    let cells = h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let names = cfg.variable_names();
    let variables: Vec<VariableSpec> = names
        .iter()
        .enumerate()
        .map(|(v, n)| VariableSpec::new(n.clone(), if v == 0 || v == cfg.precursor_variable { "K" } else { "1" }))
        .collect();

    // Background: seasonal cycle on variable 0 plus AR(1) noise everywhere,
    // innovations scaled so the stationary standard deviation is noise_std.
    let phi = cfg.ar_coefficient;
    let innov = cfg.noise_std * (1.0 - phi * phi).sqrt();
    let mut data = vec![0.0; time.len * nv * cells];
    let mut state: Vec<f64> = (0..nv * cells).map(|_| cfg.noise_std * rng.sample::<f64, _>(StandardNormal)).collect();
    for t in 0..time.len {
        let date = time.date(t);
        let doy = date.ordinal() as f64;
        let years = (date.year() - cfg.first_year) as f64 + doy / 365.25;
        let cycle = -cfg.seasonal_amplitude * (2.0 * std::f64::consts::PI * (doy - 15.0) / 365.25).cos();
        let day = &mut data[t * nv * cells..(t + 1) * nv * cells];
        for (k, s) in state.iter_mut().enumerate() {
            if t > 0 {
                *s = phi * *s + innov * rng.sample::<f64, _>(StandardNormal);
            }
            day[k] = *s;
            if k < cells {
                day[k] += cycle + cfg.trend_per_year * years;
            }
        }
    }

    let event_mask = cfg.event_region.to_mask("event", h, w)?;
    let pre_mask = cfg.precursor_region.to_mask("precursor", h, w)?;
    let event_cells: Vec<usize> = event_mask.cells().collect();
    let informative_cells: Vec<usize> = pre_mask.cells().collect();

    let mut onsets = Vec::new();
    let mut precursor_dates = Vec::new();
    let mut amplitudes = Vec::new();
    for year in cfg.first_year..=cfg.last_year {
        for s in place_bursts(&mut rng, year, cfg) {
            let t0 = time.index_of(s).expect("burst inside the record");
            for d in 0..cfg.burst_days {
                let edge = d == 0 || d + 1 == cfg.burst_days;
                let amp = cfg.burst_amplitude * cfg.noise_std * if edge { cfg.burst_edge } else { 1.0 };
                let base = (t0 + d) * nv * cells;
                for &c in &event_cells {
                    data[base + c] += amp;
                }
            }
            let pt = t0 - cfg.precursor_lead;
            let amp = cfg.amplitude_for(s);
            let base = (pt * nv + cfg.precursor_variable) * cells;
            for &c in &informative_cells {
                data[base + c] += amp * cfg.noise_std;
            }
            onsets.push(s);
            precursor_dates.push(time.date(pt));
            amplitudes.push(amp);
        }
    }

    let lat: Vec<f64> = (0..h).map(|i| 10.0 - i as f64).collect();
    let lon: Vec<f64> = (0..w).map(|j| 20.0 + j as f64).collect();
    let stack = GridStack::new(data, time, variables, lat, lon)?;
    let truth = GroundTruth {
        onsets,
        precursor_dates,
        amplitudes,
        precursor_variable: names[cfg.precursor_variable].clone(),
        informative_cells,
        event_cells,
    };
    Ok((stack, truth))
}

/// Writes the stack as an XG1 manifest and `ground_truth.json` into `dir`.
pub fn write_world(stack: &GridStack, truth: &GroundTruth, dir: &Path) -> Result<PathBuf> {
    let manifest = save_grid(stack, dir, "manifest.json")?;
    let path = dir.join("ground_truth.json");
    std::fs::write(&path, serde_json::to_string_pretty(truth)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Fraction of planted onsets with a detection within `tolerance` days, and
/// fraction of detections matching no planted onset.
pub fn onset_recovery(planted: &[NaiveDate], detected: &[NaiveDate], tolerance: i64) -> (f64, f64) {
    let near = |a: &NaiveDate, b: &NaiveDate| (*a - *b).num_days().abs() <= tolerance;
    let recovered = planted.iter().filter(|p| detected.iter().any(|d| near(p, d))).count();
    let spurious = detected.iter().filter(|d| !planted.iter().any(|p| near(p, d))).count();
    let frac = |n: usize, of: usize| if of == 0 { 0.0 } else { n as f64 / of as f64 };
    (frac(recovered, planted.len()), frac(spurious, detected.len()))
}
