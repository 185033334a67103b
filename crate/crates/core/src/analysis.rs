//! Per-region, per-period aggregation of relevance maps and raw fields, and
//! the comparison of their trends.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::RelevanceMap;
use crate::dataset::{PeriodBins, LOOKBACK_DAYS};
use crate::error::{Error, Result};
use crate::griddata::{GridStack, RegionMask};
use crate::heatwave::{calendar_mean, ThresholdField};
use crate::stats::{ols_slope_xy, std_pop};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Signed,
    /// Negative relevance is clipped to zero before averaging.
    PositiveOnly,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Signed => "signed",
            Variant::PositiveOnly => "positive_only",
        }
    }
}

/// Values keyed by (variable, period, lead day) for one region. Periods
/// without data hold `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodTable {
    pub region: String,
    pub variables: Vec<String>,
    pub periods: Vec<String>,
    pub lead_days: Vec<i32>,
    /// Flat `[variable][period][lead]`.
    pub values: Vec<Option<f64>>,
    /// Samples or events contributing to each period.
    pub counts: Vec<usize>,
}

impl PeriodTable {
    fn empty(region: &str, variables: &[String], bins: &PeriodBins, n_lead: usize) -> Self {
        Self {
            region: region.to_string(),
            variables: variables.to_vec(),
            periods: bins.labels(),
            lead_days: (0..n_lead).map(|l| l as i32 - n_lead as i32).collect(),
            values: vec![None; variables.len() * bins.len() * n_lead],
            counts: vec![0; bins.len()],
        }
    }

    fn slot(&self, v: usize, p: usize, l: usize) -> usize {
        (v * self.periods.len() + p) * self.lead_days.len() + l
    }

    pub fn get(&self, v: usize, p: usize, l: usize) -> Option<f64> {
        self.values[self.slot(v, p, l)]
    }

    pub fn variable_index(&self, name: &str) -> Result<usize> {
        self.variables.iter().position(|v| v == name).ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    /// Per-period values averaged over all lead days.
    pub fn period_series(&self, v: usize) -> Vec<Option<f64>> {
        (0..self.periods.len())
            .map(|p| {
                let vals: Option<Vec<f64>> = (0..self.lead_days.len()).map(|l| self.get(v, p, l)).collect();
                vals.map(|x| x.iter().sum::<f64>() / x.len() as f64)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceSummary {
    pub variant: Variant,
    pub table: PeriodTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeAnomaly {
    pub table: PeriodTable,
    /// Events skipped for lack of history.
    pub dropped: usize,
}

fn lead_shape(shape: &[usize], variables: usize, region: &RegionMask) -> Result<usize> {
    match shape {
        [l, v, h, w] if *v == variables && *h == region.height && *w == region.width => Ok(*l),
        _ => Err(Error::ShapeMismatch(format!(
            "relevance map {shape:?} does not fit {variables} variables on a {}x{} grid",
            region.height, region.width
        ))),
    }
}

/// Mean relevance per variable, period and lead day over the masked cells,
/// then over the maps in each period.
pub fn mean_relevance(
    maps: &[RelevanceMap],
    variables: &[String],
    region: &RegionMask,
    bins: &PeriodBins,
    variant: Variant,
) -> Result<RelevanceSummary> {
    if region.count() == 0 {
        return Err(Error::EmptyMask(region.name.clone()));
    }
    let first = maps.first().ok_or_else(|| Error::Empty("relevance maps".into()))?;
    let n_lead = lead_shape(first.values.shape(), variables.len(), region)?;
    let nv = variables.len();
    let cells: Vec<usize> = region.cells().collect();
    let plane = region.height * region.width;

    let mut by_period: Vec<Vec<&RelevanceMap>> = vec![Vec::new(); bins.len()];
    for m in maps {
        if lead_shape(m.values.shape(), nv, region)? != n_lead {
            return Err(Error::ShapeMismatch("relevance maps disagree on lead days".into()));
        }
        let date = m.sample_date.ok_or_else(|| Error::InvalidArgument("relevance map without a sample date".into()))?;
        let p = bins.assign(date).ok_or(Error::OutsideBins(date))?;
        by_period[p].push(m);
    }

    let clip = |x: f64| match variant {
        Variant::Signed => x,
        Variant::PositiveOnly => x.max(0.0),
    };
    let per_period: Vec<Option<Vec<f64>>> = by_period
        .par_iter()
        .map(|group| {
            if group.is_empty() {
                return None;
            }
            let mut acc = vec![0.0; nv * n_lead];
            for m in group {
                let d = m.values.data();
                for l in 0..n_lead {
                    for v in 0..nv {
                        let base = (l * nv + v) * plane;
                        let s: f64 = cells.iter().map(|&c| clip(d[base + c])).sum();
                        acc[v * n_lead + l] += s / cells.len() as f64;
                    }
                }
            }
            acc.iter_mut().for_each(|a| *a /= group.len() as f64);
            Some(acc)
        })
        .collect();

    let mut table = PeriodTable::empty(&region.name, variables, bins, n_lead);
    for (p, vals) in per_period.iter().enumerate() {
        table.counts[p] = by_period[p].len();
        if let Some(vals) = vals {
            for v in 0..nv {
                for l in 0..n_lead {
                    let slot = table.slot(v, p, l);
                    table.values[slot] = Some(vals[v * n_lead + l]);
                }
            }
        }
    }
    Ok(RelevanceSummary { variant, table })
}

/// Per-variable calendar-day climatology, `[366, cells]` each.
#[derive(Debug, Clone, PartialEq)]
pub struct Climatology {
    pub fields: Vec<ThresholdField>,
}

impl Climatology {
    /// Smoothed over the same centered window as the heatwave thresholds.
    pub fn fit(stack: &GridStack, window_half_width: u32) -> Result<Self> {
        let fields = (0..stack.n_vars())
            .into_par_iter()
            .map(|v| calendar_mean(&stack.variable_cube(v), stack.n_cells(), &stack.time, window_half_width))
            .collect::<Result<_>>()?;
        Ok(Self { fields })
    }
}

/// Mean anomaly from the climatology over the `LOOKBACK_DAYS` days before
/// each onset, per variable, period and lead day, over the masked cells.
pub fn composite_anomaly(
    stack: &GridStack,
    climatology: &Climatology,
    onsets: &[NaiveDate],
    region: &RegionMask,
    bins: &PeriodBins,
) -> Result<CompositeAnomaly> {
    region.check_shape(stack.height(), stack.width())?;
    if region.count() == 0 {
        return Err(Error::EmptyMask(region.name.clone()));
    }
    if climatology.fields.len() != stack.n_vars() {
        return Err(Error::ShapeMismatch("climatology and stack disagree on variables".into()));
    }
    let n_lead = LOOKBACK_DAYS;
    let nv = stack.n_vars();
    let cells: Vec<usize> = region.cells().collect();

    // Sorting makes the result independent of the caller's event order.
    let mut sorted = onsets.to_vec();
    sorted.sort();
    let mut dropped = 0;
    let mut by_period: Vec<Vec<usize>> = vec![Vec::new(); bins.len()];
    for d in sorted {
        match stack.time.index_of(d) {
            Some(t) if t >= n_lead => {
                let p = bins.assign(d).ok_or(Error::OutsideBins(d))?;
                by_period[p].push(t);
            }
            _ => dropped += 1,
        }
    }

    let per_period: Vec<Option<Vec<f64>>> = by_period
        .par_iter()
        .map(|ts| {
            if ts.is_empty() {
                return None;
            }
            let mut acc = vec![0.0; nv * n_lead];
            for &t in ts {
                for l in 0..n_lead {
                    let s = t - n_lead + l;
                    let doy = stack.time.day_of_year(s);
                    for v in 0..nv {
                        let field = stack.field(s, v);
                        let clim = &climatology.fields[v];
                        let sum: f64 = cells.iter().map(|&c| field[c] - clim.get(doy, c)).sum();
                        acc[v * n_lead + l] += sum / cells.len() as f64;
                    }
                }
            }
            acc.iter_mut().for_each(|a| *a /= ts.len() as f64);
            Some(acc)
        })
        .collect();

    let names: Vec<String> = stack.variables.iter().map(|v| v.name.clone()).collect();
    let mut table = PeriodTable::empty(&region.name, &names, bins, n_lead);
    for (p, vals) in per_period.iter().enumerate() {
        table.counts[p] = by_period[p].len();
        if let Some(vals) = vals {
            for v in 0..nv {
                for l in 0..n_lead {
                    let slot = table.slot(v, p, l);
                    table.values[slot] = Some(vals[v * n_lead + l]);
                }
            }
        }
    }
    Ok(CompositeAnomaly { table, dropped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrendSign {
    Up,
    Down,
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub slope: f64,
    pub sign: TrendSign,
}

/// Relative flat-trend tolerance: slopes within this many series standard
/// deviations per period count as flat.
pub const FLAT_TOLERANCE: f64 = 0.1;

/// OLS slope against period index, skipping absent periods.
pub fn trend(series: &[Option<f64>]) -> Result<Trend> {
    let (x, y): (Vec<f64>, Vec<f64>) =
        series.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i as f64, v))).unzip();
    if y.len() < 2 {
        return Err(Error::TooShort { need: 2, got: y.len() });
    }
    let slope = ols_slope_xy(&x, &y);
    let tau = FLAT_TOLERANCE * std_pop(&y);
    let sign = if slope.abs() <= tau {
        TrendSign::Flat
    } else if slope > 0.0 {
        TrendSign::Up
    } else {
        TrendSign::Down
    };
    Ok(Trend { slope, sign })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variable: String,
    pub region: String,
    pub periods: Vec<String>,
    pub relevance: Vec<Option<f64>>,
    pub anomaly: Vec<Option<f64>>,
    pub relevance_trend: Trend,
    pub anomaly_trend: Trend,
    pub divergence: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn divergences(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| r.divergence.is_some())
    }

    pub fn extend(&mut self, other: Report) {
        self.rows.extend(other.rows);
    }
}

fn divergence(relevance: TrendSign, anomaly: TrendSign) -> Option<String> {
    use TrendSign::*;
    match (relevance, anomaly) {
        (Flat, Up | Down) => Some("anomaly-only trend".into()),
        (Up | Down, Flat) => Some("relevance-only trend".into()),
        (Up, Down) | (Down, Up) => Some("sign mismatch".into()),
        _ => None,
    }
}

/// Lead-averaged relevance and anomaly series side by side for every shared
/// variable, with their trends and any disagreement between them.
pub fn relevance_vs_anomaly_report(summary: &RelevanceSummary, anomalies: &CompositeAnomaly) -> Result<Report> {
    let (r, a) = (&summary.table, &anomalies.table);
    if r.region != a.region {
        return Err(Error::KeyMismatch(format!("regions {:?} and {:?}", r.region, a.region)));
    }
    let periods: Vec<(usize, usize)> = r
        .periods
        .iter()
        .enumerate()
        .filter_map(|(i, p)| a.periods.iter().position(|q| q == p).map(|j| (i, j)))
        .collect();
    let vars: Vec<(usize, usize)> = r
        .variables
        .iter()
        .enumerate()
        .filter_map(|(i, v)| a.variables.iter().position(|w| w == v).map(|j| (i, j)))
        .collect();
    if periods.is_empty() || vars.is_empty() {
        return Err(Error::KeyMismatch("relevance and anomaly tables share no (variable, period) keys".into()));
    }
    let mut rows = Vec::with_capacity(vars.len());
    for (vi, vj) in vars {
        let rs = r.period_series(vi);
        let as_ = a.period_series(vj);
        let relevance: Vec<Option<f64>> = periods.iter().map(|&(i, _)| rs[i]).collect();
        let anomaly: Vec<Option<f64>> = periods.iter().map(|&(_, j)| as_[j]).collect();
        let relevance_trend = trend(&relevance)?;
        let anomaly_trend = trend(&anomaly)?;
        rows.push(ReportRow {
            variable: r.variables[vi].clone(),
            region: r.region.clone(),
            periods: periods.iter().map(|&(i, _)| r.periods[i].clone()).collect(),
            relevance,
            anomaly,
            divergence: divergence(relevance_trend.sign, anomaly_trend.sign),
            relevance_trend,
            anomaly_trend,
        });
    }
    Ok(Report { rows })
}

/// Long-format CSV: `variable,region,period,lead_day,variant,value`. Absent
/// periods leave `value` empty.
pub fn write_long_csv(tables: &[(&str, &PeriodTable)], path: &Path) -> Result<()> {
    let mut out = String::from("variable,region,period,lead_day,variant,value\n");
    for (variant, t) in tables {
        for (v, name) in t.variables.iter().enumerate() {
            for (p, period) in t.periods.iter().enumerate() {
                for (l, lead) in t.lead_days.iter().enumerate() {
                    let val = t.get(v, p, l).map(|x| format!("{x:.10e}")).unwrap_or_default();
                    out.push_str(&format!("{name},{},{period},{lead},{variant},{val}\n", t.region));
                }
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_report_json(report: &Report, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(report)?).map_err(|e| Error::io(path, e))
}

/// Plain-text divergence table.
pub fn format_report(report: &Report) -> String {
    let mut out = format!("{:<14} {:<12} {:>12} {:>10} {:>12} {:>10}  {}\n", "variable", "region", "rel slope", "rel", "anom slope", "anom", "flag");
    for r in &report.rows {
        let sign = |t: &Trend| format!("{:?}", t.sign).to_lowercase();
        out.push_str(&format!(
            "{:<14} {:<12} {:>12.4e} {:>10} {:>12.4e} {:>10}  {}\n",
            r.variable,
            r.region,
            r.relevance_trend.slope,
            sign(&r.relevance_trend),
            r.anomaly_trend.slope,
            sign(&r.anomaly_trend),
            r.divergence.as_deref().unwrap_or("-")
        ));
    }
    out
}

/// Spatial mean relevance per variable over all maps and lead days:
/// `variable -> [H * W]`.
pub fn mean_maps(maps: &[RelevanceMap], variables: &[String]) -> Result<BTreeMap<String, Vec<f64>>> {
    let first = maps.first().ok_or_else(|| Error::Empty("relevance maps".into()))?;
    let [l, nv, h, w] = first.values.shape() else {
        return Err(Error::ShapeMismatch(format!("relevance map {:?} is not [lead, V, H, W]", first.values.shape())));
    };
    let (l, nv, plane) = (*l, *nv, h * w);
    if nv != variables.len() {
        return Err(Error::ShapeMismatch(format!("{nv} map variables, {} names", variables.len())));
    }
    let mut acc = vec![vec![0.0; plane]; nv];
    for m in maps {
        if m.values.shape() != first.values.shape() {
            return Err(Error::ShapeMismatch("relevance maps disagree in shape".into()));
        }
        for (i, &x) in m.values.data().iter().enumerate() {
            acc[(i / plane) % nv][i % plane] += x;
        }
    }
    let n = (maps.len() * l) as f64;
    Ok(variables.iter().cloned().zip(acc.into_iter().map(|v| v.into_iter().map(|x| x / n).collect())).collect())
}

/// Mean relevance of one variable inside and outside a region, over all
/// maps, lead days and cells.
pub fn region_contrast(maps: &[RelevanceMap], variable: usize, region: &RegionMask) -> Result<(f64, f64)> {
    let plane = region.height * region.width;
    let (mut inside, mut outside) = ((0.0, 0usize), (0.0, 0usize));
    for m in maps {
        let [l, nv, h, w] = m.values.shape() else {
            return Err(Error::ShapeMismatch(format!("relevance map {:?} is not [lead, V, H, W]", m.values.shape())));
        };
        if (*h, *w) != (region.height, region.width) || variable >= *nv {
            return Err(Error::ShapeMismatch("relevance map does not fit the region".into()));
        }
        for lead in 0..*l {
            let base = (lead * nv + variable) * plane;
            for c in 0..plane {
                let v = m.values.data()[base + c];
                let acc = if region.contains(c) { &mut inside } else { &mut outside };
                acc.0 += v;
                acc.1 += 1;
            }
        }
    }
    if inside.1 == 0 || outside.1 == 0 {
        return Err(Error::Empty("cells inside or outside the region".into()));
    }
    Ok((inside.0 / inside.1 as f64, outside.0 / outside.1 as f64))
}

/// Binary PGM raster scaled linearly from the field's min (black) to max
/// (white); row 0 is written first.
pub fn write_pgm(values: &[f64], height: usize, width: usize, path: &Path) -> Result<()> {
    if values.len() != height * width {
        return Err(Error::ShapeMismatch(format!("{} values for a {height}x{width} raster", values.len())));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| (255.0 * (v - lo) / span).round() as u8));
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
