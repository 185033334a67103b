//! Gridded daily data: time axes, variable stacks, region masks, and the
//! preprocessing steps (detrending, standardization) applied before
//! detection and training.

mod xg1;

use std::collections::HashSet;
use std::ops::Range;
use std::path::{Path, PathBuf};

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

pub use xg1::{read_xg1, write_xg1};

/// A contiguous daily time axis on the proleptic Gregorian calendar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeAxis {
    pub start: NaiveDate,
    pub len: usize,
}

impl TimeAxis {
    pub fn new(start: NaiveDate, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::Empty("time axis".into()));
        }
        Ok(Self { start, len })
    }

    /// Axis covering `first..=last`.
    pub fn spanning(first: NaiveDate, last: NaiveDate) -> Result<Self> {
        let len = (last - first).num_days() + 1;
        if len < 1 {
            return Err(Error::InvalidArgument(format!("{last} precedes {first}")));
        }
        Self::new(first, len as usize)
    }

    pub fn date(&self, index: usize) -> NaiveDate {
        self.start + Duration::days(index as i64)
    }

    /// Calendar ordinal, 1..=366. 29 Feb is day 60; later days follow the
    /// actual calendar, so 31 Dec is 366 in leap years.
    pub fn day_of_year(&self, index: usize) -> u32 {
        self.date(index).ordinal()
    }

    pub fn month(&self, index: usize) -> u32 {
        self.date(index).month()
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let d = (date - self.start).num_days();
        (d >= 0 && (d as usize) < self.len).then_some(d as usize)
    }

    pub fn last(&self) -> NaiveDate {
        self.date(self.len - 1)
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        (0..self.len).map(|i| self.date(i))
    }
}

/// Per-variable standardization statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub units: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<Standardization>,
}

impl VariableSpec {
    pub fn new(name: impl Into<String>, units: impl Into<String>) -> Self {
        Self { name: name.into(), units: units.into(), standardization: None }
    }
}

/// Daily fields laid out `[time, variable, lat, lon]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridStack {
    data: Vec<f64>,
    pub time: TimeAxis,
    pub variables: Vec<VariableSpec>,
    pub lat: Vec<f64>,
    pub lon: Vec<f64>,
}

impl GridStack {
    /// Builds a stack, checking extents, names and finiteness.
    pub fn new(
        data: Vec<f64>,
        time: TimeAxis,
        variables: Vec<VariableSpec>,
        lat: Vec<f64>,
        lon: Vec<f64>,
    ) -> Result<Self> {
        let expected = time.len * variables.len() * lat.len() * lon.len();
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "data holds {} values, axes imply {expected}",
                data.len()
            )));
        }
        check_unique(&variables)?;
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "grid stack".into(), index });
        }
        Ok(Self { data, time, variables, lat, lon })
    }

    pub fn n_time(&self) -> usize {
        self.time.len
    }

    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn height(&self) -> usize {
        self.lat.len()
    }

    pub fn width(&self) -> usize {
        self.lon.len()
    }

    pub fn n_cells(&self) -> usize {
        self.lat.len() * self.lon.len()
    }

    /// `[T, V, H, W]`.
    pub fn shape(&self) -> [usize; 4] {
        [self.n_time(), self.n_vars(), self.height(), self.width()]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn variable_index(&self, name: &str) -> Result<usize> {
        self.variables
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| Error::UnknownVariable(name.into()))
    }

    /// The `H*W` map of variable `v` on day `t`.
    pub fn field(&self, t: usize, v: usize) -> &[f64] {
        let n = self.n_cells();
        let start = (t * self.n_vars() + v) * n;
        &self.data[start..start + n]
    }

    pub fn field_mut(&mut self, t: usize, v: usize) -> &mut [f64] {
        let n = self.n_cells();
        let start = (t * self.n_vars() + v) * n;
        &mut self.data[start..start + n]
    }

    /// All `V*H*W` values of day `t`.
    pub fn day(&self, t: usize) -> &[f64] {
        let n = self.n_vars() * self.n_cells();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn value(&self, t: usize, v: usize, cell: usize) -> f64 {
        self.field(t, v)[cell]
    }

    /// Variable `v` as a `[T, H, W]` array.
    pub fn variable_cube(&self, v: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_time() * self.n_cells());
        for t in 0..self.n_time() {
            out.extend_from_slice(self.field(t, v));
        }
        out
    }

    /// Overwrites variable `v` from a `[T, H, W]` array.
    pub fn set_variable_cube(&mut self, v: usize, cube: &[f64]) -> Result<()> {
        let n = self.n_cells();
        if cube.len() != self.n_time() * n {
            return Err(Error::ShapeMismatch("variable cube length".into()));
        }
        for t in 0..self.n_time() {
            self.field_mut(t, v).copy_from_slice(&cube[t * n..(t + 1) * n]);
        }
        Ok(())
    }
}

fn check_unique(variables: &[VariableSpec]) -> Result<()> {
    let mut seen = HashSet::new();
    for v in variables {
        if !seen.insert(v.name.as_str()) {
            return Err(Error::DuplicateVariable(v.name.clone()));
        }
    }
    Ok(())
}

/// A named boolean mask over the `[lat, lon]` grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionMask {
    pub name: String,
    pub height: usize,
    pub width: usize,
    mask: Vec<bool>,
}

impl RegionMask {
    pub fn new(name: impl Into<String>, height: usize, width: usize, mask: Vec<bool>) -> Result<Self> {
        let name = name.into();
        if mask.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "mask {name:?} has {} cells, grid is {height}x{width}",
                mask.len()
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::EmptyMask(name));
        }
        Ok(Self { name, height, width, mask })
    }

    /// Rows `rows` and columns `cols` (half-open index ranges).
    pub fn rect(
        name: impl Into<String>,
        height: usize,
        width: usize,
        rows: Range<usize>,
        cols: Range<usize>,
    ) -> Result<Self> {
        let mut mask = vec![false; height * width];
        for y in rows.start..rows.end.min(height) {
            for x in cols.start..cols.end.min(width) {
                mask[y * width + x] = true;
            }
        }
        Self::new(name, height, width, mask)
    }

    /// Cells whose coordinates fall inside a lat/lon box (inclusive).
    pub fn from_bbox(
        name: impl Into<String>,
        lat: &[f64],
        lon: &[f64],
        lat_range: (f64, f64),
        lon_range: (f64, f64),
    ) -> Result<Self> {
        let (la0, la1) = (lat_range.0.min(lat_range.1), lat_range.0.max(lat_range.1));
        let (lo0, lo1) = (lon_range.0.min(lon_range.1), lon_range.0.max(lon_range.1));
        let mask = lat
            .iter()
            .flat_map(|&la| lon.iter().map(move |&lo| la >= la0 && la <= la1 && lo >= lo0 && lo <= lo1))
            .collect();
        Self::new(name, lat.len(), lon.len(), mask)
    }

    /// Union of two masks; cells are counted once.
    pub fn union(&self, other: &RegionMask, name: impl Into<String>) -> Result<Self> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::ShapeMismatch("union of masks with different shapes".into()));
        }
        let mask = self.mask.iter().zip(&other.mask).map(|(&a, &b)| a || b).collect();
        Self::new(name, self.height, self.width, mask)
    }

    pub fn complement(&self, name: impl Into<String>) -> Result<Self> {
        Self::new(name, self.height, self.width, self.mask.iter().map(|m| !m).collect())
    }

    pub fn contains(&self, cell: usize) -> bool {
        self.mask[cell]
    }

    pub fn cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i)
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn check_shape(&self, height: usize, width: usize) -> Result<()> {
        if (self.height, self.width) == (height, width) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "mask {:?} is {}x{}, grid is {height}x{width}",
                self.name, self.height, self.width
            )))
        }
    }
}

/// One variable entry of a manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestVariable {
    pub name: String,
    pub units: String,
    pub path: PathBuf,
}

/// JSON manifest describing a grid stack stored as one XG1 file per variable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub start_date: NaiveDate,
    /// Number of days. When absent, taken from the files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
    pub variables: Vec<ManifestVariable>,
    pub lat: Vec<f64>,
    pub lon: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Replace NaN with the calendar-day climatological mean of that cell
    /// instead of rejecting the file.
    pub fill_missing: bool,
}

pub fn load_grid(manifest_path: &Path) -> Result<GridStack> {
    load_grid_with(manifest_path, LoadOptions::default())
}

pub fn load_grid_with(manifest_path: &Path, opts: LoadOptions) -> Result<GridStack> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let specs: Vec<VariableSpec> =
        manifest.variables.iter().map(|v| VariableSpec::new(&v.name, &v.units)).collect();
    check_unique(&specs)?;
    if manifest.variables.is_empty() {
        return Err(Error::Empty("manifest lists no variables".into()));
    }

    let (h, w) = (manifest.lat.len(), manifest.lon.len());
    let mut cubes = Vec::with_capacity(manifest.variables.len());
    let mut n_time = manifest.length;
    for var in &manifest.variables {
        let path = base.join(&var.path);
        let (dims, values) = read_xg1(&path)?;
        let t = *n_time.get_or_insert(dims[0]);
        if dims != [t, h, w] {
            return Err(Error::ShapeMismatch(format!(
                "{}: file dims {dims:?}, manifest implies {:?}",
                path.display(),
                [t, h, w]
            )));
        }
        cubes.push(values);
    }
    let n_time = n_time.unwrap_or(0);
    let time = TimeAxis::new(manifest.start_date, n_time)?;

    for (cube, var) in cubes.iter_mut().zip(&manifest.variables) {
        if let Some(index) = cube.iter().position(|v| v.is_nan()) {
            if !opts.fill_missing {
                return Err(Error::NonFinite { what: format!("variable {:?}", var.name), index });
            }
            fill_with_climatology(cube, &time, h * w, &var.name)?;
        }
        if let Some(index) = cube.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: format!("variable {:?}", var.name), index });
        }
    }

    let nv = cubes.len();
    let n = h * w;
    let mut data = vec![0.0; n_time * nv * n];
    for (v, cube) in cubes.iter().enumerate() {
        for t in 0..n_time {
            let dst = (t * nv + v) * n;
            data[dst..dst + n].copy_from_slice(&cube[t * n..(t + 1) * n]);
        }
    }
    GridStack::new(data, time, specs, manifest.lat, manifest.lon)
}

fn fill_with_climatology(cube: &mut [f64], time: &TimeAxis, n_cells: usize, name: &str) -> Result<()> {
    let mut sum = vec![0.0; 367 * n_cells];
    let mut count = vec![0usize; 367 * n_cells];
    for t in 0..time.len {
        let d = time.day_of_year(t) as usize;
        for c in 0..n_cells {
            let v = cube[t * n_cells + c];
            if !v.is_nan() {
                sum[d * n_cells + c] += v;
                count[d * n_cells + c] += 1;
            }
        }
    }
    for t in 0..time.len {
        let d = time.day_of_year(t) as usize;
        for c in 0..n_cells {
            let slot = &mut cube[t * n_cells + c];
            if slot.is_nan() {
                let k = d * n_cells + c;
                if count[k] == 0 {
                    return Err(Error::NonFinite {
                        what: format!("variable {name:?} (no climatology to fill from)"),
                        index: t * n_cells + c,
                    });
                }
                *slot = sum[k] / count[k] as f64;
            }
        }
    }
    Ok(())
}

/// Writes `stack` as a manifest plus one XG1 file per variable into `dir`.
pub fn save_grid(stack: &GridStack, dir: &Path, manifest_name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut variables = Vec::new();
    for (v, spec) in stack.variables.iter().enumerate() {
        let file = PathBuf::from(format!("{}.xg1", spec.name));
        write_xg1(&dir.join(&file), [stack.n_time(), stack.height(), stack.width()], &stack.variable_cube(v))?;
        variables.push(ManifestVariable { name: spec.name.clone(), units: spec.units.clone(), path: file });
    }
    let manifest = Manifest {
        start_date: stack.time.start,
        length: Some(stack.n_time()),
        variables,
        lat: stack.lat.clone(),
        lon: stack.lon.clone(),
    };
    let path = dir.join(manifest_name);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Residuals of an OLS fit of `series` against its integer index.
pub fn detrend_linear(series: &[f64]) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::TooShort { need: 2, got: series.len() });
    }
    let (slope, intercept) = stats::ols_fit(series);
    Ok(series
        .iter()
        .enumerate()
        .map(|(t, &y)| y - (intercept + slope * t as f64))
        .collect())
}

/// Detrends every cell of a `[T, H*W]` cube independently.
pub fn detrend_cube(cube: &mut [f64], n_time: usize, n_cells: usize) -> Result<()> {
    if n_time < 2 {
        return Err(Error::TooShort { need: 2, got: n_time });
    }
    let mut series = vec![0.0; n_time];
    for c in 0..n_cells {
        for t in 0..n_time {
            series[t] = cube[t * n_cells + c];
        }
        let resid = detrend_linear(&series)?;
        for t in 0..n_time {
            cube[t * n_cells + c] = resid[t];
        }
    }
    Ok(())
}

/// Per-variable mean and population standard deviation over a time range.
pub fn fit_standardization(stack: &GridStack, fit_range: Range<usize>) -> Result<Vec<Standardization>> {
    if fit_range.is_empty() || fit_range.end > stack.n_time() {
        return Err(Error::InvalidArgument(format!(
            "fit range {fit_range:?} is empty or exceeds {} days",
            stack.n_time()
        )));
    }
    let mut out = Vec::with_capacity(stack.n_vars());
    for (v, spec) in stack.variables.iter().enumerate() {
        let n = (fit_range.len() * stack.n_cells()) as f64;
        let mean = fit_range.clone().flat_map(|t| stack.field(t, v)).sum::<f64>() / n;
        let var = fit_range
            .clone()
            .flat_map(|t| stack.field(t, v))
            .map(|x| (x - mean) * (x - mean))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        if !(std > 0.0) {
            return Err(Error::ZeroVariance(spec.name.clone()));
        }
        out.push(Standardization { mean, std });
    }
    Ok(out)
}

/// Applies stored statistics: `(x - mean) / std` per variable.
pub fn apply_standardization(stack: &GridStack, stats: &[Standardization]) -> Result<GridStack> {
    if stats.len() != stack.n_vars() {
        return Err(Error::ShapeMismatch("one standardization entry per variable".into()));
    }
    let mut out = stack.clone();
    for t in 0..out.n_time() {
        for (v, s) in stats.iter().enumerate() {
            for x in out.field_mut(t, v) {
                *x = (*x - s.mean) / s.std;
            }
        }
    }
    for (spec, s) in out.variables.iter_mut().zip(stats) {
        spec.standardization = Some(*s);
    }
    Ok(out)
}

/// Fits per-variable statistics on `fit_range` only and standardizes the
/// whole stack with them.
pub fn standardize(stack: &GridStack, fit_range: Range<usize>) -> Result<GridStack> {
    let stats = fit_standardization(stack, fit_range)?;
    apply_standardization(stack, &stats)
}

/// Inverse of [`standardize`] using the statistics stored on each variable.
pub fn unstandardize(stack: &GridStack) -> Result<GridStack> {
    let mut out = stack.clone();
    let stats: Vec<Standardization> = out
        .variables
        .iter()
        .map(|v| v.standardization.ok_or_else(|| Error::InvalidArgument(format!("{:?} is not standardized", v.name))))
        .collect::<Result<_>>()?;
    for t in 0..out.n_time() {
        for (v, s) in stats.iter().enumerate() {
            for x in out.field_mut(t, v) {
                *x = *x * s.std + s.mean;
            }
        }
    }
    for spec in &mut out.variables {
        spec.standardization = None;
    }
    Ok(out)
}
