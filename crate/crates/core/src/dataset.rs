//! Classification samples: 7-day lookback windows before each event date,
//! a chronological train/val/test split and the five historical period bins.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::griddata::{read_xg1, write_xg1, GridStack};
use crate::heatwave::EventSet;
use crate::tensor::Tensor;

pub const LOOKBACK_DAYS: usize = 7;

/// One classification instance. `input` is `[lookback, V, H, W]` and holds
/// the days strictly before `event_date`, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub input: Tensor,
    pub label: u8,
    pub event_date: NaiveDate,
}

impl Sample {
    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

/// Builds one sample per onset (label 1) and per negative (label 0), in
/// chronological order. Events without `lookback` days of history in the
/// record are dropped; the number dropped is returned alongside.
pub fn build_samples(stack: &GridStack, events: &EventSet, lookback: usize) -> Result<(Vec<Sample>, usize)> {
    if events.is_empty() {
        return Err(Error::Empty("event set".into()));
    }
    let mut tagged: Vec<(NaiveDate, u8)> = events
        .onsets
        .iter()
        .map(|&d| (d, 1))
        .chain(events.negatives.iter().map(|&d| (d, 0)))
        .collect();
    tagged.sort();

    let day_len = stack.n_vars() * stack.n_cells();
    let shape = vec![lookback, stack.n_vars(), stack.height(), stack.width()];
    let mut samples = Vec::with_capacity(tagged.len());
    let mut dropped = 0;
    for (date, label) in tagged {
        let t = match stack.time.index_of(date) {
            Some(t) if t >= lookback => t,
            _ => {
                dropped += 1;
                continue;
            }
        };
        let mut data = Vec::with_capacity(lookback * day_len);
        for s in t - lookback..t {
            data.extend_from_slice(stack.day(s));
        }
        samples.push(Sample { input: Tensor::new(shape.clone(), data), label, event_date: date });
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} events with fewer than {lookback} days of history");
    }
    Ok((samples, dropped))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub fractions: (f64, f64, f64),
}

impl DatasetSplit {
    /// Date of the last training sample.
    pub fn train_end(&self) -> Option<NaiveDate> {
        self.train.last().map(|s| s.event_date)
    }

    pub fn iter_named(&self) -> impl Iterator<Item = (SplitName, &Sample)> {
        self.train
            .iter()
            .map(|s| (SplitName::Train, s))
            .chain(self.val.iter().map(|s| (SplitName::Val, s)))
            .chain(self.test.iter().map(|s| (SplitName::Test, s)))
    }
}

/// Sorts by date and cuts at cumulative fractions: train gets
/// `floor(n * f_train)`, val `floor(n * f_val)`, test the remainder.
pub fn split_chronological(mut samples: Vec<Sample>, fractions: (f64, f64, f64)) -> Result<DatasetSplit> {
    if samples.len() < 3 {
        return Err(Error::TooShort { need: 3, got: samples.len() });
    }
    let (ft, fv, fe) = fractions;
    if ft < 0.0 || fv < 0.0 || fe < 0.0 || ((ft + fv + fe) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split fractions {fractions:?} must sum to 1")));
    }
    samples.sort_by_key(|s| s.event_date);
    let n = samples.len() as f64;
    // the epsilon absorbs representation error, e.g. 10 * 0.6
    let n_train = (n * ft + 1e-9).floor() as usize;
    let n_val = (n * fv + 1e-9).floor() as usize;
    let test = samples.split_off(n_train + n_val);
    let val = samples.split_off(n_train);
    Ok(DatasetSplit { train: samples, val, test, fractions })
}

/// A half-open date interval `[start, end)` with a display label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Period {
    pub label: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodBins {
    pub periods: Vec<Period>,
}

impl PeriodBins {
    /// Consecutive bins from a list of start years and a final end year
    /// (exclusive of 1 January of `end_year + 1`). Labels read `start-next`.
    pub fn from_years(starts: &[i32], last_year: i32) -> Result<Self> {
        if starts.is_empty() || starts.windows(2).any(|w| w[0] >= w[1]) || *starts.last().unwrap() > last_year {
            return Err(Error::InvalidArgument(format!("bad period starts {starts:?}")));
        }
        let jan1 = |y: i32| NaiveDate::from_ymd_opt(y, 1, 1).unwrap();
        let periods = starts
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let next = starts.get(i + 1).copied();
                let label_end = next.unwrap_or(last_year);
                Period {
                    label: format!("{y}-{label_end}"),
                    start: jan1(y),
                    end: jan1(next.unwrap_or(last_year + 1)),
                }
            })
            .collect();
        Ok(Self { periods })
    }

    /// 1959-1972, 1972-1984, 1984-1997, 1997-2010, 2010-2022. Boundary
    /// years belong to the later bin.
    pub fn historical() -> Self {
        Self::from_years(&[1959, 1972, 1984, 1997, 2010], 2022).unwrap()
    }

    pub fn len(&self) -> usize {
        self.periods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.periods.is_empty()
    }

    pub fn assign(&self, date: NaiveDate) -> Option<usize> {
        self.periods.iter().position(|p| date >= p.start && date < p.end)
    }

    pub fn label(&self, index: usize) -> &str {
        &self.periods[index].label
    }

    pub fn labels(&self) -> Vec<String> {
        self.periods.iter().map(|p| p.label.clone()).collect()
    }
}

impl Default for PeriodBins {
    fn default() -> Self {
        Self::historical()
    }
}

/// Groups samples by period; index `i` of the result holds bin `i`.
pub fn bin_by_period<'a>(samples: &'a [Sample], bins: &PeriodBins) -> Result<Vec<Vec<&'a Sample>>> {
    let mut out = vec![Vec::new(); bins.len()];
    for s in samples {
        let b = bins.assign(s.event_date).ok_or(Error::OutsideBins(s.event_date))?;
        out[b].push(s);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub path: PathBuf,
    pub label: u8,
    pub date: NaiveDate,
    pub split: SplitName,
    pub period: Option<String>,
}

/// JSON index of a dataset saved as one XG1 tensor per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    /// `[lookback, V, H, W]`.
    pub shape: [usize; 4],
    pub variables: Vec<String>,
    pub samples: Vec<IndexEntry>,
}

/// Writes each sample as `[lookback * V, H, W]` XG1 plus `index.json`.
pub fn save_dataset(split: &DatasetSplit, variables: &[String], bins: &PeriodBins, dir: &Path) -> Result<PathBuf> {
    let samples_dir = dir.join("samples");
    std::fs::create_dir_all(&samples_dir).map_err(|e| Error::io(&samples_dir, e))?;
    let mut entries = Vec::new();
    let mut shape = None;
    for (split_name, s) in split.iter_named() {
        let sh = s.input.shape();
        let sh4 = [sh[0], sh[1], sh[2], sh[3]];
        shape.get_or_insert(sh4);
        let rel = PathBuf::from("samples").join(format!("{}_{}.xg1", s.event_date, s.label));
        write_xg1(&dir.join(&rel), [sh[0] * sh[1], sh[2], sh[3]], s.input.data())?;
        entries.push(IndexEntry {
            path: rel,
            label: s.label,
            date: s.event_date,
            split: split_name,
            period: bins.assign(s.event_date).map(|b| bins.label(b).to_string()),
        });
    }
    let index = DatasetIndex {
        shape: shape.ok_or_else(|| Error::Empty("dataset".into()))?,
        variables: variables.to_vec(),
        samples: entries,
    };
    let path = dir.join("index.json");
    std::fs::write(&path, serde_json::to_string_pretty(&index)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn load_dataset(index_path: &Path) -> Result<(DatasetIndex, DatasetSplit)> {
    let text = std::fs::read_to_string(index_path).map_err(|e| Error::io(index_path, e))?;
    let index: DatasetIndex = serde_json::from_str(&text)?;
    let base = index_path.parent().unwrap_or_else(|| Path::new("."));
    let mut split = DatasetSplit { train: vec![], val: vec![], test: vec![], fractions: (0.6, 0.2, 0.2) };
    for e in &index.samples {
        let (dims, values) = read_xg1(&base.join(&e.path))?;
        let [d, v, h, w] = index.shape;
        if dims != [d * v, h, w] {
            return Err(Error::ShapeMismatch(format!("{}: {dims:?}", e.path.display())));
        }
        let s = Sample { input: Tensor::new(index.shape.to_vec(), values), label: e.label, event_date: e.date };
        match e.split {
            SplitName::Train => split.train.push(s),
            SplitName::Val => split.val.push(s),
            SplitName::Test => split.test.push(s),
        }
    }
    let n = index.samples.len().max(1) as f64;
    split.fractions = (split.train.len() as f64 / n, split.val.len() as f64 / n, split.test.len() as f64 / n);
    Ok((index, split))
}
