//! The run configuration: one TOML or JSON file with a section per stage.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use heatxai::heatwave::{DetectConfig, Season};
use heatxai::interpeval::FaithfulnessConfig;
use heatxai::model::TrainConfig;
use heatxai::pipeline::{synth_regions, AttributionConfig, PipelineConfig};
use heatxai::synth::SynthConfig;
use heatxai::{GridStack, RegionMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub synth: SynthConfig,
    pub data: DataSection,
    /// Analysis regions. Empty means the synthetic world's regions.
    pub regions: Vec<RegionSpec>,
    pub detect: DetectConfig,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub attribution: AttributionConfig,
    pub faithfulness: FaithfulnessConfig,
}

impl Default for Config {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            seed: p.seed,
            synth: p.synth,
            data: DataSection::default(),
            regions: Vec::new(),
            detect: p.detect,
            dataset: DatasetSection { split: p.split, period_starts: p.period_starts, period_end_year: p.period_end_year },
            model: ModelSection { widths: p.widths, se_reduction: p.se_reduction },
            train: p.train,
            attribution: p.attribution,
            faithfulness: p.faithfulness,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Grid manifest; defaults to the world written under `--out`.
    pub grid: Option<PathBuf>,
    /// Fill missing values from the calendar-day climatology on load.
    pub fill_missing: bool,
    /// Maximum-temperature variable; defaults to the first one.
    pub tmax_variable: Option<String>,
    /// Name of the region whose heatwave-day counts define events.
    pub event_region: String,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { grid: None, fill_missing: false, tmax_variable: None, event_region: "region2".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub split: (f64, f64, f64),
    pub period_starts: Vec<i32>,
    pub period_end_year: i32,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Config::default().dataset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub widths: [usize; 3],
    pub se_reduction: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Config::default().model
    }
}

/// A region given either as half-open cell ranges or as an inclusive
/// lat/lon box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum RegionSpec {
    Cells { name: String, rows: [usize; 2], cols: [usize; 2] },
    Box { name: String, lat: [f64; 2], lon: [f64; 2] },
}

impl RegionSpec {
    pub fn name(&self) -> &str {
        match self {
            RegionSpec::Cells { name, .. } | RegionSpec::Box { name, .. } => name,
        }
    }

    fn to_mask(&self, grid: &GridStack) -> heatxai::Result<RegionMask> {
        match self {
            RegionSpec::Cells { name, rows, cols } => {
                if rows[1] > grid.height() || cols[1] > grid.width() {
                    return Err(heatxai::Error::InvalidArgument(format!("region {name:?} extends past the grid")));
                }
                RegionMask::rect(name.as_str(), grid.height(), grid.width(), rows[0]..rows[1], cols[0]..cols[1])
            }
            RegionSpec::Box { name, lat, lon } => {
                RegionMask::from_bbox(name.as_str(), &grid.lat, &grid.lon, (lat[0], lat[1]), (lon[0], lon[1]))
            }
        }
    }
}

impl Config {
    /// Reads a config, filling every key it leaves out from
    /// [`Config::default`], section by section. Unknown keys are errors at
    /// any depth.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let user: serde_json::Value = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
            _ => {
                let t: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
                serde_json::to_value(t)?
            }
        };
        Self::from_value(user)
    }

    pub fn from_value(user: serde_json::Value) -> anyhow::Result<Self> {
        let mut merged = serde_json::to_value(Config::default())?;
        merge(&mut merged, user, "")?;
        Ok(serde_json::from_value(merged)?)
    }
    /// Checks everything that can be checked without data.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.synth.validate().context("[synth]")?;
        Season::new(self.detect.season.months().to_vec()).context("[detect] season")?;
        let d = &self.detect;
        if !(0.0..=1.0).contains(&d.quantile) || !(0.0..=1.0).contains(&d.count_quantile) {
            bail!("[detect] quantiles must lie in [0, 1]");
        }
        if d.min_run == 0 || d.ratio == 0 {
            bail!("[detect] min_run and ratio must be positive");
        }
        let (a, b, c) = self.dataset.split;
        if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || (a + b + c - 1.0).abs() > 1e-9 || a == 0.0 {
            bail!("[dataset] split fractions must be non-negative, sum to 1 and leave a training part");
        }
        self.pipeline().bins().context("[dataset] periods")?;
        if self.model.widths.contains(&0) || self.model.se_reduction == 0 {
            bail!("[model] widths and se_reduction must be positive");
        }
        let t = &self.train;
        if !(t.lr > 0.0) || t.epochs == 0 || t.batch == 0 || !(0.0..=1.0).contains(&t.threshold) {
            bail!("[train] needs lr > 0, epochs > 0, batch > 0 and a threshold in [0, 1]");
        }
        if self.attribution.steps == 0 {
            bail!("[attribution] steps must be positive");
        }
        let f = &self.faithfulness.fractions;
        if f.is_empty() || f.iter().any(|x| !(0.0..=1.0).contains(x)) || f.windows(2).any(|w| w[1] <= w[0]) {
            bail!("[faithfulness] fractions must increase strictly inside [0, 1]");
        }
        let names = self.region_names();
        if (1..names.len()).any(|i| names[..i].contains(&names[i])) {
            bail!("[regions] names must be unique");
        }
        if !names.contains(&self.data.event_region) {
            bail!("[data] event_region {:?} is not one of {names:?}", self.data.event_region);
        }
        Ok(())
    }

    fn region_names(&self) -> Vec<String> {
        if self.regions.is_empty() {
            vec!["region1".into(), "region2".into(), "region1+2".into()]
        } else {
            self.regions.iter().map(|r| r.name().to_string()).collect()
        }
    }

    pub fn regions(&self, grid: &GridStack) -> heatxai::Result<Vec<RegionMask>> {
        if self.regions.is_empty() {
            let masks = synth_regions(&self.synth)?;
            for m in &masks {
                m.check_shape(grid.height(), grid.width())?;
            }
            return Ok(masks);
        }
        self.regions.iter().map(|r| r.to_mask(grid)).collect()
    }

    pub fn event_region(&self, grid: &GridStack) -> heatxai::Result<RegionMask> {
        self.regions(grid)?
            .into_iter()
            .find(|r| r.name == self.data.event_region)
            .ok_or_else(|| heatxai::Error::InvalidArgument(format!("no region {:?}", self.data.event_region)))
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            seed: self.seed,
            synth: self.synth.clone(),
            detect: self.detect.clone(),
            widths: self.model.widths,
            se_reduction: self.model.se_reduction,
            train: self.train.clone(),
            split: self.dataset.split,
            attribution: self.attribution.clone(),
            faithfulness: self.faithfulness.clone(),
            period_starts: self.dataset.period_starts.clone(),
            period_end_year: self.dataset.period_end_year,
        }
    }
}

/// Overlays `user` on `base`. Tables merge key by key; anything else
/// replaces the default wholesale.
fn merge(base: &mut serde_json::Value, user: serde_json::Value, at: &str) -> anyhow::Result<()> {
    use serde_json::Value;
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                let key = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &key)?,
                    None => bail!("unknown config key {key:?}"),
                }
            }
        }
        (slot, v) => *slot = v,
    }
    Ok(())
}
