//! Heatwave detection, classifier training, gradient attribution and
//! relevance-trend analysis over gridded daily fields.
//!
//! The pipeline runs in stages, each living in its own module:
//!
//! * [`griddata`]: load, validate, detrend and standardize gridded data
//! * [`heatwave`]: per-cell TX90pct heatwave days and regional onset events
//! * [`dataset`]: 7-day lookback samples, chronological splits, period bins
//! * [`model`]: a small Conv+Attn classifier with hand-written reverse mode
//! * [`attribution`]: Integrated Gradients, GradSHAP and gradient×input
//! * [`interpeval`]: perturbation-based faithfulness of relevance maps
//! * [`analysis`]: per-region, per-period relevance and composite anomalies
//! * [`synth`]: a deterministic synthetic world with planted precursors
//!
//! [`pipeline`] strings the stages together in memory.

pub mod analysis;
pub mod attribution;
pub mod dataset;
pub mod error;
pub mod griddata;
pub mod heatwave;
pub mod interpeval;
pub mod model;
pub mod pipeline;
pub mod stats;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use analysis::{CompositeAnomaly, RelevanceSummary, TrendSign, Variant};
pub use attribution::{RelevanceMap, Target};
pub use dataset::{DatasetSplit, PeriodBins, Sample};
pub use griddata::{GridStack, RegionMask, TimeAxis, VariableSpec};
pub use heatwave::{EventSet, HeatwaveCalendar, ThresholdField};
pub use interpeval::FaithfulnessCurve;
pub use model::{Classifier, ConvAttnConfig, ConvAttnModel, Metrics, Trainable};
