//! `run.json`: one entry per stage, rewritten in place so that re-running a
//! stage with the same inputs leaves the file unchanged.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use heatxai::pipeline::StageSeeds;

use crate::config::Config;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_sha256: String,
    pub seed: u64,
    pub seeds: StageSeeds,
    /// Input file -> SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub tool: String,
    pub cli_version: String,
    pub core_version: String,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the resolved config, flag overrides included.
pub fn config_hash(cfg: &Config) -> anyhow::Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(cfg)?))
}

/// Paths are recorded relative to `out` where possible.
fn display(out: &Path, p: &Path) -> String {
    p.strip_prefix(out).unwrap_or(p).display().to_string()
}

pub fn record_stage(
    out: &Path,
    stage: &str,
    cfg: &Config,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
) -> anyhow::Result<()> {
    let path = out.join("run.json");
    let mut run = match std::fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
        Err(_) => RunRecord {
            tool: "heatxai".into(),
            cli_version: env!("CARGO_PKG_VERSION").into(),
            core_version: heatxai::VERSION.into(),
            stages: BTreeMap::new(),
        },
    };
    let mut hashed = BTreeMap::new();
    for p in inputs {
        let bytes = std::fs::read(p).with_context(|| format!("hashing {}", p.display()))?;
        hashed.insert(display(out, p), sha256_hex(&bytes));
    }
    run.stages.insert(
        stage.to_string(),
        StageRecord {
            config_sha256: config_hash(cfg)?,
            seed: cfg.seed,
            seeds: StageSeeds::from_master(cfg.seed),
            inputs: hashed,
            outputs: outputs.iter().map(|p| display(out, p)).collect(),
        },
    );
    std::fs::write(&path, serde_json::to_string_pretty(&run)? + "\n").with_context(|| format!("writing {}", path.display()))
}
