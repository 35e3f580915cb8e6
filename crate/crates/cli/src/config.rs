//! The single JSON run-configuration shared by dataset and training
//! subcommands. Unknown keys are rejected at every level so stale configs
//! fail loudly instead of silently running defaults.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use landcover_core::dataset::CurationConfig;
use landcover_core::nn::model::ModelConfig;
use landcover_core::nn::optim::TrainConfig;
use landcover_core::synth::SynthConfig;

/// A bad invocation (as opposed to a domain failure): exits with code 2 and
/// the subcommand synopsis.
#[derive(Debug)]
pub struct UsageError {
    pub msg: String,
    pub synopsis: &'static str,
}

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.msg)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>, synopsis: &'static str) -> anyhow::Error {
    anyhow::Error::new(UsageError { msg: msg.into(), synopsis })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub seed: u64,
    pub n_val: usize,
    pub n_test: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { seed: 0, n_val: 500, n_test: 500 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub preset: String,
    pub in_channels: Option<usize>,
    pub n_classes: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { preset: "compact".to_string(), in_channels: None, n_classes: None }
    }
}

impl ModelSection {
    pub fn build(&self) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::preset(&self.preset)
            .with_context(|| format!("model preset {:?}", self.preset))?;
        if let Some(c) = self.in_channels {
            cfg.in_channels = c;
        }
        if let Some(k) = self.n_classes {
            cfg.n_classes = k;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    /// R4B rasters consumed by `curate`, in declared (deterministic) order.
    pub rasters: Vec<PathBuf>,
    /// GeoJSON label polygons consumed by `curate`.
    pub polygons: Option<PathBuf>,
    /// Directory holding manifest.jsonl + tiles.bin.
    pub dataset_dir: PathBuf,
    /// Directory receiving metrics.csv, best.cnn1, final.cnn1.
    pub model_dir: PathBuf,
}

impl Default for IoSection {
    fn default() -> Self {
        IoSection {
            rasters: Vec::new(),
            polygons: None,
            dataset_dir: PathBuf::from("dataset"),
            model_dir: PathBuf::from("model"),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub curation: CurationConfig,
    pub split: SplitSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub io: IoSection,
}

impl RunConfig {
    pub fn load(path: &Path, synopsis: &'static str) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display()), synopsis))?;
        serde_json::from_str(&text)
            .map_err(|e| usage(format!("invalid config {}: {e}", path.display()), synopsis))
    }
}

/// Input paths are checked up front so a long run cannot fail halfway on a
/// typo.
pub fn require_file(path: &Path, what: &str, synopsis: &'static str) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("{what} {} is not a readable file", path.display()), synopsis));
    }
    Ok(())
}

pub fn require_dir(path: &Path, what: &str, synopsis: &'static str) -> Result<()> {
    if !path.is_dir() {
        return Err(usage(format!("{what} {} is not a directory", path.display()), synopsis));
    }
    Ok(())
}

/// Thread count for parallel tile classification: LANDCOVER_THREADS when
/// set, otherwise the machine's available parallelism.
pub fn thread_count() -> Result<usize> {
    match std::env::var("LANDCOVER_THREADS") {
        Ok(v) => {
            let n: usize = v.trim().parse().map_err(|_| {
                anyhow::anyhow!("LANDCOVER_THREADS must be a positive integer, got {v:?}")
            })?;
            if n == 0 {
                anyhow::bail!("LANDCOVER_THREADS must be >= 1");
            }
            Ok(n)
        }
        Err(_) => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}
