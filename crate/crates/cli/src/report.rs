//! Report structures and output-file helpers. Every command writes a
//! run-metadata JSON recording manifest, config, and seed, so runs are
//! reproducible from their outputs alone.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use fcrank::model::PipelineConfig;
use serde::Serialize;

pub fn timestamp_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Write atomically: temp file in the same directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

#[derive(Serialize)]
pub struct RunMetadata {
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<PipelineConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub seed: u64,
    pub jobs: usize,
    pub tool_version: String,
    pub timestamp_unix: u64,
}

impl RunMetadata {
    pub fn new(command: &str, seed: u64, jobs: usize) -> Self {
        RunMetadata {
            command: command.to_string(),
            manifest: None,
            config: None,
            config_hash: None,
            seed,
            jobs,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp_unix: timestamp_unix(),
        }
    }

    pub fn with_manifest(mut self, manifest: &Path) -> Self {
        self.manifest = Some(manifest.to_path_buf());
        self
    }

    pub fn with_config(mut self, config: &PipelineConfig) -> Self {
        self.config_hash = Some(fcrank::pipeline::config_hash(config));
        self.config = Some(config.clone());
        self
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        write_json(&out_dir.join("run_metadata.json"), self)
    }
}

/// The reliability report emitted by `fcrank reliability`.
#[derive(Serialize)]
pub struct ReliabilityReport {
    pub config: PipelineConfig,
    pub config_hash: String,
    pub n_scans: usize,
    pub scan_ids: Vec<String>,
    pub rank_sum: u64,
    pub per_scan_rank: Vec<u32>,
    pub p_value: f64,
    pub b: usize,
    pub seed: u64,
    pub tie_rule: String,
    pub metric: fcrank::model::DistanceMetric,
    pub warnings: Vec<String>,
    pub timestamp_unix: u64,
}

/// The pairing report emitted by `fcrank sort`. `pairs` is the best pairing
/// found: the certified optimum when the exact matcher ran, otherwise the
/// genetic-search result.
#[derive(Serialize)]
pub struct SortReport {
    pub config_hash: String,
    pub n_scans: usize,
    pub pairs: Vec<(String, String)>,
    pub fitness: u64,
    pub ga_fitness: u64,
    pub generations_used: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_fitness: Option<u64>,
    pub exact_optimum_certified: bool,
    /// None when the manifest carries no subject labels.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perfect: Option<bool>,
    pub seed: u64,
    pub timestamp_unix: u64,
}
