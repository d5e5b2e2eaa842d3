//! End-to-end wiring: load a manifest into an in-memory dataset, build
//! parcellations and connectomes under a [`PipelineConfig`], and cache the
//! resulting graphs keyed by (scan id, config hash).

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graphs;
use crate::ingest;
use crate::model::{
    Connectome, ManifestEntry, Parcellation, ParcellationSource, PipelineConfig, ScanFormat,
    ScanRecord, ThresholdInfo, ThresholdSpec, TimeSeriesMatrix,
};

/// An in-memory dataset: scan records with their (voxel- or row-level)
/// series, in manifest order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub scans: Vec<ScanRecord>,
    pub series: Vec<TimeSeriesMatrix>,
    /// Spatial coordinates per series row; `None` for tabular inputs, where
    /// rows get 1-D coordinates on demand.
    pub voxel_coords: Option<Vec<[f64; 3]>>,
    /// Label map loaded from the config's parcellation path, if any.
    pub external_parcellation: Option<Parcellation>,
    /// Non-fatal observations made while loading (TR mismatches etc.).
    pub warnings: Vec<String>,
}

impl Dataset {
    pub fn n_scans(&self) -> usize {
        self.scans.len()
    }

    /// Unique subject ids in order of first appearance.
    pub fn subjects(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for s in &self.scans {
            if seen.insert(s.subject_id.clone()) {
                out.push(s.subject_id.clone());
            }
        }
        out
    }

    /// Restrict to the scans of the given subjects, preserving scan order.
    pub fn subset_by_subjects(&self, subjects: &HashSet<String>) -> Dataset {
        let keep: Vec<usize> = self
            .scans
            .iter()
            .enumerate()
            .filter(|(_, s)| subjects.contains(&s.subject_id))
            .map(|(i, _)| i)
            .collect();
        Dataset {
            scans: keep.iter().map(|&i| self.scans[i].clone()).collect(),
            series: keep.iter().map(|&i| self.series[i].clone()).collect(),
            voxel_coords: self.voxel_coords.clone(),
            external_parcellation: self.external_parcellation.clone(),
            warnings: Vec::new(),
        }
    }

    pub fn shortest_duration_seconds(&self) -> f64 {
        self.scans
            .iter()
            .map(ScanRecord::duration_seconds)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn scan_ids(&self) -> Vec<String> {
        self.scans.iter().map(|s| s.scan_id.clone()).collect()
    }

    /// Load every scan referenced by a manifest. Relative paths resolve
    /// against the manifest's directory. NIfTI scans are masked by the
    /// config's label map (or read whole when the parcellation is uniform);
    /// CSV scans keep the label map's nonzero rows.
    pub fn load(manifest_path: &Path, config: &PipelineConfig) -> Result<Dataset> {
        config.validate()?;
        let entries = crate::model::read_manifest(manifest_path)?;
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_entries(&entries, base, config)
    }

    pub fn from_entries(
        entries: &[ManifestEntry],
        base: &Path,
        config: &PipelineConfig,
    ) -> Result<Dataset> {
        let mut warnings = Vec::new();
        let external_parcellation = match &config.parcellation_source {
            ParcellationSource::Path(p) => {
                let resolved = resolve(base, p);
                Some(ingest::read_label_map(&resolved)?)
            }
            ParcellationSource::Uniform => None,
        };

        let mut scans = Vec::with_capacity(entries.len());
        let mut series = Vec::with_capacity(entries.len());
        let mut voxel_coords: Option<Vec<[f64; 3]>> = None;
        let mut nifti_mask: Option<Parcellation> = None;

        for entry in entries {
            let path = resolve(base, Path::new(&entry.path));
            let scan_id = entry.scan_id.clone();
            let wrap = |e: Error| Error::Scan {
                scan_id: scan_id.clone(),
                source: Box::new(e),
            };
            let ts = match entry.format {
                ScanFormat::Csv => {
                    let ts =
                        ingest::read_csv_timeseries(&path, entry.tr_seconds).map_err(wrap)?;
                    match &external_parcellation {
                        Some(parc) => select_labeled_rows(&ts, parc).map_err(wrap)?,
                        None => ts,
                    }
                }
                ScanFormat::Nifti1 => {
                    let header = ingest::nifti::read_nifti_header(&path).map_err(wrap)?;
                    let tr_header = header.header_tr();
                    if tr_header > 0.0
                        && (tr_header - entry.tr_seconds).abs() > 1e-3 * entry.tr_seconds
                    {
                        warnings.push(format!(
                            "scan {}: header TR {:.4} s differs from manifest TR {:.4} s; using the manifest",
                            entry.scan_id, tr_header, entry.tr_seconds
                        ));
                    }
                    if nifti_mask.is_none() {
                        nifti_mask = Some(match &external_parcellation {
                            Some(parc) => parc.clone(),
                            None => whole_grid_mask(header.grid_dims())?,
                        });
                    }
                    let mask = nifti_mask.as_ref().unwrap();
                    if voxel_coords.is_none() {
                        voxel_coords = Some(masked_coordinates(mask));
                    }
                    ingest::nifti::read_nifti_timeseries(&path, &header, mask, entry.tr_seconds)
                        .map_err(wrap)?
                }
            };
            if let Some(prev) = series.first() {
                let prev: &TimeSeriesMatrix = prev;
                if prev.n_signals() != ts.n_signals() {
                    return Err(Error::Shape(format!(
                        "scan {} has {} rows, earlier scans have {}",
                        entry.scan_id,
                        ts.n_signals(),
                        prev.n_signals()
                    )));
                }
            }
            scans.push(ScanRecord {
                scan_id: entry.scan_id.clone(),
                subject_id: entry.subject_id.clone(),
                session_index: entry.session,
                tr_seconds: entry.tr_seconds,
                path,
                format: entry.format,
                n_timepoints: ts.n_timepoints(),
            });
            series.push(ts);
        }
        Ok(Dataset {
            scans,
            series,
            voxel_coords,
            external_parcellation,
            warnings,
        })
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn whole_grid_mask(dims: [usize; 3]) -> Result<Parcellation> {
    let n = dims[0] * dims[1] * dims[2];
    Parcellation::new(vec![1; n], Some(dims), crate::model::SchemeTag::Uniform, vec![])
}

/// 3-D coordinates of the mask's nonzero voxels, in ascending linear order
/// (the ingest row order).
fn masked_coordinates(mask: &Parcellation) -> Vec<[f64; 3]> {
    match mask.dims() {
        Some([nx, ny, nz]) => {
            let mut out = Vec::new();
            let mut idx = 0usize;
            for z in 0..nz {
                for y in 0..ny {
                    for x in 0..nx {
                        if mask.labels()[idx] != 0 {
                            out.push([x as f64, y as f64, z as f64]);
                        }
                        idx += 1;
                    }
                }
            }
            out
        }
        None => ingest::row_index_coordinates(mask.n_labeled()),
    }
}

/// Keep the rows of a tabular series that carry a nonzero parcellation
/// label, in label-map order.
fn select_labeled_rows(ts: &TimeSeriesMatrix, parc: &Parcellation) -> Result<TimeSeriesMatrix> {
    if parc.labels().len() != ts.n_signals() {
        return Err(Error::Shape(format!(
            "label map covers {} rows, series has {}",
            parc.labels().len(),
            ts.n_signals()
        )));
    }
    let keep: Vec<usize> = parc
        .labels()
        .iter()
        .enumerate()
        .filter(|&(_, &l)| l != 0)
        .map(|(i, _)| i)
        .collect();
    if keep.len() == ts.n_signals() {
        return Ok(ts.clone());
    }
    if keep.is_empty() {
        return Err(Error::Argument("label map selects no rows".to_string()));
    }
    let v = ts.values();
    let out = DMatrix::from_fn(keep.len(), ts.n_timepoints(), |r, c| v[(keep[r], c)]);
    let ids = keep.iter().map(|&i| ts.row_ids()[i].clone()).collect();
    TimeSeriesMatrix::new(out, ids, ts.tr_seconds())
}

/// Parcellation to use for an analysis at `n_rois` cells. External label
/// maps are fixed; the uniform scheme is rebuilt per requested cell count.
pub fn parcellation_for(
    ds: &Dataset,
    config: &PipelineConfig,
    n_rois: usize,
) -> Result<Parcellation> {
    match &config.parcellation_source {
        ParcellationSource::Path(_) => ds
            .external_parcellation
            .clone()
            .ok_or_else(|| Error::Manifest("dataset was loaded without its label map".to_string())),
        ParcellationSource::Uniform => {
            let coords = match &ds.voxel_coords {
                Some(c) => c.clone(),
                None => {
                    let p = ds
                        .series
                        .first()
                        .map(TimeSeriesMatrix::n_signals)
                        .unwrap_or(0);
                    ingest::row_index_coordinates(p)
                }
            };
            ingest::uniform_partition(&coords, n_rois)
        }
    }
}

/// Window, extract, correlate, and optionally threshold a single scan.
pub fn scan_connectome(
    ts: &TimeSeriesMatrix,
    parc: &Parcellation,
    config: &PipelineConfig,
    window_seconds: Option<f64>,
) -> Result<Connectome> {
    let windowed;
    let ts = match window_seconds {
        Some(w) => {
            windowed = graphs::window_truncate(ts, w)?;
            &windowed
        }
        None => ts,
    };
    let roi = match config.extraction {
        crate::model::Extraction::Mean => graphs::extract_mean(ts, parc)?,
        crate::model::Extraction::Eigenvariate => graphs::extract_eigenvariate(ts, parc)?,
    };
    let g = graphs::pearson_adjacency(&roi)?;
    match config.threshold {
        ThresholdSpec::None => Ok(g),
        ThresholdSpec::Percentile(q) => {
            graphs::percentile_threshold_with(&g, q, config.threshold_absolute)
        }
    }
}

/// One connectome per scan, in dataset order, at an explicit window.
pub fn build_connectomes_windowed(
    ds: &Dataset,
    parc: &Parcellation,
    config: &PipelineConfig,
    window_seconds: Option<f64>,
) -> Result<Vec<Connectome>> {
    ds.scans
        .par_iter()
        .zip(ds.series.par_iter())
        .map(|(scan, ts)| {
            scan_connectome(ts, parc, config, window_seconds).map_err(|e| Error::Scan {
                scan_id: scan.scan_id.clone(),
                source: Box::new(e),
            })
        })
        .collect()
}

/// One connectome per scan under the config's own window.
pub fn build_connectomes(
    ds: &Dataset,
    parc: &Parcellation,
    config: &PipelineConfig,
) -> Result<Vec<Connectome>> {
    build_connectomes_windowed(ds, parc, config, config.window_seconds)
}

/// Short stable hash of a config, used to key the connectome cache and to
/// stamp reports.
pub fn config_hash(config: &PipelineConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

const CACHE_MAGIC: &[u8; 4] = b"FCC1";

fn sanitize_id(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Path of the cached connectome for (scan, config hash).
pub fn cache_path(dir: &Path, scan_id: &str, hash: &str) -> PathBuf {
    dir.join(format!("{}-{hash}.fcc", sanitize_id(scan_id)))
}

/// Serialize a connectome to the compact binary cache format: magic,
/// version, threshold descriptor, and the strict upper triangle as f64 LE.
pub fn write_connectome_cache(path: &Path, g: &Connectome) -> Result<()> {
    let n = g.n_rois();
    let mut buf = Vec::with_capacity(32 + n * (n - 1) / 2 * 8);
    buf.extend_from_slice(CACHE_MAGIC);
    buf.push(1u8); // version
    let (flags, percentile, tau, absolute) = match g.threshold() {
        Some(t) => (1u8 | (u8::from(t.absolute) << 1), t.percentile, t.tau, t.absolute),
        None => (0u8, 0.0, 0.0, false),
    };
    let _ = absolute;
    buf.push(flags);
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&percentile.to_le_bytes());
    buf.extend_from_slice(&tau.to_le_bytes());
    for v in g.upper_triangle() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let tmp = path.with_extension("fcc.tmp");
    std::fs::write(&tmp, &buf).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Deserialize a cached connectome.
pub fn read_connectome_cache(path: &Path) -> Result<Connectome> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |msg: &str| Error::Format {
        path: path.to_path_buf(),
        message: msg.to_string(),
    };
    if buf.len() < 26 || &buf[0..4] != CACHE_MAGIC {
        return Err(fail("not a connectome cache file"));
    }
    if buf[4] != 1 {
        return Err(fail("unsupported cache version"));
    }
    let flags = buf[5];
    let n = u32::from_le_bytes(buf[6..10].try_into().unwrap()) as usize;
    let percentile = f64::from_le_bytes(buf[10..18].try_into().unwrap());
    let tau = f64::from_le_bytes(buf[18..26].try_into().unwrap());
    let n_tri = n * (n - 1) / 2;
    if buf.len() != 26 + 8 * n_tri {
        return Err(fail("truncated cache file"));
    }
    let mut w = DMatrix::zeros(n, n);
    let mut off = 26;
    for i in 0..n {
        for j in (i + 1)..n {
            let v = f64::from_le_bytes(buf[off..off + 8].try_into().unwrap());
            w[(i, j)] = v;
            w[(j, i)] = v;
            off += 8;
        }
    }
    let threshold = if flags & 1 != 0 {
        Some(ThresholdInfo {
            percentile,
            tau,
            absolute: flags & 2 != 0,
        })
    } else {
        None
    };
    Connectome::from_weights(w, threshold)
}

/// Export a connectome as a plain C x C CSV.
pub fn write_connectome_csv(path: &Path, g: &Connectome) -> Result<()> {
    let n = g.n_rois();
    let mut out = String::new();
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| format!("{}", g.weights()[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
