//! Core domain types shared by every stage of the pipeline: scan records,
//! time-series matrices, parcellations, connectomes, pairings, and the
//! pipeline configuration that ties a run together.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// On-disk format of a scan's time-series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanFormat {
    Nifti1,
    Csv,
}

/// One scan of one subject: identity, acquisition parameters, and source file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanRecord {
    pub scan_id: String,
    pub subject_id: String,
    /// 1 = test, 2 = retest.
    pub session_index: u32,
    pub tr_seconds: f64,
    pub path: PathBuf,
    pub format: ScanFormat,
    pub n_timepoints: usize,
}

impl ScanRecord {
    /// Scan duration in seconds (timepoints times sampling interval).
    pub fn duration_seconds(&self) -> f64 {
        self.n_timepoints as f64 * self.tr_seconds
    }
}

/// One entry of the dataset manifest, the single entry point for all
/// commands. A manifest is a JSON array of these objects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub scan_id: String,
    pub subject_id: String,
    pub session: u32,
    pub tr_seconds: f64,
    pub path: String,
    pub format: ScanFormat,
}

/// Read a dataset manifest (JSON array of [`ManifestEntry`]).
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let entries: Vec<ManifestEntry> = serde_json::from_str(&text)?;
    if entries.is_empty() {
        return Err(Error::Manifest(format!("{}: empty manifest", path.display())));
    }
    Ok(entries)
}

/// Write a dataset manifest as pretty-printed JSON.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let text = serde_json::to_string_pretty(entries)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// A rows-by-time matrix of voxel or ROI signals with its sampling interval.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesMatrix {
    values: DMatrix<f64>,
    row_ids: Vec<String>,
    tr_seconds: f64,
}

impl TimeSeriesMatrix {
    /// Build a time-series matrix, checking finiteness and shape consistency.
    pub fn new(values: DMatrix<f64>, row_ids: Vec<String>, tr_seconds: f64) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Shape(format!(
                "time-series matrix must be nonempty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if row_ids.len() != values.nrows() {
            return Err(Error::Shape(format!(
                "{} row ids for {} rows",
                row_ids.len(),
                values.nrows()
            )));
        }
        if !tr_seconds.is_finite() || tr_seconds <= 0.0 {
            return Err(Error::Argument(format!(
                "tr_seconds must be positive, got {tr_seconds}"
            )));
        }
        if let Some((r, c)) = first_nonfinite(&values) {
            return Err(Error::Argument(format!(
                "non-finite value at row {r}, column {c}"
            )));
        }
        Ok(Self {
            values,
            row_ids,
            tr_seconds,
        })
    }

    /// Convenience constructor naming the rows `row0000`, `row0001`, ...
    pub fn with_default_ids(values: DMatrix<f64>, tr_seconds: f64) -> Result<Self> {
        let ids = (0..values.nrows()).map(|i| format!("row{i:04}")).collect();
        Self::new(values, ids, tr_seconds)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn tr_seconds(&self) -> f64 {
        self.tr_seconds
    }

    /// Number of signal rows (voxels or ROIs).
    pub fn n_signals(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_timepoints(&self) -> usize {
        self.values.ncols()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.n_timepoints() as f64 * self.tr_seconds
    }
}

fn first_nonfinite(m: &DMatrix<f64>) -> Option<(usize, usize)> {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if !m[(r, c)].is_finite() {
                return Some((r, c));
            }
        }
    }
    None
}

/// How a parcellation was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeTag {
    Uniform,
    Functional,
    External,
}

/// A voxel-to-cell label map. Label 0 is background; cells 1..=C partition
/// the labeled voxels: disjoint by construction, and every cell nonempty.
#[derive(Debug, Clone, PartialEq)]
pub struct Parcellation {
    labels: Vec<u32>,
    dims: Option<[usize; 3]>,
    n_cells: usize,
    scheme: SchemeTag,
    /// Dense relabeling applied on ingest, as (original, dense) pairs.
    remap: Vec<(u32, u32)>,
}

impl Parcellation {
    pub fn new(
        labels: Vec<u32>,
        dims: Option<[usize; 3]>,
        scheme: SchemeTag,
        remap: Vec<(u32, u32)>,
    ) -> Result<Self> {
        if let Some(d) = dims {
            let expect = d[0] * d[1] * d[2];
            if labels.len() != expect {
                return Err(Error::Shape(format!(
                    "label map has {} entries for grid {}x{}x{}",
                    labels.len(),
                    d[0],
                    d[1],
                    d[2]
                )));
            }
        }
        // n_cells = 0 (all background) is representable; downstream
        // extraction rejects it when rows are actually needed.
        let n_cells = labels.iter().copied().max().unwrap_or(0) as usize;
        let mut seen = vec![false; n_cells + 1];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if let Some(missing) = (1..=n_cells).find(|&c| !seen[c]) {
            return Err(Error::Structure(format!(
                "cell {missing} of {n_cells} has no voxels"
            )));
        }
        Ok(Self {
            labels,
            dims,
            n_cells,
            scheme,
            remap,
        })
    }

    /// Number of cells C.
    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Raw per-voxel labels in linear voxel order (0 = background).
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn dims(&self) -> Option<[usize; 3]> {
        self.dims
    }

    pub fn scheme(&self) -> SchemeTag {
        self.scheme
    }

    pub fn remap(&self) -> &[(u32, u32)] {
        &self.remap
    }

    /// Labels of the non-background voxels, in ascending linear voxel order.
    /// This is exactly the row order produced by the ingest readers.
    pub fn row_labels(&self) -> impl Iterator<Item = u32> + '_ {
        self.labels.iter().copied().filter(|&l| l != 0)
    }

    /// Number of labeled (non-background) voxels.
    pub fn n_labeled(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    /// Voxel count per cell, indexed by cell id - 1.
    pub fn cell_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.n_cells];
        for l in self.row_labels() {
            sizes[(l - 1) as usize] += 1;
        }
        sizes
    }
}

/// Descriptor of a threshold that has been applied to a connectome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdInfo {
    pub percentile: f64,
    pub tau: f64,
    pub absolute: bool,
}

/// A symmetric weighted adjacency matrix over C ROIs. The diagonal is stored
/// as zero: self-correlation carries no information and must not contribute
/// to distances.
#[derive(Debug, Clone, PartialEq)]
pub struct Connectome {
    weights: DMatrix<f64>,
    threshold: Option<ThresholdInfo>,
}

impl Connectome {
    /// Wrap a weight matrix, enforcing symmetry, zero diagonal, finiteness,
    /// and (for unthresholded matrices) weights in [-1, 1].
    pub fn from_weights(weights: DMatrix<f64>, threshold: Option<ThresholdInfo>) -> Result<Self> {
        if weights.nrows() != weights.ncols() || weights.nrows() < 2 {
            return Err(Error::Shape(format!(
                "connectome must be square with at least 2 ROIs, got {}x{}",
                weights.nrows(),
                weights.ncols()
            )));
        }
        let n = weights.nrows();
        for i in 0..n {
            if weights[(i, i)] != 0.0 {
                return Err(Error::Structure(format!(
                    "connectome diagonal must be stored as 0, found {} at ({i},{i})",
                    weights[(i, i)]
                )));
            }
            for j in (i + 1)..n {
                let (a, b) = (weights[(i, j)], weights[(j, i)]);
                if !a.is_finite() || !b.is_finite() {
                    return Err(Error::Argument(format!(
                        "non-finite weight at ({i},{j})"
                    )));
                }
                if a != b {
                    return Err(Error::Structure(format!(
                        "asymmetric weights at ({i},{j}): {a} vs {b}"
                    )));
                }
                if a.abs() > 1.0 + 1e-9 {
                    return Err(Error::Argument(format!(
                        "weight {a} at ({i},{j}) outside [-1, 1]"
                    )));
                }
            }
        }
        Ok(Self { weights, threshold })
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn n_rois(&self) -> usize {
        self.weights.nrows()
    }

    pub fn threshold(&self) -> Option<&ThresholdInfo> {
        self.threshold.as_ref()
    }

    pub fn is_thresholded(&self) -> bool {
        self.threshold.is_some()
    }

    /// Strict-upper-triangle weights in row-major order.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let n = self.n_rois();
        let mut out = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                out.push(self.weights[(i, j)]);
            }
        }
        out
    }
}

/// Time-series reduction applied per parcellation cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extraction {
    Mean,
    Eigenvariate,
}

/// Graph distance used for the reliability statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    SquaredFrobenius,
    L1,
}

/// Connectome thresholding rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdSpec {
    None,
    Percentile(f64),
}

/// Where the parcellation comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParcellationSource {
    /// Balanced spatially-compact cells built from the voxel coordinates.
    Uniform,
    /// An externally produced label map (NIfTI volume or CSV).
    Path(PathBuf),
}

/// Full description of one acquisition-and-inference procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub n_rois_target: usize,
    pub extraction: Extraction,
    pub threshold: ThresholdSpec,
    /// Threshold on |w| instead of signed w. Off by default.
    #[serde(default)]
    pub threshold_absolute: bool,
    #[serde(default)]
    pub window_seconds: Option<f64>,
    pub distance_metric: DistanceMetric,
    pub parcellation_source: ParcellationSource,
}

impl PipelineConfig {
    /// Internal consistency checks that do not need the dataset.
    pub fn validate(&self) -> Result<()> {
        if self.n_rois_target < 2 {
            return Err(Error::Argument(format!(
                "n_rois_target must be at least 2, got {}",
                self.n_rois_target
            )));
        }
        if let ThresholdSpec::Percentile(q) = self.threshold {
            if !(0.0..100.0).contains(&q) {
                return Err(Error::Argument(format!(
                    "threshold percentile must be in [0, 100), got {q}"
                )));
            }
        }
        if let Some(w) = self.window_seconds {
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::Argument(format!(
                    "window_seconds must be positive, got {w}"
                )));
            }
        }
        Ok(())
    }

    /// Checks that depend on the scans: the window must cover at least two
    /// samples of every scan and fit within the shortest scan.
    pub fn validate_for_scans(&self, scans: &[ScanRecord]) -> Result<()> {
        self.validate()?;
        if let Some(w) = self.window_seconds {
            for s in scans {
                if w < 2.0 * s.tr_seconds {
                    return Err(Error::Argument(format!(
                        "window {w} s covers fewer than 2 samples of scan {} (TR {} s)",
                        s.scan_id, s.tr_seconds
                    )));
                }
                if w > s.duration_seconds() + 1e-9 {
                    return Err(Error::Argument(format!(
                        "window {w} s exceeds duration {} s of scan {}",
                        s.duration_seconds(),
                        s.scan_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A proposed or ground-truth matching of scans into pairs: a fixed-point-free
/// involution on the scan indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pairing {
    partner: Vec<usize>,
}

impl Pairing {
    /// Validate and wrap a partner array: `partner[partner[k]] == k` and
    /// `partner[k] != k` for every k.
    pub fn new(partner: Vec<usize>) -> Result<Self> {
        let n = partner.len();
        if n == 0 || n % 2 != 0 {
            return Err(Error::Structure(format!(
                "pairing needs a positive even number of scans, got {n}"
            )));
        }
        for (k, &m) in partner.iter().enumerate() {
            if m >= n {
                return Err(Error::Structure(format!(
                    "partner[{k}] = {m} out of range for {n} scans"
                )));
            }
            if m == k {
                return Err(Error::Structure(format!("scan {k} is paired with itself")));
            }
            if partner[m] != k {
                return Err(Error::Structure(format!(
                    "pairing is not an involution at {k} -> {m} -> {}",
                    partner[m]
                )));
            }
        }
        Ok(Self { partner })
    }

    pub fn len(&self) -> usize {
        self.partner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partner.is_empty()
    }

    pub fn partner_of(&self, k: usize) -> usize {
        self.partner[k]
    }

    pub fn partner_array(&self) -> &[usize] {
        &self.partner
    }

    /// The pairs as (low index, high index), sorted by low index.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = self
            .partner
            .iter()
            .enumerate()
            .filter(|&(k, &m)| k < m)
            .map(|(k, &m)| (k, m))
            .collect();
        out.sort_unstable();
        out
    }
}

/// A single dataset-validation finding.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DuplicateSession {
        subject_id: String,
        session_index: u32,
        scan_ids: Vec<String>,
    },
    NonPositiveTr {
        scan_id: String,
    },
    TooFewTimepoints {
        scan_id: String,
        n_timepoints: usize,
    },
    MissingFile {
        scan_id: String,
        path: PathBuf,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateSession {
                subject_id,
                session_index,
                scan_ids,
            } => write!(
                f,
                "duplicate (subject {subject_id}, session {session_index}) across scans {scan_ids:?}"
            ),
            Violation::NonPositiveTr { scan_id } => {
                write!(f, "scan {scan_id} has non-positive TR")
            }
            Violation::TooFewTimepoints {
                scan_id,
                n_timepoints,
            } => write!(f, "scan {scan_id} has {n_timepoints} timepoints (need at least 2)"),
            Violation::MissingFile { scan_id, path } => {
                write!(f, "scan {scan_id} source file missing: {}", path.display())
            }
        }
    }
}

/// Check a scan list against the dataset invariants. Returns a report of
/// violations; an empty report means the dataset is valid. The report is
/// sorted, so the output is insensitive to the input order.
pub fn validate_dataset(scans: &[ScanRecord]) -> Vec<Violation> {
    let mut report = Vec::new();
    let mut by_key: HashMap<(&str, u32), Vec<&str>> = HashMap::new();
    for s in scans {
        by_key
            .entry((s.subject_id.as_str(), s.session_index))
            .or_default()
            .push(s.scan_id.as_str());
        if !s.tr_seconds.is_finite() || s.tr_seconds <= 0.0 {
            report.push(Violation::NonPositiveTr {
                scan_id: s.scan_id.clone(),
            });
        }
        if s.n_timepoints < 2 {
            report.push(Violation::TooFewTimepoints {
                scan_id: s.scan_id.clone(),
                n_timepoints: s.n_timepoints,
            });
        }
        if !s.path.as_os_str().is_empty() && !s.path.exists() {
            report.push(Violation::MissingFile {
                scan_id: s.scan_id.clone(),
                path: s.path.clone(),
            });
        }
    }
    for ((subject, session), mut ids) in by_key {
        if ids.len() > 1 {
            ids.sort_unstable();
            report.push(Violation::DuplicateSession {
                subject_id: subject.to_string(),
                session_index: session,
                scan_ids: ids.into_iter().map(String::from).collect(),
            });
        }
    }
    report.sort();
    report
}

/// The ground-truth matching: each scan paired with its same-subject
/// other-session scan. Every subject must have exactly two sessions.
pub fn true_pairing(scans: &[ScanRecord]) -> Result<Pairing> {
    let mut by_subject: HashMap<&str, Vec<usize>> = HashMap::new();
    for (k, s) in scans.iter().enumerate() {
        by_subject.entry(s.subject_id.as_str()).or_default().push(k);
    }
    let mut partner = vec![usize::MAX; scans.len()];
    for (subject, idx) in by_subject {
        if idx.len() != 2 {
            return Err(Error::Structure(format!(
                "subject {subject} has {} sessions, expected exactly 2",
                idx.len()
            )));
        }
        partner[idx[0]] = idx[1];
        partner[idx[1]] = idx[0];
    }
    Pairing::new(partner)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(scan_id: &str, subject: &str, session: u32) -> ScanRecord {
        ScanRecord {
            scan_id: scan_id.to_string(),
            subject_id: subject.to_string(),
            session_index: session,
            tr_seconds: 2.0,
            path: PathBuf::new(),
            format: ScanFormat::Csv,
            n_timepoints: 210,
        }
    }

    #[test]
    fn validate_clean_dataset_is_empty() {
        let scans: Vec<ScanRecord> = (0..20)
            .flat_map(|i| {
                let subject = format!("sub{i:02}");
                (1..=2).map(move |t| record(&format!("{subject}_s{t}"), &subject, t))
            })
            .collect();
        assert!(validate_dataset(&scans).is_empty());
    }

    #[test]
    fn validate_flags_duplicate_session() {
        let scans = vec![
            record("a", "subj01", 1),
            record("b", "subj01", 1),
            record("c", "subj01", 2),
        ];
        let report = validate_dataset(&scans);
        assert_eq!(report.len(), 1);
        match &report[0] {
            Violation::DuplicateSession {
                subject_id,
                session_index,
                scan_ids,
            } => {
                assert_eq!(subject_id, "subj01");
                assert_eq!(*session_index, 1);
                assert_eq!(scan_ids, &["a".to_string(), "b".to_string()]);
            }
            other => panic!("unexpected violation {other:?}"),
        }
    }

    #[test]
    fn validate_flags_zero_tr() {
        let mut s = record("a", "subj01", 1);
        s.tr_seconds = 0.0;
        let report = validate_dataset(&[s]);
        assert_eq!(report.len(), 1);
        assert!(matches!(report[0], Violation::NonPositiveTr { .. }));
    }

    #[test]
    fn validate_flags_missing_file() {
        let mut s = record("a", "subj01", 1);
        s.path = PathBuf::from("/nonexistent/file.csv");
        let report = validate_dataset(&[s]);
        assert_eq!(report.len(), 1);
        assert!(matches!(report[0], Violation::MissingFile { .. }));
    }

    #[test]
    fn validate_is_order_insensitive() {
        let mut scans = vec![
            record("a", "s1", 1),
            record("b", "s1", 1),
            record("c", "s2", 1),
        ];
        scans[2].tr_seconds = -1.0;
        let fwd = validate_dataset(&scans);
        scans.reverse();
        let rev = validate_dataset(&scans);
        assert_eq!(fwd, rev);
        assert_eq!(fwd, validate_dataset(&scans)); // idempotent
    }

    #[test]
    fn true_pairing_interleaved() {
        let scans = vec![
            record("a", "s1", 1),
            record("b", "s1", 2),
            record("c", "s2", 1),
            record("d", "s2", 2),
        ];
        let p = true_pairing(&scans).unwrap();
        assert_eq!(p.partner_array(), &[1, 0, 3, 2]);
    }

    #[test]
    fn true_pairing_grouped_by_session() {
        let scans = vec![
            record("a", "s1", 1),
            record("b", "s2", 1),
            record("c", "s1", 2),
            record("d", "s2", 2),
        ];
        let p = true_pairing(&scans).unwrap();
        assert_eq!(p.partner_array(), &[2, 3, 0, 1]);
    }

    #[test]
    fn true_pairing_rejects_three_sessions() {
        let scans = vec![
            record("a", "s1", 1),
            record("b", "s1", 2),
            record("c", "s1", 3),
        ];
        let err = true_pairing(&scans).unwrap_err();
        assert!(err.to_string().contains("s1"), "error should name the subject: {err}");
    }

    #[test]
    fn pairing_rejects_fixed_points_and_non_involutions() {
        assert!(Pairing::new(vec![0, 1]).is_err());
        assert!(Pairing::new(vec![1, 0, 3, 2]).is_ok());
        assert!(Pairing::new(vec![1, 2, 0, 3]).is_err());
        assert!(Pairing::new(vec![1, 0, 3]).is_err());
    }

    #[test]
    fn true_pairing_is_fixed_point_free_involution() {
        let scans: Vec<ScanRecord> = (0..9)
            .flat_map(|i| {
                let subject = format!("sub{i:02}");
                (1..=2).map(move |t| record(&format!("{subject}_s{t}"), &subject, t))
            })
            .collect();
        let p = true_pairing(&scans).unwrap();
        for k in 0..p.len() {
            assert_ne!(p.partner_of(k), k);
            assert_eq!(p.partner_of(p.partner_of(k)), k);
        }
    }

    #[test]
    fn connectome_rejects_bad_matrices() {
        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.4, 0.0]);
        assert!(Connectome::from_weights(asym, None).is_err());
        let diag = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 0.0]);
        assert!(Connectome::from_weights(diag, None).is_err());
        let big = DMatrix::from_row_slice(2, 2, &[0.0, 1.5, 1.5, 0.0]);
        assert!(Connectome::from_weights(big, None).is_err());
        let ok = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]);
        assert!(Connectome::from_weights(ok, None).is_ok());
    }

    #[test]
    fn parcellation_requires_every_cell_nonempty() {
        assert!(Parcellation::new(vec![0, 1, 3, 3], None, SchemeTag::External, vec![]).is_err());
        let p = Parcellation::new(vec![0, 1, 2, 2], None, SchemeTag::External, vec![]).unwrap();
        assert_eq!(p.n_cells(), 2);
        assert_eq!(p.cell_sizes(), vec![1, 2]);
        assert_eq!(p.n_labeled(), 3);
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = PipelineConfig {
            n_rois_target: 64,
            extraction: Extraction::Mean,
            threshold: ThresholdSpec::Percentile(25.0),
            threshold_absolute: false,
            window_seconds: Some(60.0),
            distance_metric: DistanceMetric::SquaredFrobenius,
            parcellation_source: ParcellationSource::Uniform,
        };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn config_validation_bounds() {
        let mut cfg = PipelineConfig {
            n_rois_target: 8,
            extraction: Extraction::Mean,
            threshold: ThresholdSpec::Percentile(100.0),
            threshold_absolute: false,
            window_seconds: None,
            distance_metric: DistanceMetric::SquaredFrobenius,
            parcellation_source: ParcellationSource::Uniform,
        };
        assert!(cfg.validate().is_err());
        cfg.threshold = ThresholdSpec::Percentile(0.0);
        assert!(cfg.validate().is_ok());
        cfg.window_seconds = Some(1000.0);
        let scans = vec![record("a", "s1", 1)]; // 420 s scan
        assert!(cfg.validate_for_scans(&scans).is_err());
        cfg.window_seconds = Some(60.0);
        assert!(cfg.validate_for_scans(&scans).is_ok());
    }
}
