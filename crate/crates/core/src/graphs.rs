//! Graph inference: turn a scan's time-series and a parcellation into a
//! weighted connectome, with acquisition-window truncation for the sweeps.
//! Per-scan inference is pure and independent; scans may be processed
//! concurrently.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{Connectome, Parcellation, ThresholdInfo, TimeSeriesMatrix};
use crate::stats::percentile_linear;

/// Relative tolerance of the iterative eigensolver behind
/// [`extract_eigenvariate`].
pub const EIG_TOLERANCE: f64 = 1e-10;
/// Iteration cap of the eigensolver.
pub const EIG_MAX_ITER: usize = 1000;

/// Keep only the first `floor(window_seconds / tr)` timepoints. A window
/// longer than the scan leaves the matrix unchanged.
pub fn window_truncate(ts: &TimeSeriesMatrix, window_seconds: f64) -> Result<TimeSeriesMatrix> {
    let tr = ts.tr_seconds();
    if window_seconds < 2.0 * tr {
        return Err(Error::Argument(format!(
            "window of {window_seconds} s covers fewer than 2 samples at TR {tr} s"
        )));
    }
    // Tiny relative nudge so that windows that are an exact multiple of the
    // TR in real arithmetic do not round down.
    let cols = ((window_seconds / tr) * (1.0 + 1e-12)).floor() as usize;
    if cols >= ts.n_timepoints() {
        return Ok(ts.clone());
    }
    let values = ts.values().columns(0, cols).into_owned();
    TimeSeriesMatrix::new(values, ts.row_ids().to_vec(), tr)
}

fn check_rows_match_parcellation(ts: &TimeSeriesMatrix, parc: &Parcellation) -> Result<()> {
    if parc.n_cells() == 0 {
        return Err(Error::Argument(
            "parcellation has no cells to extract".to_string(),
        ));
    }
    let labeled = parc.n_labeled();
    if ts.n_signals() != labeled {
        return Err(Error::Shape(format!(
            "time-series has {} rows but the parcellation labels {labeled} voxels",
            ts.n_signals()
        )));
    }
    Ok(())
}

/// Indices of the time-series rows belonging to each cell, in ingest order.
fn cell_rows(parc: &Parcellation) -> Vec<Vec<usize>> {
    let mut rows = vec![Vec::new(); parc.n_cells()];
    for (row, label) in parc.row_labels().enumerate() {
        rows[(label - 1) as usize].push(row);
    }
    rows
}

/// Reduce each cell to the arithmetic mean of its voxel series.
pub fn extract_mean(ts: &TimeSeriesMatrix, parc: &Parcellation) -> Result<TimeSeriesMatrix> {
    check_rows_match_parcellation(ts, parc)?;
    let n = ts.n_timepoints();
    let v = ts.values();
    let cells = cell_rows(parc);
    let mut out = DMatrix::zeros(cells.len(), n);
    for (c, rows) in cells.iter().enumerate() {
        let inv = 1.0 / rows.len() as f64;
        for t in 0..n {
            let mut acc = 0.0;
            for &r in rows {
                acc += v[(r, t)];
            }
            out[(c, t)] = acc * inv;
        }
    }
    let ids = (1..=cells.len()).map(|c| format!("roi{c:04}")).collect();
    TimeSeriesMatrix::new(out, ids, ts.tr_seconds())
}

/// Reduce each cell to the projection of its (row-centered) voxel submatrix
/// onto the leading principal component. The sign is fixed so the output
/// correlates nonnegatively with the cell mean series.
pub fn extract_eigenvariate(
    ts: &TimeSeriesMatrix,
    parc: &Parcellation,
) -> Result<TimeSeriesMatrix> {
    check_rows_match_parcellation(ts, parc)?;
    let n = ts.n_timepoints();
    let v = ts.values();
    let cells = cell_rows(parc);
    let mut out = DMatrix::zeros(cells.len(), n);
    for (c, rows) in cells.iter().enumerate() {
        let m = rows.len();
        // centered cell submatrix and raw cell mean series
        let mut xc = DMatrix::zeros(m, n);
        let mut mean_series = vec![0.0f64; n];
        for (i, &r) in rows.iter().enumerate() {
            let row_mean = (0..n).map(|t| v[(r, t)]).sum::<f64>() / n as f64;
            for t in 0..n {
                xc[(i, t)] = v[(r, t)] - row_mean;
                mean_series[t] += v[(r, t)];
            }
        }
        for s in mean_series.iter_mut() {
            *s /= m as f64;
        }
        if xc.iter().map(|x| x * x).sum::<f64>() == 0.0 {
            return Err(Error::DegenerateCell { cell: c + 1 });
        }
        let u = leading_left_vector(&xc);
        let mut series: Vec<f64> = (0..n)
            .map(|t| (0..m).map(|i| u[i] * xc[(i, t)]).sum())
            .collect();
        fix_sign(&mut series, &mean_series);
        for t in 0..n {
            out[(c, t)] = series[t];
        }
    }
    let ids = (1..=cells.len()).map(|c| format!("roi{c:04}")).collect();
    TimeSeriesMatrix::new(out, ids, ts.tr_seconds())
}

/// Power iteration for the leading left singular vector of `xc`, iterating
/// `u <- Xc (Xc^T u)` without forming the Gram matrix.
fn leading_left_vector(xc: &DMatrix<f64>) -> DVector<f64> {
    let m = xc.nrows();
    if m == 1 {
        return DVector::from_element(1, 1.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x00e1_6e5e);
    let mut u = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
    u /= u.norm();
    let mut prev_change = f64::INFINITY;
    for _ in 0..EIG_MAX_ITER {
        let mut next = xc * (xc.tr_mul(&u));
        let norm = next.norm();
        if norm == 0.0 {
            // u landed in the null space; restart from a fresh direction
            u = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
            u /= u.norm();
            continue;
        }
        next /= norm;
        if next.dot(&u) < 0.0 {
            next = -next;
        }
        let change = (&next - &u).norm();
        u = next;
        if change == 0.0 {
            break;
        }
        // successive changes shrink geometrically; stop when the projected
        // remaining tail (change * rate / (1 - rate)) is below tolerance
        if prev_change.is_finite() {
            let rate = (change / prev_change).clamp(0.0, 0.999);
            if change * rate / (1.0 - rate) < EIG_TOLERANCE {
                break;
            }
        }
        prev_change = change;
    }
    u
}

/// Flip `series` so its covariance with `reference` is nonnegative; when the
/// covariance is exactly zero, make the first nonzero entry positive.
fn fix_sign(series: &mut [f64], reference: &[f64]) {
    let n = series.len() as f64;
    let s_mean = series.iter().sum::<f64>() / n;
    let r_mean = reference.iter().sum::<f64>() / n;
    let cov: f64 = series
        .iter()
        .zip(reference)
        .map(|(s, r)| (s - s_mean) * (r - r_mean))
        .sum();
    let flip = if cov != 0.0 {
        cov < 0.0
    } else {
        series.iter().find(|&&x| x != 0.0).is_some_and(|&x| x < 0.0)
    };
    if flip {
        for s in series.iter_mut() {
            *s = -*s;
        }
    }
}

/// Sample Pearson correlation matrix of the ROI series: symmetric, clamped
/// to [-1, 1], diagonal stored as zero.
pub fn pearson_adjacency(roi_ts: &TimeSeriesMatrix) -> Result<Connectome> {
    let c = roi_ts.n_signals();
    let n = roi_ts.n_timepoints();
    if c < 2 {
        return Err(Error::Argument(format!(
            "correlation needs at least 2 ROIs, got {c}"
        )));
    }
    if n < 3 {
        return Err(Error::Argument(format!(
            "correlation needs at least 3 timepoints, got {n}"
        )));
    }
    let v = roi_ts.values();
    // centered rows and their sums of squares
    let mut centered = DMatrix::zeros(c, n);
    let mut sumsq = vec![0.0f64; c];
    for i in 0..c {
        let mean = (0..n).map(|t| v[(i, t)]).sum::<f64>() / n as f64;
        let scale = (0..n).map(|t| v[(i, t)].abs()).fold(0.0f64, f64::max);
        let mut ss = 0.0;
        for t in 0..n {
            let x = v[(i, t)] - mean;
            centered[(i, t)] = x;
            ss += x * x;
        }
        // constant rows have residuals at rounding-noise level only
        if ss <= (scale * 1e-13).powi(2) * n as f64 {
            return Err(Error::DegenerateSignal {
                row_id: roi_ts.row_ids()[i].clone(),
            });
        }
        sumsq[i] = ss;
    }
    let mut w = DMatrix::zeros(c, c);
    for i in 0..c {
        for j in (i + 1)..c {
            let dot: f64 = (0..n).map(|t| centered[(i, t)] * centered[(j, t)]).sum();
            let r = (dot / (sumsq[i] * sumsq[j]).sqrt()).clamp(-1.0, 1.0);
            w[(i, j)] = r;
            w[(j, i)] = r;
        }
    }
    Connectome::from_weights(w, None)
}

/// Zero all weights at or below the q-th percentile of this matrix's own
/// strict-upper-triangle weights (linear interpolation). `q = 0` is the
/// identity with a -inf threshold recorded. With `absolute`, both the
/// percentile and the comparison use |w|.
pub fn percentile_threshold_with(g: &Connectome, q: f64, absolute: bool) -> Result<Connectome> {
    if g.is_thresholded() {
        return Err(Error::State(
            "connectome is already thresholded".to_string(),
        ));
    }
    if !(0.0..100.0).contains(&q) {
        return Err(Error::Argument(format!(
            "percentile must be in [0, 100), got {q}"
        )));
    }
    if q == 0.0 {
        return Connectome::from_weights(
            g.weights().clone(),
            Some(ThresholdInfo {
                percentile: 0.0,
                tau: f64::NEG_INFINITY,
                absolute,
            }),
        );
    }
    let mut tri = g.upper_triangle();
    if absolute {
        for v in tri.iter_mut() {
            *v = v.abs();
        }
    }
    tri.sort_unstable_by(f64::total_cmp);
    let tau = percentile_linear(&tri, q);
    let n = g.n_rois();
    let mut w = g.weights().clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let test = if absolute { w[(i, j)].abs() } else { w[(i, j)] };
            if test <= tau {
                w[(i, j)] = 0.0;
                w[(j, i)] = 0.0;
            }
        }
    }
    Connectome::from_weights(
        w,
        Some(ThresholdInfo {
            percentile: q,
            tau,
            absolute,
        }),
    )
}

/// Signed-weight percentile threshold (the default rule).
pub fn percentile_threshold(g: &Connectome, q: f64) -> Result<Connectome> {
    percentile_threshold_with(g, q, false)
}
