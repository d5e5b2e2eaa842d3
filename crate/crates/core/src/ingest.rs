//! Parsers turning imaging and tabular inputs into [`TimeSeriesMatrix`] and
//! [`Parcellation`] values, plus the deterministic uniform parcellation
//! builder. Parsing is pure per file; files may be read concurrently.

pub mod nifti;

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{Parcellation, SchemeTag, TimeSeriesMatrix};

/// Read a rectangular numeric CSV: one row per signal, one column per
/// timepoint. A first header row is detected by a non-numeric first cell and
/// skipped. `tr_seconds` comes from the manifest.
pub fn read_csv_timeseries(path: &Path, tr_seconds: f64) -> Result<TimeSeriesMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    let mut data_row = 0usize;
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if rows.is_empty() && width.is_none() {
            // header rule: non-numeric first cell means column names
            if cells[0].parse::<f64>().is_err() {
                continue;
            }
        }
        let mut row = Vec::with_capacity(cells.len());
        for (col, cell) in cells.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Format {
                path: path.to_path_buf(),
                message: format!("line {}: cell {:?} is not a number", line_no + 1, cell),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    path: path.to_path_buf(),
                    row: data_row + 1,
                    col: col + 1,
                });
            }
            row.push(v);
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    message: format!(
                        "ragged rows: line {} has {} cells, expected {w}",
                        line_no + 1,
                        row.len()
                    ),
                })
            }
            _ => {}
        }
        rows.push(row);
        data_row += 1;
    }
    if rows.is_empty() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "no numeric rows".to_string(),
        });
    }
    let n = rows.len();
    let m = rows[0].len();
    let values = DMatrix::from_fn(n, m, |r, c| rows[r][c]);
    let row_ids = (0..n).map(|i| format!("row{i:04}")).collect();
    TimeSeriesMatrix::new(values, row_ids, tr_seconds)
}

/// Densely relabel 1..=C, recording `(original, dense)` pairs when the input
/// labels have gaps.
fn dense_relabel(raw: Vec<u32>) -> (Vec<u32>, Vec<(u32, u32)>) {
    let mut present: Vec<u32> = raw.iter().copied().filter(|&l| l != 0).collect();
    present.sort_unstable();
    present.dedup();
    let has_gaps = present
        .iter()
        .enumerate()
        .any(|(i, &l)| l != (i + 1) as u32);
    if !has_gaps {
        return (raw, Vec::new());
    }
    let remap: Vec<(u32, u32)> = present
        .iter()
        .enumerate()
        .map(|(i, &l)| (l, (i + 1) as u32))
        .collect();
    let lookup: std::collections::HashMap<u32, u32> = remap.iter().copied().collect();
    let labels = raw
        .into_iter()
        .map(|l| if l == 0 { 0 } else { lookup[&l] })
        .collect();
    (labels, remap)
}

/// Read a parcellation label map: either an integer-valued 3-D NIfTI volume
/// or a CSV of `voxel_index,label` pairs (with header). Gapped label sets are
/// relabeled densely 1..=C with the remap recorded on the result.
pub fn read_label_map(path: &Path) -> Result<Parcellation> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let looks_nifti =
        bytes.len() >= nifti::HEADER_SIZE && nifti::parse_nifti_header(&bytes).is_ok();
    if looks_nifti {
        let header = nifti::parse_nifti_header(&bytes)?;
        if header.dim[0] != 3 {
            return Err(Error::Shape(format!(
                "label map must be a 3-D volume, got dim[0] = {}",
                header.dim[0]
            )));
        }
        let values = nifti::read_all_voxels(path, &header)?;
        let mut raw = Vec::with_capacity(values.len());
        for (i, v) in values.iter().enumerate() {
            if *v < 0.0 {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    message: format!("negative label {v} at voxel {i}"),
                });
            }
            if v.fract().abs() > 1e-9 {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    message: format!("non-integer label {v} at voxel {i}"),
                });
            }
            raw.push(*v as u32);
        }
        let (labels, remap) = dense_relabel(raw);
        return Parcellation::new(labels, Some(header.grid_dims()), SchemeTag::External, remap);
    }

    // CSV fallback: "voxel_index,label" with header.
    let text = String::from_utf8(bytes).map_err(|_| Error::Format {
        path: path.to_path_buf(),
        message: "label map is neither NIfTI-1 nor UTF-8 CSV".to_string(),
    })?;
    let mut pairs: Vec<(usize, u32)> = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if line_no == 0 && cells[0].parse::<i64>().is_err() {
            continue; // header
        }
        if cells.len() != 2 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("line {}: expected voxel_index,label", line_no + 1),
            });
        }
        let vox: usize = cells[0].parse().map_err(|_| Error::Format {
            path: path.to_path_buf(),
            message: format!("line {}: bad voxel index {:?}", line_no + 1, cells[0]),
        })?;
        let label: i64 = cells[1].parse().map_err(|_| Error::Format {
            path: path.to_path_buf(),
            message: format!("line {}: bad label {:?}", line_no + 1, cells[1]),
        })?;
        if label < 0 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("line {}: negative label {label}", line_no + 1),
            });
        }
        pairs.push((vox, label as u32));
    }
    if pairs.is_empty() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "no label rows".to_string(),
        });
    }
    let max_vox = pairs.iter().map(|&(v, _)| v).max().unwrap();
    let mut raw = vec![0u32; max_vox + 1];
    for (vox, label) in pairs {
        raw[vox] = label;
    }
    let (labels, remap) = dense_relabel(raw);
    Parcellation::new(labels, None, SchemeTag::External, remap)
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Partition voxels into `c` spatially compact cells whose sizes differ by
/// at most one voxel. Seeds are placed by farthest-point traversal starting
/// from the lowest voxel index; voxels are then assigned in ascending index
/// order to the nearest seed with remaining capacity. Fully deterministic.
pub fn uniform_partition(voxel_coordinates: &[[f64; 3]], c: usize) -> Result<Parcellation> {
    let n = voxel_coordinates.len();
    if c == 0 {
        return Err(Error::Argument("cell count must be positive".to_string()));
    }
    if c > n {
        return Err(Error::Argument(format!(
            "cannot split {n} voxels into {c} cells"
        )));
    }

    // Farthest-point seeding; ties go to the lowest voxel index.
    let mut seeds = Vec::with_capacity(c);
    seeds.push(0usize);
    let mut min_d2: Vec<f64> = voxel_coordinates
        .iter()
        .map(|&p| dist2(p, voxel_coordinates[0]))
        .collect();
    while seeds.len() < c {
        let mut best = 0usize;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in min_d2.iter().enumerate() {
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        seeds.push(best);
        for (i, slot) in min_d2.iter_mut().enumerate() {
            let d = dist2(voxel_coordinates[i], voxel_coordinates[best]);
            if d < *slot {
                *slot = d;
            }
        }
    }

    // Balanced assignment: the first (n mod c) seeds take one extra voxel.
    let base = n / c;
    let extra = n % c;
    let mut capacity: Vec<usize> = (0..c).map(|s| base + usize::from(s < extra)).collect();
    let mut labels = vec![0u32; n];
    for (i, &p) in voxel_coordinates.iter().enumerate() {
        let mut best_seed = usize::MAX;
        let mut best_d = f64::INFINITY;
        for (s, &seed_idx) in seeds.iter().enumerate() {
            if capacity[s] == 0 {
                continue;
            }
            let d = dist2(p, voxel_coordinates[seed_idx]);
            if d < best_d {
                best_d = d;
                best_seed = s;
            }
        }
        capacity[best_seed] -= 1;
        labels[i] = (best_seed + 1) as u32;
    }

    Parcellation::new(labels, None, SchemeTag::Uniform, Vec::new())
}

/// 1-D coordinates `(row, 0, 0)` for signals without spatial positions; the
/// uniform partition then yields balanced contiguous blocks of rows.
pub fn row_index_coordinates(n: usize) -> Vec<[f64; 3]> {
    (0..n).map(|i| [i as f64, 0.0, 0.0]).collect()
}

/// Coordinates of every voxel of a 3-D grid in linear (x fastest) order.
pub fn grid_coordinates(dims: [usize; 3]) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                out.push([x as f64, y as f64, z as f64]);
            }
        }
    }
    out
}
