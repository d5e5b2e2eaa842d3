//! The reliability statistic: pairwise graph distances, row-wise rank
//! matrices, the rank sum with its permutation null, and edge-wise
//! localization of identity-carrying connections.
//!
//! Distance-matrix rows, permutation replicates, and per-edge pipelines are
//! embarrassingly parallel; every replicate derives its randomness from
//! (seed, replicate index), so results do not depend on scheduling.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Connectome, DistanceMetric, Pairing, ScanRecord};
use crate::stats::percentile_linear;

/// Deterministic tie rule used when ranking equal distances; recorded in
/// report metadata.
pub const TIE_RULE: &str = "ascending-scan-index";

/// Symmetric matrix of pairwise graph distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    values: DMatrix<f64>,
    scan_ids: Vec<String>,
}

impl DistanceMatrix {
    pub fn new(values: DMatrix<f64>, scan_ids: Vec<String>) -> Result<Self> {
        let n = values.nrows();
        if values.ncols() != n || n < 2 {
            return Err(Error::Shape(format!(
                "distance matrix must be square with n >= 2, got {}x{}",
                n,
                values.ncols()
            )));
        }
        if scan_ids.len() != n {
            return Err(Error::Shape(format!(
                "{} scan ids for {n} scans",
                scan_ids.len()
            )));
        }
        for i in 0..n {
            if values[(i, i)] != 0.0 {
                return Err(Error::Structure(format!(
                    "distance diagonal must be zero, found {} at {i}",
                    values[(i, i)]
                )));
            }
            for j in 0..n {
                let v = values[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Argument(format!(
                        "distance ({i},{j}) = {v} must be finite and nonnegative"
                    )));
                }
                if values[(j, i)] != v {
                    return Err(Error::Structure(format!(
                        "distance matrix asymmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(Self { values, scan_ids })
    }

    pub fn n_scans(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn scan_ids(&self) -> &[String] {
        &self.scan_ids
    }

    pub fn with_scan_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n_scans() {
            return Err(Error::Shape(format!(
                "{} ids for {} scans",
                ids.len(),
                self.n_scans()
            )));
        }
        self.scan_ids = ids;
        Ok(self)
    }
}

/// Distance between two connectomes. The diagonal never contributes; the
/// strict-upper-triangle sum is doubled so both symmetric halves count, as in
/// a full-matrix norm.
pub fn graph_distance(a: &Connectome, b: &Connectome, metric: DistanceMetric) -> Result<f64> {
    if a.n_rois() != b.n_rois() {
        return Err(Error::Shape(format!(
            "graphs have {} and {} ROIs",
            a.n_rois(),
            b.n_rois()
        )));
    }
    let n = a.n_rois();
    let (wa, wb) = (a.weights(), b.weights());
    let mut acc = 0.0;
    match metric {
        DistanceMetric::SquaredFrobenius => {
            for i in 0..n {
                for j in (i + 1)..n {
                    let d = wa[(i, j)] - wb[(i, j)];
                    acc += d * d;
                }
            }
        }
        DistanceMetric::L1 => {
            for i in 0..n {
                for j in (i + 1)..n {
                    acc += (wa[(i, j)] - wb[(i, j)]).abs();
                }
            }
        }
    }
    Ok(2.0 * acc)
}

/// All pairwise graph distances. Symmetric by construction; scan ids default
/// to the list position.
pub fn distance_matrix(graphs: &[Connectome], metric: DistanceMetric) -> Result<DistanceMatrix> {
    let n = graphs.len();
    if n < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 graphs, got {n}"
        )));
    }
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let computed: Vec<((usize, usize), f64)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            graph_distance(&graphs[i], &graphs[j], metric)
                .map(|d| ((i, j), d))
                .map_err(|e| Error::PairDistance {
                    i,
                    j,
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;
    let mut values = DMatrix::zeros(n, n);
    for ((i, j), d) in computed {
        values[(i, j)] = d;
        values[(j, i)] = d;
    }
    let ids = (0..n).map(|i| i.to_string()).collect();
    DistanceMatrix::new(values, ids)
}

/// Per-scan ranking of distances to every other scan. Row k ranks the other
/// scans by ascending distance from scan k, minimum rank 1, ties broken by
/// ascending scan index. Not necessarily symmetric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankMatrix {
    n: usize,
    ranks: Vec<u32>, // row-major, diagonal 0
    scan_ids: Vec<String>,
}

impl RankMatrix {
    /// Build directly from a full rank table (row-major, diagonal zero, each
    /// row's off-diagonal entries a permutation of 1..n-1).
    pub fn from_rows(rows: Vec<Vec<u32>>, scan_ids: Option<Vec<String>>) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::Shape("rank matrix needs n >= 2".to_string()));
        }
        let mut ranks = Vec::with_capacity(n * n);
        for (k, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Shape(format!(
                    "row {k} has {} entries, expected {n}",
                    row.len()
                )));
            }
            let mut seen = vec![false; n];
            for (j, &r) in row.iter().enumerate() {
                if j == k {
                    if r != 0 {
                        return Err(Error::Structure(format!(
                            "diagonal of row {k} must be 0"
                        )));
                    }
                    continue;
                }
                if r == 0 || r as usize > n - 1 || seen[r as usize] {
                    return Err(Error::Structure(format!(
                        "row {k} is not a permutation of 1..{}",
                        n - 1
                    )));
                }
                seen[r as usize] = true;
            }
            ranks.extend_from_slice(row);
        }
        let scan_ids = scan_ids.unwrap_or_else(|| (0..n).map(|i| i.to_string()).collect());
        if scan_ids.len() != n {
            return Err(Error::Shape(format!(
                "{} scan ids for {n} scans",
                scan_ids.len()
            )));
        }
        Ok(Self { n, ranks, scan_ids })
    }

    pub fn n_scans(&self) -> usize {
        self.n
    }

    pub fn rank(&self, k: usize, j: usize) -> u32 {
        self.ranks[k * self.n + j]
    }

    pub fn scan_ids(&self) -> &[String] {
        &self.scan_ids
    }

    pub fn row(&self, k: usize) -> &[u32] {
        &self.ranks[k * self.n..(k + 1) * self.n]
    }
}

/// Rank every row of a distance matrix.
pub fn rank_matrix(d: &DistanceMatrix) -> RankMatrix {
    let n = d.n_scans();
    let v = d.values();
    let mut ranks = vec![0u32; n * n];
    for k in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != k).collect();
        order.sort_unstable_by(|&a, &b| {
            v[(k, a)].total_cmp(&v[(k, b)]).then(a.cmp(&b))
        });
        for (pos, &j) in order.iter().enumerate() {
            ranks[k * n + j] = (pos + 1) as u32;
        }
    }
    RankMatrix {
        n,
        ranks,
        scan_ids: d.scan_ids.clone(),
    }
}

/// The reliability statistic for one procedure, with optional permutation
/// context. `rank_sum` always satisfies `n <= rank_sum <= n(n-1)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReliabilityResult {
    pub n_scans: usize,
    pub rank_sum: u64,
    pub per_scan_rank: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub null_samples: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
}

/// Sum of every scan's rank of its partner under `pairing`.
pub fn rank_sum(r: &RankMatrix, pairing: &Pairing) -> Result<ReliabilityResult> {
    let n = r.n_scans();
    if pairing.len() != n {
        return Err(Error::Structure(format!(
            "pairing covers {} scans, rank matrix has {n}",
            pairing.len()
        )));
    }
    let per_scan_rank: Vec<u32> = (0..n).map(|k| r.rank(k, pairing.partner_of(k))).collect();
    let total: u64 = per_scan_rank.iter().map(|&x| x as u64).sum();
    debug_assert!(total >= n as u64 && total <= (n * (n - 1)) as u64);
    Ok(ReliabilityResult {
        n_scans: n,
        rank_sum: total,
        per_scan_rank,
        null_samples: None,
        p_value: None,
    })
}

/// A uniformly random fixed-point-free pairing of `n` scans (n even).
pub fn random_pairing(n: usize, rng: &mut ChaCha8Rng) -> Pairing {
    debug_assert!(n >= 2 && n % 2 == 0);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut partner = vec![0usize; n];
    for pair in idx.chunks_exact(2) {
        partner[pair[0]] = pair[1];
        partner[pair[1]] = pair[0];
    }
    Pairing::new(partner).expect("shuffled pairs form a valid pairing")
}

fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate + 1);
    rng
}

/// Permutation test of the observed rank sum. For each of `b` replicates the
/// subject/session labels are re-assigned uniformly at random, inducing a
/// random pairing, and the rank sum is recomputed from the fixed rank matrix.
/// The p-value is the add-one estimator `(1 + #{null <= observed}) / (b + 1)`.
pub fn permutation_null(
    r: &RankMatrix,
    scans: &[ScanRecord],
    b: usize,
    seed: u64,
) -> Result<ReliabilityResult> {
    if b < 100 {
        return Err(Error::Argument(format!(
            "at least 100 permutation replicates are needed for a stable p-value, got {b}"
        )));
    }
    let n = r.n_scans();
    if scans.len() != n {
        return Err(Error::Structure(format!(
            "{} scan records for a {n}-scan rank matrix",
            scans.len()
        )));
    }
    let truth = crate::model::true_pairing(scans)?;
    let observed = rank_sum(r, &truth)?;

    let null_samples: Vec<u64> = (0..b as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(seed, rep);
            let pairing = random_pairing(n, &mut rng);
            (0..n).map(|k| r.rank(k, pairing.partner_of(k)) as u64).sum()
        })
        .collect();

    let at_most = null_samples
        .iter()
        .filter(|&&s| s <= observed.rank_sum)
        .count();
    let p_value = (1 + at_most) as f64 / (b + 1) as f64;
    Ok(ReliabilityResult {
        null_samples: Some(null_samples),
        p_value: Some(p_value),
        ..observed
    })
}

/// One unordered ROI pair with its edge-wise rank sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EdgeRankSum {
    pub roi_i: usize,
    pub roi_j: usize,
    pub rank_sum: u64,
}

/// Edge-wise localization: the rank-sum statistic recomputed per adjacency
/// entry, the 5th-percentile cutoff, and per-ROI counts of incident
/// low-rank-sum edges.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeLocalization {
    pub n_rois: usize,
    pub edges: Vec<EdgeRankSum>,
    pub low_edge_threshold: f64,
    pub roi_scores: Vec<u32>,
}

/// Rank of `values[partner]` among the distances `(values[k] - values[j])^2`
/// from scan k, with the standard ascending-index tie rule. Equals the
/// position the global pipeline would assign.
fn scalar_partner_rank(values: &[f64], k: usize, partner: usize) -> u64 {
    let vk = values[k];
    let dp = (vk - values[partner]) * (vk - values[partner]);
    let mut before = 0u64;
    for (j, &vj) in values.iter().enumerate() {
        if j == k || j == partner {
            continue;
        }
        let d = (vk - vj) * (vk - vj);
        if d < dp || (d == dp && j < partner) {
            before += 1;
        }
    }
    before + 1
}

/// Run the rank-sum pipeline independently on every adjacency entry of a set
/// of unthresholded connectomes.
pub fn edgewise_rank_sums(graphs: &[Connectome], pairing: &Pairing) -> Result<EdgeLocalization> {
    let n = graphs.len();
    if n < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 graphs, got {n}"
        )));
    }
    if pairing.len() != n {
        return Err(Error::Structure(format!(
            "pairing covers {} scans, got {n} graphs",
            pairing.len()
        )));
    }
    let c = graphs[0].n_rois();
    for (k, g) in graphs.iter().enumerate() {
        if g.n_rois() != c {
            return Err(Error::Shape(format!(
                "graph {k} has {} ROIs, expected {c}",
                g.n_rois()
            )));
        }
        if g.is_thresholded() {
            return Err(Error::State(format!(
                "graph {k} is thresholded; edge-wise rank sums need raw weights"
            )));
        }
    }

    let edge_list: Vec<(usize, usize)> = (0..c)
        .flat_map(|i| ((i + 1)..c).map(move |j| (i, j)))
        .collect();
    let edges: Vec<EdgeRankSum> = edge_list
        .par_iter()
        .map(|&(i, j)| {
            let values: Vec<f64> = graphs.iter().map(|g| g.weights()[(i, j)]).collect();
            let rank_sum = (0..n)
                .map(|k| scalar_partner_rank(&values, k, pairing.partner_of(k)))
                .sum();
            EdgeRankSum {
                roi_i: i,
                roi_j: j,
                rank_sum,
            }
        })
        .collect();

    let mut sums: Vec<f64> = edges.iter().map(|e| e.rank_sum as f64).collect();
    sums.sort_unstable_by(f64::total_cmp);
    let low_edge_threshold = percentile_linear(&sums, 5.0);

    let mut roi_scores = vec![0u32; c];
    for e in &edges {
        if (e.rank_sum as f64) < low_edge_threshold {
            roi_scores[e.roi_i] += 1;
            roi_scores[e.roi_j] += 1;
        }
    }
    Ok(EdgeLocalization {
        n_rois: c,
        edges,
        low_edge_threshold,
        roi_scores,
    })
}
