//! Seeded synthetic test-retest cohorts with controllable subject
//! separability. Each subject gets a latent correlation matrix (a shared
//! base plus a subject-specific low-rank perturbation); each session samples
//! series whose population correlation is a session-perturbed copy of that
//! latent. Ground truth is known exactly, which makes these cohorts the
//! reference fixtures for the statistical test suites.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Pairing, ScanFormat, ScanRecord, TimeSeriesMatrix};

/// Parameters of a synthetic cohort (always two sessions per subject).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n_subjects: usize,
    pub n_rois: usize,
    pub n_timepoints: usize,
    pub tr_seconds: f64,
    /// Latent connectome distinctiveness between subjects.
    pub subject_signal: f64,
    /// Within-subject perturbation between sessions.
    pub session_noise: f64,
    pub seed: u64,
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 {
            return Err(Error::Argument("need at least one subject".to_string()));
        }
        if self.n_rois < 2 {
            return Err(Error::Argument(format!(
                "need at least 2 ROIs, got {}",
                self.n_rois
            )));
        }
        if self.n_timepoints < self.n_rois + 2 {
            return Err(Error::Argument(format!(
                "need at least n_rois + 2 = {} timepoints to sample a full-rank correlation structure, got {}",
                self.n_rois + 2,
                self.n_timepoints
            )));
        }
        if !self.tr_seconds.is_finite() || self.tr_seconds <= 0.0 {
            return Err(Error::Argument("tr_seconds must be positive".to_string()));
        }
        if self.subject_signal < 0.0 || self.session_noise < 0.0 {
            return Err(Error::Argument(
                "signal and noise magnitudes must be nonnegative".to_string(),
            ));
        }
        Ok(())
    }
}

/// A generated cohort: manifest-compatible records, matching series, and the
/// ground-truth pairing.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub scans: Vec<ScanRecord>,
    pub series: Vec<TimeSeriesMatrix>,
    pub pairing: Pairing,
}

impl From<Cohort> for crate::pipeline::Dataset {
    fn from(c: Cohort) -> Self {
        crate::pipeline::Dataset {
            scans: c.scans,
            series: c.series,
            voxel_coords: None,
            external_parcellation: None,
            warnings: Vec::new(),
        }
    }
}

fn standard_normal_vector(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

fn unit_vector(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let mut v = standard_normal_vector(n, rng);
    let norm = v.norm();
    if norm > 0.0 {
        v /= norm;
    } else {
        v[0] = 1.0;
    }
    v
}

/// Project a symmetric matrix to (approximately) the nearest valid
/// correlation matrix by alternating eigenvalue clipping with diagonal
/// normalization, up to 100 rounds or a 1e-8 sup-norm change.
pub fn project_to_correlation(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut a = (m + m.transpose()) * 0.5;
    for _ in 0..100 {
        let prev = a.clone();
        // clip negative eigenvalues
        let eig = SymmetricEigen::new(a);
        let clipped = eig.eigenvalues.map(|l| l.max(0.0));
        a = &eig.eigenvectors
            * DMatrix::from_diagonal(&clipped)
            * eig.eigenvectors.transpose();
        // normalize the diagonal back to one
        let mut scale = DVector::zeros(n);
        for i in 0..n {
            scale[i] = if a[(i, i)] > 1e-12 {
                1.0 / a[(i, i)].sqrt()
            } else {
                1.0
            };
        }
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] *= scale[i] * scale[j];
            }
            a[(i, i)] = 1.0;
        }
        let change = (&a - &prev).amax();
        if change < 1e-8 {
            break;
        }
    }
    // exact symmetry and bounded off-diagonal
    let mut out = (&a + a.transpose()) * 0.5;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out[(i, j)] = out[(i, j)].clamp(-1.0, 1.0);
            } else {
                out[(i, j)] = 1.0;
            }
        }
    }
    out
}

/// Shared base structure of a cohort: a low-rank factor covariance
/// `L L^T + I` before diagonal normalization.
fn base_factors(spec: &CohortSpec) -> DMatrix<f64> {
    let c = spec.n_rois;
    let k = (c - 1).clamp(1, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(0);
    DMatrix::from_fn(c, k, |_, _| {
        let x: f64 = StandardNormal.sample(&mut rng);
        x * 0.8
    })
}

/// One valid correlation matrix per subject: the shared base covariance plus
/// a subject-specific rank-2 symmetric perturbation scaled by
/// `subject_signal` (realized as a tilt of the leading factor, so the result
/// stays positive semidefinite), projected back to the correlation cone.
/// Deterministic given the spec seed.
pub fn generate_latent_connectomes(spec: &CohortSpec) -> Result<Vec<DMatrix<f64>>> {
    spec.validate()?;
    let factors = base_factors(spec);
    let c = spec.n_rois;
    let mut out = Vec::with_capacity(spec.n_subjects);
    let leading_norm = factors.column(0).norm();
    for subject in 0..spec.n_subjects {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(1 + subject as u64);
        // tilt the leading factor by a subject-specific direction, relative
        // to its own magnitude; sigma then differs from the base by the
        // rank-2 symmetric update s(u l1^T + l1 u^T) + s^2 u u^T
        let u = unit_vector(c, &mut rng) * (spec.subject_signal * leading_norm);
        let mut tilted = factors.clone();
        for i in 0..c {
            tilted[(i, 0)] += u[i];
        }
        let mut sigma = &tilted * tilted.transpose();
        for i in 0..c {
            sigma[(i, i)] += 1.0;
        }
        out.push(project_to_correlation(&sigma));
    }
    Ok(out)
}

/// Cholesky factor of `target` with escalating diagonal jitter; the
/// projection can leave the matrix semidefinite at machine precision.
fn cholesky_with_jitter(target: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    for jitter in [0.0, 1e-12, 1e-10, 1e-8, 1e-6] {
        let mut m = target.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            return Ok(chol.unpack());
        }
    }
    Err(Error::DegenerateSpec(
        "correlation factorization failed even with jitter".to_string(),
    ))
}

/// Draw a C x N series whose population correlation is a session-perturbed
/// copy of `latent` (perturbation magnitude `session_noise`), by factorizing
/// the target matrix and transforming independent standard normal draws.
pub fn sample_session_timeseries(
    latent: &DMatrix<f64>,
    spec: &CohortSpec,
    rng: &mut ChaCha8Rng,
) -> Result<TimeSeriesMatrix> {
    let c = latent.nrows();
    let target = if spec.session_noise > 0.0 {
        let u = unit_vector(c, rng);
        let v = unit_vector(c, rng);
        let perturbation = (&u * u.transpose() - &v * v.transpose()) * spec.session_noise;
        project_to_correlation(&(latent + perturbation))
    } else {
        latent.clone()
    };
    let factor = cholesky_with_jitter(&target)?;
    let n = spec.n_timepoints;
    let z = DMatrix::from_fn(c, n, |_, _| StandardNormal.sample(rng));
    let values = factor * z;
    let ids = (1..=c).map(|i| format!("roi{i:04}")).collect();
    TimeSeriesMatrix::new(values, ids, spec.tr_seconds)
}

fn session_rng(seed: u64, subject: usize, session: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1_000_000 + 2 * subject as u64 + (session as u64 - 1));
    rng
}

fn scan_record(spec_tr: f64, n_timepoints: usize, subject: usize, session: u32) -> ScanRecord {
    let subject_id = format!("sub{:03}", subject + 1);
    let scan_id = format!("{subject_id}_ses{session}");
    ScanRecord {
        path: format!("{scan_id}.csv").into(),
        subject_id,
        scan_id,
        session_index: session,
        tr_seconds: spec_tr,
        format: ScanFormat::Csv,
        n_timepoints,
    }
}

/// Generate the full cohort: 2 x n_subjects scans in (subject, session)
/// order with the ground-truth pairing.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Cohort> {
    let latents = generate_latent_connectomes(spec)?;
    let mut scans = Vec::with_capacity(2 * spec.n_subjects);
    let mut series = Vec::with_capacity(2 * spec.n_subjects);
    for (subject, latent) in latents.iter().enumerate() {
        for session in 1..=2u32 {
            let mut rng = session_rng(spec.seed, subject, session);
            series.push(sample_session_timeseries(latent, spec, &mut rng)?);
            scans.push(scan_record(
                spec.tr_seconds,
                spec.n_timepoints,
                subject,
                session,
            ));
        }
    }
    let pairing = crate::model::true_pairing(&scans)?;
    Ok(Cohort {
        scans,
        series,
        pairing,
    })
}

/// A cohort in which exactly one edge carries all subject identity: the
/// ROI pair `edge` is correlated with a subject-specific strength (stable
/// across sessions), every other ROI is independent noise. Used to validate
/// edge-wise localization.
pub fn single_edge_cohort(
    n_subjects: usize,
    n_rois: usize,
    n_timepoints: usize,
    tr_seconds: f64,
    edge: (usize, usize),
    seed: u64,
) -> Result<Cohort> {
    if n_subjects == 0 {
        return Err(Error::Argument("need at least one subject".to_string()));
    }
    if n_rois < 2 || edge.0 >= n_rois || edge.1 >= n_rois || edge.0 == edge.1 {
        return Err(Error::Argument(format!(
            "edge {edge:?} invalid for {n_rois} ROIs"
        )));
    }
    if n_timepoints < 4 {
        return Err(Error::Argument("need at least 4 timepoints".to_string()));
    }
    let mut scans = Vec::new();
    let mut series = Vec::new();
    for subject in 0..n_subjects {
        // subject-specific edge strength, spread over [-0.85, 0.85]
        let rho = if n_subjects == 1 {
            0.5
        } else {
            -0.85 + 1.7 * subject as f64 / (n_subjects - 1) as f64
        };
        for session in 1..=2u32 {
            let mut rng = session_rng(seed, subject, session);
            let mut values = DMatrix::from_fn(n_rois, n_timepoints, |_, _| {
                StandardNormal.sample(&mut rng)
            });
            for t in 0..n_timepoints {
                let noise: f64 = StandardNormal.sample(&mut rng);
                values[(edge.1, t)] =
                    rho * values[(edge.0, t)] + (1.0 - rho * rho).sqrt() * noise;
            }
            let ids = (1..=n_rois).map(|i| format!("roi{i:04}")).collect();
            series.push(TimeSeriesMatrix::new(values, ids, tr_seconds)?);
            scans.push(scan_record(tr_seconds, n_timepoints, subject, session));
        }
    }
    let pairing = crate::model::true_pairing(&scans)?;
    Ok(Cohort {
        scans,
        series,
        pairing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::pearson_adjacency;
    use crate::model::DistanceMetric;
    use crate::reliability::{distance_matrix, permutation_null, rank_matrix, rank_sum};

    fn spec(
        n_subjects: usize,
        n_rois: usize,
        n_timepoints: usize,
        signal: f64,
        noise: f64,
        seed: u64,
    ) -> CohortSpec {
        CohortSpec {
            n_subjects,
            n_rois,
            n_timepoints,
            tr_seconds: 2.0,
            subject_signal: signal,
            session_noise: noise,
            seed,
        }
    }

    fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
        SymmetricEigen::new(m.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn zero_signal_gives_identical_latents() {
        let latents = generate_latent_connectomes(&spec(4, 8, 40, 0.0, 0.1, 3)).unwrap();
        for l in &latents[1..] {
            assert_eq!(l, &latents[0]);
        }
    }

    #[test]
    fn latents_are_valid_correlation_matrices() {
        let latents = generate_latent_connectomes(&spec(5, 10, 40, 1.5, 0.1, 11)).unwrap();
        for l in &latents {
            for i in 0..10 {
                assert_eq!(l[(i, i)], 1.0);
                for j in 0..10 {
                    assert_eq!(l[(i, j)], l[(j, i)]);
                    assert!(l[(i, j)].abs() <= 1.0 + 1e-12);
                }
            }
            assert!(min_eigenvalue(l) >= -1e-10);
        }
    }

    #[test]
    fn latents_are_deterministic_and_seed_sensitive() {
        let a = generate_latent_connectomes(&spec(3, 6, 30, 0.8, 0.1, 7)).unwrap();
        let b = generate_latent_connectomes(&spec(3, 6, 30, 0.8, 0.1, 7)).unwrap();
        assert_eq!(a, b);
        let c = generate_latent_connectomes(&spec(3, 6, 30, 0.8, 0.1, 8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sample_correlation_converges_to_latent() {
        let s = spec(1, 4, 10_000, 0.5, 0.0, 21);
        let latent = generate_latent_connectomes(&s).unwrap().remove(0);
        let mut rng = session_rng(s.seed, 0, 1);
        let ts = sample_session_timeseries(&latent, &s, &mut rng).unwrap();
        let g = pearson_adjacency(&ts).unwrap();
        for i in 0..4 {
            for j in (i + 1)..4 {
                let dev = (g.weights()[(i, j)] - latent[(i, j)]).abs();
                assert!(dev < 0.05, "({i},{j}): dev {dev}");
            }
        }
    }

    #[test]
    fn identity_latent_gives_near_zero_correlations() {
        let s = spec(1, 6, 5000, 0.0, 0.0, 2);
        let latent = DMatrix::identity(6, 6);
        let mut rng = session_rng(s.seed, 0, 1);
        let ts = sample_session_timeseries(&latent, &s, &mut rng).unwrap();
        let g = pearson_adjacency(&ts).unwrap();
        let max_offdiag = g
            .upper_triangle()
            .into_iter()
            .map(f64::abs)
            .fold(0.0, f64::max);
        assert!(max_offdiag < 0.08, "max |r| = {max_offdiag}");
    }

    #[test]
    fn fixed_rng_state_reproduces_series() {
        let s = spec(1, 5, 50, 0.4, 0.3, 9);
        let latent = generate_latent_connectomes(&s).unwrap().remove(0);
        let mut r1 = session_rng(s.seed, 0, 2);
        let mut r2 = session_rng(s.seed, 0, 2);
        let a = sample_session_timeseries(&latent, &s, &mut r1).unwrap();
        let b = sample_session_timeseries(&latent, &s, &mut r2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cohort_has_expected_shape_and_pairing() {
        let c = generate_cohort(&spec(20, 6, 40, 0.5, 0.1, 1)).unwrap();
        assert_eq!(c.scans.len(), 40);
        assert_eq!(c.series.len(), 40);
        assert_eq!(c.pairing.len(), 40);
        assert_eq!(c.pairing.pairs().len(), 20);
        // interleaved (subject, session) order pairs adjacent scans
        assert_eq!(c.pairing.partner_of(0), 1);
        let report = crate::model::validate_dataset(&c.scans);
        // only missing-file findings are expected for in-memory cohorts
        assert!(report
            .iter()
            .all(|v| matches!(v, crate::model::Violation::MissingFile { .. })));
    }

    #[test]
    fn strong_signal_cohort_is_perfectly_separable() {
        let c = generate_cohort(&spec(5, 16, 120, 1.0, 0.02, 40)).unwrap();
        let graphs: Vec<_> = c
            .series
            .iter()
            .map(|ts| pearson_adjacency(ts).unwrap())
            .collect();
        let dm = distance_matrix(&graphs, DistanceMetric::SquaredFrobenius).unwrap();
        let rm = rank_matrix(&dm);
        let res = rank_sum(&rm, &c.pairing).unwrap();
        assert_eq!(res.rank_sum, 10);
    }

    #[test]
    fn null_cohort_p_values_are_rarely_small() {
        let mut calibrated = 0;
        let runs = 50;
        for seed in 0..runs {
            let c = generate_cohort(&spec(6, 8, 40, 0.0, 0.3, 100 + seed)).unwrap();
            let graphs: Vec<_> = c
                .series
                .iter()
                .map(|ts| pearson_adjacency(ts).unwrap())
                .collect();
            let dm = distance_matrix(&graphs, DistanceMetric::SquaredFrobenius).unwrap();
            let rm = rank_matrix(&dm);
            let res = permutation_null(&rm, &c.scans, 199, seed).unwrap();
            if res.p_value.unwrap() > 0.05 {
                calibrated += 1;
            }
        }
        assert!(
            calibrated >= runs * 9 / 10,
            "only {calibrated}/{runs} null runs had p > 0.05"
        );
    }

    #[test]
    fn separability_responds_to_signal_and_noise() {
        // mean rank sum over seeds: nonincreasing in signal, nondecreasing
        // in noise
        let signals = [0.05, 0.5, 1.5];
        let noises = [0.05, 0.6, 1.5];
        let mut table = [[0.0f64; 3]; 3];
        for (si, &signal) in signals.iter().enumerate() {
            for (ni, &noise) in noises.iter().enumerate() {
                let mut acc = 0.0;
                for seed in 0..4 {
                    let c =
                        generate_cohort(&spec(6, 12, 60, signal, noise, 500 + seed)).unwrap();
                    let graphs: Vec<_> = c
                        .series
                        .iter()
                        .map(|ts| pearson_adjacency(ts).unwrap())
                        .collect();
                    let dm =
                        distance_matrix(&graphs, DistanceMetric::SquaredFrobenius).unwrap();
                    let rm = rank_matrix(&dm);
                    acc += rank_sum(&rm, &c.pairing).unwrap().rank_sum as f64;
                }
                table[si][ni] = acc / 4.0;
            }
        }
        for ni in 0..3 {
            assert!(
                table[0][ni] >= table[2][ni],
                "rank sum should drop with signal: noise {ni}, {table:?}"
            );
        }
        for si in 0..3 {
            assert!(
                table[si][2] >= table[si][0],
                "rank sum should rise with noise: signal {si}, {table:?}"
            );
        }
    }

    #[test]
    fn single_edge_cohort_is_well_formed() {
        let c = single_edge_cohort(2, 2, 30, 2.0, (0, 1), 5).unwrap();
        assert_eq!(c.scans.len(), 4);
        assert_eq!(c.series[0].n_signals(), 2);
        assert!(single_edge_cohort(2, 4, 30, 2.0, (3, 3), 5).is_err());
    }

    #[test]
    fn spec_validation_bounds() {
        assert!(spec(0, 8, 40, 0.1, 0.1, 0).validate().is_err());
        assert!(spec(2, 1, 40, 0.1, 0.1, 0).validate().is_err());
        assert!(spec(2, 8, 9, 0.1, 0.1, 0).validate().is_err()); // N < C + 2
        assert!(spec(2, 8, 10, 0.1, 0.1, 0).validate().is_ok());
        assert!(spec(2, 8, 40, -0.1, 0.1, 0).validate().is_err());
    }
}
