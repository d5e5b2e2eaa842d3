//! Rank-based test-retest reliability of functional connectomes.
//!
//! The library ingests repeated-measure fMRI time-series (NIfTI-1 or CSV),
//! infers Pearson-correlation connectomes over a parcellation, and quantifies
//! how well the resulting graphs differentiate individual subjects:
//!
//! * [`reliability`] computes pairwise graph distances, per-scan rank
//!   matrices, the rank-sum statistic with its permutation null, and
//!   edge-wise localization of the connections that carry identity.
//! * [`matching`] sorts unlabeled scans into test-retest pairs, with a
//!   genetic search for large cohorts and an exact subset-DP matcher that
//!   certifies the optimum for small ones.
//! * [`synth`] generates seeded synthetic cohorts with controllable subject
//!   separability, used as ground truth throughout the test suites.
//! * [`pipeline`] wires manifests, configs, and caching into end-to-end runs.

pub mod error;
pub mod graphs;
pub mod ingest;
pub mod matching;
pub mod model;
pub mod pipeline;
pub mod reliability;
mod stats;
pub mod synth;

pub use error::{Error, Result};
