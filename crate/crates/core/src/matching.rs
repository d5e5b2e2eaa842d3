//! Unsupervised sorting of unlabeled scans into test-retest pairs by
//! minimizing the rank sum, with a genetic search for large cohorts and an
//! exact subset-DP matcher that certifies the optimum for small ones, plus
//! the acquisition-time and subject-count sweeps built on top.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Pairing, PipelineConfig};
use crate::pipeline::{self, Dataset};
use crate::reliability::{distance_matrix, random_pairing, rank_matrix, RankMatrix};

/// Largest scan count the exact matcher accepts; the DP table grows as 2^n.
pub const EXACT_MAX_SCANS: usize = 26;

/// Genetic-search parameters. All defaults are deterministic-by-seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations_max: usize,
    /// Probability that a freshly bred individual is mutated.
    pub mutation_rate: f64,
    pub elitism_count: usize,
    /// Stop after this many generations without improvement.
    pub stall_generations: usize,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population_size: 200,
            generations_max: 500,
            mutation_rate: 0.2,
            elitism_count: 4,
            stall_generations: 200,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 * self.elitism_count || self.population_size < 2 {
            return Err(Error::Argument(format!(
                "population {} too small for elitism {}",
                self.population_size, self.elitism_count
            )));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(Error::Argument(format!(
                "mutation rate {} outside [0, 1]",
                self.mutation_rate
            )));
        }
        Ok(())
    }

    /// Derive an independent seed for a sweep job.
    pub fn with_derived_seed(&self, job: u64) -> GaConfig {
        GaConfig {
            seed: self
                .seed
                .wrapping_add(job.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            ..self.clone()
        }
    }
}

/// The optimization objective: the rank sum of the proposed pairing,
/// identical to the reliability statistic applied to it.
pub fn pairing_fitness(r: &RankMatrix, p: &Pairing) -> Result<u64> {
    let n = r.n_scans();
    if p.len() != n {
        return Err(Error::Structure(format!(
            "pairing covers {} scans, rank matrix has {n}",
            p.len()
        )));
    }
    Ok((0..n).map(|k| r.rank(k, p.partner_of(k)) as u64).sum())
}

fn partner_fitness(r: &RankMatrix, partner: &[usize]) -> u64 {
    partner
        .iter()
        .enumerate()
        .map(|(k, &m)| r.rank(k, m) as u64)
        .sum()
}

/// Symmetrized pair cost: rank(k, m) + rank(m, k). A pairing's fitness is
/// the sum of this over its pairs.
fn pair_cost(r: &RankMatrix, k: usize, m: usize) -> u32 {
    r.rank(k, m) + r.rank(m, k)
}

/// Globally minimal-fitness pairing by dynamic programming over scan
/// subsets. Ties are broken by the lexicographically smallest partner array.
pub fn exact_min_pairing(r: &RankMatrix) -> Result<(Pairing, u64)> {
    let n = r.n_scans();
    if n % 2 != 0 {
        return Err(Error::Argument(format!(
            "cannot pair an odd number of scans ({n})"
        )));
    }
    if n > EXACT_MAX_SCANS {
        return Err(Error::SizeLimit {
            n,
            max: EXACT_MAX_SCANS,
        });
    }
    let full: usize = (1usize << n) - 1;
    // dp[mask] = minimal cost of perfectly matching the scans in `mask`
    let mut dp = vec![u32::MAX; 1usize << n];
    dp[0] = 0;
    for mask in 1..=full {
        if mask.count_ones() % 2 != 0 {
            continue;
        }
        let i = mask.trailing_zeros() as usize;
        let rest = mask & !(1 << i);
        let mut best = u32::MAX;
        let mut mm = rest;
        while mm != 0 {
            let j = mm.trailing_zeros() as usize;
            mm &= mm - 1;
            let sub = rest & !(1 << j);
            if dp[sub] != u32::MAX {
                let c = dp[sub] + pair_cost(r, i, j);
                if c < best {
                    best = c;
                }
            }
        }
        dp[mask] = best;
    }

    // Reconstruct: at each step the lowest unmatched scan takes its smallest
    // optimal partner, which yields the lexicographically smallest array.
    let mut partner = vec![usize::MAX; n];
    let mut mask = full;
    while mask != 0 {
        let i = mask.trailing_zeros() as usize;
        let rest = mask & !(1 << i);
        let mut chosen = None;
        let mut mm = rest;
        while mm != 0 {
            let j = mm.trailing_zeros() as usize;
            mm &= mm - 1;
            let sub = rest & !(1 << j);
            if dp[sub] != u32::MAX && dp[sub] + pair_cost(r, i, j) == dp[mask] {
                chosen = Some(j);
                break;
            }
        }
        let j = chosen.expect("reachable optimal submask");
        partner[i] = j;
        partner[j] = i;
        mask = rest & !(1 << j);
    }
    Ok((Pairing::new(partner)?, dp[full] as u64))
}

/// Result of one genetic search.
#[derive(Debug, Clone, PartialEq)]
pub struct GaResult {
    pub pairing: Pairing,
    pub fitness: u64,
    pub generations_used: usize,
    /// Best fitness after each generation (index 0 = initial population);
    /// nonincreasing thanks to elitism.
    pub best_history: Vec<u64>,
}

fn tournament(rng: &mut ChaCha8Rng, fitnesses: &[u64]) -> usize {
    let a = rng.random_range(0..fitnesses.len());
    let b = rng.random_range(0..fitnesses.len());
    if (fitnesses[b], b) < (fitnesses[a], a) {
        b
    } else {
        a
    }
}

/// Child inherits the pairs common to both parents; the remaining scans are
/// completed by greedy cheapest-cost repair: repeatedly match the globally
/// cheapest unmatched pair. Rank costs are small integers, so cost ties are
/// common; breaking them at random keeps the offspring diverse.
fn crossover(
    r: &RankMatrix,
    pa: &[usize],
    pb: &[usize],
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let n = pa.len();
    let mut child = vec![usize::MAX; n];
    for k in 0..n {
        if pa[k] == pb[k] {
            child[k] = pa[k];
        }
    }
    let mut unmatched: Vec<usize> = (0..n).filter(|&k| child[k] == usize::MAX).collect();
    let mut ties: Vec<(usize, usize)> = Vec::new();
    while !unmatched.is_empty() {
        let mut best_cost = u32::MAX;
        ties.clear();
        for (a, &k) in unmatched.iter().enumerate() {
            for &j in &unmatched[a + 1..] {
                let c = pair_cost(r, k, j);
                if c < best_cost {
                    best_cost = c;
                    ties.clear();
                }
                if c == best_cost {
                    ties.push((k, j));
                }
            }
        }
        let (k, j) = ties[rng.random_range(0..ties.len())];
        child[k] = j;
        child[j] = k;
        unmatched.retain(|&x| x != k && x != j);
    }
    child
}

/// The 15 perfect matchings of six labeled elements.
const SIX_MATCHINGS: [[(usize, usize); 3]; 15] = [
    [(0, 1), (2, 3), (4, 5)],
    [(0, 1), (2, 4), (3, 5)],
    [(0, 1), (2, 5), (3, 4)],
    [(0, 2), (1, 3), (4, 5)],
    [(0, 2), (1, 4), (3, 5)],
    [(0, 2), (1, 5), (3, 4)],
    [(0, 3), (1, 2), (4, 5)],
    [(0, 3), (1, 4), (2, 5)],
    [(0, 3), (1, 5), (2, 4)],
    [(0, 4), (1, 2), (3, 5)],
    [(0, 4), (1, 3), (2, 5)],
    [(0, 4), (1, 5), (2, 3)],
    [(0, 5), (1, 2), (3, 4)],
    [(0, 5), (1, 3), (2, 4)],
    [(0, 5), (1, 4), (2, 3)],
];

/// Rearrange the partners of a few randomly chosen pairs. Three pairs are
/// rematched to the cheapest non-identical matching of their six scans
/// (which subsumes the plain two-pair swap); with fewer pairs available the
/// better of the two possible two-pair swaps is applied. Single pair-swap
/// moves alone get stuck on rank matrices whose optimum differs from the
/// nearest local optimum by a three-pair rearrangement.
fn mutate(r: &RankMatrix, partner: &mut [usize], rng: &mut ChaCha8Rng) {
    let reps: Vec<usize> = (0..partner.len()).filter(|&k| k < partner[k]).collect();
    if reps.len() >= 3 {
        // three distinct pair indices
        let mut picks = [0usize; 3];
        picks[0] = rng.random_range(0..reps.len());
        loop {
            picks[1] = rng.random_range(0..reps.len());
            if picks[1] != picks[0] {
                break;
            }
        }
        loop {
            picks[2] = rng.random_range(0..reps.len());
            if picks[2] != picks[0] && picks[2] != picks[1] {
                break;
            }
        }
        let mut scans = [0usize; 6];
        for (slot, &p) in picks.iter().enumerate() {
            scans[2 * slot] = reps[p];
            scans[2 * slot + 1] = partner[reps[p]];
        }
        // current matching is (0,1)(2,3)(4,5): skip it, take the cheapest
        // of the remaining 14
        let mut best = (u32::MAX, 0usize);
        for (idx, matching) in SIX_MATCHINGS.iter().enumerate().skip(1) {
            let cost: u32 = matching
                .iter()
                .map(|&(x, y)| pair_cost(r, scans[x], scans[y]))
                .sum();
            if cost < best.0 {
                best = (cost, idx);
            }
        }
        for &(x, y) in &SIX_MATCHINGS[best.1] {
            partner[scans[x]] = scans[y];
            partner[scans[y]] = scans[x];
        }
        return;
    }
    if reps.len() < 2 {
        return;
    }
    let (a, b) = (reps[0], partner[reps[0]]);
    let (c, d) = (reps[1], partner[reps[1]]);
    let cross = pair_cost(r, a, c) + pair_cost(r, b, d);
    let straight = pair_cost(r, a, d) + pair_cost(r, b, c);
    if cross <= straight {
        partner[a] = c;
        partner[c] = a;
        partner[b] = d;
        partner[d] = b;
    } else {
        partner[a] = d;
        partner[d] = a;
        partner[b] = c;
        partner[c] = b;
    }
}

/// Genetic search for the minimum-rank-sum pairing: partner-array
/// representation, binary tournament selection, common-pair crossover with
/// greedy repair, pair-rearrangement mutation, and elitism. Stops at the
/// generation cap, after `stall_generations` without improvement, or when
/// the best fitness reaches the provable minimum n. Deterministic given the
/// seed.
pub fn ga_sort(r: &RankMatrix, cfg: &GaConfig) -> Result<GaResult> {
    let n = r.n_scans();
    if n < 4 || n % 2 != 0 {
        return Err(Error::Argument(format!(
            "genetic sort needs an even number of scans >= 4, got {n}"
        )));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pop = cfg.population_size;
    let mut population: Vec<Vec<usize>> = (0..pop)
        .map(|_| random_pairing(n, &mut rng).partner_array().to_vec())
        .collect();
    let mut fitnesses: Vec<u64> = population.iter().map(|p| partner_fitness(r, p)).collect();

    let best_of = |population: &[Vec<usize>], fitnesses: &[u64]| -> (usize, u64) {
        let mut bi = 0;
        for i in 1..population.len() {
            if fitnesses[i] < fitnesses[bi] {
                bi = i;
            }
        }
        (bi, fitnesses[bi])
    };
    let (bi, bf) = best_of(&population, &fitnesses);
    let mut best = (population[bi].clone(), bf);
    let mut history = vec![best.1];
    let mut stall = 0usize;
    let mut generations_used = 0usize;

    for gen in 0..cfg.generations_max {
        if best.1 == n as u64 {
            break; // provable lower bound reached
        }
        generations_used = gen + 1;
        let mut order: Vec<usize> = (0..pop).collect();
        order.sort_by_key(|&i| (fitnesses[i], i));
        // elites are the top distinct individuals, which keeps some
        // diversity once the population starts converging
        let mut next: Vec<Vec<usize>> = Vec::with_capacity(pop);
        for &i in &order {
            if next.len() >= cfg.elitism_count {
                break;
            }
            if !next.contains(&population[i]) {
                next.push(population[i].clone());
            }
        }
        while next.len() < pop {
            let a = tournament(&mut rng, &fitnesses);
            let b = tournament(&mut rng, &fitnesses);
            let mut child = crossover(r, &population[a], &population[b], &mut rng);
            if rng.random::<f64>() < cfg.mutation_rate {
                mutate(r, &mut child, &mut rng);
            }
            next.push(child);
        }
        population = next;
        fitnesses = population.iter().map(|p| partner_fitness(r, p)).collect();
        let (bi, bf) = best_of(&population, &fitnesses);
        if bf < best.1 {
            best = (population[bi].clone(), bf);
            stall = 0;
        } else {
            stall += 1;
        }
        history.push(best.1);
        if stall >= cfg.stall_generations {
            break;
        }
    }

    Ok(GaResult {
        pairing: Pairing::new(best.0)?,
        fitness: best.1,
        generations_used,
        best_history: history,
    })
}

/// Outcome of the sorter at one time-grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SortPoint {
    pub minutes: f64,
    pub ga_fitness: u64,
    pub exact_fitness: Option<u64>,
    pub perfect: bool,
}

/// Result of a minimum-time-to-perfect-sort search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinTimeResult {
    /// Smallest grid point whose best pairing equals the ground truth.
    pub minutes: Option<f64>,
    pub points: Vec<SortPoint>,
}

/// Whole-minute grid 1..=floor(shortest scan duration / 60).
pub fn default_time_grid(ds: &Dataset) -> Vec<f64> {
    let max_minutes = (ds.shortest_duration_seconds() / 60.0).floor() as usize;
    (1..=max_minutes.max(1)).map(|m| m as f64).collect()
}

/// For each window length in `grid_minutes` (ascending), rebuild the graphs
/// and rank matrix, sort without labels, and report the smallest window
/// whose best pairing equals the ground truth. The exact matcher certifies
/// (and supplies) the optimum when the cohort is small enough for it.
pub fn min_time_to_perfect_sort(
    ds: &Dataset,
    config: &PipelineConfig,
    grid_minutes: &[f64],
    ga: &GaConfig,
) -> Result<MinTimeResult> {
    if grid_minutes.is_empty() {
        return Err(Error::Argument("empty time grid".to_string()));
    }
    if grid_minutes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument(
            "time grid must be strictly ascending".to_string(),
        ));
    }
    let truth = crate::model::true_pairing(&ds.scans)?;
    let parc = pipeline::parcellation_for(ds, config, config.n_rois_target)?;
    let mut points = Vec::new();
    let mut minutes = None;
    for (gi, &t_min) in grid_minutes.iter().enumerate() {
        let wrap = |e: Error| Error::GridPoint {
            minutes: t_min,
            source: Box::new(e),
        };
        let window = t_min * 60.0;
        let graphs =
            pipeline::build_connectomes_windowed(ds, &parc, config, Some(window)).map_err(wrap)?;
        let dm = distance_matrix(&graphs, config.distance_metric).map_err(wrap)?;
        let rm = rank_matrix(&dm);
        let ga_result = ga_sort(&rm, &ga.with_derived_seed(gi as u64)).map_err(wrap)?;
        let n = rm.n_scans();
        let exact = if n <= EXACT_MAX_SCANS {
            Some(exact_min_pairing(&rm).map_err(wrap)?)
        } else {
            None
        };
        // the certified optimum is the best pairing whenever it exists
        let best_pairing = exact
            .as_ref()
            .map(|(p, _)| p)
            .unwrap_or(&ga_result.pairing);
        let perfect = best_pairing.partner_array() == truth.partner_array();
        points.push(SortPoint {
            minutes: t_min,
            ga_fitness: ga_result.fitness,
            exact_fitness: exact.map(|(_, f)| f),
            perfect,
        });
        if perfect {
            minutes = Some(t_min);
            break;
        }
    }
    Ok(MinTimeResult { minutes, points })
}

/// One row of a subject-subsample sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsampleRow {
    pub n_subjects: usize,
    /// Minimal perfect-sort time per repeat (None = never perfect).
    pub runs: Vec<Option<f64>>,
    /// Median over repeats, midpoint convention for even counts; None when
    /// the median position falls on a failed run.
    pub median_minutes: Option<f64>,
}

/// Median with the midpoint-of-central-order-statistics convention; failed
/// runs sort last.
pub fn median_minutes(runs: &[Option<f64>]) -> Option<f64> {
    if runs.is_empty() {
        return None;
    }
    let mut sorted: Vec<Option<f64>> = runs.to_vec();
    sorted.sort_by(|a, b| match (a, b) {
        (Some(x), Some(y)) => x.total_cmp(y),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    let m = sorted.len();
    if m % 2 == 1 {
        sorted[m / 2]
    } else {
        match (sorted[m / 2 - 1], sorted[m / 2]) {
            (Some(a), Some(b)) => Some((a + b) / 2.0),
            _ => None,
        }
    }
}

/// For each subject count, draw `repeats` random subject subsets, run the
/// minimum-time search on each, and report the median minimal time. When a
/// count equals the full cohort there is only one subset, so a single run is
/// made. All randomness derives from (seed, job index).
#[allow(clippy::too_many_arguments)]
pub fn subject_subsample_sweep(
    ds: &Dataset,
    config: &PipelineConfig,
    n_values: &[usize],
    repeats: usize,
    seed: u64,
    ga: &GaConfig,
    grid_minutes: &[f64],
) -> Result<Vec<SubsampleRow>> {
    let subjects = ds.subjects();
    if repeats == 0 {
        return Err(Error::Argument("repeats must be positive".to_string()));
    }
    let mut rows = Vec::with_capacity(n_values.len());
    for (ni, &n_subj) in n_values.iter().enumerate() {
        if n_subj == 0 || n_subj > subjects.len() {
            return Err(Error::Argument(format!(
                "subset size {n_subj} invalid for a cohort of {} subjects",
                subjects.len()
            )));
        }
        let effective_repeats = if n_subj == subjects.len() { 1 } else { repeats };
        let mut runs = Vec::with_capacity(effective_repeats);
        for rep in 0..effective_repeats {
            let job = (ni * repeats + rep) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(job + 1);
            let mut pool = subjects.clone();
            pool.shuffle(&mut rng);
            let subset: HashSet<String> = pool.into_iter().take(n_subj).collect();
            let sub = ds.subset_by_subjects(&subset);
            let result =
                min_time_to_perfect_sort(&sub, config, grid_minutes, &ga.with_derived_seed(job))?;
            runs.push(result.minutes);
        }
        rows.push(SubsampleRow {
            n_subjects: n_subj,
            median_minutes: median_minutes(&runs),
            runs,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use crate::reliability::DistanceMatrix;

    fn random_rank_matrix(n: usize, seed: u64) -> RankMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v: f64 = rng.random_range(0.0..1.0);
                values[(i, j)] = v;
                values[(j, i)] = v;
            }
        }
        let d =
            DistanceMatrix::new(values, (0..n).map(|i| i.to_string()).collect()).unwrap();
        rank_matrix(&d)
    }

    /// Rank matrix in which every scan's true partner (k ^ 1) is rank 1.
    fn separable_rank_matrix(n: usize) -> RankMatrix {
        let mut values = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = if i / 2 == j / 2 { 0.01 } else { 3.0 + (i * n + j) as f64 * 0.01 };
                values[(i, j)] = v;
                values[(j, i)] = v;
            }
        }
        let d =
            DistanceMatrix::new(values, (0..n).map(|i| i.to_string()).collect()).unwrap();
        rank_matrix(&d)
    }

    fn interleaved(n: usize) -> Pairing {
        Pairing::new((0..n).map(|k| k ^ 1).collect()).unwrap()
    }

    /// Enumerate every fixed-point-free involution in lexicographic order of
    /// the partner array and return the minimum (fitness, array).
    fn brute_force_min(r: &RankMatrix) -> (Vec<usize>, u64) {
        fn recurse(
            r: &RankMatrix,
            partner: &mut Vec<usize>,
            best: &mut Option<(Vec<usize>, u64)>,
        ) {
            let n = partner.len();
            if let Some(k) = (0..n).find(|&k| partner[k] == usize::MAX) {
                for j in (k + 1)..n {
                    if partner[j] == usize::MAX {
                        partner[k] = j;
                        partner[j] = k;
                        recurse(r, partner, best);
                        partner[k] = usize::MAX;
                        partner[j] = usize::MAX;
                    }
                }
            } else {
                let fit = partner_fitness(r, partner);
                let better = match best {
                    None => true,
                    // strict improvement only: first found is lex-smallest
                    Some((_, bf)) => fit < *bf,
                };
                if better {
                    *best = Some((partner.clone(), fit));
                }
            }
        }
        let mut partner = vec![usize::MAX; r.n_scans()];
        let mut best = None;
        recurse(r, &mut partner, &mut best);
        best.unwrap()
    }

    #[test]
    fn fitness_equals_rank_sum_of_pairing() {
        let r = random_rank_matrix(6, 1);
        let p = interleaved(6);
        let fit = pairing_fitness(&r, &p).unwrap();
        let rs = crate::reliability::rank_sum(&r, &p).unwrap();
        assert_eq!(fit, rs.rank_sum);
    }

    #[test]
    fn fitness_on_separable_data_is_n() {
        let r = separable_rank_matrix(10);
        assert_eq!(pairing_fitness(&r, &interleaved(10)).unwrap(), 10);
    }

    #[test]
    fn fitness_on_all_tied_matrix_follows_index_tie_break() {
        // all distances equal: rank of partner is its index position
        let n = 4;
        let values = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 });
        let d =
            DistanceMatrix::new(values, (0..n).map(|i| i.to_string()).collect()).unwrap();
        let r = rank_matrix(&d);
        // hand computation: rows 0,1 -> rank 1; rows 2,3 -> rank 3
        assert_eq!(pairing_fitness(&r, &interleaved(n)).unwrap(), 1 + 1 + 3 + 3);
    }

    #[test]
    fn fitness_of_crafted_matrix_matches_hand_sum() {
        let r = random_rank_matrix(6, 42);
        let p = Pairing::new(vec![3, 4, 5, 0, 1, 2]).unwrap();
        let expect: u64 = [(0, 3), (1, 4), (2, 5), (3, 0), (4, 1), (5, 2)]
            .iter()
            .map(|&(k, m)| r.rank(k, m) as u64)
            .sum();
        assert_eq!(pairing_fitness(&r, &p).unwrap(), expect);
    }

    #[test]
    fn exact_two_scans_forced() {
        let r = random_rank_matrix(2, 3);
        let (p, fit) = exact_min_pairing(&r).unwrap();
        assert_eq!(p.partner_array(), &[1, 0]);
        assert_eq!(fit, 2); // both ranks are 1
    }

    #[test]
    fn exact_four_scans_picks_cheapest_of_three() {
        // distances make {0<->1, 2<->3} the cheapest pairing
        let r = separable_rank_matrix(4);
        let (p, fit) = exact_min_pairing(&r).unwrap();
        assert_eq!(p.partner_array(), &[1, 0, 3, 2]);
        assert_eq!(fit, 4);
        // oracle: enumerate all 3 pairings
        let (bp, bf) = brute_force_min(&r);
        assert_eq!(p.partner_array(), bp.as_slice());
        assert_eq!(fit, bf);
    }

    #[test]
    fn exact_matches_enumeration_on_random_ten_scan_instances() {
        for seed in 0..25 {
            let r = random_rank_matrix(10, seed);
            let (p, fit) = exact_min_pairing(&r).unwrap();
            let (bp, bf) = brute_force_min(&r); // 945 pairings
            assert_eq!(fit, bf, "seed {seed}");
            assert_eq!(p.partner_array(), bp.as_slice(), "seed {seed}");
        }
    }

    #[test]
    fn exact_rejects_odd_and_oversized() {
        let r = random_rank_matrix(3, 0);
        assert!(matches!(exact_min_pairing(&r), Err(Error::Argument(_))));
        let r = random_rank_matrix(28, 0);
        assert!(matches!(
            exact_min_pairing(&r),
            Err(Error::SizeLimit { n: 28, max: 26 })
        ));
    }

    #[test]
    fn ga_finds_unique_optimum_on_separable_data() {
        let r = separable_rank_matrix(12);
        let out = ga_sort(&r, &GaConfig::default()).unwrap();
        assert_eq!(out.fitness, 12);
        assert_eq!(out.pairing.partner_array(), interleaved(12).partner_array());
    }

    #[test]
    fn ga_is_deterministic_given_seed() {
        let r = random_rank_matrix(10, 77);
        let cfg = GaConfig {
            seed: 5,
            ..GaConfig::default()
        };
        let a = ga_sort(&r, &cfg).unwrap();
        let b = ga_sort(&r, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ga_best_history_is_nonincreasing() {
        let r = random_rank_matrix(14, 9);
        let out = ga_sort(&r, &GaConfig::default()).unwrap();
        assert!(out.best_history.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*out.best_history.last().unwrap(), out.fitness);
    }

    #[test]
    fn ga_matches_exact_on_small_instances() {
        let mut hits = 0;
        for seed in 0..20 {
            let r = random_rank_matrix(10, 1000 + seed);
            let (_, exact_fit) = exact_min_pairing(&r).unwrap();
            let cfg = GaConfig {
                seed,
                ..GaConfig::default()
            };
            let ga = ga_sort(&r, &cfg).unwrap();
            assert!(ga.fitness >= exact_fit);
            if ga.fitness == exact_fit {
                hits += 1;
            }
        }
        assert!(hits >= 19, "GA matched the optimum only {hits}/20 times");
    }

    #[test]
    fn ga_rejects_odd_or_tiny_inputs() {
        let r = random_rank_matrix(2, 0);
        assert!(ga_sort(&r, &GaConfig::default()).is_err());
    }

    #[test]
    fn fitness_invariant_under_pair_relisting() {
        let r = random_rank_matrix(8, 4);
        let p1 = Pairing::new(vec![5, 3, 7, 1, 6, 0, 4, 2]).unwrap();
        // same partner relation expressed through a different construction
        let pairs = p1.pairs();
        let mut partner = vec![usize::MAX; 8];
        for &(a, b) in pairs.iter().rev() {
            partner[a] = b;
            partner[b] = a;
        }
        let p2 = Pairing::new(partner).unwrap();
        assert_eq!(
            pairing_fitness(&r, &p1).unwrap(),
            pairing_fitness(&r, &p2).unwrap()
        );
    }

    #[test]
    fn separable_optimum_is_strictly_unique() {
        let r = separable_rank_matrix(8);
        let (bp, bf) = brute_force_min(&r);
        assert_eq!(bf, 8);
        assert_eq!(bp, interleaved(8).partner_array());
        // no other pairing reaches n: check by enumeration
        fn count_at(r: &RankMatrix, target: u64) -> usize {
            fn recurse(r: &RankMatrix, partner: &mut Vec<usize>, target: u64, acc: &mut usize) {
                let n = partner.len();
                if let Some(k) = (0..n).find(|&k| partner[k] == usize::MAX) {
                    for j in (k + 1)..n {
                        if partner[j] == usize::MAX {
                            partner[k] = j;
                            partner[j] = k;
                            recurse(r, partner, target, acc);
                            partner[k] = usize::MAX;
                            partner[j] = usize::MAX;
                        }
                    }
                } else if partner_fitness(r, partner) == target {
                    *acc += 1;
                }
            }
            let mut partner = vec![usize::MAX; r.n_scans()];
            let mut acc = 0;
            recurse(r, &mut partner, target, &mut acc);
            acc
        }
        assert_eq!(count_at(&r, 8), 1);
    }

    #[test]
    fn subsample_medians_are_nondecreasing_in_subject_count() {
        // session noise tuned so small subsets sort with shorter windows
        // than the full cohort
        let spec = crate::synth::CohortSpec {
            n_subjects: 10,
            n_rois: 16,
            n_timepoints: 240,
            tr_seconds: 2.0,
            subject_signal: 0.4,
            session_noise: 0.3,
            seed: 42,
        };
        let ds: Dataset = crate::synth::generate_cohort(&spec).unwrap().into();
        let config = crate::model::PipelineConfig {
            n_rois_target: 16,
            extraction: crate::model::Extraction::Mean,
            threshold: crate::model::ThresholdSpec::None,
            threshold_absolute: false,
            window_seconds: None,
            distance_metric: crate::model::DistanceMetric::SquaredFrobenius,
            parcellation_source: crate::model::ParcellationSource::Uniform,
        };
        let grid = [1.0, 2.0, 3.0, 4.0];
        let rows = subject_subsample_sweep(
            &ds,
            &config,
            &[4, 10],
            5,
            7,
            &GaConfig::default(),
            &grid,
        )
        .unwrap();
        let small = rows[0].median_minutes.expect("N=4 sorts within the grid");
        let full = rows[1].median_minutes.expect("N=10 sorts within the grid");
        assert!(
            small <= full,
            "median minimal time should not shrink with more subjects: {small} vs {full}"
        );
        assert_eq!(rows[1].runs.len(), 1, "full cohort collapses to one run");
    }

    #[test]
    fn median_convention_is_midpoint() {
        assert_eq!(
            median_minutes(&[Some(4.0), Some(5.0), Some(4.0), Some(5.0)]),
            Some(4.5)
        );
        assert_eq!(median_minutes(&[Some(3.0), Some(4.0), Some(5.0)]), Some(4.0));
        assert_eq!(median_minutes(&[Some(3.0), None]), None);
        assert_eq!(median_minutes(&[Some(3.0), Some(4.0), None]), Some(4.0));
        assert_eq!(median_minutes(&[]), None);
    }
}
