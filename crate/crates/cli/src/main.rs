//! Batch front end wiring ingestion, graph inference, reliability, and
//! unsupervised sorting into reproducible seeded runs. Every command records
//! (manifest, config, seed) in its output directory.

mod report;
mod svg;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fcrank::matching::{self, GaConfig};
use fcrank::model::{
    self, ManifestEntry, Parcellation, PipelineConfig, ScanFormat, ThresholdSpec,
};
use fcrank::pipeline::{self, Dataset};
use fcrank::reliability::{self, TIE_RULE};
use fcrank::synth::{self, CohortSpec};

use report::{write_json, ReliabilityReport, RunMetadata, SortReport};

/// Default seed used when none is given; fixed so repeated invocations are
/// reproducible without extra flags.
const DEFAULT_SEED: u64 = 17;

#[derive(Parser)]
#[command(
    name = "fcrank",
    version,
    about = "Rank-based test-retest reliability and unsupervised pairing of functional connectomes"
)]
struct Cli {
    /// Worker threads for parallel sections (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic test-retest cohort (manifest + CSV series).
    Synth(SynthArgs),
    /// Infer one connectome per scan into the binary cache.
    Infer(InferArgs),
    /// Rank-sum reliability with a permutation p-value.
    Reliability(ReliabilityArgs),
    /// Rank sums across a grid of acquisition windows, ROI counts, or
    /// thresholds.
    Sweep(SweepArgs),
    /// Sort unlabeled scans into test-retest pairs.
    Sort(SortArgs),
    /// Edge-wise rank sums and per-ROI localization scores.
    Localize(LocalizeArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    subjects: usize,
    #[arg(long, default_value_t = 64)]
    rois: usize,
    #[arg(long, default_value_t = 300)]
    timepoints: usize,
    #[arg(long, default_value_t = 2.0)]
    tr: f64,
    #[arg(long, default_value_t = 1.0)]
    signal: f64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Also export each connectome as a CxC CSV.
    #[arg(long)]
    export_csv: bool,
}

#[derive(Args)]
struct ReliabilityArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// Permutation replicates (at least 100).
    #[arg(short = 'B', long, default_value_t = 1000)]
    permutations: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    /// Emit distance- and rank-matrix heatmaps.
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// Sweep axis: time (minutes), rois (cell counts), threshold
    /// (percentiles).
    #[arg(long)]
    axis: SweepAxis,
    /// Comma-separated grid values.
    #[arg(long)]
    grid: String,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    svg: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum SweepAxis {
    Time,
    Rois,
    Threshold,
}

#[derive(Args)]
struct SortArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    /// Time grid in minutes: search for the minimum time to a perfect sort.
    #[arg(long)]
    time_grid: Option<String>,
    /// Subject-count grid: median minimal time over random subject subsets.
    #[arg(long)]
    subjects_grid: Option<String>,
    /// Random subsets per subject count.
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    #[arg(long, default_value_t = 200)]
    population: usize,
    #[arg(long, default_value_t = 500)]
    generations: usize,
    #[arg(long, default_value_t = 0.2)]
    mutation_rate: f64,
    #[arg(long, default_value_t = 4)]
    elitism: usize,
    #[arg(long, default_value_t = 200)]
    stall: usize,
}

#[derive(Args)]
struct LocalizeArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
        {
            eprintln!("error: configuring {} worker threads: {e}", cli.jobs);
            return ExitCode::FAILURE;
        }
    }
    let jobs = cli.jobs;
    let outcome = match cli.command {
        Command::Synth(args) => cmd_synth(args, jobs),
        Command::Infer(args) => cmd_infer(args, jobs),
        Command::Reliability(args) => cmd_reliability(args, jobs),
        Command::Sweep(args) => cmd_sweep(args, jobs),
        Command::Sort(args) => cmd_sort(args, jobs),
        Command::Localize(args) => cmd_localize(args, jobs),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_dataset(manifest: &Path, config: &PipelineConfig) -> Result<(Dataset, Parcellation)> {
    let ds = Dataset::load(manifest, config)?;
    for w in &ds.warnings {
        eprintln!("warning: {w}");
    }
    config.validate_for_scans(&ds.scans)?;
    let report = model::validate_dataset(&ds.scans);
    for v in &report {
        eprintln!("warning: dataset: {v}");
    }
    let parc = pipeline::parcellation_for(&ds, config, config.n_rois_target)?;
    if parc.n_cells() != config.n_rois_target {
        eprintln!(
            "warning: parcellation has {} cells, config asked for {}",
            parc.n_cells(),
            config.n_rois_target
        );
    }
    Ok((ds, parc))
}

fn parse_grid<T: std::str::FromStr>(grid: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    grid.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|e| anyhow::anyhow!("bad grid value {s:?}: {e}"))
        })
        .collect()
}

fn cmd_synth(args: SynthArgs, jobs: usize) -> Result<bool> {
    ensure_out_dir(&args.out_dir)?;
    let spec = CohortSpec {
        n_subjects: args.subjects,
        n_rois: args.rois,
        n_timepoints: args.timepoints,
        tr_seconds: args.tr,
        subject_signal: args.signal,
        session_noise: args.noise,
        seed: args.seed,
    };
    let cohort = synth::generate_cohort(&spec)?;
    let mut entries = Vec::with_capacity(cohort.scans.len());
    for (scan, ts) in cohort.scans.iter().zip(&cohort.series) {
        let name = scan
            .path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("{}.csv", scan.scan_id));
        let mut text = String::new();
        for i in 0..ts.n_signals() {
            let row: Vec<String> = (0..ts.n_timepoints())
                .map(|t| format!("{}", ts.values()[(i, t)]))
                .collect();
            text.push_str(&row.join(","));
            text.push('\n');
        }
        report::atomic_write(&args.out_dir.join(&name), text.as_bytes())?;
        entries.push(ManifestEntry {
            scan_id: scan.scan_id.clone(),
            subject_id: scan.subject_id.clone(),
            session: scan.session_index,
            tr_seconds: scan.tr_seconds,
            path: name,
            format: ScanFormat::Csv,
        });
    }
    model::write_manifest(&args.out_dir.join("manifest.json"), &entries)?;
    let mut meta = RunMetadata::new("synth", args.seed, jobs);
    meta.manifest = Some(args.out_dir.join("manifest.json"));
    meta.write(&args.out_dir)?;
    println!(
        "wrote {} scans ({} subjects x 2 sessions) to {}",
        cohort.scans.len(),
        args.subjects,
        args.out_dir.display()
    );
    Ok(true)
}

/// Per-scan connectomes, reading the cache where possible.
fn connectomes_with_cache(
    ds: &Dataset,
    parc: &Parcellation,
    config: &PipelineConfig,
    cache_dir: &Path,
) -> Result<(Vec<fcrank::model::Connectome>, usize, usize)> {
    use rayon::prelude::*;
    std::fs::create_dir_all(cache_dir)
        .with_context(|| format!("creating {}", cache_dir.display()))?;
    let hash = pipeline::config_hash(config);
    let results: Vec<fcrank::Result<(fcrank::model::Connectome, bool)>> = ds
        .scans
        .par_iter()
        .zip(ds.series.par_iter())
        .map(|(scan, ts)| {
            let path = pipeline::cache_path(cache_dir, &scan.scan_id, &hash);
            if path.exists() {
                if let Ok(g) = pipeline::read_connectome_cache(&path) {
                    return Ok((g, true));
                }
            }
            let g = pipeline::scan_connectome(ts, parc, config, config.window_seconds).map_err(
                |e| fcrank::Error::Scan {
                    scan_id: scan.scan_id.clone(),
                    source: Box::new(e),
                },
            )?;
            pipeline::write_connectome_cache(&path, &g)?;
            Ok((g, false))
        })
        .collect();
    let mut graphs = Vec::with_capacity(results.len());
    let mut hits = 0;
    let mut computed = 0;
    for r in results {
        let (g, hit) = r?;
        if hit {
            hits += 1;
        } else {
            computed += 1;
        }
        graphs.push(g);
    }
    Ok((graphs, computed, hits))
}

fn cmd_infer(args: InferArgs, jobs: usize) -> Result<bool> {
    ensure_out_dir(&args.out_dir)?;
    let config = PipelineConfig::read_json(&args.config)?;
    let (ds, parc) = load_dataset(&args.manifest, &config)?;
    let cache_dir = args.out_dir.join("cache");
    let (graphs, computed, hits) = connectomes_with_cache(&ds, &parc, &config, &cache_dir)?;
    if args.export_csv {
        let csv_dir = args.out_dir.join("csv");
        std::fs::create_dir_all(&csv_dir)?;
        for (scan, g) in ds.scans.iter().zip(&graphs) {
            pipeline::write_connectome_csv(&csv_dir.join(format!("{}.csv", scan.scan_id)), g)?;
        }
    }
    RunMetadata::new("infer", 0, jobs)
        .with_manifest(&args.manifest)
        .with_config(&config)
        .write(&args.out_dir)?;
    #[derive(serde::Serialize)]
    struct InferSummary {
        n_scans: usize,
        computed: usize,
        cache_hits: usize,
        config_hash: String,
        cache_dir: PathBuf,
    }
    write_json(
        &args.out_dir.join("infer_summary.json"),
        &InferSummary {
            n_scans: ds.n_scans(),
            computed,
            cache_hits: hits,
            config_hash: pipeline::config_hash(&config),
            cache_dir: cache_dir.clone(),
        },
    )?;
    println!(
        "inferred {computed} connectomes, {hits} cache hits ({} scans) into {}",
        ds.n_scans(),
        cache_dir.display()
    );
    Ok(true)
}

fn cmd_reliability(args: ReliabilityArgs, jobs: usize) -> Result<bool> {
    ensure_out_dir(&args.out_dir)?;
    let config = PipelineConfig::read_json(&args.config)?;
    let (ds, parc) = load_dataset(&args.manifest, &config)?;
    let cache_dir = args.out_dir.join("cache");
    let (graphs, _, _) = connectomes_with_cache(&ds, &parc, &config, &cache_dir)?;
    let dm = reliability::distance_matrix(&graphs, config.distance_metric)?
        .with_scan_ids(ds.scan_ids())?;
    let rm = reliability::rank_matrix(&dm);
    let result = reliability::permutation_null(&rm, &ds.scans, args.permutations, args.seed)?;

    let rep = ReliabilityReport {
        config: config.clone(),
        config_hash: pipeline::config_hash(&config),
        n_scans: result.n_scans,
        scan_ids: ds.scan_ids(),
        rank_sum: result.rank_sum,
        per_scan_rank: result.per_scan_rank.clone(),
        p_value: result.p_value.unwrap_or(f64::NAN),
        b: args.permutations,
        seed: args.seed,
        tie_rule: TIE_RULE.to_string(),
        metric: config.distance_metric,
        warnings: ds.warnings.clone(),
        timestamp_unix: report::timestamp_unix(),
    };
    write_json(&args.out_dir.join("reliability.json"), &rep)?;
    if args.svg {
        let n = dm.n_scans();
        let d: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| dm.values()[(i, j)]).collect())
            .collect();
        let r: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| rm.rank(i, j) as f64).collect())
            .collect();
        report::atomic_write(
            &args.out_dir.join("distance.svg"),
            svg::matrix_heatmap("pairwise graph distances", &d).as_bytes(),
        )?;
        report::atomic_write(
            &args.out_dir.join("rank.svg"),
            svg::matrix_heatmap("rank matrix", &r).as_bytes(),
        )?;
    }
    RunMetadata::new("reliability", args.seed, jobs)
        .with_manifest(&args.manifest)
        .with_config(&config)
        .write(&args.out_dir)?;
    println!(
        "rank_sum = {} over {} scans (bounds {}..{}), p = {:.6}",
        result.rank_sum,
        result.n_scans,
        result.n_scans,
        result.n_scans * (result.n_scans - 1),
        rep.p_value
    );
    Ok(true)
}

fn cmd_sweep(args: SweepArgs, jobs: usize) -> Result<bool> {
    ensure_out_dir(&args.out_dir)?;
    let config = PipelineConfig::read_json(&args.config)?;
    let (ds, parc) = load_dataset(&args.manifest, &config)?;
    let truth = model::true_pairing(&ds.scans)?;
    let hash = pipeline::config_hash(&config);

    let mut rows: Vec<String> = Vec::new();
    let mut chart: Vec<(f64, f64)> = Vec::new();
    let mut failures = 0usize;

    let mut run_point = |label: String,
                         window: Option<f64>,
                         n_rois: usize,
                         threshold_q: Option<f64>|
     -> Result<()> {
        let point_parc;
        let point_config;
        let parc_ref = if n_rois != parc.n_cells() {
            point_parc = pipeline::parcellation_for(&ds, &config, n_rois)?;
            &point_parc
        } else {
            &parc
        };
        let config_ref = match threshold_q {
            Some(q) => {
                point_config = PipelineConfig {
                    threshold: ThresholdSpec::Percentile(q),
                    ..config.clone()
                };
                point_config.validate()?;
                &point_config
            }
            None => &config,
        };
        let graphs = pipeline::build_connectomes_windowed(&ds, parc_ref, config_ref, window)?;
        let dm = reliability::distance_matrix(&graphs, config.distance_metric)?;
        let rm = reliability::rank_matrix(&dm);
        let rs = reliability::rank_sum(&rm, &truth)?;
        let n_datapoints = window
            .map(|w| {
                ds.scans
                    .iter()
                    .map(|s| ((w / s.tr_seconds) as usize).min(s.n_timepoints))
                    .min()
                    .unwrap_or(0)
            })
            .map(|n| n.to_string())
            .unwrap_or_default();
        let value: f64 = label.parse().unwrap_or(f64::NAN);
        chart.push((value, rs.rank_sum as f64));
        rows.push(format!(
            "{axis},{label},{window},{n_datapoints},{rois},{tq},{rank_sum},{n},{hash}",
            axis = match args.axis {
                SweepAxis::Time => "time",
                SweepAxis::Rois => "rois",
                SweepAxis::Threshold => "threshold",
            },
            window = window.map(|w| w.to_string()).unwrap_or_default(),
            rois = parc_ref.n_cells(),
            tq = threshold_q.map(|q| q.to_string()).unwrap_or_default(),
            rank_sum = rs.rank_sum,
            n = rs.n_scans,
        ));
        Ok(())
    };

    match args.axis {
        SweepAxis::Time => {
            let grid: Vec<f64> = parse_grid(&args.grid)?;
            if grid.is_empty() {
                bail!("empty grid");
            }
            let max_tr = ds
                .scans
                .iter()
                .map(|s| s.tr_seconds)
                .fold(0.0, f64::max);
            for &minutes in &grid {
                let window = minutes * 60.0;
                if window < 2.0 * max_tr {
                    eprintln!(
                        "error: grid point {minutes} min: window covers fewer than 2 samples; skipped"
                    );
                    failures += 1;
                    continue;
                }
                if let Err(e) = run_point(
                    format!("{minutes}"),
                    Some(window),
                    parc.n_cells(),
                    None,
                ) {
                    eprintln!("error: grid point {minutes} min: {e}; skipped");
                    failures += 1;
                }
            }
        }
        SweepAxis::Rois => {
            let grid: Vec<usize> = parse_grid(&args.grid)?;
            if grid.is_empty() {
                bail!("empty grid");
            }
            for &c in &grid {
                if let Err(e) = run_point(format!("{c}"), config.window_seconds, c, None) {
                    eprintln!("error: grid point {c} ROIs: {e}; skipped");
                    failures += 1;
                }
            }
        }
        SweepAxis::Threshold => {
            if config.threshold != ThresholdSpec::None {
                bail!("threshold sweeps need a config with threshold = none");
            }
            let grid: Vec<f64> = parse_grid(&args.grid)?;
            if grid.is_empty() {
                bail!("empty grid");
            }
            for &q in &grid {
                if let Err(e) = run_point(
                    format!("{q}"),
                    config.window_seconds,
                    parc.n_cells(),
                    Some(q),
                ) {
                    eprintln!("error: grid point {q}%: {e}; skipped");
                    failures += 1;
                }
            }
        }
    }

    let mut csv =
        String::from("axis,value,window_seconds,n_datapoints,n_rois,threshold_q,rank_sum,n_scans,config_hash\n");
    for row in &rows {
        csv.push_str(row);
        csv.push('\n');
    }
    report::atomic_write(&args.out_dir.join("sweep.csv"), csv.as_bytes())?;
    if args.svg && !chart.is_empty() {
        let (x_label, title) = match args.axis {
            SweepAxis::Time => ("acquisition time (min)", "rank sum vs acquisition time"),
            SweepAxis::Rois => ("ROIs", "rank sum vs parcellation size"),
            SweepAxis::Threshold => ("threshold percentile", "rank sum vs threshold"),
        };
        report::atomic_write(
            &args.out_dir.join("sweep.svg"),
            svg::line_chart(title, x_label, "rank sum", &chart).as_bytes(),
        )?;
    }
    RunMetadata::new("sweep", args.seed, jobs)
        .with_manifest(&args.manifest)
        .with_config(&config)
        .write(&args.out_dir)?;
    println!(
        "swept {} grid points ({} skipped); hash {hash}",
        rows.len(),
        failures
    );
    Ok(failures == 0)
}

fn cmd_sort(args: SortArgs, jobs: usize) -> Result<bool> {
    ensure_out_dir(&args.out_dir)?;
    let config = PipelineConfig::read_json(&args.config)?;
    let (ds, parc) = load_dataset(&args.manifest, &config)?;
    let ga = GaConfig {
        population_size: args.population,
        generations_max: args.generations,
        mutation_rate: args.mutation_rate,
        elitism_count: args.elitism,
        stall_generations: args.stall,
        seed: args.seed,
    };
    let labeled = ds.scans.iter().all(|s| !s.subject_id.is_empty());
    let truth = if labeled {
        model::true_pairing(&ds.scans).ok()
    } else {
        None
    };

    if let Some(grid_text) = &args.subjects_grid {
        let n_values: Vec<usize> = parse_grid(grid_text)?;
        let grid_minutes = match &args.time_grid {
            Some(t) => parse_grid(t)?,
            None => matching::default_time_grid(&ds),
        };
        let rows = matching::subject_subsample_sweep(
            &ds,
            &config,
            &n_values,
            args.repeats,
            args.seed,
            &ga,
            &grid_minutes,
        )?;
        let dataset_name = args
            .manifest
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let parc_name = match &config.parcellation_source {
            fcrank::model::ParcellationSource::Uniform => "uniform".to_string(),
            fcrank::model::ParcellationSource::Path(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        };
        let mut csv =
            String::from("dataset,parcellation,n_rois,N,repeat,min_time_minutes,perfect\n");
        for row in &rows {
            for (rep, minutes) in row.runs.iter().enumerate() {
                csv.push_str(&format!(
                    "{dataset_name},{parc_name},{},{},{},{},{}\n",
                    parc.n_cells(),
                    row.n_subjects,
                    rep + 1,
                    minutes.map(|m| m.to_string()).unwrap_or_default(),
                    minutes.is_some()
                ));
            }
        }
        report::atomic_write(&args.out_dir.join("subsample.csv"), csv.as_bytes())?;
        // summary table, one median per subject count
        let header: Vec<String> = rows.iter().map(|r| format!("N={}", r.n_subjects)).collect();
        let medians: Vec<String> = rows
            .iter()
            .map(|r| {
                r.median_minutes
                    .map(|m| format!("{m}"))
                    .unwrap_or_else(|| "n/a".to_string())
            })
            .collect();
        println!("{}", header.join("\t"));
        println!("{}", medians.join("\t"));
        write_json(&args.out_dir.join("subsample.json"), &rows)?;
        RunMetadata::new("sort", args.seed, jobs)
            .with_manifest(&args.manifest)
            .with_config(&config)
            .write(&args.out_dir)?;
        return Ok(true);
    }

    if let Some(grid_text) = &args.time_grid {
        let grid_minutes: Vec<f64> = parse_grid(grid_text)?;
        let result = matching::min_time_to_perfect_sort(&ds, &config, &grid_minutes, &ga)?;
        let mut csv = String::from("minutes,ga_fitness,exact_fitness,perfect\n");
        for p in &result.points {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                p.minutes,
                p.ga_fitness,
                p.exact_fitness.map(|f| f.to_string()).unwrap_or_default(),
                p.perfect
            ));
        }
        report::atomic_write(&args.out_dir.join("min_time.csv"), csv.as_bytes())?;
        write_json(&args.out_dir.join("min_time.json"), &result)?;
        match result.minutes {
            Some(m) => println!("minimum time to perfect sort: {m} min"),
            None => println!("no grid point produced a perfect sort"),
        }
        RunMetadata::new("sort", args.seed, jobs)
            .with_manifest(&args.manifest)
            .with_config(&config)
            .write(&args.out_dir)?;
        return Ok(true);
    }

    // single sort on the configured window
    let graphs = pipeline::build_connectomes(&ds, &parc, &config)?;
    let dm = reliability::distance_matrix(&graphs, config.distance_metric)?;
    let rm = reliability::rank_matrix(&dm);
    let ga_result = matching::ga_sort(&rm, &ga)?;
    let exact = if rm.n_scans() <= matching::EXACT_MAX_SCANS {
        Some(matching::exact_min_pairing(&rm)?)
    } else {
        None
    };
    let (best_pairing, best_fitness) = match &exact {
        Some((p, f)) => (p.clone(), *f),
        None => (ga_result.pairing.clone(), ga_result.fitness),
    };
    let perfect = truth
        .as_ref()
        .map(|t| t.partner_array() == best_pairing.partner_array());
    let pairs = best_pairing
        .pairs()
        .into_iter()
        .map(|(a, b)| (ds.scans[a].scan_id.clone(), ds.scans[b].scan_id.clone()))
        .collect();
    let rep = SortReport {
        config_hash: pipeline::config_hash(&config),
        n_scans: rm.n_scans(),
        pairs,
        fitness: best_fitness,
        ga_fitness: ga_result.fitness,
        generations_used: ga_result.generations_used,
        exact_fitness: exact.as_ref().map(|(_, f)| *f),
        exact_optimum_certified: exact.is_some(),
        perfect,
        seed: args.seed,
        timestamp_unix: report::timestamp_unix(),
    };
    write_json(&args.out_dir.join("sort.json"), &rep)?;
    RunMetadata::new("sort", args.seed, jobs)
        .with_manifest(&args.manifest)
        .with_config(&config)
        .write(&args.out_dir)?;
    println!(
        "fitness {} over {} scans; certified: {}; perfect: {}",
        rep.fitness,
        rep.n_scans,
        rep.exact_optimum_certified,
        rep.perfect
            .map(|p| p.to_string())
            .unwrap_or_else(|| "unknown (no labels)".to_string())
    );
    Ok(true)
}

fn cmd_localize(args: LocalizeArgs, jobs: usize) -> Result<bool> {
    ensure_out_dir(&args.out_dir)?;
    let config = PipelineConfig::read_json(&args.config)?;
    if config.threshold != ThresholdSpec::None {
        bail!(
            "localize needs an unthresholded config: thresholding zero-inflates per-edge \
             distances and corrupts the edge-wise rank sums"
        );
    }
    let (ds, parc) = load_dataset(&args.manifest, &config)?;
    let truth = model::true_pairing(&ds.scans)?;
    let cache_dir = args.out_dir.join("cache");
    let (graphs, _, _) = connectomes_with_cache(&ds, &parc, &config, &cache_dir)?;
    let loc = reliability::edgewise_rank_sums(&graphs, &truth)?;

    let mut edges_csv = String::from("roi_i,roi_j,edge_rank_sum\n");
    for e in &loc.edges {
        edges_csv.push_str(&format!("{},{},{}\n", e.roi_i + 1, e.roi_j + 1, e.rank_sum));
    }
    report::atomic_write(&args.out_dir.join("edges.csv"), edges_csv.as_bytes())?;

    let mut scores_csv = String::from("roi,score\n");
    for (i, s) in loc.roi_scores.iter().enumerate() {
        scores_csv.push_str(&format!("{},{s}\n", i + 1));
    }
    report::atomic_write(&args.out_dir.join("roi_scores.csv"), scores_csv.as_bytes())?;

    #[derive(serde::Serialize)]
    struct LocalizeSummary {
        n_rois: usize,
        n_edges: usize,
        low_edge_threshold: f64,
        config_hash: String,
    }
    write_json(
        &args.out_dir.join("localize.json"),
        &LocalizeSummary {
            n_rois: loc.n_rois,
            n_edges: loc.edges.len(),
            low_edge_threshold: loc.low_edge_threshold,
            config_hash: pipeline::config_hash(&config),
        },
    )?;
    RunMetadata::new("localize", 0, jobs)
        .with_manifest(&args.manifest)
        .with_config(&config)
        .write(&args.out_dir)?;
    println!(
        "localized {} edges over {} ROIs; low-edge threshold {:.3}",
        loc.edges.len(),
        loc.n_rois,
        loc.low_edge_threshold
    );
    Ok(true)
}
