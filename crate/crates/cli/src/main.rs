// SPDX-License-Identifier: MIT OR Apache-2.0

//! `spectral-cp`: simulate, detect, tune and evaluate from the command line.

#![forbid(unsafe_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use spectral_cp::bench::{evaluate, simulate, DgpKind, GroundTruth};
use spectral_cp::detect::{DetectionReport, ThresholdRule};
use spectral_cp::ingest::{load_csv, write_csv, Orientation, SeriesMatrix};
use spectral_cp::tune::{
    default_config, default_nu2, load_config_file, prepare_tensor, run_detection, tune, Auto, DetectionConfig,
};
use spectral_cp::{json, Error};

#[derive(Parser)]
#[command(
    name = "spectral-cp",
    version,
    about = "Change points in the spectrum of high-dimensional time series"
)]
struct Cli {
    /// Worker threads (default: available parallelism). Results do not
    /// depend on this setting.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a data set with known change points.
    Simulate(SimulateArgs),
    /// Detect change points in a CSV series.
    Detect(DetectArgs),
    /// Estimate the sparsity k and the bootstrap threshold only.
    Tune(DetectArgs),
    /// Score a detection report against a simulation truth.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// dgp1 (VMA), dgp2 (VAR), factor or white.
    #[arg(long, default_value = "dgp1")]
    dgp: DgpKind,
    #[arg(long = "length", short = 'n', default_value_t = 6000)]
    n: usize,
    #[arg(long = "dim", short = 'p', default_value_t = 80)]
    p: usize,
    /// Number of changing series.
    #[arg(long, default_value_t = 3)]
    k0: usize,
    /// Number of change points (ignored by the factor and white designs).
    #[arg(long = "changes", short = 'q', default_value_t = 4)]
    q: usize,
    /// Block length used for the change blocks recorded in the truth.
    #[arg(long)]
    block_length: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    /// CSV file with one series per column (or per row, see --orientation).
    #[arg(long)]
    input: PathBuf,
    /// rows or columns: how the CSV lays out the series.
    #[arg(long, default_value = "columns")]
    orientation: Orientation,
    /// Flat `key = value` configuration file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    block_length: Option<usize>,
    /// Projection sparsity k, or "auto".
    #[arg(long)]
    sparsity: Option<Auto<usize>>,
    /// Number of random intervals J.
    #[arg(long)]
    intervals: Option<usize>,
    /// Threshold τ, or "auto" for the bootstrap.
    #[arg(long)]
    threshold: Option<Auto<f64>>,
    /// aggregate or per-term.
    #[arg(long)]
    threshold_rule: Option<ThresholdRule>,
    /// Bootstrap quantile for the automatic threshold.
    #[arg(long)]
    quantile: Option<f64>,
    #[arg(long)]
    bootstrap_samples: Option<usize>,
    /// Bootstrap replicates per series in the sparsity estimate.
    #[arg(long)]
    sparsity_bootstrap_samples: Option<usize>,
    /// Use the same block interval for projection and CUSUM.
    #[arg(long)]
    no_split: bool,
    /// Apply the normal-quantile transform to each series.
    #[arg(long)]
    normalize: bool,
    /// Do not subtract series means.
    #[arg(long)]
    no_center: bool,
    /// Minimum distance of a change from the interval ends, in blocks.
    #[arg(long)]
    nu2: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

/// Written next to the outputs of every run.
#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    version: &'static str,
    seed: Option<u64>,
    seed_source: Option<&'static str>,
    config: Option<&'a DetectionConfig>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started_unix_seconds: u64,
    elapsed_seconds: f64,
}

struct Run {
    command: &'static str,
    started: Instant,
    started_unix: u64,
}

impl Run {
    fn new(command: &'static str) -> Self {
        Self {
            command,
            started: Instant::now(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }

    fn finish(
        &self,
        out_dir: &Path,
        seed: Option<(u64, &'static str)>,
        config: Option<&DetectionConfig>,
        inputs: Vec<PathBuf>,
        mut outputs: Vec<PathBuf>,
    ) -> Result<(), Error> {
        let path = out_dir.join("manifest.json");
        outputs.push(path.clone());
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            seed: seed.map(|s| s.0),
            seed_source: seed.map(|s| s.1),
            config,
            inputs,
            outputs,
            started_unix_seconds: self.started_unix,
            elapsed_seconds: self.started.elapsed().as_secs_f64(),
        };
        write(&path, &json::to_string_pretty(&manifest)?)
    }
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

/// A seed for runs that were not given one; recorded in the manifest.
fn generated_seed() -> u64 {
    let nanos = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_nanos());
    let mut z = (nanos as u64) ^ ((nanos >> 64) as u64) ^ (u64::from(std::process::id()) << 32);
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Defaults for the input, then the config file, then flags.
fn resolve_config(args: &DetectArgs, x: &SeriesMatrix) -> Result<(DetectionConfig, &'static str), Error> {
    let n = x.len();
    let mut cfg = default_config(n, x.p())?;
    let mut nu2_given = false;
    let mut seed_source = "generated";
    if let Some(path) = &args.config {
        for (key, value) in load_config_file(path)? {
            cfg.set(&key, &value)?;
            nu2_given |= key == "nu2";
            if key == "seed" {
                seed_source = "config";
            }
        }
    }
    if let Some(l) = args.block_length {
        cfg.block_length = l;
    }
    if let Some(k) = args.sparsity {
        cfg.k = k;
    }
    if let Some(j) = args.intervals {
        cfg.n_intervals = j;
    }
    if let Some(t) = args.threshold {
        cfg.tau = t;
    }
    if let Some(r) = args.threshold_rule {
        cfg.threshold_rule = r;
    }
    if let Some(q) = args.quantile {
        cfg.bootstrap_quantile = q;
    }
    if let Some(b) = args.bootstrap_samples {
        cfg.bootstrap_samples = b;
    }
    if let Some(b) = args.sparsity_bootstrap_samples {
        cfg.sparsity_bootstrap_samples = b;
    }
    if args.no_split {
        cfg.split = false;
    }
    if args.normalize {
        cfg.normalize = true;
    }
    if args.no_center {
        cfg.center = false;
    }
    if let Some(v) = args.nu2 {
        cfg.nu2 = v;
        nu2_given = true;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
        seed_source = "flag";
    }
    if seed_source == "generated" {
        cfg.seed = generated_seed();
    }
    if cfg.block_length == 0 || 4 * cfg.block_length > n {
        return Err(Error::Config(format!(
            "need N >= 4L, got N = {n} and L = {}",
            cfg.block_length
        )));
    }
    if !nu2_given {
        cfg.nu2 = default_nu2(n / cfg.block_length);
    }
    cfg.validate()?;
    let dropped = n % cfg.block_length;
    if dropped > 0 {
        log::warn!(
            "dropping the last {dropped} time points (N = {n} is not a multiple of L = {})",
            cfg.block_length
        );
    }
    Ok((cfg, seed_source))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Error> {
    let run = Run::new("simulate");
    let (seed, source) = match args.seed {
        Some(s) => (s, "flag"),
        None => (generated_seed(), "generated"),
    };
    let (x, mut truth) = simulate(args.dgp, args.n, args.p, args.k0, args.q, seed)?;
    if let Some(l) = args.block_length {
        truth = truth.with_block_length(l)?;
    }
    create_dir(&args.out_dir)?;
    let series = args.out_dir.join("series.csv");
    let truth_path = args.out_dir.join("truth.json");
    write_csv(&x, &series)?;
    write(&truth_path, &truth.to_json()?)?;
    println!(
        "simulated {:?}: p = {}, N = {}, change times {:?}, changing series {:?}",
        args.dgp, truth.p, truth.n, truth.cp_times, truth.cp_series
    );
    run.finish(
        &args.out_dir,
        Some((seed, source)),
        None,
        vec![],
        vec![series, truth_path],
    )
}

fn cmd_detect(args: &DetectArgs) -> Result<(), Error> {
    let run = Run::new("detect");
    let x = load_csv(&args.input, args.orientation)?;
    let (cfg, source) = resolve_config(args, &x)?;
    let out = run_detection(&x, &cfg)?;
    create_dir(&args.out_dir)?;
    let report_path = args.out_dir.join("report.json");
    write(&report_path, &out.report.to_json()?)?;
    let heatmap_dir = args.out_dir.join("heatmaps");
    create_dir(&heatmap_dir)?;
    let mut outputs = vec![report_path];
    outputs.extend(out.report.write_heatmaps(&heatmap_dir)?);

    println!(
        "p = {}, N = {}, L = {}, B = {}, k = {}, tau = {:.6}, change points: {}",
        x.p(),
        x.len(),
        cfg.block_length,
        out.report.n_blocks,
        out.k,
        out.tau,
        out.report.n_change_points
    );
    println!("block\ttime\tstatistic\tactive_frequencies");
    for cp in &out.report.change_points {
        println!(
            "{}\t{}\t{:.6}\t{}",
            cp.block_index,
            cp.time_index,
            cp.statistic,
            cp.active_frequencies.len()
        );
    }
    run.finish(
        &args.out_dir,
        Some((cfg.seed, source)),
        Some(&cfg),
        vec![args.input.clone()],
        outputs,
    )
}

#[derive(Serialize)]
struct TuneOutput<'a> {
    k: usize,
    tau: f64,
    changed_series: Option<&'a [usize]>,
}

fn cmd_tune(args: &DetectArgs) -> Result<(), Error> {
    let run = Run::new("tune");
    let x = load_csv(&args.input, args.orientation)?;
    let (cfg, source) = resolve_config(args, &x)?;
    let tensor = prepare_tensor(&x, &cfg)?;
    let (k, tau, sparsity) = tune(&tensor, &cfg)?;
    create_dir(&args.out_dir)?;
    let path = args.out_dir.join("tuning.json");
    let result = TuneOutput {
        k,
        tau,
        changed_series: sparsity.as_ref().map(|s| s.changed_series.as_slice()),
    };
    write(&path, &json::to_string_pretty(&result)?)?;
    println!("k = {k}");
    println!("tau = {tau:.17e}");
    run.finish(
        &args.out_dir,
        Some((cfg.seed, source)),
        Some(&cfg),
        vec![args.input.clone()],
        vec![path],
    )
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), Error> {
    let run = Run::new("evaluate");
    let text = fs::read_to_string(&args.report).map_err(|e| Error::Io {
        path: args.report.clone(),
        source: e,
    })?;
    let report = DetectionReport::from_json(&text)?;
    let truth = GroundTruth::load(&args.truth)?;
    let ev = evaluate(&report, &truth)?;
    create_dir(&args.out_dir)?;
    let path = args.out_dir.join("metrics.json");
    write(&path, &json::to_string_pretty(&ev)?)?;
    println!(
        "Q = {}, Q^ = {}, ARI = {:.4}, block errors {:?}",
        ev.q_true, ev.q_hat, ev.ari, ev.block_errors
    );
    if let (Some(a), Some(r)) = (ev.alignment, ev.cp_series_rank) {
        println!("alignment = {a:.4}, CP-series rank = {r:.2}");
    }
    run.finish(
        &args.out_dir,
        None,
        None,
        vec![args.report.clone(), args.truth.clone()],
        vec![path],
    )
}

/// One exit code per error kind; 2 is left to argument errors.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 3,
        Error::Parse { .. } => 4,
        Error::Shape(_) => 5,
        Error::Dimension(_) => 6,
        Error::Config(_) => 7,
        Error::Interval(_) => 8,
        Error::Numerical(_) => 9,
        Error::Degenerate(_) => 10,
        Error::Input(_) => 11,
        Error::Serde(_) => 12,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Tune(a) => cmd_tune(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
