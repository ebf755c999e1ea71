//! Command-line surface: dataset generation, full-grid novelty maps,
//! autonomous-experiment runs, the random variability baseline, and trace
//! re-evaluation.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 resource cap
//! exceeded, 5 numerical failure (a partial trace is still written).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use insane_core::engine::{self, ExperimentTrace, Mode, RunConfig, RunError};
use insane_core::evalkit;
use insane_core::novelty::{self, NoveltyConfig, NoveltyMethod};
use insane_core::synthgen::{self, SynthConfig};
use insane_core::{dataspace, Error, ErrorKind};

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_CAP: u8 = 4;
const EXIT_NUMERICAL: u8 = 5;

#[derive(Parser)]
#[command(
    name = "insane",
    version,
    about = "Novelty-scored, strategically sampled active learning on image-spectrum grids"
)]
struct Cli {
    /// Cap on worker threads; outputs are identical for any value >= 1.
    #[arg(long, global = true, env = "INSANE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset directory.
    Generate(GenerateArgs),
    /// Score every pixel of a dataset with a novelty method and export maps.
    #[command(name = "score-map")]
    ScoreMap(ScoreMapArgs),
    /// Run one autonomous-experiment realization and export its trace.
    Run(RunArgs),
    /// Random-sampling variability baseline over many realizations.
    Baseline(BaselineArgs),
    /// Recompute variability and scalarizer error from a trace and dataset.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Generator config JSON; omitted fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Generation seed; defaults to the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ScoreMapArgs {
    /// Dataset directory.
    #[arg(long)]
    dataset: PathBuf,
    /// Novelty method: dtc | nn | if | ocsvm | lof.
    #[arg(long)]
    method: String,
    /// Neighbor count for nn and lof.
    #[arg(long)]
    k: Option<usize>,
    /// Tree count for the isolation forest.
    #[arg(long)]
    trees: Option<usize>,
    /// Per-tree subsample for the isolation forest (default min(256, n)).
    #[arg(long)]
    subsample: Option<usize>,
    /// One-class SVM margin fraction in (0, 1].
    #[arg(long)]
    nu: Option<f64>,
    /// RBF kernel width (default 1 / (d * var)).
    #[arg(long)]
    gamma: Option<f64>,
    /// Seed for the isolation forest.
    #[arg(long, default_value_t = 0)]
    scorer_seed: u64,
    /// Emit raw scores instead of min-max normalized ones.
    #[arg(long)]
    no_normalize: bool,
    /// Point-count cap for the O(n^2) methods.
    #[arg(long)]
    cap: Option<usize>,
    /// Output prefix; writes <prefix>.csv and <prefix>.pgm.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Dataset directory.
    #[arg(long)]
    dataset: PathBuf,
    /// Run config JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Mode: scalarizer | novelty | insane.
    #[arg(long)]
    mode: Option<String>,
    /// Novelty scorer for novelty/insane modes: dtc | nn | if | ocsvm | lof.
    #[arg(long)]
    scorer: Option<String>,
    /// Neighbor count for nn and lof scorers.
    #[arg(long)]
    k: Option<usize>,
    /// Initial random measurements.
    #[arg(long)]
    init: Option<usize>,
    /// Acquisition steps after seeding.
    #[arg(long)]
    steps: Option<usize>,
    /// Master seed for the realization.
    #[arg(long)]
    seed: Option<u64>,
    /// Odd patch side in pixels.
    #[arg(long)]
    patch_side: Option<usize>,
    /// Steps between scalarizer-error evaluations.
    #[arg(long)]
    eval_cadence: Option<usize>,
    /// Strategic-sampling jump period.
    #[arg(long)]
    jump_period: Option<usize>,
    /// Proximity cost length scale (pixels).
    #[arg(long)]
    tau: Option<f64>,
    /// Jump radius (pixels).
    #[arg(long)]
    rho: Option<f64>,
    /// Training epochs per step.
    #[arg(long)]
    epochs: Option<usize>,
    /// Fit on measurement-time targets instead of recomputing each step.
    #[arg(long)]
    frozen_targets: bool,
    /// Output trace CSV path; a config snapshot lands in <out>.meta.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    /// Dataset directory.
    #[arg(long)]
    dataset: PathBuf,
    /// Pixels per realization.
    #[arg(long)]
    n_points: usize,
    /// Number of realizations.
    #[arg(long)]
    realizations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset directory.
    #[arg(long)]
    dataset: PathBuf,
    /// Trace CSV written by `run`.
    #[arg(long)]
    trace: PathBuf,
    /// Patch side; defaults to the trace's meta snapshot when present.
    #[arg(long)]
    patch_side: Option<usize>,
}

fn exit_for(err: &Error) -> u8 {
    match err.kind() {
        ErrorKind::Config => EXIT_CONFIG,
        ErrorKind::Io => EXIT_IO,
        ErrorKind::ResourceCap => EXIT_CAP,
        ErrorKind::Numerical => EXIT_NUMERICAL,
    }
}

fn fail(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    let mut source = std::error::Error::source(err);
    while let Some(s) = source {
        eprintln!("  caused by: {s}");
        source = s.source();
    }
    ExitCode::from(exit_for(err))
}

fn load_dataset(path: &Path) -> Result<dataspace::GridDataset, Error> {
    dataspace::load_dataset(path)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad {what} at {}: {e}", path.display())))
}

fn cmd_generate(args: &GenerateArgs) -> ExitCode {
    let cfg: SynthConfig = match &args.config {
        Some(path) => match read_json(path, "generator config") {
            Ok(c) => c,
            Err(e) => return fail(&e),
        },
        None => SynthConfig::default(),
    };
    let seed = args.seed.unwrap_or(cfg.master_seed);
    let ds = match synthgen::generate(&cfg, seed) {
        Ok(ds) => ds,
        Err(e) => return fail(&e),
    };
    if let Err(e) = dataspace::save_dataset(&ds, &args.out) {
        return fail(&e);
    }
    let hist = dataspace::label_histogram(&ds);
    let pixels = (ds.height() * ds.width()) as f64;
    println!(
        "dataset {}x{}x{} written to {}",
        ds.height(),
        ds.width(),
        ds.spectrum_len(),
        args.out.display()
    );
    println!(
        "labels: up={} down={} in_plane={} wall={} anomaly={} (anomaly fraction {:.4})",
        hist[0],
        hist[1],
        hist[2],
        hist[3],
        hist[4],
        hist[4] as f64 / pixels
    );
    let w = ds.width();
    let loops: Vec<Vec<f64>> = (0..ds.height() * ds.width())
        .map(|px| ds.spectrum_at((px / w, px % w)).expect("in grid"))
        .collect();
    match evalkit::variability(&loops) {
        Ok(v) => println!("dataset_variability={}", evalkit::fmt_float(v)),
        Err(e) => return fail(&e),
    }
    ExitCode::SUCCESS
}

fn cmd_score_map(args: &ScoreMapArgs) -> ExitCode {
    let method = match NoveltyMethod::parse(&args.method) {
        Ok(m) => m,
        Err(e) => return fail(&e),
    };
    let defaults = NoveltyConfig::default();
    let cfg = NoveltyConfig {
        method,
        k: args.k.unwrap_or(defaults.k),
        n_trees: args.trees.unwrap_or(defaults.n_trees),
        subsample: args.subsample,
        nu: args.nu.unwrap_or(defaults.nu),
        gamma: args.gamma,
        seed: args.scorer_seed,
        normalize: !args.no_normalize,
        pairwise_cap: args.cap.unwrap_or(defaults.pairwise_cap),
    };
    if let Err(e) = cfg.validate() {
        return fail(&e);
    }
    let ds = match load_dataset(&args.dataset) {
        Ok(ds) => ds,
        Err(e) => return fail(&e),
    };
    let map = match novelty::novelty_map(&ds, &cfg) {
        Ok(m) => m,
        Err(e) => return fail(&e),
    };
    let csv_path = args.out.with_extension("csv");
    let pgm_path = args.out.with_extension("pgm");
    if let Err(e) = evalkit::export_map_csv(&map, ds.height(), ds.width(), &csv_path) {
        return fail(&e);
    }
    if let Err(e) = evalkit::export_map_pgm(&map, ds.height(), ds.width(), &pgm_path) {
        return fail(&e);
    }
    println!(
        "{} map written to {} and {}",
        method.name(),
        csv_path.display(),
        pgm_path.display()
    );
    ExitCode::SUCCESS
}

fn build_run_config(args: &RunArgs) -> Result<RunConfig, Error> {
    let mut cfg: RunConfig = match &args.config {
        Some(path) => read_json(path, "run config")?,
        None => RunConfig::default(),
    };
    if let Some(mode) = &args.mode {
        cfg.mode = Mode::parse(mode)?;
    }
    if cfg.mode == Mode::Scalarizer && args.scorer.is_some() {
        return Err(Error::Config(
            "--scorer is incompatible with scalarizer mode".into(),
        ));
    }
    if let Some(scorer) = &args.scorer {
        cfg.novelty.method = NoveltyMethod::parse(scorer)?;
    }
    if let Some(k) = args.k {
        cfg.novelty.k = k;
    }
    if let Some(v) = args.init {
        cfg.n_init = v;
    }
    if let Some(v) = args.steps {
        cfg.n_steps = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.patch_side {
        cfg.patch_side = v;
    }
    if let Some(v) = args.eval_cadence {
        cfg.eval_cadence = v;
    }
    if let Some(v) = args.epochs {
        cfg.fit.epochs = v;
    }
    if args.frozen_targets {
        cfg.frozen_targets = true;
    }
    if args.jump_period.is_some() || args.tau.is_some() || args.rho.is_some() {
        let mut acq = cfg.acquisition.unwrap_or_default();
        if let Some(v) = args.jump_period {
            acq.jump_period = v;
        }
        if let Some(v) = args.tau {
            acq.proximity_scale = v;
        }
        if let Some(v) = args.rho {
            acq.jump_radius = v;
        }
        acq.sane = cfg.mode == Mode::Insane || acq.sane;
        cfg.acquisition = Some(acq);
    }
    Ok(cfg)
}

fn meta_path(trace_path: &Path) -> PathBuf {
    let mut s = trace_path.as_os_str().to_os_string();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn write_trace_outputs(trace: &ExperimentTrace, out: &Path) -> Result<(), Error> {
    evalkit::export_trace_csv(trace, out)?;
    // variability of the seed set is the reference for the ratio series
    let initial_variability = trace
        .records
        .get(trace.config.n_init.saturating_sub(1))
        .map(|r| r.variability);
    let ratio = match (trace.final_variability(), initial_variability) {
        (Some(f), Some(i)) if i > 0.0 => Some(f / i),
        _ => None,
    };
    let meta = serde_json::json!({
        "config": trace.config,
        "dataset_hash": trace.dataset_hash,
        "complete": trace.complete,
        "records": trace.records.len(),
        "jump_count": trace.jump_count(),
        "initial_variability": initial_variability,
        "final_variability": trace.final_variability(),
        "variability_ratio_to_initial": ratio,
        "final_nme": trace.final_nme(),
    });
    let path = meta_path(out);
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n",
    )
    .map_err(|e| Error::Io { path, source: e })
}

fn cmd_run(args: &RunArgs) -> ExitCode {
    let cfg = match build_run_config(args) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let ds = match load_dataset(&args.dataset) {
        Ok(ds) => ds,
        Err(e) => return fail(&e),
    };
    match engine::run_experiment(&ds, &cfg) {
        Ok(trace) => {
            if let Err(e) = write_trace_outputs(&trace, &args.out) {
                return fail(&e);
            }
            let nme = trace
                .final_nme()
                .map(evalkit::fmt_float)
                .unwrap_or_else(|| "nan".into());
            println!(
                "run complete: mode={} records={} jump_count={}",
                trace.config.mode.name(),
                trace.records.len(),
                trace.jump_count()
            );
            println!(
                "final_nme={} final_variability={} jump_count={}",
                nme,
                evalkit::fmt_float(trace.final_variability().unwrap_or(0.0)),
                trace.jump_count()
            );
            ExitCode::SUCCESS
        }
        Err(RunError::Setup(e)) => fail(&e),
        Err(RunError::Aborted {
            step,
            partial,
            source,
        }) => {
            eprintln!("error: run aborted at step {step}: {source}");
            if let Err(e) = write_trace_outputs(&partial, &args.out) {
                eprintln!("error: failed to persist partial trace: {e}");
            } else {
                eprintln!(
                    "partial trace with {} records written to {}",
                    partial.records.len(),
                    args.out.display()
                );
            }
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}

fn cmd_baseline(args: &BaselineArgs) -> ExitCode {
    let ds = match load_dataset(&args.dataset) {
        Ok(ds) => ds,
        Err(e) => return fail(&e),
    };
    match evalkit::random_baseline(&ds, args.n_points, args.realizations, args.seed) {
        Ok((mean, std)) => {
            println!(
                "variability baseline over {} realizations of {} points:",
                args.realizations, args.n_points
            );
            println!(
                "baseline_mean={} baseline_std={}",
                evalkit::fmt_float(mean),
                evalkit::fmt_float(std)
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}

fn cmd_eval(args: &EvalArgs) -> ExitCode {
    let ds = match load_dataset(&args.dataset) {
        Ok(ds) => ds,
        Err(e) => return fail(&e),
    };
    let text = match std::fs::read_to_string(&args.trace) {
        Ok(t) => t,
        Err(e) => {
            return fail(&Error::Io {
                path: args.trace.clone(),
                source: e,
            })
        }
    };
    // recover per-record locations from the CSV
    let mut measured = insane_core::MeasuredSet::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 9 {
            return fail(&Error::Config(format!(
                "trace line {} has {} fields, expected 9",
                lineno + 1,
                fields.len()
            )));
        }
        let parse = |s: &str, name: &'static str| -> Result<usize, Error> {
            s.parse().map_err(|_| {
                Error::Config(format!("bad {name} '{s}' on trace line {}", lineno + 1))
            })
        };
        let row = match parse(fields[1], "row") {
            Ok(v) => v,
            Err(e) => return fail(&e),
        };
        let col = match parse(fields[2], "col") {
            Ok(v) => v,
            Err(e) => return fail(&e),
        };
        let spectrum = match ds.spectrum_at((row, col)) {
            Ok(s) => s,
            Err(e) => return fail(&e),
        };
        if let Err(e) = measured.insert((row, col), spectrum) {
            return fail(&e);
        }
    }
    if measured.len() < 2 {
        return fail(&Error::Config("trace holds fewer than 2 records".into()));
    }

    // pick up the run's own settings when the sidecar is available
    let meta: Option<serde_json::Value> = std::fs::read_to_string(meta_path(&args.trace))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());
    let meta_cfg: Option<RunConfig> = meta
        .as_ref()
        .and_then(|m| m.get("config").cloned())
        .and_then(|c| serde_json::from_value(c).ok());
    let patch_side = args
        .patch_side
        .or(meta_cfg.as_ref().map(|c| c.patch_side))
        .unwrap_or(RunConfig::default().patch_side);
    let fit = meta_cfg
        .map(|c| c.fit)
        .unwrap_or_else(|| RunConfig::default().fit);

    let loops = measured.spectra();
    let var = match evalkit::variability(&loops) {
        Ok(v) => v,
        Err(e) => return fail(&e),
    };
    let nme = match evalkit::eval_nme(&ds, &measured, patch_side, &fit) {
        Ok(v) => evalkit::fmt_float(v),
        Err(Error::DegenerateRange { .. }) => "nan".into(),
        Err(e) => return fail(&e),
    };
    println!("records={} patch_side={patch_side}", measured.len());
    println!("nme={} variability={}", nme, evalkit::fmt_float(var));
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(EXIT_CONFIG);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: thread pool setup failed: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match &cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::ScoreMap(args) => cmd_score_map(args),
        Command::Run(args) => cmd_run(args),
        Command::Baseline(args) => cmd_baseline(args),
        Command::Eval(args) => cmd_eval(args),
    }
}
