//! Command implementations behind the `halosim` binary.
//!
//! Every subcommand reads a JSON run configuration, applies command-line
//! overrides, and works inside an output directory. Failures split into two
//! exit codes: problems with the configuration or its referenced inputs exit
//! with 1, failures while running or writing results exit with 2.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use thiserror::Error;

use halosim_core::comm::FetchLedger;
use halosim_core::config::{build_world, RunConfig};
use halosim_core::graph::GlobalGraph;
use halosim_core::ingest::{
    self, generate, partition_greedy_bfs, partition_hash, write_edge_list, write_partition_map,
    LoadOptions,
};
use halosim_core::metrics::{windowed_trajectory, ClockMode, RunMetrics, RunMode};
use halosim_core::perf_model::prefetch_total_ns;
use halosim_core::pipeline::{run_baseline, run_prefetch, run_prefetch_wallclock, World};
use halosim_core::prefetch::PolicyParams;

/// Failure with its process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// The configuration, or an input it references, is unusable. Exit 1.
    #[error("{0}")]
    Config(String),
    /// The run itself or an output write failed. Exit 2.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "halosim", version, about = "Distributed-training halo-buffer simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the configured synthetic graph and write its edge list.
    Generate(CommonArgs),
    /// Write the node-to-partition map for the configured graph.
    Partition(CommonArgs),
    /// Run the configured experiment and write metrics plus a summary.
    Run(CommonArgs),
    /// Run every policy grid point and write a ranked comparison.
    Sweep(CommonArgs),
    /// Summarize previously written metrics JSON files.
    Report(ReportArgs),
}

/// Flags shared by every config-driven subcommand.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory. Falls back to $HALOSIM_OUT, then "halosim-out".
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for sweep points (default: one per CPU).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Override the config's RNG seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the config's clock mode.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Skip the prefetch run; write baseline metrics only.
    #[arg(long)]
    pub baseline_only: bool,
    /// Force the eviction policy off.
    #[arg(long)]
    pub no_eviction: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metrics JSON files to summarize.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Virtual,
    Wallclock,
}

impl From<ModeArg> for ClockMode {
    fn from(m: ModeArg) -> ClockMode {
        match m {
            ModeArg::Virtual => ClockMode::Virtual,
            ModeArg::Wallclock => ClockMode::Wallclock,
        }
    }
}

/// Parses arguments, runs the chosen command, and returns the exit code.
pub fn execute<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1, // bad usage is a configuration problem
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Generate(args) => cmd_generate(args),
        Command::Partition(args) => cmd_partition(args),
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Report(args) => cmd_report(args),
    }
}

/// Loads the config and applies command-line overrides.
fn effective_config(args: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&args.config).map_err(config_err)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = args.mode {
        cfg.mode = mode.into();
    }
    if args.no_eviction {
        cfg.policy.eviction = false;
    }
    Ok(cfg)
}

/// Resolves and creates the output directory: flag, then env, then default.
fn out_dir(args: &CommonArgs) -> Result<PathBuf, CliError> {
    let dir = args
        .out
        .clone()
        .or_else(|| std::env::var_os("HALOSIM_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("halosim-out"));
    std::fs::create_dir_all(&dir)
        .map_err(|e| runtime_err(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

/// Reads or generates the configured graph without partitioning it.
fn load_graph(cfg: &RunConfig) -> Result<GlobalGraph, CliError> {
    match (&cfg.graph.file, &cfg.graph.generate) {
        (Some(src), None) => ingest::read_edge_list(
            &src.path,
            &LoadOptions {
                directed: src.directed,
                feature_dim: cfg.graph.feature_dim,
                num_nodes_override: src.num_nodes_override,
            },
        )
        .map_err(config_err),
        (None, Some(spec)) => generate(spec, cfg.graph.feature_dim).map_err(config_err),
        _ => Err(CliError::Config(
            "graph: exactly one of `file` and `generate` must be set".into(),
        )),
    }
}

fn cmd_generate(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = effective_config(args)?;
    let Some(spec) = &cfg.graph.generate else {
        return Err(CliError::Config(
            "graph.generate: the generate command needs a generator spec".into(),
        ));
    };
    let graph = generate(spec, cfg.graph.feature_dim).map_err(config_err)?;
    let out = out_dir(args)?;
    let path = out.join("edges.tsv");
    write_edge_list(&path, &graph).map_err(runtime_err)?;
    println!(
        "wrote {} ({} nodes, {} edges)",
        path.display(),
        graph.num_nodes(),
        graph.num_edges()
    );
    Ok(())
}

fn cmd_partition(args: &CommonArgs) -> Result<(), CliError> {
    use halosim_core::config::PartitionMethod;
    let cfg = effective_config(args)?;
    let graph = load_graph(&cfg)?;
    let k = cfg.partitioning.num_partitions;
    let ownership = match cfg.partitioning.method {
        PartitionMethod::Hash => partition_hash(&graph, k).map_err(config_err)?,
        PartitionMethod::GreedyBfs => partition_greedy_bfs(&graph, k).map_err(config_err)?,
        PartitionMethod::File => {
            return Err(CliError::Config(
                "partitioning.method: `file` maps are inputs; pick hash or greedy-bfs".into(),
            ))
        }
    };
    let out = out_dir(args)?;
    let path = out.join("partition_map.tsv");
    write_partition_map(&path, &ownership).map_err(runtime_err)?;
    println!("wrote {} ({} nodes, {} partitions)", path.display(), ownership.len(), k);
    Ok(())
}

/// Writes `<name>_metrics.csv` and `<name>_metrics.json` into `out`.
fn write_metrics(out: &Path, name: &str, metrics: &RunMetrics) -> Result<(), CliError> {
    let csv_path = out.join(format!("{name}_metrics.csv"));
    let file = File::create(&csv_path)
        .map_err(|e| runtime_err(format!("cannot create {}: {e}", csv_path.display())))?;
    metrics.write_csv(BufWriter::new(file)).map_err(runtime_err)?;

    let json_path = out.join(format!("{name}_metrics.json"));
    let file = File::create(&json_path)
        .map_err(|e| runtime_err(format!("cannot create {}: {e}", json_path.display())))?;
    metrics.write_json(BufWriter::new(file)).map_err(runtime_err)?;
    Ok(())
}

fn run_for_mode(world: &World, mode: ClockMode) -> Result<RunMetrics, CliError> {
    match mode {
        ClockMode::Virtual => run_prefetch(world).map_err(runtime_err),
        ClockMode::Wallclock => run_prefetch_wallclock(world).map_err(runtime_err),
    }
}

fn seconds(ns: u64) -> f64 {
    ns as f64 / 1e9
}

fn fmt_opt(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.4}"),
        None => "n/a".to_string(),
    }
}

/// One summary line per run: totals and the headline rates.
fn print_run_line(label: &str, metrics: &RunMetrics) {
    let a = metrics.aggregates();
    println!(
        "{label:<9} total {:>12.6} s   hit rate {}   fetch reduction {}   overlap {:.4}",
        seconds(a.total_ns),
        fmt_opt(a.hit_rate),
        fmt_opt(a.fetch_reduction),
        a.overlap_efficiency,
    );
}

/// Compares the closed-form schedule against each trainer's engine total.
fn print_model_check(metrics: &RunMetrics) {
    if metrics.mode != RunMode::Prefetch {
        return;
    }
    for t in &metrics.trainers {
        let Some(tail) = t.tail_prepare_ns else { continue };
        let timings: Vec<_> = metrics
            .steps
            .iter()
            .filter(|r| r.trainer == t.trainer)
            .map(|r| r.timing)
            .collect();
        match prefetch_total_ns(&timings, tail) {
            Ok(model) => {
                let verdict = if metrics.clock == ClockMode::Wallclock {
                    // Measured time cannot match the model exactly; show drift.
                    format!("wall drift {:+.3}%", drift_pct(model, t.total_ns))
                } else if model == t.total_ns {
                    "exact".to_string()
                } else {
                    format!("MISMATCH by {}", t.total_ns.abs_diff(model))
                };
                println!(
                    "  trainer {:>2}: model {:>12.6} s vs engine {:>12.6} s ({verdict})",
                    t.trainer,
                    seconds(model),
                    seconds(t.total_ns),
                );
            }
            Err(e) => println!("  trainer {:>2}: model not evaluable ({e})", t.trainer),
        }
    }
}

fn drift_pct(model: u64, engine: u64) -> f64 {
    if model == 0 {
        return 0.0;
    }
    (engine as f64 - model as f64) / model as f64 * 100.0
}

fn print_trajectory(metrics: &RunMetrics, window: u64) {
    let points = windowed_trajectory(&metrics.steps, window);
    let first = points.first().and_then(|p| p.hit_rate);
    let last = points.last().and_then(|p| p.hit_rate);
    if first.is_some() || last.is_some() {
        println!(
            "  hit-rate trajectory (window {window}): first {} last {}",
            fmt_opt(first),
            fmt_opt(last)
        );
    }
}

fn cmd_run(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = effective_config(args)?;
    let world = build_world(&cfg).map_err(config_err)?;
    let out = out_dir(args)?;
    cfg.save(&out.join("effective_config.json")).map_err(runtime_err)?;

    let baseline = run_baseline(&world).map_err(runtime_err)?;
    write_metrics(&out, "baseline", &baseline)?;
    print_run_line("baseline", &baseline);

    if args.baseline_only {
        return Ok(());
    }

    let prefetch = run_for_mode(&world, cfg.mode)?;
    write_metrics(&out, "prefetch", &prefetch)?;
    print_run_line("prefetch", &prefetch);
    print_trajectory(&prefetch, cfg.output.window);
    print_model_check(&prefetch);
    if prefetch.total_ns > 0 {
        println!(
            "speedup over baseline: {:.4}x",
            baseline.total_ns as f64 / prefetch.total_ns as f64
        );
    }
    Ok(())
}

/// Result of one sweep grid point, ready for ranking.
struct SweepRow {
    policy: PolicyParams,
    outcome: Result<SweepOutcome, String>,
}

struct SweepOutcome {
    total_ns: u64,
    hit_rate: Option<f64>,
    fetch_reduction: Option<f64>,
    overlap_efficiency: f64,
    evicted: u64,
    replaced: u64,
}

fn cmd_sweep(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = effective_config(args)?;
    let points = cfg.sweep_points();
    if points.is_empty() {
        return Err(CliError::Config("sweep: the parameter grid is empty".into()));
    }
    let world = build_world(&cfg).map_err(config_err)?;
    let out = out_dir(args)?;
    cfg.save(&out.join("effective_config.json")).map_err(runtime_err)?;

    let baseline = run_baseline(&world).map_err(runtime_err)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0))
        .build()
        .map_err(|e| runtime_err(format!("cannot build worker pool: {e}")))?;
    // Every point shares the immutable graph through the world's Arc and the
    // config's seed, so sampled blocks match step-for-step across points.
    let mut rows: Vec<SweepRow> = pool.install(|| {
        points
            .par_iter()
            .map(|&policy| {
                let mut w = world.clone();
                w.policy = policy;
                let outcome = run_for_mode(&w, cfg.mode)
                    .map(|m| {
                        let a = m.aggregates();
                        SweepOutcome {
                            total_ns: a.total_ns,
                            hit_rate: a.hit_rate,
                            fetch_reduction: a.fetch_reduction,
                            overlap_efficiency: a.overlap_efficiency,
                            evicted: a.evicted,
                            replaced: a.replaced,
                        }
                    })
                    .map_err(|e| e.to_string());
                SweepRow { policy, outcome }
            })
            .collect()
    });

    // Fastest first; hit rate breaks ties. Failed points sink to the bottom.
    rows.sort_by(|a, b| match (&a.outcome, &b.outcome) {
        (Ok(x), Ok(y)) => x
            .total_ns
            .cmp(&y.total_ns)
            .then_with(|| {
                y.hit_rate
                    .unwrap_or(f64::NEG_INFINITY)
                    .total_cmp(&x.hit_rate.unwrap_or(f64::NEG_INFINITY))
            })
            .then_with(|| a.policy.fraction.total_cmp(&b.policy.fraction))
            .then_with(|| a.policy.decay.total_cmp(&b.policy.decay))
            .then_with(|| a.policy.interval.cmp(&b.policy.interval)),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        (Err(_), Err(_)) => std::cmp::Ordering::Equal,
    });

    write_sweep_csv(&out.join("sweep.csv"), &rows, &baseline)?;

    println!(
        "baseline  total {:>12.6} s   ({} steps)",
        seconds(baseline.total_ns),
        baseline.steps.len()
    );
    let mut failures = 0usize;
    for row in &rows {
        let p = &row.policy;
        match &row.outcome {
            Ok(o) => println!(
                "f={:<5} decay={:<7} interval={:<5} total {:>12.6} s   hit rate {}   speedup {:.4}x",
                p.fraction,
                p.decay,
                p.interval,
                seconds(o.total_ns),
                fmt_opt(o.hit_rate),
                baseline.total_ns as f64 / o.total_ns.max(1) as f64,
            ),
            Err(e) => {
                failures += 1;
                println!("f={:<5} decay={:<7} interval={:<5} FAILED: {e}", p.fraction, p.decay, p.interval);
            }
        }
    }
    if failures > 0 {
        return Err(CliError::Runtime(format!("{failures} sweep point(s) failed")));
    }
    Ok(())
}

fn write_sweep_csv(path: &Path, rows: &[SweepRow], baseline: &RunMetrics) -> Result<(), CliError> {
    let file = File::create(path)
        .map_err(|e| runtime_err(format!("cannot create {}: {e}", path.display())))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record([
        "fraction",
        "decay",
        "interval",
        "total_ns",
        "speedup_vs_baseline",
        "hit_rate",
        "fetch_reduction",
        "overlap_efficiency",
        "evicted",
        "replaced",
        "error",
    ])
    .map_err(runtime_err)?;
    for row in rows {
        let p = &row.policy;
        let record = match &row.outcome {
            Ok(o) => vec![
                p.fraction.to_string(),
                p.decay.to_string(),
                p.interval.to_string(),
                o.total_ns.to_string(),
                format!("{:.6}", baseline.total_ns as f64 / o.total_ns.max(1) as f64),
                o.hit_rate.map(|v| v.to_string()).unwrap_or_default(),
                o.fetch_reduction.map(|v| v.to_string()).unwrap_or_default(),
                o.overlap_efficiency.to_string(),
                o.evicted.to_string(),
                o.replaced.to_string(),
                String::new(),
            ],
            Err(e) => vec![
                p.fraction.to_string(),
                p.decay.to_string(),
                p.interval.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                e.clone(),
            ],
        };
        w.write_record(&record).map_err(runtime_err)?;
    }
    w.flush().map_err(runtime_err)?;
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<(), CliError> {
    println!(
        "{:<28} {:<9} {:<9} {:>8} {:>14} {:>9} {:>10} {:>9}",
        "run", "mode", "clock", "steps", "total_s", "hit_rate", "reduction", "overlap"
    );
    for path in &args.files {
        let file = File::open(path)
            .map_err(|e| runtime_err(format!("cannot open {}: {e}", path.display())))?;
        let (metrics, aggregates) = RunMetrics::read_json(BufReader::new(file))
            .map_err(|e| runtime_err(format!("{}: {e}", path.display())))?;
        println!(
            "{:<28} {:<9} {:<9} {:>8} {:>14.6} {:>9} {:>10} {:>9.4}",
            metrics.run_id,
            match metrics.mode {
                RunMode::Baseline => "baseline",
                RunMode::Prefetch => "prefetch",
            },
            match metrics.clock {
                ClockMode::Virtual => "virtual",
                ClockMode::Wallclock => "wallclock",
            },
            aggregates.steps_recorded,
            seconds(aggregates.total_ns),
            fmt_opt(aggregates.hit_rate),
            fmt_opt(aggregates.fetch_reduction),
            aggregates.overlap_efficiency,
        );
        print_ledger_line(&aggregates.ledger);
    }
    Ok(())
}

fn print_ledger_line(ledger: &FetchLedger) {
    println!(
        "{:<28} hits {} misses {} replacements {} init {} rpc calls {}",
        "", ledger.hit_copy_nodes, ledger.miss_fetch_nodes, ledger.replacement_fetch_nodes,
        ledger.init_fetch_nodes, ledger.rpc_requests,
    );
}
