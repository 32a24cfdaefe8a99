//! Command-line fungibility analyzer.
//!
//! `analyze` ingests a ledger, solves the absorbing chain, and reports
//! per-state fungibility; `stats` re-aggregates a saved report;
//! `trajectory` follows value forward from an absorber owner. Exit
//! codes: 0 success, 1 bad input or usage, 2 iteration or step budget
//! exhausted.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fungraph_core::io::{self, format_sig};
use fungraph_core::solver::SolverMethod;
use fungraph_core::{
    augment_absorbers, build_account_graph, build_chain, build_temporal_account_graph,
    build_utxo_graph, collapse_shielded_records, fungibility_trajectory, prune_non_absorbing,
    simulate, solve, AbsorbingChain, AbsorptionResult, AugmentedGraph, Error, FungibilityReport,
    NodeId, SolverConfig, SolverMode, SummaryStats, TransferRecord, MINT,
};

#[derive(Parser)]
#[command(
    name = "fungraph",
    version,
    about = "Fungibility analysis over transaction graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the transaction graph, solve absorption, report fungibility
    Analyze(AnalyzeArgs),
    /// Recompute summary statistics from a saved report
    Stats(StatsArgs),
    /// Mean fungibility along forward walks from an absorber owner
    Trajectory(TrajectoryArgs),
    /// Monte-Carlo cross-check of one state's absorption distribution
    #[command(hide = true)]
    Oracle(OracleArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Model {
    /// JSON lines of transactions with explicit inputs and outputs
    Utxo,
    /// CSV of sequenced account-to-account transfers
    Account,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverChoice {
    /// Exact up to the cutoff, iterative beyond it
    Auto,
    /// Dense factorization, rejects graphs above the cutoff
    Exact,
    /// Truncated power series with per-state residual bounds
    Iterative,
}

#[derive(Args)]
struct PipelineArgs {
    /// Ledger model of the input file
    #[arg(long, value_enum)]
    model: Model,

    /// Input path: JSON lines for utxo, CSV for account
    #[arg(long)]
    input: PathBuf,

    /// Decimal exponent scaling display units to integer base units
    #[arg(long, default_value_t = 0)]
    exponent: i32,

    /// Account model only: one state per balance-changing event
    #[arg(long)]
    temporal: bool,

    /// Merge all shielded endpoints into one pool state
    #[arg(long)]
    shielded_collapse: bool,

    /// Account model only: CSV of `node,balance` declarations folded in
    /// as funding events before the first transfer
    #[arg(long)]
    balances: Option<PathBuf>,

    /// Worker thread cap, 0 means one per core
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct SolverArgs {
    /// Solver selection
    #[arg(long = "solver", value_enum, default_value_t = SolverChoice::Auto)]
    solver: SolverChoice,

    /// Iterative stopping threshold on the residual term
    #[arg(long, default_value_t = 1e-3)]
    delta: f64,

    /// Iterative series length cap before giving up
    #[arg(long, default_value_t = 100_000)]
    max_iterations: usize,

    /// States per work block in the iterative solver
    #[arg(long, default_value_t = 32)]
    block_width: usize,

    /// Largest state count the exact solver accepts
    #[arg(long, default_value_t = 2000)]
    exact_cutoff: usize,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,

    #[command(flatten)]
    solver: SolverArgs,

    /// States to report: `sinks`, `all`, or a comma-separated id list
    #[arg(long, default_value = "sinks")]
    query: String,

    /// CSV of relative pool-origin weights; adds the pool share of this
    /// prior's entropy to each state's fungibility
    #[arg(long)]
    zcash_prior: Option<PathBuf>,

    /// Report CSV path; stdout carries only the summary
    #[arg(long)]
    output: Option<PathBuf>,

    /// Also write full absorption rows to <output>.dist.jsonl
    #[arg(long, requires = "output")]
    distributions: bool,

    /// Bin count for a fungibility histogram at <output>.hist.csv
    #[arg(long, requires = "output")]
    histogram: Option<usize>,
}

#[derive(Args)]
struct StatsArgs {
    /// Report CSV produced by `analyze --output`
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct TrajectoryArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,

    #[command(flatten)]
    solver: SolverArgs,

    /// Absorber owner the walks start from
    #[arg(long)]
    start: String,

    /// Number of forward walks
    #[arg(long, default_value_t = 1000)]
    walks: u64,

    /// Longest walk to follow
    #[arg(long, default_value_t = 50)]
    max_steps: usize,

    /// Generator seed
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// CSV output path, stdout when omitted
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,

    /// Transient state the walks start from
    #[arg(long)]
    start: String,

    /// Number of reversed walks
    #[arg(long, default_value_t = 100_000)]
    walks: u64,

    /// Generator seed
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Abort once any single walk exceeds this many steps
    #[arg(long, default_value_t = fungraph_core::oracle::DEFAULT_STEP_CAP)]
    step_cap: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.command {
        Command::Analyze(args) => run_analyze(args),
        Command::Stats(args) => run_stats(args),
        Command::Trajectory(args) => run_trajectory(args),
        Command::Oracle(args) => run_oracle(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// Budget exhaustion is retryable with different settings, so it gets a
/// code of its own; everything else that fails is a 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::NonConvergence { .. }) | Some(Error::WalkStepCap { .. }) => 2,
        _ => 1,
    }
}

/// Built once per invocation: the pruned augmented graph plus its chain.
struct Pipeline {
    aug: AugmentedGraph,
    chain: AbsorbingChain,
    pruned: usize,
}

fn build_pipeline(args: &PipelineArgs) -> anyhow::Result<Pipeline> {
    if args.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(args.threads)
            .build_global()
            .context("worker pool already initialized")?;
    }
    let graph = match args.model {
        Model::Utxo => {
            if args.temporal {
                bail!("--temporal only applies to --model account");
            }
            if args.balances.is_some() {
                bail!("--balances only applies to --model account");
            }
            let txs = io::parse_utxo(&args.input, args.exponent)?;
            build_utxo_graph(&txs, args.shielded_collapse)?
        }
        Model::Account => {
            let (mut records, warnings) = io::parse_transfers(&args.input, args.exponent)?;
            for warning in &warnings {
                eprintln!("warning: {warning}");
            }
            if let Some(path) = &args.balances {
                for (node, amount) in io::parse_balances(path, args.exponent)? {
                    records.push(TransferRecord {
                        seq: 0,
                        src: NodeId::from(MINT),
                        dst: node,
                        amount,
                        shielded_src: false,
                        shielded_dst: false,
                    });
                }
                // declared funds enter the window before the first transfer
                records.sort_by_key(|r| r.seq);
            }
            let records = if args.shielded_collapse {
                collapse_shielded_records(&records)
            } else {
                records
            };
            if args.temporal {
                build_temporal_account_graph(&records)?
            } else {
                build_account_graph(&records)?
            }
        }
    };
    let aug = augment_absorbers(&graph)?;
    let (aug, prune) = prune_non_absorbing(&aug)?;
    if !prune.removed.is_empty() {
        eprintln!(
            "warning: pruned {} state(s) no source of funds reaches: {}",
            prune.removed.len(),
            preview(&prune.removed)
        );
    }
    let chain = build_chain(&aug)?;
    Ok(Pipeline {
        aug,
        chain,
        pruned: prune.removed.len(),
    })
}

fn preview(ids: &[NodeId]) -> String {
    let mut names: Vec<&str> = ids.iter().take(8).map(|n| n.as_str()).collect();
    if ids.len() > 8 {
        names.push("...");
    }
    names.join(", ")
}

fn solver_config(args: &SolverArgs) -> SolverConfig {
    SolverConfig {
        mode: match args.solver {
            SolverChoice::Auto => SolverMode::Auto,
            SolverChoice::Exact => SolverMode::Exact,
            SolverChoice::Iterative => SolverMode::Iterative,
        },
        delta_threshold: args.delta,
        max_iterations: args.max_iterations,
        block_width: args.block_width,
        exact_cutoff: args.exact_cutoff,
    }
}

fn resolve_query_list(spec: &str, pipeline: &Pipeline) -> Vec<NodeId> {
    match spec {
        "sinks" => pipeline.aug.graph.sinks(),
        "all" => pipeline.chain.transients().to_vec(),
        list => list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(NodeId::from)
            .collect(),
    }
}

fn run_analyze(args: &AnalyzeArgs) -> anyhow::Result<()> {
    if args.zcash_prior.is_some() && !args.pipeline.shielded_collapse {
        bail!("--zcash-prior requires --shielded-collapse");
    }
    let pipeline = build_pipeline(&args.pipeline)?;
    let queries = resolve_query_list(&args.query, &pipeline);
    let config = solver_config(&args.solver);
    let result = solve(&pipeline.chain, &config, &queries)?;
    let report = match &args.zcash_prior {
        Some(path) => {
            let prior = io::parse_prior(path)?;
            FungibilityReport::from_result_with_prior(&result, &prior)?
        }
        None => FungibilityReport::from_result(&result)?,
    };

    print_run_summary(&pipeline, &result, &report);

    if let Some(output) = &args.output {
        io::write_report(&report, output)?;
        if args.distributions {
            io::write_distributions(&result, &sidecar(output, "dist.jsonl"))?;
        }
        if let Some(bins) = args.histogram {
            if bins == 0 {
                bail!("--histogram needs at least one bin");
            }
            let absorbers = pipeline.chain.absorber_count();
            write_histogram(&report, absorbers, bins, &sidecar(output, "hist.csv"))?;
        }
    }
    Ok(())
}

fn print_run_summary(pipeline: &Pipeline, result: &AbsorptionResult, report: &FungibilityReport) {
    let method = match result.method() {
        SolverMethod::Exact => "exact",
        SolverMethod::Iterative => "iterative",
    };
    println!(
        "graph: {} states, {} edges, {} absorbers, {} pruned",
        pipeline.aug.graph.node_count(),
        pipeline.aug.graph.edge_count(),
        pipeline.chain.absorber_count(),
        pipeline.pruned,
    );
    println!(
        "solver: {method}, {} iterations, {} states queried",
        result.iterations(),
        result.query_count(),
    );
    print_stats("fungibility_bits", &report.fungibility_stats());
    print_stats("expected_steps", &report.steps_stats());
}

fn print_stats(label: &str, stats: &SummaryStats) {
    println!(
        "{label}: mean {}, median {}, variance {}, max {}",
        format_sig(stats.mean),
        format_sig(stats.median),
        format_sig(stats.variance),
        format_sig(stats.max),
    );
}

/// `report.csv` gets sidecars `report.csv.dist.jsonl` and so on; the
/// report name stays visible in every derived file.
fn sidecar(output: &Path, suffix: &str) -> PathBuf {
    let mut name = OsString::from(output.as_os_str());
    name.push(".");
    name.push(suffix);
    PathBuf::from(name)
}

/// Bins cover [0, log2(absorbers)], the reachable fungibility range.
/// Prior-adjusted values may exceed it; they land in the top bin.
fn write_histogram(
    report: &FungibilityReport,
    absorbers: usize,
    bins: usize,
    path: &Path,
) -> anyhow::Result<()> {
    let upper = if absorbers > 1 {
        (absorbers as f64).log2()
    } else {
        1.0
    };
    let width = upper / bins as f64;
    let mut counts = vec![0u64; bins];
    for row in report.rows() {
        let bin = ((row.fungibility_bits / width) as usize).min(bins - 1);
        counts[bin] += 1;
    }
    let file = File::create(path).with_context(|| format!("create {}", path.display()))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "bin_low,bin_high,count")?;
    for (i, count) in counts.iter().enumerate() {
        writeln!(
            out,
            "{},{},{}",
            format_sig(width * i as f64),
            format_sig(width * (i + 1) as f64),
            count
        )?;
    }
    out.flush()?;
    Ok(())
}

fn run_stats(args: &StatsArgs) -> anyhow::Result<()> {
    let report = io::read_report(&args.report)?;
    println!("rows: {}", report.rows().len());
    print_stats("fungibility_bits", &report.fungibility_stats());
    print_stats("expected_steps", &report.steps_stats());
    Ok(())
}

fn run_trajectory(args: &TrajectoryArgs) -> anyhow::Result<()> {
    let pipeline = build_pipeline(&args.pipeline)?;
    let config = solver_config(&args.solver);
    // walks may reach any state, so every transient needs a solved row
    let queries = pipeline.chain.transients().to_vec();
    let result = solve(&pipeline.chain, &config, &queries)?;
    let start = NodeId::from(args.start.as_str());
    let points = fungibility_trajectory(
        &pipeline.aug.graph,
        &result,
        &start,
        args.walks,
        args.max_steps,
        args.seed,
    )?;
    let mut out: Box<dyn Write> = match &args.output {
        Some(path) => {
            let file = File::create(path).with_context(|| format!("create {}", path.display()))?;
            Box::new(BufWriter::new(file))
        }
        None => Box::new(std::io::stdout().lock()),
    };
    writeln!(out, "step,mean_fungibility,walks")?;
    for point in &points {
        writeln!(
            out,
            "{},{},{}",
            point.step,
            format_sig(point.mean_fungibility),
            point.walks
        )?;
    }
    out.flush()?;
    Ok(())
}

fn run_oracle(args: &OracleArgs) -> anyhow::Result<()> {
    let pipeline = build_pipeline(&args.pipeline)?;
    let start = NodeId::from(args.start.as_str());
    let stats = simulate(
        &pipeline.chain,
        &start,
        args.walks,
        args.seed,
        args.step_cap,
    )?;
    println!(
        "start {} walks {} seed {}",
        stats.start(),
        stats.walk_count(),
        stats.seed()
    );
    for id in stats.absorber_ids() {
        println!(
            "{} count {} frequency {}",
            id,
            stats.count(id),
            format_sig(stats.frequency(id))
        );
    }
    println!(
        "mean_steps {} sigma {}",
        format_sig(stats.mean_steps()),
        format_sig(stats.mean_steps_sigma())
    );
    Ok(())
}
