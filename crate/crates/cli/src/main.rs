//! `seqpipe`: plan, simulate, partition or sweep a long-sequence pipeline
//! run described by a TOML file.
//!
//! Exit codes: 0 on success, 1 on invalid input or I/O failure, 2 when the
//! request is infeasible (no layout fits, or a simulated layout overflows
//! device memory; the report is still written in that case).

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use seqpipe_core::output::{
    emit_outputs, emit_partition, emit_sweep, format_partition_table, partition_rows, run_sweep,
};
use seqpipe_core::partition::{oracle_min_max_flops, partition_flops_balanced_quantized};
use seqpipe_core::solver::run_config;
use seqpipe_core::{read_config, Error, Mode, OffloadMode, RunArtifacts, RunConfig};

#[derive(Parser)]
#[command(
    name = "seqpipe",
    version,
    about = "Long-sequence pipeline training planner and simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search parallel layouts and report the fastest one that fits.
    Plan(RunArgs),
    /// Simulate the layout given in `[parallelism]`.
    Simulate(RunArgs),
    /// Print the FLOPs-balanced split of the sequence.
    Partition(RunArgs),
    /// Evaluate one axis over a grid and write `sweep.csv`.
    Sweep(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run description.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use the exact dynamic-programming partitioner (partition only; small inputs).
    #[arg(long)]
    oracle: bool,
    /// Disable splitting warm-up and cool-down chunks across idle stages.
    #[arg(long)]
    no_msp: bool,
    /// Force one activation offload policy.
    #[arg(long, value_enum)]
    offload: Option<OffloadArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OffloadArg {
    None,
    Full,
    Adaptive,
}

impl From<OffloadArg> for OffloadMode {
    fn from(a: OffloadArg) -> Self {
        match a {
            OffloadArg::None => OffloadMode::None,
            OffloadArg::Full => OffloadMode::Full,
            OffloadArg::Adaptive => OffloadMode::Adaptive,
        }
    }
}

/// `println!` that reports a closed stdout as an error instead of panicking.
macro_rules! say {
    ($($arg:tt)*) => {
        writeln!(io::stdout(), $($arg)*)?
    };
}

enum Outcome {
    Done,
    Infeasible,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SEQPIPE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap would exit with 2, which is reserved for infeasibility.
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Infeasible) => ExitCode::from(2),
        Err(err) if is_broken_pipe(&err) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let infeasible = err
                .downcast_ref::<Error>()
                .is_some_and(Error::is_infeasibility);
            ExitCode::from(if infeasible { 2 } else { 1 })
        }
    }
}

fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.downcast_ref::<io::Error>()
        .is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe)
}

fn run(command: Command) -> Result<Outcome> {
    let (mode, args) = match command {
        Command::Plan(a) => (Mode::Plan, a),
        Command::Simulate(a) => (Mode::Simulate, a),
        Command::Partition(a) => (Mode::Partition, a),
        Command::Sweep(a) => (Mode::Sweep, a),
    };
    let run = load(mode, &args)?;
    match mode {
        Mode::Plan => plan(&run),
        Mode::Simulate => simulate(&run),
        Mode::Partition => partition(&run, args.oracle),
        Mode::Sweep => sweep(&run),
    }
}

/// Read the config, apply command-line overrides, then validate.
fn load(mode: Mode, args: &RunArgs) -> Result<RunConfig> {
    let mut run = read_config(&args.config)?;
    run.mode = mode;
    if let Some(out) = &args.out {
        run.output_dir = out.clone();
    }
    if args.no_msp {
        run.solver.msp = vec![false];
        if let Some(p) = run.parallelism.as_mut() {
            p.msp_enabled = false;
        }
    }
    if let Some(o) = args.offload {
        let o = OffloadMode::from(o);
        run.solver.offload_modes = vec![o];
        if let Some(p) = run.parallelism.as_mut() {
            p.offload_mode = o;
        }
    }
    if args.oracle && mode != Mode::Partition {
        bail!("--oracle only applies to the partition subcommand");
    }
    run.validate()
        .with_context(|| format!("invalid config {}", args.config.display()))?;
    info!(
        "{} mode, S={}, output to {}",
        mode.as_str(),
        run.sequence_length,
        run.output_dir.display()
    );
    Ok(run)
}

fn plan(run: &RunConfig) -> Result<Outcome> {
    if run.parallelism.is_some() {
        info!("plan mode searches layouts; [parallelism] is ignored");
    }
    let solution = seqpipe_core::solve_with(
        &run.model,
        &run.hardware,
        run.sequence_length,
        &run.solver,
        &run.simulation,
    )?;
    let feasible = solution
        .candidates
        .iter()
        .filter(|c| c.report.feasible)
        .count();
    say!(
        "{} candidates, {feasible} fit in device memory",
        solution.candidates.len()
    );
    let artifacts = run_config(
        &run.model,
        &run.hardware,
        run.sequence_length,
        &solution.best.config,
        run.solver.quantum,
        &run.simulation,
    )?;
    print_summary(&artifacts)?;
    print_written(&emit_outputs(run, &artifacts, Some(&solution.candidates))?)?;
    Ok(Outcome::Done)
}

fn simulate(run: &RunConfig) -> Result<Outcome> {
    let config = run
        .parallelism
        .as_ref()
        .context("simulate mode requires [parallelism]")?;
    let artifacts = run_config(
        &run.model,
        &run.hardware,
        run.sequence_length,
        config,
        run.solver.quantum,
        &run.simulation,
    )?;
    print_summary(&artifacts)?;
    print_written(&emit_outputs(run, &artifacts, None)?)?;
    if artifacts.report.feasible {
        Ok(Outcome::Done)
    } else {
        let peak = artifacts
            .report
            .per_stage_peak_mem
            .iter()
            .copied()
            .fold(0.0, f64::max);
        warn!(
            "peak memory {peak:.3e} B exceeds capacity {:.3e} B",
            run.hardware.gpu_mem
        );
        eprintln!("infeasible: simulated peak memory exceeds device capacity");
        Ok(Outcome::Infeasible)
    }
}

fn partition(run: &RunConfig, oracle: bool) -> Result<Outcome> {
    let chunks = run
        .partition_chunks()
        .context("partition mode requires partition.n")?;
    let quantum = run.partition_quantum();
    let p = if oracle {
        if quantum != 1 {
            bail!("--oracle works at one-token granularity; set partition.quantum = 1");
        }
        oracle_min_max_flops(&run.model, run.sequence_length, chunks)?
    } else {
        partition_flops_balanced_quantized(&run.model, run.sequence_length, chunks, quantum)?
    };
    let rows = partition_rows(&run.model, &p)?;
    write!(io::stdout(), "{}", format_partition_table(&rows))?;
    print_written(&emit_partition(&run.output_dir, &rows)?)?;
    Ok(Outcome::Done)
}

fn sweep(run: &RunConfig) -> Result<Outcome> {
    let rows = run_sweep(run)?;
    let infeasible = rows.iter().filter(|r| !r.feasible).count();
    say!("{} sweep points, {infeasible} infeasible", rows.len());
    print_written(&[emit_sweep(&run.output_dir, &rows)?])?;
    Ok(Outcome::Done)
}

fn print_summary(a: &RunArtifacts) -> Result<()> {
    let c = &a.config;
    let r = &a.report;
    let peak = r.per_stage_peak_mem.iter().copied().fold(0.0, f64::max);
    say!(
        "SP={} PP={} N={} offload={} msp={}",
        c.sp,
        c.pp,
        c.n,
        c.offload_mode.as_str(),
        if c.msp_enabled { "on" } else { "off" }
    );
    say!(
        "iteration {:.6} s  bubble ratio {:.4}  peak mem {:.3} GiB  {:.1} tokens/GPU/s  {}",
        r.iteration_time,
        r.bubble_ratio,
        peak / (1u64 << 30) as f64,
        r.tgs_estimate,
        if r.feasible { "fits" } else { "DOES NOT FIT" }
    );
    Ok(())
}

fn print_written(paths: &[PathBuf]) -> Result<()> {
    for p in paths {
        say!("wrote {}", p.display());
    }
    Ok(())
}
