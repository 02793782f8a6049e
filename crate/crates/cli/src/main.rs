use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use stepwedge::{DesignSpec, ModelSpec, WeightScheme};

mod analyze;
mod campaign;
mod oracle;

#[derive(Parser, Debug)]
#[command(name = "stepwedge", version, about = "Randomize, analyze and simulate stepped wedge cluster randomized trials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw adoption periods for every cluster.
    Randomize(RandomizeArgs),
    /// Estimate treatment effects from trial data.
    Analyze(analyze::AnalyzeArgs),
    /// Run a simulation campaign from a config file.
    Simulate(campaign::SimulateArgs),
    /// Compute true estimands from a potential-outcome table.
    Oracle(oracle::OracleArgs),
}

#[derive(clap::Args, Debug)]
struct RandomizeArgs {
    #[arg(long)]
    clusters: usize,
    #[arg(long)]
    rollout_periods: usize,
    /// Number of clusters treated by each rollout period, e.g. 6,12,18.
    #[arg(long, value_delimiter = ',', required = true)]
    cumulative: Vec<usize>,
    /// Defaults to a seed drawn from the clock; the value used is recorded.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimandArg {
    Ind,
    Period,
    Cell,
    All,
}

impl EstimandArg {
    pub fn schemes(self) -> Vec<WeightScheme> {
        match self {
            EstimandArg::Ind => vec![WeightScheme::Uniform],
            EstimandArg::Period => vec![WeightScheme::InversePeriodSize],
            EstimandArg::Cell => vec![WeightScheme::InverseCellSize],
            EstimandArg::All => WeightScheme::ALL.to_vec(),
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelArg {
    Un,
    A1,
    A2,
    A3,
    A4,
    All,
}

impl ModelArg {
    pub fn models(self) -> Vec<ModelSpec> {
        match self {
            ModelArg::Un => vec![ModelSpec::Unadjusted],
            ModelArg::A1 => vec![ModelSpec::AncovaI],
            ModelArg::A2 => vec![ModelSpec::AncovaII],
            ModelArg::A3 => vec![ModelSpec::AncovaIII],
            ModelArg::A4 => vec![ModelSpec::AncovaIV],
            ModelArg::All => ModelSpec::ALL.to_vec(),
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Table,
    Json,
}

/// Opens `path` for writing, or stdout when absent.
pub fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn clock_seed() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0)
}

fn randomize(args: RandomizeArgs) -> Result<()> {
    if args.cumulative.len() != args.rollout_periods {
        bail!(
            "--cumulative lists {} periods but --rollout-periods is {}",
            args.cumulative.len(),
            args.rollout_periods
        );
    }
    let spec = DesignSpec::new(args.clusters, args.cumulative.clone()).context("invalid design")?;
    let seed = args.seed.unwrap_or_else(clock_seed);
    let assignment = stepwedge::randomize(&spec, seed);
    let mut out = sink(args.output.as_deref())?;
    let cumulative: Vec<String> = args.cumulative.iter().map(|c| c.to_string()).collect();
    writeln!(
        out,
        "# clusters={} rollout_periods={} cumulative={} seed={seed}",
        args.clusters,
        args.rollout_periods,
        cumulative.join(",")
    )?;
    writeln!(out, "cluster,adoption_period")?;
    for (i, a) in assignment.adoption_times().iter().enumerate() {
        writeln!(out, "{},{a}", i + 1)?;
    }
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Randomize(a) => randomize(a),
        Command::Analyze(a) => analyze::run(a),
        Command::Simulate(a) => campaign::run(a),
        Command::Oracle(a) => oracle::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
