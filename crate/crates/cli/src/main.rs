mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};

/// Simulate phase-split LLM inference clusters and search for cluster designs.
#[derive(Debug, Parser)]
#[command(name = "splitsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a Poisson-arrival request trace.
    GenTrace(GenTraceArgs),
    /// Replay a trace on a cluster and check the SLOs.
    Simulate(SimulateArgs),
    /// Search machine counts for a design under a budget or throughput target.
    Provision(ProvisionArgs),
    /// Fit piece-wise linear performance models from profiling samples.
    FitModel(FitModelArgs),
    /// Re-summarize CSV files written by the other subcommands.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Built-in calibration: llama2-70b or bloom-176b.
    #[arg(long, conflicts_with = "model_file")]
    model: Option<String>,
    /// Model file written by fit-model.
    #[arg(long)]
    model_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenTraceArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Workload preset: coding or conversation.
    #[arg(long)]
    preset: Option<String>,
    /// Mean arrival rate in requests per second.
    #[arg(long)]
    rate: Option<f64>,
    /// Trace length in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Defaults to $SPLITSIM_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Destination CSV; stdout when omitted.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trace CSV. Without it a trace is generated from the trace.* settings.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    design: Option<String>,
    #[arg(long)]
    prompt_machines: Option<u32>,
    #[arg(long)]
    token_machines: Option<u32>,
    /// Workload preset for a generated trace.
    #[arg(long)]
    workload: Option<String>,
    /// Arrival rate for a generated trace.
    #[arg(long)]
    rate: Option<f64>,
    /// Length in seconds of a generated trace.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// pooled or per_request_mean.
    #[arg(long)]
    tbt_mode: Option<String>,
    /// Directory for requests.csv, tbt.csv and summary.csv.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Also write the full event log to this file.
    #[arg(long)]
    event_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("constraint").args(["power_budget", "cost_budget", "throughput"])))]
pub struct ProvisionArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    design: Option<String>,
    /// max_throughput, min_cost or min_power.
    #[arg(long)]
    objective: Option<String>,
    #[arg(long)]
    power_budget: Option<f64>,
    #[arg(long)]
    cost_budget: Option<f64>,
    /// Throughput target in requests per second.
    #[arg(long)]
    throughput: Option<f64>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    workload: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of trace seeds every point must pass.
    #[arg(long)]
    seeds: Option<u64>,
    /// Seconds of synthetic load per test run.
    #[arg(long)]
    trace_duration: Option<f64>,
    #[arg(long)]
    prompt_min: Option<u32>,
    #[arg(long)]
    prompt_max: Option<u32>,
    #[arg(long)]
    token_min: Option<u32>,
    #[arg(long)]
    token_max: Option<u32>,
    /// Upper count bound for throughput-target searches.
    #[arg(long)]
    max_count: Option<u32>,
    #[arg(long)]
    stride: Option<u32>,
    /// Directory for results.csv and pareto.csv.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitModelArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Profiling CSV.
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Knot budget per curve.
    #[arg(long)]
    knots: Option<usize>,
    /// Seed of the 80:20 holdout split.
    #[arg(long)]
    seed: Option<u64>,
    /// Model file to write.
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Trace, requests, tbt, summary or provisioning CSVs.
    #[arg(required = true)]
    files: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenTrace(a) => commands::gen_trace(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Provision(a) => commands::provision(a),
        Command::FitModel(a) => commands::fit_model(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(commands::Outcome::Pass) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Fail) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
