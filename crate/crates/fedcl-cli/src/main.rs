use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedcl_core::federation::Algorithm;

use fedcl_cli::config::AppConfig;
use fedcl_cli::error::Result;
use fedcl_cli::{metrics, runner, selftest};

#[derive(Parser)]
#[command(
    name = "fedcl",
    version,
    about = "Synchronous curriculum federated learning simulator with fedavg/fedprox baselines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single experiment and emit a metrics CSV.
    Run(RunArgs),
    /// Run several algorithms on the identical partition and initial model.
    Compare(CompareArgs),
    /// Fast built-in property checks.
    Selftest,
}

#[derive(Args)]
struct CommonArgs {
    /// key = value config file (layered under command-line overrides).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset: blobs | mnist.
    #[arg(long)]
    dataset: Option<String>,
    /// Communication round budget.
    #[arg(long)]
    rounds: Option<u64>,
    /// Master seed; every random stream derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Dirichlet concentration for the label-skew partition.
    #[arg(long = "dirichlet-alpha")]
    dirichlet_alpha: Option<f64>,
    /// Extra key=value overrides (repeatable, applied in order).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Metrics CSV path.
    #[arg(long, default_value = "metrics.csv")]
    out: PathBuf,
    /// Optional JSON-lines mirror of the metrics.
    #[arg(long)]
    jsonl: Option<PathBuf>,
    /// Record real wall-clock times (breaks byte-reproducibility of the CSV).
    #[arg(long)]
    timing: bool,
    /// Print the resolved configuration before running.
    #[arg(long)]
    show_config: bool,
}

#[derive(Args)]
struct RunArgs {
    /// Algorithm: fedcl | fedavg | fedprox.
    #[arg(long)]
    algorithm: Option<String>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct CompareArgs {
    /// Comma-separated algorithms to compare.
    #[arg(long, default_value = "fedcl,fedavg")]
    algorithms: String,
    #[command(flatten)]
    common: CommonArgs,
}

fn build_config(common: &CommonArgs, algorithm: Option<&str>) -> Result<AppConfig> {
    let mut cfg = AppConfig::default();
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path)?;
        cfg.apply_text(&text, &path.display().to_string())?;
    }
    cfg.apply_overrides(&common.set)?;
    if let Some(a) = algorithm {
        cfg.apply("algorithm", a, "--algorithm", 0)?;
    }
    if let Some(d) = &common.dataset {
        cfg.apply("data.dataset", d, "--dataset", 0)?;
    }
    if let Some(r) = common.rounds {
        cfg.run.rounds = r;
    }
    if let Some(s) = common.seed {
        cfg.run.seed = s;
    }
    if let Some(a) = common.dirichlet_alpha {
        cfg.data.dirichlet_alpha = a;
    }
    if common.timing {
        cfg.run.record_timing = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let cfg = build_config(&args.common, args.algorithm.as_deref())?;
    if args.common.show_config {
        print!("{}", cfg.serialize_canonical());
    }
    let result = runner::run_experiment(&cfg)?;
    metrics::write_csv(&result.history, &args.common.out)?;
    if let Some(path) = &args.common.jsonl {
        metrics::write_jsonl(&result.history, path)?;
    }
    let final_acc = result.history.last().map(|m| m.test_accuracy).unwrap_or(0.0);
    println!(
        "algorithm={} rounds={} final_accuracy={:.4} frozen_advances={} schedule_completed={} partition_fingerprint={:#018x}",
        cfg.run.algorithm.as_str(),
        result.history.len(),
        final_acc,
        result.forced_advances,
        result.schedule_completed,
        result.partition_fingerprint,
    );
    println!("metrics written to {}", args.common.out.display());
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let cfg = build_config(&args.common, None)?;
    if args.common.show_config {
        print!("{}", cfg.serialize_canonical());
    }
    let algorithms: Vec<Algorithm> = args
        .algorithms
        .split(',')
        .map(|s| {
            Algorithm::parse(s.trim()).ok_or_else(|| {
                fedcl_cli::CliError::Invalid(format!("unknown algorithm {:?}", s.trim()))
            })
        })
        .collect::<Result<_>>()?;
    let outcome = runner::compare_experiments(&cfg, &algorithms)?;
    let mut combined = Vec::new();
    for (algorithm, result) in &outcome.runs {
        let final_acc = result.history.last().map(|m| m.test_accuracy).unwrap_or(0.0);
        println!(
            "algorithm={} rounds={} final_accuracy={:.4} partition_fingerprint={:#018x} init_fingerprint={:#018x}",
            algorithm.as_str(),
            result.history.len(),
            final_acc,
            result.partition_fingerprint,
            result.init_fingerprint,
        );
        combined.extend(result.history.iter().cloned());
    }
    metrics::write_csv(&combined, &args.common.out)?;
    if let Some(path) = &args.common.jsonl {
        metrics::write_jsonl(&combined, path)?;
    }
    println!(
        "shared partition_fingerprint={:#018x} shared init_fingerprint={:#018x}",
        outcome.partition_fingerprint, outcome.init_fingerprint
    );
    println!("metrics written to {}", args.common.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Selftest => {
            return if selftest::run_all() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            };
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
