use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use opesel_cli::{default_workers, run, Experiment, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "opesel",
    version,
    about = "Off-policy estimator selection experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimator selection over the evaluation-policy sweep.
    Select(RunArgs),
    /// Policy selection among twenty learned candidate policies.
    Ops(RunArgs),
    /// Ground-truth value and MSE tables only.
    Oracle(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `[output] dir`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Overrides `[run] workers`.
    #[arg(long, env = "OPESEL_WORKERS")]
    workers: Option<usize>,
    /// Train a separate subsampling rule per bootstrap seed and candidate
    /// group instead of sharing one rule.
    #[arg(long)]
    strict_alg1: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (experiment, args) = match cli.command {
        Command::Select(a) => (Experiment::Select, a),
        Command::Ops(a) => (Experiment::Ops, a),
        Command::Oracle(a) => (Experiment::Oracle, a),
    };
    let mut config = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if args.strict_alg1 {
        config.pasif.strict = true;
        config.pasif.share_rule = false;
    }
    let workers = args.workers.unwrap_or_else(|| default_workers(&config));
    match run(experiment, &config, args.out_dir.as_deref(), workers) {
        Ok(summary) => {
            for path in &summary.outputs {
                println!("{}", path.display());
            }
            if summary.row_errors == 0 {
                ExitCode::SUCCESS
            } else {
                eprintln!("{} rows recorded errors", summary.row_errors);
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
