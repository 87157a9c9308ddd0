use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pliss_lab_cli::{run_experiment, write_outputs, ExperimentConfig, Overrides, Status, UsageError};

#[derive(Parser)]
#[command(name = "pliss-lab", version, about = "Finite-scale Pliss, Følner, Gibbs and entropy experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment (or `all`) and write CSV/JSON reports plus manifest.json.
    Run(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    experiment: Option<String>,
    /// JSON configuration; flags override its values.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "N", env = "PLISS_LAB_JOBS")]
    jobs: Option<usize>,
    /// Also run the synthetic oracle suites of the experiment.
    #[arg(long)]
    self_test: bool,
    /// Orbit length.
    #[arg(long)]
    n: Option<usize>,
}

fn run(args: RunArgs) -> anyhow::Result<Vec<String>> {
    let flags = Overrides {
        model: args.model,
        experiment: args.experiment,
        seed: args.seed,
        out: args.out,
        jobs: args.jobs,
        self_test: args.self_test,
        n: args.n,
    };
    let cfg = ExperimentConfig::resolve(args.config.as_deref(), &flags)?;
    if let Some(j) = cfg.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global()?;
    }
    let outcomes = run_experiment(&cfg)?;
    write_outputs(&cfg, &outcomes)?;
    let mut failed = Vec::new();
    for o in &outcomes {
        for c in &o.checks {
            let tag = match c.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::Skip => "SKIP",
            };
            println!("{tag} {}/{} {}: {}", o.experiment, o.model, c.name, c.detail);
            if c.status == Status::Fail {
                failed.push(format!("{}/{}", o.experiment, c.name));
            }
        }
    }
    Ok(failed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let Command::Run(args) = cli.command;
    match run(args) {
        Ok(failed) if failed.is_empty() => ExitCode::SUCCESS,
        Ok(failed) => {
            eprintln!("failing criteria: {}", failed.join(", "));
            ExitCode::from(1)
        }
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("usage error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
