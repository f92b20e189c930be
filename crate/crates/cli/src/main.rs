mod args;
mod commands;
mod overlay;

use std::process::ExitCode;

use clap::Parser;
use refseg::pipeline::{default_workers, with_workers};

use args::{BankCommand, Cli, Command};
use commands::Status;

fn run(cli: Cli) -> anyhow::Result<Status> {
    let workers = cli.workers.unwrap_or_else(default_workers);
    with_workers(workers, move || match &cli.command {
        Command::Bank {
            command: BankCommand::Build(a),
        } => commands::bank_build(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Variance(a) => commands::variance(a),
        Command::Synth(a) => commands::synth(a),
    })?
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(Status::Complete) => ExitCode::SUCCESS,
        Ok(Status::Partial) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
