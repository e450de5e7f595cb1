use std::process::ExitCode;

use clap::Parser;
use dgp_cli::args::{Cli, Command};
use dgp_cli::pipeline::{self, EXIT_FAILED};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Summarize { run_dir } => pipeline::summarize(run_dir),
        cmd => cmd.to_config().and_then(|c| pipeline::run(&c.expect("task command"))),
    };
    match outcome {
        Ok(o) => {
            for f in &o.flags {
                eprintln!("warning: {f}");
            }
            ExitCode::from(o.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FAILED as u8)
        }
    }
}
