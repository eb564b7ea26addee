use std::process::ExitCode;

use clap::Parser;

mod args;
mod commands;
mod failure;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Forward(a) => commands::forward(a),
        Command::Invert(a) => commands::invert(a),
        Command::Verify(a) => commands::verify(a),
        Command::Contract(a) => commands::contract(a),
        Command::Oracle(a) => commands::oracle(a),
        Command::Roundtrip(a) => commands::roundtrip(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
