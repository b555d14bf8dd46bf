mod cli;
mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::Parser;

use cli::{Cli, Command};

/// Failure classes with stable exit codes.
#[derive(Debug)]
pub enum Failure {
    /// Flags or configuration that cannot describe a valid run (exit 2).
    Usage(String),
    /// The run started and then failed (exit 1).
    Runtime(anyhow::Error),
    /// A verification command found violations (exit 3).
    Check(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Check(_) => 3,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<taskaug::Error> for Failure {
    fn from(e: taskaug::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        // Help and version exit 0; everything else clap reports exits 2.
        Err(e) => e.exit(),
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(cli.log_level()))
        .format_timestamp(None)
        .init();
    let res = match cli.command {
        Command::GenData(a) => commands::gen_data::run(a),
        Command::Train(a) => commands::train::run(a),
        Command::Eval(a) => commands::eval::run(a),
        Command::Gradcheck(a) => commands::gradcheck::run(a),
        Command::InspectPolicy(a) => commands::inspect::run(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("error: {m}\n\nFor more information, try '--help'."),
                Failure::Runtime(e) => eprintln!("error: {e:#}"),
                Failure::Check(m) => eprintln!("check failed: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
