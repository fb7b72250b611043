use std::process::ExitCode;

use clap::Parser;
use limbosim::cli::args::{dispatch, Cli};

fn main() -> ExitCode {
    ExitCode::from(dispatch(Cli::parse()))
}
