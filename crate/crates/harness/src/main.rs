// Licensed under the Apache-2.0 license

use std::process::ExitCode;

use clap::Parser;
use gecko_harness::cli::{run, Cli};

fn main() -> ExitCode {
    ExitCode::from(run(Cli::parse()))
}
