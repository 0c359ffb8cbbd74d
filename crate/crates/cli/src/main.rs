//! `signalforge` command-line entry point.
//!
//! Exit codes: 0 ok, 2 schema error, 3 invariant error, 4 findings,
//! 5 stage failure, 64 usage error.

mod args;
mod compute;
mod exit;
mod review;
mod runs;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(exit::USAGE),
            };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("SIGNALFORGE_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(if cli.verbose { "info" } else { "warn" })),
        )
        .with_writer(std::io::stderr)
        .init();

    let result = match cli.command {
        Command::Catalog(c) => compute::catalog(c),
        Command::Index(c) => compute::index(c),
        Command::SynthesizeCodecs(a) => compute::synthesize_codecs(a),
        Command::Match(a) => compute::match_properties(a),
        Command::GenerateEndpoints(a) => compute::generate_endpoints(a),
        Command::CheckSpec(a) => compute::check_spec(a),
        Command::InjectErrors(a) => compute::inject_errors(a),
        Command::Evaluate(a) => compute::evaluate(a),
        Command::Graph(c) => compute::graph(c),
        Command::Run(a) => runs::run(a),
        Command::Serve(a) => runs::serve(a),
        Command::Review(a) => review::review(a),
        Command::Resume(a) => review::resume(a),
        Command::Status(a) => review::status(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            for line in &f.lines {
                eprintln!("{line}");
            }
            ExitCode::from(f.code)
        }
    }
}
