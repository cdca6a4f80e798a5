use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

/// Multi-fidelity Gaussian process solver for linear integro-differential
/// equations.
#[derive(Parser)]
#[command(version, about)]
struct Args {
    /// TOML run configuration.
    config: PathBuf,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = mfgp::parse_config(&args.config).and_then(|cfg| mfgp::run(&cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
