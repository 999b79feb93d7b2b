use std::process::ExitCode;

use clap::Parser;
use nsctl_cli::{init_logging, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    let run = || -> nsctl_core::Result<()> {
        let specs = cli.specs()?;
        let results = cli.execute(&specs)?;
        for r in results.iter().filter(|r| r.error.is_some()) {
            eprintln!(
                "case l={} nu={} beta={:e} failed: {}",
                r.spec.level,
                r.spec.nu,
                r.spec.beta,
                r.error.as_deref().unwrap_or_default()
            );
        }
        cli.emit(&results)
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
