//! Runs `accept` on the shipped default scenario and prints one line per criterion.

use std::path::PathBuf;
use std::process::ExitCode;

use teugels_control::runner::{run, Subcommand};
use teugels_control::scenario::parse_file;

fn main() -> ExitCode {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/default.scn");
    let scenario = match parse_file(&path) {
        Ok(s) => s,
        Err(e) => {
            println!("acceptance: cannot read {}: {e}", path.display());
            return ExitCode::FAILURE;
        }
    };
    let dir = tempfile::tempdir().expect("temporary directory");
    match run(Subcommand::Accept, &scenario, dir.path()) {
        Ok(report) => {
            for line in &report.lines {
                println!("{line}");
            }
            let failed = report.lines.iter().filter(|l| l.starts_with("[FAIL]")).count();
            println!("acceptance: {} passed, {failed} failed", report.lines.len() - failed);
            if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            println!("acceptance: run aborted: {e}");
            ExitCode::FAILURE
        }
    }
}
