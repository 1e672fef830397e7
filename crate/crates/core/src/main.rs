use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use teugels_control::runner::{self, Subcommand};
use teugels_control::scenario;

/// Environment variable naming the output directory when neither `--out`
/// nor the scenario's `[outputs] directory` is given.
const OUT_ENV: &str = "TEUGELS_CONTROL_OUT";

#[derive(Debug, Parser)]
#[command(name = "teugels-control", version, about = "Teugels-martingale BSDEs and Lévy-driven control")]
struct Cli {
    #[arg(value_enum)]
    subcommand: Subcommand,
    /// Scenario file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let sc = match scenario::parse_file(&cli.scenario) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let out = cli
        .out
        .or_else(|| sc.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    match runner::run(cli.subcommand, &sc, &out) {
        Ok(report) => {
            for line in &report.lines {
                println!("{line}");
            }
            println!("outputs in {}", out.display());
            if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
