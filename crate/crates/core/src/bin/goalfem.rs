use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use goalfem::bench::{parse_config, run, verify, CaseId, RunConfig};

#[derive(Parser)]
#[command(name = "goalfem", about = "Goal-oriented error estimation benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one benchmark sequence and write its reports.
    Run {
        #[arg(long)]
        case: Option<String>,
        /// spr-cx or spr
        #[arg(long)]
        recovery: Option<String>,
        /// uniform or adaptive
        #[arg(long)]
        refine: Option<String>,
        /// Target relative error in percent.
        #[arg(long)]
        target: Option<f64>,
        #[arg(long = "max-iter")]
        max_iter: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// File of `key = value` lines; command-line flags take precedence.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Check the exact benchmark solutions.
    Verify,
}

fn run_command(cmd: Command) -> goalfem::Result<bool> {
    match cmd {
        Command::Verify => {
            let checks = verify()?;
            for c in &checks {
                let status = if c.passed() { "PASS" } else { "FAIL" };
                println!("{status} {:<56} {:.16e} (tol {:.16e})", c.name, c.value, c.tolerance);
            }
            Ok(checks.iter().all(|c| c.passed()))
        }
        Command::Run { case, recovery, refine, target, max_iter, out, config } => {
            let mut pairs = match config {
                Some(path) => parse_config(&std::fs::read_to_string(path)?)?,
                None => Vec::new(),
            };
            let flags = [
                ("case", case),
                ("recovery", recovery),
                ("refine", refine),
                ("target", target.map(|t| t.to_string())),
                ("max_iter", max_iter.map(|n| n.to_string())),
                ("out", out.map(|p| p.display().to_string())),
            ];
            pairs.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
            let case: CaseId = pairs
                .iter()
                .rev()
                .find(|(k, _)| k == "case")
                .ok_or_else(|| goalfem::Error::Config("no case given".into()))?
                .1
                .parse()?;
            let mut cfg = RunConfig::new(case);
            for (k, v) in &pairs {
                cfg.set(k, v)?;
            }
            let output = run(&cfg)?;
            for path in output.write(&cfg.out)? {
                eprintln!("wrote {}", path.display());
            }
            print!("{}", output.summary());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run_command(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
