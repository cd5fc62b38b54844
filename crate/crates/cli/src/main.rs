use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use lbstein_cli::{compare_files, execute, exit, load_config, output_dir, Overrides, OUT_DIR_ENV};

#[derive(Parser)]
#[command(name = "lbstein", version, about = "Load-balancing heavy-traffic experiments")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true, env = OUT_DIR_ENV)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write CSV and JSON results.
    Run { config: PathBuf },
    /// Run an experiment and fail with exit code 2 if a hard check fails.
    Verify { config: PathBuf },
    /// Report scaled trends across N from one or more result CSVs.
    Compare {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    let overrides = Overrides {
        threads: cli.threads,
        seed: cli.seed,
        out_dir: cli.out_dir,
    };
    match cli.command {
        Command::Run { config } => {
            let cfg = load_config(&config, &overrides)?;
            let exp = execute(&cfg, overrides.threads)?;
            for w in exp.warnings() {
                eprintln!("warning: {w}");
            }
            let (csv, json) = exp.write(&output_dir(&cfg))?;
            print!("{}", exp.table());
            println!("wrote {} and {}", csv.display(), json.display());
            Ok(exit::OK)
        }
        Command::Verify { config } => {
            let cfg = load_config(&config, &overrides)?;
            let exp = execute(&cfg, overrides.threads)?;
            for w in exp.warnings() {
                eprintln!("warning: {w}");
            }
            exp.write(&output_dir(&cfg))?;
            print!("{}", exp.table());
            for f in exp.failures() {
                eprintln!(
                    "FAILED: N = {} b = {} {} {}: value {:?}, margin {:?}",
                    f.n, f.b, f.policy, f.metric, f.value, f.margin
                );
            }
            let code = exp.verify_code();
            if code == exit::OK {
                println!("verify: all hard checks passed");
            }
            Ok(code)
        }
        Command::Compare { csv } => {
            let report = compare_files(&csv).context("compare failed")?;
            print!("{}", report.table());
            Ok(exit::OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(exit::ERROR as u8);
        }
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::ERROR as u8)
        }
    }
}
