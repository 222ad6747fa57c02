//! Thin command-line front end; all machinery lives in the library.

use clap::{Parser, Subcommand};
use std::path::PathBuf;

use superrotor::output::OutputFormat;
use superrotor::runner::{self, CliOverrides, ScanOverrides};

#[derive(Parser)]
#[command(name = "superrotor", version, about = "Laser-controlled molecular rotation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config and write the requested observables.
    Simulate {
        /// Config file (TOML; see the bundled configs/ directory).
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: available cores).
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// csv or json.
        #[arg(long, default_value = "csv")]
        format: String,
        #[arg(long)]
        quiet: bool,
    },
    /// Scan one parameter (train_period | train_angle_step | omega_max |
    /// probe_fwhm) and aggregate one observable grid.
    Scan {
        config: PathBuf,
        #[arg(long)]
        param: Option<String>,
        #[arg(long)]
        start: Option<f64>,
        #[arg(long)]
        stop: Option<f64>,
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
        #[arg(long)]
        quiet: bool,
    },
    /// Report schema and physics-guard findings without running.
    Validate { config: PathBuf },
}

fn build_pool(jobs: Option<usize>) {
    if let Some(n) = jobs {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Simulate {
            config,
            seed,
            jobs,
            out_dir,
            format,
            quiet,
        } => {
            build_pool(jobs);
            let format = match format.parse::<OutputFormat>() {
                Ok(f) => f,
                Err(e) => {
                    eprintln!("error: schema: {e}");
                    std::process::exit(2);
                }
            };
            let over = CliOverrides {
                seed,
                out_dir,
                format,
                quiet,
            };
            match runner::simulate_path(&config, &over) {
                Ok(outcome) => {
                    if !quiet {
                        for f in &outcome.files {
                            println!("wrote {}", outcome.out_dir.join(f).display());
                        }
                    }
                    0
                }
                Err(e) => {
                    eprintln!("error: {}: {e}", category(e.exit_code()));
                    e.exit_code()
                }
            }
        }
        Command::Scan {
            config,
            param,
            start,
            stop,
            points,
            seed,
            jobs,
            out_dir,
            format,
            quiet,
        } => {
            build_pool(jobs);
            let format = match format.parse::<OutputFormat>() {
                Ok(f) => f,
                Err(e) => {
                    eprintln!("error: schema: {e}");
                    std::process::exit(2);
                }
            };
            let over = CliOverrides {
                seed,
                out_dir,
                format,
                quiet,
            };
            let s_over = ScanOverrides {
                parameter: param,
                start,
                stop,
                points,
            };
            match runner::scan_path(&config, &over, &s_over) {
                Ok(outcome) => {
                    if !quiet {
                        for f in &outcome.files {
                            println!("wrote {}", outcome.out_dir.join(f).display());
                        }
                    }
                    0
                }
                Err(e) => {
                    eprintln!("error: {}: {e}", category(e.exit_code()));
                    e.exit_code()
                }
            }
        }
        Command::Validate { config } => match runner::validate_path(&config) {
            Ok(report) => {
                for line in report.lines() {
                    println!("{line}");
                }
                if report.is_clean() {
                    println!("ok");
                }
                0
            }
            Err(e) => {
                eprintln!("error: io: {e}");
                4
            }
        },
    };
    std::process::exit(code);
}

fn category(code: i32) -> &'static str {
    match code {
        2 => "schema",
        3 => "guard",
        4 => "io",
        _ => "error",
    }
}
