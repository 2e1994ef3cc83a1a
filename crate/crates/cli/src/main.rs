use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use tori_cli::config::Config;
use tori_cli::{plots, run, CliError};

/// Invariant tori with prescribed normal frequencies in the coupled pendula.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a torus from a TOML configuration.
    Run {
        config: PathBuf,
        /// Write outputs here instead of the configured output_dir.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Emit plot data for a finished run.
    Plots { run_dir: PathBuf },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, output_dir } => {
            let mut cfg = Config::from_file(&config)?;
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            let summary = run::run(&cfg)?;
            let last = summary.nodes.last().expect("at least one node");
            println!(
                "converged at eps = {:e} in {} steps, residual {:.3e}, outputs in {}",
                last.value,
                last.log.len() - 1,
                last.log.last().map(|r| r.residual()).unwrap_or(f64::NAN),
                summary.output_dir.display()
            );
            if let Some(v) = summary.verification {
                println!(
                    "flow invariance {:.3e}, bundle invariance {:.3e}, measured beta {:?}",
                    v.flow_error, v.bundle_error, v.measured_beta
                );
            }
        }
        Command::Plots { run_dir } => {
            for path in plots::emit_plots(&run_dir)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("{}", e.record().to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
