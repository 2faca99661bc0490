use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wfmc::cli_io;
use wfmc::engine::{self, Mode};
use wfmc::models::PRESETS;
use wfmc::Error;

#[derive(Parser)]
#[command(name = "wfmc", version, about = "Weighted wave-function Monte Carlo under continuous measurement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output CSV; a `.meta.json` sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (default: all cores). Results do not depend on this.
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write a downsampled `t,<observables>` CSV for plotting.
    #[arg(long)]
    plot_data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the mode named in the configuration.
    Run(RunArgs),
    /// MC against the direct SME on a shared measurement path.
    Compare(RunArgs),
    /// Replicate MC runs with independent per-member noise.
    ErrorEstimate(RunArgs),
    /// List built-in models.
    Presets,
    /// Check a configuration and print its canonical form.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn execute(args: &RunArgs, forced: Option<Mode>) -> wfmc::Result<()> {
    let (mut file, _) = cli_io::parse_config(&args.config)?;
    if let Some(seed) = args.seed {
        file.seed = seed;
    }
    if let Some(mode) = forced {
        file.mode = mode.name().to_string();
    }
    let base = args.config.parent().map(PathBuf::from).unwrap_or_default();
    let cfg = cli_io::config_from_file(&file, &base)?;
    match cfg.mode {
        Mode::Compare => {
            let report = engine::compare_shared_noise_with_workers(&cfg, args.workers)?;
            cli_io::write_comparison(&report, &args.out)?;
            if let Some(p) = &args.plot_data {
                cli_io::write_plot_data(&report.base.mc, p)?;
            }
            for (name, d) in report.observable_names.iter().zip(&report.base.divergence) {
                eprintln!("divergence {name}: {d:.6e}");
            }
        }
        Mode::ErrorEstimate => {
            let report = engine::estimate_error_with_workers(&cfg, cfg.replicates, args.workers)?;
            cli_io::write_error_report(&report, &args.out)?;
            if let Some(p) = &args.plot_data {
                cli_io::write_plot_data(&report.replicates[0], p)?;
            }
            for (name, e) in report.observable_names.iter().zip(&report.error_estimate) {
                eprintln!("error estimate {name}: {e:.6e}");
            }
        }
        _ => {
            let rec = engine::run_with_workers(&cfg, args.workers)?;
            cli_io::write_trajectory(&rec, &args.out)?;
            if let Some(p) = &args.plot_data {
                cli_io::write_plot_data(&rec, p)?;
            }
        }
    }
    Ok(())
}

fn dispatch(cli: Cli) -> wfmc::Result<()> {
    match cli.command {
        Command::Run(a) => execute(&a, None),
        Command::Compare(a) => execute(&a, Some(Mode::Compare)),
        Command::ErrorEstimate(a) => execute(&a, Some(Mode::ErrorEstimate)),
        Command::Presets => {
            for (name, about) in PRESETS {
                println!("{name}\t{about}");
            }
            Ok(())
        }
        Command::Validate { config } => {
            let (file, _) = cli_io::parse_config(&config)?;
            println!("{}", file.to_canonical_json());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
