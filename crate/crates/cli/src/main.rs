use anyhow::Result;
use clap::{Parser, Subcommand};
use ris_access_cli::config::{apply_desk_preset, load_config};
use ris_access_cli::experiment::{plot_from_csv, run_experiment};
use ris_access_cli::OUT_DIR_ENV;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "ris-access", about = "RIS-assisted initial-access experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment sweep.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides config and RIS_ACCESS_OUT).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for independent runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Replace the configured scenario with the built-in desk preset.
        #[arg(long)]
        desk: bool,
    },
    /// Parse and validate a config file without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-render the chart from an existing aggregate CSV.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, out, jobs, desk } => {
            let mut cfg = load_config(&config)?;
            if desk {
                apply_desk_preset(&mut cfg);
            }
            if let Some(dir) = out.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from)) {
                cfg.output_dir = dir;
            }
            run_experiment(&cfg, jobs)?;
            println!("wrote {}", cfg.output_dir.display());
        }
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            println!(
                "ok: {} variants x {} thresholds x {} seeds",
                cfg.variants.len(),
                cfg.tau_db.len(),
                cfg.seeds.len()
            );
        }
        Command::Plot { csv, out } => {
            plot_from_csv(&csv, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}
