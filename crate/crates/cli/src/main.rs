//! `landcover` — land-cover classification pipeline driver: dataset
//! curation, training, whole-raster classification, and multi-year change
//! reporting, all steered by one JSON run-configuration.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::UsageError;

#[derive(Parser)]
#[command(
    name = "landcover",
    version,
    about = "Land-cover tile classification and wildfire change analysis"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Curate labeled 32x32 tiles from rasters + label polygons
    Curate {
        #[arg(long, value_name = "RUN.JSON")]
        config: PathBuf,
    },
    /// Stratified re-split of a curated dataset
    Split {
        #[arg(long, value_name = "RUN.JSON")]
        config: PathBuf,
    },
    /// Train the classifier; writes metrics.csv, best.cnn1, final.cnn1
    Train {
        #[arg(long, value_name = "RUN.JSON")]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on one dataset split
    Eval {
        #[arg(long, value_name = "RUN.JSON")]
        config: PathBuf,
        /// Checkpoint path (default: <model_dir>/best.cnn1)
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Split to evaluate: train | val | test
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Classify a raster into a class map
    Classify {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        raster: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Apply the 3x3 majority filter to the map
        #[arg(long)]
        filter: bool,
        /// Year tag stored in the output map
        #[arg(long)]
        year: Option<String>,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        /// Fail (instead of warn) on a training/raster resolution mismatch
        #[arg(long)]
        strict_resolution: bool,
    },
    /// Majority-filter an existing class map
    Filter {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a class map to a binary PPM image
    Render {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Multi-year change report: CSV + SVG chart + one PPM per year
    Report {
        /// Comma-separated class maps in ascending year order
        #[arg(long, value_delimiter = ',', value_name = "MAPS")]
        maps: Vec<PathBuf>,
        /// GeoJSON polygon mask restricting the analysis region
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit the synthetic acceptance dataset
    Synth {
        #[arg(long, value_name = "RUN.JSON")]
        config: PathBuf,
    },
    /// Run gradient and convolution-oracle self-checks
    Selftest {
        /// Random instances per gradient check
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
}

fn run(cmd: Cmd) -> anyhow::Result<()> {
    match cmd {
        Cmd::Curate { config } => commands::cmd_curate(&config),
        Cmd::Split { config } => commands::cmd_split(&config),
        Cmd::Train { config } => commands::cmd_train(&config),
        Cmd::Eval { config, checkpoint, split } => {
            commands::cmd_eval(&config, checkpoint.as_deref(), &split)
        }
        Cmd::Classify {
            checkpoint,
            raster,
            out,
            filter,
            year,
            batch_size,
            strict_resolution,
        } => commands::cmd_classify(
            &checkpoint,
            &raster,
            &out,
            filter,
            year,
            batch_size,
            strict_resolution,
        ),
        Cmd::Filter { map, out } => commands::cmd_filter(&map, &out),
        Cmd::Render { map, out } => commands::cmd_render(&map, &out),
        Cmd::Report { maps, mask, out } => commands::cmd_report(&maps, mask.as_deref(), &out),
        Cmd::Synth { config } => commands::cmd_synth(&config),
        Cmd::Selftest { instances } => commands::cmd_selftest(instances),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            if let Some(u) = err.downcast_ref::<UsageError>() {
                eprintln!("error: {u}");
                eprintln!("{}", u.synopsis);
                ExitCode::from(2)
            } else {
                eprintln!("error: {err:#}");
                ExitCode::from(1)
            }
        }
    }
}
