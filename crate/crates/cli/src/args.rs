use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "tsf", version, about = "Thermal spread function simulation, recovery and classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Model {
    Centroid,
    Mlp,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a capture from a run config and write it as a frame bundle.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Additive Gaussian noise per pixel and frame, kelvin.
        #[arg(long)]
        noise_sigma: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recover diffusivity and absorption maps from a bundle.
    Recover {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run config; defaults to run.cfg inside the bundle.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr0: Option<f64>,
        /// Fixed update region radius in pixels around the beam.
        #[arg(long)]
        roi_radius: Option<f64>,
    },
    /// Recover a two-layer model with a known top thickness.
    Recover2 {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        thickness_m: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Fit the surface-only per-pixel model.
    Baseline2d {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare adjoint gradients against central finite differences.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 32)]
        probes: usize,
        #[arg(long, default_value_t = 1e-4)]
        rel_tol: f64,
    },
    /// Classify materials listed in a manifest, or score external predictions.
    Classify {
        #[arg(long, required_unless_present = "predictions")]
        manifest: Option<PathBuf>,
        /// Feature window side: 1, 3 or 5 pixels.
        #[arg(long, default_value_t = 5, value_parser = parse_window)]
        window: usize,
        #[arg(long, value_enum, default_value_t = Model::Mlp)]
        model: Model,
        /// Leave-one-out cross-validation instead of predicting the training set.
        #[arg(long)]
        loo: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        mlp_epochs: Option<usize>,
        #[arg(long)]
        mlp_lr: Option<f64>,
        /// CSV of true_label,predicted_label pairs from another classifier.
        #[arg(long, conflicts_with = "manifest")]
        predictions: Option<PathBuf>,
    },
    /// Print bundle metadata, stability verdict and peak rise.
    Info {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn parse_window(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(w @ (1 | 3 | 5)) => Ok(w),
        _ => Err(format!("window must be 1, 3 or 5, got '{s}'")),
    }
}
