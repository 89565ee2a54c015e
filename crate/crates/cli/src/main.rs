use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use geoprior_cli::report::{report, ReportArgs};
use geoprior_cli::stages::{
    corrupt, eval, geodesic, synth, train_gae_stage, train_seg, Arch, CorruptArgs, Dtype, EvalArgs, GaeArgs, GeodesicArgs, SegArgs,
    SynthArgs, TrainOpts,
};
use geoprior_cli::{Error, Result};
use geoprior_core::noise::NoiseLevel;
use geoprior_train::PriorMode;

/// Weakly supervised cardiac segmentation with a geodesic shape prior.
///
/// Worker pools honour GEOPRIOR_THREADS. Exit codes: 0 ok, 2 bad config,
/// 3 missing or stale upstream stage, 4 numerical failure.
#[derive(Parser)]
#[command(name = "geoprior", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic phantom dataset.
    Synth {
        #[arg(long, default_value_t = 150)]
        n: usize,
        /// Train, validation and test counts.
        #[arg(long, default_value = "80,20,50")]
        split: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Corrupt the dataset labels at one noise level.
    Corrupt {
        #[arg(long)]
        data: PathBuf,
        /// L1 or L2.
        #[arg(long)]
        level: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute binary or geodesic prior maps for the training and validation images.
    Geodesic {
        #[arg(long)]
        data: PathBuf,
        /// Output of `corrupt`; clean labels if omitted.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value = "geodesic")]
        prior: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the prior autoencoder on the output of `geodesic`.
    TrainGae {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        maps: PathBuf,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the segmentor, with the frozen autoencoder in prior modes.
    TrainSeg {
        #[arg(long)]
        data: PathBuf,
        /// Output of `corrupt`; clean labels if omitted.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// none, binary or geodesic.
        #[arg(long, default_value = "none")]
        prior: String,
        /// Output of `train-gae`, required by the prior modes.
        #[arg(long)]
        gae: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a trained segmentor on the clean test labels.
    Eval {
        run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        batch: usize,
    },
    /// Merge evaluated runs into one table with learning curves.
    Report {
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Arch::Toy)]
    arch: Arch,
    #[arg(long, value_enum, default_value_t = Dtype::F64)]
    dtype: Dtype,
    /// Retrain even if an identical run is on disk.
    #[arg(long)]
    force: bool,
}

impl TrainFlags {
    fn opts(&self, lambda_gae: f64) -> TrainOpts {
        TrainOpts {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            patience: self.patience,
            lambda_gae,
            max_steps: self.max_steps,
            seed: self.seed,
            arch: self.arch,
            dtype: self.dtype,
            force: self.force,
        }
    }
}

fn parse_split(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| Error::Config(format!("bad --split {s:?}"))))
        .collect::<Result<_>>()?;
    parts.try_into().map_err(|_| Error::Config(format!("--split needs three counts, got {s:?}")))
}

fn parse_prior(s: &str) -> Result<PriorMode> {
    s.parse().map_err(|e: geoprior_train::Error| Error::Config(e.to_string()))
}

fn parse_level(s: &str) -> Result<NoiseLevel> {
    match s {
        "L1" | "l1" => Ok(NoiseLevel::L1),
        "L2" | "l2" => Ok(NoiseLevel::L2),
        _ => Err(Error::Config(format!("unknown noise level {s:?} (L1, L2)"))),
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Synth { n, split, seed, out } => {
            synth(&SynthArgs { n, split: parse_split(&split)?, seed, out })?;
        }
        Cmd::Corrupt { data, level, seed, out } => {
            corrupt(&CorruptArgs { data, level: parse_level(&level)?, seed, out })?;
        }
        Cmd::Geodesic { data, labels, prior, out } => {
            geodesic(&GeodesicArgs { data, labels, prior: parse_prior(&prior)?, out })?;
        }
        Cmd::TrainGae { data, maps, train, out } => {
            train_gae_stage(&GaeArgs { data, maps, train: train.opts(1.0), out })?;
        }
        Cmd::TrainSeg { data, labels, prior, gae, lambda, train, out } => {
            train_seg(&SegArgs { data, labels, prior: parse_prior(&prior)?, gae, train: train.opts(lambda), out })?;
        }
        Cmd::Eval { run, out, batch } => {
            eval(&EvalArgs { run, out, batch })?;
        }
        Cmd::Report { runs, out } => {
            report(&ReportArgs { runs, out })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
