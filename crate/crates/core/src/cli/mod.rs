//! Command-line surface. Every command reads a JSON [`RunConfig`], applies
//! flag overrides, writes the merged config next to its outputs and embeds
//! it in every JSON artifact.

mod commands;
mod config;

pub use commands::{
    benchmark, eval, extractor_and_floor, make_data, sample, time_samplers, toy_posterior, train, BenchRow, Preset,
    CHECKPOINT_FILE, CONFIG_FILE, DATASET_FILE, LOSS_FILE, R_SWEEP, STEPS_SWEEP,
};
pub use config::{BenchmarkConfig, PosteriorStudy, RunConfig, DEFAULT_OUT, OUT_ENV};

use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::evaluation::Prior;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_IO: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Shape { .. } | Error::Unsupported(_) => EXIT_CONFIG,
        Error::Divergence { .. } | Error::SamplingDivergence { .. } | Error::NonFinite(_) => EXIT_DIVERGENCE,
        Error::Io(_) | Error::Integrity(_) | Error::Json(_) => EXIT_IO,
    }
}

#[derive(Debug, Parser)]
#[command(name = "motion-ddgan", version, about = "Few-step conditional motion generation")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run config; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output root (default: $MOTION_DDGAN_OUT, then ./runs).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Experiment name, the subdirectory of the output root.
    #[arg(long, global = true)]
    pub name: Option<String>,
    /// Seed for every module.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic motion dataset.
    MakeData {
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        clips_per_class: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        fps: Option<f64>,
    },
    /// Train a model, or a whole ablation with --preset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        /// Continue from a checkpoint; its stored training config is used.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        /// Geometric loss weight R.
        #[arg(long)]
        geo_weight: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr_g: Option<f64>,
        #[arg(long)]
        lr_d: Option<f64>,
    },
    /// Sample clips from a checkpoint. The chain length is the one the
    /// checkpoint was trained with.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, conflicts_with = "unconditional")]
        label: Option<usize>,
        #[arg(long)]
        unconditional: bool,
        /// Guidance scale s (0: unconditional, 1: conditional).
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long)]
        n: Option<usize>,
        /// Use the raw generator weights instead of the EMA copy.
        #[arg(long)]
        no_ema: bool,
    },
    /// Metrics of a checkpoint against a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long)]
        samples_per_class: Option<usize>,
    },
    /// Gaussianity of exact denoising posteriors across step sizes, plus a
    /// small GAN denoiser on the same prior.
    ToyPosterior {
        #[arg(long, value_enum)]
        prior: Option<PriorArg>,
        /// Comma-separated step sizes.
        #[arg(long, value_delimiter = ',')]
        steps: Option<Vec<usize>>,
        #[arg(long)]
        no_gan: bool,
    },
    /// Sampling runtime per frame.
    Benchmark {
        /// Time this checkpoint; otherwise time untrained models for each
        /// chain length in --steps.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        steps: Option<Vec<usize>>,
        #[arg(long)]
        n: Option<usize>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum PriorArg {
    TwoDelta,
    Gaussian,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// Merge the config file (or defaults) with the flags.
pub fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::Io(io) => Error::Config(format!("cannot read {}: {}", p.display(), io)),
            other => other,
        })?,
        None => RunConfig::default(),
    };
    set(&mut cfg.name, cli.common.name.clone());
    if cli.common.out.is_some() {
        cfg.out_dir = cli.common.out.clone();
    }
    if cli.common.seed.is_some() {
        cfg.seed = cli.common.seed;
    }
    match &cli.command {
        Command::MakeData { classes, clips_per_class, frames, fps } => {
            set(&mut cfg.data.classes, *classes);
            set(&mut cfg.data.clips_per_class, *clips_per_class);
            set(&mut cfg.data.frames, *frames);
            set(&mut cfg.data.fps, *fps);
        }
        Command::Train { steps, geo_weight, epochs, batch, lr_g, lr_d, .. } => {
            let t = &mut cfg.train;
            set(&mut t.steps, *steps);
            set(&mut t.geo_weight, *geo_weight);
            set(&mut t.epochs, *epochs);
            set(&mut t.batch, *batch);
            set(&mut t.lr_g, *lr_g);
            set(&mut t.lr_d, *lr_d);
        }
        Command::Sample { label, unconditional, scale, n, no_ema, .. } => {
            if *unconditional {
                cfg.sample.label = None;
            } else if label.is_some() {
                cfg.sample.label = *label;
            }
            set(&mut cfg.sample.guidance, *scale);
            set(&mut cfg.sample.count, *n);
            if *no_ema {
                cfg.sample.use_ema = false;
            }
        }
        Command::Eval { scale, samples_per_class, .. } => {
            set(&mut cfg.eval.guidance, *scale);
            set(&mut cfg.eval.samples_per_class, *samples_per_class);
        }
        Command::ToyPosterior { prior, steps, no_gan } => {
            match prior {
                Some(PriorArg::TwoDelta) => cfg.posterior.prior = Prior::two_delta(),
                Some(PriorArg::Gaussian) => cfg.posterior.prior = Prior::Gaussian { mean: 0.0, std: 1.0 },
                None => {}
            }
            set(&mut cfg.posterior.step_sizes, steps.clone());
            if *no_gan {
                cfg.posterior.train_gan = false;
            }
        }
        Command::Benchmark { steps, n, .. } => {
            set(&mut cfg.benchmark.steps, steps.clone());
            set(&mut cfg.benchmark.count, *n);
        }
    }
    let cfg = cfg.resolved();
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let cfg = effective_config(cli)?;
    match &cli.command {
        Command::MakeData { .. } => make_data(&cfg),
        Command::Train { data, preset, resume, .. } => train(&cfg, data, *preset, resume.as_deref()),
        Command::Sample { checkpoint, .. } => sample(&cfg, checkpoint),
        Command::Eval { checkpoint, data, .. } => eval(&cfg, checkpoint, data),
        Command::ToyPosterior { .. } => toy_posterior(&cfg),
        Command::Benchmark { checkpoint, .. } => benchmark(&cfg, checkpoint.as_deref()),
    }
}

/// Parse, run, report; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {}", e);
            exit_code(&e)
        }
    }
}
