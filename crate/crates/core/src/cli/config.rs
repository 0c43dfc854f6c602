use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::evaluation::{EvalConfig, ExtractorConfig, Prior, ToyConfig};
use crate::motion::SynthConfig;
use crate::sampler::SampleRequest;
use crate::schedule::ScheduleKind;
use crate::training::TrainConfig;

/// Output root used when neither the config nor a flag names one.
pub const OUT_ENV: &str = "MOTION_DDGAN_OUT";
pub const DEFAULT_OUT: &str = "runs";

/// Settings for the exact-posterior sweep of `toy-posterior`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PosteriorStudy {
    pub prior: Prior,
    /// Length of the fine analysis chain.
    pub chain_steps: usize,
    pub schedule: ScheduleKind,
    pub from: usize,
    pub x_t: f64,
    pub step_sizes: Vec<usize>,
    /// Also train the small GAN denoiser and report its histogram.
    pub train_gan: bool,
}

impl Default for PosteriorStudy {
    fn default() -> Self {
        Self {
            prior: Prior::two_delta(),
            chain_steps: 1000,
            schedule: ScheduleKind::Linear,
            from: 130,
            x_t: 0.0,
            step_sizes: vec![1, 5, 25, 125],
            train_gan: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    /// Chain lengths timed when no checkpoint is given.
    pub steps: Vec<usize>,
    /// Clips per timed batch.
    pub count: usize,
    /// Timed repetitions; the median is reported.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self { steps: vec![1, 5, 10, 20, 50], count: 8, repeats: 5, seed: 0 }
    }
}

/// Everything a command reads. A top-level `seed` overrides every module
/// seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub name: String,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub data: SynthConfig,
    pub train: TrainConfig,
    pub sample: SampleRequest,
    pub eval: EvalConfig,
    pub extractor: ExtractorConfig,
    pub posterior: PosteriorStudy,
    pub toy: ToyConfig,
    pub benchmark: BenchmarkConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            out_dir: None,
            seed: None,
            data: SynthConfig::default(),
            train: TrainConfig::default(),
            sample: SampleRequest::default(),
            eval: EvalConfig::default(),
            extractor: ExtractorConfig::default(),
            posterior: PosteriorStudy::default(),
            toy: ToyConfig::default(),
            benchmark: BenchmarkConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Push the top-level seed into every module.
    pub fn resolved(mut self) -> Self {
        if let Some(s) = self.seed {
            self.data.seed = s;
            self.train.seed = s;
            self.sample.seed = s;
            self.eval.seed = s;
            self.toy.seed = s;
            self.benchmark.seed = s;
        }
        self
    }

    /// `out_dir`, else `$MOTION_DDGAN_OUT`, else `./runs`; joined with the
    /// experiment name.
    pub fn run_dir(&self) -> PathBuf {
        let root = self
            .out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        root.join(&self.name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name == ".." {
            return Err(Error::Config(format!("bad experiment name {:?}", self.name)));
        }
        self.data.validate()?;
        self.train.validate()?;
        if self.benchmark.count == 0 || self.benchmark.repeats == 0 {
            return Err(Error::Config("benchmark count and repeats must be positive".into()));
        }
        Ok(())
    }
}
