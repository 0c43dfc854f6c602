use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{DiscriminatorConfig, GeneratorConfig};
use crate::schedule::{ScheduleKind, MAX_MODEL_STEPS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Diffusion steps, shared by training and sampling.
    pub steps: usize,
    pub schedule: ScheduleKind,
    /// Weight `R` of the geometric term.
    pub geo_weight: f64,
    /// Switch `λ` for the position/velocity/foot terms.
    pub geo_lambda: f64,
    /// R1 weight `γ`.
    pub r1_gamma: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch: usize,
    pub epochs: usize,
    pub ema_decay: f64,
    pub cond_drop: f64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 4,
            schedule: ScheduleKind::Cosine,
            geo_weight: 100.0,
            geo_lambda: 1.0,
            r1_gamma: 0.02,
            lr_g: 3e-5,
            lr_d: 1.25e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            batch: 64,
            epochs: 300,
            ema_decay: 0.999,
            cond_drop: 0.1,
            seed: 0,
            checkpoint_every: 0,
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(1..=MAX_MODEL_STEPS).contains(&self.steps) {
            return bad("steps must be in 1..=50");
        }
        if !(self.geo_weight >= 0.0 && self.geo_weight.is_finite()) {
            return bad("geo_weight must be >= 0");
        }
        if self.geo_lambda != 0.0 && self.geo_lambda != 1.0 {
            return bad("geo_lambda must be 0 or 1");
        }
        if !(self.r1_gamma >= 0.0 && self.r1_gamma.is_finite()) {
            return bad("r1_gamma must be >= 0");
        }
        if !(self.lr_g >= 0.0 && self.lr_d >= 0.0 && self.lr_g.is_finite() && self.lr_d.is_finite()) {
            return bad("learning rates must be >= 0");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must be in [0, 1)");
        }
        if self.batch == 0 || self.epochs == 0 {
            return bad("batch and epochs must be positive");
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return bad("ema_decay must be in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.cond_drop) {
            return bad("cond_drop must be in [0, 1)");
        }
        Ok(())
    }
}
