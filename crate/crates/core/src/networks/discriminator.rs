use rand::Rng;
use serde::{Deserialize, Serialize};

use super::embed::{condition_onehot, sinusoidal_batch};
use super::params::ParamStore;
use crate::error::{shape_err, Error, Result};
use crate::tensor::nn::{group_norm, linear};
use crate::tensor::{Graph, Tensor, Var};

pub const DISC_LAYERS: usize = 7;
/// Hidden layers (1-based) followed by group norm.
pub const GROUP_NORM_AFTER: [usize; 2] = [2, 4];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub hidden: usize,
    pub groups: usize,
    pub time_dim: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { hidden: 256, groups: 8, time_dim: 128 }
    }
}

/// Conditional critic `D(x_{t-1}, x_t, c, t)` over flattened motion blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub frames: usize,
    pub frame_dim: usize,
    pub classes: usize,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, frames: usize, frame_dim: usize, classes: usize) -> Result<Self> {
        if config.hidden == 0 || config.groups == 0 || config.hidden % config.groups != 0 {
            return Err(Error::Config(format!(
                "discriminator width {} must be divisible by {} groups",
                config.hidden, config.groups
            )));
        }
        if config.time_dim == 0 || config.time_dim % 2 != 0 {
            return Err(Error::Config("discriminator time embedding must be even".into()));
        }
        Ok(Self { config, frames, frame_dim, classes })
    }

    pub fn input_dim(&self) -> usize {
        2 * self.frames * self.frame_dim + self.config.time_dim + self.classes + 1
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore {
        let h = self.config.hidden;
        let mut p = ParamStore::new();
        for l in 1..=DISC_LAYERS {
            let fan_in = if l == 1 { self.input_dim() } else { h };
            let fan_out = if l == DISC_LAYERS { 1 } else { h };
            p.push_lecun(&format!("d{}.w", l), fan_in, fan_out, rng);
            p.push(format!("d{}.b", l), Tensor::zeros(&[fan_out]));
            if GROUP_NORM_AFTER.contains(&l) {
                p.push(format!("d{}.gn.g", l), Tensor::ones(&[h]));
                p.push(format!("d{}.gn.b", l), Tensor::zeros(&[h]));
            }
        }
        p
    }

    pub fn param_count(&self) -> usize {
        let h = self.config.hidden;
        (self.input_dim() * h + h) + 5 * (h * h + h) + (h + 1) + GROUP_NORM_AFTER.len() * 2 * h
    }

    /// Scores `[B]` for blocks `x_prev`, `x_t` of shape `[B, N, D_f]`.
    pub fn forward<'g>(
        &self,
        params: &[Var<'g>],
        x_prev: Var<'g>,
        x_t: Var<'g>,
        labels: &[Option<usize>],
        steps: &[usize],
    ) -> Result<Var<'g>> {
        let g: &'g Graph = x_t.graph();
        let b = labels.len();
        let block = [b, self.frames, self.frame_dim];
        if x_prev.shape() != block || x_t.shape() != block || steps.len() != b {
            return shape_err(
                "discriminator",
                format!("x_prev {:?}, x_t {:?}, {} steps, batch {}", x_prev.shape(), x_t.shape(), steps.len(), b),
            );
        }
        let flat = self.frames * self.frame_dim;
        let mut h = Var::concat(
            &[
                x_prev.reshape(&[b, flat])?,
                x_t.reshape(&[b, flat])?,
                g.leaf(sinusoidal_batch(steps, self.config.time_dim)?),
                g.leaf(condition_onehot(labels, self.classes)?),
            ],
            1,
        )?;
        let mut i = 0;
        for l in 1..=DISC_LAYERS {
            h = linear(h, params[i], params[i + 1])?;
            i += 2;
            if GROUP_NORM_AFTER.contains(&l) {
                h = group_norm(h, self.config.groups, params[i], params[i + 1])?;
                i += 2;
            }
            if l < DISC_LAYERS {
                h = h.selu()?;
            }
        }
        h.reshape(&[b])
    }
}
