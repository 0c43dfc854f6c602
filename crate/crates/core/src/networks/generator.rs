use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::embed::{condition_onehot, positional_table, sinusoidal_batch};
use super::params::ParamStore;
use crate::error::{shape_err, Error, Result};
use crate::tensor::nn::{dropout, layer_norm, linear, multi_head_self_attention};
use crate::tensor::{Graph, Tensor, Var};

pub const Z_LAYERS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub z_dim: usize,
    pub dropout: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { hidden: 128, layers: 4, heads: 4, ffn: 128, z_dim: 64, dropout: 0.1 }
    }
}

/// Architecture of the conditional denoiser `G(x_t, z, c, t) -> x̂₀`.
///
/// Tokens are `[t, z, c, frame_1 .. frame_N]` plus a fixed sinusoidal
/// position table; the first three outputs are dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub frames: usize,
    pub frame_dim: usize,
    pub classes: usize,
}

struct Layer {
    ln1: (usize, usize),
    qkv: (usize, usize),
    out: (usize, usize),
    ln2: (usize, usize),
    ff1: (usize, usize),
    ff2: (usize, usize),
}

/// Caller-supplied dropout keep masks, three per encoder layer.
#[derive(Clone, Debug)]
pub struct DropoutMasks {
    pub keep: f64,
    pub masks: Vec<[Tensor; 3]>,
}

impl Generator {
    pub fn new(config: GeneratorConfig, frames: usize, frame_dim: usize, classes: usize) -> Result<Self> {
        let c = &config;
        if c.hidden == 0 || c.heads == 0 || c.hidden % c.heads != 0 || c.hidden % 2 != 0 {
            return Err(Error::Config(format!("hidden {} must be even and divisible by heads {}", c.hidden, c.heads)));
        }
        if c.ffn == 0 || c.z_dim == 0 || frames == 0 || frame_dim == 0 || classes == 0 {
            return Err(Error::Config("generator sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&c.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", c.dropout)));
        }
        Ok(Self { config, frames, frame_dim, classes })
    }

    pub fn tokens(&self) -> usize {
        self.frames + 3
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore {
        let (h, f) = (self.config.hidden, self.config.ffn);
        let mut p = ParamStore::new();
        let dense = |p: &mut ParamStore, name: &str, i: usize, o: usize, rng: &mut R| {
            p.push_lecun(&format!("{}.w", name), i, o, rng);
            p.push(format!("{}.b", name), Tensor::zeros(&[o]));
        };
        p.push("cond.table", Tensor::from_fn(&[self.classes + 1, h], |_| StandardNormal.sample(rng)));
        dense(&mut p, "time", h, h, rng);
        for k in 0..Z_LAYERS {
            let fan_in = if k == 0 { self.config.z_dim } else { h };
            dense(&mut p, &format!("z.{}", k), fan_in, h, rng);
        }
        dense(&mut p, "in", self.frame_dim, h, rng);
        for l in 0..self.config.layers {
            p.push(format!("enc{}.ln1.g", l), Tensor::ones(&[h]));
            p.push(format!("enc{}.ln1.b", l), Tensor::zeros(&[h]));
            dense(&mut p, &format!("enc{}.qkv", l), h, 3 * h, rng);
            dense(&mut p, &format!("enc{}.proj", l), h, h, rng);
            p.push(format!("enc{}.ln2.g", l), Tensor::ones(&[h]));
            p.push(format!("enc{}.ln2.b", l), Tensor::zeros(&[h]));
            dense(&mut p, &format!("enc{}.ff1", l), h, f, rng);
            dense(&mut p, &format!("enc{}.ff2", l), f, h, rng);
        }
        p.push("final.ln.g", Tensor::ones(&[h]));
        p.push("final.ln.b", Tensor::zeros(&[h]));
        dense(&mut p, "out", h, self.frame_dim, rng);
        p
    }

    /// Parameter count implied by the configuration.
    pub fn param_count(&self) -> usize {
        let (h, f, z, d) = (self.config.hidden, self.config.ffn, self.config.z_dim, self.frame_dim);
        let layer = 4 * h + (h * 3 * h + 3 * h) + (h * h + h) + (h * f + f) + (f * h + h);
        (self.classes + 1) * h
            + (h * h + h)
            + (z * h + h)
            + (Z_LAYERS - 1) * (h * h + h)
            + (d * h + h)
            + self.config.layers * layer
            + 2 * h
            + (h * d + d)
    }

    fn layer_indices(&self, l: usize) -> Layer {
        // table, time, z-mlp, in-projection, then 12 tensors per layer
        let base = 1 + 2 + 2 * Z_LAYERS + 2 + 12 * l;
        let pair = |k: usize| (base + k, base + k + 1);
        Layer { ln1: pair(0), qkv: pair(2), out: pair(4), ln2: pair(6), ff1: pair(8), ff2: pair(10) }
    }

    pub fn sample_masks<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> DropoutMasks {
        let keep = 1.0 - self.config.dropout;
        let (s, h, f) = (self.tokens(), self.config.hidden, self.config.ffn);
        let mut draw = |shape: &[usize]| Tensor::from_fn(shape, |_| if rng.gen::<f64>() < keep { 1.0 } else { 0.0 });
        let masks = (0..self.config.layers)
            .map(|_| [draw(&[batch, s, h]), draw(&[batch, s, f]), draw(&[batch, s, h])])
            .collect();
        DropoutMasks { keep, masks }
    }

    /// `x_t: [B, N, D_f]`, `z: [B, z_dim]`; returns `x̂₀: [B, N, D_f]`.
    /// `masks = None` is the inference path (no dropout).
    pub fn forward<'g>(
        &self,
        params: &[Var<'g>],
        x_t: Var<'g>,
        z: Var<'g>,
        labels: &[Option<usize>],
        steps: &[usize],
        masks: Option<&DropoutMasks>,
    ) -> Result<Var<'g>> {
        let g: &'g Graph = x_t.graph();
        let (h, n, d) = (self.config.hidden, self.frames, self.frame_dim);
        let b = labels.len();
        if x_t.shape() != [b, n, d] || z.shape() != [b, self.config.z_dim] || steps.len() != b {
            return shape_err(
                "generator",
                format!("x_t {:?}, z {:?}, {} steps for batch {}", x_t.shape(), z.shape(), steps.len(), b),
            );
        }
        if let Some(m) = masks {
            if m.masks.len() != self.config.layers || m.masks.iter().any(|l| l[0].shape()[0] != b) {
                return shape_err("generator", "dropout masks do not match batch/layers".to_string());
            }
        }
        let dense = |x: Var<'g>, i: usize| linear(x, params[i], params[i + 1]);
        let onehot = g.leaf(condition_onehot(labels, self.classes)?);
        let c_tok = onehot.matmul(params[0])?.reshape(&[b, 1, h])?;
        let t_tok = dense(g.leaf(sinusoidal_batch(steps, h)?), 1)?.reshape(&[b, 1, h])?;
        let mut zh = z;
        for k in 0..Z_LAYERS {
            zh = dense(zh, 3 + 2 * k)?;
            if k + 1 < Z_LAYERS {
                zh = zh.selu()?;
            }
        }
        let z_tok = zh.reshape(&[b, 1, h])?;
        let x_tok = dense(x_t, 3 + 2 * Z_LAYERS)?;
        let pos = g.leaf(positional_table(self.tokens(), h)?);
        let mut hs = Var::concat(&[t_tok, z_tok, c_tok, x_tok], 1)?.add(pos)?;
        for l in 0..self.config.layers {
            let ix = self.layer_indices(l);
            let drop = |x: Var<'g>, k: usize| match masks {
                Some(m) => dropout(x, &m.masks[l][k], m.keep),
                None => Ok(x),
            };
            let a = layer_norm(hs, params[ix.ln1.0], params[ix.ln1.1])?;
            let a = multi_head_self_attention(
                a,
                params[ix.qkv.0],
                params[ix.qkv.1],
                params[ix.out.0],
                params[ix.out.1],
                self.config.heads,
            )?;
            hs = hs.add(drop(a, 0)?)?;
            let f = layer_norm(hs, params[ix.ln2.0], params[ix.ln2.1])?;
            let f = drop(linear(f, params[ix.ff1.0], params[ix.ff1.1])?.selu()?, 1)?;
            let f = linear(f, params[ix.ff2.0], params[ix.ff2.1])?;
            hs = hs.add(drop(f, 2)?)?;
        }
        let tail = params.len() - 4;
        let hs = layer_norm(hs, params[tail], params[tail + 1])?;
        dense(hs.slice(1, 3, n)?, tail + 2)
    }
}
