//! Few-step generation with classifier-free guidance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cell::Cell;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::motion::{decode, encode, Dataset, MotionClip, Sample};
use crate::networks::ParamStore;
use crate::tensor::{Graph, Tensor};
use crate::training::{Model, TrainState};

pub const DEFAULT_GUIDANCE: f64 = 2.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleRequest {
    /// `None` samples unconditionally.
    pub label: Option<usize>,
    pub guidance: f64,
    pub count: usize,
    pub seed: u64,
    pub use_ema: bool,
}

impl Default for SampleRequest {
    fn default() -> Self {
        Self { label: Some(0), guidance: DEFAULT_GUIDANCE, count: 16, seed: 0, use_ema: true }
    }
}

/// How the two generator branches are combined.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Guidance {
    Conditional,
    Unconditional,
    Scale(f64),
}

impl Guidance {
    pub fn from_scale(s: f64) -> Result<Self> {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::InvalidArgument(format!("guidance scale {} must be >= 0", s)));
        }
        Ok(if s == 1.0 {
            Self::Conditional
        } else if s == 0.0 {
            Self::Unconditional
        } else {
            Self::Scale(s)
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    /// Loop index `i` of the step that produced this state (`None` for `x_T`).
    pub step: Option<usize>,
    pub x0_hat: Option<Tensor>,
    pub x: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_ms: f64,
    pub per_step_ms: Vec<f64>,
    pub ms_per_frame: f64,
}

pub struct SampleOutput {
    /// Normalized final state `[B, N, D_f]`.
    pub x0: Tensor,
    pub clips: Vec<MotionClip>,
    pub timing: Timing,
}

/// Inference over a generator parameter set; never touches the critic.
pub struct Sampler<'a> {
    pub model: &'a Model,
    pub params: &'a ParamStore,
    calls: Cell<usize>,
}

impl<'a> Sampler<'a> {
    pub fn new(model: &'a Model, params: &'a ParamStore) -> Self {
        Self { model, params, calls: Cell::new(0) }
    }

    pub fn from_state(state: &'a TrainState, use_ema: bool) -> Self {
        Self::new(&state.model, if use_ema { &state.ema } else { &state.gen })
    }

    /// Number of generator evaluations so far (a batched two-branch call
    /// counts once).
    pub fn generator_calls(&self) -> usize {
        self.calls.get()
    }

    fn forward(&self, x_t: &Tensor, z: &Tensor, labels: &[Option<usize>], t: usize) -> Result<Tensor> {
        self.calls.set(self.calls.get() + 1);
        let g = Graph::new();
        let p = self.params.bind(&g);
        let steps = vec![t; labels.len()];
        Ok(self.model.generator.forward(&p, g.leaf(x_t.clone()), g.leaf(z.clone()), labels, &steps, None)?.value())
    }

    /// `G(∅) + s·(G(c) − G(∅))` with shared `z`; both branches run as one
    /// batch. Scales 0 and 1 take the single-branch path.
    pub fn guided(&self, x_t: &Tensor, z: &Tensor, labels: &[Option<usize>], t: usize, guidance: Guidance) -> Result<Tensor> {
        match guidance {
            Guidance::Conditional => self.forward(x_t, z, labels, t),
            Guidance::Unconditional => self.forward(x_t, z, &vec![None; labels.len()], t),
            Guidance::Scale(s) => {
                let b = labels.len();
                let xs = Tensor::stack(&[x_t.clone(), x_t.clone()])?.reshape(&double(x_t.shape()))?;
                let zs = Tensor::stack(&[z.clone(), z.clone()])?.reshape(&double(z.shape()))?;
                let mut both = labels.to_vec();
                both.extend(std::iter::repeat(None).take(b));
                let out = self.forward(&xs, &zs, &both, t)?;
                let half = out.numel() / 2;
                let (c, u) = out.data().split_at(half);
                let data = c.iter().zip(u).map(|(&c, &u)| u + s * (c - u)).collect();
                Tensor::new(x_t.shape().to_vec(), data)
            }
        }
    }

    /// Full reverse chain, returning `T + 1` states starting at `x_T`.
    pub fn chain(&self, labels: &[Option<usize>], guidance: Guidance, rng: &mut ChaCha8Rng) -> Result<Vec<ChainState>> {
        let mut states = Vec::with_capacity(self.model.schedule.steps() + 1);
        self.run(labels, guidance, rng, |s| states.push(s))?;
        Ok(states)
    }

    fn run(
        &self,
        labels: &[Option<usize>],
        guidance: Guidance,
        rng: &mut ChaCha8Rng,
        mut visit: impl FnMut(ChainState),
    ) -> Result<Vec<f64>> {
        let m = self.model;
        let b = labels.len();
        let sched = &m.schedule;
        let mut x = Tensor::randn(&[b, m.frames(), m.frame_dim()], rng);
        visit(ChainState { step: None, x0_hat: None, x: x.clone() });
        let mut per_step = Vec::with_capacity(sched.steps());
        for i in (0..sched.steps()).rev() {
            let start = Instant::now();
            let z = Tensor::randn(&[b, m.generator.config.z_dim], rng);
            let x0_hat = self.guided(&x, &z, labels, i + 1, guidance)?;
            x = sched.sample_posterior(&x0_hat, &x, i, rng)?;
            per_step.push(start.elapsed().as_secs_f64() * 1e3);
            if !x.is_finite() {
                return Err(Error::SamplingDivergence { step: i });
            }
            visit(ChainState { step: Some(i), x0_hat: Some(x0_hat), x: x.clone() });
        }
        Ok(per_step)
    }

    /// Normalized samples plus timing.
    pub fn sample_tensor(&self, labels: &[Option<usize>], guidance: Guidance, rng: &mut ChaCha8Rng) -> Result<(Tensor, Timing)> {
        let start = Instant::now();
        let mut last = None;
        let per_step = self.run(labels, guidance, rng, |s| last = Some(s.x))?;
        let total_ms = start.elapsed().as_secs_f64() * 1e3;
        let frames = (labels.len() * self.model.frames()).max(1) as f64;
        Ok((last.expect("chain has a final state"), Timing { total_ms, per_step_ms: per_step, ms_per_frame: total_ms / frames }))
    }

    /// Denormalize and decode a normalized block into clips.
    pub fn decode(&self, x0: &Tensor, labels: &[Option<usize>]) -> Result<Vec<MotionClip>> {
        let raw = self.model.stats.denormalize(x0)?;
        (0..labels.len())
            .map(|i| decode(&raw.index_first(i)?, &self.model.skeleton, self.model.fps, labels[i].unwrap_or(0)))
            .collect()
    }

    pub fn sample(&self, labels: &[Option<usize>], guidance: Guidance, rng: &mut ChaCha8Rng) -> Result<SampleOutput> {
        let (x0, timing) = self.sample_tensor(labels, guidance, rng)?;
        let clips = self.decode(&x0, labels)?;
        Ok(SampleOutput { x0, clips, timing })
    }

    pub fn sample_request(&self, req: &SampleRequest) -> Result<SampleOutput> {
        if let Some(l) = req.label {
            if l >= self.model.classes() {
                return Err(Error::InvalidArgument(format!("label {} >= {} classes", l, self.model.classes())));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
        self.sample(&vec![req.label; req.count], Guidance::from_scale(req.guidance)?, &mut rng)
    }
}

fn double(shape: &[usize]) -> Vec<usize> {
    let mut s = shape.to_vec();
    s[0] *= 2;
    s
}

/// Re-encode decoded clips into a dataset that shares the model's layout
/// and statistics.
pub fn clips_to_dataset(model: &Model, clips: &[MotionClip]) -> Result<Dataset> {
    let samples = clips
        .iter()
        .map(|c| Ok(Sample { label: c.label, data: encode(c, &model.skeleton)? }))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        skeleton: model.skeleton.clone(),
        class_names: model.class_names.clone(),
        frames: model.frames(),
        fps: model.fps,
        stats: model.stats.clone(),
        samples,
    })
}

/// `clip,frame,joint,x,y,z` rows of global joint positions.
pub fn positions_csv(model: &Model, clips: &[MotionClip]) -> Result<String> {
    let mut out = String::from("clip,frame,joint,x,y,z\n");
    for (c, clip) in clips.iter().enumerate() {
        for (f, frame) in clip.positions(&model.skeleton)?.iter().enumerate() {
            for (j, p) in frame.iter().enumerate() {
                let _ = writeln!(out, "{},{},{},{},{},{}", c, f, j, p[0], p[1], p[2]);
            }
        }
    }
    Ok(out)
}

pub fn write_positions_csv(path: impl AsRef<Path>, model: &Model, clips: &[MotionClip]) -> Result<()> {
    std::fs::write(path, positions_csv(model, clips)?)?;
    Ok(())
}
