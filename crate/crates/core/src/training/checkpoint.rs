//! Checkpoint container.
//!
//! Layout: `EMDMCK1` magic, u64 LE header length, JSON header (config,
//! schedule, data layout, counters, RNG position and a tensor index), raw
//! f64 LE blobs in index order, CRC32 (LE) of everything after the magic.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::config::TrainConfig;
use super::optim::Adam;
use super::trainer::{Model, TrainState};
use crate::error::{Error, Result};
use crate::motion::{NormStats, Skeleton};
use crate::networks::{Discriminator, Generator, ParamStore};
use crate::schedule::{Schedule, ScheduleSpec};
use crate::tensor::{numel, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"EMDMCK1";
pub const CHECKPOINT_VERSION: u32 = 1;
const GROUPS: [&str; 7] = ["gen", "disc", "ema", "adam_g.m", "adam_g.v", "adam_d.m", "adam_d.v"];

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RngPosition {
    seed: u64,
    /// Stream of the next epoch's generator.
    next_stream: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    group: String,
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    config: TrainConfig,
    schedule: ScheduleSpec,
    skeleton: Skeleton,
    stats: NormStats,
    fps: f64,
    class_names: Vec<String>,
    frames: usize,
    frame_dim: usize,
    epoch: usize,
    iteration: u64,
    adam_steps: [u64; 2],
    rng: RngPosition,
    tensors: Vec<TensorEntry>,
}

fn integrity(msg: impl Into<String>) -> Error {
    Error::Integrity(msg.into())
}

impl TrainState {
    fn groups(&self) -> [&ParamStore; 7] {
        [&self.gen, &self.disc, &self.ema, &self.adam_g.m, &self.adam_g.v, &self.adam_d.m, &self.adam_d.v]
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        for (group, store) in GROUPS.iter().zip(self.groups()) {
            for (name, t) in store.names().iter().zip(store.tensors()) {
                tensors.push(TensorEntry { group: group.to_string(), name: name.clone(), shape: t.shape().to_vec() });
            }
        }
        let header = Header {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            schedule: self.model.schedule.spec(),
            skeleton: self.model.skeleton.clone(),
            stats: self.model.stats.clone(),
            fps: self.model.fps,
            class_names: self.model.class_names.clone(),
            frames: self.model.frames(),
            frame_dim: self.model.frame_dim(),
            epoch: self.epoch,
            iteration: self.iteration,
            adam_steps: [self.adam_g.step, self.adam_d.step],
            rng: RngPosition { seed: self.config.seed, next_stream: self.epoch as u64 + 1 },
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for store in self.groups() {
            for t in store.tensors() {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let crc = crc32fast::hash(&out[CHECKPOINT_MAGIC.len()..]);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let m = CHECKPOINT_MAGIC.len();
        if bytes.len() < m || &bytes[..m] != CHECKPOINT_MAGIC {
            return Err(integrity("not a checkpoint file (bad magic or version)"));
        }
        if bytes.len() < m + 12 {
            return Err(integrity("checkpoint truncated"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(&body[m..]) != u32::from_le_bytes(tail.try_into().unwrap()) {
            return Err(integrity("checkpoint checksum mismatch"));
        }
        let hlen = u64::from_le_bytes(body[m..m + 8].try_into().unwrap());
        if (m + 8) as u64 + hlen > body.len() as u64 {
            return Err(integrity("checkpoint header length out of bounds"));
        }
        let hend = m + 8 + hlen as usize;
        let h: Header =
            serde_json::from_slice(&body[m + 8..hend]).map_err(|e| integrity(format!("checkpoint header: {}", e)))?;
        if h.version != CHECKPOINT_VERSION {
            return Err(integrity(format!("checkpoint version {} unsupported", h.version)));
        }
        h.config.validate()?;
        let schedule = Schedule::from_spec(&h.schedule)?;
        if schedule.steps() != h.config.steps {
            return Err(integrity("schedule length disagrees with config"));
        }
        if h.skeleton.frame_dim() != h.frame_dim || h.stats.dim() != h.frame_dim {
            return Err(integrity("checkpoint data layout is inconsistent"));
        }
        let classes = h.class_names.len();
        let generator = Generator::new(h.config.generator.clone(), h.frames, h.frame_dim, classes)?;
        let discriminator = Discriminator::new(h.config.discriminator.clone(), h.frames, h.frame_dim, classes)?;

        let mut stores: Vec<ParamStore> = (0..GROUPS.len()).map(|_| ParamStore::new()).collect();
        let mut offset = hend;
        for e in &h.tensors {
            let g = GROUPS.iter().position(|g| *g == e.group).ok_or_else(|| integrity(format!("unknown group {}", e.group)))?;
            let len = numel(&e.shape);
            let end = offset + 8 * len;
            if end > body.len() {
                return Err(integrity("checkpoint tensor data truncated"));
            }
            let data = body[offset..end].chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
            stores[g].push(e.name.clone(), Tensor::new(e.shape.clone(), data)?);
            offset = end;
        }
        if offset != body.len() {
            return Err(integrity("trailing bytes after checkpoint tensors"));
        }
        let mut scratch = ChaCha8Rng::seed_from_u64(0);
        let layouts = [generator.init(&mut scratch), discriminator.init(&mut scratch)];
        for (g, store) in stores.iter().enumerate() {
            let reference = if g == 1 || g >= 5 { &layouts[1] } else { &layouts[0] };
            let same = store.names() == reference.names()
                && store.tensors().iter().zip(reference.tensors()).all(|(a, b)| a.shape() == b.shape());
            if !same {
                return Err(integrity(format!("tensor group {} does not match the architecture", GROUPS[g])));
            }
        }
        let mut it = stores.into_iter();
        let mut next = || it.next().unwrap();
        let (gen, disc, ema) = (next(), next(), next());
        let adam = |m: ParamStore, v: ParamStore, step: u64| Adam {
            beta1: h.config.adam_beta1,
            beta2: h.config.adam_beta2,
            eps: super::optim::ADAM_EPS,
            step,
            m,
            v,
        };
        let adam_g = adam(next(), next(), h.adam_steps[0]);
        let adam_d = adam(next(), next(), h.adam_steps[1]);
        Ok(TrainState {
            model: Model {
                generator,
                discriminator,
                schedule,
                skeleton: h.skeleton,
                stats: h.stats,
                fps: h.fps,
                class_names: h.class_names,
            },
            config: h.config,
            gen,
            disc,
            ema,
            adam_g,
            adam_d,
            epoch: h.epoch,
            iteration: h.iteration,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
