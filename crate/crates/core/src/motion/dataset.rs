//! Binary dataset container.
//!
//! Layout: `EMDMDS1` magic, u64 LE header length, JSON header, then per clip
//! a u32 LE label followed by `N·D_f` f64 LE values, then a CRC32 (LE) of
//! everything between the magic and the checksum.

use serde::{Deserialize, Serialize};
use std::path::Path;

use super::repr::NormStats;
use super::skeleton::Skeleton;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 7] = b"EMDMDS1";
const HEADER_LIMIT: u64 = 1 << 26;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub label: usize,
    /// Raw (unnormalized) frame vectors, `[N, D_f]`.
    pub data: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub skeleton: Skeleton,
    pub class_names: Vec<String>,
    pub frames: usize,
    pub fps: f64,
    pub stats: NormStats,
    pub samples: Vec<Sample>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    skeleton: Skeleton,
    classes: usize,
    class_names: Vec<String>,
    frames: usize,
    fps: f64,
    frame_dim: usize,
    clips: usize,
    stats: NormStats,
}

fn integrity(msg: impl Into<String>) -> Error {
    Error::Integrity(msg.into())
}

impl Dataset {
    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn frame_dim(&self) -> usize {
        self.skeleton.frame_dim()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Same metadata and statistics, a subset of clips.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self { samples: indices.iter().map(|&i| self.samples[i].clone()).collect(), ..self.without_samples() }
    }

    pub fn without_samples(&self) -> Self {
        Self {
            skeleton: self.skeleton.clone(),
            class_names: self.class_names.clone(),
            frames: self.frames,
            fps: self.fps,
            stats: self.stats.clone(),
            samples: Vec::new(),
        }
    }

    /// Two halves that alternate within each class, so both keep every label.
    pub fn split_alternate(&self) -> (Self, Self) {
        let mut seen = vec![0usize; self.classes()];
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (i, s) in self.samples.iter().enumerate() {
            let k = &mut seen[s.label];
            if *k % 2 == 0 { a.push(i) } else { b.push(i) }
            *k += 1;
        }
        (self.subset(&a), self.subset(&b))
    }

    /// Normalized `[B, N, D_f]` block and labels for the given clips.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let items: Vec<Tensor> = indices.iter().map(|&i| self.stats.normalize(&self.samples[i].data)).collect::<Result<_>>()?;
        let labels = indices.iter().map(|&i| self.samples[i].label).collect();
        Ok((Tensor::stack(&items)?, labels))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let d = self.frame_dim();
        for s in &self.samples {
            if s.data.shape() != [self.frames, d] {
                return Err(Error::InvalidArgument(format!("clip shape {:?} != [{}, {}]", s.data.shape(), self.frames, d)));
            }
            if s.label >= self.classes() || s.label > u32::MAX as usize {
                return Err(Error::InvalidArgument(format!("label {} out of range", s.label)));
            }
        }
        let header = serde_json::to_vec(&Header {
            skeleton: self.skeleton.clone(),
            classes: self.classes(),
            class_names: self.class_names.clone(),
            frames: self.frames,
            fps: self.fps,
            frame_dim: d,
            clips: self.len(),
            stats: self.stats.clone(),
        })?;
        let mut out = Vec::with_capacity(header.len() + 32 + self.len() * (4 + 8 * self.frames * d));
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for s in &self.samples {
            out.extend_from_slice(&(s.label as u32).to_le_bytes());
            for v in s.data.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out[DATASET_MAGIC.len()..]);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let m = DATASET_MAGIC.len();
        if bytes.len() < m || &bytes[..m] != DATASET_MAGIC {
            return Err(integrity("not a dataset file (bad magic or version)"));
        }
        if bytes.len() < m + 12 {
            return Err(integrity("dataset file truncated"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        if crc32fast::hash(&body[m..]) != stored {
            return Err(integrity("dataset checksum mismatch"));
        }
        let hlen = u64::from_le_bytes(body[m..m + 8].try_into().unwrap());
        if hlen > HEADER_LIMIT || (m + 8) as u64 + hlen > body.len() as u64 {
            return Err(integrity("dataset header length out of bounds"));
        }
        let hend = m + 8 + hlen as usize;
        let header: Header =
            serde_json::from_slice(&body[m + 8..hend]).map_err(|e| integrity(format!("dataset header: {}", e)))?;
        if header.frame_dim != header.skeleton.frame_dim()
            || header.class_names.len() != header.classes
            || header.stats.dim() != header.frame_dim
        {
            return Err(integrity("dataset header is inconsistent"));
        }
        let skeleton = Skeleton::new(
            header.skeleton.names,
            header.skeleton.parents,
            header.skeleton.offsets,
            header.skeleton.foot_joints,
        )
        .map_err(|e| integrity(format!("dataset skeleton: {}", e)))?;
        let per = header.frames * header.frame_dim;
        let record = 4 + 8 * per;
        let payload = &body[hend..];
        if payload.len() != header.clips * record {
            return Err(integrity(format!("expected {} clip bytes, found {}", header.clips * record, payload.len())));
        }
        let mut samples = Vec::with_capacity(header.clips);
        for chunk in payload.chunks_exact(record) {
            let label = u32::from_le_bytes(chunk[..4].try_into().unwrap()) as usize;
            if label >= header.classes {
                return Err(integrity(format!("label {} out of range", label)));
            }
            let data = chunk[4..].chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
            samples.push(Sample { label, data: Tensor::new(vec![header.frames, header.frame_dim], data)? });
        }
        Ok(Self {
            skeleton,
            class_names: header.class_names,
            frames: header.frames,
            fps: header.fps,
            stats: header.stats,
            samples,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
