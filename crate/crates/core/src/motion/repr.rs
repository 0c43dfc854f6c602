use serde::{Deserialize, Serialize};

use super::quat::{self, Quat, Vec3};
use super::skeleton::Skeleton;
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

const STD_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub root: Vec3,
    pub rotations: Vec<Quat>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionClip {
    pub label: usize,
    pub fps: f64,
    pub frames: Vec<Pose>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactThresholds {
    /// m/s
    pub velocity: f64,
    /// m above the floor
    pub height: f64,
}

impl Default for ContactThresholds {
    fn default() -> Self {
        Self { velocity: 0.1, height: 0.05 }
    }
}

/// Channel offsets inside a frame vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub joints: usize,
    pub feet: usize,
}

impl Layout {
    pub fn of(skeleton: &Skeleton) -> Self {
        Self { joints: skeleton.joints(), feet: skeleton.foot_joints.len() }
    }
    pub fn root(&self) -> usize {
        0
    }
    pub fn rotations(&self) -> usize {
        3
    }
    pub fn positions(&self) -> usize {
        3 + 4 * self.joints
    }
    pub fn velocities(&self) -> usize {
        3 + 7 * self.joints
    }
    pub fn contacts(&self) -> usize {
        3 + 10 * self.joints
    }
    pub fn dim(&self) -> usize {
        3 + 10 * self.joints + self.feet
    }
}

impl MotionClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn positions(&self, skeleton: &Skeleton) -> Result<Vec<Vec<Vec3>>> {
        self.frames.iter().map(|p| skeleton.fk(p.root, &p.rotations)).collect()
    }
}

/// Flag foot joints that are both slow and near the floor. The last frame
/// has no forward difference and copies its predecessor.
pub fn detect_foot_contact(
    positions: &[Vec<Vec3>],
    skeleton: &Skeleton,
    thresholds: ContactThresholds,
    fps: f64,
) -> Result<Vec<Vec<f64>>> {
    let n = positions.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("contact detection needs 2 frames, got {}", n)));
    }
    let mut mask = Vec::with_capacity(n);
    for i in 0..n - 1 {
        let row: Vec<f64> = skeleton
            .foot_joints
            .iter()
            .map(|&f| {
                let speed = quat::vnorm(quat::vsub(positions[i + 1][f], positions[i][f])) * fps;
                let planted = speed < thresholds.velocity && positions[i][f][2] < thresholds.height;
                if planted { 1.0 } else { 0.0 }
            })
            .collect();
        mask.push(row);
    }
    mask.push(mask[n - 2].clone());
    Ok(mask)
}

pub fn encode(clip: &MotionClip, skeleton: &Skeleton) -> Result<Tensor> {
    let n = clip.len();
    if n < 2 {
        return Err(Error::InvalidArgument("a clip needs at least 2 frames".into()));
    }
    let layout = Layout::of(skeleton);
    let positions = clip.positions(skeleton)?;
    let contacts = detect_foot_contact(&positions, skeleton, ContactThresholds::default(), clip.fps)?;
    let d = layout.dim();
    let mut out = vec![0.0; n * d];
    for (i, pose) in clip.frames.iter().enumerate() {
        let row = &mut out[i * d..(i + 1) * d];
        row[..3].copy_from_slice(&pose.root);
        for (j, q) in pose.rotations.iter().enumerate() {
            row[layout.rotations() + 4 * j..layout.rotations() + 4 * j + 4].copy_from_slice(q);
        }
        let (a, b) = if i + 1 < n { (i, i + 1) } else { (i - 1, i) };
        for j in 0..layout.joints {
            let p = positions[i][j];
            row[layout.positions() + 3 * j..layout.positions() + 3 * j + 3].copy_from_slice(&p);
            let v = quat::vscale(quat::vsub(positions[b][j], positions[a][j]), clip.fps);
            row[layout.velocities() + 3 * j..layout.velocities() + 3 * j + 3].copy_from_slice(&v);
        }
        row[layout.contacts()..].copy_from_slice(&contacts[i]);
    }
    Tensor::new(vec![n, d], out)
}

/// Rebuild a clip from root and rotation channels; quaternions are
/// renormalized and all derived channels are ignored.
pub fn decode(data: &Tensor, skeleton: &Skeleton, fps: f64, label: usize) -> Result<MotionClip> {
    let layout = Layout::of(skeleton);
    let d = layout.dim();
    if data.rank() != 2 || data.shape()[1] != d {
        return shape_err("decode", format!("{:?} for frame width {}", data.shape(), d));
    }
    let frames = data
        .data()
        .chunks(d)
        .map(|row| Pose {
            root: [row[0], row[1], row[2]],
            rotations: (0..layout.joints)
                .map(|j| {
                    let o = layout.rotations() + 4 * j;
                    quat::normalize([row[o], row[o + 1], row[o + 2], row[o + 3]])
                })
                .collect(),
        })
        .collect();
    Ok(MotionClip { label, fps, frames })
}

/// Per-channel statistics used to standardize frame vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Statistics over every frame of every clip, with a floor on the
    /// standard deviation so constant channels stay finite.
    pub fn compute(clips: &[&Tensor], dim: usize) -> Result<Self> {
        let mut count = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for c in clips {
            if c.shape().last() != Some(&dim) {
                return shape_err("norm_stats", format!("{:?} for width {}", c.shape(), dim));
            }
            for row in c.data().chunks(dim) {
                count += 1;
                for k in 0..dim {
                    sum[k] += row[k];
                }
            }
        }
        if count == 0 {
            return Ok(Self::identity(dim));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        for c in clips {
            for row in c.data().chunks(dim) {
                for k in 0..dim {
                    sq[k] += (row[k] - mean[k]).powi(2);
                }
            }
        }
        let std = sq.iter().map(|s| (s / count as f64).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn apply(&self, x: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Result<Tensor> {
        let d = self.dim();
        if x.shape().last() != Some(&d) {
            return shape_err("normalize", format!("{:?} for width {}", x.shape(), d));
        }
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| f(v, self.mean[i % d], self.std[i % d]))
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    pub fn normalize(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(x, |v, m, s| (v - m) / s)
    }

    pub fn denormalize(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(x, |v, m, s| v * s + m)
    }
}
