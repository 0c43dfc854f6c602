use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{detect_foot_contact, ContactThresholds, MotionClip, Skeleton};
use crate::tensor::Tensor;

pub const DEFAULT_PAIRS: usize = 300;
const EIGEN_TOLERANCE: f64 = 1e-8;

fn rows(features: &Tensor) -> Result<(usize, usize)> {
    if features.rank() != 2 {
        return Err(Error::InvalidArgument(format!("features must be [M, d], got {:?}", features.shape())));
    }
    Ok((features.shape()[0], features.shape()[1]))
}

fn moments(features: &Tensor) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (m, d) = rows(features)?;
    if m < 2 {
        return Err(Error::InvalidArgument("need at least two feature rows".into()));
    }
    let x = DMatrix::from_row_slice(m, d, features.data());
    let mean = x.row_mean().transpose();
    let mut centered = x;
    for mut r in centered.row_iter_mut() {
        r -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (m as f64 - 1.0);
    Ok((mean, cov))
}

/// Square root of a symmetric PSD matrix. Negative eigenvalues within
/// round-off (relative to the spectrum) are clipped, larger ones rejected.
fn sqrt_psd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |s, v| s.max(v.abs()));
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -EIGEN_TOLERANCE * scale {
            return Err(Error::InvalidArgument(format!("matrix is not positive semidefinite (eigenvalue {})", v)));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

/// Fréchet distance between Gaussian fits of two feature sets.
pub fn fid(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (ma, ca) = moments(a)?;
    let (mb, cb) = moments(b)?;
    if ma.len() != mb.len() {
        return Err(Error::InvalidArgument("feature widths differ".into()));
    }
    let ra = sqrt_psd(&ca)?;
    let cross = sqrt_psd(&(&ra * &cb * &ra))?;
    let diff = ma - mb;
    let value = diff.dot(&diff) + ca.trace() + cb.trace() - 2.0 * cross.trace();
    Ok(value.max(0.0))
}

fn distance(f: &Tensor, i: usize, j: usize) -> f64 {
    let d = f.shape()[1];
    let (a, b) = (&f.data()[i * d..(i + 1) * d], &f.data()[j * d..(j + 1) * d]);
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// `pairs` index pairs over `pool`: disjoint when the pool is large enough,
/// otherwise independent draws of two distinct members.
fn draw_pairs<R: Rng + ?Sized>(pool: &[usize], pairs: usize, rng: &mut R) -> Vec<(usize, usize)> {
    if pool.len() < 2 {
        return Vec::new();
    }
    if pool.len() >= 2 * pairs {
        let mut p = pool.to_vec();
        p.shuffle(rng);
        return p.chunks_exact(2).take(pairs).map(|c| (c[0], c[1])).collect();
    }
    (0..pairs)
        .map(|_| {
            let i = rng.gen_range(0..pool.len());
            let mut j = rng.gen_range(0..pool.len() - 1);
            if j >= i {
                j += 1;
            }
            (pool[i], pool[j])
        })
        .collect()
}

/// Mean distance over random pairs of the whole set.
pub fn diversity<R: Rng + ?Sized>(features: &Tensor, pairs: usize, rng: &mut R) -> Result<f64> {
    let (m, _) = rows(features)?;
    let pool: Vec<usize> = (0..m).collect();
    let p = draw_pairs(&pool, pairs, rng);
    if p.is_empty() {
        return Err(Error::InvalidArgument("diversity needs at least two samples".into()));
    }
    Ok(p.iter().map(|&(i, j)| distance(features, i, j)).sum::<f64>() / p.len() as f64)
}

/// Within-condition diversity averaged over conditions.
pub fn multimodality<R: Rng + ?Sized>(features: &Tensor, labels: &[usize], pairs: usize, rng: &mut R) -> Result<f64> {
    let (m, _) = rows(features)?;
    if labels.len() != m {
        return Err(Error::InvalidArgument("one label per feature row required".into()));
    }
    let classes = labels.iter().copied().max().map_or(0, |c| c + 1);
    let mut total = 0.0;
    let mut used = 0;
    for c in 0..classes {
        let pool: Vec<usize> = (0..m).filter(|&i| labels[i] == c).collect();
        let p = draw_pairs(&pool, pairs, rng);
        if p.is_empty() {
            continue;
        }
        total += p.iter().map(|&(i, j)| distance(features, i, j)).sum::<f64>() / p.len() as f64;
        used += 1;
    }
    if used == 0 {
        return Err(Error::InvalidArgument("no condition has two samples".into()));
    }
    Ok(total / used as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhysicalMetrics {
    /// Mean over frames of the deepest joint below the floor (m).
    pub penetration: f64,
    /// Mean horizontal foot displacement over in-contact frames (m/frame).
    pub skate: f64,
}

pub fn physical_metrics(clips: &[MotionClip], skeleton: &Skeleton, floor: f64) -> Result<PhysicalMetrics> {
    let (mut pen, mut frames, mut skate, mut contacts) = (0.0, 0usize, 0.0, 0usize);
    for clip in clips {
        let pos = clip.positions(skeleton)?;
        for frame in &pos {
            let lowest = frame.iter().map(|p| p[2]).fold(f64::INFINITY, f64::min);
            pen += (floor - lowest).max(0.0);
            frames += 1;
        }
        let mask = detect_foot_contact(&pos, skeleton, ContactThresholds::default(), clip.fps)?;
        for i in 0..pos.len().saturating_sub(1) {
            for (k, &f) in skeleton.foot_joints.iter().enumerate() {
                if mask[i][k] == 1.0 {
                    let (a, b) = (pos[i][f], pos[i + 1][f]);
                    skate += ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
                    contacts += 1;
                }
            }
        }
    }
    Ok(PhysicalMetrics {
        penetration: if frames > 0 { pen / frames as f64 } else { 0.0 },
        skate: if contacts > 0 { skate / contacts as f64 } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fid_zero_on_identical_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Tensor::randn(&[200, 4], &mut rng);
        let b = Tensor::randn(&[150, 4], &mut rng).map(|v| 1.5 * v + 0.3);
        assert!(fid(&a, &a).unwrap() < 1e-8);
        assert!((fid(&a, &b).unwrap() - fid(&b, &a).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn identical_features_have_no_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = Tensor::ones(&[20, 3]);
        assert_eq!(diversity(&f, 5, &mut rng).unwrap(), 0.0);
        assert_eq!(multimodality(&f, &[0; 20], 5, &mut rng).unwrap(), 0.0);
    }

    #[test]
    fn rejects_indefinite_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(sqrt_psd(&m).is_err());
    }
}
