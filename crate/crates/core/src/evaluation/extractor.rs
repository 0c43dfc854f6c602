use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{Dataset, NormStats};
use crate::networks::ParamStore;
use crate::tensor::nn::{cross_entropy, linear};
use crate::tensor::{Graph, Tensor, Var};
use crate::training::Adam;

pub const FEATURE_DIM: usize = 32;
const FRAME_WIDTH: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self { epochs: 40, batch: 32, lr: 2e-3 }
    }
}

/// Pooled per-frame classifier: frame MLP, mean and mean-square pooling
/// over time, a 32-wide feature layer, then class logits.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    pub params: ParamStore,
    pub stats: NormStats,
    pub frames: usize,
    pub frame_dim: usize,
    pub classes: usize,
    /// Multiplier on the feature layer, set after training so real features
    /// have unit mean variance per dimension.
    pub feature_scale: f64,
}

impl FeatureExtractor {
    pub fn init(stats: NormStats, frames: usize, frame_dim: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        for (name, i, o) in [("frame", frame_dim, FRAME_WIDTH), ("feat", 2 * FRAME_WIDTH, FEATURE_DIM), ("head", FEATURE_DIM, classes)] {
            p.push_lecun(&format!("{}.w", name), i, o, &mut rng);
            p.push(format!("{}.b", name), Tensor::zeros(&[o]));
        }
        Self { params: p, stats, frames, frame_dim, classes, feature_scale: 1.0 }
    }

    fn forward<'g>(&self, p: &[Var<'g>], x: Var<'g>) -> Result<(Var<'g>, Var<'g>)> {
        let h = linear(x, p[0], p[1])?.selu()?;
        let pooled = Var::concat(&[h.mean_axis(1)?, h.square()?.mean_axis(1)?], 2)?;
        let b = x.shape()[0];
        let feat = linear(pooled.reshape(&[b, 2 * FRAME_WIDTH])?, p[2], p[3])?.selu()?;
        let logits = linear(feat, p[4], p[5])?;
        Ok((feat, logits))
    }

    /// Features `[B, 32]` and logits `[B, A]` of raw frame blocks `[B, N, D_f]`.
    pub fn features_raw(&self, raw: &Tensor) -> Result<(Tensor, Tensor)> {
        if raw.rank() != 3 || raw.shape()[1..] != [self.frames, self.frame_dim] {
            return Err(Error::InvalidArgument(format!("extractor expects [B, {}, {}], got {:?}", self.frames, self.frame_dim, raw.shape())));
        }
        let g = Graph::new();
        let p = self.params.bind(&g);
        let (f, l) = self.forward(&p, g.leaf(self.stats.normalize(raw)?))?;
        Ok((f.value().map(|v| v * self.feature_scale), l.value()))
    }

    pub fn dataset_features(&self, data: &Dataset) -> Result<(Tensor, Tensor)> {
        if data.is_empty() {
            return Ok((Tensor::zeros(&[0, FEATURE_DIM]), Tensor::zeros(&[0, self.classes])));
        }
        let raw = Tensor::stack(&data.samples.iter().map(|s| s.data.clone()).collect::<Vec<_>>())?;
        self.features_raw(&raw)
    }

    pub fn predict(&self, data: &Dataset) -> Result<Vec<usize>> {
        let (_, logits) = self.dataset_features(data)?;
        Ok(argmax_rows(&logits))
    }
}

/// Mean per-dimension sample variance of `[M, d]` features.
fn feature_variance(f: &Tensor) -> f64 {
    let (m, d) = (f.shape()[0], f.shape()[1]);
    if m < 2 {
        return 0.0;
    }
    (0..d)
        .map(|j| {
            let col = || (0..m).map(|i| f.data()[i * d + j]);
            let mu = col().sum::<f64>() / m as f64;
            col().map(|v| (v - mu).powi(2)).sum::<f64>() / (m - 1) as f64
        })
        .sum::<f64>()
        / d as f64
}

pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let c = *logits.shape().last().unwrap_or(&1);
    logits
        .data()
        .chunks(c.max(1))
        .map(|row| row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0))
        .collect()
}

/// Fraction of predictions equal to the requested labels.
pub fn accuracy(predicted: &[usize], labels: &[usize]) -> Result<f64> {
    if predicted.len() != labels.len() || labels.is_empty() {
        return Err(Error::InvalidArgument("accuracy needs equally sized, non-empty label lists".into()));
    }
    Ok(predicted.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64)
}

/// Fit the extractor with Adam on cross entropy.
pub fn train_feature_extractor(data: &Dataset, config: &ExtractorConfig, seed: u64) -> Result<FeatureExtractor> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot train an extractor on no clips".into()));
    }
    let mut ex = FeatureExtractor::init(data.stats.clone(), data.frames, data.frame_dim(), data.classes(), seed);
    let mut adam = Adam::new(&ex.params, 0.9, 0.999);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let batch = config.batch.min(data.len()).max(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let (x, labels) = data.batch(chunk)?;
            let g = Graph::new();
            let p = ex.params.bind(&g);
            let (_, logits) = ex.forward(&p, g.leaf(x))?;
            let loss = cross_entropy(logits, &labels)?;
            let grads: Vec<Tensor> = g.grad(loss, &p)?.iter().map(Var::value).collect();
            adam.update(&mut ex.params, &grads, config.lr)?;
        }
    }
    let (feat, _) = ex.dataset_features(data)?;
    let spread = feature_variance(&feat);
    if spread > 0.0 {
        ex.feature_scale = (1.0 / spread).sqrt();
    }
    Ok(ex)
}
