use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::extractor::{accuracy, argmax_rows, FeatureExtractor};
use super::metrics::{diversity, fid, multimodality, physical_metrics, DEFAULT_PAIRS};
use crate::error::{Error, Result};
use crate::motion::{encode, Dataset, MotionClip};
use crate::networks::ParamStore;
use crate::sampler::{Guidance, Sampler, DEFAULT_GUIDANCE};
use crate::tensor::Tensor;
use crate::training::{Model, TrainState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub samples_per_class: usize,
    pub guidance: f64,
    pub use_ema: bool,
    pub pairs: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { samples_per_class: 50, guidance: DEFAULT_GUIDANCE, use_ema: true, pairs: DEFAULT_PAIRS, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_hash: String,
    pub checkpoint_hash: String,
    pub steps: usize,
    pub fid: f64,
    pub div: f64,
    pub mm: f64,
    pub acc: f64,
    pub penetration: f64,
    pub skate: f64,
    pub runtime_ms_per_frame: f64,
    pub per_step_ms: Vec<f64>,
    pub seeds: Vec<u64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Generated clips for every class, sampled one class at a time. `raw` holds
/// the re-encoded decoded clips, so every channel is consistent with the
/// rotations and root path.
pub struct Generated {
    pub raw: Tensor,
    pub labels: Vec<usize>,
    pub clips: Vec<MotionClip>,
    pub ms_per_frame: f64,
    pub per_step_ms: Vec<f64>,
}

pub fn generate(model: &Model, params: &ParamStore, per_class: usize, guidance: f64, seed: u64) -> Result<Generated> {
    if per_class == 0 {
        return Err(Error::InvalidArgument("need at least one sample per class".into()));
    }
    let sampler = Sampler::new(model, params);
    let mode = Guidance::from_scale(guidance)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut blocks, mut labels, mut clips) = (Vec::new(), Vec::new(), Vec::new());
    let mut per_step = vec![0.0; model.schedule.steps()];
    let mut ms = 0.0;
    for c in 0..model.classes() {
        let req = vec![Some(c); per_class];
        let out = sampler.sample(&req, mode, &mut rng)?;
        for clip in &out.clips {
            blocks.push(encode(clip, &model.skeleton)?);
        }
        labels.extend(std::iter::repeat(c).take(per_class));
        clips.extend(out.clips);
        ms += out.timing.ms_per_frame;
        for (a, b) in per_step.iter_mut().zip(&out.timing.per_step_ms) {
            *a += b;
        }
    }
    let k = model.classes() as f64;
    Ok(Generated {
        raw: Tensor::stack(&blocks)?,
        labels,
        clips,
        ms_per_frame: ms / k,
        per_step_ms: per_step.into_iter().map(|v| v / k).collect(),
    })
}

/// FID against `real`, DIV, MM and ACC of generated clips, physical
/// plausibility and runtime, for the sampled parameter set of `state`.
pub fn evaluate(state: &TrainState, real: &Dataset, extractor: &FeatureExtractor, cfg: &EvalConfig) -> Result<MetricsReport> {
    let params = if cfg.use_ema { &state.ema } else { &state.gen };
    let config_hash = sha256_hex(serde_json::to_string(&state.config)?.as_bytes());
    evaluate_params(&state.model, params, config_hash, real, extractor, cfg)
}

pub fn evaluate_params(
    model: &Model,
    params: &ParamStore,
    config_hash: String,
    real: &Dataset,
    extractor: &FeatureExtractor,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    let gen = generate(model, params, cfg.samples_per_class, cfg.guidance, cfg.seed)?;
    let (feat, logits) = extractor.features_raw(&gen.raw)?;
    let (real_feat, _) = extractor.dataset_features(real)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let phys = physical_metrics(&gen.clips, &model.skeleton, 0.0)?;
    Ok(MetricsReport {
        config_hash,
        checkpoint_hash: params.fingerprint(),
        steps: model.schedule.steps(),
        fid: fid(&feat, &real_feat)?,
        div: diversity(&feat, cfg.pairs, &mut rng)?,
        mm: multimodality(&feat, &gen.labels, cfg.pairs, &mut rng)?,
        acc: accuracy(&argmax_rows(&logits), &gen.labels)?,
        penetration: phys.penetration,
        skate: phys.skate,
        runtime_ms_per_frame: gen.ms_per_frame,
        per_step_ms: gen.per_step_ms,
        seeds: vec![cfg.seed],
    })
}
