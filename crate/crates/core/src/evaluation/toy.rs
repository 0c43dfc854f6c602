//! A 1D two-delta conditional GAN denoiser, small enough to train in
//! seconds, used to show that a few-step generator captures a multimodal
//! denoising distribution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::posterior::{gaussianity_score, grid_true_posterior, GridPosterior, Prior, GRID_POINTS};
use crate::error::{Error, Result};
use crate::motion::{BipedSpec, NormStats, Skeleton};
use crate::networks::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, ParamStore};
use crate::sampler::{Guidance, Sampler};
use crate::schedule::{Schedule, ScheduleKind};
use crate::tensor::{kernels, Graph, Tensor};
use crate::training::{disc_loss, gen_adv_loss, posterior_columns, r1_penalty, real_pairs, Adam, Model};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub steps: usize,
    pub iterations: usize,
    pub batch: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub r1_gamma: f64,
    pub samples: usize,
    /// Draws for the learned `x_{T-1} | x_T = 0` histogram.
    pub posterior_samples: usize,
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            steps: 2,
            iterations: 1500,
            batch: 64,
            lr_g: 1e-3,
            lr_d: 1e-3,
            r1_gamma: 0.05,
            samples: 2000,
            posterior_samples: 50000,
            seed: 0,
            generator: GeneratorConfig { hidden: 32, layers: 1, heads: 2, ffn: 32, z_dim: 8, dropout: 0.0 },
            discriminator: DiscriminatorConfig { hidden: 64, groups: 8, time_dim: 16 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyReport {
    /// Fraction of final samples within 0.5 of each atom.
    pub mass_negative: f64,
    pub mass_positive: f64,
    /// Gaussianity of the learned `x_{T-1} | x_T = 0` histogram.
    pub learned_gaussianity: f64,
    /// Same quantity for the exact posterior.
    pub oracle_gaussianity: f64,
    /// Histogram score of a moment-matched Gaussian sampler with the same
    /// number of draws.
    pub gaussian_baseline: f64,
    pub samples: Vec<f64>,
}

impl ToyReport {
    pub fn is_bimodal(&self, min_mass: f64) -> bool {
        self.mass_negative >= min_mass && self.mass_positive >= min_mass
    }
}

pub struct ToyModel {
    pub model: Model,
    pub gen: ParamStore,
}

fn toy_model(cfg: &ToyConfig) -> Result<(Model, ParamStore, ParamStore)> {
    let generator = Generator::new(cfg.generator.clone(), 1, 1, 1)?;
    let discriminator = Discriminator::new(cfg.discriminator.clone(), 1, 1, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gen = generator.init(&mut rng);
    let disc = discriminator.init(&mut rng);
    let model = Model {
        generator,
        discriminator,
        schedule: Schedule::new(cfg.steps, ScheduleKind::Cosine)?,
        // only the generator and schedule are used; the rest keeps the
        // sampler's bookkeeping happy
        skeleton: Skeleton::biped(&BipedSpec::default())?,
        stats: NormStats::identity(1),
        fps: 1.0,
        class_names: vec!["toy".into()],
    };
    Ok((model, gen, disc))
}

/// Adversarial training on `x₀ ∈ {−1, +1}` with equal weights.
pub fn train_toy(cfg: &ToyConfig) -> Result<ToyModel> {
    if cfg.iterations == 0 || cfg.batch == 0 {
        return Err(Error::Config("toy training needs iterations and batch > 0".into()));
    }
    let (model, mut gen, mut disc) = toy_model(cfg)?;
    let mut adam_g = Adam::new(&gen, 0.5, 0.9);
    let mut adam_d = Adam::new(&disc, 0.5, 0.9);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let sched = &model.schedule;
    let b = cfg.batch;
    let conds = vec![Some(0); b];
    for it in 0..cfg.iterations {
        let x0 = Tensor::from_fn(&[b, 1, 1], |_| if rng.gen::<bool>() { 1.0 } else { -1.0 });
        let steps: Vec<usize> = (0..b).map(|_| rng.gen_range(1..=sched.steps())).collect();
        let (x_prev, x_t) = real_pairs(sched, &x0, &steps, &mut rng)?;
        let z = Tensor::randn(&[b, model.generator.config.z_dim], &mut rng);
        let (c1, c2, sd) = posterior_columns(sched, &steps, &[1, 1])?;
        let noise = Tensor::randn(&[b, 1, 1], &mut rng);

        let g = Graph::new();
        let gp = gen.bind(&g);
        let dp = disc.bind(&g);
        let xt = g.leaf(x_t);
        let x0_hat = model.generator.forward(&gp, xt, g.leaf(z), &conds, &steps, None)?;
        let fake = x0_hat
            .mul(g.leaf(c1))?
            .add(xt.mul(g.leaf(c2))?)?
            .add(g.leaf(kernels::binary(&sd, &noise, "mul", |s, n| s * n)?))?;
        let xp = g.leaf(x_prev);
        let real_scores = model.discriminator.forward(&dp, xp, xt, &conds, &steps)?;
        let fake_scores = model.discriminator.forward(&dp, fake.detach(), xt, &conds, &steps)?;
        let d_total = disc_loss(real_scores, fake_scores)?.add(r1_penalty(real_scores, xp, cfg.r1_gamma)?)?;
        let d_grads: Vec<Tensor> = g.grad(d_total, &dp)?.iter().map(|v| v.value()).collect();
        adam_d.update(&mut disc, &d_grads, cfg.lr_d)?;

        let dp2 = disc.bind(&g);
        let adv = gen_adv_loss(model.discriminator.forward(&dp2, fake, xt, &conds, &steps)?)?;
        let g_grads: Vec<Tensor> = g.grad(adv, &gp)?.iter().map(|v| v.value()).collect();
        adam_g.update(&mut gen, &g_grads, cfg.lr_g)?;
        if !gen.all_finite() || !disc.all_finite() {
            return Err(Error::Divergence { epoch: 0, iteration: it, detail: "toy parameters became non-finite".into() });
        }
    }
    Ok(ToyModel { model, gen })
}

/// Histogram resolution for the learned posterior; the range is the
/// oracle's grid.
const HIST_BINS: usize = 60;

pub fn evaluate_toy(toy: &ToyModel, cfg: &ToyConfig) -> Result<ToyReport> {
    let sampler = Sampler::new(&toy.model, &toy.gen);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let labels = vec![Some(0); cfg.samples];
    let (x0, _) = sampler.sample_tensor(&labels, Guidance::Conditional, &mut rng)?;
    let samples = x0.data().to_vec();
    let n = samples.len().max(1) as f64;
    let near = |c: f64| samples.iter().filter(|&&x| (x - c).abs() < 0.5).count() as f64 / n;

    // learned x_{T-1} given x_T = 0 versus the exact posterior
    let sched = &toy.model.schedule;
    let t = sched.steps();
    let m = cfg.posterior_samples.max(1);
    let xt = Tensor::zeros(&[m, 1, 1]);
    let z = Tensor::randn(&[m, toy.model.generator.config.z_dim], &mut rng);
    let x0_hat = sampler.guided(&xt, &z, &vec![Some(0); m], t, Guidance::Conditional)?;
    let prev = sched.sample_posterior(&x0_hat, &xt, t - 1, &mut rng)?;
    let oracle = grid_true_posterior(&Prior::two_delta(), sched, t, t - 1, 0.0, GRID_POINTS)?;
    let (lo, hi) = (oracle.x[0], oracle.x[oracle.x.len() - 1]);
    let hist = GridPosterior::from_samples(prev.data(), lo, hi, HIST_BINS)?;
    let (mean, sd) = (oracle.mean(), oracle.variance().sqrt());
    let baseline: Vec<f64> = Tensor::randn(&[m], &mut rng).data().iter().map(|e| mean + sd * e).collect();
    let baseline = GridPosterior::from_samples(&baseline, lo, hi, HIST_BINS)?;
    Ok(ToyReport {
        mass_negative: near(-1.0),
        mass_positive: near(1.0),
        learned_gaussianity: gaussianity_score(&hist),
        oracle_gaussianity: gaussianity_score(&oracle),
        gaussian_baseline: gaussianity_score(&baseline),
        samples,
    })
}
