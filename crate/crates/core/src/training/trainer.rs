use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::config::TrainConfig;
use super::losses::{disc_loss, gen_adv_loss, r1_penalty, total_gen_loss, GeoContext};
use super::optim::{cosine_lr, ema_update, Adam};
use crate::error::{Error, Result};
use crate::motion::{Dataset, NormStats, Skeleton};
use crate::networks::{Discriminator, Generator, ParamStore};
use crate::schedule::Schedule;
use crate::tensor::{kernels, Graph, Tensor};

/// Everything needed to run the generator outside of training.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub schedule: Schedule,
    pub skeleton: Skeleton,
    pub stats: NormStats,
    pub fps: f64,
    pub class_names: Vec<String>,
}

impl Model {
    pub fn classes(&self) -> usize {
        self.class_names.len()
    }
    pub fn frames(&self) -> usize {
        self.generator.frames
    }
    pub fn frame_dim(&self) -> usize {
        self.generator.frame_dim
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub model: Model,
    pub gen: ParamStore,
    pub disc: ParamStore,
    pub ema: ParamStore,
    pub adam_g: Adam,
    pub adam_d: Adam,
    /// Completed epochs.
    pub epoch: usize,
    pub iteration: u64,
}

/// Epoch means of every logged quantity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub epoch: usize,
    pub disc_loss: f64,
    pub r1: f64,
    pub gen_adv: f64,
    pub recon: f64,
    pub pos: f64,
    pub foot: f64,
    pub vel: f64,
    pub lr_g: f64,
    pub lr_d: f64,
}

#[derive(Clone, Copy, Debug, Default)]
struct IterLosses {
    disc: f64,
    r1: f64,
    adv: f64,
    recon: f64,
    pos: f64,
    foot: f64,
    vel: f64,
}

/// Per-epoch generator: stream `epoch + 1` of the run seed, so resuming at an
/// epoch boundary replays exactly the same draws.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

impl TrainState {
    pub fn new(config: TrainConfig, dataset: &Dataset) -> Result<Self> {
        config.validate()?;
        let classes = dataset.classes();
        let generator = Generator::new(config.generator.clone(), dataset.frames, dataset.frame_dim(), classes)?;
        let discriminator =
            Discriminator::new(config.discriminator.clone(), dataset.frames, dataset.frame_dim(), classes)?;
        let mut rng = init_rng(config.seed);
        let gen = generator.init(&mut rng);
        let disc = discriminator.init(&mut rng);
        let model = Model {
            generator,
            discriminator,
            schedule: Schedule::new(config.steps, config.schedule)?,
            skeleton: dataset.skeleton.clone(),
            stats: dataset.stats.clone(),
            fps: dataset.fps,
            class_names: dataset.class_names.clone(),
        };
        Ok(Self {
            adam_g: Adam::new(&gen, config.adam_beta1, config.adam_beta2),
            adam_d: Adam::new(&disc, config.adam_beta1, config.adam_beta2),
            ema: gen.clone(),
            gen,
            disc,
            config,
            model,
            epoch: 0,
            iteration: 0,
        })
    }

    fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        if dataset.frames != self.model.frames()
            || dataset.frame_dim() != self.model.frame_dim()
            || dataset.classes() != self.model.classes()
        {
            return Err(Error::Config("dataset does not match the model layout".into()));
        }
        if dataset.is_empty() {
            return Err(Error::Config("cannot train on an empty dataset".into()));
        }
        Ok(())
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    /// One pass over the shuffled dataset in full minibatches (a single
    /// smaller batch when the set is smaller than `batch`).
    pub fn run_epoch(&mut self, dataset: &Dataset) -> Result<LossRow> {
        self.check_dataset(dataset)?;
        let epoch = self.epoch;
        let lr_g = cosine_lr(self.config.lr_g, epoch, self.config.epochs);
        let lr_d = cosine_lr(self.config.lr_d, epoch, self.config.epochs);
        let mut rng = epoch_rng(self.config.seed, epoch);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);
        let batch = self.config.batch.min(dataset.len());
        let mut sum = IterLosses::default();
        let mut count = 0usize;
        for chunk in order.chunks_exact(batch) {
            let (x0, labels) = dataset.batch(chunk)?;
            let l = self.iterate(&x0, &labels, &mut rng, lr_g, lr_d).map_err(|e| match e {
                Error::NonFinite(op) => Error::Divergence {
                    epoch,
                    iteration: self.iteration as usize,
                    detail: format!("non-finite value in {}", op),
                },
                other => other,
            })?;
            for (name, v) in [("disc", l.disc), ("r1", l.r1), ("adv", l.adv), ("geo", l.recon + l.pos + l.foot + l.vel)] {
                if !v.is_finite() {
                    return Err(Error::Divergence { epoch, iteration: self.iteration as usize, detail: format!("{} loss is {}", name, v) });
                }
            }
            sum.disc += l.disc;
            sum.r1 += l.r1;
            sum.adv += l.adv;
            sum.recon += l.recon;
            sum.pos += l.pos;
            sum.foot += l.foot;
            sum.vel += l.vel;
            count += 1;
            self.iteration += 1;
        }
        self.epoch += 1;
        let c = count.max(1) as f64;
        Ok(LossRow {
            epoch,
            disc_loss: sum.disc / c,
            r1: sum.r1 / c,
            gen_adv: sum.adv / c,
            recon: sum.recon / c,
            pos: sum.pos / c,
            foot: sum.foot / c,
            vel: sum.vel / c,
            lr_g,
            lr_d,
        })
    }

    fn iterate(&mut self, x0: &Tensor, labels: &[usize], rng: &mut ChaCha8Rng, lr_g: f64, lr_d: f64) -> Result<IterLosses> {
        let cfg = &self.config;
        let model = &self.model;
        let sched = &model.schedule;
        let b = labels.len();
        let steps: Vec<usize> = (0..b).map(|_| rng.gen_range(1..=sched.steps())).collect();
        let conds = drop_conditions(labels, cfg.cond_drop, rng);
        let (x_prev, x_t) = real_pairs(sched, x0, &steps, rng)?;
        let z = Tensor::randn(&[b, model.generator.config.z_dim], rng);
        let masks = model.generator.sample_masks(b, rng);
        let (c1, c2, sd) = posterior_columns(sched, &steps, &x0.shape()[1..])?;
        let noise = Tensor::randn(x0.shape(), rng);

        let g = Graph::new();
        let gp = self.gen.bind(&g);
        let dp = self.disc.bind(&g);
        let xt = g.leaf(x_t);
        let x0_hat = model.generator.forward(&gp, xt, g.leaf(z), &conds, &steps, Some(&masks))?;
        let fake = x0_hat
            .mul(g.leaf(c1))?
            .add(xt.mul(g.leaf(c2))?)?
            .add(g.leaf(kernels::binary(&sd, &noise, "mul", |s, n| s * n)?))?;

        // critic step on the real pair and the detached fake
        let xp = g.leaf(x_prev);
        let real_scores = model.discriminator.forward(&dp, xp, xt, &conds, &steps)?;
        let fake_scores = model.discriminator.forward(&dp, fake.detach(), xt, &conds, &steps)?;
        let ld = disc_loss(real_scores, fake_scores)?;
        let r1 = r1_penalty(real_scores, xp, cfg.r1_gamma)?;
        let d_total = ld.add(r1)?;
        let d_grads: Vec<Tensor> = g.grad(d_total, &dp)?.iter().map(|v| v.value()).collect();
        let disc_value = ld.item()?;
        let r1_value = r1.item()?;
        self.adam_d.update(&mut self.disc, &d_grads, lr_d)?;

        // generator step against the updated critic
        let dp2 = self.disc.bind(&g);
        let adv = gen_adv_loss(model.discriminator.forward(&dp2, fake, xt, &conds, &steps)?)?;
        let geo_ctx = GeoContext::new(model.skeleton.clone(), model.stats.clone());
        let geo = geo_ctx.losses(x0, x0_hat)?;
        let g_total = total_gen_loss(adv, &geo, cfg.geo_weight, cfg.geo_lambda)?;
        let g_grads: Vec<Tensor> = g.grad(g_total, &gp)?.iter().map(|v| v.value()).collect();
        self.adam_g.update(&mut self.gen, &g_grads, lr_g)?;
        ema_update(&mut self.ema, &self.gen, cfg.ema_decay)?;
        Ok(IterLosses {
            disc: disc_value,
            r1: r1_value,
            adv: adv.item()?,
            recon: geo.recon.item()?,
            pos: geo.pos.item()?,
            foot: geo.foot.item()?,
            vel: geo.vel.item()?,
        })
    }
}

/// Replace each label by the null condition with probability `rate`.
pub fn drop_conditions<R: Rng + ?Sized>(labels: &[usize], rate: f64, rng: &mut R) -> Vec<Option<usize>> {
    labels.iter().map(|&l| if rng.gen::<f64>() < rate { None } else { Some(l) }).collect()
}

/// Real `(x_{t-1}, x_t)` blocks for per-item steps.
pub fn real_pairs<R: Rng + ?Sized>(sched: &Schedule, x0: &Tensor, steps: &[usize], rng: &mut R) -> Result<(Tensor, Tensor)> {
    let mut prev = Vec::with_capacity(steps.len());
    let mut cur = Vec::with_capacity(steps.len());
    for (i, &t) in steps.iter().enumerate() {
        let (p, c) = sched.sample_real_pair(&x0.index_first(i)?, t, rng)?;
        prev.push(p);
        cur.push(c);
    }
    Ok((Tensor::stack(&prev)?, Tensor::stack(&cur)?))
}

/// Broadcastable `[B, 1, ...]` posterior coefficients and noise scales for
/// diffusion steps `t` (loop index `t - 1`).
pub fn posterior_columns(sched: &Schedule, steps: &[usize], item_shape: &[usize]) -> Result<(Tensor, Tensor, Tensor)> {
    let mut shape = vec![steps.len()];
    shape.extend(std::iter::repeat(1).take(item_shape.len()));
    let mut c1 = Vec::with_capacity(steps.len());
    let mut c2 = Vec::with_capacity(steps.len());
    let mut sd = Vec::with_capacity(steps.len());
    for &t in steps {
        let c = sched.posterior_coeffs(t)?;
        c1.push(c.coef1);
        c2.push(c.coef2);
        sd.push(if t == 1 { 0.0 } else { (0.5 * c.log_variance).exp() });
    }
    Ok((Tensor::new(shape.clone(), c1)?, Tensor::new(shape.clone(), c2)?, Tensor::new(shape, sd)?))
}

/// Train from scratch, calling `on_epoch` after every epoch.
pub fn train_with(
    dataset: &Dataset,
    state: &mut TrainState,
    mut on_epoch: impl FnMut(&TrainState, &LossRow) -> Result<()>,
) -> Result<Vec<LossRow>> {
    let mut rows = Vec::new();
    while !state.is_finished() {
        let row = state.run_epoch(dataset)?;
        on_epoch(state, &row)?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn train(dataset: &Dataset, config: TrainConfig) -> Result<(TrainState, Vec<LossRow>)> {
    let mut state = TrainState::new(config, dataset)?;
    let rows = train_with(dataset, &mut state, |_, _| Ok(()))?;
    Ok((state, rows))
}

pub const LOSS_CSV_HEADER: &str = "epoch,disc_loss,r1,gen_adv,recon,pos,foot,vel,lr_G,lr_D";

pub fn loss_csv(rows: &[LossRow]) -> String {
    let mut out = String::from(LOSS_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
            r.epoch, r.disc_loss, r.r1, r.gen_adv, r.recon, r.pos, r.foot, r.vel, r.lr_g, r.lr_d
        ));
    }
    out
}

pub fn write_loss_csv(path: impl AsRef<Path>, rows: &[LossRow]) -> Result<()> {
    std::fs::write(path, loss_csv(rows))?;
    Ok(())
}
