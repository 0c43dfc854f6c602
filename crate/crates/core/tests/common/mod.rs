//! Gradient-check suites shared by the integration tests and the
//! acceptance runner.
#![allow(dead_code)]

use motion_ddgan::networks::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, ParamStore};
use motion_ddgan::tensor::nn::{dropout, group_norm, layer_norm, multi_head_self_attention, scaled_dot_attention};
use motion_ddgan::tensor::{grad_check, Graph, Tensor, Var};
use motion_ddgan::motion::{synth_dataset, Dataset, SynthConfig};
use motion_ddgan::sampler::{Guidance, Sampler};
use motion_ddgan::training::{r1_penalty, Model, TrainConfig, TrainState};
use motion_ddgan::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;

pub type ScalarFn = Box<dyn for<'g> Fn(&'g Graph, Var<'g>) -> Result<Var<'g>>>;

pub fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Contract a tensor against fixed uneven weights so every entry of the
/// gradient differs.
pub fn contract<'g>(y: Var<'g>) -> Result<Var<'g>> {
    let w = Tensor::from_fn(&y.shape(), |i| (i as f64 * 0.37).sin() + 0.5);
    y.mul(y.graph().leaf(w))?.sum()
}

fn case(name: &str, x: Tensor, f: ScalarFn) -> (String, Tensor, ScalarFn) {
    (name.to_string(), x, f)
}

/// One scalar function per differentiable op, each with inputs in [-2, 2]
/// (shifted to positive values where the domain requires it).
pub fn op_cases() -> Vec<(String, Tensor, ScalarFn)> {
    let x = uniform(&[3, 4], -2.0, 2.0, 1);
    let pos = uniform(&[3, 4], 0.5, 2.0, 2);
    let other = uniform(&[3, 4], -2.0, 2.0, 3);
    let row = uniform(&[4], -2.0, 2.0, 4);
    let mat = uniform(&[4, 5], -2.0, 2.0, 5);
    let seq = uniform(&[2, 5, 4], -2.0, 2.0, 6);
    let mask = Tensor::from_fn(&[3, 4], |i| if i % 3 == 1 { 0.0 } else { 1.0 });
    let o1 = other.clone();
    let o2 = other.clone();
    let o3 = other.clone();
    let o4 = other.clone();
    let o5 = other.clone();
    let (o6, o7) = (other.clone(), other.clone());
    let r1 = row.clone();
    let m1 = mat.clone();
    let m2 = mat.clone();
    let x2 = x.clone();
    let s1 = seq.clone();
    let s2 = seq.clone();
    let qkv = uniform(&[4, 12], -1.0, 1.0, 7);
    let wo = uniform(&[4, 4], -1.0, 1.0, 8);
    vec![
        case("add", x.clone(), Box::new(move |g, v| contract(v.add(g.leaf(o1.clone()))?))),
        case("add_broadcast", x.clone(), Box::new(move |g, v| contract(g.leaf(r1.clone()).add(v)?))),
        case("sub", x.clone(), Box::new(move |g, v| contract(g.leaf(o2.clone()).sub(v)?))),
        case("mul", x.clone(), Box::new(move |g, v| contract(v.mul(g.leaf(o3.clone()))?))),
        case("mul_self", x.clone(), Box::new(|_, v| contract(v.mul(v)?))),
        case("div", pos.clone(), Box::new(move |g, v| contract(g.leaf(o4.clone()).div(v)?))),
        case("scale", x.clone(), Box::new(|_, v| contract(v.scale(-1.7)?))),
        case("neg", x.clone(), Box::new(|_, v| contract(v.neg()?))),
        case("shift", x.clone(), Box::new(|_, v| contract(v.shift(0.3)?.square()?))),
        case("matmul_left", x.clone(), Box::new(move |g, v| contract(v.matmul(g.leaf(m1.clone()))?))),
        case("matmul_right", mat.clone(), Box::new(move |g, v| contract(g.leaf(x2.clone()).matmul(v)?))),
        case("matmul_t", mat.clone(), Box::new(move |_, v| contract(v.matmul_t(v, true, false)?))),
        case("matmul_batched", seq.clone(), Box::new(move |g, v| contract(v.matmul(g.leaf(m2.clone()))?))),
        case(
            "concat",
            x.clone(),
            Box::new(move |g, v| contract(Var::concat(&[v, g.leaf(o5.clone()), v], 1)?)),
        ),
        case("slice", x.clone(), Box::new(|_, v| contract(v.slice(1, 1, 2)?))),
        case("pad", x.clone(), Box::new(|_, v| contract(v.pad(1, 2, 7)?))),
        case("reshape", x.clone(), Box::new(|_, v| contract(v.reshape(&[2, 6])?))),
        case("sum", x.clone(), Box::new(|_, v| v.sum()?.square())),
        case("sum_axis", x.clone(), Box::new(|_, v| contract(v.sum_axis(0)?))),
        case("mean", x.clone(), Box::new(|_, v| v.mean()?.square())),
        case("mean_axis", x.clone(), Box::new(|_, v| contract(v.mean_axis(1)?))),
        case("sum_to", x.clone(), Box::new(|_, v| contract(v.sum_to(&[4])?))),
        case("broadcast_to", row.clone(), Box::new(|_, v| contract(v.broadcast_to(&[3, 4])?))),
        case("square", x.clone(), Box::new(|_, v| contract(v.square()?))),
        case("sqrt", pos.clone(), Box::new(|_, v| contract(v.sqrt()?))),
        case("exp", x.clone(), Box::new(|_, v| contract(v.exp()?))),
        case("log", pos.clone(), Box::new(|_, v| contract(v.log()?))),
        case("softplus", x.clone(), Box::new(|_, v| contract(v.softplus()?))),
        case("sigmoid", x.clone(), Box::new(|_, v| contract(v.sigmoid()?))),
        case("selu", x.clone(), Box::new(|_, v| contract(v.selu()?))),
        case("softmax", x.clone(), Box::new(|_, v| contract(v.softmax()?))),
        case("log_softmax", x.clone(), Box::new(|_, v| contract(v.log_softmax()?))),
        case(
            "layer_norm",
            x.clone(),
            Box::new(move |g, v| {
                let gamma = g.leaf(Tensor::from_fn(&[4], |i| 1.0 + 0.1 * i as f64));
                let beta = g.leaf(Tensor::from_fn(&[4], |i| 0.05 * i as f64));
                contract(layer_norm(v, gamma, beta)?)
            }),
        ),
        case(
            "group_norm",
            uniform(&[3, 8], -2.0, 2.0, 9),
            Box::new(move |g, v| {
                let gamma = g.leaf(Tensor::from_fn(&[8], |i| 1.0 - 0.05 * i as f64));
                let beta = g.leaf(Tensor::from_fn(&[8], |i| 0.1 * i as f64));
                contract(group_norm(v, 2, gamma, beta)?)
            }),
        ),
        case("dropout", x.clone(), Box::new(move |_, v| contract(dropout(v, &mask, 0.75)?))),
        case(
            "attention",
            seq.clone(),
            Box::new(move |g, v| contract(scaled_dot_attention(v, g.leaf(s1.clone()), g.leaf(s2.clone()))?)),
        ),
        case(
            "multi_head_attention",
            seq,
            Box::new(move |g, v| {
                let b3 = g.leaf(Tensor::zeros(&[12]));
                let b = g.leaf(Tensor::zeros(&[4]));
                contract(multi_head_self_attention(v, g.leaf(qkv.clone()), b3, g.leaf(wo.clone()), b, 2)?)
            }),
        ),
        case("reuse", other, Box::new(move |g, v| contract(v.mul(g.leaf(o6.clone()))?.add(v.mul(g.leaf(o7.clone()))?)?))),
    ]
}

/// Worst relative error per op.
pub fn check_ops() -> Result<Vec<(String, f64)>> {
    op_cases().into_iter().map(|(name, x, f)| Ok((name, grad_check(f, &x, EPS)?))).collect()
}

/// Desk-scale network shapes.
pub const FRAMES: usize = 16;
pub const FRAME_DIM: usize = 85;
pub const CLASSES: usize = 6;

pub fn desk_generator() -> Generator {
    let cfg = GeneratorConfig { hidden: 64, layers: 2, heads: 4, ffn: 64, z_dim: 32, dropout: 0.1 };
    Generator::new(cfg, FRAMES, FRAME_DIM, CLASSES).unwrap()
}

pub fn desk_discriminator() -> Discriminator {
    let cfg = DiscriminatorConfig { hidden: 128, groups: 8, time_dim: 32 };
    Discriminator::new(cfg, FRAMES, FRAME_DIM, CLASSES).unwrap()
}

/// Check the gradient with respect to the first row of parameter `i`, the
/// rest of the tensor held fixed.
pub fn param_row_check<F>(store: &ParamStore, i: usize, f: F) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let t = store.get(i);
    let shape = t.shape().to_vec();
    let cols = *shape.last().unwrap();
    let rows = t.numel() / cols;
    let head = Tensor::new(vec![cols], t.data()[..cols].to_vec())?;
    let rest = if rows > 1 { Some(Tensor::new(vec![rows - 1, cols], t.data()[cols..].to_vec())?) } else { None };
    grad_check(
        |g, x| {
            let mut vars = store.bind(g);
            vars[i] = match &rest {
                None => x.reshape(&shape)?,
                Some(r) => Var::concat(&[x.reshape(&[1, cols])?, g.leaf(r.clone())], 0)?.reshape(&shape)?,
            };
            f(g, &vars)
        },
        &head,
        EPS,
    )
}

pub struct NetInputs {
    pub x_t: Tensor,
    pub x_prev: Tensor,
    pub z: Tensor,
    pub labels: Vec<Option<usize>>,
    pub steps: Vec<usize>,
}

pub fn net_inputs(z_dim: usize, seed: u64) -> NetInputs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    NetInputs {
        x_t: Tensor::randn(&[2, FRAMES, FRAME_DIM], &mut rng),
        x_prev: Tensor::randn(&[2, FRAMES, FRAME_DIM], &mut rng),
        z: Tensor::randn(&[2, z_dim], &mut rng),
        labels: vec![Some(2), None],
        steps: vec![3, 7],
    }
}

/// Generator: every parameter (first row), the noisy input and the latent,
/// with a fixed dropout mask. Returns the worst relative error.
pub fn check_generator() -> Result<f64> {
    let gen = desk_generator();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let store = gen.init(&mut rng);
    let masks = gen.sample_masks(2, &mut rng);
    let inp = net_inputs(gen.config.z_dim, 12);
    let mut worst: f64 = 0.0;
    for i in 0..store.len() {
        let e = param_row_check(&store, i, |g, p| {
            contract(gen.forward(p, g.leaf(inp.x_t.clone()), g.leaf(inp.z.clone()), &inp.labels, &inp.steps, Some(&masks))?)
        })?;
        worst = worst.max(e);
    }
    let ex = grad_check(
        |g, x| {
            let p = store.bind(g);
            contract(gen.forward(&p, x, g.leaf(inp.z.clone()), &inp.labels, &inp.steps, Some(&masks))?)
        },
        &inp.x_t,
        EPS,
    )?;
    let ez = grad_check(
        |g, z| {
            let p = store.bind(g);
            contract(gen.forward(&p, g.leaf(inp.x_t.clone()), z, &inp.labels, &inp.steps, None)?)
        },
        &inp.z,
        EPS,
    )?;
    Ok(worst.max(ex).max(ez))
}

/// Discriminator: every parameter (first row) and both motion inputs.
pub fn check_discriminator() -> Result<f64> {
    let disc = desk_discriminator();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let store = disc.init(&mut rng);
    let inp = net_inputs(8, 22);
    let mut worst: f64 = 0.0;
    for i in 0..store.len() {
        let e = param_row_check(&store, i, |g, p| {
            contract(disc.forward(p, g.leaf(inp.x_prev.clone()), g.leaf(inp.x_t.clone()), &inp.labels, &inp.steps)?)
        })?;
        worst = worst.max(e);
    }
    let ep = grad_check(
        |g, x| {
            let p = store.bind(g);
            contract(disc.forward(&p, x, g.leaf(inp.x_t.clone()), &inp.labels, &inp.steps)?)
        },
        &inp.x_prev,
        EPS,
    )?;
    Ok(worst.max(ep))
}

/// R1 double-backward: gradient of `γ/2·mean‖∂D/∂x_prev‖²` with respect to
/// every critic parameter row against central differences.
pub fn check_r1(gamma: f64) -> Result<f64> {
    let disc = desk_discriminator();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let store = disc.init(&mut rng);
    let inp = net_inputs(8, 32);
    let mut worst: f64 = 0.0;
    for i in 0..store.len() {
        let e = param_row_check(&store, i, |g, p| {
            let xp = g.leaf(inp.x_prev.clone());
            let scores = disc.forward(p, xp, g.leaf(inp.x_t.clone()), &inp.labels, &inp.steps)?;
            r1_penalty(scores, xp, gamma)
        })?;
        worst = worst.max(e);
    }
    Ok(worst)
}

use motion_ddgan::evaluation::{grid_true_posterior, Prior, GRID_POINTS};
use motion_ddgan::schedule::{Schedule, ScheduleKind};

/// Largest KL between the grid-Bayes posterior `q(x_{t-1} | x_t)` under a
/// Gaussian data prior and the Gaussian implied by the posterior
/// coefficients, over every `t` of `T ∈ {4, 10}`.
pub fn posterior_coeff_oracle_kl() -> Result<f64> {
    let (m, s) = (0.3, 0.8);
    let prior = Prior::Gaussian { mean: m, std: s };
    let mut worst: f64 = 0.0;
    for kind in [ScheduleKind::Cosine, ScheduleKind::Linear] {
        for steps in [4, 10] {
            let sched = Schedule::new(steps, kind)?;
            for t in 1..=steps {
                for x_t in [-1.3, 0.4, 2.0] {
                    let ab = sched.alphabar(t);
                    // x₀ | x_t by conjugacy, then push through the coefficients
                    let prec = 1.0 / (s * s) + ab / (1.0 - ab);
                    let mu0 = (m / (s * s) + ab.sqrt() * x_t / (1.0 - ab)) / prec;
                    let c = sched.posterior_coeffs(t)?;
                    let mean = c.coef1 * mu0 + c.coef2 * x_t;
                    let var = c.variance + c.coef1 * c.coef1 / prec;
                    let grid = grid_true_posterior(&prior, &sched, t, t - 1, x_t, GRID_POINTS)?;
                    worst = worst.max(grid.kl_to_gaussian(mean, var));
                }
            }
        }
    }
    Ok(worst)
}

/// Largest `|coef1·x₀ + coef2·√ᾱ_t·x₀ − √ᾱ_{t−1}·x₀|` over all steps and
/// lengths.
pub fn noise_free_identity_error() -> Result<f64> {
    let mut worst: f64 = 0.0;
    for kind in [ScheduleKind::Cosine, ScheduleKind::Linear] {
        for steps in 1..=50 {
            let sched = Schedule::new(steps, kind)?;
            for t in 1..=steps {
                let c = sched.posterior_coeffs(t)?;
                for x0 in [-2.5, 0.7, 3.0] {
                    let xt = sched.alphabar(t).sqrt() * x0;
                    let err = (c.coef1 * x0 + c.coef2 * xt - sched.alphabar(t - 1).sqrt() * x0).abs();
                    worst = worst.max(err);
                }
            }
        }
    }
    Ok(worst)
}

/// `(mean, var)` z-scores of an empirical sample against closed-form
/// moments, using the standard errors of both estimators.
pub fn moment_z(samples: &[f64], mean: f64, var: f64) -> (f64, f64) {
    let n = samples.len() as f64;
    let m = samples.iter().sum::<f64>() / n;
    let v = samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    let se_m = (var / n).sqrt();
    let se_v = var * (2.0 / (n - 1.0)).sqrt();
    ((m - mean).abs() / se_m, (v - var).abs() / se_v)
}

/// Worst z-score of `sample_posterior` over a few `(x₀, x_t, t)` triples
/// with 10⁵ draws each.
pub fn posterior_sampling_z(draws: usize) -> Result<f64> {
    let sched = Schedule::new(10, ScheduleKind::Cosine)?;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for (x0, xt, i) in [(0.5, -0.2, 1usize), (-1.0, 1.5, 4), (2.0, 0.0, 9)] {
        let c = sched.posterior_coeffs(i + 1)?;
        let x0s = Tensor::full(&[draws], x0);
        let xts = Tensor::full(&[draws], xt);
        let out = sched.sample_posterior(&x0s, &xts, i, &mut rng)?;
        let (zm, zv) = moment_z(out.data(), c.coef1 * x0 + c.coef2 * xt, c.variance);
        worst = worst.max(zm).max(zv);
    }
    Ok(worst)
}

pub fn tiny_data() -> Dataset {
    synth_dataset(&SynthConfig { clips_per_class: 3, frames: 8, ..Default::default() }).unwrap()
}

pub fn tiny_config() -> TrainConfig {
    TrainConfig {
        steps: 3,
        batch: 6,
        epochs: 3,
        lr_g: 1e-3,
        lr_d: 1e-3,
        generator: GeneratorConfig { hidden: 16, layers: 1, heads: 2, ffn: 16, z_dim: 8, dropout: 0.1 },
        discriminator: DiscriminatorConfig { hidden: 16, groups: 4, time_dim: 8 },
        ..Default::default()
    }
}

/// The reverse chain written out by hand against the generator and the
/// posterior table, with labels fixed for every step. Draws noise in the
/// sampler's order: `x_T`, then per step `z` and the posterior noise.
pub fn manual_chain(model: &Model, params: &ParamStore, labels: &[Option<usize>], seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = labels.len();
    let mut x = Tensor::randn(&[b, model.frames(), model.frame_dim()], &mut rng);
    for i in (0..model.schedule.steps()).rev() {
        let z = Tensor::randn(&[b, model.generator.config.z_dim], &mut rng);
        let g = Graph::new();
        let p = params.bind(&g);
        let x0 = model
            .generator
            .forward(&p, g.leaf(x.clone()), g.leaf(z), labels, &vec![i + 1; b], None)?
            .value();
        let noise = Tensor::randn(x.shape(), &mut rng);
        x = model.schedule.sample_posterior_with(&x0, &x, i, &noise)?;
    }
    Ok(x)
}

/// Maximum deviation of the sampler from the hand-written chain at s = 0
/// and s = 1 (both must be exactly zero).
pub fn guidance_endpoint_errors(state: &TrainState, labels: &[Option<usize>], seed: u64) -> Result<(f64, f64)> {
    let sampler = Sampler::from_state(state, true);
    let run = |s: f64| -> Result<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(sampler.sample_tensor(labels, Guidance::from_scale(s)?, &mut rng)?.0)
    };
    let cond = manual_chain(&state.model, &state.ema, labels, seed)?;
    let uncond = manual_chain(&state.model, &state.ema, &vec![None; labels.len()], seed)?;
    Ok((run(0.0)?.max_abs_diff(&uncond)?, run(1.0)?.max_abs_diff(&cond)?))
}

/// `E‖x − y‖` for independent standard normals in `d` dimensions:
/// `2·Γ((d+1)/2)/Γ(d/2)`, the ratio built up by the recurrence
/// `Γ(a+1) = a·Γ(a)` from the exact starting pair.
pub fn expected_normal_distance(d: usize) -> f64 {
    let (mut a, mut ratio) = if d % 2 == 0 {
        // Γ(1.5)/Γ(1)
        (1.0, std::f64::consts::PI.sqrt() / 2.0)
    } else {
        // Γ(1)/Γ(0.5)
        (0.5, 1.0 / std::f64::consts::PI.sqrt())
    };
    // ratio = Γ(a + 1/2)/Γ(a); step a -> a + 1
    while a < d as f64 / 2.0 - 1e-9 {
        ratio *= (a + 0.5) / a;
        a += 1.0;
    }
    2.0 * ratio
}

/// FID of N(0,1) against N(1,1) from `n` draws each (exact value 1).
pub fn fid_unit_shift(n: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Tensor::randn(&[n, 1], &mut rng);
    let b = Tensor::randn(&[n, 1], &mut rng).map(|v| v + 1.0);
    motion_ddgan::evaluation::fid(&a, &b)
}

pub fn div_standard_normal(rows: usize, pairs: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = Tensor::randn(&[rows, 32], &mut rng);
    motion_ddgan::evaluation::diversity(&f, pairs, &mut rng)
}

/// Desk benchmark data: six classes, 80 clips each, 16 frames at 10 fps.
pub fn desk_synth() -> SynthConfig {
    SynthConfig { clips_per_class: 80, frames: 16, fps: 10.0, ..Default::default() }
}

/// Desk training recipe for the generation-quality checks.
pub const DESK_GEO_WEIGHT: f64 = 10.0;

pub fn desk_train(steps: usize, geo_weight: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        steps,
        geo_weight,
        seed,
        epochs: 300,
        batch: 32,
        lr_g: 2e-3,
        lr_d: 1e-3,
        adam_beta1: 0.5,
        adam_beta2: 0.9,
        ema_decay: 0.99,
        r1_gamma: 0.02,
        generator: GeneratorConfig { hidden: 64, layers: 2, heads: 4, ffn: 64, z_dim: 32, dropout: 0.1 },
        discriminator: DiscriminatorConfig { hidden: 128, groups: 8, time_dim: 32 },
        ..Default::default()
    }
}
