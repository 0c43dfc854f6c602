//! Noise schedules, forward noising kernels and the posterior sampler used
//! by the few-step chain.
//!
//! Tables are indexed by diffusion step `t = 1..=T` with `alphabar(0) = 1`.
//! The sampling loop counts `i = T-1 ..= 0`; loop index `i` reads table
//! index `i + 1`, and the final iteration (`i = 0`) adds no noise.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAX_MODEL_STEPS: usize = 50;
const MAX_ANALYSIS_STEPS: usize = 10_000;
const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;
const LINEAR_BETA_MIN: f64 = 0.1;
const LINEAR_BETA_MAX: f64 = 20.0;
const MIN_VARIANCE: f64 = 1e-20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Cosine,
    Linear,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "linear" => Ok(Self::Linear),
            other => Err(Error::Config(format!("unknown schedule kind {:?}", other))),
        }
    }
}

/// Serialized form stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub kind: ScheduleKind,
    pub beta: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PosteriorCoeffs {
    pub coef1: f64,
    pub coef2: f64,
    pub variance: f64,
    pub log_variance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    kind: ScheduleKind,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alphabar: Vec<f64>,
    posterior: Vec<PosteriorCoeffs>,
}

fn continuous_alphabar(kind: ScheduleKind, u: f64) -> f64 {
    match kind {
        ScheduleKind::Cosine => {
            let f = |u: f64| {
                ((u + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2)
                    .cos()
                    .powi(2)
            };
            f(u) / f(0.0)
        }
        ScheduleKind::Linear => {
            (-0.5 * (LINEAR_BETA_MAX - LINEAR_BETA_MIN) * u * u - LINEAR_BETA_MIN * u).exp()
        }
    }
}

impl Schedule {
    /// Schedule for a trainable model, `1 <= steps <= 50`.
    pub fn new(steps: usize, kind: ScheduleKind) -> Result<Self> {
        if !(1..=MAX_MODEL_STEPS).contains(&steps) {
            return Err(Error::InvalidArgument(format!(
                "step count {} outside 1..={}",
                steps, MAX_MODEL_STEPS
            )));
        }
        Self::build(steps, kind)
    }

    /// Longer schedules for the analytic posterior studies only.
    pub fn for_analysis(steps: usize, kind: ScheduleKind) -> Result<Self> {
        if !(1..=MAX_ANALYSIS_STEPS).contains(&steps) {
            return Err(Error::InvalidArgument(format!(
                "analysis step count {} outside 1..={}",
                steps, MAX_ANALYSIS_STEPS
            )));
        }
        Self::build(steps, kind)
    }

    fn build(steps: usize, kind: ScheduleKind) -> Result<Self> {
        let beta = (1..=steps)
            .map(|t| {
                let prev = continuous_alphabar(kind, (t - 1) as f64 / steps as f64);
                let cur = continuous_alphabar(kind, t as f64 / steps as f64);
                (1.0 - cur / prev).clamp(0.0, MAX_BETA)
            })
            .collect();
        Self::from_betas(kind, beta)
    }

    pub fn from_betas(kind: ScheduleKind, beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() || beta.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::InvalidArgument("betas must lie in (0, 1)".into()));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alphabar = Vec::with_capacity(beta.len() + 1);
        alphabar.push(1.0);
        for a in &alpha {
            let prev = *alphabar.last().unwrap();
            alphabar.push(prev * a);
        }
        let posterior = (1..=beta.len())
            .map(|t| {
                let (ab, ab_prev, b, a) = (alphabar[t], alphabar[t - 1], beta[t - 1], alpha[t - 1]);
                let variance = b * (1.0 - ab_prev) / (1.0 - ab);
                PosteriorCoeffs {
                    coef1: ab_prev.sqrt() * b / (1.0 - ab),
                    coef2: a.sqrt() * (1.0 - ab_prev) / (1.0 - ab),
                    variance,
                    log_variance: variance.max(MIN_VARIANCE).ln(),
                }
            })
            .collect();
        Ok(Self {
            kind,
            beta,
            alpha,
            alphabar,
            posterior,
        })
    }

    pub fn from_spec(spec: &ScheduleSpec) -> Result<Self> {
        if spec.beta.len() != spec.steps {
            return Err(Error::Integrity(format!(
                "schedule lists {} betas for {} steps",
                spec.beta.len(),
                spec.steps
            )));
        }
        Self::from_betas(spec.kind, spec.beta.clone())
    }

    pub fn spec(&self) -> ScheduleSpec {
        ScheduleSpec {
            steps: self.steps(),
            kind: self.kind,
            beta: self.beta.clone(),
        }
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidArgument(format!(
                "step {} outside 1..={}",
                t,
                self.steps()
            )));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `alphabar(0) = 1`.
    pub fn alphabar(&self, t: usize) -> f64 {
        self.alphabar[t]
    }

    pub fn posterior_coeffs(&self, t: usize) -> Result<PosteriorCoeffs> {
        self.check_step(t)?;
        Ok(self.posterior[t - 1])
    }

    /// Marginal `sqrt(ab_t)·x0 + sqrt(1-ab_t)·eps`; `t = 0` returns `x0`.
    pub fn q_sample(&self, x0: &Tensor, t: usize, eps: &Tensor) -> Result<Tensor> {
        if t > self.steps() {
            return Err(Error::InvalidArgument(format!("step {} > {}", t, self.steps())));
        }
        let ab = self.alphabar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        x0.zip_map(eps, |x, e| a * x + b * e)
    }

    /// Real pair `(x_{t-1}, x_t)`: the first from the marginal at `t-1`, the
    /// second one forward step from it.
    pub fn sample_real_pair<R: Rng + ?Sized>(
        &self,
        x0: &Tensor,
        t: usize,
        rng: &mut R,
    ) -> Result<(Tensor, Tensor)> {
        self.check_step(t)?;
        let prev = if t == 1 {
            x0.clone()
        } else {
            self.q_sample(x0, t - 1, &Tensor::randn(x0.shape(), rng))?
        };
        let (sa, sb) = (self.alpha(t).sqrt(), (1.0 - self.alpha(t)).sqrt());
        let cur = prev.zip_map(&Tensor::randn(x0.shape(), rng), |x, e| sa * x + sb * e)?;
        Ok((prev, cur))
    }

    /// Posterior mean and standard deviation applied to explicit noise, for
    /// loop index `i` (table index `i + 1`). The noise term is dropped at
    /// `i = 0`.
    pub fn sample_posterior_with(
        &self,
        x0: &Tensor,
        xt: &Tensor,
        loop_index: usize,
        noise: &Tensor,
    ) -> Result<Tensor> {
        let c = self.posterior_coeffs(loop_index + 1)?;
        let mask = if loop_index == 0 { 0.0 } else { 1.0 };
        let std = (0.5 * c.log_variance).exp();
        let mean = x0.zip_map(xt, |a, b| c.coef1 * a + c.coef2 * b)?;
        mean.zip_map(noise, |m, n| m + mask * std * n)
    }

    pub fn sample_posterior<R: Rng + ?Sized>(
        &self,
        x0: &Tensor,
        xt: &Tensor,
        loop_index: usize,
        rng: &mut R,
    ) -> Result<Tensor> {
        let noise = Tensor::randn(xt.shape(), rng);
        self.sample_posterior_with(x0, xt, loop_index, &noise)
    }
}
