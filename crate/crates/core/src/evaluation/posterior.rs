//! Brute-force denoising posteriors on a 1D grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::Schedule;

pub const GRID_POINTS: usize = 2048;
pub const GRID_HALF_WIDTH: f64 = 6.0;
const MAX_BOUNDARY_MASS: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Prior {
    Gaussian { mean: f64, std: f64 },
    /// Weighted point masses.
    Atoms { values: Vec<f64>, weights: Vec<f64> },
}

impl Prior {
    pub fn two_delta() -> Self {
        Prior::Atoms { values: vec![-1.0, 1.0], weights: vec![0.5, 0.5] }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Prior::Gaussian { std, .. } if !(*std > 0.0) => Err(Error::InvalidArgument("prior std must be > 0".into())),
            Prior::Atoms { values, weights }
                if values.is_empty() || values.len() != weights.len() || weights.iter().any(|w| !(*w > 0.0)) =>
            {
                Err(Error::InvalidArgument("atoms need positive weights, one per value".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Prior::Gaussian { mean, .. } => *mean,
            Prior::Atoms { values, weights } => {
                let w: f64 = weights.iter().sum();
                values.iter().zip(weights).map(|(v, p)| v * p).sum::<f64>() / w
            }
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Prior::Gaussian { std, .. } => std * std,
            Prior::Atoms { values, weights } => {
                let w: f64 = weights.iter().sum();
                let m = self.mean();
                values.iter().zip(weights).map(|(v, p)| p * (v - m).powi(2)).sum::<f64>() / w
            }
        }
    }

    /// Density of `x_s = sqrt(ab)·x0 + sqrt(1-ab)·ε` (exact integral over x0).
    fn marginal(&self, ab: f64, x: f64) -> f64 {
        match self {
            Prior::Gaussian { mean, std } => normal_pdf(x, ab.sqrt() * mean, ab * std * std + 1.0 - ab),
            Prior::Atoms { values, weights } => {
                let w: f64 = weights.iter().sum();
                values.iter().zip(weights).map(|(v, p)| p / w * normal_pdf(x, ab.sqrt() * v, 1.0 - ab)).sum()
            }
        }
    }
}

pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPosterior {
    pub x: Vec<f64>,
    /// Density values; `sum(p)·dx = 1`.
    pub p: Vec<f64>,
}

impl GridPosterior {
    pub fn new(x: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if x.len() < 3 || x.len() != p.len() || p.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument("grid needs >= 3 points and nonnegative density".into()));
        }
        let mut g = Self { x, p };
        let mass: f64 = g.p.iter().sum::<f64>() * g.dx();
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidArgument("grid density has no mass".into()));
        }
        g.p.iter_mut().for_each(|v| *v /= mass);
        Ok(g)
    }

    pub fn dx(&self) -> f64 {
        (self.x[self.x.len() - 1] - self.x[0]) / (self.x.len() - 1) as f64
    }

    pub fn mass(&self) -> f64 {
        self.p.iter().sum::<f64>() * self.dx()
    }

    pub fn mean(&self) -> f64 {
        self.x.iter().zip(&self.p).map(|(x, p)| x * p).sum::<f64>() * self.dx()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.x.iter().zip(&self.p).map(|(x, p)| (x - m).powi(2) * p).sum::<f64>() * self.dx()
    }

    /// `KL(self ‖ N(mean, var))` evaluated on the grid.
    pub fn kl_to_gaussian(&self, mean: f64, var: f64) -> f64 {
        let dx = self.dx();
        self.x
            .iter()
            .zip(&self.p)
            .filter(|(_, &p)| p > 0.0)
            .map(|(&x, &p)| {
                let log_q = -(x - mean).powi(2) / (2.0 * var) - 0.5 * (2.0 * std::f64::consts::PI * var).ln();
                p * (p.ln() - log_q)
            })
            .sum::<f64>()
            * dx
    }

    /// Mass in the two end cells.
    pub fn boundary_mass(&self) -> f64 {
        (self.p[0] + self.p[self.p.len() - 1]) * self.dx()
    }

    /// Histogram density of samples on a uniform grid of bin centres.
    pub fn from_samples(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins < 3 || !(hi > lo) {
            return Err(Error::InvalidArgument("histogram needs bins >= 3 and hi > lo".into()));
        }
        let w = (hi - lo) / bins as f64;
        let mut p = vec![0.0; bins];
        for &s in samples {
            let k = ((s - lo) / w).floor();
            if k >= 0.0 && (k as usize) < bins {
                p[k as usize] += 1.0;
            }
        }
        let x = (0..bins).map(|k| lo + (k as f64 + 0.5) * w).collect();
        Self::new(x, p)
    }
}

/// `q(x_to | x_from = x_t)` for a 1D prior, `0 <= to < from <= T`.
pub fn grid_true_posterior(
    prior: &Prior,
    schedule: &Schedule,
    from: usize,
    to: usize,
    x_t: f64,
    points: usize,
) -> Result<GridPosterior> {
    prior.validate()?;
    if to >= from || from > schedule.steps() {
        return Err(Error::InvalidArgument(format!("need 0 <= to < from <= T, got to={} from={}", to, from)));
    }
    let (ab_to, ab_from) = (schedule.alphabar(to), schedule.alphabar(from));
    let ratio = ab_from / ab_to;
    let centre = ab_to.sqrt() * prior.mean();
    let half = GRID_HALF_WIDTH * (ab_to * prior.variance() + 1.0 - ab_to).sqrt();
    if to == 0 {
        if let Prior::Atoms { .. } = prior {
            return Err(Error::InvalidArgument("atom prior has no density at step 0".into()));
        }
    }
    let x: Vec<f64> =
        (0..points).map(|k| centre - half + 2.0 * half * k as f64 / (points - 1) as f64).collect();
    let p: Vec<f64> = x
        .iter()
        .map(|&s| prior.marginal(ab_to, s) * normal_pdf(x_t, ratio.sqrt() * s, 1.0 - ratio))
        .collect();
    let grid = GridPosterior::new(x, p)?;
    if grid.boundary_mass() > MAX_BOUNDARY_MASS {
        return Err(Error::InvalidArgument(format!("grid too coarse: boundary mass {:.3e}", grid.boundary_mass())));
    }
    Ok(grid)
}

/// KL from the grid density to its moment-matched Gaussian.
pub fn gaussianity_score(p: &GridPosterior) -> f64 {
    p.kl_to_gaussian(p.mean(), p.variance()).max(0.0)
}

/// Closed-form posterior `(mean, var)` of `x_to` given `x_from` under a
/// Gaussian prior.
pub fn gaussian_posterior(mean: f64, std: f64, schedule: &Schedule, from: usize, to: usize, x_t: f64) -> (f64, f64) {
    let ab_to = schedule.alphabar(to);
    let r2 = schedule.alphabar(from) / ab_to;
    let (m1, v1) = (ab_to.sqrt() * mean, ab_to * std * std + 1.0 - ab_to);
    let precision = 1.0 / v1 + r2 / (1.0 - r2);
    ((m1 / v1 + r2.sqrt() * x_t / (1.0 - r2)) / precision, 1.0 / precision)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub step_size: usize,
    pub from: usize,
    pub to: usize,
    pub gaussianity: f64,
}

/// Gaussianity of `q(x_{from-k} | x_from = x_t)` for each step size `k`,
/// all transitions ending at the same `from`.
pub fn gaussianity_sweep(prior: &Prior, schedule: &Schedule, from: usize, x_t: f64, step_sizes: &[usize]) -> Result<Vec<SweepRow>> {
    step_sizes
        .iter()
        .map(|&k| {
            if k == 0 || k > from {
                return Err(Error::InvalidArgument(format!("step size {} invalid for from={}", k, from)));
            }
            let p = grid_true_posterior(prior, schedule, from, from - k, x_t, GRID_POINTS)?;
            Ok(SweepRow { step_size: k, from, to: from - k, gaussianity: gaussianity_score(&p) })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("step_size,from,to,gaussianity\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{:e}\n", r.step_size, r.from, r.to, r.gaussianity));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleKind;

    #[test]
    fn gaussian_prior_matches_closed_form() {
        let sched = Schedule::for_analysis(1000, ScheduleKind::Linear).unwrap();
        for (from, to) in [(10, 9), (300, 200), (1000, 1), (500, 0)] {
            let p = grid_true_posterior(&Prior::Gaussian { mean: 0.3, std: 0.7 }, &sched, from, to, 0.8, GRID_POINTS).unwrap();
            let (m, v) = gaussian_posterior(0.3, 0.7, &sched, from, to, 0.8);
            assert!((p.mass() - 1.0).abs() < 1e-6);
            assert!(p.kl_to_gaussian(m, v) < 1e-4, "{} -> {}", from, to);
        }
    }

    #[test]
    fn two_delta_large_step_is_bimodal_and_symmetric() {
        let sched = Schedule::for_analysis(1000, ScheduleKind::Linear).unwrap();
        let p = grid_true_posterior(&Prior::two_delta(), &sched, 600, 10, 0.0, GRID_POINTS).unwrap();
        let n = p.p.len();
        for i in 0..n {
            assert!((p.p[i] - p.p[n - 1 - i]).abs() < 1e-9 * p.p.iter().cloned().fold(0.0, f64::max));
        }
        // density dips at the centre
        assert!(p.p[n / 2] < 0.1 * p.p.iter().cloned().fold(0.0, f64::max));
        assert!(gaussianity_score(&p) > 0.1);
    }

    #[test]
    fn adjacent_step_is_near_gaussian() {
        let sched = Schedule::for_analysis(1000, ScheduleKind::Linear).unwrap();
        let p = grid_true_posterior(&Prior::two_delta(), &sched, 130, 129, 0.0, GRID_POINTS).unwrap();
        assert!(gaussianity_score(&p) < 1e-3);
    }

    #[test]
    fn exact_gaussian_grid_scores_zero() {
        let x: Vec<f64> = (0..GRID_POINTS).map(|k| -6.0 + 12.0 * k as f64 / (GRID_POINTS - 1) as f64).collect();
        let p = x.iter().map(|&v| normal_pdf(v, 0.0, 1.0)).collect();
        assert!(gaussianity_score(&GridPosterior::new(x, p).unwrap()) < 1e-6);
    }

    #[test]
    fn sweep_is_nondecreasing() {
        let sched = Schedule::for_analysis(1000, ScheduleKind::Linear).unwrap();
        let rows = gaussianity_sweep(&Prior::two_delta(), &sched, 130, 0.0, &[1, 5, 25, 125]).unwrap();
        for r in &rows {
            eprintln!("k={} score={:e}", r.step_size, r.gaussianity);
        }
        assert!(rows.windows(2).all(|w| w[1].gaussianity >= w[0].gaussianity));
        assert!(rows[3].gaussianity > 0.1);
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let sched = Schedule::for_analysis(10, ScheduleKind::Cosine).unwrap();
        // x_t far in the tail pushes the posterior onto the grid boundary
        assert!(grid_true_posterior(&Prior::Gaussian { mean: 0.0, std: 0.1 }, &sched, 10, 9, 40.0, GRID_POINTS).is_err());
        assert!(grid_true_posterior(&Prior::two_delta(), &sched, 3, 3, 0.0, GRID_POINTS).is_err());
    }
}
