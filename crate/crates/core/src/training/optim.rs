use crate::error::{Error, Result};
use crate::networks::ParamStore;
use crate::tensor::Tensor;

pub const ADAM_EPS: f64 = 1e-8;

/// Adam with bias correction; moments share the parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: ParamStore,
    pub v: ParamStore,
}

impl Adam {
    pub fn new(params: &ParamStore, beta1: f64, beta2: f64) -> Self {
        Self { beta1, beta2, eps: ADAM_EPS, step: 0, m: params.zeros_like(), v: params.zeros_like() }
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::InvalidArgument(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params.get(i).shape() {
                return Err(Error::InvalidArgument(format!("gradient {} has shape {:?}", i, g.shape())));
            }
            let m = self.m.get_mut(i).data_mut();
            let v = self.v.get_mut(i).data_mut();
            let p = params.get_mut(i).data_mut();
            for k in 0..p.len() {
                let gk = g.data()[k];
                m[k] = b1 * m[k] + (1.0 - b1) * gk;
                v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// `lr0 · (1 + cos(π·epoch/total)) / 2`.
pub fn cosine_lr(lr0: f64, epoch: usize, total: usize) -> f64 {
    if total == 0 {
        return lr0;
    }
    let e = epoch.min(total) as f64 / total as f64;
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * e).cos())
}

/// `shadow ← decay·shadow + (1 − decay)·params`.
pub fn ema_update(shadow: &mut ParamStore, params: &ParamStore, decay: f64) -> Result<()> {
    if shadow.len() != params.len() {
        return Err(Error::InvalidArgument("EMA shadow layout differs".into()));
    }
    for i in 0..params.len() {
        let src = params.get(i).data().to_vec();
        let dst = shadow.get_mut(i).data_mut();
        if dst.len() != src.len() {
            return Err(Error::InvalidArgument("EMA shadow layout differs".into()));
        }
        for (s, p) in dst.iter_mut().zip(src) {
            *s = decay * *s + (1.0 - decay) * p;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64]) -> ParamStore {
        let mut p = ParamStore::new();
        p.push("w", Tensor::from_vec(values.to_vec()));
        p
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut p = store(&[0.5, -1.5]);
        let before = p.clone();
        let mut adam = Adam::new(&p, 0.9, 0.999);
        adam.update(&mut p, &[Tensor::zeros(&[2])], 0.1).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = store(&[0.0, 0.0]);
        let mut adam = Adam::new(&p, 0.9, 0.999);
        adam.update(&mut p, &[Tensor::from_vec(vec![3.0, -0.02])], 0.01).unwrap();
        assert!((p.get(0).data()[0] + 0.01).abs() < 1e-9);
        assert!((p.get(0).data()[1] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(2e-4, 0, 10), 2e-4);
        assert!(cosine_lr(2e-4, 10, 10).abs() < 1e-20);
        assert!((cosine_lr(2e-4, 5, 10) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn ema_recurrence() {
        let params = store(&[1.0]);
        let mut shadow = store(&[0.0]);
        ema_update(&mut shadow, &params, 0.999).unwrap();
        assert!((shadow.get(0).data()[0] - 0.001).abs() < 1e-15);
        let mut same = store(&[0.25]);
        ema_update(&mut same, &params, 1.0).unwrap();
        assert_eq!(same.get(0).data()[0], 0.25);
        ema_update(&mut same, &params, 0.0).unwrap();
        assert_eq!(same.get(0).data()[0], 1.0);
    }
}
