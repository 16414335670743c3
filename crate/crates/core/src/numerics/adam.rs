//! Adam with decoupled weight decay and a linear warmup/decay schedule.

use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr_peak: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub total_steps: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr_peak: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay: 0.01,
            warmup_fraction: 0.1,
            total_steps: 1000,
        }
    }
}

/// Linear ramp from 0 to `lr_peak` over the warmup, then linear decay to 0
/// at `total_steps`.
pub fn lr_at(step: usize, cfg: &AdamConfig) -> Result<f64> {
    let total = cfg.total_steps;
    if step > total {
        return Err(Error::OutOfRange(format!("step {step} > total_steps {total}")));
    }
    if total == 0 {
        return Ok(0.0);
    }
    let warmup = cfg.warmup_fraction * total as f64;
    let s = step as f64;
    let lr = if s <= warmup && warmup > 0.0 {
        cfg.lr_peak * s / warmup
    } else {
        cfg.lr_peak * (total as f64 - s) / (total as f64 - warmup)
    };
    Ok(lr)
}

/// Optimizer state: step counter and per-parameter moments.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: usize,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

/// One parameter together with whether weight decay applies to it.
pub struct ParamSlot<'a, T> {
    pub value: &'a mut Tensor<T>,
    pub decay: bool,
}

impl<T: Real> AdamState<T> {
    pub fn new<'a, I>(config: AdamConfig, shapes: I) -> Self
    where
        I: IntoIterator<Item = &'a [usize]>,
    {
        let (m, v) = shapes.into_iter().map(|s| (Tensor::zeros(s), Tensor::zeros(s))).unzip();
        Self { config, step: 0, m, v }
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.v
    }

    /// Advances the step counter and applies one update at `lr_at(step)`.
    /// Returns the learning rate used.
    pub fn update(&mut self, params: &mut [ParamSlot<'_, T>], grads: &[Tensor<T>]) -> Result<f64> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam: {} moments, {} params, {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if !p.value.same_shape(g) || !p.value.same_shape(m) {
                return Err(Error::Shape(format!(
                    "adam: param {:?}, grad {:?}, moment {:?}",
                    p.value.shape(),
                    g.shape(),
                    m.shape()
                )));
            }
        }
        self.step += 1;
        let c = self.config;
        let lr = lr_at(self.step, &c)?;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let step_size = T::from_f64_lossy(lr / bc1);
        let inv_bc2_sqrt = T::from_f64_lossy(1.0 / bc2.sqrt());
        let eps = T::from_f64_lossy(c.eps);
        let wd = T::from_f64_lossy(lr * c.weight_decay);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let decay = p.decay;
            for (j, x) in p.value.data_mut().iter_mut().enumerate() {
                let gj = g.data()[j];
                m[j] = b1 * m[j] + one_b1 * gj;
                v[j] = b2 * v[j] + one_b2 * gj * gj;
                let denom = v[j].sqrt() * inv_bc2_sqrt + eps;
                let mut nx = *x - step_size * m[j] / denom;
                if decay {
                    nx = nx - wd * *x;
                }
                *x = nx;
            }
        }
        Ok(lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(total: usize, lr: f64) -> AdamConfig {
        AdamConfig { lr_peak: lr, total_steps: total, ..AdamConfig::default() }
    }

    #[test]
    fn schedule_values() {
        let c = cfg(1000, 1e-4);
        assert!((lr_at(100, &c).unwrap() - 1e-4).abs() < 1e-18);
        assert_eq!(lr_at(1000, &c).unwrap(), 0.0);
        assert!((lr_at(50, &c).unwrap() - 5e-5).abs() < 1e-18);
        assert_eq!(lr_at(0, &c).unwrap(), 0.0);
        assert!((lr_at(550, &c).unwrap() - 5e-5).abs() < 1e-15);
        assert!(lr_at(1001, &c).is_err());
    }

    #[test]
    fn zero_gradient_only_decays() {
        let c = cfg(10, 1e-2);
        let mut p = Tensor::new(vec![2], vec![1.0f64, -2.0]).unwrap();
        let mut st = AdamState::new(c, [p.shape()]);
        let g = Tensor::zeros(&[2]);
        let lr = st.update(&mut [ParamSlot { value: &mut p, decay: true }], &[g]).unwrap();
        let shrink = 1.0 - lr * 0.01;
        assert!((p.data()[0] - shrink).abs() < 1e-15);
        assert!((p.data()[1] + 2.0 * shrink).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // warmup_fraction = 0 so the first step runs at lr_peak * (T-1)/T;
        // with T large the step is lr to within 1e-6 relative.
        let c = AdamConfig { warmup_fraction: 0.0, weight_decay: 0.0, ..cfg(1_000_000, 1e-4) };
        let mut p = Tensor::scalar(0.5f64);
        let mut st = AdamState::new(c, [p.shape()]);
        let lr = st.update(&mut [ParamSlot { value: &mut p, decay: false }], &[Tensor::scalar(1.0)]).unwrap();
        // m̂ = 1, v̂ = 1, update = lr / (1 + eps)
        let expected = 0.5 - lr / (1.0 + 1e-6);
        assert!((p.item() - expected).abs() < 1e-15);
        assert!((0.5 - p.item() - 1e-4).abs() < 1e-9);
    }

    #[test]
    fn moments_follow_recurrence() {
        let c = cfg(100, 1e-3);
        let mut p = Tensor::scalar(0.0f64);
        let mut st = AdamState::new(c, [p.shape()]);
        let g = 0.3;
        for _ in 0..2 {
            st.update(&mut [ParamSlot { value: &mut p, decay: false }], &[Tensor::scalar(g)]).unwrap();
        }
        let m1 = 0.1 * g;
        let m2 = 0.9 * m1 + 0.1 * g;
        let v1 = 0.001 * g * g;
        let v2 = 0.999 * v1 + 0.001 * g * g;
        assert!((st.first_moments()[0].item() - m2).abs() < 1e-15);
        assert!((st.second_moments()[0].item() - v2).abs() < 1e-15);
        assert_eq!(st.step(), 2);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor::<f32>::zeros(&[3]);
        let mut st = AdamState::new(cfg(10, 1e-3), [p.shape()]);
        let err = st.update(&mut [ParamSlot { value: &mut p, decay: true }], &[Tensor::zeros(&[2])]);
        assert!(err.is_err());
        assert_eq!(st.step(), 0);
    }
}
