use std::f64::consts::PI;

use super::tensor::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1.0e-4,
            beta1: 0.95,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1.0e-6,
        }
    }
}

/// Adam with decoupled weight decay. Moments are kept per parameter in
/// store order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self {
            config,
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
        }
    }

    /// Applies one update with learning rate `lr` using the gradients stored
    /// in `store`. `lr = 0` leaves every parameter bit-identical.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be >= 0, got {lr}")));
        }
        if self.first_moment.len() != store.len() {
            return Err(Error::Autodiff("optimizer state does not match parameters".into()));
        }
        self.step_count += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
            ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step_count as i32);
        let bc2 = 1.0 - beta2.powi(self.step_count as i32);
        for ((p, m), v) in store
            .iter_mut()
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            if !p.requires_grad {
                continue;
            }
            let grad = p.grad.data().to_vec();
            for (((w, g), mi), vi) in p.value.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                if lr == 0.0 {
                    continue;
                }
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * weight_decay * *w;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Cosine decay from `peak` at step 0 to zero at `total_steps`.
pub fn cosine_lr(peak: f64, step: u64, total_steps: u64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {peak}")));
    }
    if total_steps == 0 {
        return Ok(peak);
    }
    let frac = (step.min(total_steps) as f64) / total_steps as f64;
    Ok(0.5 * peak * (1.0 + (PI * frac).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn scalar_store(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(w)).unwrap();
        s
    }

    fn set_grad(store: &mut ParamStore, g: f64) {
        let id = store.id("w").unwrap();
        store.param_mut(id).grad.data_mut()[0] = g;
    }

    #[test]
    fn quadratic_step_moves_toward_zero() {
        let mut store = scalar_store(1.0);
        let mut opt = AdamW::new(AdamWConfig::default(), &store);
        set_grad(&mut store, 1.0); // d/dw w^2/2 at w = 1
        opt.step(&mut store, 0.1).unwrap();
        let w = store.value(store.id("w").unwrap()).data()[0];
        assert!(w.abs() < 1.0);
    }

    #[test]
    fn two_step_trace_matches_hand_computation() {
        // f(w) = w^2 / 2 from w = 1, lr = 0.1, wd = 0, betas (0.95, 0.999).
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut store = scalar_store(1.0);
        let mut opt = AdamW::new(cfg, &store);
        set_grad(&mut store, 1.0);
        opt.step(&mut store, 0.1).unwrap();
        let w1 = store.value(store.id("w").unwrap()).data()[0];
        // m1 = 0.05, v1 = 0.001; mhat = 1, vhat = 1 -> w1 = 1 - 0.1 / (1 + 1e-8)
        let expect1 = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((w1 - expect1).abs() < 1e-15);
        set_grad(&mut store, w1);
        opt.step(&mut store, 0.1).unwrap();
        let w2 = store.value(store.id("w").unwrap()).data()[0];
        let m2 = 0.95 * 0.05 + 0.05 * w1;
        let v2 = 0.999 * 0.001 + 0.001 * w1 * w1;
        let mhat = m2 / (1.0 - 0.95f64.powi(2));
        let vhat = v2 / (1.0 - 0.999f64.powi(2));
        let expect2 = w1 - 0.1 * mhat / (vhat.sqrt() + 1e-8);
        assert!((w2 - expect2).abs() < 1e-15);
        // independent numeric check of the hand trace: w2 ~ 0.8 within rounding
        assert!((w2 - 0.8).abs() < 1e-3, "w2 = {w2}");
    }

    #[test]
    fn zero_lr_keeps_bits() {
        let mut store = scalar_store(0.3);
        let mut opt = AdamW::new(AdamWConfig::default(), &store);
        set_grad(&mut store, 2.0);
        opt.step(&mut store, 0.0).unwrap();
        assert_eq!(store.value(store.id("w").unwrap()).data()[0].to_bits(), 0.3f64.to_bits());
    }

    #[test]
    fn rejects_negative_lr() {
        let mut store = scalar_store(0.3);
        let mut opt = AdamW::new(AdamWConfig::default(), &store);
        assert!(opt.step(&mut store, -1.0).is_err());
        assert!(cosine_lr(0.0, 0, 10).is_err());
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(1e-3, 0, 100).unwrap(), 1e-3);
        assert!((cosine_lr(1e-3, 50, 100).unwrap() - 5e-4).abs() < 1e-15);
        assert!(cosine_lr(1e-3, 99, 100).unwrap() <= 1e-5);
        assert_eq!(cosine_lr(1e-3, 100, 100).unwrap(), 0.0);
    }
}
