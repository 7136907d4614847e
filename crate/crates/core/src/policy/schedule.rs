use std::f64::consts::PI;

use super::config::NoiseSchedule;
use crate::error::{Error, Result};

const MAX_BETA: f64 = 0.999;

/// Cumulative signal levels `alpha_bar_t` for `t = 1..=T_diff`, stored at index `t - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub alpha_bar: Vec<f64>,
    pub betas: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn new(kind: NoiseSchedule, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("diffusion needs at least one step".into()));
        }
        let betas: Vec<f64> = match kind {
            NoiseSchedule::Cosine => {
                // squared-cosine alpha_bar with offset s = 0.008
                let f = |t: f64| (((t / steps as f64) + 0.008) / 1.008 * PI / 2.0).cos().powi(2);
                (1..=steps)
                    .map(|t| (1.0 - f(t as f64) / f((t - 1) as f64)).min(MAX_BETA))
                    .collect()
            }
            NoiseSchedule::Linear => {
                let scale = 1000.0 / steps as f64;
                let (lo, hi) = (scale * 1e-4, (scale * 0.02).min(MAX_BETA));
                (0..steps)
                    .map(|i| {
                        if steps == 1 {
                            lo
                        } else {
                            lo + (hi - lo) * i as f64 / (steps - 1) as f64
                        }
                    })
                    .collect()
            }
        };
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Ok(Self { alpha_bar, betas })
    }

    pub fn steps(&self) -> usize {
        self.alpha_bar.len()
    }

    /// `alpha_bar_t` for 1-based `t`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Range {
                what: "diffusion step",
                value: t as f64,
                min: 1.0,
                max: self.steps() as f64,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules_satisfy_invariants() {
        for kind in [NoiseSchedule::Cosine, NoiseSchedule::Linear] {
            let s = DiffusionSchedule::new(kind, 100).unwrap();
            assert!(s.alpha_bar[0] >= 0.99, "{kind}: {}", s.alpha_bar[0]);
            assert!(s.alpha_bar[99] < 0.01, "{kind}: {}", s.alpha_bar[99]);
            assert!(s.alpha_bar[99] > 0.0);
            assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn step_range() {
        let s = DiffusionSchedule::new(NoiseSchedule::Cosine, 10).unwrap();
        assert!(s.check_step(0).is_err());
        assert!(s.check_step(11).is_err());
        assert!(s.check_step(10).is_ok());
    }
}
