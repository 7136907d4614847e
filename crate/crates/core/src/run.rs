//! Glue between a [`RunConfig`] and the training and inference types.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::env::{derive_seed, fit_normalizers, training_samples, Demonstration, DiffusionAgent};
use crate::error::{Error, Result};
use crate::policy::{FreqPolicy, TrainSample, Trainer};
use crate::trajectory::Normalization;

/// A fresh trainer with the normalizers and windows of its dataset.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub trainer: Trainer,
    pub obs_norm: Normalization,
    pub act_norm: Normalization,
    pub samples: Vec<TrainSample>,
}

/// Fits normalizers, slices windows and initializes the network from `run.seed`.
pub fn prepare(run: &RunConfig, demos: &[Demonstration]) -> Result<Prepared> {
    let env = demos.first().ok_or_else(|| Error::Data("empty demonstration set".into()))?.env;
    if env != run.env() {
        return Err(Error::Data(format!("dataset is {env} but run.env is {}", run.env())));
    }
    let (obs_norm, act_norm) = fit_normalizers(demos)?;
    let samples = windows(run, demos, &obs_norm, &act_norm)?;
    let seed = run.seed();
    let model = FreqPolicy::new(run.policy()?, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0)))?;
    let trainer = Trainer::new(model, run.trainer()?, derive_seed(seed, 1))?;
    Ok(Prepared {
        trainer,
        obs_norm,
        act_norm,
        samples,
    })
}

/// Normalized training windows with the configured chunking and stride.
pub fn windows(
    run: &RunConfig,
    demos: &[Demonstration],
    obs_norm: &Normalization,
    act_norm: &Normalization,
) -> Result<Vec<TrainSample>> {
    let p = run.policy()?;
    training_samples(demos, obs_norm, act_norm, p.obs_steps, p.horizon, run.data_stride())
}

/// Inference wrapper using the sampler settings of `run`.
pub fn agent(model: FreqPolicy, obs_norm: Normalization, act_norm: Normalization, run: &RunConfig) -> Result<DiffusionAgent> {
    Ok(DiffusionAgent {
        model,
        obs_norm,
        act_norm,
        schedule: run.freq_schedule()?,
        sampler: run.sampler()?,
    })
}
