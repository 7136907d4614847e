use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::FreqPolicy;
use super::train::{training_step, TrainSample};
use crate::autodiff::{cosine_lr, AdamW, AdamWConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub batch_size: usize,
    /// Total optimizer steps of the run; sets the cosine decay length.
    pub total_steps: u64,
    pub optimizer: AdamWConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            total_steps: 3000,
            optimizer: AdamWConfig::default(),
        }
    }
}

/// Model, optimizer state and the run RNG; everything a resumed run needs.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: FreqPolicy,
    pub optimizer: AdamW,
    pub config: TrainerConfig,
    pub rng: ChaCha8Rng,
    pub step: u64,
}

impl Trainer {
    pub fn new(model: FreqPolicy, config: TrainerConfig, seed: u64) -> Result<Self> {
        if config.batch_size == 0 || config.total_steps == 0 {
            return Err(Error::Config("batch size and step count must be positive".into()));
        }
        let optimizer = AdamW::new(config.optimizer, &model.params);
        Ok(Self {
            model,
            optimizer,
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
            step: 0,
        })
    }

    pub fn learning_rate(&self) -> Result<f64> {
        cosine_lr(self.config.optimizer.lr, self.step, self.config.total_steps)
    }

    /// Draws a batch with replacement and applies one update.
    pub fn train_step(&mut self, data: &[TrainSample]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Data("no training samples".into()));
        }
        let lr = self.learning_rate()?;
        let batch: Vec<TrainSample> = (0..self.config.batch_size)
            .map(|_| data[self.rng.random_range(0..data.len())].clone())
            .collect();
        let loss = training_step(&mut self.model, &mut self.optimizer, &batch, lr, &mut self.rng)?;
        self.step += 1;
        Ok(loss)
    }

    pub fn finished(&self) -> bool {
        self.step >= self.config.total_steps
    }
}
