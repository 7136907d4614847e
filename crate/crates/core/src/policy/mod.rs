//! Masked encoder/decoder policy conditioned on low-frequency action tokens,
//! with a per-position diffusion noise predictor.

mod config;
mod mask;
mod network;
mod schedule;
mod train;
mod trainer;

pub use config::{FrequencyMode, LossMasking, NoiseSchedule, PolicyConfig};
pub use mask::{adaptive_mask_ratio, mask_with_count, reveal_to_count, sample_mask, truncated_normal, MaskVector};
pub use network::{conditioning_tokens, EncoderOutput, FreqPolicy, LatentTokens, ObservationFeatures};
pub use schedule::DiffusionSchedule;
pub use trainer::{Trainer, TrainerConfig};
pub use train::{diffusion_loss, draw_batch, draw_sample, loss_positions, training_step, SampleDraw, TrainSample};

#[cfg(test)]
mod tests;
