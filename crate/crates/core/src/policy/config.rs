use crate::error::{Error, Result};

/// Which positions enter the diffusion loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMasking {
    /// Only positions hidden from the encoder (samples with an empty mask use all positions).
    Masked,
    /// Every position.
    Full,
}

/// How the conditioning sequence for level `k` is built from the clean actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrequencyMode {
    /// `y^k = idct_k(dct(x), k)`.
    Dct,
    /// Ablation without the transform: `y^k = x` for `k > 0`, zeros for `k = 0`.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseSchedule {
    Cosine,
    Linear,
}

impl std::str::FromStr for LossMasking {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "masked" => Ok(Self::Masked),
            "full" => Ok(Self::Full),
            _ => Err(Error::Config(format!("loss masking must be masked|full, got {s:?}"))),
        }
    }
}

impl std::str::FromStr for FrequencyMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dct" => Ok(Self::Dct),
            "none" => Ok(Self::Identity),
            _ => Err(Error::Config(format!("frequency mode must be dct|none, got {s:?}"))),
        }
    }
}

impl std::str::FromStr for NoiseSchedule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "linear" => Ok(Self::Linear),
            _ => Err(Error::Config(format!("schedule must be cosine|linear, got {s:?}"))),
        }
    }
}

impl std::fmt::Display for LossMasking {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Masked => "masked",
            Self::Full => "full",
        })
    }
}

impl std::fmt::Display for FrequencyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Dct => "dct",
            Self::Identity => "none",
        })
    }
}

impl std::fmt::Display for NoiseSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Cosine => "cosine",
            Self::Linear => "linear",
        })
    }
}

/// Network shape and training-time masking/diffusion settings.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyConfig {
    /// Prediction horizon `T_h`.
    pub horizon: usize,
    /// Executed actions per replanning `T_a`.
    pub action_step: usize,
    /// Observation history length `T_o`.
    pub obs_steps: usize,
    pub obs_dim: usize,
    pub action_dim: usize,
    /// Hidden width of the observation MLP.
    pub state_mlp_size: usize,
    pub encoder_embed_dim: usize,
    pub decoder_embed_dim: usize,
    pub encoder_depth: usize,
    pub decoder_depth: usize,
    pub encoder_num_heads: usize,
    pub decoder_num_heads: usize,
    pub mlp_ratio: usize,
    /// Residual blocks in the noise predictor.
    pub diffloss_d: usize,
    /// Width of the noise predictor.
    pub diffloss_w: usize,
    /// Number of training diffusion steps `T_diff`.
    pub diffusion_steps: usize,
    /// Initial mask ratio `m`.
    pub mask_ratio: f64,
    pub truncnorm_std: f64,
    pub schedule: NoiseSchedule,
    pub loss_masking: LossMasking,
    pub frequency_mode: FrequencyMode,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            horizon: 16,
            action_step: 8,
            obs_steps: 2,
            obs_dim: 6,
            action_dim: 2,
            state_mlp_size: 64,
            encoder_embed_dim: 512,
            decoder_embed_dim: 512,
            encoder_depth: 4,
            decoder_depth: 4,
            encoder_num_heads: 8,
            decoder_num_heads: 8,
            mlp_ratio: 4,
            diffloss_d: 3,
            diffloss_w: 1024,
            diffusion_steps: 100,
            mask_ratio: 0.7,
            truncnorm_std: 0.1,
            schedule: NoiseSchedule::Cosine,
            loss_masking: LossMasking::Masked,
            frequency_mode: FrequencyMode::Dct,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("horizon", self.horizon),
            ("action_step", self.action_step),
            ("observation_step", self.obs_steps),
            ("obs_dim", self.obs_dim),
            ("action_dim", self.action_dim),
            ("state_mlp_size", self.state_mlp_size),
            ("encoder_embed_dim", self.encoder_embed_dim),
            ("decoder_embed_dim", self.decoder_embed_dim),
            ("encoder_num_heads", self.encoder_num_heads),
            ("decoder_num_heads", self.decoder_num_heads),
            ("mlp_ratio", self.mlp_ratio),
            ("diffloss_w", self.diffloss_w),
            ("num_training_steps", self.diffusion_steps),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.action_step > self.horizon {
            return Err(Error::Config(format!(
                "action_step {} exceeds horizon {}",
                self.action_step, self.horizon
            )));
        }
        if self.encoder_embed_dim % self.encoder_num_heads != 0
            || self.decoder_embed_dim % self.decoder_num_heads != 0
        {
            return Err(Error::Config("attention heads must divide the embedding width".into()));
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return Err(Error::Config(format!("mask ratio {} outside [0, 1]", self.mask_ratio)));
        }
        if !(self.truncnorm_std > 0.0) {
            return Err(Error::Config("truncnorm std must be positive".into()));
        }
        Ok(())
    }

    /// Desk-scale shape used by the gradient checks: width 32, depth 2.
    pub fn toy(obs_dim: usize, action_dim: usize) -> Self {
        Self {
            obs_dim,
            action_dim,
            state_mlp_size: 16,
            encoder_embed_dim: 32,
            decoder_embed_dim: 32,
            encoder_depth: 2,
            decoder_depth: 2,
            encoder_num_heads: 4,
            decoder_num_heads: 4,
            mlp_ratio: 2,
            diffloss_d: 2,
            diffloss_w: 32,
            ..Self::default()
        }
    }
}
