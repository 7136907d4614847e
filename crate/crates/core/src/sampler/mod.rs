//! Coarse-to-fine inference: DDIM sampling from the noise predictor and the
//! iterative refeed of low-pass reconstructions.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{check_range, Error, Result};
use crate::policy::{reveal_to_count, DiffusionSchedule, FreqPolicy, FrequencyMode, LatentTokens, MaskVector};
use crate::trajectory::{dct_forward, idct_k, Spectrum, Trajectory};

/// Increasing coefficient counts `l_0 = 0 < l_1 < ... < l_N = T`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FreqSchedule {
    levels: Vec<usize>,
}

impl FreqSchedule {
    pub fn new(levels: Vec<usize>, horizon: usize) -> Result<Self> {
        if levels.len() < 2 {
            return Err(Error::Config("frequency schedule needs at least two levels".into()));
        }
        if levels[0] != 0 || *levels.last().unwrap() != horizon {
            return Err(Error::Config(format!(
                "frequency schedule must run from 0 to {horizon}, got {levels:?}"
            )));
        }
        if levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!("frequency schedule not increasing: {levels:?}")));
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn n_iter(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn horizon(&self) -> usize {
        *self.levels.last().unwrap()
    }
}

/// Evenly spaced levels, `l_i = round(i * T / N_iter)`.
pub fn default_schedule(horizon: usize, n_iter: usize) -> Result<FreqSchedule> {
    if n_iter == 0 || n_iter > horizon {
        return Err(Error::Config(format!(
            "iteration count {n_iter} must lie in [1, {horizon}]"
        )));
    }
    let levels = (0..=n_iter)
        .map(|i| ((i * horizon) as f64 / n_iter as f64).round() as usize)
        .collect();
    FreqSchedule::new(levels, horizon)
}

/// Fraction of positions still hidden after inference step `step`.
pub fn cosine_mask_ratio(step: usize, n_iter: usize) -> Result<f64> {
    if n_iter == 0 || step >= n_iter {
        return Err(Error::Range {
            what: "sampling step",
            value: step as f64,
            min: 0.0,
            max: n_iter.saturating_sub(1) as f64,
        });
    }
    Ok((FRAC_PI_2 * (step + 1) as f64 / n_iter as f64).cos())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub ddim_steps: usize,
    pub eta: f64,
    pub n_iter: usize,
    /// Clamp the predicted clean sample to `[-c, c]` at every DDIM step.
    pub clip_sample: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            ddim_steps: 10,
            eta: 0.0,
            n_iter: 4,
            clip_sample: Some(1.0),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, diffusion_steps: usize) -> Result<()> {
        if self.ddim_steps == 0 || self.ddim_steps > diffusion_steps {
            return Err(Error::Config(format!(
                "ddim steps {} must lie in [1, {diffusion_steps}]",
                self.ddim_steps
            )));
        }
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::Config(format!("eta must be a finite value >= 0, got {}", self.eta)));
        }
        if self.n_iter == 0 {
            return Err(Error::Config("n_iter must be positive".into()));
        }
        if let Some(c) = self.clip_sample {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip_sample must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// Noise-predictor evaluations per generated chunk.
pub fn nfe_count(schedule: &FreqSchedule, cfg: &SamplerConfig) -> usize {
    schedule.n_iter() * cfg.ddim_steps
}

/// Anything that predicts the noise in a full chunk given a latent condition.
pub trait NoisePredictor {
    fn predict_noise(&self, x_t: &Trajectory, t: usize, k: usize, z: &LatentTokens) -> Result<Trajectory>;
}

impl NoisePredictor for FreqPolicy {
    fn predict_noise(&self, x_t: &Trajectory, t: usize, k: usize, z: &LatentTokens) -> Result<Trajectory> {
        FreqPolicy::predict_noise(self, x_t, t, k, z)
    }
}

/// Diffusion steps visited by DDIM, descending: `T_diff, ..., T_diff / S`.
pub fn ddim_timesteps(diffusion_steps: usize, ddim_steps: usize) -> Vec<usize> {
    (1..=ddim_steps).rev().map(|i| i * diffusion_steps / ddim_steps).collect()
}

/// Runs the DDIM reverse process from standard-normal noise.
#[allow(clippy::too_many_arguments)]
pub fn ddim_sample<P: NoisePredictor + ?Sized>(
    predictor: &P,
    schedule: &DiffusionSchedule,
    z: &LatentTokens,
    k: usize,
    horizon: usize,
    dim: usize,
    cfg: &SamplerConfig,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    cfg.validate(schedule.steps())?;
    let mut x: Vec<f64> = (0..horizon * dim).map(|_| StandardNormal.sample(rng)).collect();
    let steps = ddim_timesteps(schedule.steps(), cfg.ddim_steps);
    for (i, &t) in steps.iter().enumerate() {
        let ab = schedule.alpha_bar(t);
        let ab_prev = steps.get(i + 1).map_or(1.0, |&p| schedule.alpha_bar(p));
        let x_t = Trajectory::new(horizon, dim, x)?;
        let eps = predictor.predict_noise(&x_t, t, k, z)?;
        let eps = eps.values();
        let sigma = cfg.eta * ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).sqrt();
        let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
        x = x_t
            .values()
            .iter()
            .zip(eps)
            .map(|(xt, e)| {
                let mut x0 = (xt - (1.0 - ab).sqrt() * e) / ab.sqrt();
                if let Some(c) = cfg.clip_sample {
                    x0 = x0.clamp(-c, c);
                }
                ab_prev.sqrt() * x0 + dir * e
            })
            .collect();
        if sigma > 0.0 {
            for v in &mut x {
                let n: f64 = StandardNormal.sample(rng);
                *v += sigma * n;
            }
        }
        if let Some(j) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: j / dim, col: j % dim });
        }
    }
    Trajectory::new(horizon, dim, x)
}

/// State of one coarse-to-fine iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// Level `l_i` the model was conditioned on.
    pub level: usize,
    /// Hidden positions while generating at this step.
    pub masked: usize,
    /// Tokens fed to the encoder at this step (band-limited to `level` under the transform).
    pub tokens: Trajectory,
    /// Full-spectrum candidate produced at this step.
    pub candidate: Trajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub actions: Trajectory,
    pub iterations: Vec<IterationRecord>,
    pub nfe: usize,
}

/// Generates a normalized action chunk from `T_o` normalized observations.
pub fn hierarchical_generate(
    model: &FreqPolicy,
    obs: &[f64],
    schedule: &FreqSchedule,
    cfg: &SamplerConfig,
    rng: &mut impl Rng,
) -> Result<Generation> {
    let c = &model.config;
    let (t, d) = (c.horizon, c.action_dim);
    if schedule.horizon() != t {
        return Err(Error::Config(format!(
            "schedule ends at {} but the horizon is {t}",
            schedule.horizon()
        )));
    }
    if schedule.n_iter() != cfg.n_iter {
        return Err(Error::Config(format!(
            "schedule has {} iterations, sampler expects {}",
            schedule.n_iter(),
            cfg.n_iter
        )));
    }
    cfg.validate(model.schedule.steps())?;
    let features = model.observation_features(obs)?;
    let mut tokens = Trajectory::zeros(t, d)?;
    let mut mask = MaskVector::full(t);
    let mut iterations = Vec::with_capacity(schedule.n_iter());
    let levels = schedule.levels();
    for step in 0..schedule.n_iter() {
        let k = levels[step];
        let z = model.latent(&features, &tokens, k, &mask)?;
        let candidate = ddim_sample(model, &model.schedule, &z, k, t, d, cfg, rng)?;
        let last = step + 1 == schedule.n_iter();
        let next = if last {
            candidate.clone()
        } else {
            match c.frequency_mode {
                FrequencyMode::Dct => idct_k(&dct_forward(&candidate)?, levels[step + 1])?,
                FrequencyMode::Identity => candidate.clone(),
            }
        };
        iterations.push(IterationRecord {
            level: k,
            masked: mask.count(),
            tokens: std::mem::replace(&mut tokens, next),
            candidate,
        });
        let ratio = cosine_mask_ratio(step, schedule.n_iter())?;
        let count = ((ratio * t as f64).round() as usize).min(mask.count());
        mask = reveal_to_count(&mask, count, rng);
    }
    Ok(Generation {
        actions: tokens,
        iterations,
        nfe: nfe_count(schedule, cfg),
    })
}

/// Largest `|X_j|` over `j >= level` and all dimensions.
pub fn band_limit_residual(spec: &Spectrum, level: usize) -> f64 {
    (level..spec.horizon())
        .flat_map(|i| spec.row(i).iter().map(|v| v.abs()))
        .fold(0.0, f64::max)
}

/// Mean `|X_j - Y_j|` over the retained coefficients `j < level` and all dimensions.
pub fn spectral_distance(a: &Trajectory, b: &Trajectory, level: usize) -> Result<f64> {
    if a.horizon() != b.horizon() || a.dim() != b.dim() {
        return Err(Error::shape("spectral_distance", "trajectory shapes differ"));
    }
    check_range("level", level as f64, 1.0, a.horizon() as f64)?;
    let (sa, sb) = (dct_forward(a)?, dct_forward(b)?);
    let mut total = 0.0;
    for i in 0..level {
        total += sa.row(i).iter().zip(sb.row(i)).map(|(x, y)| (x - y).abs()).sum::<f64>();
    }
    Ok(total / (level * a.dim()) as f64)
}

/// One JSON-lines record per generated chunk.
#[derive(Debug, Clone, Serialize)]
pub struct GenerationRecord {
    pub episode: usize,
    pub seed: u64,
    pub schedule: Vec<usize>,
    pub nfe: usize,
    pub wall_ms: f64,
    /// L2 norm of each iteration's candidate spectrum.
    pub spectral_norms: Vec<f64>,
    pub masked_counts: Vec<usize>,
}

impl GenerationRecord {
    pub fn new(episode: usize, seed: u64, schedule: &FreqSchedule, generation: &Generation, wall_ms: f64) -> Result<Self> {
        let spectral_norms = generation
            .iterations
            .iter()
            .map(|it| Ok(dct_forward(&it.candidate)?.coeffs().iter().map(|v| v * v).sum::<f64>().sqrt()))
            .collect::<Result<_>>()?;
        Ok(Self {
            episode,
            seed,
            schedule: schedule.levels().to_vec(),
            nfe: generation.nfe,
            wall_ms,
            spectral_norms,
            masked_counts: generation.iterations.iter().map(|it| it.masked).collect(),
        })
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}
