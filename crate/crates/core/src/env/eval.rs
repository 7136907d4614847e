use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::demo::Demonstration;
use super::{derive_seed, EnvKind};
use crate::error::{Error, Result};
use crate::policy::{FreqPolicy, TrainSample};
use crate::sampler::{hierarchical_generate, spectral_distance, FreqSchedule, Generation, SamplerConfig};
use crate::trajectory::{low_pass, Normalization, Trajectory};

/// Maps an observation history to a chunk of raw actions.
pub trait ChunkPolicy: Sync {
    fn obs_steps(&self) -> usize;
    /// Actions executed from each chunk before replanning.
    fn action_step(&self) -> usize;
    /// `obs` holds `obs_steps` raw observations, oldest first.
    fn chunk(&self, obs: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>>;
}

/// Trained network plus the normalizers and sampler settings used at inference.
#[derive(Debug, Clone)]
pub struct DiffusionAgent {
    pub model: FreqPolicy,
    pub obs_norm: Normalization,
    pub act_norm: Normalization,
    pub schedule: FreqSchedule,
    pub sampler: SamplerConfig,
}

impl DiffusionAgent {
    pub fn normalize_obs(&self, obs: &[f64]) -> Vec<f64> {
        let mut v = obs.to_vec();
        for row in v.chunks_mut(self.obs_norm.dim()) {
            self.obs_norm.normalize_row(row);
        }
        v
    }

    /// Runs the coarse-to-fine sampler on raw observations; actions stay normalized.
    pub fn generate(&self, obs: &[f64], rng: &mut ChaCha8Rng) -> Result<Generation> {
        hierarchical_generate(&self.model, &self.normalize_obs(obs), &self.schedule, &self.sampler, rng)
    }
}

impl ChunkPolicy for DiffusionAgent {
    fn obs_steps(&self) -> usize {
        self.model.config.obs_steps
    }

    fn action_step(&self) -> usize {
        self.model.config.action_step
    }

    fn chunk(&self, obs: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
        let g = self.generate(obs, rng)?;
        Ok(g.actions
            .rows()
            .map(|r| {
                let mut a = r.to_vec();
                self.act_norm.denormalize_row(&mut a);
                a
            })
            .collect())
    }
}

/// Uniform random actions; the chance baseline.
#[derive(Debug, Clone, Copy)]
pub struct RandomPolicy {
    pub obs_steps: usize,
    pub action_step: usize,
}

impl ChunkPolicy for RandomPolicy {
    fn obs_steps(&self) -> usize {
        self.obs_steps
    }

    fn action_step(&self) -> usize {
        self.action_step
    }

    fn chunk(&self, _obs: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
        Ok((0..self.action_step)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeResult {
    pub index: usize,
    pub seed: u64,
    pub success: bool,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub env: String,
    pub success_rate: f64,
    pub mean_episode_length: f64,
    pub episodes: Vec<EpisodeResult>,
    pub config: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn from_episodes(env: EnvKind, episodes: Vec<EpisodeResult>, config: BTreeMap<String, String>) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::Data("a report needs at least one episode".into()));
        }
        let n = episodes.len() as f64;
        Ok(Self {
            env: env.to_string(),
            success_rate: episodes.iter().filter(|e| e.success).count() as f64 / n,
            mean_episode_length: episodes.iter().map(|e| e.steps as f64).sum::<f64>() / n,
            episodes,
            config,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let ok = self.episodes.iter().filter(|e| e.success).count();
        let mut out = format!(
            "env            {}\nepisodes       {}\nsuccesses      {}\nsuccess rate   {:.3}\nmean length    {:.2}\n",
            self.env,
            self.episodes.len(),
            ok,
            self.success_rate,
            self.mean_episode_length
        );
        for (k, v) in &self.config {
            out.push_str(&format!("{k:<14} {v}\n"));
        }
        out
    }
}

/// Runs one closed-loop episode with receding-horizon execution.
pub fn run_episode<P: ChunkPolicy + ?Sized>(env: EnvKind, policy: &P, index: usize, seed: u64) -> Result<EpisodeResult> {
    let mut state = env.reset(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let t_o = policy.obs_steps();
    let mut history: Vec<Vec<f64>> = vec![state.observe(); t_o];
    let mut steps = 0;
    while steps < env.max_steps() {
        let obs: Vec<f64> = history.concat();
        let chunk = policy.chunk(&obs, &mut rng)?;
        for a in chunk.iter().take(policy.action_step().max(1)) {
            state.step(a)?;
            steps += 1;
            history.remove(0);
            history.push(state.observe());
            if state.success() {
                return Ok(EpisodeResult {
                    index,
                    seed,
                    success: true,
                    steps,
                });
            }
            if steps >= env.max_steps() {
                break;
            }
        }
    }
    Ok(EpisodeResult {
        index,
        seed,
        success: false,
        steps,
    })
}

/// Closed-loop evaluation over `n_episodes` episodes seeded from `base_seed`.
/// Episodes run in parallel; results are ordered by episode index.
pub fn rollout_policy<P: ChunkPolicy + ?Sized>(
    env: EnvKind,
    policy: &P,
    n_episodes: usize,
    base_seed: u64,
    config: BTreeMap<String, String>,
) -> Result<EvalReport> {
    let episodes = (0..n_episodes)
        .into_par_iter()
        .map(|i| run_episode(env, policy, i, derive_seed(base_seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_episodes(env, episodes, config)
}

/// Replays `actions` open loop from the demo's initial state.
pub fn replay(demo: &Demonstration, actions: &Trajectory) -> Result<EpisodeResult> {
    let mut state = demo.env.reset(demo.seed);
    for (t, a) in actions.rows().enumerate() {
        state.step(a)?;
        if state.success() {
            return Ok(EpisodeResult {
                index: 0,
                seed: demo.seed,
                success: true,
                steps: t + 1,
            });
        }
    }
    Ok(EpisodeResult {
        index: 0,
        seed: demo.seed,
        success: false,
        steps: actions.horizon(),
    })
}

/// Coefficient count kept when compressing an `n`-step sequence to fraction `p`.
pub fn compressed_level(p: f64, n: usize) -> usize {
    ((p * n as f64).round() as usize).clamp(1, n)
}

/// Replays every demo after keeping the lowest `max(1, round(p N))` cosine
/// coefficients of its whole action sequence.
pub fn replay_compressed(demos: &[Demonstration], p: f64) -> Result<EvalReport> {
    let env = demos.first().ok_or_else(|| Error::Data("empty demonstration set".into()))?.env;
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Range {
            what: "frequency ratio",
            value: p,
            min: 0.0,
            max: 1.0,
        });
    }
    let episodes = demos
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let k = compressed_level(p, d.len());
            let mut r = replay(d, &low_pass(&d.actions, k)?)?;
            r.index = i;
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut config = BTreeMap::new();
    config.insert("frequency_ratio".to_string(), p.to_string());
    EvalReport::from_episodes(env, episodes, config)
}

/// Replays the recorded actions unchanged.
pub fn replay_clean(demos: &[Demonstration]) -> Result<EvalReport> {
    let env = demos.first().ok_or_else(|| Error::Data("empty demonstration set".into()))?.env;
    let episodes = demos
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let mut r = replay(d, &d.actions)?;
            r.index = i;
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_episodes(env, episodes, BTreeMap::new())
}

/// `p,success_rate` rows for a sweep of frequency ratios.
pub fn compression_curve_csv(demos: &[Demonstration], ratios: &[f64]) -> Result<String> {
    let mut out = String::from("p,success_rate\n");
    for &p in ratios {
        let r = replay_compressed(demos, p)?;
        out.push_str(&format!("{p},{}\n", r.success_rate));
    }
    Ok(out)
}

/// One condition of the noise-robustness comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessRow {
    pub noise_std: f64,
    pub success_rate: f64,
    /// Percent change relative to the clean-data model.
    pub relative_change: f64,
}

impl RobustnessRow {
    /// `value^{+x.x%}` with the success rate in percent.
    pub fn render(&self) -> String {
        format!("{:.1}^{{{:+.1}%}}", 100.0 * self.success_rate, self.relative_change)
    }
}

/// Success per noise level relative to the clean (`std = 0`) condition.
pub fn noise_robustness_suite(conditions: &[(f64, EvalReport)]) -> Result<Vec<RobustnessRow>> {
    let clean = conditions
        .iter()
        .filter(|(s, _)| *s == 0.0)
        .collect::<Vec<_>>();
    if clean.len() != 1 {
        return Err(Error::Data(format!("need exactly one clean condition, got {}", clean.len())));
    }
    let base = &clean[0].1;
    let mut stds: Vec<f64> = conditions.iter().map(|(s, _)| *s).collect();
    stds.sort_by(f64::total_cmp);
    if stds.windows(2).any(|w| w[0] == w[1]) || stds.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::Data("noise levels must be distinct and >= 0".into()));
    }
    if conditions.iter().any(|(_, r)| r.env != base.env) {
        return Err(Error::Data("conditions evaluated on different environments".into()));
    }
    let mut rows: Vec<RobustnessRow> = conditions
        .iter()
        .map(|(s, r)| RobustnessRow {
            noise_std: *s,
            success_rate: r.success_rate,
            relative_change: if *s == 0.0 {
                0.0
            } else if base.success_rate > 0.0 {
                100.0 * (r.success_rate - base.success_rate) / base.success_rate
            } else {
                0.0
            },
        })
        .collect();
    rows.sort_by(|a, b| a.noise_std.total_cmp(&b.noise_std));
    Ok(rows)
}

/// Builds normalized training windows from demonstrations.
pub fn training_samples(
    demos: &[Demonstration],
    obs_norm: &Normalization,
    act_norm: &Normalization,
    obs_steps: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<TrainSample>> {
    let mut out = Vec::new();
    for d in demos {
        for (mut obs, acts) in d.windows(obs_steps, horizon, stride)? {
            for row in obs.chunks_mut(obs_norm.dim()) {
                obs_norm.normalize_row(row);
            }
            let mut a = acts.into_values();
            for row in a.chunks_mut(act_norm.dim()) {
                act_norm.normalize_row(row);
            }
            out.push(TrainSample {
                obs,
                actions: Trajectory::new(horizon, act_norm.dim(), a)?,
            });
        }
    }
    Ok(out)
}

/// Expert actions for the first `horizon` steps from an initial state, padded
/// with the last action after success.
pub fn expert_chunk(env: EnvKind, seed: u64, horizon: usize) -> Result<Trajectory> {
    let mut state = env.reset(seed);
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(horizon);
    while acts.len() < horizon {
        if state.success() {
            let last = acts.last().cloned().unwrap_or_else(|| vec![0.0; env.action_dim()]);
            acts.push(last);
            continue;
        }
        let a = state.expert();
        state.step(&a)?;
        acts.push(a);
    }
    Trajectory::from_rows(&acts)
}

/// Per-iteration spectral distances between the sampler's intermediates and
/// the expert chunk from the same initial state, one row per episode.
///
/// Entry `i` compares the tokens conditioned on level `l_{i+1}` (the final
/// candidate for the last entry) with the expert over the lowest `l_{i+1}`
/// coefficients.
pub fn coarse_to_fine_distances(agent: &DiffusionAgent, env: EnvKind, n_episodes: usize, base_seed: u64) -> Result<Vec<Vec<f64>>> {
    let levels = agent.schedule.levels().to_vec();
    let horizon = agent.model.config.horizon;
    (0..n_episodes)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(base_seed, i as u64);
            let state = env.reset(seed);
            let obs = vec![state.observe(); agent.model.config.obs_steps].concat();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
            let g = agent.generate(&obs, &mut rng)?;
            let mut expert = expert_chunk(env, seed, horizon)?.into_values();
            for row in expert.chunks_mut(agent.act_norm.dim()) {
                agent.act_norm.normalize_row(row);
            }
            let expert = Trajectory::new(horizon, agent.act_norm.dim(), expert)?;
            let n = g.iterations.len();
            (1..=n)
                .map(|i| {
                    let current = if i < n { &g.iterations[i].tokens } else { &g.actions };
                    spectral_distance(current, &expert, levels[i])
                })
                .collect()
        })
        .collect()
}
