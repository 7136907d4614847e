use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::eval::{rollout_policy, run_episode, ChunkPolicy, DiffusionAgent, EvalReport};
use super::{derive_seed, EnvKind};
use crate::error::{Error, Result};
use crate::sampler::{default_schedule, nfe_count};

/// One point of the cost/success trade-off.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub n_iter: usize,
    pub nfe: usize,
    /// Mean wall-clock per generated chunk.
    pub wall_ms_mean: f64,
    pub success_rate: f64,
}

pub const PARETO_HEADER: &str = "n_iter,nfe,wall_ms_mean,success_rate";

pub fn render_pareto_csv(rows: &[BenchRow]) -> String {
    let mut out = format!("{PARETO_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{:.4},{}\n", r.n_iter, r.nfe, r.wall_ms_mean, r.success_rate));
    }
    out
}

struct Timed<'a> {
    inner: &'a DiffusionAgent,
    times: Mutex<Vec<f64>>,
}

impl ChunkPolicy for Timed<'_> {
    fn obs_steps(&self) -> usize {
        self.inner.obs_steps()
    }

    fn action_step(&self) -> usize {
        self.inner.action_step()
    }

    fn chunk(&self, obs: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
        let t0 = Instant::now();
        let out = self.inner.chunk(obs, rng);
        self.times.lock().expect("timer lock").push(t0.elapsed().as_secs_f64() * 1e3);
        out
    }
}

/// The agent with its schedule and iteration count replaced.
pub fn with_iterations(agent: &DiffusionAgent, n_iter: usize) -> Result<DiffusionAgent> {
    let mut a = agent.clone();
    a.schedule = default_schedule(agent.model.config.horizon, n_iter)?;
    a.sampler.n_iter = n_iter;
    Ok(a)
}

/// Sweeps the iteration count, running episodes sequentially so that chunk
/// timings are not disturbed by other work.
pub fn bench_sweep(agent: &DiffusionAgent, env: EnvKind, n_iters: &[usize], episodes: usize, base_seed: u64) -> Result<Vec<BenchRow>> {
    if n_iters.is_empty() || episodes == 0 {
        return Err(Error::Config("bench needs at least one iteration count and one episode".into()));
    }
    n_iters
        .iter()
        .map(|&n| {
            let a = with_iterations(agent, n)?;
            let timed = Timed {
                inner: &a,
                times: Mutex::new(Vec::new()),
            };
            let mut successes = 0;
            for i in 0..episodes {
                if run_episode(env, &timed, i, derive_seed(base_seed, i as u64))?.success {
                    successes += 1;
                }
            }
            let times = timed.times.into_inner().expect("timer lock");
            Ok(BenchRow {
                n_iter: n,
                nfe: nfe_count(&a.schedule, &a.sampler),
                wall_ms_mean: times.iter().sum::<f64>() / times.len().max(1) as f64,
                success_rate: successes as f64 / episodes as f64,
            })
        })
        .collect()
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
pub fn linear_fit_r2(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Data("a fit needs at least two paired points".into()));
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Data("x values are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((slope, intercept, r2))
}

/// `seeds` independent evaluations of `episodes` episodes each.
pub fn evaluate_seeds<P: ChunkPolicy + ?Sized>(
    env: EnvKind,
    policy: &P,
    episodes: usize,
    seeds: usize,
    base_seed: u64,
    config: &BTreeMap<String, String>,
) -> Result<Vec<EvalReport>> {
    (0..seeds)
        .map(|s| {
            let mut cfg = config.clone();
            cfg.insert("eval.seed_index".into(), s.to_string());
            rollout_policy(env, policy, episodes, derive_seed(base_seed, s as u64), cfg)
        })
        .collect()
}
