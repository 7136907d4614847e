use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{derive_seed, EnvKind};
use crate::config::kv;
use crate::error::{Error, Result};
use crate::fsutil::{read_to_string, write_atomic};
use crate::trajectory::{parse_trajectory_csv, render_trajectory_csv, Normalization, Trajectory};

/// Noise levels used for the robustness study.
pub const NOISE_PRESETS: [f64; 3] = [0.025, 0.05, 0.1];
const MIN_EXPERT_SUCCESS: f64 = 0.95;
const MANIFEST_FORMAT: &str = "freqact-demos-1";
pub const EXPERT_NAME: &str = "scripted";

/// One recorded episode: the observation before each action and the action taken.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub env: EnvKind,
    pub seed: u64,
    pub noise_std: f64,
    pub obs: Trajectory,
    pub actions: Trajectory,
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.actions.horizon()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Training windows starting every `stride` steps.
    ///
    /// Each window holds the `obs_steps` observations ending at its start (the
    /// first observation repeats before the episode begins) and the next
    /// `horizon` actions (the last action repeats past the episode end).
    pub fn windows(&self, obs_steps: usize, horizon: usize, stride: usize) -> Result<Vec<(Vec<f64>, Trajectory)>> {
        if obs_steps == 0 || horizon == 0 || stride == 0 {
            return Err(Error::Config("window sizes and stride must be positive".into()));
        }
        let len = self.len();
        let d = self.actions.dim();
        let mut out = Vec::new();
        for start in (0..len).step_by(stride) {
            let mut obs = Vec::with_capacity(obs_steps * self.obs.dim());
            for j in 0..obs_steps {
                let t = (start + j + 1).saturating_sub(obs_steps);
                obs.extend_from_slice(self.obs.row(t));
            }
            let mut acts = Vec::with_capacity(horizon * d);
            for j in 0..horizon {
                acts.extend_from_slice(self.actions.row((start + j).min(len - 1)));
            }
            out.push((obs, Trajectory::new(horizon, d, acts)?));
        }
        Ok(out)
    }
}

/// Rolls out the scripted expert and keeps successful episodes until `n` are
/// collected. Gaussian noise of `noise_std` is added to every recorded action
/// component; the executed actions stay clean.
pub fn generate_demos(env: EnvKind, n: usize, noise_std: f64, base_seed: u64) -> Result<Vec<Demonstration>> {
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::Config(format!("noise std must be finite and >= 0, got {noise_std}")));
    }
    let noise = Normal::new(0.0, noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let mut demos = Vec::with_capacity(n);
    let mut attempts = 0u64;
    while demos.len() < n {
        let seed = derive_seed(base_seed, attempts);
        attempts += 1;
        if let Some(mut demo) = expert_episode(env, seed)? {
            if noise_std > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
                let noisy = demo.actions.values().iter().map(|v| v + noise.sample(&mut rng)).collect();
                demo.actions = Trajectory::new(demo.len(), demo.actions.dim(), noisy)?;
                demo.noise_std = noise_std;
            }
            demos.push(demo);
        }
        let rate = demos.len() as f64 / attempts as f64;
        if attempts >= 20 && rate < MIN_EXPERT_SUCCESS {
            return Err(Error::Env(format!(
                "{env} expert succeeded on {} of {attempts} episodes, below {MIN_EXPERT_SUCCESS}",
                demos.len()
            )));
        }
    }
    Ok(demos)
}

/// Clean expert episode from `seed`, or `None` if it times out.
pub fn expert_episode(env: EnvKind, seed: u64) -> Result<Option<Demonstration>> {
    let mut state = env.reset(seed);
    let mut obs = Vec::new();
    let mut acts = Vec::new();
    for _ in 0..env.max_steps() {
        let a = state.expert();
        obs.extend(state.observe());
        acts.extend_from_slice(&a);
        state.step(&a)?;
        if state.success() {
            let len = acts.len() / env.action_dim();
            return Ok(Some(Demonstration {
                env,
                seed,
                noise_std: 0.0,
                obs: Trajectory::new(len, env.obs_dim(), obs)?,
                actions: Trajectory::new(len, env.action_dim(), acts)?,
            }));
        }
    }
    Ok(None)
}

/// Min/max normalizers over every observation row and every action row.
pub fn fit_normalizers(demos: &[Demonstration]) -> Result<(Normalization, Normalization)> {
    let first = demos.first().ok_or_else(|| Error::Data("empty demonstration set".into()))?;
    let obs = Normalization::fit_min_max(first.obs.dim(), demos.iter().flat_map(|d| d.obs.rows()))?;
    let act = Normalization::fit_min_max(first.actions.dim(), demos.iter().flat_map(|d| d.actions.rows()))?;
    Ok((obs, act))
}

/// Contents of a dataset's `manifest.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub env: EnvKind,
    pub base_seed: u64,
    pub noise_std: f64,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub seeds: Vec<u64>,
    pub lengths: Vec<usize>,
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl Manifest {
    pub fn render(&self) -> String {
        kv::render([
            ("format", MANIFEST_FORMAT.to_string()),
            ("env", self.env.to_string()),
            ("expert", EXPERT_NAME.to_string()),
            ("episodes", self.seeds.len().to_string()),
            ("base_seed", self.base_seed.to_string()),
            ("noise_std", self.noise_std.to_string()),
            ("obs_dim", self.obs_dim.to_string()),
            ("action_dim", self.action_dim.to_string()),
            ("seeds", join(&self.seeds)),
            ("lengths", join(&self.lengths)),
        ])
    }

    pub fn parse(source: &str, text: &str) -> Result<Self> {
        let entries = kv::parse(source, text)?;
        let get = |key: &str| -> Result<&kv::Entry> {
            entries
                .iter()
                .find(|e| e.key == key)
                .ok_or_else(|| Error::parse(source, 0, format!("missing key {key}")))
        };
        fn num<T: std::str::FromStr>(source: &str, e: &kv::Entry) -> Result<T> {
            e.value
                .parse()
                .map_err(|_| Error::parse(source, e.line, format!("bad value {:?} for {}", e.value, e.key)))
        }
        fn list<T: std::str::FromStr>(source: &str, e: &kv::Entry) -> Result<Vec<T>> {
            if e.value.is_empty() {
                return Ok(Vec::new());
            }
            e.value
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::parse(source, e.line, format!("bad list item {s:?} in {}", e.key)))
                })
                .collect()
        }
        for e in &entries {
            let known = [
                "format", "env", "expert", "episodes", "base_seed", "noise_std", "obs_dim", "action_dim", "seeds",
                "lengths",
            ];
            if !known.contains(&e.key.as_str()) {
                return Err(Error::parse(source, e.line, format!("unknown key {}", e.key)));
            }
        }
        let format = get("format")?;
        if format.value != MANIFEST_FORMAT {
            return Err(Error::parse(source, format.line, format!("unsupported format {:?}", format.value)));
        }
        let env_e = get("env")?;
        let env: EnvKind = env_e
            .value
            .parse()
            .map_err(|_| Error::parse(source, env_e.line, format!("unknown env {:?}", env_e.value)))?;
        let expert = get("expert")?;
        if expert.value != EXPERT_NAME {
            return Err(Error::parse(source, expert.line, format!("unknown expert {:?}", expert.value)));
        }
        let episodes: usize = num(source, get("episodes")?)?;
        let noise_e = get("noise_std")?;
        let noise_std: f64 = num(source, noise_e)?;
        if !(noise_std >= 0.0) || !noise_std.is_finite() {
            return Err(Error::parse(source, noise_e.line, "noise_std must be finite and >= 0"));
        }
        let m = Self {
            env,
            base_seed: num(source, get("base_seed")?)?,
            noise_std,
            obs_dim: num(source, get("obs_dim")?)?,
            action_dim: num(source, get("action_dim")?)?,
            seeds: list(source, get("seeds")?)?,
            lengths: list(source, get("lengths")?)?,
        };
        if m.seeds.len() != episodes || m.lengths.len() != episodes {
            return Err(Error::parse(
                source,
                get("episodes")?.line,
                format!("{episodes} episodes but {} seeds and {} lengths", m.seeds.len(), m.lengths.len()),
            ));
        }
        if m.obs_dim != env.obs_dim() || m.action_dim != env.action_dim() {
            return Err(Error::parse(source, 0, format!("dimensions do not match {env}")));
        }
        if m.lengths.contains(&0) {
            return Err(Error::parse(source, get("lengths")?.line, "episode of length 0"));
        }
        Ok(m)
    }
}

/// A directory of per-episode `obs.csv` / `actions.csv` pairs plus `manifest.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub base_seed: u64,
    pub demos: Vec<Demonstration>,
}

fn episode_dir(i: usize) -> String {
    format!("episode_{i:04}")
}

impl Dataset {
    pub fn env(&self) -> Result<EnvKind> {
        self.demos
            .first()
            .map(|d| d.env)
            .ok_or_else(|| Error::Data("empty demonstration set".into()))
    }

    pub fn manifest(&self) -> Result<Manifest> {
        let env = self.env()?;
        Ok(Manifest {
            env,
            base_seed: self.base_seed,
            noise_std: self.demos[0].noise_std,
            obs_dim: env.obs_dim(),
            action_dim: env.action_dim(),
            seeds: self.demos.iter().map(|d| d.seed).collect(),
            lengths: self.demos.iter().map(Demonstration::len).collect(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let manifest = self.manifest()?;
        for (i, d) in self.demos.iter().enumerate() {
            let ep = dir.join(episode_dir(i));
            write_atomic(&ep.join("obs.csv"), render_trajectory_csv(&d.obs).as_bytes())?;
            write_atomic(&ep.join("actions.csv"), render_trajectory_csv(&d.actions).as_bytes())?;
        }
        write_atomic(&dir.join("manifest.txt"), manifest.render().as_bytes())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let mpath = dir.join("manifest.txt");
        let manifest = Manifest::parse(&mpath.display().to_string(), &read_to_string(&mpath)?)?;
        let mut demos = Vec::with_capacity(manifest.seeds.len());
        for (i, (&seed, &len)) in manifest.seeds.iter().zip(&manifest.lengths).enumerate() {
            let ep = dir.join(episode_dir(i));
            let load = |name: &str, dim: usize| -> Result<Trajectory> {
                let p = ep.join(name);
                let src = p.display().to_string();
                let t = parse_trajectory_csv(&src, &read_to_string(&p)?)?;
                if t.horizon() != len || t.dim() != dim {
                    return Err(Error::Data(format!(
                        "{src}: {}x{} does not match manifest {len}x{dim}",
                        t.horizon(),
                        t.dim()
                    )));
                }
                Ok(t)
            };
            demos.push(Demonstration {
                env: manifest.env,
                seed,
                noise_std: manifest.noise_std,
                obs: load("obs.csv", manifest.obs_dim)?,
                actions: load("actions.csv", manifest.action_dim)?,
            });
        }
        if demos.is_empty() {
            return Err(Error::Data(format!("{}: no episodes", mpath.display())));
        }
        Ok(Self {
            base_seed: manifest.base_seed,
            demos,
        })
    }
}
