//! Toy control tasks, scripted experts, demonstration datasets and evaluation.

mod bench;
mod demo;
mod eval;
mod push;
mod reach;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use bench::{
    bench_sweep, evaluate_seeds, linear_fit_r2, render_pareto_csv, with_iterations, BenchRow, PARETO_HEADER,
};
pub use demo::{
    expert_episode, fit_normalizers, generate_demos, Dataset, Demonstration, Manifest, EXPERT_NAME, NOISE_PRESETS,
};
pub use eval::{
    coarse_to_fine_distances, compressed_level, compression_curve_csv, expert_chunk, noise_robustness_suite, replay,
    replay_clean, replay_compressed, rollout_policy, run_episode, training_samples, ChunkPolicy, DiffusionAgent,
    EpisodeResult, EvalReport, RandomPolicy, RobustnessRow,
};
pub use push::PushTLite;
pub use reach::Reach2d;

/// Integration step of both point-mass tasks.
pub const DT: f64 = 0.1;

/// Mixes a base seed and an index into an independent 64-bit seed (splitmix64).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn clamp_action(a: &[f64]) -> [f64; 2] {
    [a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EnvKind {
    Reach2d,
    PushTLite,
}

impl std::str::FromStr for EnvKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reach2d" => Ok(Self::Reach2d),
            "pusht-lite" | "pushT-lite" => Ok(Self::PushTLite),
            _ => Err(Error::Config(format!("unknown environment {s:?} (reach2d|pusht-lite)"))),
        }
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Reach2d => "reach2d",
            Self::PushTLite => "pusht-lite",
        })
    }
}

impl EnvKind {
    pub fn obs_dim(self) -> usize {
        match self {
            Self::Reach2d => 6,
            Self::PushTLite => 8,
        }
    }

    pub fn action_dim(self) -> usize {
        2
    }

    pub fn max_steps(self) -> usize {
        match self {
            Self::Reach2d => reach::MAX_STEPS,
            Self::PushTLite => push::MAX_STEPS,
        }
    }

    /// Initial state drawn from `seed`.
    pub fn reset(self, seed: u64) -> ToyEnv {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            Self::Reach2d => ToyEnv::Reach2d(Reach2d::reset(&mut rng)),
            Self::PushTLite => ToyEnv::PushTLite(PushTLite::reset(&mut rng)),
        }
    }
}

/// A running episode of either task. Dynamics are pure in (state, action).
#[derive(Debug, Clone, PartialEq)]
pub enum ToyEnv {
    Reach2d(Reach2d),
    PushTLite(PushTLite),
}

impl ToyEnv {
    pub fn kind(&self) -> EnvKind {
        match self {
            Self::Reach2d(_) => EnvKind::Reach2d,
            Self::PushTLite(_) => EnvKind::PushTLite,
        }
    }

    pub fn observe(&self) -> Vec<f64> {
        match self {
            Self::Reach2d(e) => e.observe(),
            Self::PushTLite(e) => e.observe(),
        }
    }

    pub fn step(&mut self, action: &[f64]) -> Result<()> {
        if action.len() != 2 {
            return Err(Error::Env(format!("expected a 2-d action, got {}", action.len())));
        }
        if action.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite action {action:?}")));
        }
        match self {
            Self::Reach2d(e) => e.step(action),
            Self::PushTLite(e) => e.step(action),
        }
        Ok(())
    }

    pub fn success(&self) -> bool {
        match self {
            Self::Reach2d(e) => e.success(),
            Self::PushTLite(e) => e.success(),
        }
    }

    pub fn expert(&self) -> Vec<f64> {
        match self {
            Self::Reach2d(e) => e.expert(),
            Self::PushTLite(e) => e.expert(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expert_rate(kind: EnvKind, n: u64) -> (f64, f64) {
        let mut ok = 0;
        let mut steps = 0;
        for seed in 0..n {
            let mut env = kind.reset(seed);
            for s in 0..kind.max_steps() {
                let a = env.expert();
                env.step(&a).unwrap();
                if env.success() {
                    ok += 1;
                    steps += s + 1;
                    break;
                }
            }
        }
        (ok as f64 / n as f64, steps as f64 / ok.max(1) as f64)
    }

    #[test]
    fn experts_succeed() {
        let (r, len) = expert_rate(EnvKind::Reach2d, 500);
        assert!(r >= 0.99, "reach2d expert {r}, mean length {len}");
        let (p, len) = expert_rate(EnvKind::PushTLite, 500);
        assert!(p >= 0.95, "pusht-lite expert {p}, mean length {len}");
        eprintln!("expert success: reach2d {r}, pusht-lite {p} (mean length {len})");
    }

    #[test]
    fn reset_is_seeded() {
        for kind in [EnvKind::Reach2d, EnvKind::PushTLite] {
            assert_eq!(kind.reset(5), kind.reset(5));
            assert_ne!(kind.reset(5), kind.reset(6));
            assert_eq!(kind.reset(1).observe().len(), kind.obs_dim());
        }
    }

    #[test]
    fn actions_are_validated_and_clamped() {
        let mut env = EnvKind::Reach2d.reset(0);
        assert!(env.step(&[0.0]).is_err());
        assert!(matches!(env.step(&[f64::NAN, 0.0]), Err(Error::Numeric(_))));
        let before = env.observe();
        env.step(&[5.0, -5.0]).unwrap();
        let after = env.observe();
        assert_eq!(&after[2..4], &[1.0, -1.0]);
        assert!((after[0] - (before[0] + DT).min(1.0)).abs() < 1e-15);
    }

    #[test]
    fn pushing_moves_the_block() {
        let mut env = PushTLite {
            agent: [-0.2, 0.0],
            block: [0.0, 0.0],
            angle: 0.0,
            goal: [0.5, 0.0],
            goal_angle: 0.0,
        };
        for _ in 0..5 {
            env.step(&[1.0, 0.0]);
        }
        assert!(env.block[0] > 0.1);
        assert!(env.angle.abs() < 1e-12, "head-on push does not spin");
        env.step(&[1.0, 0.5]);
        assert!(env.angle < 0.0, "pushing up and right from the left spins clockwise");
    }
}
