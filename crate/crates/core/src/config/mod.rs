//! Run configuration: flat `section.key = value` text validated against a
//! fixed schema. Unknown keys are errors.

pub mod kv;

use std::collections::BTreeMap;

use crate::autodiff::AdamWConfig;
use crate::env::EnvKind;
use crate::error::{Error, Result};
use crate::policy::{FrequencyMode, LossMasking, NoiseSchedule, PolicyConfig, TrainerConfig};
use crate::sampler::{default_schedule, FreqSchedule, SamplerConfig};

#[derive(Debug, Clone, Copy)]
enum Kind {
    Int { min: u64 },
    Float { min: f64, max: f64 },
    Choice(&'static [&'static str]),
    FloatList,
    IntList,
    Ddim,
    OptionalFloat,
    Pair,
    Text,
}

struct Key {
    name: &'static str,
    default: &'static str,
    kind: Kind,
}

const fn key(name: &'static str, default: &'static str, kind: Kind) -> Key {
    Key { name, default, kind }
}

const INF: f64 = f64::INFINITY;

static SCHEMA: &[Key] = &[
    key("run.seed", "0", Kind::Int { min: 0 }),
    key("run.env", "reach2d", Kind::Choice(&["reach2d", "pusht-lite"])),
    key("data.path", "", Kind::Text),
    key("data.episodes", "64", Kind::Int { min: 1 }),
    key("data.noise_std", "0", Kind::Float { min: 0.0, max: INF }),
    key("data.seed", "0", Kind::Int { min: 0 }),
    key("data.stride", "1", Kind::Int { min: 1 }),
    key("policy.horizon", "16", Kind::Int { min: 1 }),
    key("policy.action_step", "8", Kind::Int { min: 1 }),
    key("policy.observation_step", "2", Kind::Int { min: 1 }),
    key("policy.state_mlp_size", "64", Kind::Int { min: 1 }),
    key("policy.encoder_embed_dim", "512", Kind::Int { min: 1 }),
    key("policy.encoder_depth", "4", Kind::Int { min: 0 }),
    key("policy.encoder_num_heads", "8", Kind::Int { min: 1 }),
    key("policy.decoder_embed_dim", "512", Kind::Int { min: 1 }),
    key("policy.decoder_depth", "4", Kind::Int { min: 0 }),
    key("policy.decoder_num_heads", "8", Kind::Int { min: 1 }),
    key("policy.mlp_ratio", "4", Kind::Int { min: 1 }),
    key("policy.diffloss_d", "3", Kind::Int { min: 0 }),
    key("policy.diffloss_w", "1024", Kind::Int { min: 1 }),
    key("policy.num_training_steps", "100", Kind::Int { min: 1 }),
    key("mask.initial_ratio", "0.7", Kind::Float { min: 0.0, max: 1.0 }),
    key("mask.truncnorm_std", "0.1", Kind::Float { min: 1e-12, max: INF }),
    key("diffusion.schedule", "cosine", Kind::Choice(&["cosine", "linear"])),
    key("loss.masking", "masked", Kind::Choice(&["masked", "full"])),
    key("frequency.mode", "dct", Kind::Choice(&["dct", "none"])),
    key("train.batchsize", "128", Kind::Int { min: 1 }),
    key("train.steps", "3000", Kind::Int { min: 1 }),
    key("train.optimizer", "adamw", Kind::Choice(&["adamw"])),
    key("train.learning_rate", "1e-4", Kind::Float { min: 1e-300, max: INF }),
    key("train.betas", "0.95,0.999", Kind::Pair),
    key("train.eps", "1e-8", Kind::Float { min: 1e-300, max: INF }),
    key("train.weight_decay", "1e-6", Kind::Float { min: 0.0, max: INF }),
    key("train.lr_scheduler", "cosine", Kind::Choice(&["cosine"])),
    key("train.checkpoint_every", "500", Kind::Int { min: 1 }),
    key("train.log_every", "50", Kind::Int { min: 1 }),
    key("sampler.num_iter", "4", Kind::Int { min: 1 }),
    key("sampler.num_sampling_steps", "ddim10", Kind::Ddim),
    key("sampler.eta", "0", Kind::Float { min: 0.0, max: INF }),
    key("sampler.clip_sample", "1", Kind::OptionalFloat),
    key("eval.episodes", "100", Kind::Int { min: 1 }),
    key("eval.seeds", "3", Kind::Int { min: 1 }),
    key("eval.seed", "1000", Kind::Int { min: 0 }),
    key("bench.n_iter", "1,2,4,8", Kind::IntList),
    key("bench.episodes", "20", Kind::Int { min: 1 }),
    key("analyze.bands", "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1", Kind::FloatList),
    key("analyze.fractions", "0.1,0.25,0.5,1", Kind::FloatList),
    key("analyze.ratios", "0.1,0.125,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1", Kind::FloatList),
];

fn check_value(k: &Key, value: &str) -> std::result::Result<(), String> {
    let float = |s: &str| -> std::result::Result<f64, String> {
        let v: f64 = s.trim().parse().map_err(|_| format!("{s:?} is not a number"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("{s:?} is not finite"))
        }
    };
    match k.kind {
        Kind::Int { min } => {
            let v: u64 = value.parse().map_err(|_| format!("{value:?} is not a non-negative integer"))?;
            if v < min {
                return Err(format!("{v} is below the minimum {min}"));
            }
        }
        Kind::Float { min, max } => {
            let v = float(value)?;
            if v < min || v > max {
                return Err(format!("{v} is outside [{min}, {max}]"));
            }
        }
        Kind::Choice(opts) => {
            if !opts.contains(&value) {
                return Err(format!("{value:?} is not one of {}", opts.join("|")));
            }
        }
        Kind::FloatList => {
            if value.is_empty() {
                return Err("empty list".into());
            }
            for s in value.split(',') {
                float(s)?;
            }
        }
        Kind::IntList => {
            if value.is_empty() {
                return Err("empty list".into());
            }
            for s in value.split(',') {
                let v: u64 = s.trim().parse().map_err(|_| format!("{s:?} is not a positive integer"))?;
                if v == 0 {
                    return Err("list entries must be positive".into());
                }
            }
        }
        Kind::Ddim => {
            let n = value
                .strip_prefix("ddim")
                .and_then(|s| s.parse::<u64>().ok())
                .ok_or_else(|| format!("{value:?} is not of the form ddim<N>"))?;
            if n == 0 {
                return Err("ddim step count must be positive".into());
            }
        }
        Kind::OptionalFloat => {
            if value != "none" {
                let v = float(value)?;
                if v <= 0.0 {
                    return Err(format!("{v} must be positive or none"));
                }
            }
        }
        Kind::Pair => {
            let parts: Vec<&str> = value.split(',').collect();
            if parts.len() != 2 {
                return Err(format!("{value:?} is not a pair a,b"));
            }
            for p in parts {
                let v = float(p)?;
                if !(0.0..1.0).contains(&v) {
                    return Err(format!("{v} is outside [0, 1)"));
                }
            }
        }
        Kind::Text => {}
    }
    Ok(())
}

/// Validated configuration. Every schema key has a value.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: SCHEMA.iter().map(|k| (k.name.to_string(), k.default.to_string())).collect(),
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with the entries of a config file.
    pub fn parse(source: &str, text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for e in kv::parse(source, text)? {
            cfg.set(&e.key, &e.value)
                .map_err(|err| Error::Config(format!("{source}:{}: {err}", e.line)))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let k = SCHEMA
            .iter()
            .find(|k| k.name == key)
            .ok_or_else(|| Error::Config(format!("unknown key {key}")))?;
        let value = value.trim();
        check_value(k, value).map_err(|m| Error::Config(format!("{key}: {m}")))?;
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override as given on the command line.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (k, v) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
        self.set(k.trim(), v)
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("{key} is not a schema key"))
    }

    fn int(&self, key: &str) -> u64 {
        self.get(key).parse().expect("validated integer")
    }

    fn usize(&self, key: &str) -> usize {
        self.int(key) as usize
    }

    fn float(&self, key: &str) -> f64 {
        self.get(key).trim().parse().expect("validated float")
    }

    pub fn float_list(&self, key: &str) -> Vec<f64> {
        self.get(key).split(',').map(|s| s.trim().parse().expect("validated float")).collect()
    }

    pub fn usize_list(&self, key: &str) -> Vec<usize> {
        self.get(key).split(',').map(|s| s.trim().parse().expect("validated int")).collect()
    }

    pub fn seed(&self) -> u64 {
        self.int("run.seed")
    }

    pub fn env(&self) -> EnvKind {
        self.get("run.env").parse().expect("validated env")
    }

    pub fn policy(&self) -> Result<PolicyConfig> {
        let env = self.env();
        let cfg = PolicyConfig {
            horizon: self.usize("policy.horizon"),
            action_step: self.usize("policy.action_step"),
            obs_steps: self.usize("policy.observation_step"),
            obs_dim: env.obs_dim(),
            action_dim: env.action_dim(),
            state_mlp_size: self.usize("policy.state_mlp_size"),
            encoder_embed_dim: self.usize("policy.encoder_embed_dim"),
            decoder_embed_dim: self.usize("policy.decoder_embed_dim"),
            encoder_depth: self.usize("policy.encoder_depth"),
            decoder_depth: self.usize("policy.decoder_depth"),
            encoder_num_heads: self.usize("policy.encoder_num_heads"),
            decoder_num_heads: self.usize("policy.decoder_num_heads"),
            mlp_ratio: self.usize("policy.mlp_ratio"),
            diffloss_d: self.usize("policy.diffloss_d"),
            diffloss_w: self.usize("policy.diffloss_w"),
            diffusion_steps: self.usize("policy.num_training_steps"),
            mask_ratio: self.float("mask.initial_ratio"),
            truncnorm_std: self.float("mask.truncnorm_std"),
            schedule: self.get("diffusion.schedule").parse::<NoiseSchedule>()?,
            loss_masking: self.get("loss.masking").parse::<LossMasking>()?,
            frequency_mode: self.get("frequency.mode").parse::<FrequencyMode>()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn trainer(&self) -> Result<TrainerConfig> {
        let betas = self.float_list("train.betas");
        Ok(TrainerConfig {
            batch_size: self.usize("train.batchsize"),
            total_steps: self.int("train.steps"),
            optimizer: AdamWConfig {
                lr: self.float("train.learning_rate"),
                beta1: betas[0],
                beta2: betas[1],
                eps: self.float("train.eps"),
                weight_decay: self.float("train.weight_decay"),
            },
        })
    }

    pub fn sampler(&self) -> Result<SamplerConfig> {
        let steps = self.get("sampler.num_sampling_steps")["ddim".len()..].parse().expect("validated ddim");
        let clip = match self.get("sampler.clip_sample") {
            "none" => None,
            v => Some(v.parse().expect("validated float")),
        };
        let cfg = SamplerConfig {
            ddim_steps: steps,
            eta: self.float("sampler.eta"),
            n_iter: self.usize("sampler.num_iter"),
            clip_sample: clip,
        };
        cfg.validate(self.usize("policy.num_training_steps"))?;
        Ok(cfg)
    }

    pub fn freq_schedule(&self) -> Result<FreqSchedule> {
        default_schedule(self.usize("policy.horizon"), self.usize("sampler.num_iter"))
    }

    /// Checks every cross-field constraint.
    pub fn validate(&self) -> Result<()> {
        self.policy()?;
        self.trainer()?;
        self.sampler()?;
        self.freq_schedule()?;
        Ok(())
    }

    pub fn data_episodes(&self) -> usize {
        self.usize("data.episodes")
    }

    pub fn data_noise_std(&self) -> f64 {
        self.float("data.noise_std")
    }

    pub fn data_seed(&self) -> u64 {
        self.int("data.seed")
    }

    pub fn data_stride(&self) -> usize {
        self.usize("data.stride")
    }

    pub fn usize_value(&self, key: &str) -> usize {
        self.usize(key)
    }

    pub fn u64_value(&self, key: &str) -> u64 {
        self.int(key)
    }

    /// Every key with its effective value, sorted, in config-file syntax.
    pub fn render(&self) -> String {
        kv::render(self.values.iter().map(|(k, v)| (k.as_str(), v.clone())))
    }

    pub fn keys() -> impl Iterator<Item = &'static str> {
        SCHEMA.iter().map(|k| k.name)
    }

    pub fn as_map(&self) -> &BTreeMap<String, String> {
        &self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let p = c.policy().unwrap();
        assert_eq!((p.horizon, p.action_step, p.obs_steps), (16, 8, 2));
        assert_eq!((p.encoder_embed_dim, p.encoder_depth, p.encoder_num_heads), (512, 4, 8));
        assert_eq!((p.diffloss_d, p.diffloss_w, p.diffusion_steps), (3, 1024, 100));
        let s = c.sampler().unwrap();
        assert_eq!((s.ddim_steps, s.n_iter, s.eta), (10, 4, 0.0));
        let t = c.trainer().unwrap();
        assert_eq!(t.batch_size, 128);
        assert_eq!(t.optimizer.lr, 1e-4);
        assert_eq!((t.optimizer.beta1, t.optimizer.beta2), (0.95, 0.999));
        assert_eq!(c.float_list("analyze.bands").len(), 11);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let err = RunConfig::parse("c.txt", "policy.horizon = 8\npolicy.typo = 1\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("c.txt:2"), "{err}");
        assert!(RunConfig::default().apply_override("nope=1").is_err());
        assert!(RunConfig::default().apply_override("policy.horizon").is_err());
    }

    #[test]
    fn values_are_checked() {
        let mut c = RunConfig::default();
        for bad in [
            "policy.horizon=0",
            "policy.horizon=-3",
            "mask.initial_ratio=1.5",
            "sampler.num_sampling_steps=ddim0",
            "sampler.num_sampling_steps=10",
            "train.betas=0.9",
            "train.betas=0.9,1.5",
            "frequency.mode=fft",
            "sampler.clip_sample=-1",
            "bench.n_iter=1,0",
            "data.noise_std=nan",
            "train.learning_rate=0",
        ] {
            assert!(c.apply_override(bad).is_err(), "{bad}");
        }
        c.apply_override("sampler.num_iter=32").unwrap();
        assert!(c.validate().is_err(), "more iterations than horizon");
        let mut c = RunConfig::default();
        c.apply_override("policy.encoder_num_heads=5").unwrap();
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn render_round_trips() {
        let mut c = RunConfig::default();
        c.apply_override("run.env=pusht-lite").unwrap();
        c.apply_override("sampler.clip_sample=1.5").unwrap();
        let back = RunConfig::parse("echo", &c.render()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.policy().unwrap().obs_dim, 8);
        assert_eq!(back.sampler().unwrap().clip_sample, Some(1.5));
        assert_eq!(RunConfig::keys().count(), c.as_map().len());
    }
}
