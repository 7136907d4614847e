//! Binary checkpoints. The layout is described in `docs/checkpoint-format.md`.
//!
//! All integers and floats are little-endian. The file ends with an FNV-1a
//! checksum of every preceding byte.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdamW, AdamWConfig, Tensor};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::policy::{FreqPolicy, Trainer};
use crate::trajectory::Normalization;

pub const MAGIC: &[u8; 8] = b"FQACKPT\0";
pub const VERSION: u32 = 1;
const MAX_NAME: usize = 1 << 12;
const MAX_DIMS: usize = 8;

/// One named parameter tensor with its optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub requires_grad: bool,
}

/// Decoded checkpoint contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Effective run configuration, in config-file syntax.
    pub config: String,
    /// Optimizer steps completed.
    pub step: u64,
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
    pub rng_word_pos: u128,
    pub obs_norm: Normalization,
    pub act_norm: Normalization,
    pub adam_steps: u64,
    pub adam: AdamWConfig,
    pub params: Vec<ParamRecord>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ *b as u64).wrapping_mul(0x0100_0000_01b3))
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.f64(*x);
        }
    }
    fn norm(&mut self, n: &Normalization) {
        self.u32(n.dim() as u32);
        self.f64s(&n.offset);
        self.f64s(&n.scale);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Checkpoint {
            offset: self.pos,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn u128(&mut self, what: &str) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    /// Length-checked count of `elem`-byte items that must fit in the rest of the buffer.
    fn count(&mut self, n: u64, elem: usize, what: &str) -> Result<usize> {
        let remaining = (self.buf.len() - self.pos) as u64;
        match n.checked_mul(elem as u64) {
            Some(bytes) if bytes <= remaining => Ok(n as usize),
            _ => Err(self.err(format!("{what} length {n} exceeds the remaining {remaining} bytes"))),
        }
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let n = self.count(n as u64, 8, what)?;
        let start = self.pos;
        let v: Vec<f64> = (0..n).map(|_| self.f64(what)).collect::<Result<_>>()?;
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            self.pos = start + 8 * i;
            return Err(self.err(format!("non-finite value in {what}")));
        }
        Ok(v)
    }

    fn norm(&mut self, what: &str) -> Result<Normalization> {
        let at = self.pos;
        let dim = self.u32(what)? as usize;
        let dim = self.count(dim as u64, 16, what)?;
        let offset = self.f64s(dim, what)?;
        let scale = self.f64s(dim, what)?;
        Normalization::new(offset, scale).map_err(|e| Error::Checkpoint {
            offset: at,
            msg: format!("{what}: {e}"),
        })
    }
}

impl Checkpoint {
    /// Captures a trainer with its data normalizers and effective config.
    pub fn capture(trainer: &Trainer, config: &RunConfig, obs_norm: &Normalization, act_norm: &Normalization) -> Self {
        let params = trainer
            .model
            .params
            .iter()
            .zip(&trainer.optimizer.first_moment)
            .zip(&trainer.optimizer.second_moment)
            .map(|((p, m), v)| ParamRecord {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                value: p.value.data().to_vec(),
                first_moment: m.clone(),
                second_moment: v.clone(),
                requires_grad: p.requires_grad,
            })
            .collect();
        Self {
            config: config.render(),
            step: trainer.step,
            rng_seed: trainer.rng.get_seed(),
            rng_stream: trainer.rng.get_stream(),
            rng_word_pos: trainer.rng.get_word_pos(),
            obs_norm: obs_norm.clone(),
            act_norm: act_norm.clone(),
            adam_steps: trainer.optimizer.step_count,
            adam: trainer.optimizer.config,
            params,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.bytes(self.config.as_bytes());
        w.u64(self.step);
        w.0.extend_from_slice(&self.rng_seed);
        w.u64(self.rng_stream);
        w.u128(self.rng_word_pos);
        w.norm(&self.obs_norm);
        w.norm(&self.act_norm);
        w.u64(self.adam_steps);
        w.f64s(&[self.adam.lr, self.adam.beta1, self.adam.beta2, self.adam.eps, self.adam.weight_decay]);
        w.u32(self.params.len() as u32);
        for p in &self.params {
            w.bytes(p.name.as_bytes());
            w.u32(p.shape.len() as u32);
            for d in &p.shape {
                w.u64(*d as u64);
            }
            w.u8(p.requires_grad as u8);
            w.f64s(&p.value);
            w.f64s(&p.first_moment);
            w.f64s(&p.second_moment);
        }
        let sum = fnv1a(&w.0);
        w.u64(sum);
        w.0
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            r.pos = 0;
            return Err(r.err("not a checkpoint (bad magic)"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            r.pos -= 4;
            return Err(r.err(format!("unsupported version {version}, expected {VERSION}")));
        }
        if bytes.len() < r.pos + 8 {
            return Err(r.err("truncated before checksum"));
        }
        let body = bytes.len() - 8;
        let stored = u64::from_le_bytes(bytes[body..].try_into().unwrap());
        if fnv1a(&bytes[..body]) != stored {
            return Err(Error::Checkpoint {
                offset: body,
                msg: "checksum mismatch".into(),
            });
        }
        let mut r = Reader {
            buf: &bytes[..body],
            pos: r.pos,
        };
        let len = r.u64("config length")?;
        let len = r.count(len, 1, "config")?;
        let at = r.pos;
        let config = std::str::from_utf8(r.take(len, "config")?)
            .map_err(|_| Error::Checkpoint {
                offset: at,
                msg: "config is not UTF-8".into(),
            })?
            .to_string();
        let step = r.u64("step")?;
        let rng_seed: [u8; 32] = r.take(32, "rng seed")?.try_into().unwrap();
        let rng_stream = r.u64("rng stream")?;
        let rng_word_pos = r.u128("rng position")?;
        let obs_norm = r.norm("observation normalizer")?;
        let act_norm = r.norm("action normalizer")?;
        let adam_steps = r.u64("optimizer step count")?;
        let h = r.f64s(5, "optimizer settings")?;
        let adam = AdamWConfig {
            lr: h[0],
            beta1: h[1],
            beta2: h[2],
            eps: h[3],
            weight_decay: h[4],
        };
        let n = r.u32("parameter count")? as usize;
        let n = r.count(n as u64, 8 + 4 + 1, "parameter table")?;
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.u64("name length")?;
            if len as usize > MAX_NAME {
                return Err(r.err(format!("parameter name of {len} bytes")));
            }
            let len = r.count(len, 1, "name")?;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| Error::Checkpoint {
                    offset: at,
                    msg: "parameter name is not UTF-8".into(),
                })?
                .to_string();
            let ndim = r.u32("rank")? as usize;
            if ndim == 0 || ndim > MAX_DIMS {
                return Err(r.err(format!("{name}: rank {ndim}")));
            }
            let mut shape = Vec::with_capacity(ndim);
            let mut total: u64 = 1;
            for _ in 0..ndim {
                let d = r.u64("dimension")?;
                total = total.checked_mul(d).ok_or_else(|| r.err(format!("{name}: shape overflows")))?;
                shape.push(d as usize);
            }
            let flag = r.u8("requires_grad")?;
            if flag > 1 {
                return Err(r.err(format!("{name}: bad flag {flag}")));
            }
            let total = r.count(total, 24, &name)?;
            params.push(ParamRecord {
                value: r.f64s(total, &name)?,
                first_moment: r.f64s(total, &name)?,
                second_moment: r.f64s(total, &name)?,
                name,
                shape,
                requires_grad: flag == 1,
            });
        }
        if r.pos != body {
            return Err(r.err(format!("{} trailing bytes", body - r.pos)));
        }
        Ok(Self {
            config,
            step,
            rng_seed,
            rng_stream,
            rng_word_pos,
            obs_norm,
            act_norm,
            adam_steps,
            adam,
            params,
        })
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        RunConfig::parse("checkpoint config", &self.config)
    }

    /// Builds the network described by the embedded config and loads the weights.
    pub fn model(&self) -> Result<FreqPolicy> {
        let cfg = self.run_config()?.policy()?;
        // initial values are overwritten below
        let mut model = FreqPolicy::new(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
        if model.params.len() != self.params.len() {
            return Err(Error::Checkpoint {
                offset: 0,
                msg: format!("{} parameters stored, model has {}", self.params.len(), model.params.len()),
            });
        }
        for rec in &self.params {
            let id = model.params.id(&rec.name).ok_or_else(|| Error::Checkpoint {
                offset: 0,
                msg: format!("unknown parameter {}", rec.name),
            })?;
            if model.params.value(id).shape() != rec.shape.as_slice() {
                return Err(Error::Checkpoint {
                    offset: 0,
                    msg: format!("{}: stored shape {:?}, model expects {:?}", rec.name, rec.shape, model.params.value(id).shape()),
                });
            }
            *model.params.value_mut(id) = Tensor::new(rec.shape.clone(), rec.value.clone())?;
            model.params.set_requires_grad(id, rec.requires_grad);
        }
        Ok(model)
    }

    /// Restores the full training state for resumption.
    pub fn trainer(&self) -> Result<Trainer> {
        let run = self.run_config()?;
        let model = self.model()?;
        let mut config = run.trainer()?;
        config.optimizer = self.adam;
        let mut optimizer = AdamW::new(self.adam, &model.params);
        for (i, p) in model.params.iter().enumerate() {
            let rec = self
                .params
                .iter()
                .find(|r| r.name == p.name)
                .expect("model() matched every name");
            optimizer.first_moment[i] = rec.first_moment.clone();
            optimizer.second_moment[i] = rec.second_moment.clone();
        }
        optimizer.step_count = self.adam_steps;
        let mut rng = ChaCha8Rng::from_seed(self.rng_seed);
        rng.set_stream(self.rng_stream);
        rng.set_word_pos(self.rng_word_pos);
        Ok(Trainer {
            model,
            optimizer,
            config,
            rng,
            step: self.step,
        })
    }
}
