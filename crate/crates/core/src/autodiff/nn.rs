//! Transformer building blocks on top of the tape.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::graph::{Graph, Var};
use super::tensor::{ParamId, ParamStore, Tensor};
use crate::error::Result;

pub const INIT_STD: f64 = 0.02;

/// Normal(0, std) truncated to two standard deviations.
pub fn trunc_normal(rng: &mut impl Rng, len: usize, std: f64) -> Vec<f64> {
    (0..len)
        .map(|_| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break z * std;
            }
        })
        .collect()
}

pub fn add_weight(
    store: &mut ParamStore,
    name: &str,
    shape: &[usize],
    rng: &mut impl Rng,
) -> Result<ParamId> {
    let len = shape.iter().product();
    store.add(name, Tensor::new(shape.to_vec(), trunc_normal(rng, len, INIT_STD))?)
}

/// Xavier-uniform `[fan_in, fan_out]` matrix.
pub fn add_linear_weight(
    store: &mut ParamStore,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) -> Result<ParamId> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-a..=a)).collect();
    store.add(name, Tensor::new(vec![fan_in, fan_out], data)?)
}

pub fn add_const(store: &mut ParamStore, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
    let len = shape.iter().product();
    store.add(name, Tensor::new(shape.to_vec(), vec![value; len])?)
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            weight: add_linear_weight(store, &format!("{name}.weight"), fan_in, fan_out, rng)?,
            bias: Some(add_const(store, &format!("{name}.bias"), &[fan_out], 0.0)?),
        })
    }

    pub fn no_bias(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            weight: add_linear_weight(store, &format!("{name}.weight"), fan_in, fan_out, rng)?,
            bias: None,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub offset: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Result<Self> {
        Ok(Self {
            gain: add_const(store, &format!("{name}.gain"), &[width], 1.0)?,
            offset: add_const(store, &format!("{name}.offset"), &[width], 0.0)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let n = g.layer_norm(x);
        let gain = g.param(self.gain);
        let y = g.mul_row(n, gain)?;
        let off = g.param(self.offset);
        g.add_row(y, off)
    }
}

/// Two linear layers with a GELU in between.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, hidden: usize, out: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), width, hidden, rng)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, out, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, x)?;
        let h = g.gelu(h);
        self.fc2.forward(g, h)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SelfAttention {
    pub qkv: Linear,
    pub proj: Linear,
    pub heads: usize,
}

impl SelfAttention {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(crate::Error::Config(format!(
                "{heads} heads do not divide embedding width {width}"
            )));
        }
        Ok(Self {
            qkv: Linear::new(store, &format!("{name}.qkv"), width, 3 * width, rng)?,
            proj: Linear::new(store, &format!("{name}.proj"), width, width, rng)?,
            heads,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var, segments: &[(usize, usize)]) -> Result<Var> {
        let qkv = self.qkv.forward(g, x)?;
        let a = g.attention(qkv, segments, self.heads)?;
        self.proj.forward(g, a)
    }
}

/// Pre-norm transformer block: `x + attn(ln(x))`, then `x + mlp(ln(x))`.
#[derive(Debug, Clone, Copy)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: SelfAttention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

impl Block {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, mlp_ratio: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), width)?,
            attn: SelfAttention::new(store, &format!("{name}.attn"), width, heads, rng)?,
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), width)?,
            mlp: Mlp::new(store, &format!("{name}.mlp"), width, width * mlp_ratio, width, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var, segments: &[(usize, usize)]) -> Result<Var> {
        let h = self.ln1.forward(g, x)?;
        let h = self.attn.forward(g, h, segments)?;
        let x = g.add(x, h)?;
        let h = self.ln2.forward(g, x)?;
        let h = self.mlp.forward(g, h)?;
        g.add(x, h)
    }
}
