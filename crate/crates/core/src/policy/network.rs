use rand::Rng;

use super::config::{FrequencyMode, PolicyConfig};
use super::mask::MaskVector;
use super::schedule::DiffusionSchedule;
use crate::autodiff::nn::{add_weight, Block, LayerNorm, Linear, Mlp};
use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::trajectory::{low_pass, Trajectory};

#[derive(Debug, Clone)]
struct ObsEncoder {
    mlp: Mlp,
}

#[derive(Debug, Clone)]
struct Encoder {
    action_embed: Linear,
    pos: ParamId,
    level: ParamId,
    blocks: Vec<Block>,
    norm: LayerNorm,
}

#[derive(Debug, Clone)]
struct Decoder {
    embed: Linear,
    obs_proj: Linear,
    mask_token: ParamId,
    pos: ParamId,
    level: ParamId,
    blocks: Vec<Block>,
    norm: LayerNorm,
    diffusion_pos: ParamId,
}

/// Residual block whose norm is modulated by the conditioning vector.
#[derive(Debug, Clone, Copy)]
struct AdaBlock {
    modulation: Linear,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Debug, Clone)]
struct NoiseHead {
    input_proj: Linear,
    cond_proj: Linear,
    time_table: ParamId,
    level_table: ParamId,
    blocks: Vec<AdaBlock>,
    final_modulation: Linear,
    output: Linear,
}

/// Observation tokens after the state MLP, `T_o x D_enc` per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationFeatures {
    pub tokens: Tensor,
}

/// Per-position decoder outputs `z`, `T x D_dec`, that condition the noise predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTokens {
    pub tokens: Tensor,
}

/// Encoder rows for a batch plus where each sample's sequence starts.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub rows: Var,
    /// `(start, len)` per sample.
    pub segments: Vec<(usize, usize)>,
}

/// Masked encoder/decoder over action tokens plus the conditional noise predictor.
#[derive(Debug, Clone)]
pub struct FreqPolicy {
    pub config: PolicyConfig,
    pub params: ParamStore,
    pub schedule: DiffusionSchedule,
    obs: ObsEncoder,
    encoder: Encoder,
    decoder: Decoder,
    head: NoiseHead,
}

fn blocks(
    store: &mut ParamStore,
    prefix: &str,
    depth: usize,
    width: usize,
    heads: usize,
    ratio: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Block>> {
    (0..depth)
        .map(|i| Block::new(store, &format!("{prefix}.blocks.{i}"), width, heads, ratio, rng))
        .collect()
}

impl FreqPolicy {
    pub fn new(config: PolicyConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let (de, dd, w) = (c.encoder_embed_dim, c.decoder_embed_dim, c.diffloss_w);
        let seq = c.obs_steps + 1 + c.horizon;
        let mut s = ParamStore::new();

        let obs = ObsEncoder {
            mlp: Mlp::new(&mut s, "obs_encoder", c.obs_dim, c.state_mlp_size, de, rng)?,
        };
        let encoder = Encoder {
            action_embed: Linear::new(&mut s, "encoder.action_embed", c.action_dim, de, rng)?,
            pos: add_weight(&mut s, "encoder.pos", &[seq, de], rng)?,
            level: add_weight(&mut s, "encoder.level", &[c.horizon + 1, de], rng)?,
            blocks: blocks(&mut s, "encoder", c.encoder_depth, de, c.encoder_num_heads, c.mlp_ratio, rng)?,
            norm: LayerNorm::new(&mut s, "encoder.norm", de)?,
        };
        let decoder = Decoder {
            embed: Linear::new(&mut s, "decoder.embed", de, dd, rng)?,
            obs_proj: Linear::no_bias(&mut s, "decoder.obs_proj", de, dd, rng)?,
            mask_token: add_weight(&mut s, "decoder.mask_token", &[1, dd], rng)?,
            pos: add_weight(&mut s, "decoder.pos", &[seq, dd], rng)?,
            level: add_weight(&mut s, "decoder.level", &[c.horizon + 1, dd], rng)?,
            blocks: blocks(&mut s, "decoder", c.decoder_depth, dd, c.decoder_num_heads, c.mlp_ratio, rng)?,
            norm: LayerNorm::new(&mut s, "decoder.norm", dd)?,
            diffusion_pos: add_weight(&mut s, "decoder.diffusion_pos", &[c.horizon, dd], rng)?,
        };
        let mut head_blocks = Vec::with_capacity(c.diffloss_d);
        for i in 0..c.diffloss_d {
            let p = format!("head.blocks.{i}");
            head_blocks.push(AdaBlock {
                modulation: Linear::new(&mut s, &format!("{p}.modulation"), w, 3 * w, rng)?,
                fc1: Linear::new(&mut s, &format!("{p}.fc1"), w, w, rng)?,
                fc2: Linear::new(&mut s, &format!("{p}.fc2"), w, w, rng)?,
            });
        }
        let head = NoiseHead {
            input_proj: Linear::new(&mut s, "head.input_proj", c.action_dim, w, rng)?,
            cond_proj: Linear::new(&mut s, "head.cond_proj", dd, w, rng)?,
            time_table: add_weight(&mut s, "head.time", &[c.diffusion_steps, w], rng)?,
            level_table: add_weight(&mut s, "head.level", &[c.horizon + 1, w], rng)?,
            blocks: head_blocks,
            final_modulation: Linear::new(&mut s, "head.final_modulation", w, 2 * w, rng)?,
            output: Linear::new(&mut s, "head.output", w, c.action_dim, rng)?,
        };
        let schedule = DiffusionSchedule::new(c.schedule, c.diffusion_steps)?;
        Ok(Self {
            config,
            params: s,
            schedule,
            obs,
            encoder,
            decoder,
            head,
        })
    }

    /// Zeroes every parameter; the noise predictor then returns its output bias.
    pub fn zero_parameters(&mut self) {
        for p in self.params.iter_mut() {
            p.value.data_mut().fill(0.0);
        }
    }

    /// Runs the state MLP on `batch * T_o` observation rows.
    pub fn encode_observation(&self, g: &mut Graph, obs: &[f64], batch: usize) -> Result<Var> {
        let c = &self.config;
        let rows = batch * c.obs_steps;
        if obs.len() != rows * c.obs_dim {
            return Err(Error::shape(
                "encode_observation",
                format!("{} values for {batch} x {} x {}", obs.len(), c.obs_steps, c.obs_dim),
            ));
        }
        check_finite(obs, c.obs_dim)?;
        let x = g.constant(Tensor::matrix(rows, c.obs_dim, obs.to_vec())?);
        self.obs.mlp.forward(g, x)
    }

    /// Encodes the visible action tokens with the observation tokens and the level token.
    ///
    /// `tokens` holds `batch * T * d` values of the level-`k` conditioning sequences.
    pub fn encode(
        &self,
        g: &mut Graph,
        z_obs: Var,
        tokens: &[f64],
        levels: &[usize],
        masks: &[MaskVector],
    ) -> Result<EncoderOutput> {
        let c = &self.config;
        let (t_o, t, d) = (c.obs_steps, c.horizon, c.action_dim);
        let batch = self.check_batch(levels, masks)?;
        if tokens.len() != batch * t * d {
            return Err(Error::shape("encode", format!("{} token values for batch {batch}", tokens.len())));
        }
        check_finite(tokens, d)?;
        let act = g.constant(Tensor::matrix(batch * t, d, tokens.to_vec())?);
        let act = self.encoder.action_embed.forward(g, act)?;
        let level_tab = g.param(self.encoder.level);
        let lv = g.gather_rows(level_tab, levels)?;
        // pool rows: [obs (B*T_o) | action (B*T) | level (B)]
        let pool = g.concat_rows(&[z_obs, act, lv])?;
        let (act_base, lv_base) = (batch * t_o, batch * t_o + batch * t);
        let mut idx = Vec::new();
        let mut pos_idx = Vec::new();
        let mut segments = Vec::with_capacity(batch);
        for (b, mask) in masks.iter().enumerate() {
            let start = idx.len();
            for j in 0..t_o {
                idx.push(b * t_o + j);
                pos_idx.push(j);
            }
            idx.push(lv_base + b);
            pos_idx.push(t_o);
            for p in mask.visible() {
                idx.push(act_base + b * t + p);
                pos_idx.push(t_o + 1 + p);
            }
            segments.push((start, idx.len() - start));
        }
        let x = g.gather_rows(pool, &idx)?;
        let pos_tab = g.param(self.encoder.pos);
        let pos = g.gather_rows(pos_tab, &pos_idx)?;
        let mut x = g.add(x, pos)?;
        for blk in &self.encoder.blocks {
            x = blk.forward(g, x, &segments)?;
        }
        let rows = self.encoder.norm.forward(g, x)?;
        Ok(EncoderOutput { rows, segments })
    }

    /// Fills hidden positions with the mask token and decodes all `T` action slots.
    ///
    /// Returns `batch * T` rows of width `D_dec`, sample-major.
    pub fn decode(
        &self,
        g: &mut Graph,
        z_obs: Var,
        enc: &EncoderOutput,
        levels: &[usize],
        masks: &[MaskVector],
    ) -> Result<Var> {
        let c = &self.config;
        let (t_o, t, dd) = (c.obs_steps, c.horizon, c.decoder_embed_dim);
        let batch = self.check_batch(levels, masks)?;
        if enc.segments.len() != batch {
            return Err(Error::shape("decode", format!("{} segments for batch {batch}", enc.segments.len())));
        }
        let seq = t_o + 1 + t;
        let h = self.decoder.embed.forward(g, enc.rows)?;
        let mask_tok = g.param(self.decoder.mask_token);
        let enc_rows = g.value(enc.rows).rows();
        let pool = g.concat_rows(&[h, mask_tok])?;

        let obs_extra = self.decoder.obs_proj.forward(g, z_obs)?;
        let level_tab = g.param(self.decoder.level);
        let lv = g.gather_rows(level_tab, levels)?;
        let zero = g.constant(Tensor::zeros(&[1, dd]));
        let extra_pool = g.concat_rows(&[obs_extra, lv, zero])?;
        let zero_row = batch * t_o + batch;

        let mut idx = Vec::with_capacity(batch * seq);
        let mut extra_idx = Vec::with_capacity(batch * seq);
        let mut segments = Vec::with_capacity(batch);
        for (b, mask) in masks.iter().enumerate() {
            let (start, _) = enc.segments[b];
            segments.push((b * seq, seq));
            for j in 0..t_o {
                idx.push(start + j);
                extra_idx.push(b * t_o + j);
            }
            idx.push(start + t_o);
            extra_idx.push(batch * t_o + b);
            let mut rank = 0;
            for p in 0..t {
                if mask.flags[p] {
                    idx.push(enc_rows);
                } else {
                    idx.push(start + t_o + 1 + rank);
                    rank += 1;
                }
                extra_idx.push(zero_row);
            }
        }
        let x = g.gather_rows(pool, &idx)?;
        let extra = g.gather_rows(extra_pool, &extra_idx)?;
        let x = g.add(x, extra)?;
        let pos_tab = g.param(self.decoder.pos);
        let pos_idx: Vec<usize> = (0..batch).flat_map(|_| 0..seq).collect();
        let pos = g.gather_rows(pos_tab, &pos_idx)?;
        let mut x = g.add(x, pos)?;
        for blk in &self.decoder.blocks {
            x = blk.forward(g, x, &segments)?;
        }
        let x = self.decoder.norm.forward(g, x)?;
        let act_idx: Vec<usize> = (0..batch).flat_map(|b| (0..t).map(move |p| b * seq + t_o + 1 + p)).collect();
        let z = g.gather_rows(x, &act_idx)?;
        let dpos_tab = g.param(self.decoder.diffusion_pos);
        let dpos_idx: Vec<usize> = (0..batch).flat_map(|_| 0..t).collect();
        let dpos = g.gather_rows(dpos_tab, &dpos_idx)?;
        g.add(z, dpos)
    }

    /// Predicts the noise in `x_t` row by row. `steps` are 1-based diffusion steps.
    pub fn eps_predict(&self, g: &mut Graph, x_t: Var, steps: &[usize], levels: &[usize], z: Var) -> Result<Var> {
        let w = self.config.diffloss_w;
        let rows = g.value(x_t).rows();
        if steps.len() != rows || levels.len() != rows || g.value(z).rows() != rows {
            return Err(Error::shape(
                "eps_predict",
                format!("{rows} rows, {} steps, {} levels, {} latents", steps.len(), levels.len(), g.value(z).rows()),
            ));
        }
        for &s in steps {
            self.schedule.check_step(s)?;
        }
        if let Some(&k) = levels.iter().find(|&&k| k > self.config.horizon) {
            return Err(Error::Range {
                what: "frequency level",
                value: k as f64,
                min: 0.0,
                max: self.config.horizon as f64,
            });
        }
        let hd = &self.head;
        let mut x = hd.input_proj.forward(g, x_t)?;
        let cond = hd.cond_proj.forward(g, z)?;
        let tt = g.param(hd.time_table);
        let step_idx: Vec<usize> = steps.iter().map(|s| s - 1).collect();
        let te = g.gather_rows(tt, &step_idx)?;
        let lt = g.param(hd.level_table);
        let le = g.gather_rows(lt, levels)?;
        let cond = g.add(cond, te)?;
        let cond = g.add(cond, le)?;
        let cond = g.silu(cond);
        for blk in &hd.blocks {
            let m = blk.modulation.forward(g, cond)?;
            let shift = g.slice_cols(m, 0, w)?;
            let scale = g.slice_cols(m, w, w)?;
            let gate = g.slice_cols(m, 2 * w, w)?;
            let h = modulate(g, x, shift, scale)?;
            let h = blk.fc1.forward(g, h)?;
            let h = g.silu(h);
            let h = blk.fc2.forward(g, h)?;
            let h = g.mul(gate, h)?;
            x = g.add(x, h)?;
        }
        let m = hd.final_modulation.forward(g, cond)?;
        let shift = g.slice_cols(m, 0, w)?;
        let scale = g.slice_cols(m, w, w)?;
        let h = modulate(g, x, shift, scale)?;
        hd.output.forward(g, h)
    }

    fn check_batch(&self, levels: &[usize], masks: &[MaskVector]) -> Result<usize> {
        let t = self.config.horizon;
        if levels.is_empty() || levels.len() != masks.len() {
            return Err(Error::shape("batch", format!("{} levels, {} masks", levels.len(), masks.len())));
        }
        if let Some(&k) = levels.iter().find(|&&k| k > t) {
            return Err(Error::Range {
                what: "frequency level",
                value: k as f64,
                min: 0.0,
                max: t as f64,
            });
        }
        if let Some(m) = masks.iter().find(|m| m.len() != t) {
            return Err(Error::shape("batch", format!("mask of length {} for horizon {t}", m.len())));
        }
        Ok(levels.len())
    }

    /// Observation features for one sample, outside any training graph.
    pub fn observation_features(&self, obs: &[f64]) -> Result<ObservationFeatures> {
        let mut g = Graph::new(&self.params);
        let v = self.encode_observation(&mut g, obs, 1)?;
        Ok(ObservationFeatures {
            tokens: g.value(v).clone(),
        })
    }

    /// Runs encoder and decoder for one sample.
    pub fn latent(&self, obs: &ObservationFeatures, tokens: &Trajectory, k: usize, mask: &MaskVector) -> Result<LatentTokens> {
        self.check_tokens(tokens)?;
        let mut g = Graph::new(&self.params);
        let z_obs = g.constant(obs.tokens.clone());
        let enc = self.encode(&mut g, z_obs, tokens.values(), &[k], std::slice::from_ref(mask))?;
        let z = self.decode(&mut g, z_obs, &enc, &[k], std::slice::from_ref(mask))?;
        Ok(LatentTokens {
            tokens: g.value(z).clone(),
        })
    }

    /// Noise estimate for a full chunk `x_t` at step `t`, level `k`.
    pub fn predict_noise(&self, x_t: &Trajectory, t: usize, k: usize, z: &LatentTokens) -> Result<Trajectory> {
        self.check_tokens(x_t)?;
        let rows = x_t.horizon();
        let mut g = Graph::new(&self.params);
        let x = g.constant(Tensor::matrix(rows, x_t.dim(), x_t.values().to_vec())?);
        let zv = g.constant(z.tokens.clone());
        let out = self.eps_predict(&mut g, x, &vec![t; rows], &vec![k; rows], zv)?;
        let eps = g.value(out);
        if !eps.is_finite() {
            return Err(Error::Numeric(format!("noise prediction at step {t} is not finite")));
        }
        Trajectory::new(rows, x_t.dim(), eps.data().to_vec())
    }

    fn check_tokens(&self, tokens: &Trajectory) -> Result<()> {
        let c = &self.config;
        if tokens.horizon() != c.horizon || tokens.dim() != c.action_dim {
            return Err(Error::shape(
                "action tokens",
                format!("{}x{} for {}x{}", tokens.horizon(), tokens.dim(), c.horizon, c.action_dim),
            ));
        }
        Ok(())
    }

    /// Conditioning sequence `y^k` for a clean chunk under the configured frequency mode.
    pub fn condition_tokens(&self, x: &Trajectory, k: usize) -> Result<Trajectory> {
        conditioning_tokens(self.config.frequency_mode, x, k)
    }
}

/// `y^k` for a clean chunk: the `k`-level reconstruction, or the raw chunk in the ablation.
pub fn conditioning_tokens(mode: FrequencyMode, x: &Trajectory, k: usize) -> Result<Trajectory> {
    if k > x.horizon() {
        return Err(Error::Range {
            what: "frequency level",
            value: k as f64,
            min: 0.0,
            max: x.horizon() as f64,
        });
    }
    match mode {
        FrequencyMode::Dct => low_pass(x, k),
        FrequencyMode::Identity if k == 0 => Trajectory::zeros(x.horizon(), x.dim()),
        FrequencyMode::Identity => Ok(x.clone()),
    }
}

fn modulate(g: &mut Graph, x: Var, shift: Var, scale: Var) -> Result<Var> {
    let n = g.layer_norm(x);
    let s = g.add_scalar(scale, 1.0);
    let n = g.mul(n, s)?;
    g.add(n, shift)
}

fn check_finite(values: &[f64], cols: usize) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite {
            row: i / cols,
            col: i % cols,
        }),
        None => Ok(()),
    }
}
