use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::LossMasking;
use super::mask::{adaptive_mask_ratio, sample_mask, MaskVector};
use super::network::FreqPolicy;
use crate::autodiff::{AdamW, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

/// One training example: `T_o` normalized observations and a normalized action chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    /// `T_o * obs_dim` values, oldest first.
    pub obs: Vec<f64>,
    pub actions: Trajectory,
}

/// Random choices for one sample, drawn before the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDraw {
    pub level: usize,
    pub mask: MaskVector,
    /// 1-based diffusion step.
    pub step: usize,
    /// `T * d` standard normal values.
    pub noise: Vec<f64>,
}

/// Draws level, mask, diffusion step and noise for one sample, in that order.
pub fn draw_sample(model: &FreqPolicy, rng: &mut impl Rng) -> Result<SampleDraw> {
    let c = &model.config;
    let level = rng.random_range(0..=c.horizon);
    let ratio = adaptive_mask_ratio(level, c.horizon, c.mask_ratio)?;
    let mask = sample_mask(ratio, c.horizon, c.truncnorm_std, rng)?;
    let step = rng.random_range(1..=c.diffusion_steps);
    let noise = (0..c.horizon * c.action_dim).map(|_| StandardNormal.sample(rng)).collect();
    Ok(SampleDraw { level, mask, step, noise })
}

pub fn draw_batch(model: &FreqPolicy, batch: usize, rng: &mut impl Rng) -> Result<Vec<SampleDraw>> {
    (0..batch).map(|_| draw_sample(model, rng)).collect()
}

/// Positions of one sample that enter the loss.
pub fn loss_positions(masking: LossMasking, mask: &MaskVector) -> Vec<usize> {
    match masking {
        LossMasking::Masked if mask.count() > 0 => mask.masked().collect(),
        _ => (0..mask.len()).collect(),
    }
}

/// Builds the diffusion loss for a batch on `g`: the squared noise-prediction
/// error summed over action dimensions and averaged over the selected positions.
pub fn diffusion_loss(g: &mut Graph, model: &FreqPolicy, batch: &[TrainSample], draws: &[SampleDraw]) -> Result<Var> {
    let c = &model.config;
    let (t, d) = (c.horizon, c.action_dim);
    if batch.is_empty() || batch.len() != draws.len() {
        return Err(Error::shape("diffusion_loss", format!("{} samples, {} draws", batch.len(), draws.len())));
    }
    let mut obs = Vec::with_capacity(batch.len() * c.obs_steps * c.obs_dim);
    let mut tokens = Vec::with_capacity(batch.len() * t * d);
    for s in batch {
        if s.actions.horizon() != t || s.actions.dim() != d {
            return Err(Error::shape(
                "diffusion_loss",
                format!("chunk {}x{} for {t}x{d}", s.actions.horizon(), s.actions.dim()),
            ));
        }
        obs.extend_from_slice(&s.obs);
    }
    for (s, dr) in batch.iter().zip(draws) {
        if dr.noise.len() != t * d {
            return Err(Error::shape("diffusion_loss", format!("{} noise values", dr.noise.len())));
        }
        tokens.extend_from_slice(model.condition_tokens(&s.actions, dr.level)?.values());
    }
    let levels: Vec<usize> = draws.iter().map(|d| d.level).collect();
    let masks: Vec<MaskVector> = draws.iter().map(|d| d.mask.clone()).collect();

    let z_obs = model.encode_observation(g, &obs, batch.len())?;
    let enc = model.encode(g, z_obs, &tokens, &levels, &masks)?;
    let z = model.decode(g, z_obs, &enc, &levels, &masks)?;

    let mut rows = Vec::new();
    let mut x_t = Vec::new();
    let mut eps = Vec::new();
    let mut steps = Vec::new();
    let mut row_levels = Vec::new();
    for (b, (s, dr)) in batch.iter().zip(draws).enumerate() {
        let ab = model.schedule.alpha_bar(dr.step);
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        for p in loss_positions(c.loss_masking, &dr.mask) {
            rows.push(b * t + p);
            let noise = &dr.noise[p * d..(p + 1) * d];
            x_t.extend(s.actions.row(p).iter().zip(noise).map(|(x, e)| sa * x + sn * e));
            eps.extend_from_slice(noise);
            steps.push(dr.step);
            row_levels.push(dr.level);
        }
    }
    let n = rows.len();
    let z_sel = g.gather_rows(z, &rows)?;
    let x_t = g.constant(Tensor::matrix(n, d, x_t)?);
    let eps = g.constant(Tensor::matrix(n, d, eps)?);
    let pred = model.eps_predict(g, x_t, &steps, &row_levels, z_sel)?;
    let diff = g.sub(pred, eps)?;
    g.weighted_sum_squares(diff, &vec![1.0 / n as f64; n])
}

/// One optimizer update on `batch`; returns the loss before the update.
pub fn training_step(
    model: &mut FreqPolicy,
    optimizer: &mut AdamW,
    batch: &[TrainSample],
    lr: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    let draws = draw_batch(model, batch.len(), rng)?;
    let (loss, grads) = {
        let mut g = Graph::new(&model.params);
        let loss = diffusion_loss(&mut g, model, batch, &draws)?;
        let value = g.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Numeric(format!("training loss is {value}")));
        }
        (value, g.backward(loss)?)
    };
    model.params.zero_grad();
    model.params.accumulate(&grads);
    if let Some(p) = model.params.iter().find(|p| !p.grad.is_finite()) {
        return Err(Error::Numeric(format!("gradient of {} is not finite", p.name)));
    }
    optimizer.step(&mut model.params, lr)?;
    Ok(loss)
}
