use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::autodiff::{grad_check, AdamW, AdamWConfig, GradCheckOptions, Graph, Tensor};
use crate::trajectory::Trajectory;

fn toy(horizon: usize) -> PolicyConfig {
    PolicyConfig {
        horizon,
        action_step: horizon / 2,
        ..PolicyConfig::toy(3, 2)
    }
}

fn random_sample(cfg: &PolicyConfig, rng: &mut ChaCha8Rng) -> TrainSample {
    let mut n = || -> f64 { StandardNormal.sample(rng) };
    let obs = (0..cfg.obs_steps * cfg.obs_dim).map(|_| 0.5 * n()).collect();
    let acts = (0..cfg.horizon * cfg.action_dim).map(|_| 0.5 * n()).collect();
    TrainSample {
        obs,
        actions: Trajectory::new(cfg.horizon, cfg.action_dim, acts).unwrap(),
    }
}

fn latent(model: &FreqPolicy, s: &TrainSample, k: usize, mask: &MaskVector) -> LatentTokens {
    let obs = model.observation_features(&s.obs).unwrap();
    let y = model.condition_tokens(&s.actions, k).unwrap();
    model.latent(&obs, &y, k, mask).unwrap()
}

#[test]
fn zero_parameters_predict_zero_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = toy(8);
    let mut model = FreqPolicy::new(cfg.clone(), &mut rng).unwrap();
    model.zero_parameters();
    let s = random_sample(&cfg, &mut rng);
    let z = latent(&model, &s, 3, &MaskVector::full(8));
    let eps = model.predict_noise(&s.actions, 50, 3, &z).unwrap();
    assert!(eps.values().iter().all(|v| *v == 0.0));
}

#[test]
fn noise_prediction_is_per_position() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = toy(8);
    let model = FreqPolicy::new(cfg.clone(), &mut rng).unwrap();
    let s = random_sample(&cfg, &mut rng);
    let z = latent(&model, &s, 2, &MaskVector::full(8));
    let a = model.predict_noise(&s.actions, 10, 2, &z).unwrap();
    let mut vals = s.actions.values().to_vec();
    vals[0] += 1.0;
    vals[1] -= 2.0;
    let moved = Trajectory::new(8, 2, vals).unwrap();
    let b = model.predict_noise(&moved, 10, 2, &z).unwrap();
    assert_ne!(a.row(0), b.row(0));
    for p in 1..8 {
        assert_eq!(a.row(p), b.row(p));
    }
}

#[test]
fn hidden_tokens_do_not_reach_the_decoder() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = toy(8);
    let model = FreqPolicy::new(cfg.clone(), &mut rng).unwrap();
    let s = random_sample(&cfg, &mut rng);
    let mask = MaskVector {
        flags: vec![true, false, true, true, false, false, true, false],
    };
    let obs = model.observation_features(&s.obs).unwrap();
    let z1 = model.latent(&obs, &s.actions, 4, &mask).unwrap();
    let mut vals = s.actions.values().to_vec();
    for p in mask.masked() {
        vals[2 * p] = 9.0;
    }
    let z2 = model.latent(&obs, &Trajectory::new(8, 2, vals.clone()).unwrap(), 4, &mask).unwrap();
    assert_eq!(z1, z2);
    vals[2] = 9.0; // position 1 is visible
    let z3 = model.latent(&obs, &Trajectory::new(8, 2, vals).unwrap(), 4, &mask).unwrap();
    assert_ne!(z1, z3);
}

#[test]
fn level_and_observation_change_latents() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = toy(8);
    let model = FreqPolicy::new(cfg.clone(), &mut rng).unwrap();
    let s = random_sample(&cfg, &mut rng);
    let full = MaskVector::full(8);
    let obs = model.observation_features(&s.obs).unwrap();
    let zeros = Trajectory::zeros(8, 2).unwrap();
    let a = model.latent(&obs, &zeros, 0, &full).unwrap();
    let b = model.latent(&obs, &zeros, 5, &full).unwrap();
    assert_ne!(a, b);
    let other = model.observation_features(&vec![0.3; 6]).unwrap();
    assert_ne!(a, model.latent(&other, &zeros, 0, &full).unwrap());
}

#[test]
fn batched_latents_match_single_sample_latents() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = toy(8);
    let model = FreqPolicy::new(cfg.clone(), &mut rng).unwrap();
    let samples: Vec<_> = (0..3).map(|_| random_sample(&cfg, &mut rng)).collect();
    let draws = draw_batch(&model, 3, &mut rng).unwrap();
    let mut g = Graph::new(&model.params);
    let obs: Vec<f64> = samples.iter().flat_map(|s| s.obs.clone()).collect();
    let tokens: Vec<f64> = samples
        .iter()
        .zip(&draws)
        .flat_map(|(s, d)| model.condition_tokens(&s.actions, d.level).unwrap().into_values())
        .collect();
    let levels: Vec<usize> = draws.iter().map(|d| d.level).collect();
    let masks: Vec<MaskVector> = draws.iter().map(|d| d.mask.clone()).collect();
    let z_obs = model.encode_observation(&mut g, &obs, 3).unwrap();
    let enc = model.encode(&mut g, z_obs, &tokens, &levels, &masks).unwrap();
    let z = model.decode(&mut g, z_obs, &enc, &levels, &masks).unwrap();
    let zb = g.value(z).clone();
    for (b, (s, d)) in samples.iter().zip(&draws).enumerate() {
        let single = latent(&model, s, d.level, &d.mask);
        let got = &zb.data()[b * 8 * 32..(b + 1) * 8 * 32];
        for (x, y) in got.iter().zip(single.tokens.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn rejects_bad_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = toy(8);
    let model = FreqPolicy::new(cfg.clone(), &mut rng).unwrap();
    let s = random_sample(&cfg, &mut rng);
    let z = latent(&model, &s, 0, &MaskVector::full(8));
    assert!(model.predict_noise(&s.actions, 0, 0, &z).is_err());
    assert!(model.predict_noise(&s.actions, 101, 0, &z).is_err());
    assert!(model.predict_noise(&s.actions, 5, 9, &z).is_err());
    assert!(model.observation_features(&[0.0; 5]).is_err());
    let mut bad = s.obs.clone();
    bad[4] = f64::NAN;
    assert!(matches!(
        model.observation_features(&bad),
        Err(crate::Error::NonFinite { row: 1, col: 1 })
    ));
    let short = Trajectory::zeros(7, 2).unwrap();
    let obs = model.observation_features(&s.obs).unwrap();
    assert!(model.latent(&obs, &short, 0, &MaskVector::full(7)).is_err());
    let mut bad_cfg = cfg.clone();
    bad_cfg.encoder_num_heads = 5;
    assert!(FreqPolicy::new(bad_cfg, &mut rng).is_err());
}

#[test]
fn identity_mode_tokens() {
    let x = Trajectory::new(4, 1, vec![1.0, -2.0, 3.0, 0.5]).unwrap();
    let zero = conditioning_tokens(FrequencyMode::Identity, &x, 0).unwrap();
    assert!(zero.values().iter().all(|v| *v == 0.0));
    assert_eq!(conditioning_tokens(FrequencyMode::Identity, &x, 1).unwrap(), x);
    let full = conditioning_tokens(FrequencyMode::Dct, &x, 4).unwrap();
    assert!(full.max_abs_diff(&x) < 1e-12);
    assert!(conditioning_tokens(FrequencyMode::Dct, &x, 5).is_err());
}

#[test]
fn loss_positions_follow_mode() {
    let m = MaskVector {
        flags: vec![false, true, true, false],
    };
    assert_eq!(loss_positions(LossMasking::Masked, &m), vec![1, 2]);
    assert_eq!(loss_positions(LossMasking::Full, &m), vec![0, 1, 2, 3]);
    assert_eq!(loss_positions(LossMasking::Masked, &MaskVector::empty(3)), vec![0, 1, 2]);
}

#[test]
fn draws_are_reproducible() {
    let cfg = toy(8);
    let model = FreqPolicy::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let a = draw_batch(&model, 4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = draw_batch(&model, 4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
    for d in &a {
        assert!(d.level <= 8 && (1..=100).contains(&d.step));
        if d.level == 8 {
            assert_eq!(d.mask.count(), 0);
        }
    }
}

#[test]
fn full_loss_passes_gradient_check_and_reaches_every_part() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = toy(6);
    let mut model = FreqPolicy::new(cfg.clone(), &mut rng).unwrap();
    let batch: Vec<_> = (0..2).map(|_| random_sample(&cfg, &mut rng)).collect();
    let mut draws = draw_batch(&model, 2, &mut rng).unwrap();
    draws[0].level = 2;
    draws[0].mask = MaskVector {
        flags: vec![true, false, true, false, false, true],
    };
    draws[1].level = 0;
    draws[1].mask = MaskVector::full(6);

    let grads = {
        let mut g = Graph::new(&model.params);
        let loss = diffusion_loss(&mut g, &model, &batch, &draws).unwrap();
        g.backward(loss).unwrap()
    };
    for prefix in ["obs_encoder.", "encoder.", "decoder.", "head."] {
        let norm: f64 = model
            .params
            .ids()
            .filter(|id| model.params.name(*id).starts_with(prefix))
            .filter_map(|id| grads.get(id))
            .flat_map(|g| g.iter().map(|v| v * v))
            .sum();
        assert!(norm > 0.0, "{prefix} has zero gradient");
    }
    for name in ["decoder.mask_token", "encoder.action_embed.weight", "decoder.obs_proj.weight"] {
        let id = model.params.id(name).unwrap();
        assert!(grads.get(id).unwrap().iter().any(|v| *v != 0.0), "{name}");
    }

    let fixed = model.clone();
    let report = grad_check(
        &mut model.params,
        |g| diffusion_loss(g, &fixed, &batch, &draws),
        GradCheckOptions {
            samples: 400,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn training_reduces_loss_on_a_fixed_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = toy(8);
    let mut model = FreqPolicy::new(cfg.clone(), &mut rng).unwrap();
    let batch: Vec<_> = (0..4).map(|_| random_sample(&cfg, &mut rng)).collect();
    let mut opt = AdamW::new(AdamWConfig::default(), &model.params);
    let eval = |m: &FreqPolicy| {
        let mut r = ChaCha8Rng::seed_from_u64(100);
        let mut total = 0.0;
        for _ in 0..8 {
            let draws = draw_batch(m, batch.len(), &mut r).unwrap();
            let mut g = Graph::new(&m.params);
            let l = diffusion_loss(&mut g, m, &batch, &draws).unwrap();
            total += g.scalar(l);
        }
        total / 8.0
    };
    let before = eval(&model);
    for _ in 0..150 {
        training_step(&mut model, &mut opt, &batch, 2e-3, &mut rng).unwrap();
    }
    let after = eval(&model);
    assert!(after < 0.7 * before, "{before} -> {after}");
}

#[test]
fn non_finite_parameters_are_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = toy(4);
    let mut model = FreqPolicy::new(cfg.clone(), &mut rng).unwrap();
    let batch = vec![random_sample(&cfg, &mut rng)];
    let id = model.params.id("head.output.bias").unwrap();
    *model.params.value_mut(id) = Tensor::new(vec![2], vec![f64::INFINITY, 0.0]).unwrap();
    let mut opt = AdamW::new(AdamWConfig::default(), &model.params);
    let err = training_step(&mut model, &mut opt, &batch, 1e-3, &mut rng).unwrap_err();
    assert!(matches!(err, crate::Error::Numeric(_)), "{err}");
}
