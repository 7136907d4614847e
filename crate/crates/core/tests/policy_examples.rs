use freqact::autodiff::{AdamW, AdamWConfig, Graph};
use freqact::policy::{
    diffusion_loss, draw_batch, draw_sample, sample_mask, training_step, FreqPolicy, LossMasking, MaskVector,
    PolicyConfig, TrainSample, Trainer, TrainerConfig,
};
use freqact::trajectory::Trajectory;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn toy() -> PolicyConfig {
    PolicyConfig::toy(4, 2)
}

/// Smooth chunks whose shape is a function of the observation.
fn synthetic(cfg: &PolicyConfig, n: usize, rng: &mut ChaCha8Rng) -> Vec<TrainSample> {
    (0..n)
        .map(|_| {
            let obs: Vec<f64> = (0..cfg.obs_steps * cfg.obs_dim)
                .map(|_| 0.5 * Distribution::<f64>::sample(&StandardNormal, &mut *rng))
                .collect();
            let (a, b) = (obs[0].tanh(), obs[1].tanh());
            let acts = (0..cfg.horizon)
                .flat_map(|t| {
                    let s = t as f64 / cfg.horizon as f64;
                    [a * (1.0 - s) + b * s, 0.8 * (a * std::f64::consts::PI * s).sin()]
                })
                .collect();
            TrainSample {
                obs,
                actions: Trajectory::new(cfg.horizon, cfg.action_dim, acts).unwrap(),
            }
        })
        .collect()
}

fn mean_loss(model: &FreqPolicy, data: &[TrainSample], seed: u64, rounds: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..rounds {
        let draws = draw_batch(model, data.len(), &mut rng).unwrap();
        let mut g = Graph::new(&model.params);
        let l = diffusion_loss(&mut g, model, data, &draws).unwrap();
        total += g.scalar(l);
    }
    total / rounds as f64
}

#[test]
fn zero_head_loss_is_about_the_action_dimension() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = toy();
    let mut model = FreqPolicy::new(cfg.clone(), &mut rng).unwrap();
    model.zero_parameters();
    let data = synthetic(&cfg, 64, &mut rng);
    let loss = mean_loss(&model, &data, 12, 20);
    let d = cfg.action_dim as f64;
    assert!((loss - d).abs() < 0.2 * d, "loss {loss}, action dim {d}");
}

#[test]
fn level_draws_are_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cfg = toy();
    let model = FreqPolicy::new(cfg.clone(), &mut rng).unwrap();
    let bins = cfg.horizon + 1;
    let n = 17_000;
    let mut counts = vec![0usize; bins];
    for _ in 0..n {
        counts[draw_sample(&model, &mut rng).unwrap().level] += 1;
    }
    let expect = n as f64 / bins as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    // 16 degrees of freedom, upper 0.1% point
    assert!(chi2 < 39.25, "chi2 {chi2}, counts {counts:?}");
}

#[test]
fn diffusion_steps_and_noise_follow_their_laws() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let cfg = toy();
    let model = FreqPolicy::new(cfg.clone(), &mut rng).unwrap();
    let draws = draw_batch(&model, 4000, &mut rng).unwrap();
    assert!(draws.iter().all(|d| (1..=cfg.diffusion_steps).contains(&d.step)));
    let noise: Vec<f64> = draws.iter().flat_map(|d| d.noise.iter().copied()).collect();
    let mean = noise.iter().sum::<f64>() / noise.len() as f64;
    let var = noise.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / noise.len() as f64;
    assert!(mean.abs() < 0.02, "mean {mean}");
    assert!((var - 1.0).abs() < 0.05, "variance {var}");
}

#[test]
fn half_ratio_masks_hide_half_the_chunk() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let n = 10_000;
    let total: usize = (0..n).map(|_| sample_mask(0.5, 16, 0.1, &mut rng).unwrap().count()).sum();
    let mean = total as f64 / n as f64;
    assert!((mean - 8.0).abs() <= 0.5, "mean count {mean}");
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let cfg = toy();
    let mut model = FreqPolicy::new(cfg.clone(), &mut rng).unwrap();
    let before = model.params.clone();
    let data = synthetic(&cfg, 8, &mut rng);
    let mut opt = AdamW::new(AdamWConfig::default(), &model.params);
    for _ in 0..3 {
        training_step(&mut model, &mut opt, &data, 0.0, &mut rng).unwrap();
    }
    for (a, b) in model.params.iter().zip(before.iter()) {
        assert_eq!(a.value.data(), b.value.data(), "{}", a.name);
    }
}

#[test]
fn mask_token_only_matters_at_hidden_positions() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let cfg = toy();
    let model = FreqPolicy::new(cfg.clone(), &mut rng).unwrap();
    let s = &synthetic(&cfg, 1, &mut rng)[0];
    let obs = model.observation_features(&s.obs).unwrap();
    let tokens = model.condition_tokens(&s.actions, 8).unwrap();
    let mut bumped = model.clone();
    let id = bumped.params.id("decoder.mask_token").unwrap();
    // a uniform shift would vanish under layer norm
    for (i, v) in bumped.params.value_mut(id).data_mut().iter_mut().enumerate() {
        *v += if i % 2 == 0 { 0.5 } else { -0.3 };
    }
    let empty = MaskVector::empty(cfg.horizon);
    let a = model.latent(&obs, &tokens, 8, &empty).unwrap();
    let b = bumped.latent(&obs, &tokens, 8, &empty).unwrap();
    assert_eq!(a.tokens.data(), b.tokens.data());
    let full = MaskVector::full(cfg.horizon);
    let a = model.latent(&obs, &tokens, 8, &full).unwrap();
    let b = bumped.latent(&obs, &tokens, 8, &full).unwrap();
    let diff = a.tokens.data().iter().zip(b.tokens.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(diff > 1e-3, "mask token had no effect: {diff}");
}

#[test]
fn training_halves_the_loss_on_a_small_synthetic_set() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let cfg = PolicyConfig {
        loss_masking: LossMasking::Full,
        ..toy()
    };
    let model = FreqPolicy::new(cfg.clone(), &mut rng).unwrap();
    let data = synthetic(&cfg, 64, &mut rng);
    let initial = mean_loss(&model, &data, 72, 4);
    let tc = TrainerConfig {
        batch_size: 16,
        total_steps: 200,
        optimizer: AdamWConfig {
            lr: 3e-3,
            ..AdamWConfig::default()
        },
    };
    let mut trainer = Trainer::new(model, tc, 73).unwrap();
    while !trainer.finished() {
        trainer.train_step(&data).unwrap();
    }
    let last = mean_loss(&trainer.model, &data, 72, 4);
    assert!(last < 0.5 * initial, "{initial} -> {last}");
}
