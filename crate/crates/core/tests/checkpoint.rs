use freqact::checkpoint::{Checkpoint, MAGIC, VERSION};
use freqact::config::RunConfig;
use freqact::env::{fit_normalizers, generate_demos, training_samples, EnvKind};
use freqact::policy::{FreqPolicy, TrainSample, Trainer};
use freqact::trajectory::Normalization;
use freqact::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOY: &str = "\
run.seed = 5
policy.encoder_embed_dim = 16
policy.decoder_embed_dim = 16
policy.encoder_num_heads = 2
policy.decoder_num_heads = 2
policy.encoder_depth = 1
policy.decoder_depth = 1
policy.state_mlp_size = 8
policy.mlp_ratio = 2
policy.diffloss_d = 1
policy.diffloss_w = 16
policy.num_training_steps = 20
train.batchsize = 4
train.steps = 20
train.learning_rate = 1e-3
";

struct Setup {
    run: RunConfig,
    data: Vec<TrainSample>,
    obs_norm: Normalization,
    act_norm: Normalization,
}

fn setup() -> Setup {
    let run = RunConfig::parse("toy", TOY).unwrap();
    let demos = generate_demos(EnvKind::Reach2d, 3, 0.0, 9).unwrap();
    let (obs_norm, act_norm) = fit_normalizers(&demos).unwrap();
    let p = run.policy().unwrap();
    let data = training_samples(&demos, &obs_norm, &act_norm, p.obs_steps, p.horizon, 1).unwrap();
    Setup {
        run,
        data,
        obs_norm,
        act_norm,
    }
}

fn fresh(s: &Setup) -> Trainer {
    let mut rng = ChaCha8Rng::seed_from_u64(s.run.seed());
    let model = FreqPolicy::new(s.run.policy().unwrap(), &mut rng).unwrap();
    Trainer::new(model, s.run.trainer().unwrap(), s.run.seed()).unwrap()
}

fn encoded(s: &Setup, t: &Trainer) -> Vec<u8> {
    Checkpoint::capture(t, &s.run, &s.obs_norm, &s.act_norm).encode()
}

fn offset_of(e: Error) -> usize {
    match e {
        Error::Checkpoint { offset, .. } => offset,
        other => panic!("expected a checkpoint error, got {other}"),
    }
}

#[test]
fn round_trip_preserves_everything() {
    let s = setup();
    let mut t = fresh(&s);
    for _ in 0..3 {
        t.train_step(&s.data).unwrap();
    }
    let bytes = encoded(&s, &t);
    let ck = Checkpoint::decode(&bytes).unwrap();
    assert_eq!(ck.encode(), bytes);
    assert_eq!(ck.step, 3);
    assert_eq!(ck.obs_norm, s.obs_norm);
    let restored = ck.trainer().unwrap();
    assert_eq!(restored.step, t.step);
    assert_eq!(restored.rng, t.rng);
    for (a, b) in restored.model.params.iter().zip(t.model.params.iter()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.value, b.value);
    }
    assert_eq!(encoded(&s, &restored), bytes);
}

#[test]
fn resume_equals_straight_run() {
    let s = setup();
    let mut straight = fresh(&s);
    for _ in 0..20 {
        straight.train_step(&s.data).unwrap();
    }
    let mut first = fresh(&s);
    for _ in 0..10 {
        first.train_step(&s.data).unwrap();
    }
    let mid = encoded(&s, &first);
    drop(first);
    let mut resumed = Checkpoint::decode(&mid).unwrap().trainer().unwrap();
    while !resumed.finished() {
        resumed.train_step(&s.data).unwrap();
    }
    assert_eq!(encoded(&s, &resumed), encoded(&s, &straight));
}

#[test]
fn corruption_is_reported_with_offset() {
    let s = setup();
    let bytes = encoded(&s, &fresh(&s));

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert_eq!(offset_of(Checkpoint::decode(&bad).unwrap_err()), 0);

    let mut bad = bytes.clone();
    bad[8..12].copy_from_slice(&(VERSION + 1).to_le_bytes());
    let e = Checkpoint::decode(&bad).unwrap_err();
    assert!(e.to_string().contains("version"), "{e}");
    assert_eq!(offset_of(e), MAGIC.len());

    // a flipped payload byte trips the checksum, reported at its position
    let mut bad = bytes.clone();
    bad[100] ^= 0x40;
    assert_eq!(offset_of(Checkpoint::decode(&bad).unwrap_err()), bytes.len() - 8);

    for cut in [0, 5, 12, 40, bytes.len() / 2, bytes.len() - 1] {
        assert!(Checkpoint::decode(&bytes[..cut]).is_err(), "cut at {cut}");
    }
}

#[test]
fn exit_code_for_corrupt_checkpoint_is_data() {
    let e = Checkpoint::decode(b"FQACKPT\0").unwrap_err();
    assert_eq!(e.exit_code(), 3);
}
