use gaswarm::datagen::{
    generate_dataset, stream_rng, DatasetParams, LabelledSample, SamplerConfig,
};
use gaswarm::gas::fixtures::toy_station;
use gaswarm::gas::{build_instance_milp, ObjectiveWeights, OperationModeSequence};
use gaswarm::milp::{solve_milp, SolveParams, SolveStatus};
use gaswarm::neural::{AdamState, ArchConfig, CyclicLr, DiscriminatorNet, GeneratorNet};
use gaswarm::training::{
    discriminator_loss, discriminator_training_loop, evaluate_discriminator, generator_loss,
    generator_training, prepare_discriminator_training_data, pretrain_discriminator,
    split_dataset, state_pool_from, train_alternating, z1_tensor, ScenarioPool, TrainConfig,
};

fn small_arch() -> ArchConfig {
    ArchConfig { channels: 4, generator_blocks: 1, discriminator_blocks: 1, ..ArchConfig::default() }
}

fn solve_params() -> SolveParams {
    SolveParams { time_limit_s: 60.0, ..SolveParams::default() }
}

fn micro_config() -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        pretrain_epochs: 3,
        num_scenarios: 24,
        num_data_new: 4,
        num_data_old: 8,
        num_epochs: 2,
        num_generator_epochs: 2,
        num_discriminator_epochs: 2,
        num_prelabelled: 8,
        generator_steps_per_epoch: 2,
        ..TrainConfig::desk()
    }
}

fn small_dataset(n: usize, seed: u64) -> Vec<LabelledSample> {
    let network = toy_station();
    let params = DatasetParams {
        num_states: 4,
        num_scenarios: n,
        time_step_difference: 1,
        horizon: 2,
        granularity_s: 1800.0,
        seed,
    };
    generate_dataset(&network, &SamplerConfig::default(), &params, &solve_params()).unwrap()
}

fn pool<'a>(
    network: &'a gaswarm::gas::GasNetwork,
    sampler: &'a SamplerConfig,
    data: &[LabelledSample],
) -> ScenarioPool<'a> {
    ScenarioPool {
        network,
        sampler,
        state_pool: state_pool_from(data),
        horizon: 2,
        granularity_s: 1800.0,
    }
}

#[test]
fn loss_spot_values() {
    assert_eq!(discriminator_loss(1.5, 500.0, 500.0), 0.5);
    assert_eq!(discriminator_loss(0.2, 500.0, 500.0), 0.8);
    assert_eq!(discriminator_loss(2.0, 1000.0, 500.0), 0.0);
    assert_eq!(generator_loss(0.75), 0.75);
    assert_eq!(generator_loss(0.0), 0.0);
}

#[test]
fn z1_tensor_layout() {
    let rows = vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]];
    let t = z1_tensor(&rows);
    assert_eq!(t.shape, vec![1, 3, 2]);
    assert_eq!(t.at3(0, 0, 0), 1.0);
    assert_eq!(t.at3(0, 2, 1), 1.0);
    assert_eq!(t.data.iter().sum::<f64>(), 2.0);
}

#[test]
fn split_is_deterministic_and_disjoint() {
    let data = small_dataset(30, 11);
    let (tr1, te1, va1) = split_dataset(&data, 0.1, 7);
    let (tr2, te2, va2) = split_dataset(&data, 0.1, 7);
    assert_eq!(tr1.len(), tr2.len());
    assert_eq!(te1.len(), 3);
    assert_eq!(va1.len(), 3);
    assert_eq!(tr1.len() + te1.len() + va1.len(), data.len());
    let idx = |s: &LabelledSample| s.sample_index;
    let a: Vec<u64> = te1.iter().map(|s| idx(s)).collect();
    let b: Vec<u64> = te2.iter().map(|s| idx(s)).collect();
    assert_eq!(a, b);
    for t in &te1 {
        assert!(!va1.iter().any(|v| idx(v) == idx(t) && v.seed == t.seed));
    }
    let _ = (tr1, va2);
}

#[test]
fn evaluate_matches_manual_mean() {
    let network = toy_station();
    let data = small_dataset(10, 3);
    let config = micro_config();
    let disc = DiscriminatorNet::new(&network, small_arch(), &mut stream_rng(5, 50, 0));
    let eval = evaluate_discriminator(&disc, &network, &data, &config).unwrap();
    let mut manual = 0.0;
    for s in &data {
        let enc = gaswarm::neural::encode_instance(&network, &s.pi);
        let (out, _) = disc.forward(&z1_tensor(&s.z1), &enc).unwrap();
        manual += discriminator_loss(out[0], s.objective, config.objective_scale);
    }
    manual /= data.len() as f64;
    assert!((eval - manual).abs() < 1e-9, "batched {eval} vs per-sample {manual}");
}

#[test]
fn training_loop_reduces_loss_and_is_deterministic() {
    let network = toy_station();
    let data = small_dataset(24, 21);
    let config = micro_config();
    let run = || {
        let mut disc = DiscriminatorNet::new(&network, small_arch(), &mut stream_rng(9, 51, 0));
        let before = evaluate_discriminator(&disc, &network, &data, &config).unwrap();
        let mut adam = AdamState::default();
        for epoch in 0..10 {
            let mut rng = stream_rng(13, 52, epoch);
            discriminator_training_loop(
                &mut disc, &network, &data, &config, &mut adam, 0.005, 5e-6, &mut rng,
            )
            .unwrap();
        }
        let after = evaluate_discriminator(&disc, &network, &data, &config).unwrap();
        (before, after, disc)
    };
    let (before, after, d1) = run();
    let (_, after2, d2) = run();
    assert!(after < before, "loss should drop: {before} -> {after}");
    assert_eq!(after, after2, "training must be deterministic");
    for (name, t) in d1.store.iter() {
        assert_eq!(t.data, d2.store.get(name).data);
    }
}

#[test]
fn pretrain_records_history() {
    let network = toy_station();
    let data = small_dataset(30, 31);
    let config = micro_config();
    let mut disc = DiscriminatorNet::new(&network, small_arch(), &mut stream_rng(1, 53, 0));
    let h = pretrain_discriminator(&mut disc, &network, &data, &config).unwrap();
    assert_eq!(h.train_loss.len(), config.pretrain_epochs);
    assert_eq!(h.test_loss.len(), config.pretrain_epochs);
    assert!(h.untrained_test_loss.is_finite() && h.untrained_test_loss >= 0.0);
    assert!(h.final_validation_loss.is_finite());
}

#[test]
fn generator_phase_freezes_discriminator() {
    let network = toy_station();
    let sampler = SamplerConfig::default();
    let data = small_dataset(8, 41);
    let config = micro_config();
    let pool = pool(&network, &sampler, &data);
    let mut gen = GeneratorNet::new(&network, small_arch(), &mut stream_rng(2, 54, 0));
    let mut disc = DiscriminatorNet::new(&network, small_arch(), &mut stream_rng(3, 55, 0));
    let disc_before: Vec<Vec<f64>> = disc.store.iter().map(|(_, t)| t.data.clone()).collect();
    let gen_before: Vec<Vec<f64>> = gen.store.iter().map(|(_, t)| t.data.clone()).collect();
    let mut adam = AdamState::default();
    let mut cyclic = CyclicLr::new(5e-6, 5e-4, 10);
    let mut rng = stream_rng(4, 56, 0);
    let loss =
        generator_training(&mut gen, &mut disc, &pool, &config, &mut adam, &mut cyclic, &mut rng)
            .unwrap();
    assert!(loss.is_finite() && loss >= 0.0);
    let disc_after: Vec<Vec<f64>> = disc.store.iter().map(|(_, t)| t.data.clone()).collect();
    assert_eq!(disc_before, disc_after, "theta2 must not move in the generator phase");
    let gen_after: Vec<Vec<f64>> = gen.store.iter().map(|(_, t)| t.data.clone()).collect();
    assert_ne!(gen_before, gen_after, "theta1 should move");
}

#[test]
fn prepared_data_mixes_and_labels_match_oracle() {
    let network = toy_station();
    let sampler = SamplerConfig::default();
    let prelabelled = small_dataset(16, 61);
    let config = micro_config();
    let pool = pool(&network, &sampler, &prelabelled);
    let gen = GeneratorNet::new(&network, small_arch(), &mut stream_rng(6, 57, 0));
    let old: Vec<LabelledSample> = prelabelled[..12].to_vec();
    let mut rng = stream_rng(7, 58, 0);
    let mixed = prepare_discriminator_training_data(
        &gen,
        &pool,
        &old,
        &prelabelled,
        &config,
        &solve_params(),
        0,
        &mut rng,
    )
    .unwrap();
    assert_eq!(
        mixed.len(),
        config.num_data_new + config.num_data_old + config.num_prelabelled
    );
    // Re-solve one freshly generated label against the oracle.
    let fresh = mixed
        .iter()
        .find(|s| s.seed == config.seed && s.sample_index < (1 << 32))
        .expect("a fresh sample is present");
    let seq = OperationModeSequence::from_one_hot(&fresh.z1);
    let model =
        build_instance_milp(&network, &fresh.pi, &ObjectiveWeights::default(), Some(&seq)).unwrap();
    let res = solve_milp(&model, &solve_params(), None).unwrap();
    assert_eq!(res.status, SolveStatus::Optimal);
    assert!((res.objective - fresh.objective).abs() < 1e-6);
}

#[test]
fn alternating_temperature_continues_across_epochs() {
    let network = toy_station();
    let sampler = SamplerConfig::default();
    let prelabelled = small_dataset(16, 71);
    let config = micro_config();
    let pool = pool(&network, &sampler, &prelabelled);
    let mut gen = GeneratorNet::new(&network, small_arch(), &mut stream_rng(8, 59, 0));
    let mut disc = DiscriminatorNet::new(&network, small_arch(), &mut stream_rng(9, 60, 0));
    let dir = tempfile::tempdir().unwrap();
    let h = train_alternating(
        &mut gen,
        &mut disc,
        &pool,
        &prelabelled,
        &config,
        &solve_params(),
        0.5,
        Some(dir.path()),
    )
    .unwrap();
    assert_eq!(h.generator_loss.len(), config.num_epochs);
    assert_eq!(h.stopping_loss_discriminator, 3.0 * 0.5);
    // Temperature starts at 1 and rises by 1 per generator epoch, without
    // resetting between outer epochs.
    let flat: Vec<f64> = h.temperatures.iter().flatten().copied().collect();
    for (i, &t) in flat.iter().enumerate() {
        assert_eq!(t, (i + 1) as f64);
    }
    assert_eq!(gen.temperature, *flat.last().unwrap());
    for epoch in 0..config.num_epochs {
        assert!(dir.path().join(format!("generator_epoch{epoch}.weights")).exists());
        assert!(dir.path().join(format!("discriminator_epoch{epoch}.weights")).exists());
    }
}

#[test]
fn alternating_is_deterministic() {
    let network = toy_station();
    let sampler = SamplerConfig::default();
    let prelabelled = small_dataset(12, 81);
    let config = TrainConfig { num_epochs: 1, ..micro_config() };
    let run = || {
        let pool = pool(&network, &sampler, &prelabelled);
        let mut gen = GeneratorNet::new(&network, small_arch(), &mut stream_rng(10, 61, 0));
        let mut disc = DiscriminatorNet::new(&network, small_arch(), &mut stream_rng(11, 62, 0));
        let h = train_alternating(
            &mut gen, &mut disc, &pool, &prelabelled, &config, &solve_params(), 1.0, None,
        )
        .unwrap();
        (h, gen, disc)
    };
    let (h1, g1, d1) = run();
    let (h2, g2, d2) = run();
    assert_eq!(h1.generator_loss, h2.generator_loss);
    assert_eq!(h1.discriminator_test_loss, h2.discriminator_test_loss);
    for (name, t) in g1.store.iter() {
        assert_eq!(t.data, g2.store.get(name).data, "generator `{name}` differs");
    }
    for (name, t) in d1.store.iter() {
        assert_eq!(t.data, d2.store.get(name).data, "discriminator `{name}` differs");
    }
}

#[test]
fn profiles_have_expected_scales() {
    let paper = TrainConfig::paper();
    assert_eq!(paper.batch_size, 2048);
    assert_eq!(paper.pretrain_epochs, 500);
    assert_eq!(paper.pretrain_lr, 0.005);
    assert_eq!(paper.cyclic_max_lr, 5e-4);
    assert_eq!(paper.cyclic_base_lr, 5e-6);
    assert_eq!(paper.cyclic_step_size_up, 10_000);
    assert_eq!(paper.num_epochs, 10);
    assert_eq!(paper.objective_scale, 500.0);
    assert_eq!(paper.stop_multiplier_discriminator, 3.0);
    assert_eq!(paper.stop_multiplier_generator, 0.9);
    let desk = TrainConfig::desk();
    assert_eq!(desk.num_scenarios, 2000);
    assert_eq!(desk.pretrain_epochs, 20);
    assert_eq!(desk.num_data_new, 64);
    assert_eq!(desk.num_data_old, 256);
    assert_eq!(desk.num_prelabelled, 256);
    assert_eq!(desk.batch_size, 32);
    // Shared knobs stay aligned with the full profile.
    assert_eq!(desk.alternating_lr, paper.alternating_lr);
    assert_eq!(desk.plateau_patience, paper.plateau_patience);
}
