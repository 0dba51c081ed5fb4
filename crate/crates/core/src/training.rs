//! Loss functions, discriminator pretraining and the alternating
//! generator/discriminator loop with temperature schedule and data mixing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{
    sample_flow_forecast, sample_pressure_forecast, sample_state_constants, stream_rng,
    DatagenError, LabelledSample, SamplerConfig,
};
use crate::gas::{
    build_instance_milp, GasNetwork, Instance, NetworkState, ObjectiveWeights,
    OperationModeSequence, INSTANCE_FORMAT_VERSION,
};
use crate::milp::{solve_milp, SolveParams, SolveStatus};
use crate::neural::io::{save_weights, ENCODING_LAYOUT};
use crate::neural::nets::batch_encodings;
use crate::neural::{
    adam_step, encode_instance, round_to_one_hot, AdamParams, AdamState, CyclicLr,
    DiscriminatorNet, EncodedInstance, GeneratorNet, NeuralError, PlateauLr, Tensor,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Gas(#[from] crate::gas::GasError),
    #[error(transparent)]
    Milp(#[from] crate::milp::MilpError),
}

/// All training hyperparameters. `paper()` carries the published full-scale
/// values; `desk()` is the default test-sized profile.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub pretrain_weight_decay: f64,
    pub cyclic_max_lr: f64,
    pub cyclic_base_lr: f64,
    pub cyclic_step_size_up: u64,
    pub num_scenarios: usize,
    pub num_data_new: usize,
    pub num_data_old: usize,
    pub num_epochs: usize,
    pub num_generator_epochs: usize,
    pub num_discriminator_epochs: usize,
    pub num_prelabelled: usize,
    pub ratio_test: f64,
    pub alternating_lr: f64,
    pub alternating_weight_decay: f64,
    pub plateau_patience: u32,
    pub plateau_factor: f64,
    pub objective_scale: f64,
    /// Stopping threshold multipliers applied to measured anchors.
    pub stop_multiplier_discriminator: f64,
    pub stop_multiplier_generator: f64,
    /// Gradient steps per generator epoch.
    pub generator_steps_per_epoch: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn paper() -> Self {
        TrainConfig {
            batch_size: 2048,
            pretrain_epochs: 500,
            pretrain_lr: 0.005,
            pretrain_weight_decay: 5e-6,
            cyclic_max_lr: 5e-4,
            cyclic_base_lr: 5e-6,
            cyclic_step_size_up: 10_000,
            num_scenarios: 3_200_000,
            num_data_new: 2048,
            num_data_old: 8192,
            num_epochs: 10,
            num_generator_epochs: 25,
            num_discriminator_epochs: 25,
            num_prelabelled: 8192,
            ratio_test: 0.1,
            alternating_lr: 0.001,
            alternating_weight_decay: 5e-6,
            plateau_patience: 2,
            plateau_factor: 0.5,
            objective_scale: 500.0,
            stop_multiplier_discriminator: 3.0,
            stop_multiplier_generator: 0.9,
            generator_steps_per_epoch: 1562,
            seed: 0,
        }
    }

    /// Shrunk counts with identical structure and multipliers.
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 32,
            pretrain_epochs: 20,
            cyclic_max_lr: 2e-3,
            cyclic_step_size_up: 40,
            num_scenarios: 2000,
            num_data_new: 64,
            num_data_old: 256,
            num_epochs: 3,
            num_generator_epochs: 8,
            num_discriminator_epochs: 6,
            num_prelabelled: 256,
            generator_steps_per_epoch: 16,
            ..TrainConfig::paper()
        }
    }
}

/// L1 distance to the scaled oracle objective.
pub fn discriminator_loss(f_hat: f64, f: f64, scale: f64) -> f64 {
    (f_hat - f / scale).abs()
}

/// L1 distance to zero; nonnegative because of the softplus head.
pub fn generator_loss(f_hat: f64) -> f64 {
    f_hat.abs()
}

/// One-hot rows (steps x modes) to a (1, modes, steps) tensor.
pub fn z1_tensor(rows: &[Vec<f64>]) -> Tensor {
    let (t_n, c_n) = (rows.len(), rows[0].len());
    let mut out = Tensor::zeros(&[1, c_n, t_n]);
    for (t, row) in rows.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            *out.at3_mut(0, c, t) = v;
        }
    }
    out
}

fn batch_z1(samples: &[&LabelledSample]) -> Tensor {
    let singles: Vec<Tensor> = samples.iter().map(|s| z1_tensor(&s.z1)).collect();
    let (c_n, t_n) = (singles[0].shape[1], singles[0].shape[2]);
    let mut out = Tensor::zeros(&[singles.len(), c_n, t_n]);
    for (b, s) in singles.iter().enumerate() {
        out.data[b * c_n * t_n..(b + 1) * c_n * t_n].copy_from_slice(&s.data);
    }
    out
}

fn batch_pi(network: &GasNetwork, samples: &[&LabelledSample]) -> EncodedInstance {
    let encs: Vec<EncodedInstance> =
        samples.iter().map(|s| encode_instance(network, &s.pi)).collect();
    batch_encodings(&encs)
}

/// Mean batch L1 over a dataset without updating parameters.
pub fn evaluate_discriminator(
    disc: &DiscriminatorNet,
    network: &GasNetwork,
    data: &[LabelledSample],
    config: &TrainConfig,
) -> Result<f64, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in data.chunks(config.batch_size) {
        let refs: Vec<&LabelledSample> = chunk.iter().collect();
        let (out, _) = disc.forward(&batch_z1(&refs), &batch_pi(network, &refs))?;
        for (f_hat, s) in out.iter().zip(chunk) {
            total += discriminator_loss(*f_hat, s.objective, config.objective_scale);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// One pass over shuffled batches: zero grads, forward, L1, backward, Adam.
#[allow(clippy::too_many_arguments)]
pub fn discriminator_training_loop(
    disc: &mut DiscriminatorNet,
    network: &GasNetwork,
    data: &[LabelledSample],
    config: &TrainConfig,
    adam: &mut AdamState,
    lr: f64,
    weight_decay: f64,
    rng: &mut impl Rng,
) -> Result<f64, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let hp = AdamParams { lr, weight_decay, ..AdamParams::default() };
    let mut total = 0.0;
    let mut batches = 0usize;
    for chunk in order.chunks(config.batch_size) {
        let refs: Vec<&LabelledSample> = chunk.iter().map(|&i| &data[i]).collect();
        let z1 = batch_z1(&refs);
        let enc = batch_pi(network, &refs);
        disc.store.zero_grads();
        let (out, cache) = disc.forward(&z1, &enc)?;
        let mut batch_loss = 0.0;
        let grad: Vec<f64> = out
            .iter()
            .zip(&refs)
            .map(|(&f_hat, s)| {
                let target = s.objective / config.objective_scale;
                batch_loss += (f_hat - target).abs();
                (f_hat - target).signum() / refs.len() as f64
            })
            .collect();
        disc.backward(&cache, &grad);
        adam_step(&mut disc.store, adam, &hp);
        total += batch_loss / refs.len() as f64;
        batches += 1;
    }
    Ok(total / batches as f64)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PretrainHistory {
    pub train_loss: Vec<f64>,
    pub test_loss: Vec<f64>,
    pub final_validation_loss: f64,
    pub untrained_test_loss: f64,
}

/// Deterministic train/test/validation split by shuffled index,
/// test and validation each taking `ratio_test`.
pub fn split_dataset<'a>(
    data: &'a [LabelledSample],
    ratio_test: f64,
    seed: u64,
) -> (Vec<&'a LabelledSample>, Vec<&'a LabelledSample>, Vec<&'a LabelledSample>) {
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = stream_rng(seed, 90, 0);
    order.shuffle(&mut rng);
    let n_test = ((data.len() as f64) * ratio_test).round().max(1.0) as usize;
    let n_val = n_test;
    let test: Vec<_> = order[..n_test].iter().map(|&i| &data[i]).collect();
    let val: Vec<_> = order[n_test..n_test + n_val].iter().map(|&i| &data[i]).collect();
    let train: Vec<_> = order[n_test + n_val..].iter().map(|&i| &data[i]).collect();
    (train, test, val)
}

/// Epochs of the training loop with Adam and reduce-on-plateau, recording
/// train/test curves and the final validation loss.
pub fn pretrain_discriminator(
    disc: &mut DiscriminatorNet,
    network: &GasNetwork,
    data: &[LabelledSample],
    config: &TrainConfig,
) -> Result<PretrainHistory, TrainError> {
    if data.len() < 3 {
        return Err(TrainError::EmptyDataset);
    }
    let (train, test, val) = split_dataset(data, config.ratio_test, config.seed);
    let train_owned: Vec<LabelledSample> = train.into_iter().cloned().collect();
    let test_owned: Vec<LabelledSample> = test.into_iter().cloned().collect();
    let val_owned: Vec<LabelledSample> = val.into_iter().cloned().collect();

    let mut history = PretrainHistory {
        untrained_test_loss: evaluate_discriminator(disc, network, &test_owned, config)?,
        ..PretrainHistory::default()
    };
    let mut adam = AdamState::default();
    let mut plateau =
        PlateauLr::new(config.pretrain_lr, config.plateau_factor, config.plateau_patience);
    let mut lr = config.pretrain_lr;
    for epoch in 0..config.pretrain_epochs {
        let mut rng = stream_rng(config.seed, 91, epoch as u64);
        let train_loss = discriminator_training_loop(
            disc,
            network,
            &train_owned,
            config,
            &mut adam,
            lr,
            config.pretrain_weight_decay,
            &mut rng,
        )?;
        let test_loss = evaluate_discriminator(disc, network, &test_owned, config)?;
        lr = plateau.report(test_loss);
        history.train_loss.push(train_loss);
        history.test_loss.push(test_loss);
    }
    history.final_validation_loss = evaluate_discriminator(disc, network, &val_owned, config)?;
    Ok(history)
}

/// Sampled fresh instance for generator batches: forecast + pooled state +
/// constants.
fn sample_pi(
    network: &GasNetwork,
    sampler: &SamplerConfig,
    state_pool: &[NetworkState],
    horizon: usize,
    granularity_s: f64,
    rng: &mut impl Rng,
) -> Result<Instance, TrainError> {
    let flow = sample_flow_forecast(network, sampler, horizon, rng)?;
    let pressure = sample_pressure_forecast(network, sampler, horizon, rng)?;
    let state = state_pool[rng.gen_range(0..state_pool.len())].clone();
    let constants = sample_state_constants(sampler, rng);
    Ok(Instance {
        format_version: INSTANCE_FORMAT_VERSION,
        flow_forecast: flow,
        pressure_forecast: pressure,
        initial_state: state,
        granularity_s,
        horizon,
        state_constants: Some(constants),
    })
}

/// Everything the alternating loop needs to sample fresh instances.
pub struct ScenarioPool<'a> {
    pub network: &'a GasNetwork,
    pub sampler: &'a SamplerConfig,
    pub state_pool: Vec<NetworkState>,
    pub horizon: usize,
    pub granularity_s: f64,
}

/// One generator epoch: fresh pi batches, loss mean f_hat, cyclic LR descent
/// on theta1 with theta2 frozen. Returns the epoch's mean loss.
#[allow(clippy::too_many_arguments)]
pub fn generator_training(
    gen: &mut GeneratorNet,
    disc: &mut DiscriminatorNet,
    pool: &ScenarioPool,
    config: &TrainConfig,
    adam: &mut AdamState,
    cyclic: &mut CyclicLr,
    rng: &mut impl Rng,
) -> Result<f64, TrainError> {
    let frozen = disc.store.clone();
    let mut total = 0.0;
    for _ in 0..config.generator_steps_per_epoch.max(1) {
        let mut encs = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let pi = sample_pi(
                pool.network,
                pool.sampler,
                &pool.state_pool,
                pool.horizon,
                pool.granularity_s,
                rng,
            )?;
            encs.push(encode_instance(pool.network, &pi));
        }
        let enc = batch_encodings(&encs);
        gen.store.zero_grads();
        disc.store.zero_grads();
        let (probs, gen_cache) = gen.forward(&enc)?;
        let (f_hat, disc_cache) = disc.forward(&probs, &enc)?;
        let loss = f_hat.iter().map(|&v| generator_loss(v)).sum::<f64>() / f_hat.len() as f64;
        let grad: Vec<f64> = f_hat.iter().map(|_| 1.0 / f_hat.len() as f64).collect();
        let g_z1 = disc.backward(&disc_cache, &grad);
        gen.backward(&gen_cache, &g_z1);
        let hp = AdamParams {
            lr: cyclic.next_lr(),
            weight_decay: config.alternating_weight_decay,
            ..AdamParams::default()
        };
        adam_step(&mut gen.store, adam, &hp);
        total += loss;
    }
    // theta2 stays bit-identical through the generator phase.
    disc.store = frozen;
    Ok(total / config.generator_steps_per_epoch.max(1) as f64)
}

/// Labels `num_data_new` fresh generator proposals with exact solves and mixes
/// them with old and prelabelled data, interleaved by a seeded shuffle.
#[allow(clippy::too_many_arguments)]
pub fn prepare_discriminator_training_data(
    gen: &GeneratorNet,
    pool: &ScenarioPool,
    old_data: &[LabelledSample],
    prelabelled: &[LabelledSample],
    config: &TrainConfig,
    solve: &SolveParams,
    epoch: u64,
    rng: &mut impl Rng,
) -> Result<Vec<LabelledSample>, TrainError> {
    let mut mixed: Vec<LabelledSample> = Vec::new();
    let num_modes = pool.network.operation_modes.len();
    let mut produced = 0usize;
    let mut attempts = 0usize;
    while produced < config.num_data_new && attempts < 4 * config.num_data_new.max(1) {
        attempts += 1;
        let pi = sample_pi(
            pool.network,
            pool.sampler,
            &pool.state_pool,
            pool.horizon,
            pool.granularity_s,
            rng,
        )?;
        let enc = encode_instance(pool.network, &pi);
        let (probs, _) = gen.forward(&enc)?;
        let z1 = round_to_one_hot(&probs);
        let model =
            build_instance_milp(pool.network, &pi, &ObjectiveWeights::default(), Some(&z1))?;
        match solve_milp(&model, solve, None) {
            Ok(res) if res.status == SolveStatus::Optimal => {
                mixed.push(LabelledSample {
                    pi,
                    z1: z1.to_one_hot(num_modes),
                    objective: res.objective,
                    seed: config.seed,
                    sample_index: (epoch << 32) | produced as u64,
                });
                produced += 1;
            }
            Ok(res) => eprintln!("warning: fresh sample skipped, status {:?}", res.status),
            Err(e) => eprintln!("warning: fresh sample skipped: {e}"),
        }
    }
    let old_tail = old_data.len().saturating_sub(config.num_data_old);
    mixed.extend_from_slice(&old_data[old_tail..]);
    mixed.extend_from_slice(&prelabelled[..config.num_prelabelled.min(prelabelled.len())]);
    mixed.shuffle(rng);
    Ok(mixed)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AlternatingHistory {
    pub generator_loss: Vec<Vec<f64>>,
    pub temperatures: Vec<Vec<f64>>,
    pub discriminator_train_loss: Vec<Vec<f64>>,
    pub discriminator_test_loss: Vec<Vec<f64>>,
    pub stopping_loss_discriminator: f64,
    pub initial_generator_loss: f64,
}

fn checkpoint(dir: &Path, epoch: usize, gen: &GeneratorNet, disc: &DiscriminatorNet) {
    let save = |name: String, store, temp| {
        let p: PathBuf = dir.join(name);
        if let Err(e) = save_weights(&p, store, temp, 1.0, ENCODING_LAYOUT) {
            eprintln!("warning: checkpoint failed: {e}");
        }
    };
    save(format!("generator_epoch{epoch}.weights"), &gen.store, gen.temperature);
    save(format!("discriminator_epoch{epoch}.weights"), &disc.store, 0.0);
}

/// The outer alternating loop. Per epoch: generator phase with rising
/// temperature against a frozen discriminator, then discriminator phase on
/// freshly mixed data against frozen generator parameters.
#[allow(clippy::too_many_arguments)]
pub fn train_alternating(
    gen: &mut GeneratorNet,
    disc: &mut DiscriminatorNet,
    pool: &ScenarioPool,
    prelabelled: &[LabelledSample],
    config: &TrainConfig,
    solve: &SolveParams,
    pretrain_test_loss: f64,
    checkpoint_dir: Option<&Path>,
) -> Result<AlternatingHistory, TrainError> {
    let mut history = AlternatingHistory {
        stopping_loss_discriminator: config.stop_multiplier_discriminator * pretrain_test_loss,
        ..AlternatingHistory::default()
    };
    let mut gen_adam = AdamState::default();
    let mut cyclic =
        CyclicLr::new(config.cyclic_base_lr, config.cyclic_max_lr, config.cyclic_step_size_up);
    let mut old_data: Vec<LabelledSample> = Vec::new();
    let mut temperature_used = false;
    let mut first_loss_recorded = false;

    for epoch in 0..config.num_epochs {
        // Generator phase.
        let mut gen_losses = Vec::new();
        let mut temps = Vec::new();
        let mut stop_loss_gen = f64::INFINITY;
        for g_epoch in 0..config.num_generator_epochs {
            if temperature_used {
                gen.temperature += 1.0;
            } else {
                gen.temperature = 1.0;
                temperature_used = true;
            }
            let mut rng = stream_rng(config.seed, 100, (epoch * 1000 + g_epoch) as u64);
            let loss =
                generator_training(gen, disc, pool, config, &mut gen_adam, &mut cyclic, &mut rng)?;
            if !first_loss_recorded {
                history.initial_generator_loss = loss;
                first_loss_recorded = true;
            }
            if g_epoch == 0 {
                stop_loss_gen = config.stop_multiplier_generator * loss;
            }
            gen_losses.push(loss);
            temps.push(gen.temperature);
            if loss <= stop_loss_gen {
                break;
            }
        }
        history.generator_loss.push(gen_losses);
        history.temperatures.push(temps);

        // Discriminator phase on freshly mixed data.
        let mut rng = stream_rng(config.seed, 101, epoch as u64);
        let mixed = prepare_discriminator_training_data(
            gen,
            pool,
            &old_data,
            prelabelled,
            config,
            solve,
            epoch as u64,
            &mut rng,
        )?;
        old_data.extend(mixed.iter().filter(|s| s.seed == config.seed).cloned());
        if old_data.len() > 4 * config.num_data_old {
            let cut = old_data.len() - 4 * config.num_data_old;
            old_data.drain(..cut);
        }
        let (train, test, _) = split_dataset(&mixed, config.ratio_test, config.seed ^ epoch as u64);
        let train_owned: Vec<LabelledSample> = train.into_iter().cloned().collect();
        let test_owned: Vec<LabelledSample> = test.into_iter().cloned().collect();
        let frozen_gen = gen.store.clone();
        let mut adam = AdamState::default();
        let mut plateau =
            PlateauLr::new(config.alternating_lr, config.plateau_factor, config.plateau_patience);
        let mut lr = config.alternating_lr;
        let mut train_curve = Vec::new();
        let mut test_curve = Vec::new();
        for d_epoch in 0..config.num_discriminator_epochs {
            let mut rng = stream_rng(config.seed, 102, (epoch * 1000 + d_epoch) as u64);
            let train_loss = discriminator_training_loop(
                disc,
                pool.network,
                &train_owned,
                config,
                &mut adam,
                lr,
                config.alternating_weight_decay,
                &mut rng,
            )?;
            let test_loss = evaluate_discriminator(disc, pool.network, &test_owned, config)?;
            lr = plateau.report(test_loss);
            train_curve.push(train_loss);
            test_curve.push(test_loss);
            if test_loss <= history.stopping_loss_discriminator {
                break;
            }
        }
        debug_assert_eq!(
            frozen_gen.iter().map(|(_, t)| t.data.clone()).collect::<Vec<_>>(),
            gen.store.iter().map(|(_, t)| t.data.clone()).collect::<Vec<_>>(),
            "theta1 must stay frozen during the discriminator phase"
        );
        history.discriminator_train_loss.push(train_curve);
        history.discriminator_test_loss.push(test_curve);

        if let Some(dir) = checkpoint_dir {
            checkpoint(dir, epoch, gen, disc);
        }
    }
    Ok(history)
}

/// Convenience: state pool out of a labelled dataset's initial states.
pub fn state_pool_from(data: &[LabelledSample]) -> Vec<NetworkState> {
    let mut unique: BTreeMap<String, NetworkState> = BTreeMap::new();
    for s in data {
        let key = serde_json::to_string(&s.pi.initial_state).unwrap_or_default();
        unique.entry(key).or_insert_with(|| s.pi.initial_state.clone());
    }
    unique.into_values().collect()
}

/// Sequence helper for tests: round a probability tensor per instance.
pub fn probs_to_sequence(probs: &Tensor) -> OperationModeSequence {
    round_to_one_hot(probs)
}
