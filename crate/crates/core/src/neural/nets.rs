//! The generator/discriminator pair and the fixed instance encoding.
//!
//! Encoding layout (also written into weights-file headers): three streams
//! per instance, each shaped (1, channels, future steps).
//!   flow:     boundary-node flow forecast rows, scaled by 1/100
//!   pressure: boundary-node pressure forecast rows, scaled to p/50 - 1
//!   state:    flattened initial state broadcast over time: node pressures
//!             (p/50 - 1), pipe end flows (1/100), arc flows (1/100),
//!             boundary inflows (1/100), one-hot initial mode, five state
//!             constants scaled by fixed divisors (300, 1, 20, 200, 50).

use rand::Rng;

use crate::gas::{GasNetwork, Instance};

use super::layers::{
    conv1d_backward, conv1d_forward, init_conv, init_inception, init_merge, inception_backward,
    inception_forward, merge_backward, merge_forward, InceptionCache, Padding,
};
use super::{
    softmax_temperature, softmax_temperature_backward, softplus, softplus_grad, NeuralError,
    ParameterStore, Tensor,
};

const FLOW_SCALE: f64 = 100.0;
const PRESSURE_SCALE: f64 = 50.0;
const CONSTANT_SCALES: [f64; 5] = [300.0, 1.0, 20.0, 200.0, 50.0];

#[derive(Clone, Copy, Debug)]
pub struct ArchConfig {
    pub channels: usize,
    pub generator_blocks: usize,
    pub discriminator_blocks: usize,
    pub softplus_beta: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig { channels: 16, generator_blocks: 3, discriminator_blocks: 3, softplus_beta: 1.0 }
    }
}

#[derive(Clone, Debug)]
pub struct EncodedInstance {
    pub flow: Tensor,
    pub pressure: Tensor,
    pub state: Tensor,
}

/// Number of channels of the flattened-state stream for a network.
pub fn state_dim(network: &GasNetwork) -> usize {
    network.nodes.len()
        + 2 * network.pipes.len()
        + network.valves.len()
        + network.compressor_stations.len()
        + network.boundary_nodes().len()
        + network.operation_modes.len()
        + 5
}

pub fn encode_instance(network: &GasNetwork, instance: &Instance) -> EncodedInstance {
    let t_n = instance.horizon;
    let boundary = network.boundary_nodes();
    let nb = boundary.len();

    let mut flow = Tensor::zeros(&[1, nb, t_n]);
    let mut pressure = Tensor::zeros(&[1, nb, t_n]);
    for (c, n) in boundary.iter().enumerate() {
        for t in 0..t_n {
            *flow.at3_mut(0, c, t) = instance.flow_forecast[&n.id][t] / FLOW_SCALE;
            *pressure.at3_mut(0, c, t) = instance.pressure_forecast[&n.id][t] / PRESSURE_SCALE - 1.0;
        }
    }

    let st = &instance.initial_state;
    let mut vec = Vec::with_capacity(state_dim(network));
    for n in &network.nodes {
        vec.push(st.pressures[&n.id] / PRESSURE_SCALE - 1.0);
    }
    for p in &network.pipes {
        let (u, v) = st.pipe_flows[&p.id];
        vec.push(u / FLOW_SCALE);
        vec.push(v / FLOW_SCALE);
    }
    for id in network
        .valves
        .iter()
        .map(|v| &v.id)
        .chain(network.compressor_stations.iter().map(|c| &c.id))
    {
        vec.push(st.arc_flows[id] / FLOW_SCALE);
    }
    for n in &boundary {
        vec.push(st.inflows[&n.id] / FLOW_SCALE);
    }
    for o in &network.operation_modes {
        vec.push(if o.id == st.operation_mode { 1.0 } else { 0.0 });
    }
    let consts = instance
        .state_constants
        .as_ref()
        .map(|c| c.as_array())
        .unwrap_or([0.0; 5]);
    for i in 0..5 {
        vec.push(consts[i] / CONSTANT_SCALES[i]);
    }

    let sd = vec.len();
    let mut state = Tensor::zeros(&[1, sd, t_n]);
    for (c, &v) in vec.iter().enumerate() {
        for t in 0..t_n {
            *state.at3_mut(0, c, t) = v;
        }
    }
    EncodedInstance { flow, pressure, state }
}

/// Stacks single-instance encodings into one batch.
pub fn batch_encodings(encs: &[EncodedInstance]) -> EncodedInstance {
    let cat = |pick: fn(&EncodedInstance) -> &Tensor| {
        let first = pick(&encs[0]);
        let (c_n, t_n) = (first.shape[1], first.shape[2]);
        let mut out = Tensor::zeros(&[encs.len(), c_n, t_n]);
        for (b, e) in encs.iter().enumerate() {
            let src = pick(e);
            assert_eq!(src.shape, first.shape, "inconsistent encoding shapes");
            let stride = c_n * t_n;
            out.data[b * stride..(b + 1) * stride].copy_from_slice(&src.data);
        }
        out
    };
    EncodedInstance { flow: cat(|e| &e.flow), pressure: cat(|e| &e.pressure), state: cat(|e| &e.state) }
}

/// Shared trunk turning the three input streams into one feature stream.
struct TrunkCache {
    flow_h: Tensor,
    pres_h: Tensor,
    m1: Tensor,
    state_h: Tensor,
    features: Tensor,
}

fn init_trunk(
    store: &mut ParameterStore,
    prefix: &str,
    nb: usize,
    sd: usize,
    channels: usize,
    rng: &mut impl Rng,
) {
    init_conv(store, &format!("{prefix}.flow_in"), nb, channels, 3, rng);
    init_conv(store, &format!("{prefix}.pres_in"), nb, channels, 3, rng);
    init_merge(store, &format!("{prefix}.merge_fp"), channels, channels, 3, rng);
    init_conv(store, &format!("{prefix}.state_in"), sd, channels, 1, rng);
    init_merge(store, &format!("{prefix}.merge_ps"), channels, channels, 3, rng);
}

fn trunk_forward(
    store: &ParameterStore,
    prefix: &str,
    enc: &EncodedInstance,
) -> Result<TrunkCache, NeuralError> {
    let flow_h = conv1d_forward(store, &format!("{prefix}.flow_in"), &enc.flow, Padding::Same)?;
    let pres_h = conv1d_forward(store, &format!("{prefix}.pres_in"), &enc.pressure, Padding::Same)?;
    let m1 = merge_forward(store, &format!("{prefix}.merge_fp"), &flow_h, &pres_h)?;
    let state_h = conv1d_forward(store, &format!("{prefix}.state_in"), &enc.state, Padding::Same)?;
    let features = merge_forward(store, &format!("{prefix}.merge_ps"), &m1, &state_h)?;
    Ok(TrunkCache { flow_h, pres_h, m1, state_h, features })
}

fn trunk_backward(
    store: &mut ParameterStore,
    prefix: &str,
    enc: &EncodedInstance,
    cache: &TrunkCache,
    grad_features: &Tensor,
) {
    let (g_m1, g_state_h) =
        merge_backward(store, &format!("{prefix}.merge_ps"), &cache.m1, &cache.state_h, grad_features);
    conv1d_backward(store, &format!("{prefix}.state_in"), &enc.state, Padding::Same, &g_state_h);
    let (g_flow_h, g_pres_h) =
        merge_backward(store, &format!("{prefix}.merge_fp"), &cache.flow_h, &cache.pres_h, &g_m1);
    conv1d_backward(store, &format!("{prefix}.pres_in"), &enc.pressure, Padding::Same, &g_pres_h);
    conv1d_backward(store, &format!("{prefix}.flow_in"), &enc.flow, Padding::Same, &g_flow_h);
}

pub struct GeneratorNet {
    pub arch: ArchConfig,
    pub num_modes: usize,
    pub temperature: f64,
    pub store: ParameterStore,
}

pub struct GeneratorCache {
    enc: EncodedInstance,
    trunk: TrunkCache,
    blocks: Vec<InceptionCache>,
    head_in: Tensor,
    probs: Tensor,
}

impl GeneratorCache {
    /// Smallest distance of any residual-block pre-activation to a ReLU
    /// kink; gradient checks resample inputs when this gets too small.
    pub fn kink_margin(&self) -> f64 {
        self.blocks.iter().map(|b| b.kink_margin()).fold(f64::INFINITY, f64::min)
    }
}

impl GeneratorNet {
    pub fn new(network: &GasNetwork, arch: ArchConfig, rng: &mut impl Rng) -> Self {
        let mut store = ParameterStore::new();
        let nb = network.boundary_nodes().len();
        let sd = state_dim(network);
        init_trunk(&mut store, "g", nb, sd, arch.channels, rng);
        for i in 0..arch.generator_blocks {
            init_inception(&mut store, &format!("g.block{i}"), arch.channels, rng);
        }
        init_conv(&mut store, "g.head", arch.channels, network.operation_modes.len(), 1, rng);
        GeneratorNet { arch, num_modes: network.operation_modes.len(), temperature: 1.0, store }
    }

    /// Mode probabilities (batch, modes, steps); each time slice sums to 1.
    pub fn forward(&self, enc: &EncodedInstance) -> Result<(Tensor, GeneratorCache), NeuralError> {
        let trunk = trunk_forward(&self.store, "g", enc)?;
        let mut x = trunk.features.clone();
        let mut blocks = Vec::with_capacity(self.arch.generator_blocks);
        for i in 0..self.arch.generator_blocks {
            let (y, cache) = inception_forward(&self.store, &format!("g.block{i}"), &x)?;
            blocks.push(cache);
            x = y;
        }
        let logits = conv1d_forward(&self.store, "g.head", &x, Padding::Same)?;
        logits.assert_finite("generator logits")?;
        let probs = softmax_temperature(&logits, self.temperature);
        let cache =
            GeneratorCache { enc: enc.clone(), trunk, blocks, head_in: x, probs: probs.clone() };
        Ok((probs, cache))
    }

    /// Accumulates parameter gradients for a given output gradient.
    pub fn backward(&mut self, cache: &GeneratorCache, grad_probs: &Tensor) {
        let g_logits = softmax_temperature_backward(&cache.probs, self.temperature, grad_probs);
        let mut g =
            conv1d_backward(&mut self.store, "g.head", &cache.head_in, Padding::Same, &g_logits);
        for i in (0..cache.blocks.len()).rev() {
            g = inception_backward(&mut self.store, &format!("g.block{i}"), &cache.blocks[i], &g);
        }
        trunk_backward(&mut self.store, "g", &cache.enc, &cache.trunk, &g);
    }
}

pub struct DiscriminatorNet {
    pub arch: ArchConfig,
    pub store: ParameterStore,
}

pub struct DiscriminatorCache {
    enc: EncodedInstance,
    z1: Tensor,
    z_h: Tensor,
    trunk: TrunkCache,
    blocks: Vec<InceptionCache>,
    head_in: Tensor,
    pooled: Vec<f64>,
    t_n: usize,
}

impl DiscriminatorCache {
    pub fn kink_margin(&self) -> f64 {
        self.blocks.iter().map(|b| b.kink_margin()).fold(f64::INFINITY, f64::min)
    }
}

impl DiscriminatorNet {
    pub fn new(network: &GasNetwork, arch: ArchConfig, rng: &mut impl Rng) -> Self {
        let mut store = ParameterStore::new();
        let nb = network.boundary_nodes().len();
        let sd = state_dim(network);
        init_trunk(&mut store, "d", nb, sd, arch.channels, rng);
        init_conv(&mut store, "d.z_in", network.operation_modes.len(), arch.channels, 3, rng);
        init_merge(&mut store, "d.merge_z", arch.channels, arch.channels, 3, rng);
        for i in 0..arch.discriminator_blocks {
            init_inception(&mut store, &format!("d.block{i}"), arch.channels, rng);
        }
        init_conv(&mut store, "d.head", arch.channels, 1, 1, rng);
        DiscriminatorNet { arch, store }
    }

    /// Scalar nonnegative prediction per batch element.
    pub fn forward(
        &self,
        z1: &Tensor,
        enc: &EncodedInstance,
    ) -> Result<(Vec<f64>, DiscriminatorCache), NeuralError> {
        let trunk = trunk_forward(&self.store, "d", enc)?;
        let z_h = conv1d_forward(&self.store, "d.z_in", z1, Padding::Same)?;
        let mut x = merge_forward(&self.store, "d.merge_z", &z_h, &trunk.features)?;
        let mut blocks = Vec::with_capacity(self.arch.discriminator_blocks);
        for i in 0..self.arch.discriminator_blocks {
            let (y, cache) = inception_forward(&self.store, &format!("d.block{i}"), &x)?;
            blocks.push(cache);
            x = y;
        }
        let head = conv1d_forward(&self.store, "d.head", &x, Padding::Same)?;
        head.assert_finite("discriminator head")?;
        let (b_n, t_n) = (head.shape[0], head.shape[2]);
        let pooled: Vec<f64> = (0..b_n)
            .map(|b| (0..t_n).map(|t| head.at3(b, 0, t)).sum::<f64>() / t_n as f64)
            .collect();
        let out = pooled.iter().map(|&p| softplus(p, self.arch.softplus_beta)).collect();
        let cache = DiscriminatorCache {
            enc: enc.clone(),
            z1: z1.clone(),
            z_h,
            trunk,
            blocks,
            head_in: x,
            pooled,
            t_n,
        };
        Ok((out, cache))
    }

    /// Accumulates parameter gradients and returns the gradient with respect
    /// to the z1 input (needed for generator training).
    pub fn backward(&mut self, cache: &DiscriminatorCache, grad_out: &[f64]) -> Tensor {
        let b_n = cache.pooled.len();
        let mut g_head = Tensor::zeros(&[b_n, 1, cache.t_n]);
        for b in 0..b_n {
            let g = grad_out[b] * softplus_grad(cache.pooled[b], self.arch.softplus_beta)
                / cache.t_n as f64;
            for t in 0..cache.t_n {
                *g_head.at3_mut(b, 0, t) = g;
            }
        }
        let mut g =
            conv1d_backward(&mut self.store, "d.head", &cache.head_in, Padding::Same, &g_head);
        for i in (0..cache.blocks.len()).rev() {
            g = inception_backward(&mut self.store, &format!("d.block{i}"), &cache.blocks[i], &g);
        }
        let (g_z_h, g_features) =
            merge_backward(&mut self.store, "d.merge_z", &cache.z_h, &cache.trunk.features, &g);
        trunk_backward(&mut self.store, "d", &cache.enc, &cache.trunk, &g_features);
        conv1d_backward(&mut self.store, "d.z_in", &cache.z1, Padding::Same, &g_z_h)
    }
}
