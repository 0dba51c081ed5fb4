//! Synthetic instance generation: balanced flow forecasts, pressure
//! forecasts, operation-mode sequences, sampled state constants, initial
//! states and full labelled datasets.
//!
//! All sampling is driven by a counter-based generator (ChaCha8). Every
//! logical sample owns an independent stream derived from (seed, phase,
//! index), so parallel and serial generation produce identical output.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gas::{
    build_instance_milp, FlowSign, GasNetwork, Instance, NetworkState, ObjectiveWeights,
    OperationModeSequence, StateConstants, INSTANCE_FORMAT_VERSION,
};
use crate::milp::{solve_milp, MilpError, SolveParams, SolveStatus};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("simplex sampling supports at most 3 boundary nodes, got {0}")]
    TooManyBoundaryGroups(usize),
    #[error("rejection budget exceeded after {0} attempts ({1})")]
    RejectionBudgetExceeded(usize, String),
    #[error("empty seed-state pool")]
    EmptyPool,
    #[error("no boundary nodes in network")]
    NoBoundaryNodes,
    #[error(transparent)]
    Gas(#[from] crate::gas::GasError),
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Sampling parameters. The step limits, box inflation, padding fraction and
/// switch threshold are fixed method constants; the flow and pressure
/// extremes stand in for historical reference data and come from the network
/// fixture.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// M_q, the largest absolute boundary flow in the reference data.
    pub max_abs_flow: f64,
    /// M_p^- and M_p^+, the pressure range endpoints.
    pub pressure_min: f64,
    pub pressure_max: f64,
    /// Max |q_{v,t} - q_{v,t-1}| between adjacent steps.
    pub flow_step_limit: f64,
    /// Max |q_{v1,t} - q_{v2,t}| within one fence group.
    pub fence_group_limit: f64,
    /// Max |p_{v,t} - p_{v,t-1}| between adjacent steps.
    pub pressure_step_limit: f64,
    /// Flow box half-width factor: samples live in [-c*M_q, c*M_q].
    pub box_inflation: f64,
    /// Range padding fraction for pressures and constants.
    pub range_padding: f64,
    /// A mode switch happens when rand(0,1) >= this.
    pub switch_threshold: f64,
    pub max_rejections: usize,
    /// Reference min/max per state constant.
    pub constant_min: StateConstants,
    pub constant_max: StateConstants,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            max_abs_flow: 150.0,
            pressure_min: 35.0,
            pressure_max: 65.0,
            flow_step_limit: 200.0,
            fence_group_limit: 200.0,
            pressure_step_limit: 5.0,
            box_inflation: 1.05,
            range_padding: 0.05,
            switch_threshold: 0.9,
            max_rejections: 100_000,
            constant_min: StateConstants {
                temperature: 278.0,
                inflow_norm_density: 0.70,
                molar_mass: 16.0,
                pseudo_critical_temperature: 190.0,
                pseudo_critical_pressure: 45.0,
            },
            constant_max: StateConstants {
                temperature: 293.0,
                inflow_norm_density: 0.85,
                molar_mass: 19.0,
                pseudo_critical_temperature: 210.0,
                pseudo_critical_pressure: 47.0,
            },
        }
    }
}

impl SamplerConfig {
    fn validate(&self) {
        assert!(self.max_abs_flow > 0.0 && self.flow_step_limit > 0.0);
        assert!(self.pressure_step_limit > 0.0 && self.fence_group_limit > 0.0);
        assert!(self.switch_threshold > 0.0 && self.switch_threshold < 1.0);
    }
}

/// Independent rng stream for one logical sample.
pub fn stream_rng(seed: u64, phase: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(phase.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index));
    rng
}

fn boundary_ids(network: &GasNetwork) -> Vec<(String, FlowSign, String)> {
    network
        .boundary_nodes()
        .iter()
        .map(|n| {
            let b = n.boundary.as_ref().unwrap();
            (n.id.clone(), b.sign, b.group.clone())
        })
        .collect()
}

/// Uniform point on the balanced box slice: the last coordinate is the
/// negated sum of the free ones, samples outside the box are rejected.
fn sample_balanced(
    bound: f64,
    n: usize,
    max_rejections: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>, DatagenError> {
    for _ in 0..max_rejections.max(1) {
        let mut q: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(-bound..=bound)).collect();
        let last = -q.iter().sum::<f64>();
        if last.abs() <= bound {
            q.push(last);
            return Ok(q);
        }
    }
    Err(DatagenError::RejectionBudgetExceeded(max_rejections, "balanced flow point".into()))
}

/// Balanced flow forecast for every boundary node over the future steps.
pub fn sample_flow_forecast(
    network: &GasNetwork,
    config: &SamplerConfig,
    horizon: usize,
    rng: &mut impl Rng,
) -> Result<BTreeMap<String, Vec<f64>>, DatagenError> {
    config.validate();
    let nodes = boundary_ids(network);
    if nodes.is_empty() {
        return Err(DatagenError::NoBoundaryNodes);
    }
    if nodes.len() > 3 {
        return Err(DatagenError::TooManyBoundaryGroups(nodes.len()));
    }
    let bound = config.box_inflation * config.max_abs_flow;
    let mut steps: Vec<Vec<f64>> = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let mut accepted = None;
        for _ in 0..config.max_rejections.max(1) {
            let q = sample_balanced(bound, nodes.len(), config.max_rejections, rng)?;
            let signs_ok = nodes
                .iter()
                .zip(&q)
                .all(|((_, sign, _), &v)| v * sign.sign() >= 0.0);
            let temporal_ok = t == 0
                || steps[t - 1]
                    .iter()
                    .zip(&q)
                    .all(|(&prev, &cur)| (cur - prev).abs() <= config.flow_step_limit);
            let group_ok = nodes.iter().enumerate().all(|(i, (_, _, gi))| {
                nodes.iter().enumerate().all(|(j, (_, _, gj))| {
                    i >= j || gi != gj || (q[i] - q[j]).abs() <= config.fence_group_limit
                })
            });
            if signs_ok && temporal_ok && group_ok {
                accepted = Some(q);
                break;
            }
        }
        match accepted {
            Some(q) => steps.push(q),
            None => {
                return Err(DatagenError::RejectionBudgetExceeded(
                    config.max_rejections,
                    format!("flow step {t}"),
                ))
            }
        }
    }
    Ok(nodes
        .iter()
        .enumerate()
        .map(|(i, (id, _, _))| (id.clone(), steps.iter().map(|s| s[i]).collect()))
        .collect())
}

/// Per-node pressure forecast, uniform in the padded range with adjacent-step
/// deltas bounded.
pub fn sample_pressure_forecast(
    network: &GasNetwork,
    config: &SamplerConfig,
    horizon: usize,
    rng: &mut impl Rng,
) -> Result<BTreeMap<String, Vec<f64>>, DatagenError> {
    config.validate();
    let range = config.pressure_max - config.pressure_min;
    let lo = config.pressure_min - config.range_padding * range;
    let hi = config.pressure_max + config.range_padding * range;
    let mut out = BTreeMap::new();
    for n in network.boundary_nodes() {
        let mut series: Vec<f64> = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let mut accepted = None;
            for _ in 0..config.max_rejections.max(1) {
                let p = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
                if t == 0 || (p - series[t - 1]).abs() <= config.pressure_step_limit {
                    accepted = Some(p);
                    break;
                }
            }
            match accepted {
                Some(p) => series.push(p),
                None => {
                    return Err(DatagenError::RejectionBudgetExceeded(
                        config.max_rejections,
                        format!("pressure step {t}"),
                    ))
                }
            }
        }
        out.insert(n.id.clone(), series);
    }
    Ok(out)
}

/// First step uniform; every later step switches to a uniformly chosen
/// different mode iff the draw reaches the threshold, else repeats.
pub fn sample_operation_mode_sequence(
    num_modes: usize,
    horizon: usize,
    config: &SamplerConfig,
    rng: &mut impl Rng,
) -> OperationModeSequence {
    assert!(num_modes >= 1);
    let mut mode_indices = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let next = if t == 0 {
            rng.gen_range(0..num_modes)
        } else if num_modes > 1 && rng.gen_range(0.0..1.0) >= config.switch_threshold {
            let prev = mode_indices[t - 1];
            let pick = rng.gen_range(0..num_modes - 1);
            if pick >= prev {
                pick + 1
            } else {
                pick
            }
        } else {
            mode_indices[t - 1]
        };
        mode_indices.push(next);
    }
    OperationModeSequence { mode_indices }
}

/// Uniform in the padded [min, max] box, each constant independent.
pub fn sample_state_constants(config: &SamplerConfig, rng: &mut impl Rng) -> StateConstants {
    let lo = config.constant_min.as_array();
    let hi = config.constant_max.as_array();
    let mut out = [0.0; 5];
    for i in 0..5 {
        let pad = config.range_padding * (hi[i] - lo[i]);
        let (a, b) = (lo[i] - pad, hi[i] + pad);
        out[i] = if a == b { a } else { rng.gen_range(a..=b) };
    }
    StateConstants::from_array(out)
}

/// Deterministic seed state: mid-range pressures, zero flows, the first
/// operation mode. Stands in for real historical states, which are not
/// available; documented as a limitation.
pub fn bootstrap_seed_state(network: &GasNetwork) -> NetworkState {
    NetworkState {
        pressures: network
            .nodes
            .iter()
            .map(|n| {
                let (lo, hi) = network.bounds.pressure(&n.id);
                (n.id.clone(), 0.5 * (lo + hi))
            })
            .collect(),
        pipe_flows: network.pipes.iter().map(|p| (p.id.clone(), (0.0, 0.0))).collect(),
        arc_flows: network
            .valves
            .iter()
            .map(|v| v.id.clone())
            .chain(network.compressor_stations.iter().map(|c| c.id.clone()))
            .map(|id| (id, 0.0))
            .collect(),
        inflows: network.boundary_nodes().iter().map(|n| (n.id.clone(), 0.0)).collect(),
        operation_mode: network.operation_modes[0].id.clone(),
    }
}

fn instance_from(
    flow_forecast: BTreeMap<String, Vec<f64>>,
    pressure_forecast: BTreeMap<String, Vec<f64>>,
    initial_state: NetworkState,
    granularity_s: f64,
    horizon: usize,
    state_constants: Option<StateConstants>,
) -> Instance {
    Instance {
        format_version: INSTANCE_FORMAT_VERSION,
        flow_forecast,
        pressure_forecast,
        initial_state,
        granularity_s,
        horizon,
        state_constants,
    }
}

/// Pulls the full network state at step `j` out of a solved model's point.
pub fn extract_state(
    network: &GasNetwork,
    point: &BTreeMap<String, f64>,
    j: usize,
) -> NetworkState {
    let mode = network
        .operation_modes
        .iter()
        .find(|o| point.get(&format!("mode[{},{j}]", o.id)).map_or(false, |v| *v > 0.5))
        .map(|o| o.id.clone())
        .unwrap_or_else(|| network.operation_modes[0].id.clone());
    NetworkState {
        pressures: network
            .nodes
            .iter()
            .map(|n| (n.id.clone(), point[&format!("p[{},{j}]", n.id)]))
            .collect(),
        pipe_flows: network
            .pipes
            .iter()
            .map(|p| {
                (
                    p.id.clone(),
                    (point[&format!("q[{},u,{j}]", p.id)], point[&format!("q[{},v,{j}]", p.id)]),
                )
            })
            .collect(),
        arc_flows: network
            .valves
            .iter()
            .map(|v| v.id.clone())
            .chain(network.compressor_stations.iter().map(|c| c.id.clone()))
            .map(|id| {
                let v = point[&format!("q[{id},{j}]")];
                (id, v)
            })
            .collect(),
        inflows: network
            .boundary_nodes()
            .iter()
            .map(|n| (n.id.clone(), point[&format!("d[{},{j}]", n.id)]))
            .collect(),
        operation_mode: mode,
    }
}

/// Samples a scenario from a random seed state, solves the fixed model and
/// returns the trajectory's state at step `j`.
#[allow(clippy::too_many_arguments)]
pub fn generate_initial_state(
    network: &GasNetwork,
    seed_pool: &[NetworkState],
    config: &SamplerConfig,
    params: &SolveParams,
    granularity_s: f64,
    horizon: usize,
    j: usize,
    rng: &mut impl Rng,
) -> Result<NetworkState, DatagenError> {
    assert!(j >= 1 && j <= horizon);
    if seed_pool.is_empty() {
        return Err(DatagenError::EmptyPool);
    }
    let mut last_err = String::new();
    for _ in 0..config.max_rejections.min(16).max(1) {
        let flow = sample_flow_forecast(network, config, horizon, rng)?;
        let pressure = sample_pressure_forecast(network, config, horizon, rng)?;
        let constants = sample_state_constants(config, rng);
        let seed = seed_pool[rng.gen_range(0..seed_pool.len())].clone();
        let inst = instance_from(flow, pressure, seed, granularity_s, horizon, Some(constants));
        let z1 = sample_operation_mode_sequence(network.operation_modes.len(), horizon, config, rng);
        let model =
            build_instance_milp(network, &inst, &ObjectiveWeights::default(), Some(&z1))?;
        let res = solve_milp(&model, params, None)?;
        if res.status == SolveStatus::Optimal {
            return Ok(extract_state(network, &res.named_point(&model), j));
        }
        last_err = format!("solve status {:?}", res.status);
    }
    Err(DatagenError::RejectionBudgetExceeded(config.max_rejections, last_err))
}

/// One labelled training triple: the instance, the fixed mode sequence as a
/// one-hot matrix (rows = steps), and the exact optimal objective.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LabelledSample {
    pub pi: Instance,
    pub z1: Vec<Vec<f64>>,
    pub objective: f64,
    pub seed: u64,
    pub sample_index: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetParams {
    pub num_states: usize,
    pub num_scenarios: usize,
    pub time_step_difference: usize,
    pub horizon: usize,
    pub granularity_s: f64,
    pub seed: u64,
}

impl Default for DatasetParams {
    fn default() -> Self {
        DatasetParams {
            num_states: 8,
            num_scenarios: 64,
            time_step_difference: 1,
            horizon: 2,
            granularity_s: 1800.0,
            seed: 0,
        }
    }
}

const PHASE_STATES: u64 = 0;
const PHASE_FORECASTS: u64 = 1;
const PHASE_SCENARIOS: u64 = 2;

/// Full labelled-dataset generation: build an initial-state pool, a forecast
/// pool, then label one scenario per forecast with an exact solve. Failed
/// samples are skipped, never aborting the batch.
pub fn generate_dataset(
    network: &GasNetwork,
    config: &SamplerConfig,
    params: &DatasetParams,
    solve: &SolveParams,
) -> Result<Vec<LabelledSample>, DatagenError> {
    let j = params.time_step_difference.clamp(1, params.horizon);
    let seed_pool = vec![bootstrap_seed_state(network)];
    let mut states = Vec::with_capacity(params.num_states);
    for i in 0..params.num_states {
        let mut rng = stream_rng(params.seed, PHASE_STATES, i as u64);
        match generate_initial_state(
            network,
            &seed_pool,
            config,
            solve,
            params.granularity_s,
            params.horizon,
            j,
            &mut rng,
        ) {
            Ok(s) => states.push(s),
            Err(e) => eprintln!("warning: initial state {i} skipped: {e}"),
        }
    }
    if states.is_empty() {
        return Err(DatagenError::EmptyPool);
    }

    let mut forecasts = Vec::with_capacity(params.num_scenarios);
    for i in 0..params.num_scenarios {
        let mut rng = stream_rng(params.seed, PHASE_FORECASTS, i as u64);
        let flow = sample_flow_forecast(network, config, params.horizon, &mut rng)?;
        let pressure = sample_pressure_forecast(network, config, params.horizon, &mut rng)?;
        forecasts.push((flow, pressure));
    }

    let mut out = Vec::with_capacity(params.num_scenarios);
    for (i, (flow, pressure)) in forecasts.into_iter().enumerate() {
        let mut rng = stream_rng(params.seed, PHASE_SCENARIOS, i as u64);
        let z1 = sample_operation_mode_sequence(
            network.operation_modes.len(),
            params.horizon,
            config,
            &mut rng,
        );
        let state = states[rng.gen_range(0..states.len())].clone();
        let constants = sample_state_constants(config, &mut rng);
        let pi = instance_from(
            flow,
            pressure,
            state,
            params.granularity_s,
            params.horizon,
            Some(constants),
        );
        let model = match build_instance_milp(network, &pi, &ObjectiveWeights::default(), Some(&z1))
        {
            Ok(m) => m,
            Err(e) => {
                eprintln!("warning: scenario {i} skipped at build: {e}");
                continue;
            }
        };
        match solve_milp(&model, solve, None) {
            Ok(res) if res.status == SolveStatus::Optimal => out.push(LabelledSample {
                pi,
                z1: z1.to_one_hot(network.operation_modes.len()),
                objective: res.objective,
                seed: params.seed,
                sample_index: i as u64,
            }),
            Ok(res) => eprintln!("warning: scenario {i} skipped: status {:?}", res.status),
            Err(e) => eprintln!("warning: scenario {i} skipped: {e}"),
        }
    }
    Ok(out)
}

/// Newline-delimited JSON, one record per line, in sample order.
pub fn write_dataset(path: &Path, samples: &[LabelledSample]) -> Result<(), DatagenError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut f, s)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<LabelledSample>, DatagenError> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
