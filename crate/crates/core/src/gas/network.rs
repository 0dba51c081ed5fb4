//! Network-station description: nodes, arcs, operation modes, constants and
//! bounds, plus the per-instance boundary forecast and initial state. Both are
//! (de)serialised as versioned JSON files.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::GasError;

pub const NETWORK_FORMAT_VERSION: u32 = 1;
pub const INSTANCE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowSign {
    Entry,
    Exit,
}

impl FlowSign {
    pub fn sign(self) -> f64 {
        match self {
            FlowSign::Entry => 1.0,
            FlowSign::Exit => -1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundaryAttr {
    pub sign: FlowSign,
    /// Fence group id; all boundary nodes of a group share their flow sign.
    pub group: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundaryAttr>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Pipe {
    pub id: String,
    pub from: String,
    pub to: String,
    /// Length L_a.
    pub length: f64,
    /// Diameter D_a.
    pub diameter: f64,
    /// Cross-section area A_a.
    pub area: f64,
    /// Slope s_a.
    pub slope: f64,
    /// Friction factor lambda_a.
    pub friction: f64,
    /// Compressibility factor z_a.
    pub compressibility: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Valve {
    pub id: String,
    pub from: String,
    pub to: String,
}

/// One operating-range facet `a0*p_u + a1*p_v + a2*q + a3*m <= 0`.
pub type Facet = [f64; 4];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Configuration {
    pub id: String,
    pub facets: Vec<Facet>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompressorStation {
    pub id: String,
    pub from: String,
    pub to: String,
    pub configurations: Vec<Configuration>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValveState {
    Open,
    Closed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressorState {
    Bypass,
    Closed,
    Config(String),
}

/// One allowable joint discrete state of all valves and compressor stations.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OperationMode {
    pub id: String,
    pub valve_states: BTreeMap<String, ValveState>,
    pub compressor_states: BTreeMap<String, CompressorState>,
}

/// Physical constants of the station; state constants are the per-instance
/// sampled quantities carried alongside the initial state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GasConstants {
    /// Specific gas constant R_s.
    pub specific_gas_constant: f64,
    /// Gas temperature T.
    pub temperature: f64,
    /// Gravitational acceleration g.
    pub gravity: f64,
    /// Floor for the per-pipe constant gas velocity; the momentum equation
    /// degenerates at v = 0.
    #[serde(default = "default_velocity_floor")]
    pub velocity_floor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<StateConstants>,
}

fn default_velocity_floor() -> f64 {
    0.5
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StateConstants {
    pub temperature: f64,
    pub inflow_norm_density: f64,
    pub molar_mass: f64,
    pub pseudo_critical_temperature: f64,
    pub pseudo_critical_pressure: f64,
}

impl StateConstants {
    pub fn as_array(&self) -> [f64; 5] {
        [
            self.temperature,
            self.inflow_norm_density,
            self.molar_mass,
            self.pseudo_critical_temperature,
            self.pseudo_critical_pressure,
        ]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        StateConstants {
            temperature: a[0],
            inflow_norm_density: a[1],
            molar_mass: a[2],
            pseudo_critical_temperature: a[3],
            pseudo_critical_pressure: a[4],
        }
    }
}

/// Variable bounds; per-id entries override the defaults.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetworkBounds {
    pub pressure_default: (f64, f64),
    pub flow_default: (f64, f64),
    pub inflow_default: (f64, f64),
    #[serde(default)]
    pub pressure: BTreeMap<String, (f64, f64)>,
    #[serde(default)]
    pub flow: BTreeMap<String, (f64, f64)>,
    #[serde(default)]
    pub inflow: BTreeMap<String, (f64, f64)>,
}

impl NetworkBounds {
    pub fn pressure(&self, node: &str) -> (f64, f64) {
        self.pressure.get(node).copied().unwrap_or(self.pressure_default)
    }

    pub fn flow(&self, arc: &str) -> (f64, f64) {
        self.flow.get(arc).copied().unwrap_or(self.flow_default)
    }

    pub fn inflow(&self, node: &str) -> (f64, f64) {
        self.inflow.get(node).copied().unwrap_or(self.inflow_default)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GasNetwork {
    pub format_version: u32,
    pub id: String,
    pub nodes: Vec<Node>,
    pub pipes: Vec<Pipe>,
    pub valves: Vec<Valve>,
    pub compressor_stations: Vec<CompressorStation>,
    pub operation_modes: Vec<OperationMode>,
    pub constants: GasConstants,
    pub bounds: NetworkBounds,
}

impl GasNetwork {
    pub fn boundary_nodes(&self) -> Vec<&Node> {
        self.nodes.iter().filter(|n| n.boundary.is_some()).collect()
    }

    /// Fence group ids in sorted order with their member nodes.
    pub fn fence_groups(&self) -> BTreeMap<String, Vec<String>> {
        let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for n in &self.nodes {
            if let Some(b) = &n.boundary {
                groups.entry(b.group.clone()).or_default().push(n.id.clone());
            }
        }
        groups
    }

    pub fn mode_index(&self, id: &str) -> Option<usize> {
        self.operation_modes.iter().position(|m| m.id == id)
    }

    pub fn validate(&self) -> Result<(), GasError> {
        let node_ids: BTreeSet<&str> = self.nodes.iter().map(|n| n.id.as_str()).collect();
        if node_ids.len() != self.nodes.len() {
            return Err(GasError::Inconsistent("duplicate node ids".into()));
        }
        let mut arc_ids = BTreeSet::new();
        let mut check_arc = |id: &str, from: &str, to: &str| -> Result<(), GasError> {
            if !arc_ids.insert(id.to_string()) {
                return Err(GasError::Inconsistent(format!("duplicate arc id `{id}`")));
            }
            if !node_ids.contains(from) || !node_ids.contains(to) {
                return Err(GasError::Inconsistent(format!(
                    "arc `{id}` references unknown node"
                )));
            }
            Ok(())
        };
        for p in &self.pipes {
            check_arc(&p.id, &p.from, &p.to)?;
            if p.length <= 0.0 || p.diameter <= 0.0 || p.area <= 0.0 || p.friction <= 0.0 {
                return Err(GasError::Inconsistent(format!("pipe `{}` has nonpositive geometry", p.id)));
            }
        }
        for v in &self.valves {
            check_arc(&v.id, &v.from, &v.to)?;
        }
        for c in &self.compressor_stations {
            check_arc(&c.id, &c.from, &c.to)?;
            if c.configurations.is_empty() {
                return Err(GasError::Inconsistent(format!(
                    "compressor station `{}` has no configurations",
                    c.id
                )));
            }
            for cfg in &c.configurations {
                if cfg.facets.is_empty() {
                    return Err(GasError::Inconsistent(format!(
                        "configuration `{}` of `{}` has no facets",
                        cfg.id, c.id
                    )));
                }
            }
        }
        // Every operation mode must assign a state to every valve and compressor.
        for mode in &self.operation_modes {
            for v in &self.valves {
                if !mode.valve_states.contains_key(&v.id) {
                    return Err(GasError::Inconsistent(format!(
                        "mode `{}` misses valve `{}`",
                        mode.id, v.id
                    )));
                }
            }
            for c in &self.compressor_stations {
                match mode.compressor_states.get(&c.id) {
                    None => {
                        return Err(GasError::Inconsistent(format!(
                            "mode `{}` misses compressor `{}`",
                            mode.id, c.id
                        )))
                    }
                    Some(CompressorState::Config(cfg)) => {
                        if !c.configurations.iter().any(|x| &x.id == cfg) {
                            return Err(GasError::Inconsistent(format!(
                                "mode `{}` references unknown configuration `{cfg}`",
                                mode.id
                            )));
                        }
                    }
                    _ => {}
                }
            }
        }
        if self.constants.specific_gas_constant <= 0.0
            || self.constants.temperature <= 0.0
            || self.constants.gravity <= 0.0
        {
            return Err(GasError::Inconsistent("gas constants must be strictly positive".into()));
        }
        Ok(())
    }
}

/// Complete network state at one time step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetworkState {
    pub pressures: BTreeMap<String, f64>,
    /// Per pipe: (flow at `from` end, flow at `to` end).
    pub pipe_flows: BTreeMap<String, (f64, f64)>,
    /// Per non-pipe arc: single flow value.
    pub arc_flows: BTreeMap<String, f64>,
    pub inflows: BTreeMap<String, f64>,
    pub operation_mode: String,
}

/// The problem-defining parameter tuple: boundary forecast plus initial state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Instance {
    pub format_version: u32,
    /// Per boundary node, values for t = 1..=horizon.
    pub flow_forecast: BTreeMap<String, Vec<f64>>,
    pub pressure_forecast: BTreeMap<String, Vec<f64>>,
    pub initial_state: NetworkState,
    /// Seconds between consecutive time steps.
    pub granularity_s: f64,
    /// Number of future time steps k; the horizon is {0..k}.
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_constants: Option<StateConstants>,
}

impl Instance {
    /// Time offset of step t from step 0, in seconds.
    pub fn granularity(&self, t: usize) -> f64 {
        self.granularity_s * t as f64
    }

    pub fn validate_against(&self, network: &GasNetwork) -> Result<(), GasError> {
        for n in network.boundary_nodes() {
            for (label, map) in
                [("flow", &self.flow_forecast), ("pressure", &self.pressure_forecast)]
            {
                match map.get(&n.id) {
                    Some(vals) if vals.len() == self.horizon => {}
                    _ => {
                        return Err(GasError::MissingForecast(format!(
                            "{label} forecast for `{}` must cover {} future steps",
                            n.id, self.horizon
                        )))
                    }
                }
            }
        }
        if self.horizon == 0 {
            return Err(GasError::Inconsistent("horizon must contain future steps".into()));
        }
        if network.mode_index(&self.initial_state.operation_mode).is_none() {
            return Err(GasError::UnknownMode(self.initial_state.operation_mode.clone()));
        }
        for n in &network.nodes {
            if !self.initial_state.pressures.contains_key(&n.id) {
                return Err(GasError::Inconsistent(format!(
                    "initial state misses pressure at `{}`",
                    n.id
                )));
            }
        }
        for p in &network.pipes {
            if !self.initial_state.pipe_flows.contains_key(&p.id) {
                return Err(GasError::Inconsistent(format!("initial state misses pipe `{}`", p.id)));
            }
        }
        for id in network
            .valves
            .iter()
            .map(|v| &v.id)
            .chain(network.compressor_stations.iter().map(|c| &c.id))
        {
            if !self.initial_state.arc_flows.contains_key(id) {
                return Err(GasError::Inconsistent(format!("initial state misses arc `{id}`")));
            }
        }
        for n in network.boundary_nodes() {
            if !self.initial_state.inflows.contains_key(&n.id) {
                return Err(GasError::Inconsistent(format!(
                    "initial state misses inflow at `{}`",
                    n.id
                )));
            }
        }
        Ok(())
    }
}

/// One-hot operation-mode choice per future time step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationModeSequence {
    pub mode_indices: Vec<usize>,
}

impl OperationModeSequence {
    pub fn len(&self) -> usize {
        self.mode_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mode_indices.is_empty()
    }

    /// Rows = time steps, columns = modes.
    pub fn to_one_hot(&self, num_modes: usize) -> Vec<Vec<f64>> {
        self.mode_indices
            .iter()
            .map(|&m| {
                let mut row = vec![0.0; num_modes];
                row[m] = 1.0;
                row
            })
            .collect()
    }

    pub fn from_one_hot(rows: &[Vec<f64>]) -> Self {
        let mode_indices = rows
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                    .map(|(i, _)| i)
                    .unwrap_or(0)
            })
            .collect();
        OperationModeSequence { mode_indices }
    }
}

/// Objective weights; the slack terms dominate by default so that a small
/// objective means demand tracking.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub pressure_slack: f64,
    pub flow_slack: f64,
    pub mode_change: f64,
    pub operating_point_change: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        ObjectiveWeights {
            pressure_slack: 100.0,
            flow_slack: 1.0,
            mode_change: 10.0,
            operating_point_change: 1.0,
        }
    }
}
