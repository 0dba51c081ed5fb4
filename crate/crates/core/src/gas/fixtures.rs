//! Built-in test networks: a small hand-countable station and a larger
//! template matching published station statistics. Both are used by the unit
//! tests and the `net synth` command.
//!
//! Hand count for [`toy_station`] with horizon 2:
//!   t = 0 state variables: 6 pressures + 6 pipe-end flows + 3 arc flows
//!   + 3 inflows = 18.
//!   Per future step: 18 state + 4 modes + 12 slacks + 2 valve indicators
//!   + 3 compressor states x (1 indicator + 3 copies) + 1 gamma + 3 direction
//!   binaries + 4 deltas = 56.  Total 18 + 2 * 56 = 130 variables, 8 of them
//!   in z1.
//!   Rows per future step: 6 pipe + 6 balance + 27 compressor + 8 valve
//!   + 6 coupling + 6 slack + 8 delta + 2 gamma + 6 direction = 75.
//!   Total 150 rows.

use std::collections::BTreeMap;

use super::network::{
    BoundaryAttr, CompressorState, CompressorStation, Configuration, FlowSign, GasConstants,
    GasNetwork, Instance, NetworkBounds, NetworkState, Node, OperationMode, Pipe, Valve,
    ValveState, INSTANCE_FORMAT_VERSION, NETWORK_FORMAT_VERSION,
};

pub const TOY_VARS_AT_T0: usize = 18;
pub const TOY_VARS_PER_STEP: usize = 56;
pub const TOY_ROWS_PER_STEP: usize = 75;
pub const TOY_Z1_PER_STEP: usize = 4;

fn node(id: &str) -> Node {
    Node { id: id.into(), boundary: None }
}

fn boundary(id: &str, sign: FlowSign, group: &str) -> Node {
    Node {
        id: id.into(),
        boundary: Some(BoundaryAttr { sign, group: group.into() }),
    }
}

fn pipe(id: &str, from: &str, to: &str) -> Pipe {
    Pipe {
        id: id.into(),
        from: from.into(),
        to: to.into(),
        length: 1000.0,
        diameter: 0.8,
        area: 0.5,
        slope: 0.0,
        friction: 5.0e-5,
        compressibility: 0.8,
    }
}

fn valve(id: &str, from: &str, to: &str) -> Valve {
    Valve { id: id.into(), from: from.into(), to: to.into() }
}

/// Entry B1 feeding two exits B2/B3 through an inner triangle; one compressor
/// station parallel to valve V1. Four operation modes, one with the
/// compressor running.
pub fn toy_station() -> GasNetwork {
    let mode = |id: &str, v1: ValveState, v2: ValveState, cs: CompressorState| OperationMode {
        id: id.into(),
        valve_states: BTreeMap::from([("V1".into(), v1), ("V2".into(), v2)]),
        compressor_states: BTreeMap::from([("CS1".into(), cs)]),
    };
    GasNetwork {
        format_version: NETWORK_FORMAT_VERSION,
        id: "toy".into(),
        nodes: vec![
            boundary("B1", FlowSign::Entry, "g1"),
            boundary("B2", FlowSign::Exit, "g2"),
            boundary("B3", FlowSign::Exit, "g3"),
            node("N1"),
            node("N2"),
            node("N3"),
        ],
        pipes: vec![pipe("P1", "B1", "N1"), pipe("P2", "N2", "B2"), pipe("P3", "N3", "B3")],
        valves: vec![valve("V1", "N1", "N2"), valve("V2", "N1", "N3")],
        compressor_stations: vec![CompressorStation {
            id: "CS1".into(),
            from: "N1".into(),
            to: "N2".into(),
            configurations: vec![Configuration {
                id: "c1".into(),
                facets: vec![
                    [1.0, -1.0, 0.0, 0.0],
                    [-2.0, 1.0, 0.0, 0.0],
                    [0.0, 0.0, -1.0, 0.0],
                    [0.0, 0.0, 1.0, -80.0],
                ],
            }],
        }],
        operation_modes: vec![
            mode("o1", ValveState::Open, ValveState::Open, CompressorState::Closed),
            mode("o2", ValveState::Open, ValveState::Closed, CompressorState::Closed),
            mode("o3", ValveState::Closed, ValveState::Open, CompressorState::Closed),
            mode("o4", ValveState::Closed, ValveState::Open, CompressorState::Config("c1".into())),
        ],
        // Pre-converted so that pressures in bar and flows in the project
        // mass-flow unit give drops of a few bar across a loaded pipe.
        constants: GasConstants {
            specific_gas_constant: 0.005,
            temperature: 300.0,
            gravity: 9.81,
            velocity_floor: 0.5,
            state: None,
        },
        bounds: NetworkBounds {
            pressure_default: (30.0, 70.0),
            flow_default: (-100.0, 100.0),
            inflow_default: (-150.0, 150.0),
            pressure: BTreeMap::new(),
            flow: BTreeMap::new(),
            inflow: BTreeMap::from([
                ("B1".into(), (0.0, 150.0)),
                ("B2".into(), (-150.0, 0.0)),
                ("B3".into(), (-150.0, 0.0)),
            ]),
        },
    }
}

/// A steady state for the toy station in mode o1: uniform pressure, inflow
/// split evenly between the two exits.
pub fn toy_initial_state() -> NetworkState {
    NetworkState {
        pressures: ["B1", "B2", "B3", "N1", "N2", "N3"]
            .into_iter()
            .map(|n| (n.to_string(), 50.0))
            .collect(),
        pipe_flows: BTreeMap::from([
            ("P1".into(), (60.0, 60.0)),
            ("P2".into(), (30.0, 30.0)),
            ("P3".into(), (30.0, 30.0)),
        ]),
        arc_flows: BTreeMap::from([
            ("V1".into(), 30.0),
            ("V2".into(), 30.0),
            ("CS1".into(), 0.0),
        ]),
        inflows: BTreeMap::from([
            ("B1".into(), 60.0),
            ("B2".into(), -30.0),
            ("B3".into(), -30.0),
        ]),
        operation_mode: "o1".into(),
    }
}

/// Constant-forecast instance continuing [`toy_initial_state`].
pub fn toy_instance(horizon: usize) -> Instance {
    let constant = |v: f64| vec![v; horizon];
    Instance {
        format_version: INSTANCE_FORMAT_VERSION,
        flow_forecast: BTreeMap::from([
            ("B1".into(), constant(60.0)),
            ("B2".into(), constant(-30.0)),
            ("B3".into(), constant(-30.0)),
        ]),
        pressure_forecast: BTreeMap::from([
            ("B1".into(), constant(50.0)),
            ("B2".into(), constant(50.0)),
            ("B3".into(), constant(50.0)),
        ]),
        initial_state: toy_initial_state(),
        granularity_s: 1800.0,
        horizon,
        state_constants: None,
    }
}

/// Template with the published station statistics: 31 nodes, 37 arcs
/// (24 pipes, 11 valves, 2 compressor stations with 2 and 6 configurations)
/// and 56 operation modes. Used only as a build-time stress case.
pub fn station_d_template() -> GasNetwork {
    let mut nodes: Vec<Node> = Vec::new();
    for (i, (sign, group)) in [
        (FlowSign::Entry, "g1"),
        (FlowSign::Entry, "g1"),
        (FlowSign::Exit, "g2"),
        (FlowSign::Exit, "g2"),
        (FlowSign::Exit, "g3"),
        (FlowSign::Exit, "g3"),
    ]
    .into_iter()
    .enumerate()
    {
        nodes.push(boundary(&format!("b{}", i + 1), sign, group));
    }
    for i in 1..=25 {
        nodes.push(node(&format!("n{i}")));
    }
    let ids: Vec<String> = nodes.iter().map(|n| n.id.clone()).collect();

    // A ring over all 31 nodes (24 pipes + valves filling the remaining
    // links) keeps every arc attached to declared nodes.
    let mut pipes = Vec::new();
    let mut valves = Vec::new();
    for i in 0..ids.len() {
        let from = &ids[i];
        let to = &ids[(i + 1) % ids.len()];
        if pipes.len() < 24 {
            pipes.push(pipe(&format!("p{}", pipes.len() + 1), from, to));
        } else if valves.len() < 11 {
            valves.push(valve(&format!("v{}", valves.len() + 1), from, to));
        }
    }
    for i in valves.len()..11 {
        valves.push(valve(&format!("v{}", i + 1), &ids[2 * i % 25 + 6], &ids[(2 * i + 7) % 25 + 6]));
    }

    let config = |id: String, qmax: f64| Configuration {
        id,
        facets: vec![
            [1.0, -1.0, 0.0, 0.0],
            [-2.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0, -qmax],
        ],
    };
    let compressor_stations = vec![
        CompressorStation {
            id: "cs1".into(),
            from: "n1".into(),
            to: "n5".into(),
            configurations: (1..=2).map(|i| config(format!("a{i}"), 200.0 + 50.0 * i as f64)).collect(),
        },
        CompressorStation {
            id: "cs2".into(),
            from: "n10".into(),
            to: "n15".into(),
            configurations: (1..=6).map(|i| config(format!("b{i}"), 100.0 + 40.0 * i as f64)).collect(),
        },
    ];

    let mut operation_modes = Vec::new();
    for i in 0..56usize {
        let valve_states = (1..=11)
            .map(|j| {
                let open = (i * 7 + j) % 3 != 0;
                (
                    format!("v{j}"),
                    if open { ValveState::Open } else { ValveState::Closed },
                )
            })
            .collect();
        let cs_state = |sel: usize, prefix: &str| match sel {
            0 => CompressorState::Bypass,
            1 => CompressorState::Closed,
            s => CompressorState::Config(format!("{prefix}{}", s - 1)),
        };
        operation_modes.push(OperationMode {
            id: format!("m{i}"),
            valve_states,
            compressor_states: BTreeMap::from([
                ("cs1".into(), cs_state(i % 4, "a")),
                ("cs2".into(), cs_state(i % 8, "b")),
            ]),
        });
    }

    GasNetwork {
        format_version: NETWORK_FORMAT_VERSION,
        id: "station_d_template".into(),
        nodes,
        pipes,
        valves,
        compressor_stations,
        operation_modes,
        constants: GasConstants {
            specific_gas_constant: 500.0,
            temperature: 300.0,
            gravity: 9.81,
            velocity_floor: 0.5,
            state: None,
        },
        bounds: NetworkBounds {
            pressure_default: (30.0, 90.0),
            flow_default: (-400.0, 400.0),
            inflow_default: (-600.0, 600.0),
            pressure: BTreeMap::new(),
            flow: BTreeMap::new(),
            inflow: BTreeMap::new(),
        },
    }
}

/// Flat state and constant forecasts for [`station_d_template`].
pub fn station_d_instance(horizon: usize) -> Instance {
    let net = station_d_template();
    let initial_state = NetworkState {
        pressures: net.nodes.iter().map(|n| (n.id.clone(), 60.0)).collect(),
        pipe_flows: net.pipes.iter().map(|p| (p.id.clone(), (0.0, 0.0))).collect(),
        arc_flows: net
            .valves
            .iter()
            .map(|v| v.id.clone())
            .chain(net.compressor_stations.iter().map(|c| c.id.clone()))
            .map(|id| (id, 0.0))
            .collect(),
        inflows: net.boundary_nodes().iter().map(|n| (n.id.clone(), 0.0)).collect(),
        operation_mode: "m0".into(),
    };
    Instance {
        format_version: INSTANCE_FORMAT_VERSION,
        flow_forecast: net
            .boundary_nodes()
            .iter()
            .map(|n| (n.id.clone(), vec![0.0; horizon]))
            .collect(),
        pressure_forecast: net
            .boundary_nodes()
            .iter()
            .map(|n| (n.id.clone(), vec![60.0; horizon]))
            .collect(),
        initial_state,
        granularity_s: 1800.0,
        horizon,
        state_constants: None,
    }
}
