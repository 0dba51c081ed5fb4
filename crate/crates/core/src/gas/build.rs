//! Assembly of the time-expanded network-station MILP.
//!
//! Variables exist for every time step including t = 0; the initial state is
//! encoded by collapsing the t = 0 bounds, so all rows are uniform in t. Row
//! and variable names are stable and used by tests and the warm-start
//! extraction.

use std::collections::BTreeMap;

use crate::milp::{Block, ParametricMilp, Sense, VariableDef};

use super::network::{
    CompressorState, CompressorStation, GasConstants, GasNetwork, Instance, NetworkState,
    ObjectiveWeights, OperationModeSequence, Pipe, ValveState,
};
use super::GasError;

/// Model assembly runs once per scenario during data generation, so repeated
/// structural warnings are deduplicated for the lifetime of the process.
fn warn_once(message: String) {
    use std::collections::HashSet;
    use std::sync::Mutex;
    static SEEN: Mutex<Option<HashSet<String>>> = Mutex::new(None);
    let mut seen = SEEN.lock().unwrap();
    if seen.get_or_insert_with(HashSet::new).insert(message.clone()) {
        eprintln!("{message}");
    }
}

pub fn pressure_var(node: &str, t: usize) -> String {
    format!("p[{node},{t}]")
}

pub fn pipe_flow_var(pipe: &str, end: char, t: usize) -> String {
    format!("q[{pipe},{end},{t}]")
}

pub fn arc_flow_var(arc: &str, t: usize) -> String {
    format!("q[{arc},{t}]")
}

pub fn inflow_var(node: &str, t: usize) -> String {
    format!("d[{node},{t}]")
}

pub fn slack_var(kind: &str, node: &str, t: usize) -> String {
    format!("sigma_{kind}[{node},{t}]")
}

pub fn cs_copy_var(cs: &str, state: &str, what: &str, t: usize) -> String {
    format!("{what}^{state}[{cs},{t}]")
}

pub fn cs_indicator_var(cs: &str, state: &str, t: usize) -> String {
    format!("m^{state}[{cs},{t}]")
}

pub fn valve_indicator_var(valve: &str, t: usize) -> String {
    format!("m_op[{valve},{t}]")
}

pub fn mode_var(mode: &str, t: usize) -> String {
    format!("mode[{mode},{t}]")
}

pub fn direction_var(group: &str, t: usize) -> String {
    format!("dir[{group},{t}]")
}

pub fn mode_change_var(mode: &str, t: usize) -> String {
    format!("delta[{mode},{t}]")
}

pub fn op_point_change_var(cs: &str, t: usize) -> String {
    format!("gamma[{cs},{t}]")
}

/// Discrete states of a compressor station, in fixed order: bypass, closed,
/// then one per configuration.
fn cs_states(cs: &CompressorStation) -> Vec<String> {
    let mut states = vec!["by".to_string(), "cl".to_string()];
    states.extend(cs.configurations.iter().map(|c| format!("cfg_{}", c.id)));
    states
}

fn cs_state_key(state: &CompressorState) -> String {
    match state {
        CompressorState::Bypass => "by".into(),
        CompressorState::Closed => "cl".into(),
        CompressorState::Config(id) => format!("cfg_{id}"),
    }
}

/// Constant per-pipe gas velocities from the initial state:
/// `v_w = max(floor, |q_w| R_s T z_a / (p_w A_a))` for both pipe ends.
pub fn compute_pipe_velocities(
    pipe: &Pipe,
    initial_state: &NetworkState,
    constants: &GasConstants,
) -> Result<(f64, f64), GasError> {
    let (q_u, q_v) = *initial_state
        .pipe_flows
        .get(&pipe.id)
        .ok_or_else(|| GasError::Inconsistent(format!("no initial flow for pipe `{}`", pipe.id)))?;
    let vel = |q: f64, node: &str| -> Result<f64, GasError> {
        let p = *initial_state
            .pressures
            .get(node)
            .ok_or_else(|| GasError::Inconsistent(format!("no initial pressure at `{node}`")))?;
        if p <= 0.0 {
            return Err(GasError::NonpositivePressure(node.to_string(), p));
        }
        let v = q.abs() * constants.specific_gas_constant * constants.temperature
            * pipe.compressibility
            / (p * pipe.area);
        Ok(v.max(constants.velocity_floor))
    };
    Ok((vel(q_u, &pipe.from)?, vel(q_v, &pipe.to)?))
}

struct Builder<'a> {
    network: &'a GasNetwork,
    instance: &'a Instance,
    weights: &'a ObjectiveWeights,
    model: ParametricMilp,
    k: usize,
}

impl<'a> Builder<'a> {
    fn idx(&self, name: &str) -> usize {
        self.model
            .var_index(name)
            .unwrap_or_else(|| panic!("assembly references undeclared variable `{name}`"))
    }

    fn add_continuous(&mut self, name: String, lo: f64, hi: f64, block: Block) {
        self.model
            .add_variable(VariableDef::continuous(name, lo, hi), block)
            .expect("variable names are unique by construction");
    }

    fn add_binary(&mut self, name: String, block: Block) {
        self.model
            .add_variable(VariableDef::binary(name), block)
            .expect("variable names are unique by construction");
    }

    fn declare_variables(&mut self) -> Result<(), GasError> {
        let net = self.network;
        let init = &self.instance.initial_state;
        // Physical state for all t, fixed at t = 0.
        for t in 0..=self.k {
            for n in &net.nodes {
                let (lo, hi) = if t == 0 {
                    let p = init.pressures[&n.id];
                    (p, p)
                } else {
                    net.bounds.pressure(&n.id)
                };
                self.add_continuous(pressure_var(&n.id, t), lo, hi, Block::X1);
            }
            for p in &net.pipes {
                let (lo, hi) = net.bounds.flow(&p.id);
                let (q_u, q_v) = init.pipe_flows[&p.id];
                let (blo_u, bhi_u) = if t == 0 { (q_u, q_u) } else { (lo, hi) };
                let (blo_v, bhi_v) = if t == 0 { (q_v, q_v) } else { (lo, hi) };
                self.add_continuous(pipe_flow_var(&p.id, 'u', t), blo_u, bhi_u, Block::X1);
                self.add_continuous(pipe_flow_var(&p.id, 'v', t), blo_v, bhi_v, Block::X1);
            }
            for id in net
                .valves
                .iter()
                .map(|v| v.id.clone())
                .chain(net.compressor_stations.iter().map(|c| c.id.clone()))
                .collect::<Vec<_>>()
            {
                let (lo, hi) = if t == 0 {
                    let q = init.arc_flows[&id];
                    (q, q)
                } else {
                    net.bounds.flow(&id)
                };
                self.add_continuous(arc_flow_var(&id, t), lo, hi, Block::X1);
            }
            for n in net.boundary_nodes().iter().map(|n| n.id.clone()).collect::<Vec<_>>() {
                let (lo, hi) = if t == 0 {
                    let d = init.inflows[&n];
                    (d, d)
                } else {
                    net.bounds.inflow(&n)
                };
                self.add_continuous(inflow_var(&n, t), lo, hi, Block::X1);
            }
        }
        // Decision structure and slack for future steps only.
        for t in 1..=self.k {
            for mode in &net.operation_modes {
                self.add_binary(mode_var(&mode.id, t), Block::Z1);
            }
        }
        for t in 1..=self.k {
            for n in net.boundary_nodes().iter().map(|n| n.id.clone()).collect::<Vec<_>>() {
                for kind in ["p_pos", "p_neg", "q_pos", "q_neg"] {
                    self.add_continuous(slack_var(kind, &n, t), 0.0, f64::INFINITY, Block::X2);
                }
            }
            for v in &net.valves {
                self.add_binary(valve_indicator_var(&v.id, t), Block::Z2);
            }
            for cs in &net.compressor_stations {
                let (plo_u, phi_u) = net.bounds.pressure(&cs.from);
                let (plo_v, phi_v) = net.bounds.pressure(&cs.to);
                let (qlo, qhi) = net.bounds.flow(&cs.id);
                for state in cs_states(cs) {
                    self.add_binary(cs_indicator_var(&cs.id, &state, t), Block::Z2);
                    // Disaggregated copies must admit 0 when their indicator is 0.
                    self.add_continuous(
                        cs_copy_var(&cs.id, &state, "p_u", t),
                        plo_u.min(0.0),
                        phi_u.max(0.0),
                        Block::X1,
                    );
                    self.add_continuous(
                        cs_copy_var(&cs.id, &state, "p_v", t),
                        plo_v.min(0.0),
                        phi_v.max(0.0),
                        Block::X1,
                    );
                    self.add_continuous(
                        cs_copy_var(&cs.id, &state, "q", t),
                        qlo.min(0.0),
                        qhi.max(0.0),
                        Block::X1,
                    );
                }
                self.add_continuous(op_point_change_var(&cs.id, t), 0.0, f64::INFINITY, Block::X2);
            }
            for g in net.fence_groups().keys() {
                self.add_binary(direction_var(g, t), Block::Z2);
            }
            for mode in &net.operation_modes {
                self.add_continuous(mode_change_var(&mode.id, t), 0.0, 1.0, Block::X2);
            }
        }
        Ok(())
    }

    /// Continuity and momentum rows for one pipe between steps t1 and t2 = t1+1.
    fn assemble_pipe_rows(&mut self, pipe: &Pipe, t1: usize, t2: usize) -> Result<(), GasError> {
        debug_assert_eq!(t2, t1 + 1);
        let c = &self.network.constants;
        let (v_u, v_v) = compute_pipe_velocities(pipe, &self.instance.initial_state, c)?;
        let rtz = c.specific_gas_constant * c.temperature * pipe.compressibility;
        let dt = self.instance.granularity(t2) - self.instance.granularity(t1);

        let p_u1 = self.idx(&pressure_var(&pipe.from, t1));
        let p_v1 = self.idx(&pressure_var(&pipe.to, t1));
        let p_u2 = self.idx(&pressure_var(&pipe.from, t2));
        let p_v2 = self.idx(&pressure_var(&pipe.to, t2));
        let q_u2 = self.idx(&pipe_flow_var(&pipe.id, 'u', t2));
        let q_v2 = self.idx(&pipe_flow_var(&pipe.id, 'v', t2));

        let flow_coeff = 2.0 * rtz * dt / (pipe.length * pipe.area);
        self.model
            .add_row(
                format!("pipe_cont[{},{t2}]", pipe.id),
                vec![
                    (p_u2, 1.0),
                    (p_v2, 1.0),
                    (p_u1, -1.0),
                    (p_v1, -1.0),
                    (q_v2, flow_coeff),
                    (q_u2, -flow_coeff),
                ],
                Sense::Eq,
                0.0,
            )
            .expect("pipe continuity row");

        let friction = pipe.friction * pipe.length / (4.0 * pipe.diameter * pipe.area);
        let gravity = c.gravity * pipe.slope * pipe.length / (2.0 * rtz);
        self.model
            .add_row(
                format!("pipe_mom[{},{t2}]", pipe.id),
                vec![
                    (p_v2, 1.0 + gravity),
                    (p_u2, -1.0 + gravity),
                    (q_u2, friction * v_u),
                    (q_v2, friction * v_v),
                ],
                Sense::Eq,
                0.0,
            )
            .expect("pipe momentum row");
        Ok(())
    }

    /// Flow conservation at one node; boundary nodes include their inflow.
    fn assemble_node_balance(&mut self, node: &str, boundary: bool, t: usize) {
        let mut coeffs: Vec<(usize, f64)> = Vec::new();
        for p in &self.network.pipes {
            if p.to == node {
                coeffs.push((self.idx(&pipe_flow_var(&p.id, 'v', t)), 1.0));
            }
            if p.from == node {
                coeffs.push((self.idx(&pipe_flow_var(&p.id, 'u', t)), -1.0));
            }
        }
        for (id, from, to) in self
            .network
            .valves
            .iter()
            .map(|v| (v.id.clone(), v.from.clone(), v.to.clone()))
            .chain(
                self.network
                    .compressor_stations
                    .iter()
                    .map(|c| (c.id.clone(), c.from.clone(), c.to.clone())),
            )
            .collect::<Vec<_>>()
        {
            if to == node {
                coeffs.push((self.idx(&arc_flow_var(&id, t)), 1.0));
            }
            if from == node {
                coeffs.push((self.idx(&arc_flow_var(&id, t)), -1.0));
            }
        }
        if boundary {
            coeffs.push((self.idx(&inflow_var(node, t)), 1.0));
        }
        self.model
            .add_row(format!("balance[{node},{t}]"), coeffs, Sense::Eq, 0.0)
            .expect("node balance row");
    }

    /// Convex-hull block of one compressor station at step t: state choice,
    /// configuration facets on disaggregated copies, aggregation rows and
    /// indicator-scaled copy bounds.
    fn assemble_compressor_block(&mut self, cs: &CompressorStation, t: usize) {
        let states = cs_states(cs);
        let choice: Vec<(usize, f64)> = states
            .iter()
            .map(|s| (self.idx(&cs_indicator_var(&cs.id, s, t)), 1.0))
            .collect();
        self.model
            .add_row(format!("cs_choice[{},{t}]", cs.id), choice, Sense::Eq, 1.0)
            .expect("cs choice row");

        for cfg in &cs.configurations {
            let state = format!("cfg_{}", cfg.id);
            let pu = self.idx(&cs_copy_var(&cs.id, &state, "p_u", t));
            let pv = self.idx(&cs_copy_var(&cs.id, &state, "p_v", t));
            let q = self.idx(&cs_copy_var(&cs.id, &state, "q", t));
            let m = self.idx(&cs_indicator_var(&cs.id, &state, t));
            for (f, facet) in cfg.facets.iter().enumerate() {
                self.model
                    .add_row(
                        format!("cs_facet[{},{},{f},{t}]", cs.id, cfg.id),
                        vec![(pu, facet[0]), (pv, facet[1]), (q, facet[2]), (m, facet[3])],
                        Sense::Le,
                        0.0,
                    )
                    .expect("cs facet row");
            }
        }

        // Aggregation: the station variables are the sums of the state copies.
        for (what, aggregate) in [
            ("p_u", pressure_var(&cs.from, t)),
            ("p_v", pressure_var(&cs.to, t)),
            ("q", arc_flow_var(&cs.id, t)),
        ] {
            let mut coeffs = vec![(self.idx(&aggregate), 1.0)];
            for s in &states {
                coeffs.push((self.idx(&cs_copy_var(&cs.id, s, what, t)), -1.0));
            }
            self.model
                .add_row(format!("cs_agg_{what}[{},{t}]", cs.id), coeffs, Sense::Eq, 0.0)
                .expect("cs aggregation row");
        }

        // Copy bounds scaled by the state indicator; a closed station carries no flow.
        let (plo_u, phi_u) = self.network.bounds.pressure(&cs.from);
        let (plo_v, phi_v) = self.network.bounds.pressure(&cs.to);
        let (qlo, qhi) = self.network.bounds.flow(&cs.id);
        for s in &states {
            let m = self.idx(&cs_indicator_var(&cs.id, s, t));
            let (flo, fhi) = if s == "cl" { (0.0, 0.0) } else { (qlo, qhi) };
            for (what, lo, hi) in
                [("p_u", plo_u, phi_u), ("p_v", plo_v, phi_v), ("q", flo, fhi)]
            {
                let copy = self.idx(&cs_copy_var(&cs.id, s, what, t));
                self.model
                    .add_row(
                        format!("cs_ub_{what}^{s}[{},{t}]", cs.id),
                        vec![(copy, 1.0), (m, -hi)],
                        Sense::Le,
                        0.0,
                    )
                    .expect("cs copy upper bound");
                self.model
                    .add_row(
                        format!("cs_lb_{what}^{s}[{},{t}]", cs.id),
                        vec![(copy, 1.0), (m, -lo)],
                        Sense::Ge,
                        0.0,
                    )
                    .expect("cs copy lower bound");
            }
        }

        // Bypass equalises the copy pressures; flow stays free within bounds.
        let by_u = self.idx(&cs_copy_var(&cs.id, "by", "p_u", t));
        let by_v = self.idx(&cs_copy_var(&cs.id, "by", "p_v", t));
        self.model
            .add_row(
                format!("cs_bypass_eq[{},{t}]", cs.id),
                vec![(by_u, 1.0), (by_v, -1.0)],
                Sense::Eq,
                0.0,
            )
            .expect("cs bypass row");
    }

    /// The four big-M valve rows.
    fn assemble_valve_block(&mut self, valve_id: &str, from: &str, to: &str, t: usize) -> Result<(), GasError> {
        let (plo_u, phi_u) = self.network.bounds.pressure(from);
        let (plo_v, phi_v) = self.network.bounds.pressure(to);
        let (qlo, qhi) = self.network.bounds.flow(valve_id);
        for b in [plo_u, phi_u, plo_v, phi_v, qlo, qhi] {
            if !b.is_finite() {
                return Err(GasError::UnboundedBigM(valve_id.to_string()));
            }
        }
        let p_u = self.idx(&pressure_var(from, t));
        let p_v = self.idx(&pressure_var(to, t));
        let q = self.idx(&arc_flow_var(valve_id, t));
        let m = self.idx(&valve_indicator_var(valve_id, t));

        // p_u - p_v <= (1 - m)(phi_u - plo_v)
        let gap_hi = phi_u - plo_v;
        self.model
            .add_row(
                format!("valve_dp_ub[{valve_id},{t}]"),
                vec![(p_u, 1.0), (p_v, -1.0), (m, gap_hi)],
                Sense::Le,
                gap_hi,
            )
            .expect("valve row");
        // p_u - p_v >= (1 - m)(plo_u - phi_v)
        let gap_lo = plo_u - phi_v;
        self.model
            .add_row(
                format!("valve_dp_lb[{valve_id},{t}]"),
                vec![(p_u, 1.0), (p_v, -1.0), (m, gap_lo)],
                Sense::Ge,
                gap_lo,
            )
            .expect("valve row");
        // q <= m qhi ; q >= m qlo
        self.model
            .add_row(
                format!("valve_q_ub[{valve_id},{t}]"),
                vec![(q, 1.0), (m, -qhi)],
                Sense::Le,
                0.0,
            )
            .expect("valve row");
        self.model
            .add_row(
                format!("valve_q_lb[{valve_id},{t}]"),
                vec![(q, 1.0), (m, -qlo)],
                Sense::Ge,
                0.0,
            )
            .expect("valve row");
        Ok(())
    }

    /// Mode choice row plus element-indicator coupling rows.
    fn assemble_mode_coupling(&mut self, t: usize) {
        let net = self.network;
        let choice: Vec<(usize, f64)> = net
            .operation_modes
            .iter()
            .map(|o| (self.idx(&mode_var(&o.id, t)), 1.0))
            .collect();
        self.model
            .add_row(format!("mode_choice[{t}]"), choice, Sense::Eq, 1.0)
            .expect("mode choice row");

        for v in &net.valves {
            let mut coeffs = vec![(self.idx(&valve_indicator_var(&v.id, t)), 1.0)];
            let mut reachable = false;
            for o in &net.operation_modes {
                if o.valve_states[&v.id] == ValveState::Open {
                    coeffs.push((self.idx(&mode_var(&o.id, t)), -1.0));
                    reachable = true;
                }
            }
            if !reachable && t == 1 {
                warn_once(format!("warning: valve `{}` is open in no operation mode", v.id));
            }
            self.model
                .add_row(format!("couple_valve[{},{t}]", v.id), coeffs, Sense::Eq, 0.0)
                .expect("valve coupling row");
        }
        for cs in &net.compressor_stations {
            for state in cs_states(cs) {
                let mut coeffs = vec![(self.idx(&cs_indicator_var(&cs.id, &state, t)), 1.0)];
                let mut reachable = false;
                for o in &net.operation_modes {
                    if cs_state_key(&o.compressor_states[&cs.id]) == state {
                        coeffs.push((self.idx(&mode_var(&o.id, t)), -1.0));
                        reachable = true;
                    }
                }
                if !reachable && t == 1 {
                    warn_once(format!(
                        "warning: state `{state}` of compressor `{}` is reachable by no mode",
                        cs.id
                    ));
                }
                self.model
                    .add_row(
                        format!("couple_cs^{state}[{},{t}]", cs.id),
                        coeffs,
                        Sense::Eq,
                        0.0,
                    )
                    .expect("cs coupling row");
            }
        }
    }

    /// Slack coupling to the forecast plus all objective terms at step t.
    fn assemble_slack_and_objective(&mut self, t: usize) -> Result<(), GasError> {
        let net = self.network;
        let w = self.weights;
        for n in net.boundary_nodes().iter().map(|n| n.id.clone()).collect::<Vec<_>>() {
            let d_p = self.instance.pressure_forecast[&n][t - 1];
            let d_q = self.instance.flow_forecast[&n][t - 1];
            let p = self.idx(&pressure_var(&n, t));
            let d = self.idx(&inflow_var(&n, t));
            let sp_pos = self.idx(&slack_var("p_pos", &n, t));
            let sp_neg = self.idx(&slack_var("p_neg", &n, t));
            let sq_pos = self.idx(&slack_var("q_pos", &n, t));
            let sq_neg = self.idx(&slack_var("q_neg", &n, t));
            self.model
                .add_row(
                    format!("slack_p[{n},{t}]"),
                    vec![(p, 1.0), (sp_pos, -1.0), (sp_neg, 1.0)],
                    Sense::Eq,
                    d_p,
                )
                .expect("pressure slack row");
            self.model
                .add_row(
                    format!("slack_q[{n},{t}]"),
                    vec![(d, 1.0), (sq_pos, -1.0), (sq_neg, 1.0)],
                    Sense::Eq,
                    d_q,
                )
                .expect("flow slack row");
            for s in [sp_pos, sp_neg] {
                self.model.set_objective(s, w.pressure_slack).expect("slack cost");
            }
            for s in [sq_pos, sq_neg] {
                self.model.set_objective(s, w.flow_slack).expect("slack cost");
            }
        }

        // Mode-change terms; t = 1 compares against the initial state's mode.
        let init_mode = self.instance.initial_state.operation_mode.clone();
        for o in net.operation_modes.iter().map(|o| o.id.clone()).collect::<Vec<_>>() {
            let delta = self.idx(&mode_change_var(&o, t));
            let cur = self.idx(&mode_var(&o, t));
            if t == 1 {
                let prev = if o == init_mode { 1.0 } else { 0.0 };
                self.model
                    .add_row(
                        format!("delta_up[{o},{t}]"),
                        vec![(delta, 1.0), (cur, -1.0)],
                        Sense::Ge,
                        -prev,
                    )
                    .expect("delta row");
                self.model
                    .add_row(
                        format!("delta_dn[{o},{t}]"),
                        vec![(delta, 1.0), (cur, 1.0)],
                        Sense::Ge,
                        prev,
                    )
                    .expect("delta row");
            } else {
                let prev = self.idx(&mode_var(&o, t - 1));
                self.model
                    .add_row(
                        format!("delta_up[{o},{t}]"),
                        vec![(delta, 1.0), (cur, -1.0), (prev, 1.0)],
                        Sense::Ge,
                        0.0,
                    )
                    .expect("delta row");
                self.model
                    .add_row(
                        format!("delta_dn[{o},{t}]"),
                        vec![(delta, 1.0), (cur, 1.0), (prev, -1.0)],
                        Sense::Ge,
                        0.0,
                    )
                    .expect("delta row");
            }
            self.model.set_objective(delta, w.mode_change).expect("delta cost");
        }

        // Operating-point change magnitude per compressor station.
        for cs in net.compressor_stations.iter().map(|c| c.id.clone()).collect::<Vec<_>>() {
            let gamma = self.idx(&op_point_change_var(&cs, t));
            let cur = self.idx(&arc_flow_var(&cs, t));
            let prev = self.idx(&arc_flow_var(&cs, t - 1));
            self.model
                .add_row(
                    format!("gamma_up[{cs},{t}]"),
                    vec![(gamma, 1.0), (cur, -1.0), (prev, 1.0)],
                    Sense::Ge,
                    0.0,
                )
                .expect("gamma row");
            self.model
                .add_row(
                    format!("gamma_dn[{cs},{t}]"),
                    vec![(gamma, 1.0), (cur, 1.0), (prev, -1.0)],
                    Sense::Ge,
                    0.0,
                )
                .expect("gamma row");
            self.model.set_objective(gamma, w.operating_point_change).expect("gamma cost");
        }
        Ok(())
    }

    /// Per fence group: one direction binary forcing a uniform inflow sign.
    fn assemble_flow_directions(&mut self, t: usize) {
        for (g, members) in self.network.fence_groups() {
            let dir = self.idx(&direction_var(&g, t));
            for v in members {
                let (lo, hi) = self.network.bounds.inflow(&v);
                let m_pos = hi.max(0.0);
                let m_neg = lo.min(0.0);
                let d = self.idx(&inflow_var(&v, t));
                self.model
                    .add_row(
                        format!("dir_pos[{v},{t}]"),
                        vec![(d, 1.0), (dir, -m_pos)],
                        Sense::Le,
                        0.0,
                    )
                    .expect("direction row");
                // d >= m_neg (1 - dir)
                self.model
                    .add_row(
                        format!("dir_neg[{v},{t}]"),
                        vec![(d, 1.0), (dir, -m_neg)],
                        Sense::Ge,
                        m_neg,
                    )
                    .expect("direction row");
            }
        }
    }
}

/// Builds the full time-expanded MILP; optionally fixes the z1 block to a
/// given operation-mode sequence.
pub fn build_instance_milp(
    network: &GasNetwork,
    instance: &Instance,
    weights: &ObjectiveWeights,
    z1_fix: Option<&OperationModeSequence>,
) -> Result<ParametricMilp, GasError> {
    network.validate()?;
    instance.validate_against(network)?;

    let mut b = Builder {
        network,
        instance,
        weights,
        model: ParametricMilp::new(),
        k: instance.horizon,
    };
    b.declare_variables()?;
    for t in 1..=b.k {
        for pipe in &network.pipes.clone() {
            b.assemble_pipe_rows(pipe, t - 1, t)?;
        }
        for n in &network.nodes.clone() {
            b.assemble_node_balance(&n.id, n.boundary.is_some(), t);
        }
        for cs in &network.compressor_stations.clone() {
            b.assemble_compressor_block(cs, t);
        }
        for v in &network.valves.clone() {
            b.assemble_valve_block(&v.id, &v.from, &v.to, t)?;
        }
        b.assemble_mode_coupling(t);
        b.assemble_slack_and_objective(t)?;
        b.assemble_flow_directions(t);
    }

    let model = b.model;
    match z1_fix {
        None => Ok(model),
        Some(seq) => {
            if seq.len() != instance.horizon {
                return Err(GasError::Inconsistent(format!(
                    "mode sequence has {} steps, horizon needs {}",
                    seq.len(),
                    instance.horizon
                )));
            }
            let mut assignment = BTreeMap::new();
            for (i, &mode) in seq.mode_indices.iter().enumerate() {
                let t = i + 1;
                let chosen = network
                    .operation_modes
                    .get(mode)
                    .ok_or_else(|| GasError::UnknownMode(format!("index {mode}")))?;
                for o in &network.operation_modes {
                    let val = if o.id == chosen.id { 1.0 } else { 0.0 };
                    assignment.insert(mode_var(&o.id, t), val);
                }
            }
            model.fix_binaries(&assignment).map_err(GasError::Milp)
        }
    }
}
