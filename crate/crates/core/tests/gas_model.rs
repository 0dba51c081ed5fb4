//! Oracle tests for the gas model builder: hand-derived row coefficients,
//! hand-counted model shape, exhaustive mode-fixing checks and independently
//! recomputed physics residuals.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gaswarm::gas::build::{
    arc_flow_var, cs_indicator_var, direction_var, mode_change_var, mode_var, pipe_flow_var,
    pressure_var, valve_indicator_var,
};
use gaswarm::gas::fixtures::{
    station_d_instance, station_d_template, toy_instance, toy_station, TOY_ROWS_PER_STEP,
    TOY_VARS_AT_T0, TOY_VARS_PER_STEP, TOY_Z1_PER_STEP,
};
use gaswarm::gas::{
    build_instance_milp, compute_pipe_velocities, CompressorState, GasNetwork, Instance,
    ObjectiveWeights, OperationModeSequence, ValveState,
};
use gaswarm::milp::{solve_lp, Block, Row, Sense, SolveParams, SolveStatus};

fn weights() -> ObjectiveWeights {
    ObjectiveWeights::default()
}

fn params() -> SolveParams {
    SolveParams { time_limit_s: 120.0, ..SolveParams::default() }
}

fn row<'a>(model: &'a gaswarm::milp::ParametricMilp, name: &str) -> &'a Row {
    model
        .rows()
        .iter()
        .find(|r| r.name == name)
        .unwrap_or_else(|| panic!("row `{name}` not found"))
}

fn coeff(model: &gaswarm::milp::ParametricMilp, r: &Row, var: &str) -> f64 {
    let j = model.var_index(var).unwrap_or_else(|| panic!("var `{var}` not found"));
    r.coeffs.iter().filter(|(i, _)| *i == j).map(|(_, c)| c).sum()
}

/// Single pipe with the literal SI-aggregate constants of the arithmetic
/// examples: R_s T z = 120000, L = 1000, A = 0.5.
fn si_pipe_network() -> GasNetwork {
    let mut net = toy_station();
    net.constants.specific_gas_constant = 500.0;
    for p in &mut net.pipes {
        p.compressibility = 0.8;
    }
    net
}

fn seq(indices: &[usize]) -> OperationModeSequence {
    OperationModeSequence { mode_indices: indices.to_vec() }
}

#[test]
fn velocity_floor_applies_at_zero_flow() {
    let net = toy_station();
    let mut state = gaswarm::gas::fixtures::toy_initial_state();
    state.pipe_flows.insert("P1".into(), (0.0, 0.0));
    let (v_u, v_v) = compute_pipe_velocities(&net.pipes[0], &state, &net.constants).unwrap();
    assert_eq!(v_u, 0.5);
    assert_eq!(v_v, 0.5);
}

#[test]
fn velocity_is_linear_in_flow_above_floor() {
    let net = si_pipe_network();
    let mut state = gaswarm::gas::fixtures::toy_initial_state();
    state.pipe_flows.insert("P1".into(), (10.0, 10.0));
    let (v1, _) = compute_pipe_velocities(&net.pipes[0], &state, &net.constants).unwrap();
    state.pipe_flows.insert("P1".into(), (20.0, 20.0));
    let (v2, _) = compute_pipe_velocities(&net.pipes[0], &state, &net.constants).unwrap();
    assert!((v2 - 2.0 * v1).abs() < 1e-9 * v1);
}

#[test]
fn velocity_matches_hand_evaluated_formula() {
    // v = |q| R_s T z / (p A) = 100 * 120000 / (50 * 0.5)
    let net = si_pipe_network();
    let mut state = gaswarm::gas::fixtures::toy_initial_state();
    state.pipe_flows.insert("P1".into(), (100.0, 100.0));
    let (v_u, _) = compute_pipe_velocities(&net.pipes[0], &state, &net.constants).unwrap();
    assert!((v_u - 480000.0).abs() < 1e-6);
}

#[test]
fn velocity_rejects_nonpositive_pressure() {
    let net = toy_station();
    let mut state = gaswarm::gas::fixtures::toy_initial_state();
    state.pressures.insert("B1".into(), 0.0);
    assert!(compute_pipe_velocities(&net.pipes[0], &state, &net.constants).is_err());
}

#[test]
fn continuity_coefficient_matches_hand_arithmetic() {
    // 2 * R_s T z * dt / (L A) = 2 * 120000 * 1800 / (1000 * 0.5) = 864000
    let net = si_pipe_network();
    let inst = toy_instance(2);
    let model = build_instance_milp(&net, &inst, &weights(), None).unwrap();
    let r = row(&model, "pipe_cont[P1,1]");
    assert_eq!(r.sense, Sense::Eq);
    assert_eq!(r.rhs, 0.0);
    assert_eq!(coeff(&model, r, &pipe_flow_var("P1", 'v', 1)), 864000.0);
    assert_eq!(coeff(&model, r, &pipe_flow_var("P1", 'u', 1)), -864000.0);
    for (var, want) in [
        (pressure_var("B1", 1), 1.0),
        (pressure_var("N1", 1), 1.0),
        (pressure_var("B1", 0), -1.0),
        (pressure_var("N1", 0), -1.0),
    ] {
        assert_eq!(coeff(&model, r, &var), want);
    }
}

#[test]
fn momentum_row_with_zero_slope_has_unit_pressure_coefficients() {
    let net = toy_station();
    let inst = toy_instance(2);
    let model = build_instance_milp(&net, &inst, &weights(), None).unwrap();
    let r = row(&model, "pipe_mom[P1,1]");
    assert_eq!(coeff(&model, r, &pressure_var("N1", 1)), 1.0);
    assert_eq!(coeff(&model, r, &pressure_var("B1", 1)), -1.0);
    let p = &net.pipes[0];
    let (v_u, v_v) = compute_pipe_velocities(p, &inst.initial_state, &net.constants).unwrap();
    let fric = p.friction * p.length / (4.0 * p.diameter * p.area);
    assert!((coeff(&model, r, &pipe_flow_var("P1", 'u', 1)) - fric * v_u).abs() < 1e-12);
    assert!((coeff(&model, r, &pipe_flow_var("P1", 'v', 1)) - fric * v_v).abs() < 1e-12);
}

#[test]
fn degenerate_granularity_drops_flow_coupling() {
    let net = toy_station();
    let mut inst = toy_instance(2);
    inst.granularity_s = 0.0;
    let model = build_instance_milp(&net, &inst, &weights(), None).unwrap();
    let r = row(&model, "pipe_cont[P1,1]");
    assert_eq!(coeff(&model, r, &pipe_flow_var("P1", 'v', 1)), 0.0);
    assert_eq!(coeff(&model, r, &pipe_flow_var("P1", 'u', 1)), 0.0);
    assert_eq!(coeff(&model, r, &pressure_var("B1", 1)), 1.0);
}

#[test]
fn node_balance_matches_hand_incidence() {
    // N1: pipe P1 ends there (incoming +), valves V1/V2 and CS1 leave (-);
    // no inflow term since N1 is an inner node.
    let net = toy_station();
    let model = build_instance_milp(&net, &toy_instance(2), &weights(), None).unwrap();
    let r = row(&model, "balance[N1,1]");
    assert_eq!(r.sense, Sense::Eq);
    assert_eq!(coeff(&model, r, &pipe_flow_var("P1", 'v', 1)), 1.0);
    assert_eq!(coeff(&model, r, &arc_flow_var("V1", 1)), -1.0);
    assert_eq!(coeff(&model, r, &arc_flow_var("V2", 1)), -1.0);
    assert_eq!(coeff(&model, r, &arc_flow_var("CS1", 1)), -1.0);
    assert_eq!(r.coeffs.len(), 4);

    // Boundary node B1: pipe P1 starts there (outgoing -), plus its inflow.
    let r = row(&model, "balance[B1,1]");
    assert_eq!(coeff(&model, r, &pipe_flow_var("P1", 'u', 1)), -1.0);
    assert_eq!(coeff(&model, r, "d[B1,1]"), 1.0);
    assert_eq!(r.coeffs.len(), 2);
}

#[test]
fn valve_rows_carry_plus_minus_forty_constants() {
    // Bounds p in [30, 70] at both ends: gap constants (70-30) and (30-70).
    let net = toy_station();
    let model = build_instance_milp(&net, &toy_instance(2), &weights(), None).unwrap();
    let ub = row(&model, "valve_dp_ub[V1,1]");
    assert_eq!(ub.rhs, 40.0);
    assert_eq!(coeff(&model, ub, &valve_indicator_var("V1", 1)), 40.0);
    let lb = row(&model, "valve_dp_lb[V1,1]");
    assert_eq!(lb.rhs, -40.0);
    assert_eq!(coeff(&model, lb, &valve_indicator_var("V1", 1)), -40.0);
}

#[test]
fn hand_count_of_variables_and_rows() {
    let net = toy_station();
    let model = build_instance_milp(&net, &toy_instance(2), &weights(), None).unwrap();
    assert_eq!(model.num_vars(), TOY_VARS_AT_T0 + 2 * TOY_VARS_PER_STEP);
    assert_eq!(model.num_vars(), 130);
    assert_eq!(model.rows().len(), 2 * TOY_ROWS_PER_STEP);
    assert_eq!(model.rows().len(), 150);
    assert_eq!(model.block_ids(Block::Z1).len(), 2 * TOY_Z1_PER_STEP);
}

#[test]
fn fixing_modes_collapses_mode_choice_rows_identically() {
    let net = toy_station();
    let model = build_instance_milp(&net, &toy_instance(2), &weights(), Some(&seq(&[0, 0]))).unwrap();
    for t in 1..=2 {
        let r = row(&model, &format!("mode_choice[{t}]"));
        let total: f64 = r
            .coeffs
            .iter()
            .map(|(j, c)| {
                let v = &model.variables()[*j];
                assert!(v.is_fixed(), "mode variable must be fixed");
                c * v.lower
            })
            .sum();
        assert_eq!(total, r.rhs);
    }
    assert!(model.z1_fixed());
}

#[test]
fn each_mode_fixing_induces_its_element_states() {
    let net = toy_station();
    let inst = toy_instance(2);
    for (m, mode) in net.operation_modes.iter().enumerate() {
        let model = build_instance_milp(&net, &inst, &weights(), Some(&seq(&[m, m]))).unwrap();
        let res = gaswarm::milp::solve_milp(&model, &params(), None).unwrap();
        assert_eq!(res.status, SolveStatus::Optimal, "mode {} infeasible", mode.id);
        let point = res.named_point(&model);
        for t in 1..=2 {
            for (v, state) in &mode.valve_states {
                let want = if *state == ValveState::Open { 1.0 } else { 0.0 };
                assert!((point[&valve_indicator_var(v, t)] - want).abs() < 1e-6);
            }
            for (cs, state) in &mode.compressor_states {
                let key = match state {
                    CompressorState::Bypass => "by".to_string(),
                    CompressorState::Closed => "cl".to_string(),
                    CompressorState::Config(c) => format!("cfg_{c}"),
                };
                assert!((point[&cs_indicator_var(cs, &key, t)] - 1.0).abs() < 1e-6);
            }
        }
        let report = model.validate_solution(&res.point, 1e-6).unwrap();
        assert!(report.is_feasible());
    }
}

fn random_instance(rng: &mut impl Rng) -> Instance {
    let mut inst = toy_instance(2);
    for (_, f) in inst.flow_forecast.iter_mut() {
        for v in f.iter_mut() {
            *v *= rng.gen_range(0.5..1.5);
        }
    }
    for (_, f) in inst.pressure_forecast.iter_mut() {
        for v in f.iter_mut() {
            *v = rng.gen_range(35.0..65.0);
        }
    }
    inst
}

#[test]
fn every_random_fixing_is_lp_feasible() {
    let net = toy_station();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let inst = random_instance(&mut rng);
        let fix = seq(&[rng.gen_range(0..4), rng.gen_range(0..4)]);
        let model = build_instance_milp(&net, &inst, &weights(), Some(&fix)).unwrap();
        let res = solve_lp(&model.relax_integrality()).unwrap();
        assert_eq!(res.status, SolveStatus::Optimal);
    }
}

#[test]
fn solved_points_satisfy_recomputed_physics() {
    let net = toy_station();
    let inst = toy_instance(2);
    let model = build_instance_milp(&net, &inst, &weights(), Some(&seq(&[0, 0]))).unwrap();
    let res = gaswarm::milp::solve_milp(&model, &params(), None).unwrap();
    assert_eq!(res.status, SolveStatus::Optimal);
    let p = res.named_point(&model);
    for t in 1..=2usize {
        for pipe in &net.pipes {
            let (v_u, v_v) = compute_pipe_velocities(pipe, &inst.initial_state, &net.constants).unwrap();
            let rtz = net.constants.specific_gas_constant
                * net.constants.temperature
                * pipe.compressibility;
            let c = 2.0 * rtz * inst.granularity_s / (pipe.length * pipe.area);
            let cont = p[&pressure_var(&pipe.from, t)] + p[&pressure_var(&pipe.to, t)]
                - p[&pressure_var(&pipe.from, t - 1)]
                - p[&pressure_var(&pipe.to, t - 1)]
                + c * (p[&pipe_flow_var(&pipe.id, 'v', t)] - p[&pipe_flow_var(&pipe.id, 'u', t)]);
            assert!(cont.abs() <= 1e-6, "continuity residual {cont}");
            let fric = pipe.friction * pipe.length / (4.0 * pipe.diameter * pipe.area);
            let grav = net.constants.gravity * pipe.slope * pipe.length / (2.0 * rtz);
            let mom = (1.0 + grav) * p[&pressure_var(&pipe.to, t)]
                + (-1.0 + grav) * p[&pressure_var(&pipe.from, t)]
                + fric * v_u * p[&pipe_flow_var(&pipe.id, 'u', t)]
                + fric * v_v * p[&pipe_flow_var(&pipe.id, 'v', t)];
            assert!(mom.abs() <= 1e-6, "momentum residual {mom}");
        }
        // Flow conservation, recomputed from an incidence listing.
        for n in &net.nodes {
            let mut balance = 0.0;
            for pipe in &net.pipes {
                if pipe.to == n.id {
                    balance += p[&pipe_flow_var(&pipe.id, 'v', t)];
                }
                if pipe.from == n.id {
                    balance -= p[&pipe_flow_var(&pipe.id, 'u', t)];
                }
            }
            for (id, from, to) in net
                .valves
                .iter()
                .map(|v| (&v.id, &v.from, &v.to))
                .chain(net.compressor_stations.iter().map(|c| (&c.id, &c.from, &c.to)))
            {
                if *to == n.id {
                    balance += p[&arc_flow_var(id, t)];
                }
                if *from == n.id {
                    balance -= p[&arc_flow_var(id, t)];
                }
            }
            if n.boundary.is_some() {
                balance += p[&format!("d[{},{t}]", n.id)];
            }
            assert!(balance.abs() <= 1e-6, "balance residual {balance} at {}", n.id);
        }
    }
}

#[test]
fn consistent_zero_flow_instance_has_zero_objective() {
    let net = toy_station();
    let mut inst = toy_instance(2);
    for v in &mut inst.initial_state.pipe_flows.values_mut() {
        *v = (0.0, 0.0);
    }
    for v in &mut inst.initial_state.arc_flows.values_mut() {
        *v = 0.0;
    }
    for v in &mut inst.initial_state.inflows.values_mut() {
        *v = 0.0;
    }
    for f in inst.flow_forecast.values_mut() {
        f.iter_mut().for_each(|v| *v = 0.0);
    }
    let model = build_instance_milp(&net, &inst, &weights(), Some(&seq(&[0, 0]))).unwrap();
    let res = gaswarm::milp::solve_milp(&model, &params(), None).unwrap();
    assert_eq!(res.status, SolveStatus::Optimal);
    assert!(res.objective.abs() < 1e-6, "objective {}", res.objective);
}

#[test]
fn single_mode_switch_accumulates_two_delta_units() {
    let net = toy_station();
    let inst = toy_instance(3);
    let model = build_instance_milp(&net, &inst, &weights(), Some(&seq(&[0, 1, 1]))).unwrap();
    let res = gaswarm::milp::solve_milp(&model, &params(), None).unwrap();
    assert_eq!(res.status, SolveStatus::Optimal);
    let p = res.named_point(&model);
    let total: f64 = (1..=3)
        .flat_map(|t| net.operation_modes.iter().map(move |o| (o.id.clone(), t)))
        .map(|(o, t)| p[&mode_change_var(&o, t)])
        .sum();
    assert!((total - 2.0).abs() < 1e-6, "sum of deltas {total}");
}

#[test]
fn fixing_never_improves_the_optimum() {
    let net = toy_station();
    let p = params();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..3 {
        let inst = random_instance(&mut rng);
        let free = build_instance_milp(&net, &inst, &weights(), None).unwrap();
        let f_free = gaswarm::milp::solve_milp(&free, &p, None).unwrap();
        assert_eq!(f_free.status, SolveStatus::Optimal);
        let fix = seq(&[rng.gen_range(0..4), rng.gen_range(0..4)]);
        let fixed = build_instance_milp(&net, &inst, &weights(), Some(&fix)).unwrap();
        let f_fixed = gaswarm::milp::solve_milp(&fixed, &p, None).unwrap();
        assert_eq!(f_fixed.status, SolveStatus::Optimal);
        assert!(f_fixed.objective >= f_free.objective - p.mip_gap_abs);
    }
}

#[test]
fn active_compressor_copy_equals_aggregate() {
    // Mode o4 runs CS1 in configuration c1; the other copies collapse to 0.
    let net = toy_station();
    let inst = toy_instance(2);
    let model = build_instance_milp(&net, &inst, &weights(), Some(&seq(&[3, 3]))).unwrap();
    let res = gaswarm::milp::solve_milp(&model, &params(), None).unwrap();
    assert_eq!(res.status, SolveStatus::Optimal);
    let p = res.named_point(&model);
    for t in 1..=2 {
        let agg = p[&arc_flow_var("CS1", t)];
        let active = p[&format!("q^cfg_c1[CS1,{t}]")];
        assert!((agg - active).abs() < 1e-6);
        assert!(p[&format!("q^by[CS1,{t}]")].abs() < 1e-6);
        assert!(p[&format!("q^cl[CS1,{t}]")].abs() < 1e-6);
        // Facet q >= 0 with the configuration active.
        assert!(agg >= -1e-6);
        // Facet p_u <= p_v on the active copy.
        assert!(p[&format!("p_u^cfg_c1[CS1,{t}]")] <= p[&format!("p_v^cfg_c1[CS1,{t}]")] + 1e-6);
    }
}

#[test]
fn closed_mode_forces_zero_station_flow() {
    let net = toy_station();
    let inst = toy_instance(2);
    // Modes o1..o3 keep CS1 closed.
    let model = build_instance_milp(&net, &inst, &weights(), Some(&seq(&[1, 1]))).unwrap();
    let res = gaswarm::milp::solve_milp(&model, &params(), None).unwrap();
    assert_eq!(res.status, SolveStatus::Optimal);
    let p = res.named_point(&model);
    for t in 1..=2 {
        assert!(p[&arc_flow_var("CS1", t)].abs() < 1e-6);
    }
}

#[test]
fn station_template_matches_published_statistics() {
    let net = station_d_template();
    net.validate().unwrap();
    assert_eq!(net.nodes.len(), 31);
    assert_eq!(net.pipes.len() + net.valves.len() + net.compressor_stations.len(), 37);
    assert_eq!(net.valves.len(), 11);
    assert_eq!(net.operation_modes.len(), 56);
    let cfgs: Vec<usize> = net
        .compressor_stations
        .iter()
        .map(|c| c.configurations.len())
        .collect();
    assert_eq!(cfgs, vec![2, 6]);

    let model = build_instance_milp(&net, &station_d_instance(2), &weights(), None).unwrap();
    assert_eq!(model.block_ids(Block::Z1).len(), 2 * 56);
    // One direction binary per fence group and step.
    for t in 1..=2 {
        for g in ["g1", "g2", "g3"] {
            assert!(model.var_index(&direction_var(g, t)).is_some());
        }
    }
}

#[test]
fn network_and_instance_round_trip_through_json() {
    let net = toy_station();
    let json = serde_json::to_string_pretty(&net).unwrap();
    let back: GasNetwork = serde_json::from_str(&json).unwrap();
    back.validate().unwrap();
    assert_eq!(back.nodes.len(), net.nodes.len());
    assert_eq!(back.operation_modes[3].compressor_states["CS1"],
        CompressorState::Config("c1".into()));

    let inst = toy_instance(2);
    let json = serde_json::to_string(&inst).unwrap();
    let back: Instance = serde_json::from_str(&json).unwrap();
    back.validate_against(&net).unwrap();
    assert_eq!(back.horizon, 2);
}

#[test]
fn mode_sequence_length_must_match_horizon() {
    let net = toy_station();
    let err = build_instance_milp(&net, &toy_instance(2), &weights(), Some(&seq(&[0])));
    assert!(err.is_err());
}

#[test]
fn one_pipe_slope_contributes_gravity_term() {
    let mut net = toy_station();
    net.pipes[0].slope = 0.01;
    let inst = toy_instance(2);
    let model = build_instance_milp(&net, &inst, &weights(), None).unwrap();
    let r = row(&model, "pipe_mom[P1,1]");
    let p = &net.pipes[0];
    let rtz = net.constants.specific_gas_constant * net.constants.temperature * p.compressibility;
    let grav = net.constants.gravity * p.slope * p.length / (2.0 * rtz);
    assert!((coeff(&model, r, &pressure_var("N1", 1)) - (1.0 + grav)).abs() < 1e-12);
    assert!((coeff(&model, r, &pressure_var("B1", 1)) - (-1.0 + grav)).abs() < 1e-12);
}

#[test]
fn flow_direction_binary_forces_uniform_sign() {
    // B1's inflow bounds are [0, 150]; the direction rows then read
    // d <= 150 dir and d >= 0, so any positive inflow needs dir = 1.
    let net = toy_station();
    let model = build_instance_milp(&net, &toy_instance(2), &weights(), None).unwrap();
    let r = row(&model, "dir_pos[B1,1]");
    assert_eq!(coeff(&model, r, &direction_var("g1", 1)), -150.0);
    assert_eq!(r.sense, Sense::Le);
    let r = row(&model, "dir_neg[B2,1]");
    assert_eq!(coeff(&model, r, &direction_var("g2", 1)), 150.0);
    assert_eq!(r.rhs, -150.0);
}

#[test]
fn mode_one_hot_round_trip() {
    let s = seq(&[2, 0, 3]);
    let hot = s.to_one_hot(4);
    assert_eq!(hot[0][2], 1.0);
    assert_eq!(hot.iter().map(|r| r.iter().sum::<f64>()).sum::<f64>(), 3.0);
    assert_eq!(OperationModeSequence::from_one_hot(&hot), s);
}

#[test]
fn unfixed_model_solves_and_exactly_one_mode_active_per_step() {
    let net = toy_station();
    let model = build_instance_milp(&net, &toy_instance(2), &weights(), None).unwrap();
    let res = gaswarm::milp::solve_milp(&model, &params(), None).unwrap();
    assert_eq!(res.status, SolveStatus::Optimal);
    let p = res.named_point(&model);
    for t in 1..=2 {
        let active: Vec<&str> = net
            .operation_modes
            .iter()
            .map(|o| o.id.as_str())
            .filter(|o| (p[&mode_var(o, t)] - 1.0).abs() < 1e-6)
            .collect();
        assert_eq!(active.len(), 1, "step {t}: active modes {active:?}");
    }
    let report = model.validate_solution(&res.point, 1e-6).unwrap();
    assert!(report.is_feasible());
}
