//! Oracle tests for the LP/MILP solver: spec'd toy cases, an exhaustive
//! enumeration oracle for small binary models, duality and determinism.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gaswarm::milp::{
    solve_lp, solve_milp, Block, MilpError, ParametricMilp, Sense, SolveParams, SolveStatus,
    VariableDef,
};

fn var(id: &str, lo: f64, hi: f64) -> VariableDef {
    VariableDef::continuous(id, lo, hi)
}

#[test]
fn lp_single_variable_lower_bounded_row() {
    let mut m = ParametricMilp::new();
    let x = m.add_variable(var("x", 0.0, 10.0), Block::X1).unwrap();
    m.set_objective(x, 1.0).unwrap();
    m.add_row("r0", vec![(x, 1.0)], Sense::Ge, 1.0).unwrap();
    let r = solve_lp(&m).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!((r.objective - 1.0).abs() < 1e-7);
}

#[test]
fn lp_simplex_vertex_on_face() {
    let mut m = ParametricMilp::new();
    let x = m.add_variable(var("x", 0.0, f64::INFINITY), Block::X1).unwrap();
    let y = m.add_variable(var("y", 0.0, f64::INFINITY), Block::X1).unwrap();
    m.set_objective(x, -1.0).unwrap();
    m.set_objective(y, -1.0).unwrap();
    m.add_row("cap", vec![(x, 1.0), (y, 1.0)], Sense::Le, 1.0).unwrap();
    let r = solve_lp(&m).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!((r.objective + 1.0).abs() < 1e-7);
}

#[test]
fn lp_infeasible_pair_of_rows() {
    let mut m = ParametricMilp::new();
    let x = m.add_variable(var("x", f64::NEG_INFINITY, f64::INFINITY), Block::X1).unwrap();
    m.add_row("ge", vec![(x, 1.0)], Sense::Ge, 2.0).unwrap();
    m.add_row("le", vec![(x, 1.0)], Sense::Le, 1.0).unwrap();
    let r = solve_lp(&m).unwrap();
    assert_eq!(r.status, SolveStatus::Infeasible);
}

#[test]
fn lp_rejects_free_integers() {
    let mut m = ParametricMilp::new();
    m.add_variable(VariableDef::binary("z"), Block::Z1).unwrap();
    assert!(matches!(solve_lp(&m), Err(MilpError::FreeIntegerPresent(_))));
}

#[test]
fn lp_duality_gap_zero_at_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let m = random_model(&mut rng, 6, 4, 0);
        let r = solve_lp(&m.relax_integrality()).unwrap();
        if r.status == SolveStatus::Optimal {
            let dual = r.dual_bound.expect("dual bound on optimal LP");
            assert!(
                (r.objective - dual).abs() <= 1e-6 * (1.0 + r.objective.abs()),
                "duality gap: primal {} dual {}",
                r.objective,
                dual
            );
        }
    }
}

#[test]
fn milp_two_binaries() {
    let mut m = ParametricMilp::new();
    let x = m.add_variable(VariableDef::binary("x"), Block::Z1).unwrap();
    let y = m.add_variable(VariableDef::binary("y"), Block::Z1).unwrap();
    m.set_objective(x, -1.0).unwrap();
    m.set_objective(y, -2.0).unwrap();
    m.add_row("cap", vec![(x, 1.0), (y, 1.0)], Sense::Le, 1.0).unwrap();
    let r = solve_milp(&m, &SolveParams::default(), None).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!((r.objective + 2.0).abs() < 1e-6);
    assert!((r.point[x] - 0.0).abs() < 1e-6 && (r.point[y] - 1.0).abs() < 1e-6);
}

fn knapsack() -> ParametricMilp {
    let mut m = ParametricMilp::new();
    let a = m.add_variable(VariableDef::binary("a"), Block::Z1).unwrap();
    let b = m.add_variable(VariableDef::binary("b"), Block::Z1).unwrap();
    let c = m.add_variable(VariableDef::binary("c"), Block::Z1).unwrap();
    m.set_objective(a, -5.0).unwrap();
    m.set_objective(b, -4.0).unwrap();
    m.set_objective(c, -3.0).unwrap();
    m.add_row("w", vec![(a, 2.0), (b, 3.0), (c, 1.0)], Sense::Le, 3.0).unwrap();
    m
}

/// Independent oracle: fix every binary pattern, solve the remaining LP, take the min.
fn enumeration_oracle(model: &ParametricMilp) -> f64 {
    let bins: Vec<usize> = (0..model.num_vars())
        .filter(|&j| model.variables()[j].integral && !model.variables()[j].is_fixed())
        .collect();
    assert!(bins.len() <= 12, "oracle limited to small binary blocks");
    let mut best = f64::INFINITY;
    for pattern in 0..(1u32 << bins.len()) {
        // Collapse bounds directly instead of going through fix_binaries so the
        // oracle stays independent of the implementation path it checks.
        let mut fixed = model.clone();
        for (k, &j) in bins.iter().enumerate() {
            let v = f64::from((pattern >> k) & 1);
            fixed = rebuild_with_bounds(&fixed, j, v);
        }
        let r = solve_lp(&fixed).unwrap();
        if r.status == SolveStatus::Optimal {
            best = best.min(r.objective);
        }
    }
    best
}

/// Clone with one variable's bounds collapsed; keeps the oracle independent of fix_binaries.
fn rebuild_with_bounds(model: &ParametricMilp, var: usize, value: f64) -> ParametricMilp {
    let mut m = ParametricMilp::new();
    for (j, v) in model.variables().iter().enumerate() {
        let mut def = v.clone();
        if j == var {
            def.lower = value;
            def.upper = value;
        }
        m.add_variable(def, model.block(j)).unwrap();
    }
    for (j, &c) in model.objective().iter().enumerate() {
        m.set_objective(j, c).unwrap();
    }
    for row in model.rows() {
        m.add_row(row.name.clone(), row.coeffs.clone(), row.sense, row.rhs).unwrap();
    }
    m
}

#[test]
fn milp_knapsack_matches_enumeration() {
    let m = knapsack();
    let r = solve_milp(&m, &SolveParams::default(), None).unwrap();
    let oracle = enumeration_oracle(&m);
    assert!((r.objective - oracle).abs() < 1e-6, "milp {} oracle {}", r.objective, oracle);
    assert!((oracle + 8.0).abs() < 1e-9); // a + c: -5 - 3
}

#[test]
fn milp_warm_start_with_optimum_does_not_add_nodes() {
    let m = knapsack();
    let cold = solve_milp(&m, &SolveParams::default(), None).unwrap();
    let warm = solve_milp(&m, &SolveParams::default(), Some(&cold.point)).unwrap();
    assert!((warm.objective - cold.objective).abs() < 1e-9);
    assert!(warm.node_count <= cold.node_count);
}

#[test]
fn milp_infeasible_hint_is_discarded_not_fatal() {
    let m = knapsack();
    let bad = vec![1.0, 1.0, 1.0]; // weight 6 > 3
    let r = solve_milp(&m, &SolveParams::default(), Some(&bad)).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!((r.objective + 8.0).abs() < 1e-6);
}

#[test]
fn milp_warm_start_dominance() {
    let m = knapsack();
    let hint = vec![0.0, 1.0, 0.0]; // feasible, objective -4
    let params = SolveParams::default();
    let r = solve_milp(&m, &params, Some(&hint)).unwrap();
    assert!(r.objective <= -4.0 + params.mip_gap_abs);
}

fn random_model(rng: &mut ChaCha8Rng, n_cont: usize, n_bin: usize, tag: u64) -> ParametricMilp {
    let mut m = ParametricMilp::new();
    let mut ids = Vec::new();
    for j in 0..n_cont {
        let lo = rng.gen_range(-5.0..0.0);
        let hi = lo + rng.gen_range(1.0..10.0);
        ids.push(m.add_variable(var(&format!("x{tag}_{j}"), lo, hi), Block::X1).unwrap());
    }
    for j in 0..n_bin {
        ids.push(m.add_variable(VariableDef::binary(&format!("z{tag}_{j}")), Block::Z1).unwrap());
    }
    for &j in &ids {
        m.set_objective(j, rng.gen_range(-3.0..3.0)).unwrap();
    }
    let n_rows = rng.gen_range(2..6);
    for i in 0..n_rows {
        let mut coeffs: Vec<(usize, f64)> = Vec::new();
        for &j in &ids {
            if rng.gen_bool(0.7) {
                coeffs.push((j, rng.gen_range(-2.0..2.0)));
            }
        }
        if coeffs.is_empty() {
            continue;
        }
        let sense = match rng.gen_range(0..3) {
            0 => Sense::Le,
            1 => Sense::Ge,
            _ => Sense::Eq,
        };
        let rhs = rng.gen_range(-4.0..4.0);
        m.add_row(format!("r{tag}_{i}"), coeffs, sense, rhs).unwrap();
    }
    m
}

#[test]
fn milp_matches_enumeration_on_random_small_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(20260824);
    let mut checked = 0;
    for k in 0..40 {
        let m = random_model(&mut rng, 4, 6, k);
        let oracle = enumeration_oracle(&m);
        let r = solve_milp(&m, &SolveParams::default(), None).unwrap();
        if oracle.is_infinite() {
            assert_eq!(r.status, SolveStatus::Infeasible, "model {k} should be infeasible");
        } else {
            assert_eq!(r.status, SolveStatus::Optimal, "model {k}");
            assert!(
                (r.objective - oracle).abs() < 1e-6,
                "model {k}: milp {} vs enumeration {}",
                r.objective,
                oracle
            );
            checked += 1;
        }
    }
    assert!(checked >= 10, "too few feasible random models ({checked})");
}

#[test]
fn milp_deterministic_across_repeat_solves() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let m = random_model(&mut rng, 5, 5, 0);
    let a = solve_milp(&m, &SolveParams::default(), None).unwrap();
    let b = solve_milp(&m, &SolveParams::default(), None).unwrap();
    assert_eq!(a.status, b.status);
    assert_eq!(a.node_count, b.node_count);
    assert_eq!(a.objective.to_bits(), b.objective.to_bits());
    assert_eq!(a.point, b.point);
}

#[test]
fn fix_binaries_collapses_bounds_and_flags_errors() {
    let mut m = ParametricMilp::new();
    m.add_variable(VariableDef::binary("m_a"), Block::Z1).unwrap();
    m.add_variable(VariableDef::binary("aux"), Block::Z2).unwrap();

    let mut assign = BTreeMap::new();
    assign.insert("m_a".to_string(), 1.0);
    let fixed = m.fix_binaries(&assign).unwrap();
    let v = &fixed.variables()[fixed.var_index("m_a").unwrap()];
    assert_eq!((v.lower, v.upper), (1.0, 1.0));
    assert!(fixed.z1_fixed());

    let empty = BTreeMap::new();
    assert!(matches!(m.fix_binaries(&empty), Err(MilpError::PartialAssignment(_))));

    let mut wrong = BTreeMap::new();
    wrong.insert("aux".to_string(), 1.0);
    assert!(matches!(m.fix_binaries(&wrong), Err(MilpError::UnknownVariable(_))));
}

#[test]
fn validation_report_lists_violated_rows() {
    let mut m = ParametricMilp::new();
    let x = m.add_variable(var("x", 0.0, 10.0), Block::X1).unwrap();
    m.add_row("ge1", vec![(x, 1.0)], Sense::Ge, 1.0).unwrap();
    let report = m.validate_solution(&[0.5], 1e-6).unwrap();
    assert_eq!(report.row_violations.len(), 1);
    assert_eq!(report.row_violations[0].row, "ge1");
    assert!((report.row_violations[0].violation - 0.5).abs() < 1e-12);

    let ok = m.validate_solution(&[1.0], 1e-6).unwrap();
    assert!(ok.is_feasible());
}
