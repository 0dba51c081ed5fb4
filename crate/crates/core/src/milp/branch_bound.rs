//! Best-first branch-and-bound over the binary variables.
//!
//! Branching variable: most fractional, ties broken by lowest variable index.
//! Node selection: best LP bound, ties FIFO. An incumbent hint, if feasible
//! within tolerance, is installed before the search starts; an infeasible hint
//! is discarded with a warning.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use super::simplex::solve_lp_relaxation;
use super::{IncumbentSource, MilpError, MilpResult, ParametricMilp, SolveParams, SolveStatus};

struct Node {
    bound: f64,
    seq: u64,
    overrides: Vec<(usize, f64, f64)>,
    point: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.seq == other.seq
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap; invert so the lowest bound pops first, FIFO on ties.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

fn most_fractional(model: &ParametricMilp, point: &[f64], tol: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, v) in model.variables().iter().enumerate() {
        if !v.integral {
            continue;
        }
        let frac = (point[j] - point[j].round()).abs();
        if frac > tol {
            match best {
                Some((_, b)) if b >= frac => {}
                _ => best = Some((j, frac)),
            }
        }
    }
    best.map(|(j, _)| j)
}

pub fn solve_milp(
    model: &ParametricMilp,
    params: &SolveParams,
    incumbent_hint: Option<&[f64]>,
) -> Result<MilpResult, MilpError> {
    let start = Instant::now();
    let gap = |inc: f64| params.mip_gap_abs.max(params.mip_gap_rel * inc.abs());

    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut incumbent_source = IncumbentSource::BranchAndBound;
    if let Some(hint) = incumbent_hint {
        let report = model.validate_solution(hint, params.feasibility_tol)?;
        if report.is_feasible() {
            incumbent = Some((model.objective_value(hint), hint.to_vec()));
            incumbent_source = IncumbentSource::WarmStartAccepted;
        } else {
            eprintln!(
                "warning: incumbent hint discarded, worst violation {:.3e}",
                report.worst
            );
        }
    }

    let mut node_count: u64 = 0;
    let mut seq: u64 = 0;
    let mut heap: BinaryHeap<Node> = BinaryHeap::new();
    let mut time_limit_hit = false;

    let root = solve_lp_relaxation(model, &[])?;
    node_count += 1;
    match root.status {
        SolveStatus::Unbounded => {
            return Ok(MilpResult {
                status: SolveStatus::Unbounded,
                objective: f64::NEG_INFINITY,
                point: Vec::new(),
                node_count,
                wall_time: start.elapsed().as_secs_f64(),
                incumbent_source,
                time_limit_hit: false,
                dual_bound: None,
            })
        }
        SolveStatus::Infeasible => {}
        _ => {
            heap.push(Node { bound: root.objective, seq, overrides: Vec::new(), point: root.point });
            seq += 1;
        }
    }

    while let Some(node) = heap.pop() {
        if let Some((inc, _)) = &incumbent {
            if node.bound >= inc - gap(*inc) {
                break; // best-first: every remaining node is within gap
            }
        }
        if start.elapsed().as_secs_f64() > params.time_limit_s {
            time_limit_hit = true;
            break;
        }

        match most_fractional(model, &node.point, params.feasibility_tol) {
            None => {
                let obj = model.objective_value(&node.point);
                let better = incumbent.as_ref().map_or(true, |(inc, _)| obj < *inc);
                if better {
                    incumbent = Some((obj, node.point.clone()));
                    incumbent_source = IncumbentSource::BranchAndBound;
                }
            }
            Some(j) => {
                let x = node.point[j];
                let down = (f64::NEG_INFINITY, x.floor());
                let up = (x.ceil(), f64::INFINITY);
                for (lo, hi) in [down, up] {
                    let mut ov = node.overrides.clone();
                    ov.push((j, lo, hi));
                    let sub = solve_lp_relaxation(model, &ov)?;
                    node_count += 1;
                    if sub.status != SolveStatus::Optimal {
                        continue;
                    }
                    let prune = incumbent
                        .as_ref()
                        .map_or(false, |(inc, _)| sub.objective >= inc - gap(*inc));
                    if !prune {
                        heap.push(Node { bound: sub.objective, seq, overrides: ov, point: sub.point });
                        seq += 1;
                    }
                }
            }
        }
    }

    let wall_time = start.elapsed().as_secs_f64();
    Ok(match incumbent {
        Some((obj, point)) => MilpResult {
            status: if time_limit_hit { SolveStatus::Feasible } else { SolveStatus::Optimal },
            objective: obj,
            point,
            node_count,
            wall_time,
            incumbent_source,
            time_limit_hit,
            dual_bound: None,
        },
        None => MilpResult {
            status: SolveStatus::Infeasible,
            objective: f64::INFINITY,
            point: Vec::new(),
            node_count,
            wall_time,
            incumbent_source,
            time_limit_hit,
            dual_bound: None,
        },
    })
}
