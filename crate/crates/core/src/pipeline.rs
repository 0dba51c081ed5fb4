//! End-user pipeline: primal heuristic, warm-started exact solve and the
//! batch evaluation harness with shifted-geometric-mean reporting.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gas::build::{direction_var, pressure_var};
use crate::gas::{
    build_instance_milp, GasError, GasNetwork, Instance, ObjectiveWeights, OperationModeSequence,
};
use crate::milp::{
    solve_milp, MilpError, MilpResult, ParametricMilp, SolveParams, SolveStatus,
};
use crate::neural::io::load_weights;
use crate::neural::{encode_instance, round_to_one_hot, ArchConfig, GeneratorNet, NeuralError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Gas(#[from] GasError),
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("instance `{0}` is infeasible")]
    Infeasible(String),
    #[error("time limit hit on `{0}` without proven optimum")]
    TimeLimit(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("format: {0}")]
    Format(String),
}

/// Loads generator weights saved by the training loop; the architecture has
/// to match the stored fingerprint.
pub fn load_generator(
    path: &Path,
    network: &GasNetwork,
    arch: ArchConfig,
) -> Result<GeneratorNet, PipelineError> {
    let mut rng = crate::datagen::stream_rng(0, 0, 0);
    let mut gen = GeneratorNet::new(network, arch, &mut rng);
    let header = load_weights(path, &mut gen.store)?;
    gen.temperature = header.temperature;
    Ok(gen)
}

#[derive(Clone, Debug)]
pub struct HeuristicOutcome {
    pub sequence: OperationModeSequence,
    /// Full point of the fixed model, index-compatible with the unfixed one.
    pub point: Vec<f64>,
    pub objective: f64,
    pub node_count: u64,
    pub optimal: bool,
    pub t_infer_s: f64,
    pub t_solve_s: f64,
}

/// Encode, forward, round, fix, solve. The returned solution is feasible for
/// the unfixed model because fixing only tightens binary bounds.
pub fn primal_heuristic(
    gen: &GeneratorNet,
    network: &GasNetwork,
    instance: &Instance,
    weights: &ObjectiveWeights,
    params: &SolveParams,
) -> Result<HeuristicOutcome, PipelineError> {
    let t0 = Instant::now();
    let enc = encode_instance(network, instance);
    let (probs, _) = gen.forward(&enc)?;
    let sequence = round_to_one_hot(&probs);
    let t_infer_s = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let fixed = build_instance_milp(network, instance, weights, Some(&sequence))?;
    let res = solve_milp(&fixed, params, None)?;
    let t_solve_s = t1.elapsed().as_secs_f64();
    match res.status {
        SolveStatus::Optimal | SolveStatus::Feasible => Ok(HeuristicOutcome {
            sequence,
            objective: res.objective,
            node_count: res.node_count,
            optimal: res.status == SolveStatus::Optimal,
            point: res.point,
            t_infer_s,
            t_solve_s,
        }),
        SolveStatus::Infeasible if res.time_limit_hit => {
            Err(PipelineError::TimeLimit("heuristic".into()))
        }
        _ => Err(PipelineError::Infeasible("fixed model".into())),
    }
}

/// Completes the partial warm start (z1 modes, flow-direction binaries,
/// future boundary pressures) into a full point by re-solving the model with
/// those values pinned and integrality relaxed; the remaining binaries are
/// forced by the coupling rows. Returns None when the completion fails.
pub fn complete_warm_start(
    network: &GasNetwork,
    instance: &Instance,
    model: &ParametricMilp,
    heuristic_point: &[f64],
) -> Result<Option<Vec<f64>>, PipelineError> {
    let mut pinned = model.clone();
    let named: BTreeMap<String, f64> = model
        .variables()
        .iter()
        .zip(heuristic_point)
        .map(|(v, &x)| (v.id.clone(), x))
        .collect();
    let pin = |id: String, m: &mut ParametricMilp| -> Result<(), PipelineError> {
        let value = *named
            .get(&id)
            .ok_or_else(|| PipelineError::Format(format!("missing hint variable `{id}`")))?;
        m.fix_variable(&id, value)?;
        Ok(())
    };
    for t in 1..=instance.horizon {
        for o in &network.operation_modes {
            pin(crate::gas::build::mode_var(&o.id, t), &mut pinned)?;
        }
        for g in network.fence_groups().keys() {
            pin(direction_var(g, t), &mut pinned)?;
        }
        for n in network.boundary_nodes() {
            pin(pressure_var(&n.id, t), &mut pinned)?;
        }
    }
    let relaxed = pinned.relax_integrality();
    match crate::milp::solve_lp(&relaxed) {
        Ok(res) if res.status == SolveStatus::Optimal => Ok(Some(res.point)),
        Ok(_) => Ok(None),
        Err(MilpError::Numerical(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// One evaluation row; CSV column order is fixed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalRecord {
    pub instance_id: String,
    pub f_heuristic: f64,
    pub f_cold: f64,
    pub t_infer_s: f64,
    pub t_heuristic_s: f64,
    pub t_warm_s: f64,
    pub t_cold_s: f64,
    pub nodes_warm: u64,
    pub nodes_cold: u64,
    pub accepted: bool,
}

pub const CSV_HEADER: &str = "instance_id,f_heuristic,f_cold,t_infer_s,t_heuristic_s,t_warm_s,\
t_cold_s,nodes_warm,nodes_cold,accepted";

impl EvalRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.instance_id,
            self.f_heuristic,
            self.f_cold,
            self.t_infer_s,
            self.t_heuristic_s,
            self.t_warm_s,
            self.t_cold_s,
            self.nodes_warm,
            self.nodes_cold,
            self.accepted
        )
    }
}

/// Heuristic, hint completion, warm solve and cold solve for one instance.
/// With `deterministic_timing` all wall-clock fields are reported as zero so
/// repeated runs produce identical bytes.
#[allow(clippy::too_many_arguments)]
pub fn warm_start_solve(
    gen: &GeneratorNet,
    network: &GasNetwork,
    instance: &Instance,
    weights: &ObjectiveWeights,
    params: &SolveParams,
    instance_id: &str,
    deterministic_timing: bool,
) -> Result<(EvalRecord, MilpResult, MilpResult), PipelineError> {
    let heur = primal_heuristic(gen, network, instance, weights, params)?;
    let model = build_instance_milp(network, instance, weights, None)?;
    // A hint counts as accepted when its completion validates on the unfixed
    // model; the solver may still improve on it during the search.
    let hint = complete_warm_start(network, instance, &model, &heur.point)?.filter(|h| {
        model
            .validate_solution(h, params.feasibility_tol)
            .map(|r| r.is_feasible())
            .unwrap_or(false)
    });
    let accepted = hint.is_some();

    let t0 = Instant::now();
    let warm = solve_milp(&model, params, hint.as_deref())?;
    let t_warm_s = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let cold = solve_milp(&model, params, None)?;
    let t_cold_s = t1.elapsed().as_secs_f64();
    if cold.status == SolveStatus::Infeasible {
        return Err(PipelineError::Infeasible(instance_id.into()));
    }
    let z = |v: f64| if deterministic_timing { 0.0 } else { v };
    let record = EvalRecord {
        instance_id: instance_id.to_string(),
        f_heuristic: heur.objective,
        f_cold: cold.objective,
        t_infer_s: z(heur.t_infer_s),
        t_heuristic_s: z(heur.t_solve_s),
        t_warm_s: z(t_warm_s),
        t_cold_s: z(t_cold_s),
        nodes_warm: warm.node_count,
        nodes_cold: cold.node_count,
        accepted,
    };
    Ok((record, warm, cold))
}

/// Geometric mean of (v + shift), minus the shift.
pub fn shifted_geomean(values: &[f64], shift: f64) -> f64 {
    assert!(!values.is_empty());
    let s: f64 = values.iter().map(|&v| (v + shift).ln()).sum();
    (s / values.len() as f64).exp() - shift
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuiteAggregates {
    pub num_instances: usize,
    pub num_failures: usize,
    pub acceptance_rate: f64,
    pub sgm_warm_s: f64,
    pub sgm_cold_s: f64,
    /// 100 * (1 - sgm_warm / sgm_cold), the shifted-geomean speedup.
    pub speedup_percent: f64,
    pub mean_heuristic_gap: f64,
    pub max_heuristic_gap: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuiteReport {
    pub records: Vec<EvalRecord>,
    pub failures: Vec<String>,
    pub aggregates: SuiteAggregates,
    pub solve_params_time_limit_s: f64,
    pub deterministic_timing: bool,
    pub shift: f64,
}

/// Runs every instance through [`warm_start_solve`] on a small worker pool;
/// the report is assembled sequentially, ordered by instance id. Per-instance
/// failures are recorded and the suite continues.
pub fn evaluate_suite(
    gen: &GeneratorNet,
    network: &GasNetwork,
    instances: &[(String, Instance)],
    weights: &ObjectiveWeights,
    params: &SolveParams,
    deterministic_timing: bool,
    num_workers: usize,
) -> SuiteReport {
    let shift = 1.0;
    let mut ordered: Vec<(String, Instance)> = instances.to_vec();
    ordered.sort_by(|a, b| a.0.cmp(&b.0));

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<EvalRecord, String>)>> = Mutex::new(Vec::new());
    let workers = num_workers.clamp(1, ordered.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= ordered.len() {
                    break;
                }
                let (id, pi) = &ordered[i];
                let out = warm_start_solve(
                    gen,
                    network,
                    pi,
                    weights,
                    params,
                    id,
                    deterministic_timing,
                )
                .map(|(r, _, _)| r)
                .map_err(|e| format!("{id}: {e}"));
                results.lock().unwrap().push((i, out));
            });
        }
    });
    let mut collected = results.into_inner().unwrap();
    collected.sort_by_key(|(i, _)| *i);
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (_, r) in collected {
        match r {
            Ok(rec) => records.push(rec),
            Err(msg) => failures.push(msg),
        }
    }

    let aggregates = if records.is_empty() {
        SuiteAggregates {
            num_instances: 0,
            num_failures: failures.len(),
            acceptance_rate: 0.0,
            sgm_warm_s: 0.0,
            sgm_cold_s: 0.0,
            speedup_percent: 0.0,
            mean_heuristic_gap: 0.0,
            max_heuristic_gap: 0.0,
        }
    } else {
        let warm: Vec<f64> = records.iter().map(|r| r.t_warm_s).collect();
        let cold: Vec<f64> = records.iter().map(|r| r.t_cold_s).collect();
        let gaps: Vec<f64> = records.iter().map(|r| r.f_heuristic - r.f_cold).collect();
        let sgm_warm_s = shifted_geomean(&warm, shift);
        let sgm_cold_s = shifted_geomean(&cold, shift);
        SuiteAggregates {
            num_instances: records.len(),
            num_failures: failures.len(),
            acceptance_rate: records.iter().filter(|r| r.accepted).count() as f64
                / records.len() as f64,
            sgm_warm_s,
            sgm_cold_s,
            speedup_percent: if sgm_cold_s > 0.0 {
                100.0 * (1.0 - sgm_warm_s / sgm_cold_s)
            } else {
                0.0
            },
            mean_heuristic_gap: gaps.iter().sum::<f64>() / gaps.len() as f64,
            max_heuristic_gap: gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    };
    SuiteReport {
        records,
        failures,
        aggregates,
        solve_params_time_limit_s: params.time_limit_s,
        deterministic_timing,
        shift,
    }
}

pub fn write_csv_report(path: &Path, report: &SuiteReport) -> Result<(), PipelineError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{CSV_HEADER}")?;
    for r in &report.records {
        writeln!(f, "{}", r.csv_line())?;
    }
    f.flush()?;
    Ok(())
}

pub fn write_json_report(path: &Path, report: &SuiteReport) -> Result<(), PipelineError> {
    let bytes = serde_json::to_vec_pretty(report)
        .map_err(|e| PipelineError::Format(e.to_string()))?;
    std::fs::write(path, bytes)?;
    Ok(())
}
