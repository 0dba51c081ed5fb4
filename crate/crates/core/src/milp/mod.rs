//! Parametric MILP representation and the exact solving oracle.
//!
//! A model is a block-structured MILP: continuous variables `x1`, nonnegative
//! slack variables `x2`, binary decision variables `z1` (the operation-mode
//! block) and auxiliary binaries `z2`. Solving goes through a bounded-variable
//! primal simplex ([`solve_lp`]) and a best-first branch-and-bound
//! ([`solve_milp`]) that accepts an incumbent hint.

mod branch_bound;
mod simplex;

pub use branch_bound::solve_milp;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

/// Variable block membership in the parametric model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    /// Continuous state variables (pressures, flows, inflows).
    X1,
    /// Nonnegative slack-style continuous variables; objective coefficients must be >= 0.
    X2,
    /// Binary decision block (operation-mode selectors).
    Z1,
    /// Auxiliary binaries (element-state indicators, flow directions).
    Z2,
}

#[derive(Clone, Debug)]
pub struct VariableDef {
    pub id: String,
    pub lower: f64,
    pub upper: f64,
    pub integral: bool,
}

impl VariableDef {
    pub fn continuous(id: impl Into<String>, lower: f64, upper: f64) -> Self {
        VariableDef { id: id.into(), lower, upper, integral: false }
    }

    pub fn binary(id: impl Into<String>) -> Self {
        VariableDef { id: id.into(), lower: 0.0, upper: 1.0, integral: true }
    }

    pub fn is_fixed(&self) -> bool {
        self.lower == self.upper
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

/// A sparse constraint row `sum coeffs (sense) rhs`.
#[derive(Clone, Debug)]
pub struct Row {
    pub name: String,
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Error)]
pub enum MilpError {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("duplicate variable `{0}`")]
    DuplicateVariable(String),
    #[error("partial assignment: z1 variable `{0}` not covered")]
    PartialAssignment(String),
    #[error("assignment value {1} for `{0}` is not binary")]
    NonBinaryValue(String, f64),
    #[error("free integral variable `{0}` present; fix or relax before calling solve_lp")]
    FreeIntegerPresent(String),
    #[error("variable `{0}` has lower bound {1} above upper bound {2}")]
    InvertedBounds(String, f64, f64),
    #[error("row `{0}` has non-finite rhs")]
    NonFiniteRhs(String),
    #[error("x2 variable `{0}` has negative objective coefficient {1}")]
    NegativeSlackCost(String, f64),
    #[error("point assigns {0} values but the model has {1} variables")]
    PointLengthMismatch(usize, usize),
    #[error("numerical failure in simplex: {0}")]
    Numerical(String),
}

/// Gurobi-style solve tolerances, defaults from the evaluation setup.
#[derive(Clone, Copy, Debug)]
pub struct SolveParams {
    pub time_limit_s: f64,
    pub feasibility_tol: f64,
    pub mip_gap_rel: f64,
    pub mip_gap_abs: f64,
}

impl Default for SolveParams {
    fn default() -> Self {
        SolveParams {
            time_limit_s: 3600.0,
            feasibility_tol: 1e-6,
            mip_gap_rel: 1e-4,
            mip_gap_abs: 1e-2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    /// Incumbent found but optimality not proven (time limit).
    Feasible,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IncumbentSource {
    BranchAndBound,
    WarmStartAccepted,
}

#[derive(Clone, Debug)]
pub struct MilpResult {
    pub status: SolveStatus,
    pub objective: f64,
    pub point: Vec<f64>,
    pub node_count: u64,
    pub wall_time: f64,
    pub incumbent_source: IncumbentSource,
    /// True when the time limit cut the search short; with no incumbent the
    /// status is reported as Infeasible-so-far.
    pub time_limit_hit: bool,
    /// Dual bound from the final simplex basis (LP solves only).
    pub dual_bound: Option<f64>,
}

impl MilpResult {
    pub fn named_point(&self, model: &ParametricMilp) -> BTreeMap<String, f64> {
        model
            .variables()
            .iter()
            .zip(&self.point)
            .map(|(v, &x)| (v.id.clone(), x))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct RowViolation {
    pub row: String,
    pub violation: f64,
}

#[derive(Clone, Debug)]
pub struct BoundViolation {
    pub variable: String,
    pub violation: f64,
}

#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub row_violations: Vec<RowViolation>,
    pub bound_violations: Vec<BoundViolation>,
    pub integrality_violations: Vec<BoundViolation>,
    pub worst: f64,
}

impl ValidationReport {
    pub fn is_feasible(&self) -> bool {
        self.row_violations.is_empty()
            && self.bound_violations.is_empty()
            && self.integrality_violations.is_empty()
    }
}

/// The parametric MILP. Immutable once built; solves never mutate it.
#[derive(Clone, Debug, Default)]
pub struct ParametricMilp {
    vars: Vec<VariableDef>,
    blocks: Vec<Block>,
    index: HashMap<String, usize>,
    rows: Vec<Row>,
    objective: Vec<f64>,
    z1_fixed: bool,
}

impl ParametricMilp {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, def: VariableDef, block: Block) -> Result<usize, MilpError> {
        if def.lower > def.upper {
            return Err(MilpError::InvertedBounds(def.id, def.lower, def.upper));
        }
        if self.index.contains_key(&def.id) {
            return Err(MilpError::DuplicateVariable(def.id));
        }
        let idx = self.vars.len();
        self.index.insert(def.id.clone(), idx);
        self.vars.push(def);
        self.blocks.push(block);
        self.objective.push(0.0);
        Ok(idx)
    }

    pub fn set_objective(&mut self, var: usize, coeff: f64) -> Result<(), MilpError> {
        if self.blocks[var] == Block::X2 && coeff < 0.0 {
            return Err(MilpError::NegativeSlackCost(self.vars[var].id.clone(), coeff));
        }
        self.objective[var] = coeff;
        Ok(())
    }

    pub fn add_objective(&mut self, var: usize, coeff: f64) -> Result<(), MilpError> {
        self.set_objective(var, self.objective[var] + coeff)
    }

    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        coeffs: Vec<(usize, f64)>,
        sense: Sense,
        rhs: f64,
    ) -> Result<usize, MilpError> {
        let name = name.into();
        if !rhs.is_finite() {
            return Err(MilpError::NonFiniteRhs(name));
        }
        for &(j, _) in &coeffs {
            assert!(j < self.vars.len(), "row `{name}` references undeclared variable {j}");
        }
        self.rows.push(Row { name, coeffs, sense, rhs });
        Ok(self.rows.len() - 1)
    }

    pub fn variables(&self) -> &[VariableDef] {
        &self.vars
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn block(&self, var: usize) -> Block {
        self.blocks[var]
    }

    pub fn var_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn z1_fixed(&self) -> bool {
        self.z1_fixed
    }

    pub fn block_ids(&self, block: Block) -> Vec<usize> {
        (0..self.vars.len()).filter(|&j| self.blocks[j] == block).collect()
    }

    /// True when no integral variable is left free; the model is then pure LP.
    pub fn integers_all_fixed(&self) -> bool {
        self.vars.iter().all(|v| !v.integral || v.is_fixed())
    }

    pub fn objective_value(&self, point: &[f64]) -> f64 {
        self.objective.iter().zip(point).map(|(c, x)| c * x).sum()
    }

    /// Copy with every integrality flag cleared; bounds untouched.
    pub fn relax_integrality(&self) -> ParametricMilp {
        let mut m = self.clone();
        for v in &mut m.vars {
            v.integral = false;
        }
        m
    }

    /// Restricts the z1 block to a fixed 0/1 assignment by collapsing bounds.
    ///
    /// The assignment must cover exactly the z1 block.
    pub fn fix_binaries(&self, assignment: &BTreeMap<String, f64>) -> Result<ParametricMilp, MilpError> {
        for id in assignment.keys() {
            match self.index.get(id) {
                Some(&j) if self.blocks[j] == Block::Z1 => {}
                _ => return Err(MilpError::UnknownVariable(id.clone())),
            }
        }
        let mut fixed = self.clone();
        for (j, v) in fixed.vars.iter_mut().enumerate() {
            if fixed.blocks[j] != Block::Z1 {
                continue;
            }
            let val = *assignment
                .get(&v.id)
                .ok_or_else(|| MilpError::PartialAssignment(v.id.clone()))?;
            if val != 0.0 && val != 1.0 {
                return Err(MilpError::NonBinaryValue(v.id.clone(), val));
            }
            v.lower = val;
            v.upper = val;
        }
        fixed.z1_fixed = true;
        Ok(fixed)
    }

    /// Per-row residual report for a full point. Always succeeds.
    /// Pins a single variable to a value inside its current bounds; used to
    /// complete partial warm-start assignments before an LP re-solve.
    pub fn fix_variable(&mut self, id: &str, value: f64) -> Result<(), MilpError> {
        let j = *self
            .index
            .get(id)
            .ok_or_else(|| MilpError::UnknownVariable(id.to_string()))?;
        let v = &mut self.vars[j];
        if value < v.lower - 1e-9 || value > v.upper + 1e-9 {
            return Err(MilpError::InvertedBounds(v.id.clone(), value, v.upper));
        }
        v.lower = value;
        v.upper = value;
        Ok(())
    }

    pub fn validate_solution(&self, point: &[f64], tol: f64) -> Result<ValidationReport, MilpError> {
        if point.len() != self.vars.len() {
            return Err(MilpError::PointLengthMismatch(point.len(), self.vars.len()));
        }
        let mut report = ValidationReport::default();
        for row in &self.rows {
            let lhs: f64 = row.coeffs.iter().map(|&(j, c)| c * point[j]).sum();
            let viol = match row.sense {
                Sense::Le => (lhs - row.rhs).max(0.0),
                Sense::Ge => (row.rhs - lhs).max(0.0),
                Sense::Eq => (lhs - row.rhs).abs(),
            };
            if viol > tol {
                report.worst = report.worst.max(viol);
                report.row_violations.push(RowViolation { row: row.name.clone(), violation: viol });
            }
        }
        for (v, &x) in self.vars.iter().zip(point) {
            let bviol = (v.lower - x).max(x - v.upper).max(0.0);
            if bviol > tol {
                report.worst = report.worst.max(bviol);
                report.bound_violations.push(BoundViolation { variable: v.id.clone(), violation: bviol });
            }
            if v.integral {
                let iviol = (x - x.round()).abs();
                if iviol > tol {
                    report.worst = report.worst.max(iviol);
                    report
                        .integrality_violations
                        .push(BoundViolation { variable: v.id.clone(), violation: iviol });
                }
            }
        }
        Ok(report)
    }

    /// Plain-text LP-style listing for inspection; not a parser input.
    pub fn dump_lp(&self) -> String {
        let mut out = String::new();
        out.push_str("minimize\n ");
        for (j, c) in self.objective.iter().enumerate() {
            if *c != 0.0 {
                let _ = write!(out, " {:+} {}", c, self.vars[j].id);
            }
        }
        out.push_str("\nsubject to\n");
        for row in &self.rows {
            let _ = write!(out, " {}:", row.name);
            for &(j, c) in &row.coeffs {
                let _ = write!(out, " {:+} {}", c, self.vars[j].id);
            }
            let sense = match row.sense {
                Sense::Le => "<=",
                Sense::Eq => "=",
                Sense::Ge => ">=",
            };
            let _ = writeln!(out, " {} {}", sense, row.rhs);
        }
        out.push_str("bounds\n");
        for v in &self.vars {
            let _ = writeln!(out, " {} <= {} <= {}", v.lower, v.id, v.upper);
        }
        out.push_str("integers\n ");
        for v in &self.vars {
            if v.integral {
                let _ = write!(out, " {}", v.id);
            }
        }
        out.push('\n');
        out
    }
}

/// LP solve for a model whose integral variables are all fixed.
///
/// Errors with [`MilpError::FreeIntegerPresent`] otherwise; use
/// [`ParametricMilp::relax_integrality`] or [`solve_milp`] for models with
/// free binaries.
pub fn solve_lp(model: &ParametricMilp) -> Result<MilpResult, MilpError> {
    for v in model.variables() {
        if v.integral && !v.is_fixed() {
            return Err(MilpError::FreeIntegerPresent(v.id.clone()));
        }
    }
    simplex::solve_lp_relaxation(model, &[])
}

/// LP solves for a batch of bound tightenings `(var_index, lower, upper)`
/// against one model, warm-starting each solve from the previous basis.
///
/// Results are returned in the order of `override_sets`. Integrality is
/// ignored, as in [`ParametricMilp::relax_integrality`]; callers that need
/// integral answers should fix the integer variables through the overrides.
pub fn solve_lp_sequence(
    model: &ParametricMilp,
    override_sets: &[Vec<(usize, f64, f64)>],
) -> Result<Vec<MilpResult>, MilpError> {
    simplex::solve_lp_sequence(model, override_sets)
}
