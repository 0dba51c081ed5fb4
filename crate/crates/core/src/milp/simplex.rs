//! Bounded-variable primal simplex with Bland's rule as anti-cycling fallback.
//!
//! Rows are scaled by their max-abs coefficient before solving and carry one
//! slack each, so the working form is `A x + s = b` with general bounds on
//! every column. Phase 1 minimises the sum of basic bound violations without
//! artificial variables; phase 2 is the textbook bounded simplex. The basis
//! inverse is kept explicitly and refactorised periodically.

use super::{MilpError, MilpResult, IncumbentSource, ParametricMilp, Sense, SolveStatus};

const PIVOT_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-8;
const COST_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 120;
const BLAND_AFTER_DEGENERATE: usize = 5000;
const MAX_ITERS: usize = 2_000_000;

#[derive(Clone, Copy, PartialEq)]
enum NonbasicState {
    AtLower,
    AtUpper,
    /// Free variable resting at zero.
    AtZero,
    Basic,
}

struct Tableau {
    m: usize,
    n: usize,
    /// Columns of the scaled equality system, sparse.
    cols: Vec<Vec<(usize, f64)>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<NonbasicState>,
    binv: Vec<f64>,
    xb: Vec<f64>,
    pivots_since_refactor: usize,
    degenerate_pivots: usize,
}

impl Tableau {
    fn build(model: &ParametricMilp, overrides: &[(usize, f64, f64)]) -> Self {
        let n_struct = model.num_vars();
        let m = model.rows().len();
        let n = n_struct + m;

        let mut lower: Vec<f64> = model.variables().iter().map(|v| v.lower).collect();
        let mut upper: Vec<f64> = model.variables().iter().map(|v| v.upper).collect();
        for &(j, lo, hi) in overrides {
            lower[j] = lower[j].max(lo);
            upper[j] = upper[j].min(hi);
        }
        let mut cost = model.objective().to_vec();
        cost.resize(n, 0.0);

        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut rhs = vec![0.0; m];
        for (i, row) in model.rows().iter().enumerate() {
            let scale = row
                .coeffs
                .iter()
                .map(|&(_, c)| c.abs())
                .fold(0.0_f64, f64::max)
                .max(1e-12);
            for &(j, c) in &row.coeffs {
                cols[j].push((i, c / scale));
            }
            rhs[i] = row.rhs / scale;
            // Slack bounds encode the row sense.
            let (lo, hi) = match row.sense {
                Sense::Le => (0.0, f64::INFINITY),
                Sense::Ge => (f64::NEG_INFINITY, 0.0),
                Sense::Eq => (0.0, 0.0),
            };
            let sj = n_struct + i;
            cols[sj].push((i, 1.0));
            lower.push(lo);
            upper.push(hi);
            let _ = sj;
        }

        let mut state = Vec::with_capacity(n);
        for j in 0..n_struct {
            state.push(if lower[j].is_finite() {
                NonbasicState::AtLower
            } else if upper[j].is_finite() {
                NonbasicState::AtUpper
            } else {
                NonbasicState::AtZero
            });
        }
        let mut basis = Vec::with_capacity(m);
        for i in 0..m {
            state.push(NonbasicState::Basic);
            basis.push(n_struct + i);
        }

        let mut t = Tableau {
            m,
            n,
            cols,
            lower,
            upper,
            cost,
            rhs,
            basis,
            state,
            binv: identity(m),
            xb: vec![0.0; m],
            pivots_since_refactor: 0,
            degenerate_pivots: 0,
        };
        t.recompute_xb();
        t
    }

    fn nonbasic_value(&self, j: usize) -> f64 {
        match self.state[j] {
            NonbasicState::AtLower => self.lower[j],
            NonbasicState::AtUpper => self.upper[j],
            NonbasicState::AtZero => 0.0,
            NonbasicState::Basic => unreachable!("basic variable has no resting value"),
        }
    }

    fn recompute_xb(&mut self) {
        let mut resid = self.rhs.clone();
        for j in 0..self.n {
            if self.state[j] == NonbasicState::Basic {
                continue;
            }
            let v = self.nonbasic_value(j);
            if v != 0.0 {
                for &(i, c) in &self.cols[j] {
                    resid[i] -= c * v;
                }
            }
        }
        for i in 0..self.m {
            let mut acc = 0.0;
            for k in 0..self.m {
                acc += self.binv[i * self.m + k] * resid[k];
            }
            self.xb[i] = acc;
        }
    }

    fn refactorize(&mut self) -> Result<(), MilpError> {
        let m = self.m;
        // Dense B assembled column-wise, inverted by Gauss-Jordan with partial pivoting.
        let mut a = vec![0.0; m * m];
        for (k, &j) in self.basis.iter().enumerate() {
            for &(i, c) in &self.cols[j] {
                a[i * m + k] = c;
            }
        }
        let mut inv = identity(m);
        for col in 0..m {
            let mut piv = col;
            let mut best = a[col * m + col].abs();
            for r in col + 1..m {
                let v = a[r * m + col].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best < 1e-12 {
                return Err(MilpError::Numerical("singular basis during refactorisation".into()));
            }
            if piv != col {
                for c in 0..m {
                    a.swap(col * m + c, piv * m + c);
                    inv.swap(col * m + c, piv * m + c);
                }
            }
            let d = a[col * m + col];
            for c in 0..m {
                a[col * m + c] /= d;
                inv[col * m + c] /= d;
            }
            for r in 0..m {
                if r == col {
                    continue;
                }
                let f = a[r * m + col];
                if f != 0.0 {
                    for c in 0..m {
                        a[r * m + c] -= f * a[col * m + c];
                        inv[r * m + c] -= f * inv[col * m + c];
                    }
                }
            }
        }
        self.binv = inv;
        self.pivots_since_refactor = 0;
        self.recompute_xb();
        Ok(())
    }

    /// w = B^-1 a_j
    fn ftran(&self, j: usize) -> Vec<f64> {
        let mut w = vec![0.0; self.m];
        for &(i, c) in &self.cols[j] {
            if c != 0.0 {
                for r in 0..self.m {
                    w[r] += self.binv[r * self.m + i] * c;
                }
            }
        }
        w
    }

    /// y = d^T B^-1 for a row-indexed cost vector d.
    fn btran(&self, d: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.m];
        for i in 0..self.m {
            let di = d[i];
            if di != 0.0 {
                for k in 0..self.m {
                    y[k] += di * self.binv[i * self.m + k];
                }
            }
        }
        y
    }

    fn reduced_cost(&self, j: usize, y: &[f64], with_cost: bool) -> f64 {
        let mut r = if with_cost { self.cost[j] } else { 0.0 };
        for &(i, c) in &self.cols[j] {
            r -= y[i] * c;
        }
        r
    }

    fn max_infeasibility(&self) -> f64 {
        let mut worst = 0.0_f64;
        for (i, &j) in self.basis.iter().enumerate() {
            let x = self.xb[i];
            worst = worst.max(self.lower[j] - x).max(x - self.upper[j]);
        }
        worst
    }

    /// One simplex iteration. `phase1` switches between the infeasibility
    /// objective and the true cost. Returns false when no admissible entering
    /// column exists (optimal for the current phase).
    fn iterate(&mut self, phase1: bool) -> Result<IterOutcome, MilpError> {
        let y = if phase1 {
            let mut d = vec![0.0; self.m];
            for (i, &j) in self.basis.iter().enumerate() {
                if self.xb[i] < self.lower[j] - FEAS_TOL {
                    d[i] = -1.0;
                } else if self.xb[i] > self.upper[j] + FEAS_TOL {
                    d[i] = 1.0;
                }
            }
            self.btran(&d)
        } else {
            let mut d = vec![0.0; self.m];
            for (i, &j) in self.basis.iter().enumerate() {
                d[i] = self.cost[j];
            }
            self.btran(&d)
        };

        let bland = self.degenerate_pivots > BLAND_AFTER_DEGENERATE;
        let mut entering: Option<(usize, f64, f64)> = None; // (col, direction, score)
        for j in 0..self.n {
            if self.state[j] == NonbasicState::Basic {
                continue;
            }
            if self.upper[j] - self.lower[j] < PIVOT_TOL {
                continue; // fixed, cannot move
            }
            let r = self.reduced_cost(j, &y, !phase1);
            let dir = match self.state[j] {
                NonbasicState::AtLower if r < -COST_TOL => 1.0,
                NonbasicState::AtUpper if r > COST_TOL => -1.0,
                NonbasicState::AtZero if r < -COST_TOL => 1.0,
                NonbasicState::AtZero if r > COST_TOL => -1.0,
                _ => continue,
            };
            let score = r.abs();
            if bland {
                entering = Some((j, dir, score));
                break;
            }
            match entering {
                Some((_, _, best)) if best >= score => {}
                _ => entering = Some((j, dir, score)),
            }
        }

        let Some((q, dir, _)) = entering else {
            return Ok(IterOutcome::PhaseOptimal);
        };

        let w = self.ftran(q);

        // Ratio test: first bound hit by any basic variable, or the entering
        // variable reaching its opposite bound. In phase 1 an infeasible basic
        // blocks at the bound it violates (where it turns feasible).
        let mut t_best = f64::INFINITY;
        let mut leave: Option<(usize, bool)> = None; // (row, leaves_at_upper)
        for i in 0..self.m {
            let delta = -dir * w[i];
            if delta.abs() < PIVOT_TOL {
                continue;
            }
            let j = self.basis[i];
            let x = self.xb[i];
            let below = x < self.lower[j] - FEAS_TOL;
            let above = x > self.upper[j] + FEAS_TOL;
            let (t, at_upper) = if below {
                if delta > 0.0 {
                    ((self.lower[j] - x) / delta, false)
                } else {
                    continue;
                }
            } else if above {
                if delta < 0.0 {
                    ((self.upper[j] - x) / delta, true)
                } else {
                    continue;
                }
            } else if delta > 0.0 {
                if self.upper[j].is_finite() {
                    ((self.upper[j] - x) / delta, true)
                } else {
                    continue;
                }
            } else if self.lower[j].is_finite() {
                ((self.lower[j] - x) / delta, false)
            } else {
                continue;
            };
            let t = t.max(0.0);
            if t < t_best - PIVOT_TOL || (t < t_best + PIVOT_TOL && leave.map_or(true, |(r, _)| i < r)) {
                t_best = t;
                leave = Some((i, at_upper));
            }
        }

        let span = self.upper[q] - self.lower[q];
        let flip = span.is_finite() && span < t_best;

        if flip {
            // Bound flip: entering moves across to its other bound, basis unchanged.
            let t = span;
            for i in 0..self.m {
                self.xb[i] -= dir * t * w[i];
            }
            self.state[q] = match self.state[q] {
                NonbasicState::AtLower => NonbasicState::AtUpper,
                NonbasicState::AtUpper => NonbasicState::AtLower,
                s => s,
            };
            if t < PIVOT_TOL {
                self.degenerate_pivots += 1;
            }
            return Ok(IterOutcome::Step);
        }

        let Some((r, at_upper)) = leave else {
            return if phase1 {
                Err(MilpError::Numerical("unbounded phase-1 direction".into()))
            } else {
                Ok(IterOutcome::Unbounded)
            };
        };

        let t = t_best;
        if t < PIVOT_TOL {
            self.degenerate_pivots += 1;
        }
        let entering_value = self.nonbasic_value(q) + dir * t;
        for i in 0..self.m {
            self.xb[i] -= dir * t * w[i];
        }
        let leaving = self.basis[r];
        self.state[leaving] = if at_upper { NonbasicState::AtUpper } else { NonbasicState::AtLower };
        self.basis[r] = q;
        self.state[q] = NonbasicState::Basic;
        self.xb[r] = entering_value;

        // binv <- E binv with the pivot row scaled by w[r].
        let piv = w[r];
        if piv.abs() < 1e-11 {
            return Err(MilpError::Numerical("pivot element too small".into()));
        }
        for c in 0..self.m {
            self.binv[r * self.m + c] /= piv;
        }
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = w[i];
            if f != 0.0 {
                for c in 0..self.m {
                    self.binv[i * self.m + c] -= f * self.binv[r * self.m + c];
                }
            }
        }
        self.pivots_since_refactor += 1;
        if self.pivots_since_refactor >= REFACTOR_EVERY {
            self.refactorize()?;
        }
        Ok(IterOutcome::Step)
    }

    fn point(&self, n_struct: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for j in 0..self.n {
            if self.state[j] != NonbasicState::Basic {
                x[j] = self.nonbasic_value(j);
            }
        }
        for (i, &j) in self.basis.iter().enumerate() {
            x[j] = self.xb[i];
        }
        x.truncate(n_struct);
        x
    }

    /// Runs phase 1 from the current basis, then phase 2 to optimality.
    fn optimize(&mut self) -> Result<LpOutcome, MilpError> {
        let mut iters = 0usize;
        while self.max_infeasibility() > FEAS_TOL {
            iters += 1;
            if iters > MAX_ITERS {
                return Err(MilpError::Numerical("phase-1 iteration limit".into()));
            }
            match self.iterate(true)? {
                IterOutcome::Step => {}
                // No direction decreases the remaining infeasibility.
                IterOutcome::PhaseOptimal => return Ok(LpOutcome::Infeasible),
                IterOutcome::Unbounded => unreachable!("phase 1 reports unbounded as an error"),
            }
        }
        loop {
            iters += 1;
            if iters > MAX_ITERS {
                return Err(MilpError::Numerical("phase-2 iteration limit".into()));
            }
            match self.iterate(false)? {
                IterOutcome::Step => {
                    if self.max_infeasibility() > 1e-6 {
                        // Roundoff pushed a basic value outside its bound; clean up.
                        self.refactorize()?;
                    }
                }
                IterOutcome::PhaseOptimal => return Ok(LpOutcome::Optimal),
                IterOutcome::Unbounded => return Ok(LpOutcome::Unbounded),
            }
        }
    }

    /// Dual objective from the final basis: y b + sum of reduced costs times
    /// resting values of nonbasic columns. Equals the primal objective at an
    /// optimal basis up to roundoff.
    fn dual_objective(&self) -> f64 {
        let mut d = vec![0.0; self.m];
        for (i, &j) in self.basis.iter().enumerate() {
            d[i] = self.cost[j];
        }
        let y = self.btran(&d);
        let mut obj: f64 = y.iter().zip(&self.rhs).map(|(a, b)| a * b).sum();
        for j in 0..self.n {
            if self.state[j] == NonbasicState::Basic {
                continue;
            }
            let r = self.reduced_cost(j, &y, true);
            obj += r * self.nonbasic_value(j);
        }
        obj
    }
}

enum IterOutcome {
    Step,
    PhaseOptimal,
    Unbounded,
}

enum LpOutcome {
    Optimal,
    Infeasible,
    Unbounded,
}

fn identity(m: usize) -> Vec<f64> {
    let mut a = vec![0.0; m * m];
    for i in 0..m {
        a[i * m + i] = 1.0;
    }
    a
}

/// Solves the LP relaxation (integrality ignored) with optional bound
/// tightenings, used both by [`super::solve_lp`] and by branch-and-bound.
pub fn solve_lp_relaxation(
    model: &ParametricMilp,
    overrides: &[(usize, f64, f64)],
) -> Result<MilpResult, MilpError> {
    let start = std::time::Instant::now();
    for v in model.variables() {
        if v.lower > v.upper {
            return Err(MilpError::InvertedBounds(v.id.clone(), v.lower, v.upper));
        }
    }
    for &(j, lo, hi) in overrides {
        let l = model.variables()[j].lower.max(lo);
        let u = model.variables()[j].upper.min(hi);
        if l > u {
            return Ok(infeasible_result(start));
        }
    }

    let mut t = Tableau::build(model, overrides);
    let outcome = t.optimize()?;
    Ok(extract_result(model, &mut t, outcome, start))
}

fn extract_result(
    model: &ParametricMilp,
    t: &mut Tableau,
    outcome: LpOutcome,
    start: std::time::Instant,
) -> MilpResult {
    match outcome {
        LpOutcome::Infeasible => infeasible_result(start),
        LpOutcome::Unbounded => MilpResult {
            status: SolveStatus::Unbounded,
            objective: f64::NEG_INFINITY,
            point: Vec::new(),
            node_count: 0,
            wall_time: start.elapsed().as_secs_f64(),
            incumbent_source: IncumbentSource::BranchAndBound,
            time_limit_hit: false,
            dual_bound: None,
        },
        LpOutcome::Optimal => {
            let point = t.point(model.num_vars());
            let objective = model.objective_value(&point);
            let dual = t.dual_objective();
            MilpResult {
                status: SolveStatus::Optimal,
                objective,
                point,
                node_count: 1,
                wall_time: start.elapsed().as_secs_f64(),
                incumbent_source: IncumbentSource::BranchAndBound,
                time_limit_hit: false,
                dual_bound: Some(dual),
            }
        }
    }
}

/// Solves the LP relaxation for a batch of bound-override sets against one
/// model, reusing the final basis of each solve to warm-start the next. When
/// consecutive sets differ only in a few bounds this avoids re-running phase 1
/// from the all-slack basis and is much faster than independent solves.
pub fn solve_lp_sequence(
    model: &ParametricMilp,
    override_sets: &[Vec<(usize, f64, f64)>],
) -> Result<Vec<MilpResult>, MilpError> {
    for v in model.variables() {
        if v.lower > v.upper {
            return Err(MilpError::InvertedBounds(v.id.clone(), v.lower, v.upper));
        }
    }
    let n_struct = model.num_vars();
    let mut t = Tableau::build(model, &[]);
    let mut results = Vec::with_capacity(override_sets.len());
    for set in override_sets {
        let start = std::time::Instant::now();
        // Reset structural bounds to the model's, then tighten per the set.
        for (j, v) in model.variables().iter().enumerate() {
            t.lower[j] = v.lower;
            t.upper[j] = v.upper;
        }
        let mut conflict = false;
        for &(j, lo, hi) in set {
            t.lower[j] = t.lower[j].max(lo);
            t.upper[j] = t.upper[j].min(hi);
            if t.lower[j] > t.upper[j] {
                conflict = true;
            }
        }
        if conflict {
            results.push(infeasible_result(start));
            continue;
        }
        // Resting states may point at bounds that are no longer finite.
        for j in 0..n_struct {
            t.state[j] = match t.state[j] {
                NonbasicState::Basic => NonbasicState::Basic,
                NonbasicState::AtUpper if t.upper[j].is_finite() => NonbasicState::AtUpper,
                _ if t.lower[j].is_finite() => NonbasicState::AtLower,
                _ if t.upper[j].is_finite() => NonbasicState::AtUpper,
                _ => NonbasicState::AtZero,
            };
        }
        t.degenerate_pivots = 0;
        t.recompute_xb();
        let outcome = t.optimize()?;
        results.push(extract_result(model, &mut t, outcome, start));
    }
    Ok(results)
}

fn infeasible_result(start: std::time::Instant) -> MilpResult {
    MilpResult {
        status: SolveStatus::Infeasible,
        objective: f64::INFINITY,
        point: Vec::new(),
        node_count: 1,
        wall_time: start.elapsed().as_secs_f64(),
        incumbent_source: IncumbentSource::BranchAndBound,
        time_limit_hit: false,
        dual_bound: None,
    }
}
