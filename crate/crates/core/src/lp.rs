//! Finite linear programs and a certified revised simplex solver.
//!
//! Models are `min c'x` subject to sparse rows `a_i x {>=, <=, =} b_i` and
//! bounds `lo <= x <= hi` (`lo` finite, `hi` possibly infinite). The solver
//! is a two-phase bounded-variable revised simplex with an explicit dense
//! basis inverse, Dantzig pricing and a switch to Bland's rule under
//! degeneracy. Models with many more rows than columns are solved by row
//! generation so the basis stays small.
//!
//! Every optimal answer is certified independently of the pivoting: the
//! primal point is re-checked against the model and the row duals are turned
//! into a Lagrangian lower bound on the optimum.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("variable index {index} out of range (model has {vars} variables)")]
    VariableOutOfRange { index: usize, vars: usize },
    #[error("non-finite {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("bad bounds for variable {index}: [{lo}, {hi}]")]
    BadBounds { index: usize, lo: f64, hi: f64 },
    #[error("point has {got} entries, model has {vars} variables")]
    DimensionMismatch { got: usize, vars: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sense {
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Row {
    fn activity(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    fn violation(&self, x: &[f64]) -> f64 {
        let act = self.activity(x);
        match self.sense {
            Sense::Ge => (self.rhs - act).max(0.0),
            Sense::Le => (act - self.rhs).max(0.0),
            Sense::Eq => (act - self.rhs).abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpModel {
    objective: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rows: Vec<Row>,
}

impl LpModel {
    /// `vars` variables with zero cost and bounds `[0, inf)`.
    pub fn new(vars: usize) -> Self {
        Self {
            objective: vec![0.0; vars],
            lower: vec![0.0; vars],
            upper: vec![f64::INFINITY; vars],
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn bounds(&self, j: usize) -> (f64, f64) {
        (self.lower[j], self.upper[j])
    }

    pub fn set_objective(&mut self, j: usize, c: f64) -> &mut Self {
        self.objective[j] = c;
        self
    }

    pub fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) -> &mut Self {
        self.lower[j] = lo;
        self.upper[j] = hi;
        self
    }

    /// Appends a row; duplicate indices are summed, zeros dropped.
    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> usize {
        let mut coeffs = coeffs;
        coeffs.sort_by_key(|&(j, _)| j);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(coeffs.len());
        for (j, a) in coeffs {
            match merged.last_mut() {
                Some(last) if last.0 == j => last.1 += a,
                _ => merged.push((j, a)),
            }
        }
        merged.retain(|&(_, a)| a != 0.0);
        self.rows.push(Row {
            coeffs: merged,
            sense,
            rhs,
        });
        self.rows.len() - 1
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let vars = self.num_vars();
        for (j, &c) in self.objective.iter().enumerate() {
            if !c.is_finite() {
                return Err(LpError::NonFinite {
                    what: "objective coefficient",
                    index: j,
                });
            }
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if !lo.is_finite() || hi.is_nan() || lo > hi {
                return Err(LpError::BadBounds { index: j, lo, hi });
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(LpError::NonFinite {
                    what: "right-hand side",
                    index: i,
                });
            }
            for &(j, a) in &row.coeffs {
                if j >= vars {
                    return Err(LpError::VariableOutOfRange { index: j, vars });
                }
                if !a.is_finite() {
                    return Err(LpError::NonFinite {
                        what: "constraint coefficient",
                        index: i,
                    });
                }
            }
        }
        Ok(())
    }

    /// Model text in the CPLEX LP interchange format. Variables are named
    /// `x<j>` and rows `r<i>`, both in index order.
    pub fn to_lp_format(&self) -> String {
        fn term(out: &mut String, first: &mut bool, a: f64, j: usize) {
            if *first {
                let _ = write!(out, " {a:?} x{j}");
                *first = false;
            } else if a < 0.0 {
                let _ = write!(out, " - {:?} x{j}", -a);
            } else {
                let _ = write!(out, " + {a:?} x{j}");
            }
        }
        let mut out = String::from("\\ ltm-lcip linear program\nMinimize\n obj:");
        let mut first = true;
        for (j, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                term(&mut out, &mut first, c, j);
            }
        }
        if first {
            out.push_str(" 0 x0");
        }
        out.push_str("\nSubject To\n");
        for (i, row) in self.rows.iter().enumerate() {
            let _ = write!(out, " r{i}:");
            let mut first = true;
            for &(j, a) in &row.coeffs {
                term(&mut out, &mut first, a, j);
            }
            if first {
                out.push_str(" 0 x0");
            }
            let op = match row.sense {
                Sense::Ge => ">=",
                Sense::Le => "<=",
                Sense::Eq => "=",
            };
            let _ = writeln!(out, " {op} {:?}", row.rhs);
        }
        out.push_str("Bounds\n");
        for j in 0..self.num_vars() {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if hi.is_infinite() {
                let _ = writeln!(out, " x{j} >= {lo:?}");
            } else {
                let _ = writeln!(out, " {lo:?} <= x{j} <= {hi:?}");
            }
        }
        out.push_str("End\n");
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub feasibility_tol: f64,
    pub optimality_gap: f64,
    pub pivot_tol: f64,
    pub max_iterations: usize,
    /// Recompute the basis inverse from scratch after this many pivots.
    pub refactor_every: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-9,
            optimality_gap: 1e-8,
            pivot_tol: 1e-10,
            max_iterations: 500_000,
            refactor_every: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// Iteration limit or loss of accuracy; the point is not trustworthy.
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Largest row or bound violation of `x`, recomputed from the model.
    pub max_violation: f64,
    /// Row multipliers (`>= 0` on `>=` rows, `<= 0` on `<=` rows).
    pub duals: Vec<f64>,
    /// Lagrangian lower bound on the optimum implied by `duals`.
    pub dual_bound: f64,
    /// `(objective - dual_bound) / max(1, |objective|)`.
    pub gap: f64,
    pub iterations: usize,
    /// Optimal, feasible within tolerance and gap within tolerance.
    pub certified: bool,
    pub diagnostics: String,
}

/// Residual evaluation of `x` against `m`: `(max violation, objective)`.
pub fn check_solution(m: &LpModel, x: &[f64]) -> Result<(f64, f64), LpError> {
    if x.len() != m.num_vars() {
        return Err(LpError::DimensionMismatch {
            got: x.len(),
            vars: m.num_vars(),
        });
    }
    let mut worst = 0.0f64;
    for (j, &v) in x.iter().enumerate() {
        worst = worst.max(m.lower[j] - v).max(v - m.upper[j]);
    }
    for row in &m.rows {
        worst = worst.max(row.violation(x));
    }
    let obj = m.objective.iter().zip(x).map(|(c, v)| c * v).sum();
    Ok((worst, obj))
}

/// Lagrangian bound `b'y + sum_j min_{lo_j <= x_j <= hi_j} (c_j - y'A_j) x_j`
/// with `y` projected onto its sign cone. Where the minimizing bound is
/// infinite, `fallback` supplies the point at which to evaluate the term and
/// the size of that reduced cost is returned as dual infeasibility.
pub fn dual_bound(m: &LpModel, duals: &[f64], fallback: &[f64]) -> (f64, f64) {
    let y: Vec<f64> = m
        .rows
        .iter()
        .zip(duals)
        .map(|(row, &v)| match row.sense {
            Sense::Ge => v.max(0.0),
            Sense::Le => v.min(0.0),
            Sense::Eq => v,
        })
        .collect();
    let mut reduced = m.objective.clone();
    let mut bound = 0.0;
    for (row, &yi) in m.rows.iter().zip(&y) {
        bound += yi * row.rhs;
        for &(j, a) in &row.coeffs {
            reduced[j] -= yi * a;
        }
    }
    let mut dual_infeas = 0.0f64;
    for (j, &d) in reduced.iter().enumerate() {
        if d >= 0.0 {
            bound += d * m.lower[j];
        } else if m.upper[j].is_finite() {
            bound += d * m.upper[j];
        } else {
            bound += d * fallback[j];
            dual_infeas = dual_infeas.max(-d);
        }
    }
    (bound, dual_infeas)
}

/// Models with more rows than this are solved by row generation.
pub const ROW_GENERATION_MIN_ROWS: usize = 256;

pub fn solve(m: &LpModel) -> Result<LpSolution, LpError> {
    solve_with(m, &SolverOptions::default())
}

pub fn solve_with(m: &LpModel, opts: &SolverOptions) -> Result<LpSolution, LpError> {
    m.validate()?;
    let rows = m.num_rows();
    let raw = if rows > ROW_GENERATION_MIN_ROWS {
        solve_by_row_generation(m, opts)
    } else {
        let all: Vec<usize> = (0..rows).collect();
        Simplex::new(m, &all, opts).run()
    };
    Ok(finish(m, raw, opts))
}

struct RawResult {
    status: LpStatus,
    x: Vec<f64>,
    duals: Vec<f64>,
    iterations: usize,
    diagnostics: String,
}

fn finish(m: &LpModel, raw: RawResult, opts: &SolverOptions) -> LpSolution {
    let (max_violation, objective) = check_solution(m, &raw.x).expect("solver keeps dimensions");
    let mut sol = LpSolution {
        status: raw.status,
        x: raw.x,
        objective,
        max_violation,
        duals: raw.duals,
        dual_bound: f64::NEG_INFINITY,
        gap: f64::INFINITY,
        iterations: raw.iterations,
        certified: false,
        diagnostics: raw.diagnostics,
    };
    if sol.status == LpStatus::Optimal {
        let (lb, dual_infeas) = dual_bound(m, &sol.duals, &sol.x);
        sol.dual_bound = lb;
        sol.gap = ((objective - lb) / objective.abs().max(1.0)).max(0.0);
        sol.certified = max_violation <= opts.feasibility_tol
            && sol.gap <= opts.optimality_gap
            && dual_infeas <= opts.feasibility_tol;
        if !sol.certified {
            sol.diagnostics = format!(
                "optimality not certified: violation {max_violation:e}, gap {:e}, dual infeasibility {dual_infeas:e}",
                sol.gap
            );
            sol.status = LpStatus::NumericalFailure;
        }
    }
    sol
}

/// Solves a relaxation over a subset of rows and adds the most violated rows
/// until the relaxed optimum is feasible for the whole model.
fn solve_by_row_generation(m: &LpModel, opts: &SolverOptions) -> RawResult {
    let rows = m.num_rows();
    let n = m.num_vars();
    // Start from an even sample of all rows plus one of the rows violated at
    // the lower-bound corner, each about the size of a basis.
    let corner = m.lower.clone();
    let violated: Vec<usize> = (0..rows)
        .filter(|&i| m.rows[i].violation(&corner) > 0.0)
        .collect();
    let cap = (2 * (n + 8)).min(ROW_GENERATION_MIN_ROWS);
    let mut active: Vec<bool> = (0..rows).map(|i| m.rows[i].sense == Sense::Eq).collect();
    let all: Vec<usize> = (0..rows).collect();
    for pool in [&all, &violated] {
        let stride = (pool.len() / cap).max(1);
        for (pos, &i) in pool.iter().enumerate() {
            if pos % stride == 0 || pos + 1 == pool.len() {
                active[i] = true;
            }
        }
    }
    let batch = cap.clamp(32, 256);
    let mut iterations = 0;
    loop {
        let subset: Vec<usize> = (0..rows).filter(|&i| active[i]).collect();
        let sub = Simplex::new(m, &subset, opts).run();
        iterations += sub.iterations;
        match sub.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible | LpStatus::NumericalFailure => {
                return RawResult { iterations, ..sub };
            }
            LpStatus::Unbounded => {
                // The relaxation can be unbounded while the model is not.
                let all: Vec<usize> = (0..rows).collect();
                let full = Simplex::new(m, &all, opts).run();
                return RawResult {
                    iterations: iterations + full.iterations,
                    ..full
                };
            }
        }
        let mut violated: Vec<(f64, usize)> = (0..rows)
            .filter(|&i| !active[i])
            .map(|i| (m.rows[i].violation(&sub.x), i))
            .filter(|&(v, _)| v > 0.1 * opts.feasibility_tol)
            .collect();
        if violated.is_empty() {
            let mut duals = vec![0.0; rows];
            for (&i, &y) in subset.iter().zip(&sub.duals) {
                duals[i] = y;
            }
            return RawResult {
                status: LpStatus::Optimal,
                x: sub.x,
                duals,
                iterations,
                diagnostics: format!("row generation with {} of {rows} rows", subset.len()),
            };
        }
        violated.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in violated.iter().take(batch) {
            active[i] = true;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic(usize),
    AtLower,
    AtUpper,
}

/// Bounded-variable revised simplex on the shifted model
/// `A x' + S s + R a = b - A lo`, `0 <= x' <= hi - lo`.
struct Simplex<'a> {
    model: &'a LpModel,
    opts: SolverOptions,
    m: usize,
    n_struct: usize,
    // Columns: structurals, then slacks, then artificials.
    cols: Vec<Vec<(usize, f64)>>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    artificial_start: usize,
    rhs: Vec<f64>,
    state: Vec<VarState>,
    value: Vec<f64>,
    basis: Vec<usize>,
    binv: Vec<f64>,
    iterations: usize,
    since_refactor: usize,
}

impl<'a> Simplex<'a> {
    fn new(model: &'a LpModel, subset: &[usize], opts: &SolverOptions) -> Self {
        let m = subset.len();
        let n_struct = model.num_vars();
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_struct];
        let mut upper: Vec<f64> = (0..n_struct)
            .map(|j| model.upper[j] - model.lower[j])
            .collect();
        let mut rhs = Vec::with_capacity(m);
        for (pos, &i) in subset.iter().enumerate() {
            let row = &model.rows[i];
            let mut b = row.rhs;
            for &(j, a) in &row.coeffs {
                cols[j].push((pos, a));
                b -= a * model.lower[j];
            }
            rhs.push(b);
        }

        let mut basis = vec![usize::MAX; m];
        let mut initial = vec![0.0; m];
        for (pos, &i) in subset.iter().enumerate() {
            let sign = match model.rows[i].sense {
                Sense::Le => 1.0,
                Sense::Ge => -1.0,
                Sense::Eq => continue,
            };
            let j = cols.len();
            cols.push(vec![(pos, sign)]);
            upper.push(f64::INFINITY);
            if sign * rhs[pos] >= 0.0 {
                basis[pos] = j;
                initial[pos] = sign * rhs[pos];
            }
        }
        let artificial_start = cols.len();
        for pos in 0..m {
            if basis[pos] == usize::MAX {
                let sign = if rhs[pos] >= 0.0 { 1.0 } else { -1.0 };
                basis[pos] = cols.len();
                cols.push(vec![(pos, sign)]);
                upper.push(f64::INFINITY);
                initial[pos] = rhs[pos].abs();
            }
        }

        let total = cols.len();
        let mut state = vec![VarState::AtLower; total];
        let mut value = vec![0.0; total];
        let mut binv = vec![0.0; m * m];
        for (pos, &j) in basis.iter().enumerate() {
            state[j] = VarState::Basic(pos);
            value[j] = initial[pos];
            // basic columns are +-unit vectors
            binv[pos * m + pos] = 1.0 / cols[j][0].1;
        }
        Self {
            model,
            opts: *opts,
            m,
            n_struct,
            cols,
            upper,
            cost: vec![0.0; total],
            artificial_start,
            rhs,
            state,
            value,
            basis,
            binv,
            iterations: 0,
            since_refactor: 0,
        }
    }

    fn run(mut self) -> RawResult {
        let total = self.cols.len();
        if self.artificial_start < total {
            for j in self.artificial_start..total {
                self.cost[j] = 1.0;
            }
            match self.optimize() {
                Ok(()) => {}
                Err(status) => return self.result(status, "phase 1 failed"),
            }
            let infeas: f64 = (self.artificial_start..total).map(|j| self.value[j]).sum();
            let scale = 1.0 + self.rhs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            if infeas > self.opts.feasibility_tol * scale {
                return self.result(
                    LpStatus::Infeasible,
                    &format!("phase 1 ended with artificial mass {infeas:e}"),
                );
            }
            for j in self.artificial_start..total {
                self.cost[j] = 0.0;
                self.upper[j] = 0.0;
                if !matches!(self.state[j], VarState::Basic(_)) {
                    self.value[j] = 0.0;
                    self.state[j] = VarState::AtLower;
                }
            }
        }
        for j in 0..self.n_struct {
            self.cost[j] = self.model.objective[j];
        }
        match self.optimize() {
            Ok(()) => self.result(LpStatus::Optimal, ""),
            Err(status) => self.result(status, "phase 2 stopped"),
        }
    }

    fn result(mut self, status: LpStatus, note: &str) -> RawResult {
        self.refactor();
        let x: Vec<f64> = (0..self.n_struct)
            .map(|j| {
                let v = self.value[j].clamp(0.0, self.upper[j]);
                self.model.lower[j] + v
            })
            .collect();
        let duals = self.duals();
        RawResult {
            status,
            x,
            duals,
            iterations: self.iterations,
            diagnostics: note.to_string(),
        }
    }

    fn duals(&self) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (pos, &j) in self.basis.iter().enumerate() {
            let c = self.cost[j];
            if c != 0.0 {
                let row = &self.binv[pos * m..(pos + 1) * m];
                for (yi, &b) in y.iter_mut().zip(row) {
                    *yi += c * b;
                }
            }
        }
        y
    }

    fn optimize(&mut self) -> Result<(), LpStatus> {
        let tol = self.opts.feasibility_tol;
        let mut degenerate_run = 0usize;
        let mut bland = false;
        loop {
            if self.iterations >= self.opts.max_iterations {
                return Err(LpStatus::NumericalFailure);
            }
            if self.since_refactor >= self.opts.refactor_every {
                self.refactor();
            }
            let y = self.duals();

            // Pricing.
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..self.cols.len() {
                let st = self.state[j];
                if matches!(st, VarState::Basic(_)) || self.upper[j] <= 0.0 {
                    continue;
                }
                let d = self.cost[j] - self.cols[j].iter().map(|&(i, a)| y[i] * a).sum::<f64>();
                let gain = match st {
                    VarState::AtLower if d < -tol => -d,
                    VarState::AtUpper if d > tol => d,
                    _ => continue,
                };
                if bland {
                    entering = Some((j, gain));
                    break;
                }
                if entering.map_or(true, |(_, g)| gain > g) {
                    entering = Some((j, gain));
                }
            }
            let Some((q, _)) = entering else {
                return Ok(());
            };
            let dir = if self.state[q] == VarState::AtLower { 1.0 } else { -1.0 };

            // alpha = B^-1 a_q
            let m = self.m;
            let mut alpha = vec![0.0; m];
            for &(i, a) in &self.cols[q] {
                for r in 0..m {
                    alpha[r] += self.binv[r * m + i] * a;
                }
            }

            // Ratio test; ties go to the largest pivot, or the lowest index
            // under Bland's rule.
            let mut theta = self.upper[q];
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..m {
                let delta = dir * alpha[r];
                let j = self.basis[r];
                let limit = if delta > self.opts.pivot_tol {
                    self.value[j].max(0.0) / delta
                } else if delta < -self.opts.pivot_tol && self.upper[j].is_finite() {
                    (self.upper[j] - self.value[j]).max(0.0) / -delta
                } else {
                    continue;
                };
                let better = match leave {
                    None => limit < theta,
                    Some((lr, _)) => {
                        if limit < theta - 1e-12 {
                            true
                        } else if limit <= theta + 1e-12 {
                            if bland {
                                j < self.basis[lr]
                            } else {
                                delta.abs() > (dir * alpha[lr]).abs()
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    theta = limit.min(theta);
                    leave = Some((r, limit));
                }
            }
            if theta.is_infinite() {
                return Err(LpStatus::Unbounded);
            }

            self.iterations += 1;
            for r in 0..m {
                let j = self.basis[r];
                self.value[j] -= theta * dir * alpha[r];
            }
            self.value[q] += dir * theta;

            match leave {
                None => {
                    // Bound flip.
                    self.state[q] = if dir > 0.0 {
                        self.value[q] = self.upper[q];
                        VarState::AtUpper
                    } else {
                        self.value[q] = 0.0;
                        VarState::AtLower
                    };
                }
                Some((r, _)) => {
                    let out = self.basis[r];
                    let delta = dir * alpha[r];
                    if delta > 0.0 {
                        self.value[out] = 0.0;
                        self.state[out] = VarState::AtLower;
                    } else {
                        self.value[out] = self.upper[out];
                        self.state[out] = VarState::AtUpper;
                    }
                    self.basis[r] = q;
                    self.state[q] = VarState::Basic(r);
                    self.pivot(r, &alpha);
                }
            }

            if theta < 1e-12 {
                degenerate_run += 1;
                if degenerate_run > 50 {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
                bland = false;
            }
        }
    }

    /// Product-form update of the inverse for pivot row `r`.
    fn pivot(&mut self, r: usize, alpha: &[f64]) {
        let m = self.m;
        let piv = alpha[r];
        for c in 0..m {
            self.binv[r * m + c] /= piv;
        }
        let (before, rest) = self.binv.split_at_mut(r * m);
        let (prow, after) = rest.split_at_mut(m);
        for (i, row) in before.chunks_mut(m).enumerate() {
            let f = alpha[i];
            if f != 0.0 {
                row.iter_mut().zip(prow.iter()).for_each(|(a, &p)| *a -= f * p);
            }
        }
        for (i, row) in after.chunks_mut(m).enumerate() {
            let f = alpha[r + 1 + i];
            if f != 0.0 {
                row.iter_mut().zip(prow.iter()).for_each(|(a, &p)| *a -= f * p);
            }
        }
        self.since_refactor += 1;
    }

    /// Inverts the basis from scratch and recomputes basic values.
    fn refactor(&mut self) {
        let m = self.m;
        self.since_refactor = 0;
        if m == 0 {
            return;
        }
        // Gauss-Jordan on [B | I] with partial pivoting.
        let mut a = vec![0.0; m * m];
        for (pos, &j) in self.basis.iter().enumerate() {
            for &(i, v) in &self.cols[j] {
                a[i * m + pos] = v;
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for c in 0..m {
            let p = (c..m)
                .max_by(|&x, &y| a[x * m + c].abs().total_cmp(&a[y * m + c].abs()))
                .unwrap();
            if a[p * m + c].abs() < 1e-14 {
                // Singular basis: keep the updated inverse.
                return;
            }
            if p != c {
                for k in 0..m {
                    a.swap(p * m + k, c * m + k);
                    inv.swap(p * m + k, c * m + k);
                }
            }
            let d = a[c * m + c];
            for k in 0..m {
                a[c * m + k] /= d;
                inv[c * m + k] /= d;
            }
            for i in 0..m {
                if i != c {
                    let f = a[i * m + c];
                    if f != 0.0 {
                        for k in 0..m {
                            a[i * m + k] -= f * a[c * m + k];
                            inv[i * m + k] -= f * inv[c * m + k];
                        }
                    }
                }
            }
        }
        self.binv = inv;

        // x_B = B^-1 (b - N x_N)
        let mut resid = self.rhs.clone();
        for (j, col) in self.cols.iter().enumerate() {
            if matches!(self.state[j], VarState::Basic(_)) {
                continue;
            }
            let v = self.value[j];
            if v != 0.0 {
                for &(i, a) in col {
                    resid[i] -= a * v;
                }
            }
        }
        for r in 0..m {
            let row = &self.binv[r * m..(r + 1) * m];
            let v: f64 = row.iter().zip(&resid).map(|(b, x)| b * x).sum();
            self.value[self.basis[r]] = v;
        }
    }
}
