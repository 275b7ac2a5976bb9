//! Least-cost statistical interventions via a discretized linear program.
//!
//! With `a_w(eta, z)` the per-unit gain in the link map, the continuum
//! constraint `phi_{p(xi)}(z) - z > 0` on `[0, 1 - alpha_eps]` is imposed on
//! the grid `z_i = (1 - alpha_eps) i / N` with margin `Delta`:
//!
//! ```text
//! min  sum c_w(eta) x_{w,eta}
//! s.t. sum a_w(eta, z_i) x_{w,eta} >= z_i + Delta - phi_{p0}(z_i),  i = 0..=N
//!      sum_{eta >= 1} x_{w,eta} <= p_w,                             every w
//!      x >= 0
//! ```
//!
//! `xi_w(0)` is the leftover budget. Solutions are audited on a finer grid
//! with an independent evaluation of the link map.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::lp::{self, LpError, LpModel, LpStatus, Sense, SolverOptions};
use crate::meanfield::{self, derivative_bound, phi_kr, MeanFieldCurve, MeanFieldError};
use crate::typestats::{
    intervention_cost, moments, nu, post_statistics, Moment, StatIntervention, Statistics,
    TypeStatsError,
};

/// Grid coefficients below this are dropped from the LP rows.
pub const COEFF_FLOOR: f64 = 1e-16;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("eps must lie in (0, 1], got {0}")]
    BadEpsilon(f64),
    #[error("grid size N must be at least 1")]
    BadGridSize,
    #[error("margin Delta must be positive and finite, got {0}")]
    BadDelta(f64),
    #[error(
        "some agents have in-degree 0, so alpha_eps = 0 and the grid reaches z = 1 where \
         phi(1) <= 1 < 1 + Delta; drop those agents or pass the exclude-top option to stop the grid below z = 1"
    )]
    ZeroMinInDegree,
    #[error("LP infeasible; binding grid points z = {binding:?} ({detail})")]
    Infeasible { binding: Vec<f64>, detail: String },
    #[error("LP solver failed: {0}")]
    Solver(String),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    MeanField(#[from] MeanFieldError),
    #[error(transparent)]
    Stats(#[from] TypeStatsError),
}

pub type Result<T> = std::result::Result<T, PlannerError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum DeltaPolicy {
    /// `Delta = Delta_N`.
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlannerConfig {
    pub eps: f64,
    pub grid_n: usize,
    pub delta: DeltaPolicy,
    /// Fine audit grid size; `None` means `10 N`.
    pub audit_m: Option<usize>,
    /// Allow zero in-degree types by dropping the top grid point.
    pub exclude_top: bool,
    /// Only full seeding columns (`eta = r_w`).
    pub seeding_only: bool,
    #[serde(skip)]
    pub solver: SolverOptions,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            eps: 0.1,
            grid_n: 100,
            delta: DeltaPolicy::Value(0.05),
            audit_m: None,
            exclude_top: false,
            seeding_only: false,
            solver: SolverOptions::default(),
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return Err(PlannerError::BadEpsilon(self.eps));
        }
        if self.grid_n == 0 {
            return Err(PlannerError::BadGridSize);
        }
        if let DeltaPolicy::Value(d) = self.delta {
            if !(d > 0.0 && d.is_finite()) {
                return Err(PlannerError::BadDelta(d));
            }
        }
        Ok(())
    }

    pub fn audit_grid(&self) -> usize {
        self.audit_m.unwrap_or(10 * self.grid_n).max(1)
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps <= 1.0 {
        Ok(())
    } else {
        Err(PlannerError::BadEpsilon(eps))
    }
}

fn mean_in_degree(p0: &Statistics) -> Result<f64> {
    let md = moments(p0, Moment::D);
    if md > 0.0 {
        Ok(md)
    } else {
        Err(MeanFieldError::ZeroMeanInDegree.into())
    }
}

/// `alpha_eps = eps d_min / <p0, d>`, `d_min` over types with positive mass.
pub fn alpha_eps(p0: &Statistics, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    let md = mean_in_degree(p0)?;
    let d_min = p0.support().map(|(t, _)| t.d).min().unwrap_or(0);
    if d_min == 0 {
        return Err(PlannerError::ZeroMinInDegree);
    }
    Ok((eps * d_min as f64 / md).clamp(0.0, 1.0))
}

/// `Delta_N = (1 - alpha_eps) / (2N) * derivative_bound(p0)`.
pub fn delta_n(p0: &Statistics, eps: f64, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(PlannerError::BadGridSize);
    }
    let alpha = alpha_eps(p0, eps)?;
    Ok(delta_n_with_alpha(p0, alpha, n))
}

fn delta_n_with_alpha(p0: &Statistics, alpha: f64, n: usize) -> f64 {
    (1.0 - alpha) / (2.0 * n as f64) * derivative_bound(p0)
}

/// `(alpha, Delta_N)` under the config, honouring `exclude_top`.
fn domain(p0: &Statistics, cfg: &PlannerConfig) -> Result<(f64, f64)> {
    let alpha = match alpha_eps(p0, cfg.eps) {
        Ok(a) => a,
        Err(PlannerError::ZeroMinInDegree) if cfg.exclude_top => 0.0,
        Err(e) => return Err(e),
    };
    Ok((alpha, delta_n_with_alpha(p0, alpha, cfg.grid_n)))
}

/// Grid points `(1 - alpha) i / N`, without the top point when
/// `exclude_top` is set.
pub fn grid_points(alpha: f64, n: usize, exclude_top: bool) -> Vec<f64> {
    let last = if exclude_top { n - 1 } else { n };
    (0..=last).map(|i| (1.0 - alpha) * i as f64 / n as f64).collect()
}

/// Assembled LP with the meaning of its columns and rows.
#[derive(Debug, Clone)]
pub struct PlanLp {
    pub model: LpModel,
    /// `(index of w in p0, eta)` for each column.
    pub columns: Vec<(usize, u32)>,
    pub grid: Vec<f64>,
    /// `phi_{p0}(z_i)` for each grid row.
    pub base_phi: Vec<f64>,
    /// Budget row of each type index, where the type has columns.
    pub budget_rows: Vec<(usize, usize)>,
    pub alpha: f64,
    pub delta: f64,
    pub delta_n: f64,
    /// Columns dropped because they cannot help any grid row.
    pub pruned: usize,
}

/// Builds the grid LP; rows `0..grid.len()` are grid rows, then budgets.
pub fn build_lp(p0: &Statistics, cfg: &PlannerConfig) -> Result<PlanLp> {
    cfg.validate()?;
    let md = mean_in_degree(p0)?;
    let (alpha, dn) = domain(p0, cfg)?;
    let delta = match cfg.delta {
        DeltaPolicy::Auto => dn,
        DeltaPolicy::Value(d) => d,
    };
    let grid = grid_points(alpha, cfg.grid_n, cfg.exclude_top);
    let curve = MeanFieldCurve::new(p0);

    // Tails phi_{k, r'}(z_i) for every needed (k, r'), per grid point.
    let mut needed: HashMap<u32, u32> = HashMap::new();
    for (t, _) in p0.support() {
        let e = needed.entry(t.k).or_insert(0);
        *e = (*e).max(t.r);
    }
    let tails: Vec<HashMap<(u32, u32), f64>> = grid
        .par_iter()
        .map(|&z| {
            let mut m = HashMap::new();
            for (&k, &rmax) in &needed {
                for r in 0..=rmax {
                    m.insert((k, r), phi_kr(k as u64, r as u64, z).expect("r <= k"));
                }
            }
            m
        })
        .collect();
    let base_phi = grid
        .iter()
        .map(|&z| curve.phi(z))
        .collect::<meanfield::Result<Vec<_>>>()?;

    let mut columns = Vec::new();
    let mut col_entries: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut pruned = 0;
    for (w, (t, p)) in p0.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        let etas: Vec<u32> = if cfg.seeding_only {
            if t.r > 0 {
                vec![t.r]
            } else {
                vec![]
            }
        } else {
            (1..=t.r).collect()
        };
        for eta in etas {
            let entries: Vec<(usize, f64)> = tails
                .iter()
                .enumerate()
                .map(|(i, tl)| {
                    let gain = tl[&(t.k, t.r - eta)] - tl[&(t.k, t.r)];
                    (i, (t.d as f64 * gain / md).max(0.0))
                })
                .filter(|&(_, a)| a > COEFF_FLOOR)
                .collect();
            if entries.is_empty() && t.cost.get(eta as usize) > 0.0 {
                pruned += 1;
                continue;
            }
            columns.push((w, eta));
            col_entries.push(entries);
        }
    }

    let mut model = LpModel::new(columns.len());
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); grid.len()];
    for (j, entries) in col_entries.into_iter().enumerate() {
        let (w, eta) = columns[j];
        let t = &p0.types()[w];
        let p = p0.masses()[w];
        model.set_objective(j, t.cost.get(eta as usize));
        model.set_bounds(j, 0.0, p);
        for (i, a) in entries {
            rows[i].push((j, a));
        }
    }
    for (i, coeffs) in rows.into_iter().enumerate() {
        model.add_row(coeffs, Sense::Ge, grid[i] + delta - base_phi[i]);
    }
    let mut budget_rows = Vec::new();
    let mut j = 0;
    while j < columns.len() {
        let w = columns[j].0;
        let start = j;
        while j < columns.len() && columns[j].0 == w {
            j += 1;
        }
        if j - start > 1 {
            let coeffs = (start..j).map(|c| (c, 1.0)).collect();
            budget_rows.push((w, model.add_row(coeffs, Sense::Le, p0.masses()[w])));
        }
        // A single column is already capped by its bound.
    }

    Ok(PlanLp {
        model,
        columns,
        grid,
        base_phi,
        budget_rows,
        alpha,
        delta,
        delta_n: dn,
        pruned,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `Delta >= Delta_N`: grid feasibility implies continuum feasibility.
    Guarantee,
    /// `Delta < Delta_N`: feasibility is only checked empirically.
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Audit {
    /// Largest LP residual of the solution (row or bound).
    pub lp_violation: f64,
    /// `min_i phi_{p(xi)}(z_i) - z_i` over the LP grid.
    pub grid_margin: f64,
    /// `min phi_{p(xi)}(z) - z` over `M + 1` points of `[0, top]`.
    pub relaxed_margin: f64,
    pub relaxed_argmin: f64,
    /// Upper end of the relaxed audit interval.
    pub relaxed_top: f64,
    /// `psi_{p(xi)}^{-1}(1 - eps)`.
    pub zmax: f64,
    /// `min phi_{p(xi)}(z) - z` over `M + 1` points of `[0, zmax]`.
    pub original_margin: f64,
    /// Largest gap between the decomposed and the direct link map.
    pub decomposition_discrepancy: f64,
    pub fine_points: usize,
}

impl Audit {
    pub fn passes(&self) -> bool {
        self.relaxed_margin > 0.0 && self.original_margin > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpReport {
    pub status: LpStatus,
    pub iterations: usize,
    pub objective: f64,
    pub dual_bound: f64,
    pub gap: f64,
    pub variables: usize,
    pub rows: usize,
    pub pruned_columns: usize,
    pub diagnostics: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub mean_d: f64,
    pub second_moment_d: f64,
    pub second_moment_k: f64,
    pub cross_moment_dk: f64,
    pub nu: f64,
    pub derivative_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub config: PlannerConfig,
    pub xi: StatIntervention,
    pub cost: f64,
    pub alpha_eps: f64,
    pub delta_used: f64,
    pub delta_n: f64,
    pub regime: Regime,
    pub audit: Audit,
    pub lp: LpReport,
    pub diagnostics: Diagnostics,
}

/// Builds and solves the LP, reconstructs `xi` and audits it.
pub fn plan(p0: &Statistics, cfg: &PlannerConfig) -> Result<PlanResult> {
    let built = build_lp(p0, cfg)?;
    let sol = lp::solve_with(&built.model, &cfg.solver)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => return Err(infeasibility_report(p0, &built)),
        LpStatus::Unbounded | LpStatus::NumericalFailure => {
            return Err(PlannerError::Solver(format!(
                "{:?}: {}",
                sol.status, sol.diagnostics
            )))
        }
    }

    let xi = reconstruct(p0, &built, &sol.x)?;
    let cost = intervention_cost(&xi);

    // Grid residuals straight from the model.
    let (lp_violation, _) = lp::check_solution(&built.model, &sol.x)?;
    let grid_margin = built
        .model
        .rows()
        .iter()
        .take(built.grid.len())
        .zip(&built.grid)
        .zip(&built.base_phi)
        .map(|((row, &z), &b)| {
            let act: f64 = row.coeffs.iter().map(|&(j, a)| a * sol.x[j]).sum();
            b + act - z
        })
        .fold(f64::INFINITY, f64::min);

    let top = *built.grid.last().expect("grid has a point");
    let mut audit = audit_xi(p0, &xi, cfg.eps, cfg.audit_grid(), top)?;
    audit.lp_violation = lp_violation;
    audit.grid_margin = grid_margin;

    let regime = if built.delta >= built.delta_n {
        Regime::Guarantee
    } else {
        Regime::Empirical
    };
    Ok(PlanResult {
        config: cfg.clone(),
        xi,
        cost,
        alpha_eps: built.alpha,
        delta_used: built.delta,
        delta_n: built.delta_n,
        regime,
        audit,
        lp: LpReport {
            status: sol.status,
            iterations: sol.iterations,
            objective: sol.objective,
            dual_bound: sol.dual_bound,
            gap: sol.gap,
            variables: built.model.num_vars(),
            rows: built.model.num_rows(),
            pruned_columns: built.pruned,
            diagnostics: sol.diagnostics,
        },
        diagnostics: diagnostics(p0),
    })
}

pub fn diagnostics(p: &Statistics) -> Diagnostics {
    Diagnostics {
        mean_d: moments(p, Moment::D),
        second_moment_d: moments(p, Moment::D2),
        second_moment_k: moments(p, Moment::K2),
        cross_moment_dk: moments(p, Moment::DK),
        nu: nu(p),
        derivative_bound: derivative_bound(p),
    }
}

/// Turns LP values into `xi`, clipping solver noise so that every type's
/// reductions fit in its mass.
fn reconstruct(p0: &Statistics, built: &PlanLp, x: &[f64]) -> Result<StatIntervention> {
    let mut per_type: HashMap<usize, Vec<(u32, f64)>> = HashMap::new();
    for (&(w, eta), &v) in built.columns.iter().zip(x) {
        if v > 0.0 {
            per_type.entry(w).or_default().push((eta, v));
        }
    }
    let mut reductions = Vec::new();
    let mut ws: Vec<_> = per_type.into_iter().collect();
    ws.sort_by_key(|(w, _)| *w);
    for (w, entries) in ws {
        let p = p0.masses()[w];
        let used: f64 = entries.iter().map(|e| e.1).sum();
        let scale = if used > p { p / used } else { 1.0 };
        for (eta, v) in entries {
            reductions.push((w, eta, v * scale));
        }
    }
    Ok(StatIntervention::from_reductions(p0, &reductions)?)
}

/// Grid points at which even the best use of every budget cannot reach the
/// row's right-hand side; if none, the points closest to failing.
fn infeasibility_report(p0: &Statistics, built: &PlanLp) -> PlannerError {
    let mut best = vec![0.0; built.grid.len()];
    let mut per_type: HashMap<usize, Vec<f64>> = HashMap::new();
    for (i, row) in built.model.rows().iter().take(built.grid.len()).enumerate() {
        per_type.clear();
        for &(j, a) in &row.coeffs {
            let w = built.columns[j].0;
            per_type.entry(w).or_default().push(a);
        }
        best[i] = per_type
            .iter()
            .map(|(&w, coeffs)| p0.masses()[w] * coeffs.iter().cloned().fold(0.0, f64::max))
            .sum::<f64>()
            - row.rhs;
    }
    let hopeless: Vec<f64> = best
        .iter()
        .zip(&built.grid)
        .filter(|(&s, _)| s < 0.0)
        .map(|(_, &z)| z)
        .collect();
    if !hopeless.is_empty() {
        return PlannerError::Infeasible {
            binding: hopeless,
            detail: "no use of the budgets lifts phi above z + Delta there".into(),
        };
    }
    let mut order: Vec<usize> = (0..best.len()).collect();
    order.sort_by(|&a, &b| best[a].total_cmp(&best[b]));
    PlannerError::Infeasible {
        binding: order.iter().take(3).map(|&i| built.grid[i]).collect(),
        detail: "rows are individually satisfiable but not jointly".into(),
    }
}

/// Margins of `xi` on `[0, top]` (relaxed) and `[0, psi^{-1}(1 - eps)]`
/// (original), each on `m + 1` equally spaced points. `grid_margin` and
/// `lp_violation` are left at zero.
pub fn audit_xi(
    p0: &Statistics,
    xi: &StatIntervention,
    eps: f64,
    m: usize,
    top: f64,
) -> Result<Audit> {
    check_eps(eps)?;
    let m = m.max(1);
    let post = post_statistics(p0, xi, false)?;
    let direct = MeanFieldCurve::new(&post);
    let base = MeanFieldCurve::new(p0);
    let md0 = base.mean_in_degree();
    let active: Vec<_> = xi
        .iter()
        .flat_map(|(t, row)| {
            row.iter()
                .enumerate()
                .skip(1)
                .filter(|(_, &v)| v > 0.0)
                .map(move |(e, &v)| (t, e as u32, v))
        })
        .collect();
    let decomposed = |z: f64| -> Result<f64> {
        let mut s = base.phi(z)?;
        for &(t, eta, v) in &active {
            s += meanfield::coeff_a(t, eta, z, md0)? * v;
        }
        Ok(s)
    };

    let relaxed: Vec<(f64, f64, f64)> = (0..=m)
        .into_par_iter()
        .map(|i| {
            let z = top * i as f64 / m as f64;
            Ok((z, decomposed(z)?, direct.phi(z)?))
        })
        .collect::<Result<_>>()?;
    let mut relaxed_margin = f64::INFINITY;
    let mut relaxed_argmin = 0.0;
    let mut discrepancy = 0.0f64;
    for &(z, dec, dir) in &relaxed {
        discrepancy = discrepancy.max((dec - dir).abs());
        if dec - z < relaxed_margin {
            relaxed_margin = dec - z;
            relaxed_argmin = z;
        }
    }

    let (zmax, original_margin) = original_margin(&direct, eps, m)?;
    Ok(Audit {
        lp_violation: 0.0,
        grid_margin: 0.0,
        relaxed_margin,
        relaxed_argmin,
        relaxed_top: top,
        zmax,
        original_margin,
        decomposition_discrepancy: discrepancy,
        fine_points: m + 1,
    })
}

fn original_margin(post: &MeanFieldCurve, eps: f64, m: usize) -> Result<(f64, f64)> {
    let zmax = post.psi_inverse(1.0 - eps)?;
    let margin = (0..=m)
        .into_par_iter()
        .map(|i| {
            let z = zmax * i as f64 / m as f64;
            Ok(post.phi(z)? - z)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    Ok((zmax, margin))
}

/// `(zmax, min phi_{p(xi)}(z) - z)` over `m + 1` points of `[0, zmax]`.
pub fn audit_original(
    p0: &Statistics,
    xi: &StatIntervention,
    eps: f64,
    m: usize,
) -> Result<(f64, f64)> {
    check_eps(eps)?;
    let post = post_statistics(p0, xi, false)?;
    original_margin(&MeanFieldCurve::new(&post), eps, m.max(1))
}
