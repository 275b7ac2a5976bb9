//! Python bindings: statistics, mean-field maps, planning, validation and
//! the LP solver. Documents cross the boundary as JSON-compatible dicts.

use std::path::Path;

use ltm_lcip::io::{self, EdgeListOptions, PlanDocument, SelfLoopPolicy};
use ltm_lcip::lp::{self, LpModel, Sense};
use ltm_lcip::meanfield;
use ltm_lcip::planner::{self, DeltaPolicy, PlannerConfig};
use ltm_lcip::sampler;
use ltm_lcip::typestats::{extract_statistics, nu, AgentType, CostRule, StatRecord, ThresholdRule};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: for<'de> serde::Deserialize<'de>>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(err)
}

/// Type statistics of a population.
#[pyclass(name = "Statistics", module = "ltm_lcip_py", skip_from_py_object)]
#[derive(Clone)]
struct PyStatistics {
    inner: ltm_lcip::Statistics,
    edges: Option<usize>,
}

#[pymethods]
impl PyStatistics {
    /// Reads an edge list and extracts type statistics.
    #[staticmethod]
    #[pyo3(signature = (path, undirected=false, threshold_rule="half-out-degree", cost_rule="linear", seed=0, drop_self_loops=false))]
    fn from_edge_list(
        path: &str,
        undirected: bool,
        threshold_rule: &str,
        cost_rule: &str,
        seed: u64,
        drop_self_loops: bool,
    ) -> PyResult<Self> {
        let el = io::read_edge_list(
            Path::new(path),
            EdgeListOptions {
                undirected,
                self_loops: if drop_self_loops {
                    SelfLoopPolicy::Drop
                } else {
                    SelfLoopPolicy::Reject
                },
            },
        )
        .map_err(err)?;
        let rule = match threshold_rule {
            "half-out-degree" => ThresholdRule::HalfOutDegree,
            "uniform-random" => ThresholdRule::UniformRandom { seed },
            other => return Err(err(format!("unknown threshold rule {other:?}"))),
        };
        let cost = match cost_rule {
            "linear" => CostRule::Linear,
            "seeding" => CostRule::Seeding,
            "unit-seeding" => CostRule::UnitSeeding,
            other => return Err(err(format!("unknown cost rule {other:?}"))),
        };
        let (rho, _) = rule.thresholds(&el.graph, false).map_err(err)?;
        let (inner, _) = extract_statistics(&el.graph, &rho, &cost).map_err(err)?;
        Ok(Self {
            inner,
            edges: Some(el.graph.edge_count()),
        })
    }

    /// From `[{"d", "k", "r", "cost", "mass"}, ...]`.
    #[staticmethod]
    fn from_records(records: &Bound<'_, PyAny>) -> PyResult<Self> {
        let recs: Vec<StatRecord> = from_py(records)?;
        Ok(Self {
            inner: ltm_lcip::Statistics::from_records(&recs).map_err(err)?,
            edges: None,
        })
    }

    /// From `[(d, k, r, count), ...]` with linear cost.
    #[staticmethod]
    fn from_counts(entries: Vec<(u32, u32, u32, u64)>) -> PyResult<Self> {
        let typed = entries
            .into_iter()
            .map(|(d, k, r, c)| {
                let table = CostRule::Linear.table(d, k, r)?;
                Ok((AgentType::new(d, k, r, table.values().to_vec())?, c))
            })
            .collect::<Result<Vec<_>, ltm_lcip::typestats::TypeStatsError>>()
            .map_err(err)?;
        Ok(Self {
            inner: ltm_lcip::Statistics::from_counts(typed).map_err(err)?,
            edges: None,
        })
    }

    fn records<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.to_records())
    }

    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &io::summarize(&self.inner, self.edges))
    }

    fn psi(&self, z: f64) -> PyResult<f64> {
        meanfield::psi(&self.inner, z).map_err(err)
    }

    fn phi(&self, z: f64) -> PyResult<f64> {
        meanfield::phi(&self.inner, z).map_err(err)
    }

    fn nu(&self) -> f64 {
        nu(&self.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// `P[Bin(k, z) >= r]`.
#[pyfunction]
fn phi_kr(k: u64, r: u64, z: f64) -> PyResult<f64> {
    meanfield::phi_kr(k, r, z).map_err(err)
}

/// Solves the discretized program; returns the plan document.
#[pyfunction]
#[pyo3(signature = (stats, eps=0.1, grid_n=100, delta=Some(0.05), seeding_only=false, exclude_top=false))]
fn plan<'py>(
    py: Python<'py>,
    stats: &PyStatistics,
    eps: f64,
    grid_n: usize,
    delta: Option<f64>,
    seeding_only: bool,
    exclude_top: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = PlannerConfig {
        eps,
        grid_n,
        delta: delta.map_or(DeltaPolicy::Auto, DeltaPolicy::Value),
        seeding_only,
        exclude_top,
        ..Default::default()
    };
    let res = py.detach(|| planner::plan(&stats.inner, &cfg)).map_err(err)?;
    let config = serde_json::to_value(&cfg).map_err(err)?;
    to_py(py, &PlanDocument::new(&res, config))
}

/// Samples networks from the planned statistics and runs the dynamics.
#[pyfunction]
#[pyo3(signature = (stats, plan, n, replicates, seed=0))]
fn monte_carlo<'py>(
    py: Python<'py>,
    stats: &PyStatistics,
    plan: &Bound<'py, PyAny>,
    n: u64,
    replicates: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let doc: PlanDocument = from_py(plan)?;
    let xi = doc.intervention().map_err(err)?;
    let rep = py
        .detach(|| sampler::monte_carlo_validate(&stats.inner, &xi, n, replicates, doc.eps, seed))
        .map_err(err)?;
    to_py(py, &rep)
}

/// `min c'x` s.t. rows `(coeffs, sense, rhs)` with sense in `>=`, `<=`,
/// `=`, and bounds `(lo, hi)` per variable (`hi` may be `inf`).
#[pyfunction]
#[pyo3(signature = (c, rows, bounds=None))]
fn solve_lp<'py>(
    py: Python<'py>,
    c: Vec<f64>,
    rows: Vec<(Vec<(usize, f64)>, String, f64)>,
    bounds: Option<Vec<(f64, f64)>>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut m = LpModel::new(c.len());
    for (j, &cj) in c.iter().enumerate() {
        m.set_objective(j, cj);
    }
    if let Some(b) = bounds {
        if b.len() != c.len() {
            return Err(err("bounds must match the number of variables"));
        }
        for (j, (lo, hi)) in b.into_iter().enumerate() {
            m.set_bounds(j, lo, hi);
        }
    }
    for (coeffs, sense, rhs) in rows {
        let sense = match sense.as_str() {
            ">=" => Sense::Ge,
            "<=" => Sense::Le,
            "=" | "==" => Sense::Eq,
            other => return Err(err(format!("unknown sense {other:?}"))),
        };
        m.add_row(coeffs, sense, rhs);
    }
    let sol = lp::solve(&m).map_err(err)?;
    let out = serde_json::json!({
        "status": sol.status,
        "x": sol.x,
        "objective": sol.objective,
        "max_violation": sol.max_violation,
        "duals": sol.duals,
        "gap": sol.gap,
        "certified": sol.certified,
    });
    to_py(py, &out)
}

#[pymodule]
fn ltm_lcip_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyStatistics>()?;
    m.add_function(wrap_pyfunction!(phi_kr, m)?)?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo, m)?)?;
    m.add_function(wrap_pyfunction!(solve_lp, m)?)?;
    Ok(())
}
