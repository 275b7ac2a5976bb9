//! Directed multigraphs and the synchronous linear threshold dynamics.
//!
//! Node `i` observes node `j` through every edge `i -> j`; the number of
//! active observed neighbours is `sum_j A_ij x_j`, counted with edge
//! multiplicity. Edges are stored grouped by tail (CSR) so one update is a
//! single pass over the edge array.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    Empty,
    #[error("edge {index} ({tail} -> {head}) references a node outside 0..{n}")]
    NodeOutOfRange {
        index: usize,
        tail: usize,
        head: usize,
        n: usize,
    },
    #[error("edge {index} is a self-loop on node {node}")]
    SelfLoop { index: usize, node: usize },
    #[error("{what} has length {got}, graph has {n} nodes")]
    DimensionMismatch {
        what: &'static str,
        got: usize,
        n: usize,
    },
    #[error("threshold {threshold} of node {node} exceeds its out-degree {out_degree}")]
    ThresholdAboveOutDegree {
        node: usize,
        threshold: u32,
        out_degree: u32,
    },
    #[error("infeasible intervention: h[{node}] = {reduction} exceeds threshold {threshold}")]
    InfeasibleIntervention {
        node: usize,
        reduction: u32,
        threshold: u32,
    },
    #[error("eps must lie in (0, 1], got {0}")]
    BadEpsilon(f64),
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Finite directed multigraph without self-loops. Parallel edges allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiGraph {
    n: usize,
    tails: Vec<u32>,
    heads: Vec<u32>,
    // CSR by tail: heads of the edges leaving node i are
    // targets[offsets[i]..offsets[i + 1]].
    offsets: Vec<usize>,
    targets: Vec<u32>,
    out_degree: Vec<u32>,
    in_degree: Vec<u32>,
}

impl MultiGraph {
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let mut tails = Vec::with_capacity(edges.len());
        let mut heads = Vec::with_capacity(edges.len());
        let mut out_degree = vec![0u32; n];
        let mut in_degree = vec![0u32; n];
        for (index, &(tail, head)) in edges.iter().enumerate() {
            if tail >= n || head >= n {
                return Err(GraphError::NodeOutOfRange {
                    index,
                    tail,
                    head,
                    n,
                });
            }
            if tail == head {
                return Err(GraphError::SelfLoop { index, node: tail });
            }
            tails.push(tail as u32);
            heads.push(head as u32);
            out_degree[tail] += 1;
            in_degree[head] += 1;
        }

        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0usize);
        for &k in &out_degree {
            offsets.push(offsets.last().unwrap() + k as usize);
        }
        let mut cursor = offsets[..n].to_vec();
        let mut targets = vec![0u32; edges.len()];
        for (&t, &h) in tails.iter().zip(&heads) {
            targets[cursor[t as usize]] = h;
            cursor[t as usize] += 1;
        }

        Ok(Self {
            n,
            tails,
            heads,
            offsets,
            targets,
            out_degree,
            in_degree,
        })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.tails.len()
    }

    /// Edges as `(tail, head)` in insertion order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.tails
            .iter()
            .zip(&self.heads)
            .map(|(&t, &h)| (t as usize, h as usize))
    }

    /// kappa = A 1
    pub fn out_degrees(&self) -> &[u32] {
        &self.out_degree
    }

    /// delta = A' 1
    pub fn in_degrees(&self) -> &[u32] {
        &self.in_degree
    }

    /// Heads of the edges leaving `node`, one entry per parallel edge.
    pub fn successors(&self, node: usize) -> &[u32] {
        &self.targets[self.offsets[node]..self.offsets[node + 1]]
    }

    /// Number of edges `i -> j` (the adjacency entry `A_ij`).
    pub fn multiplicity(&self, i: usize, j: usize) -> usize {
        self.successors(i).iter().filter(|&&h| h as usize == j).count()
    }

    fn check_len(&self, what: &'static str, got: usize) -> Result<()> {
        if got != self.n {
            return Err(GraphError::DimensionMismatch {
                what,
                got,
                n: self.n,
            });
        }
        Ok(())
    }
}

/// Per-node thresholds `rho_i` in `0..=kappa_i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThresholdVector(Vec<u32>);

impl ThresholdVector {
    /// Validates `rho_i <= kappa_i` against `g`.
    pub fn new(g: &MultiGraph, rho: Vec<u32>) -> Result<Self> {
        g.check_len("threshold vector", rho.len())?;
        for (node, (&r, &k)) in rho.iter().zip(g.out_degrees()).enumerate() {
            if r > k {
                return Err(GraphError::ThresholdAboveOutDegree {
                    node,
                    threshold: r,
                    out_degree: k,
                });
            }
        }
        Ok(Self(rho))
    }

    /// Clamps every entry into `0..=kappa_i`; returns the vector and how
    /// many entries were clamped.
    pub fn clamped(g: &MultiGraph, mut rho: Vec<u32>) -> Result<(Self, usize)> {
        g.check_len("threshold vector", rho.len())?;
        let mut clamped = 0;
        for (r, &k) in rho.iter_mut().zip(g.out_degrees()) {
            if *r > k {
                *r = k;
                clamped += 1;
            }
        }
        Ok((Self(rho), clamped))
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Builds without checking against a graph.
    #[cfg(test)]
    pub(crate) fn from_raw(rho: Vec<u32>) -> Self {
        Self(rho)
    }
}

/// Binary state `x_i` for every node.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StateVector(Vec<bool>);

impl StateVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![false; n])
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![true; n])
    }

    pub fn from_bits(bits: &[u8]) -> Self {
        Self(bits.iter().map(|&b| b != 0).collect())
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count_active(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Entry-wise `self <= other`.
    pub fn le(&self, other: &StateVector) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(&a, &b)| !a || b)
    }

    pub fn to_bits(&self) -> Vec<u8> {
        self.0.iter().map(|&b| b as u8).collect()
    }
}

impl From<Vec<bool>> for StateVector {
    fn from(v: Vec<bool>) -> Self {
        Self(v)
    }
}

/// Per-node threshold reductions `h_i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterventionVector(Vec<u32>);

impl InterventionVector {
    pub fn new(h: Vec<u32>) -> Self {
        Self(h)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0; n])
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of nodes with `h_i > 0`.
    pub fn support(&self) -> usize {
        self.0.iter().filter(|&&h| h > 0).count()
    }
}

/// One synchronous update `Phi_rho(x)`.
pub fn ltm_step(g: &MultiGraph, rho: &ThresholdVector, x: &StateVector) -> Result<StateVector> {
    g.check_len("threshold vector", rho.len())?;
    g.check_len("state vector", x.len())?;
    Ok(step_unchecked(g, rho.as_slice(), x.as_slice()))
}

fn step_unchecked(g: &MultiGraph, rho: &[u32], x: &[bool]) -> StateVector {
    let next = (0..g.n)
        .map(|i| {
            let active = g.successors(i).iter().filter(|&&j| x[j as usize]).count();
            active as u64 >= rho[i] as u64
        })
        .collect();
    StateVector(next)
}

/// States `x(0), x(1), ...` of one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub states: Vec<StateVector>,
    /// `Some(t)` when `x(t + 1) = x(t)` was observed; `t` is the last index
    /// of `states`.
    pub fixed_point: Option<usize>,
}

impl Trajectory {
    pub fn last(&self) -> &StateVector {
        self.states.last().expect("trajectory holds x(0)")
    }
}

/// Iterates the dynamics from `x0` for at most `t_max` steps, stopping at the
/// first fixed point.
pub fn ltm_trajectory(
    g: &MultiGraph,
    rho: &ThresholdVector,
    x0: &StateVector,
    t_max: usize,
) -> Result<Trajectory> {
    g.check_len("threshold vector", rho.len())?;
    g.check_len("state vector", x0.len())?;
    let mut states = vec![x0.clone()];
    for _ in 0..t_max {
        let cur = states.last().unwrap();
        let next = step_unchecked(g, rho.as_slice(), cur.as_slice());
        if &next == cur {
            let t = states.len() - 1;
            return Ok(Trajectory {
                states,
                fixed_point: Some(t),
            });
        }
        states.push(next);
    }
    // The horizon may land exactly on a fixed point; one more step tells.
    let cur = states.last().unwrap();
    let fixed = step_unchecked(g, rho.as_slice(), cur.as_slice()) == *cur;
    let t = states.len() - 1;
    Ok(Trajectory {
        states,
        fixed_point: fixed.then_some(t),
    })
}

/// `rho - h`, rejecting `h_i > rho_i`.
pub fn apply_intervention(rho: &ThresholdVector, h: &InterventionVector) -> Result<ThresholdVector> {
    if rho.len() != h.len() {
        return Err(GraphError::DimensionMismatch {
            what: "intervention vector",
            got: h.len(),
            n: rho.len(),
        });
    }
    rho.0
        .iter()
        .zip(&h.0)
        .enumerate()
        .map(|(node, (&r, &d))| {
            r.checked_sub(d).ok_or(GraphError::InfeasibleIntervention {
                node,
                reduction: d,
                threshold: r,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(ThresholdVector)
}

pub fn active_fraction(x: &StateVector) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.count_active() as f64 / x.len() as f64
}

/// Summary of a cascade from the all-zeros state, without the full states.
#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    /// `Y(t)`: fraction of active nodes, `t = 0..=steps`.
    pub active_fraction: Vec<f64>,
    /// `Z(t)`: fraction of edges whose head is active.
    pub link_fraction: Vec<f64>,
    pub final_state: StateVector,
    /// Index of the fixed point if one was reached within the horizon.
    pub fixed_point: Option<usize>,
}

/// Runs the dynamics from `0` for at most `t_max` steps (default horizon is
/// `n`, after which the monotone trajectory is constant) and records
/// `Y(t)` and `Z(t)`.
pub fn cascade_from_zero(g: &MultiGraph, rho: &ThresholdVector, t_max: usize) -> Result<Cascade> {
    g.check_len("threshold vector", rho.len())?;
    let n = g.n;
    let links = g.edge_count();
    let link_fraction_of = |x: &[bool]| -> f64 {
        if links == 0 {
            return 0.0;
        }
        let s: u64 = x
            .iter()
            .zip(&g.in_degree)
            .filter(|(&a, _)| a)
            .map(|(_, &d)| d as u64)
            .sum();
        s as f64 / links as f64
    };

    let mut x = StateVector::zeros(n);
    let mut ys = vec![0.0];
    let mut zs = vec![0.0];
    let mut fixed_point = None;
    for t in 0..t_max {
        let next = step_unchecked(g, rho.as_slice(), x.as_slice());
        if next == x {
            fixed_point = Some(t);
            break;
        }
        x = next;
        ys.push(active_fraction(&x));
        zs.push(link_fraction_of(x.as_slice()));
    }
    if fixed_point.is_none() && step_unchecked(g, rho.as_slice(), x.as_slice()) == x {
        fixed_point = Some(ys.len() - 1);
    }
    Ok(Cascade {
        active_fraction: ys,
        link_fraction: zs,
        final_state: x,
        fixed_point,
    })
}

/// Whether `rho - h` drives `0` to an active fraction of at least `1 - eps`
/// within `n` steps. By monotonicity this covers every initial state.
pub fn check_target(
    g: &MultiGraph,
    rho: &ThresholdVector,
    h: &InterventionVector,
    eps: f64,
) -> Result<bool> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(GraphError::BadEpsilon(eps));
    }
    let lowered = apply_intervention(rho, h)?;
    let cascade = cascade_from_zero(g, &lowered, g.n)?;
    Ok(active_fraction(&cascade.final_state) >= 1.0 - eps)
}
