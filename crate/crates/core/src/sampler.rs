//! Configuration-model sampling, rounding of statistical interventions to
//! node counts, realization on concrete networks, and Monte Carlo checks of
//! the mean-field recursion.
//!
//! Wiring matches tail half-edges (node `i` repeated `kappa_i` times) with a
//! uniformly permuted list of head half-edges (node `j` repeated `delta_j`
//! times) and rejects the whole permutation when it creates a self-loop, so
//! accepted graphs are uniform over self-loop-free wirings. A draw is
//! abandoned at the first self-loop, which leaves that law unchanged.
//!
//! Randomness comes from ChaCha20; replicate `r` uses stream `r` of the run
//! seed, so replicates are independent of scheduling.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::graph::{
    active_fraction, apply_intervention, cascade_from_zero, GraphError, InterventionVector,
    MultiGraph, ThresholdVector,
};
use crate::meanfield::{self, recursion, MeanFieldError, Recursion};
use crate::typestats::{
    moments, nu, post_statistics, AgentType, Moment, StatIntervention, Statistics, TypeStatsError,
};

pub const DEFAULT_RETRY_BUDGET: usize = 1000;

/// Horizon of the mean-field recursion used for comparisons.
const RECURSION_STEPS: usize = 10_000;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("population size must be positive")]
    EmptyPopulation,
    #[error("rounded type counts give {tails} tail and {heads} head half-edges; in- and out-degree totals must agree")]
    DegreeImbalance { tails: u64, heads: u64 },
    #[error(
        "no self-loop-free wiring in {attempts} attempts (expected acceptance about {expected:.3e})"
    )]
    RetryBudgetExhausted { attempts: usize, expected: f64 },
    #[error("type (d={d}, k={k}, r={r}) needs {needed} nodes but only {available} exist")]
    NotEnoughNodes {
        d: u32,
        k: u32,
        r: u32,
        needed: u64,
        available: u64,
    },
    #[error("assignment covers {got} nodes, graph has {n}")]
    AssignmentMismatch { got: usize, n: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Stats(#[from] TypeStatsError),
    #[error(transparent)]
    MeanField(#[from] MeanFieldError),
}

pub type Result<T> = std::result::Result<T, SamplerError>;

pub fn replicate_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Integer parts of `values` summing to `total`, by largest remainder.
/// Exact remainder ties are ordered by a random key drawn from `rng` in
/// index order.
pub fn largest_remainder(values: &[f64], total: u64, rng: &mut impl Rng) -> Vec<u64> {
    let mut out: Vec<u64> = values.iter().map(|v| v.max(0.0).floor() as u64).collect();
    let assigned: u64 = out.iter().sum();
    let keys: Vec<u64> = values.iter().map(|_| rng.gen()).collect();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = values[a].max(0.0) - out[a] as f64;
        let rb = values[b].max(0.0) - out[b] as f64;
        rb.total_cmp(&ra).then(keys[a].cmp(&keys[b])).then(a.cmp(&b))
    });
    if assigned < total {
        let extra = (total - assigned) as usize;
        for &i in order.iter().cycle().take(extra) {
            out[i] += 1;
        }
    } else {
        // Only reachable through float noise above the total.
        let mut surplus = assigned - total;
        for &i in order.iter().rev() {
            while surplus > 0 && out[i] > 0 {
                out[i] -= 1;
                surplus -= 1;
            }
        }
    }
    out
}

/// Node counts per `(type, eta)` for a population of `n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RoundedIntervention {
    pub n: u64,
    #[serde(skip)]
    pub types: Vec<AgentType>,
    pub counts: Vec<Vec<u64>>,
}

impl RoundedIntervention {
    pub fn type_totals(&self) -> Vec<u64> {
        self.counts.iter().map(|c| c.iter().sum()).collect()
    }

    /// `sum_w sum_eta counts_w(eta) c_w(eta)`.
    pub fn cost(&self) -> f64 {
        self.types
            .iter()
            .zip(&self.counts)
            .flat_map(|(t, row)| row.iter().enumerate().map(move |(e, &c)| c as f64 * t.cost.get(e)))
            .sum()
    }

    /// Post-intervention type counts.
    pub fn post_counts(&self) -> Vec<(AgentType, u64)> {
        let mut acc: BTreeMap<AgentType, u64> = BTreeMap::new();
        for (t, row) in self.types.iter().zip(&self.counts) {
            for (eta, &c) in row.iter().enumerate() {
                if c > 0 {
                    *acc.entry(t.reduced(eta as u32)).or_insert(0) += c;
                }
            }
        }
        acc.into_iter().collect()
    }
}

/// Largest-remainder rounding of `n xi`: first the type totals `n p_w`
/// (summing to `n`), then the reductions within each type.
pub fn round_intervention(xi: &StatIntervention, n: u64, seed: u64) -> RoundedIntervention {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let nf = n as f64;
    let totals_f: Vec<f64> = xi.masses().iter().map(|row| nf * row.iter().sum::<f64>()).collect();
    let totals = largest_remainder(&totals_f, n, &mut rng);
    let counts = xi
        .masses()
        .iter()
        .zip(&totals)
        .map(|(row, &tw)| {
            let mass: f64 = row.iter().sum();
            if mass <= 0.0 {
                let mut c = vec![0; row.len()];
                c[0] = tw;
                return c;
            }
            let scaled: Vec<f64> = row.iter().map(|m| m / mass * tw as f64).collect();
            largest_remainder(&scaled, tw, &mut rng)
        })
        .collect();
    RoundedIntervention {
        n,
        types: xi.types().to_vec(),
        counts,
    }
}

/// Type of every node, in blocks by type index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeAssignment {
    pub types: Vec<AgentType>,
    pub node_type: Vec<usize>,
}

impl TypeAssignment {
    pub fn from_counts(entries: &[(AgentType, u64)]) -> Self {
        let types = entries.iter().map(|(t, _)| t.clone()).collect();
        let node_type = entries
            .iter()
            .enumerate()
            .flat_map(|(w, &(_, c))| std::iter::repeat(w).take(c as usize))
            .collect();
        Self { types, node_type }
    }

    pub fn counts(&self) -> Vec<u64> {
        let mut c = vec![0; self.types.len()];
        for &w in &self.node_type {
            c[w] += 1;
        }
        c
    }

    pub fn thresholds(&self) -> Vec<u32> {
        self.node_type.iter().map(|&w| self.types[w].r).collect()
    }
}

/// Half-edge lists of an assignment: `(tails, heads)`.
fn half_edges(a: &TypeAssignment) -> Result<(Vec<u32>, Vec<u32>)> {
    let mut tails = Vec::new();
    let mut heads = Vec::new();
    for (i, &w) in a.node_type.iter().enumerate() {
        let t = &a.types[w];
        tails.extend(std::iter::repeat(i as u32).take(t.k as usize));
        heads.extend(std::iter::repeat(i as u32).take(t.d as usize));
    }
    if tails.len() != heads.len() {
        return Err(SamplerError::DegreeImbalance {
            tails: tails.len() as u64,
            heads: heads.len() as u64,
        });
    }
    Ok((tails, heads))
}

/// One uniform permutation of `heads` against `tails`, abandoned at the
/// first self-loop. `heads` holds the permutation on success.
pub fn try_wiring(tails: &[u32], heads: &mut [u32], rng: &mut impl Rng) -> bool {
    let e = heads.len();
    for pos in 0..e {
        let j = rng.gen_range(pos..e);
        heads.swap(pos, j);
        if heads[pos] == tails[pos] {
            return false;
        }
    }
    true
}

/// `exp(-<dk> / <d>)`: limiting probability that a uniform directed wiring
/// has no self-loop (the expected number of self-loops is `<dk> / <d>`).
pub fn acceptance_estimate(p: &Statistics) -> f64 {
    let md = moments(p, Moment::D);
    if md <= 0.0 {
        return 1.0;
    }
    (-moments(p, Moment::DK) / md).exp()
}

/// Fraction of `trials` uniform wirings of the population without a
/// self-loop.
pub fn empirical_acceptance(a: &TypeAssignment, trials: usize, rng: &mut impl Rng) -> Result<f64> {
    let (tails, mut heads) = half_edges(a)?;
    let mut ok = 0usize;
    for _ in 0..trials {
        if try_wiring(&tails, &mut heads, rng) {
            ok += 1;
        }
    }
    Ok(ok as f64 / trials.max(1) as f64)
}

/// A sampled network with its thresholds and types.
#[derive(Debug, Clone)]
pub struct SampledNetwork {
    pub graph: MultiGraph,
    pub thresholds: ThresholdVector,
    pub assignment: TypeAssignment,
    /// Permutations drawn until acceptance.
    pub attempts: usize,
}

/// Uniform self-loop-free wiring of a population given by exact type counts.
pub fn sample_with_counts(
    entries: &[(AgentType, u64)],
    budget: usize,
    rng: &mut impl Rng,
) -> Result<SampledNetwork> {
    let assignment = TypeAssignment::from_counts(entries);
    let n = assignment.node_type.len();
    if n == 0 {
        return Err(SamplerError::EmptyPopulation);
    }
    let (tails, mut heads) = half_edges(&assignment)?;
    for attempt in 1..=budget {
        if try_wiring(&tails, &mut heads, rng) {
            let edges: Vec<(usize, usize)> = tails
                .iter()
                .zip(&heads)
                .map(|(&a, &b)| (a as usize, b as usize))
                .collect();
            let graph = MultiGraph::new(n, &edges)?;
            let thresholds = ThresholdVector::new(&graph, assignment.thresholds())?;
            return Ok(SampledNetwork {
                graph,
                thresholds,
                assignment,
                attempts: attempt,
            });
        }
    }
    let total = n as f64;
    let stats = Statistics::from_masses(
        entries
            .iter()
            .filter(|e| e.1 > 0)
            .map(|(t, c)| (t.clone(), *c as f64 / total))
            .collect(),
    )?;
    Err(SamplerError::RetryBudgetExhausted {
        attempts: budget,
        expected: acceptance_estimate(&stats),
    })
}

/// Samples `n` nodes with type counts rounded from `p`.
pub fn sample_configuration_model(p: &Statistics, n: u64, seed: u64) -> Result<SampledNetwork> {
    if n == 0 {
        return Err(SamplerError::EmptyPopulation);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let scaled: Vec<f64> = p.masses().iter().map(|m| m * n as f64).collect();
    let counts = largest_remainder(&scaled, n, &mut rng);
    let entries: Vec<(AgentType, u64)> = p.types().iter().cloned().zip(counts).collect();
    sample_with_counts(&entries, DEFAULT_RETRY_BUDGET, &mut rng)
}

/// Lowers the thresholds of `counts_w(eta)` uniformly chosen nodes of each
/// type `w` by `eta`. `node_type` indexes `types`, which must contain the
/// types of `rounded`.
pub fn realize_intervention(
    types: &[AgentType],
    node_type: &[usize],
    rounded: &RoundedIntervention,
    seed: u64,
) -> Result<InterventionVector> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); types.len()];
    for (i, &w) in node_type.iter().enumerate() {
        members[w].push(i);
    }
    let mut h = vec![0u32; node_type.len()];
    for (t, row) in rounded.types.iter().zip(&rounded.counts) {
        let needed: u64 = row[1..].iter().sum();
        if needed == 0 {
            continue;
        }
        let pool = types
            .binary_search(t)
            .ok()
            .or_else(|| types.iter().position(|u| u == t))
            .map(|w| &mut members[w]);
        let available = pool.as_ref().map_or(0, |m| m.len() as u64);
        if needed > available {
            return Err(SamplerError::NotEnoughNodes {
                d: t.d,
                k: t.k,
                r: t.r,
                needed,
                available,
            });
        }
        let pool = pool.expect("checked above");
        let (chosen, _) = pool.partial_shuffle(&mut rng, needed as usize);
        let mut it = chosen.iter();
        for (eta, &c) in row.iter().enumerate().skip(1) {
            for &node in it.by_ref().take(c as usize) {
                h[node] = eta as u32;
            }
        }
    }
    Ok(InterventionVector::new(h))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub attempts: usize,
    pub final_fraction: f64,
    pub sup_dev_y: f64,
    pub sup_dev_z: f64,
    /// `Y(t)`
    pub y: Vec<f64>,
    /// `Z(t)`
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub n: u64,
    pub replicates: usize,
    pub eps: f64,
    pub seed: u64,
    pub realized_cost: f64,
    pub planned_cost_times_n: f64,
    /// `P[Y_final >= 1 - eps]`; `None` without replicates.
    pub success_rate: Option<f64>,
    pub max_sup_dev_y: f64,
    pub max_sup_dev_z: f64,
    pub mean_final_fraction: Option<f64>,
    pub nu: f64,
    pub acceptance_estimate: f64,
    pub mean_attempts: Option<f64>,
    pub recursion_y: Vec<f64>,
    pub recursion_z: Vec<f64>,
    pub runs: Vec<ReplicateResult>,
}

/// `sup_t |a(t) - b(t)|`, holding each series at its last value.
pub fn sup_deviation(a: &[f64], b: &[f64]) -> f64 {
    let len = a.len().max(b.len());
    let at = |s: &[f64], t: usize| s.get(t).or(s.last()).copied().unwrap_or(0.0);
    (0..len).map(|t| (at(a, t) - at(b, t)).abs()).fold(0.0, f64::max)
}

/// Samples `replicates` networks from the post-intervention statistics,
/// runs the dynamics from all-inactive and compares with the recursion.
pub fn monte_carlo_validate(
    p0: &Statistics,
    xi: &StatIntervention,
    n: u64,
    replicates: usize,
    eps: f64,
    seed: u64,
) -> Result<McReport> {
    if n == 0 {
        return Err(SamplerError::EmptyPopulation);
    }
    xi.validate_against(p0)?;
    let rounded = round_intervention(xi, n, seed);
    let entries = rounded.post_counts();
    let realized = Statistics::from_counts(entries.clone())?;
    let rec: Recursion = recursion(&realized, RECURSION_STEPS)?;
    let planned = post_statistics(p0, xi, false)?;

    let runs: Vec<ReplicateResult> = (0..replicates)
        .into_par_iter()
        .map(|r| -> Result<ReplicateResult> {
            let mut rng = replicate_rng(seed, r as u64 + 1);
            let net = sample_with_counts(&entries, DEFAULT_RETRY_BUDGET, &mut rng)?;
            let cascade = cascade_from_zero(&net.graph, &net.thresholds, n as usize)?;
            Ok(ReplicateResult {
                replicate: r,
                attempts: net.attempts,
                final_fraction: active_fraction(&cascade.final_state),
                sup_dev_y: sup_deviation(&cascade.active_fraction, &rec.y),
                sup_dev_z: sup_deviation(&cascade.link_fraction, &rec.z),
                y: cascade.active_fraction,
                z: cascade.link_fraction,
            })
        })
        .collect::<Result<_>>()?;

    let count = runs.len() as f64;
    let mean = |f: &dyn Fn(&ReplicateResult) -> f64| {
        (!runs.is_empty()).then(|| runs.iter().map(f).sum::<f64>() / count)
    };
    Ok(McReport {
        n,
        replicates,
        eps,
        seed,
        realized_cost: rounded.cost(),
        planned_cost_times_n: n as f64 * crate::typestats::intervention_cost(xi),
        success_rate: mean(&|r| (r.final_fraction >= 1.0 - eps) as u8 as f64),
        max_sup_dev_y: runs.iter().map(|r| r.sup_dev_y).fold(0.0, f64::max),
        max_sup_dev_z: runs.iter().map(|r| r.sup_dev_z).fold(0.0, f64::max),
        mean_final_fraction: mean(&|r| r.final_fraction),
        nu: nu(&planned),
        acceptance_estimate: acceptance_estimate(&planned),
        mean_attempts: mean(&|r| r.attempts as f64),
        recursion_y: rec.y,
        recursion_z: rec.z,
        runs,
    })
}

/// Outcome of applying a plan to a concrete network.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RealizationReport {
    pub n: usize,
    pub eps: f64,
    pub seed: u64,
    pub realized_cost: f64,
    pub planned_cost_times_n: f64,
    pub intervened_nodes: usize,
    pub final_fraction: f64,
    pub reached_target: bool,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub recursion_y: Vec<f64>,
    pub recursion_z: Vec<f64>,
    #[serde(skip)]
    pub intervention: InterventionVector,
}

/// Rounds `xi` to the network's exact type counts, picks the intervened
/// nodes at random and runs the dynamics from all-inactive.
pub fn realize_on_network(
    g: &MultiGraph,
    rho: &ThresholdVector,
    p0: &Statistics,
    node_type: &[usize],
    xi: &StatIntervention,
    eps: f64,
    seed: u64,
) -> Result<RealizationReport> {
    let n = g.node_count();
    if node_type.len() != n {
        return Err(SamplerError::AssignmentMismatch {
            got: node_type.len(),
            n,
        });
    }
    xi.validate_against(p0)?;
    let rounded = round_intervention(xi, n as u64, seed);
    let h = realize_intervention(p0.types(), node_type, &rounded, seed ^ 0x9e37_79b9_7f4a_7c15)?;
    let lowered = apply_intervention(rho, &h)?;
    let cascade = cascade_from_zero(g, &lowered, n)?;
    let post = post_statistics(p0, xi, false)?;
    let rec = meanfield::recursion(&post, RECURSION_STEPS)?;
    let final_fraction = active_fraction(&cascade.final_state);
    let realized_cost = h
        .as_slice()
        .iter()
        .zip(node_type)
        .map(|(&e, &w)| p0.types()[w].cost.get(e as usize))
        .sum();
    Ok(RealizationReport {
        n,
        eps,
        seed,
        realized_cost,
        planned_cost_times_n: n as f64 * crate::typestats::intervention_cost(xi),
        intervened_nodes: h.support(),
        final_fraction,
        reached_target: final_fraction >= 1.0 - eps,
        y: cascade.active_fraction,
        z: cascade.link_fraction,
        recursion_y: rec.y,
        recursion_z: rec.z,
        intervention: h,
    })
}
