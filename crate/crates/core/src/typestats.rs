//! Agent types, type statistics and statistical interventions.
//!
//! A type is the tuple `(d, k, r, c)`: in-degree, out-degree, threshold and
//! the cost table `c(0..=r)`. Statistics are probability masses over types;
//! a statistical intervention `xi_w(eta)` splits the mass of each type by the
//! threshold reduction `eta` applied to its agents.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::hash::{Hash, Hasher};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, MultiGraph, ThresholdVector};

/// Tolerance on `sum_w p_w = 1` and on the per-type budget identity.
pub const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum TypeStatsError {
    #[error("invalid cost table {table:?} for threshold {r}: {reason}")]
    BadCostTable {
        table: Vec<f64>,
        r: u32,
        reason: &'static str,
    },
    #[error("threshold {r} exceeds out-degree {k}")]
    ThresholdAboveOutDegree { r: u32, k: u32 },
    #[error("mass {0} is negative or not finite")]
    BadMass(f64),
    #[error("masses sum to {0}, expected 1")]
    NotNormalized(f64),
    #[error("intervention inconsistent with statistics: {0}")]
    Inconsistent(String),
    #[error("no cost table for type (d={d}, k={k}, r={r})")]
    MissingCost { d: u32, k: u32, r: u32 },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub type Result<T> = std::result::Result<T, TypeStatsError>;

/// Cost table `c(0..=r)` with `c(0) = 0`, non-negative and non-decreasing.
/// Compared and hashed by bit pattern so tables intern by content.
#[derive(Debug, Clone)]
pub struct CostTable(Vec<f64>);

impl CostTable {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let bad = |reason| TypeStatsError::BadCostTable {
            table: values.clone(),
            r: values.len().saturating_sub(1) as u32,
            reason,
        };
        if values.is_empty() {
            return Err(bad("empty"));
        }
        if values[0] != 0.0 {
            return Err(bad("c(0) must be 0"));
        }
        if values.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(bad("entries must be finite and non-negative"));
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(bad("must be non-decreasing"));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, eta: usize) -> f64 {
        self.0[eta]
    }

    pub fn max_reduction(&self) -> u32 {
        (self.0.len() - 1) as u32
    }

    /// Table restricted to `0..=r`.
    pub fn truncated(&self, r: u32) -> Self {
        Self(self.0[..=r as usize].to_vec())
    }
}

impl PartialEq for CostTable {
    fn eq(&self, other: &Self) -> bool {
        self.0.len() == other.0.len()
            && self.0.iter().zip(&other.0).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Eq for CostTable {}

impl Hash for CostTable {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.len().hash(state);
        for v in &self.0 {
            v.to_bits().hash(state);
        }
    }
}

impl Ord for CostTable {
    fn cmp(&self, other: &Self) -> Ordering {
        for (a, b) in self.0.iter().zip(&other.0) {
            match a.total_cmp(b) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        self.0.len().cmp(&other.0.len())
    }
}

impl PartialOrd for CostTable {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AgentType {
    pub d: u32,
    pub k: u32,
    pub r: u32,
    pub cost: CostTable,
}

impl AgentType {
    pub fn new(d: u32, k: u32, r: u32, cost: Vec<f64>) -> Result<Self> {
        if r > k {
            return Err(TypeStatsError::ThresholdAboveOutDegree { r, k });
        }
        let cost = CostTable::new(cost)?;
        if cost.max_reduction() != r {
            return Err(TypeStatsError::BadCostTable {
                table: cost.0,
                r,
                reason: "length must be r + 1",
            });
        }
        Ok(Self { d, k, r, cost })
    }

    /// Type of an agent of this type after lowering its threshold by `eta`.
    pub fn reduced(&self, eta: u32) -> AgentType {
        let r = self.r - eta;
        AgentType {
            d: self.d,
            k: self.k,
            r,
            cost: self.cost.truncated(r),
        }
    }
}

/// Cost presets, or an explicit table keyed by `(d, k, r)`.
#[derive(Debug, Clone, PartialEq)]
pub enum CostRule {
    /// `c(eta) = eta`
    Linear,
    /// `c(eta) = r` for `eta > 0`
    Seeding,
    /// `c(eta) = 1` for `eta > 0`
    UnitSeeding,
    Table(BTreeMap<(u32, u32, u32), Vec<f64>>),
}

impl CostRule {
    pub fn table(&self, d: u32, k: u32, r: u32) -> Result<CostTable> {
        let values = match self {
            CostRule::Linear => (0..=r).map(|e| e as f64).collect(),
            CostRule::Seeding => (0..=r).map(|e| if e == 0 { 0.0 } else { r as f64 }).collect(),
            CostRule::UnitSeeding => (0..=r).map(|e| if e == 0 { 0.0 } else { 1.0 }).collect(),
            CostRule::Table(map) => map
                .get(&(d, k, r))
                .cloned()
                .ok_or(TypeStatsError::MissingCost { d, k, r })?,
        };
        CostTable::new(values)
    }

    pub fn name(&self) -> &'static str {
        match self {
            CostRule::Linear => "linear",
            CostRule::Seeding => "seeding",
            CostRule::UnitSeeding => "unit-seeding",
            CostRule::Table(_) => "table",
        }
    }
}

/// Threshold presets, or explicit per-node thresholds.
#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdRule {
    /// `r = floor(k / 2)`
    HalfOutDegree,
    /// `r` uniform on `{1, ..., k}` (`0` when `k = 0`).
    UniformRandom { seed: u64 },
    Explicit(Vec<u32>),
}

impl ThresholdRule {
    /// Thresholds for `g`. Explicit entries above the out-degree are an error
    /// unless `clamp` is set; the count of clamped entries is returned.
    pub fn thresholds(&self, g: &MultiGraph, clamp: bool) -> Result<(ThresholdVector, usize)> {
        let kappa = g.out_degrees();
        match self {
            ThresholdRule::HalfOutDegree => {
                let rho = kappa.iter().map(|k| k / 2).collect();
                Ok((ThresholdVector::new(g, rho)?, 0))
            }
            ThresholdRule::UniformRandom { seed } => {
                let mut rng = ChaCha20Rng::seed_from_u64(*seed);
                let rho = kappa
                    .iter()
                    .map(|&k| if k == 0 { 0 } else { rng.gen_range(1..=k) })
                    .collect();
                Ok((ThresholdVector::new(g, rho)?, 0))
            }
            ThresholdRule::Explicit(values) => {
                if clamp {
                    Ok(ThresholdVector::clamped(g, values.clone())?)
                } else {
                    Ok((ThresholdVector::new(g, values.clone())?, 0))
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ThresholdRule::HalfOutDegree => "half-out-degree",
            ThresholdRule::UniformRandom { .. } => "uniform-random",
            ThresholdRule::Explicit(_) => "explicit",
        }
    }
}

/// Empirical distribution of types, in canonical (sorted) type order.
#[derive(Debug, Clone, PartialEq)]
pub struct Statistics {
    types: Vec<AgentType>,
    mass: Vec<f64>,
    // Exact node counts when the statistics came from a concrete population.
    counts: Option<Vec<u64>>,
}

impl Statistics {
    /// Merges duplicate types, sorts, and checks normalization.
    pub fn from_masses(entries: Vec<(AgentType, f64)>) -> Result<Self> {
        let mut merged: BTreeMap<AgentType, f64> = BTreeMap::new();
        for (t, m) in entries {
            if !m.is_finite() || m < 0.0 {
                return Err(TypeStatsError::BadMass(m));
            }
            *merged.entry(t).or_insert(0.0) += m;
        }
        let total = neumaier_sum(merged.values().copied());
        if (total - 1.0).abs() > MASS_TOL {
            return Err(TypeStatsError::NotNormalized(total));
        }
        let (types, mass) = merged.into_iter().unzip();
        Ok(Self {
            types,
            mass,
            counts: None,
        })
    }

    /// Statistics of a population of `n = sum counts` agents; masses are
    /// `count / n`.
    pub fn from_counts(entries: Vec<(AgentType, u64)>) -> Result<Self> {
        let mut merged: BTreeMap<AgentType, u64> = BTreeMap::new();
        for (t, c) in entries {
            *merged.entry(t).or_insert(0) += c;
        }
        merged.retain(|_, c| *c > 0);
        let n: u64 = merged.values().sum();
        if n == 0 {
            return Err(TypeStatsError::NotNormalized(0.0));
        }
        let (types, counts): (Vec<_>, Vec<_>) = merged.into_iter().unzip();
        let mass = counts.iter().map(|&c| c as f64 / n as f64).collect();
        Ok(Self {
            types,
            mass,
            counts: Some(counts),
        })
    }

    pub fn types(&self) -> &[AgentType] {
        &self.types
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    pub fn counts(&self) -> Option<&[u64]> {
        self.counts.as_deref()
    }

    /// Population size if built from counts.
    pub fn population(&self) -> Option<u64> {
        self.counts.as_ref().map(|c| c.iter().sum())
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AgentType, f64)> {
        self.types.iter().zip(self.mass.iter().copied())
    }

    pub fn index_of(&self, t: &AgentType) -> Option<usize> {
        self.types.binary_search(t).ok()
    }

    pub fn mass_of(&self, t: &AgentType) -> f64 {
        self.index_of(t).map_or(0.0, |i| self.mass[i])
    }

    /// Types with positive mass.
    pub fn support(&self) -> impl Iterator<Item = (&AgentType, f64)> {
        self.iter().filter(|(_, m)| *m > 0.0)
    }

    pub fn to_records(&self) -> Vec<StatRecord> {
        self.iter()
            .map(|(t, mass)| StatRecord {
                d: t.d,
                k: t.k,
                r: t.r,
                cost: t.cost.values().to_vec(),
                mass,
            })
            .collect()
    }

    pub fn from_records(records: &[StatRecord]) -> Result<Self> {
        let entries = records
            .iter()
            .map(|rec| Ok((AgentType::new(rec.d, rec.k, rec.r, rec.cost.clone())?, rec.mass)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_masses(entries)
    }
}

/// Serialized statistics entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRecord {
    pub d: u32,
    pub k: u32,
    pub r: u32,
    pub cost: Vec<f64>,
    pub mass: f64,
}

/// Serialized intervention entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionRecord {
    pub d: u32,
    pub k: u32,
    pub r: u32,
    pub cost: Vec<f64>,
    pub eta: u32,
    pub mass: f64,
}

/// `xi_w(eta)` for `eta = 0..=r_w`, for each pre-intervention type `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatIntervention {
    types: Vec<AgentType>,
    masses: Vec<Vec<f64>>,
}

impl StatIntervention {
    pub fn new(entries: Vec<(AgentType, Vec<f64>)>) -> Result<Self> {
        let mut merged: BTreeMap<AgentType, Vec<f64>> = BTreeMap::new();
        for (t, m) in entries {
            if m.len() != t.r as usize + 1 {
                return Err(TypeStatsError::Inconsistent(format!(
                    "type (d={}, k={}, r={}) has {} reduction masses, expected {}",
                    t.d,
                    t.k,
                    t.r,
                    m.len(),
                    t.r + 1
                )));
            }
            if let Some(bad) = m.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(TypeStatsError::BadMass(*bad));
            }
            match merged.get_mut(&t) {
                Some(acc) => acc.iter_mut().zip(&m).for_each(|(a, b)| *a += b),
                None => {
                    merged.insert(t, m);
                }
            }
        }
        let (types, masses) = merged.into_iter().unzip();
        Ok(Self { types, masses })
    }

    /// Builds `xi` from positive reductions `(type index in p0, eta, mass)`;
    /// `xi_w(0)` absorbs the rest of `p_w`.
    pub fn from_reductions(p0: &Statistics, reductions: &[(usize, u32, f64)]) -> Result<Self> {
        let mut masses: Vec<Vec<f64>> = p0
            .types()
            .iter()
            .map(|t| vec![0.0; t.r as usize + 1])
            .collect();
        for &(w, eta, m) in reductions {
            let t = p0.types().get(w).ok_or_else(|| {
                TypeStatsError::Inconsistent(format!("type index {w} out of range"))
            })?;
            if eta == 0 || eta > t.r {
                return Err(TypeStatsError::Inconsistent(format!(
                    "reduction {eta} outside 1..={} for type {w}",
                    t.r
                )));
            }
            masses[w][eta as usize] += m;
        }
        for (row, &p) in masses.iter_mut().zip(p0.masses()) {
            let used: f64 = row[1..].iter().sum();
            let rest = p - used;
            if rest < -MASS_TOL {
                return Err(TypeStatsError::Inconsistent(format!(
                    "reductions use mass {used} > p_w = {p}"
                )));
            }
            row[0] = rest.max(0.0);
        }
        let xi = Self {
            types: p0.types().to_vec(),
            masses,
        };
        xi.validate_against(p0)?;
        Ok(xi)
    }

    pub fn types(&self) -> &[AgentType] {
        &self.types
    }

    pub fn masses(&self) -> &[Vec<f64>] {
        &self.masses
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AgentType, &[f64])> {
        self.types.iter().zip(self.masses.iter().map(|m| m.as_slice()))
    }

    pub fn masses_of(&self, t: &AgentType) -> Option<&[f64]> {
        self.types
            .binary_search(t)
            .ok()
            .map(|i| self.masses[i].as_slice())
    }

    /// Checks `sum_eta xi_w(eta) = p_w` for every `w` (and no foreign types).
    pub fn validate_against(&self, p0: &Statistics) -> Result<()> {
        for (t, m) in self.iter() {
            if p0.index_of(t).is_none() && m.iter().any(|&v| v > 0.0) {
                return Err(TypeStatsError::Inconsistent(format!(
                    "type (d={}, k={}, r={}) is not in the statistics",
                    t.d, t.k, t.r
                )));
            }
        }
        for (t, p) in p0.iter() {
            let total = self.masses_of(t).map_or(0.0, |m| neumaier_sum(m.iter().copied()));
            if (total - p).abs() > MASS_TOL {
                return Err(TypeStatsError::Inconsistent(format!(
                    "type (d={}, k={}, r={}): sum of xi = {total}, p = {p}",
                    t.d, t.k, t.r
                )));
            }
        }
        Ok(())
    }

    pub fn to_records(&self) -> Vec<InterventionRecord> {
        self.iter()
            .flat_map(|(t, m)| {
                m.iter().enumerate().map(move |(eta, &mass)| InterventionRecord {
                    d: t.d,
                    k: t.k,
                    r: t.r,
                    cost: t.cost.values().to_vec(),
                    eta: eta as u32,
                    mass,
                })
            })
            .collect()
    }

    pub fn from_records(records: &[InterventionRecord]) -> Result<Self> {
        let mut by_type: BTreeMap<AgentType, Vec<f64>> = BTreeMap::new();
        for rec in records {
            let t = AgentType::new(rec.d, rec.k, rec.r, rec.cost.clone())?;
            if rec.eta > rec.r {
                return Err(TypeStatsError::Inconsistent(format!(
                    "eta {} exceeds r {}",
                    rec.eta, rec.r
                )));
            }
            let row = by_type.entry(t).or_insert_with(|| vec![0.0; rec.r as usize + 1]);
            row[rec.eta as usize] += rec.mass;
        }
        Self::new(by_type.into_iter().collect())
    }
}

/// Groups nodes by identical `(delta_i, kappa_i, rho_i, cost table)`.
/// Returns the statistics and, for each node, the index of its type.
pub fn extract_statistics(
    g: &MultiGraph,
    rho: &ThresholdVector,
    cost_rule: &CostRule,
) -> Result<(Statistics, Vec<usize>)> {
    let n = g.node_count();
    if rho.len() != n {
        return Err(GraphError::DimensionMismatch {
            what: "threshold vector",
            got: rho.len(),
            n,
        }
        .into());
    }
    let mut tables: HashMap<(u32, u32, u32), CostTable> = HashMap::new();
    let mut counts: HashMap<AgentType, u64> = HashMap::new();
    let mut node_types = Vec::with_capacity(n);
    for i in 0..n {
        let (d, k, r) = (g.in_degrees()[i], g.out_degrees()[i], rho.as_slice()[i]);
        let cost = match tables.get(&(d, k, r)) {
            Some(c) => c.clone(),
            None => {
                let c = cost_rule.table(d, k, r)?;
                tables.insert((d, k, r), c.clone());
                c
            }
        };
        let t = AgentType { d, k, r, cost };
        *counts.entry(t.clone()).or_insert(0) += 1;
        node_types.push(t);
    }
    let stats = Statistics::from_counts(counts.into_iter().collect())?;
    let index: HashMap<&AgentType, usize> =
        stats.types().iter().enumerate().map(|(i, t)| (t, i)).collect();
    let assignment = node_types.iter().map(|t| index[t]).collect();
    Ok((stats, assignment))
}

/// `xi_w(0) = p_w`, nothing else.
pub fn null_intervention(p0: &Statistics) -> StatIntervention {
    let masses = p0
        .iter()
        .map(|(t, p)| {
            let mut row = vec![0.0; t.r as usize + 1];
            row[0] = p;
            row
        })
        .collect();
    StatIntervention {
        types: p0.types().to_vec(),
        masses,
    }
}

/// Statistics after the intervention: each agent of type `w` lowered by
/// `eta` becomes type `w.reduced(eta)`. Zero-mass types are kept only when
/// `keep_zero` is set.
pub fn post_statistics(p0: &Statistics, xi: &StatIntervention, keep_zero: bool) -> Result<Statistics> {
    xi.validate_against(p0)?;
    let mut acc: BTreeMap<AgentType, Vec<f64>> = BTreeMap::new();
    for (t, p) in p0.iter() {
        acc.entry(t.clone()).or_default().push(p);
    }
    for (t, row) in xi.iter() {
        for (eta, &m) in row.iter().enumerate().skip(1) {
            if m == 0.0 {
                continue;
            }
            acc.entry(t.clone()).or_default().push(-m);
            acc.entry(t.reduced(eta as u32)).or_default().push(m);
        }
    }
    let mut types = Vec::with_capacity(acc.len());
    let mut mass = Vec::with_capacity(acc.len());
    for (t, parts) in acc {
        let mut m = neumaier_sum(parts.into_iter());
        if m < 0.0 {
            if m < -MASS_TOL {
                return Err(TypeStatsError::Inconsistent(format!(
                    "negative post-intervention mass {m}"
                )));
            }
            m = 0.0;
        }
        if m > 0.0 || keep_zero {
            types.push(t);
            mass.push(m);
        }
    }
    Ok(Statistics {
        types,
        mass,
        counts: None,
    })
}

/// `C(xi) = sum_w sum_eta xi_w(eta) c_w(eta)`.
pub fn intervention_cost(xi: &StatIntervention) -> f64 {
    neumaier_sum(
        xi.iter()
            .flat_map(|(t, row)| row.iter().enumerate().map(move |(e, &m)| m * t.cost.get(e))),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WellPosedReport {
    /// `n p_w` integral for every `w`.
    pub integer_counts: bool,
    /// `<p, d> = <p, k>`.
    pub degree_balance: bool,
    /// `d_w + k_w <= n <p, d>` for every `w` with `p_w > 0`.
    pub self_loop_free: bool,
}

impl WellPosedReport {
    pub fn all(&self) -> bool {
        self.integer_counts && self.degree_balance && self.self_loop_free
    }
}

pub fn check_well_posed(n: u64, p: &Statistics) -> WellPosedReport {
    let nf = n as f64;
    let integer_counts = p.masses().iter().all(|&m| {
        let c = nf * m;
        (c - c.round()).abs() <= 1e-9 && c.round() >= 0.0
    });
    let md = moments(p, Moment::D);
    let mk = moments(p, Moment::K);
    let degree_balance = (md - mk).abs() <= MASS_TOL;
    let self_loop_free = p
        .support()
        .all(|(t, _)| (t.d + t.k) as f64 <= nf * md + 1e-9);
    WellPosedReport {
        integer_counts,
        degree_balance,
        self_loop_free,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Moment {
    D,
    K,
    D2,
    K2,
    DK,
}

/// `<p, f>` for the requested degree function `f`.
pub fn moments(p: &Statistics, which: Moment) -> f64 {
    neumaier_sum(p.iter().map(|(t, m)| {
        let (d, k) = (t.d as f64, t.k as f64);
        m * match which {
            Moment::D => d,
            Moment::K => k,
            Moment::D2 => d * d,
            Moment::K2 => k * k,
            Moment::DK => d * k,
        }
    }))
}

/// `nu = <p, dk> / <p, d> - 1`.
pub fn nu(p: &Statistics) -> f64 {
    moments(p, Moment::DK) / moments(p, Moment::D) - 1.0
}

/// Compensated (Neumaier) summation.
pub fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ty(d: u32, k: u32, r: u32) -> AgentType {
        AgentType::new(d, k, r, CostRule::Linear.table(d, k, r).unwrap().values().to_vec()).unwrap()
    }

    fn single(d: u32, k: u32, r: u32) -> Statistics {
        Statistics::from_masses(vec![(ty(d, k, r), 1.0)]).unwrap()
    }

    #[test]
    fn cost_table_validation() {
        assert!(CostTable::new(vec![0.0, 1.0, 1.0]).is_ok());
        assert!(CostTable::new(vec![1.0]).is_err());
        assert!(CostTable::new(vec![0.0, 2.0, 1.0]).is_err());
        assert!(CostTable::new(vec![]).is_err());
        assert!(AgentType::new(1, 1, 2, vec![0.0, 1.0, 2.0]).is_err());
        assert!(AgentType::new(1, 2, 2, vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn cost_presets() {
        assert_eq!(CostRule::Linear.table(0, 3, 3).unwrap().values(), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(CostRule::Seeding.table(0, 3, 2).unwrap().values(), &[0.0, 2.0, 2.0]);
        assert_eq!(CostRule::UnitSeeding.table(0, 3, 2).unwrap().values(), &[0.0, 1.0, 1.0]);
        let mut map = BTreeMap::new();
        map.insert((1, 1, 1), vec![0.0, 5.0]);
        let rule = CostRule::Table(map);
        assert_eq!(rule.table(1, 1, 1).unwrap().values(), &[0.0, 5.0]);
        assert_eq!(
            rule.table(2, 2, 1),
            Err(TypeStatsError::MissingCost { d: 2, k: 2, r: 1 })
        );
    }

    #[test]
    fn threshold_presets() {
        let g = MultiGraph::new(3, &[(0, 1), (1, 0), (1, 2), (2, 1)]).unwrap();
        let (rho, _) = ThresholdRule::HalfOutDegree.thresholds(&g, false).unwrap();
        assert_eq!(rho.as_slice(), &[0, 1, 0]);
        let (a, _) = ThresholdRule::UniformRandom { seed: 7 }.thresholds(&g, false).unwrap();
        let (b, _) = ThresholdRule::UniformRandom { seed: 7 }.thresholds(&g, false).unwrap();
        assert_eq!(a, b);
        assert!(a.as_slice().iter().zip(g.out_degrees()).all(|(&r, &k)| r >= 1 && r <= k));
        assert!(ThresholdRule::Explicit(vec![2, 0, 0]).thresholds(&g, false).is_err());
        let (c, n) = ThresholdRule::Explicit(vec![2, 0, 0]).thresholds(&g, true).unwrap();
        assert_eq!((c.as_slice(), n), (&[1u32, 0, 0][..], 1));
    }

    #[test]
    fn homogeneous_network_single_type() {
        // directed 4-cycle plus its 2-step chords: in = out = 2
        let g = MultiGraph::new(
            4,
            &[(0, 1), (1, 2), (2, 3), (3, 0), (0, 2), (1, 3), (2, 0), (3, 1)],
        )
        .unwrap();
        let rho = ThresholdVector::new(&g, vec![1; 4]).unwrap();
        let (p, assign) = extract_statistics(&g, &rho, &CostRule::Linear).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.masses(), &[1.0]);
        assert_eq!(assign, vec![0; 4]);
        assert_eq!(p.counts(), Some(&[4u64][..]));
    }

    #[test]
    fn path_statistics() {
        let g = MultiGraph::new(3, &[(0, 1), (1, 0), (1, 2), (2, 1)]).unwrap();
        let rho = ThresholdVector::new(&g, vec![1, 2, 1]).unwrap();
        let (p, assign) = extract_statistics(&g, &rho, &CostRule::Linear).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.mass_of(&ty(1, 1, 1)), 2.0 / 3.0);
        assert_eq!(p.mass_of(&ty(2, 2, 2)), 1.0 / 3.0);
        assert_eq!(assign[0], assign[2]);
        assert_ne!(assign[0], assign[1]);
        assert!(check_well_posed(3, &p).all());
    }

    #[test]
    fn null_intervention_shapes() {
        let p = single(2, 2, 2);
        let xi = null_intervention(&p);
        assert_eq!(xi.masses(), &[vec![1.0, 0.0, 0.0]]);
        assert_eq!(intervention_cost(&xi), 0.0);
        assert_eq!(post_statistics(&p, &xi, false).unwrap(), Statistics {
            counts: None,
            ..p.clone()
        });

        let two = Statistics::from_masses(vec![(ty(1, 1, 1), 0.5), (ty(3, 3, 0), 0.5)]).unwrap();
        let xi = null_intervention(&two);
        assert!(xi.masses().iter().all(|row| row[0] == 0.5));
    }

    #[test]
    fn post_statistics_moves_mass() {
        let p = single(2, 2, 2);
        let xi = StatIntervention::from_reductions(&p, &[(0, 2, 0.3)]).unwrap();
        let q = post_statistics(&p, &xi, false).unwrap();
        assert!((q.mass_of(&ty(2, 2, 2)) - 0.7).abs() < 1e-15);
        assert!((q.mass_of(&ty(2, 2, 0)) - 0.3).abs() < 1e-15);

        let xi = StatIntervention::from_reductions(&p, &[(0, 1, 0.3), (0, 2, 0.2)]).unwrap();
        let q = post_statistics(&p, &xi, false).unwrap();
        assert!((q.mass_of(&ty(2, 2, 2)) - 0.5).abs() < 1e-15);
        assert!((q.mass_of(&ty(2, 2, 1)) - 0.3).abs() < 1e-15);
        assert!((q.mass_of(&ty(2, 2, 0)) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn post_statistics_zero_mass_flag() {
        let p = single(2, 2, 1);
        let xi = StatIntervention::from_reductions(&p, &[(0, 1, 1.0)]).unwrap();
        assert_eq!(post_statistics(&p, &xi, false).unwrap().len(), 1);
        let kept = post_statistics(&p, &xi, true).unwrap();
        assert_eq!(kept.len(), 2);
        assert_eq!(kept.mass_of(&ty(2, 2, 1)), 0.0);
    }

    #[test]
    fn inconsistent_intervention_rejected() {
        let p = single(2, 2, 2);
        let xi = StatIntervention::new(vec![(ty(2, 2, 2), vec![0.5, 0.3, 0.3])]).unwrap();
        assert!(matches!(
            post_statistics(&p, &xi, false),
            Err(TypeStatsError::Inconsistent(_))
        ));
        assert!(StatIntervention::from_reductions(&p, &[(0, 3, 0.1)]).is_err());
        assert!(StatIntervention::from_reductions(&p, &[(0, 1, 0.7), (0, 2, 0.7)]).is_err());
    }

    #[test]
    fn costs() {
        let p = single(2, 2, 2);
        let xi = StatIntervention::from_reductions(&p, &[(0, 1, 0.3), (0, 2, 0.2)]).unwrap();
        assert!((intervention_cost(&xi) - 0.7).abs() < 1e-15);

        let seed_t = AgentType::new(2, 2, 2, CostRule::Seeding.table(2, 2, 2).unwrap().values().to_vec()).unwrap();
        let ps = Statistics::from_masses(vec![(seed_t, 1.0)]).unwrap();
        let xi = StatIntervention::from_reductions(&ps, &[(0, 1, 0.3), (0, 2, 0.2)]).unwrap();
        assert!((intervention_cost(&xi) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn well_posedness_cases() {
        let p = single(3, 3, 1);
        assert!(check_well_posed(2, &p).self_loop_free);
        assert!(!check_well_posed(1, &p).self_loop_free);
        let unbalanced =
            Statistics::from_masses(vec![(ty(1, 3, 1), 0.5), (ty(3, 3, 1), 0.5)]).unwrap();
        assert_eq!(moments(&unbalanced, Moment::D), 2.0);
        assert_eq!(moments(&unbalanced, Moment::K), 3.0);
        assert!(!check_well_posed(2, &unbalanced).degree_balance);
        let thirds = Statistics::from_masses(vec![(ty(1, 1, 1), 2.0 / 3.0), (ty(2, 2, 2), 1.0 / 3.0)]).unwrap();
        assert!(check_well_posed(3, &thirds).integer_counts);
        assert!(!check_well_posed(4, &thirds).integer_counts);
    }

    #[test]
    fn moment_values() {
        let p = single(3, 3, 1);
        assert_eq!(moments(&p, Moment::D), 3.0);
        assert_eq!(moments(&p, Moment::DK), 9.0);
        assert_eq!(nu(&p), 2.0);
        let two = Statistics::from_masses(vec![(ty(1, 1, 0), 0.5), (ty(3, 3, 0), 0.5)]).unwrap();
        assert_eq!(moments(&two, Moment::D), 2.0);
        assert_eq!(moments(&two, Moment::D2), 5.0);
        assert_eq!(moments(&two, Moment::K2), 5.0);
    }

    #[test]
    fn record_round_trip_is_bit_exact() {
        let p = Statistics::from_masses(vec![(ty(1, 1, 1), 2.0 / 3.0), (ty(2, 2, 2), 1.0 / 3.0)]).unwrap();
        let json = serde_json::to_string(&p.to_records()).unwrap();
        let back: Vec<StatRecord> = serde_json::from_str(&json).unwrap();
        let q = Statistics::from_records(&back).unwrap();
        assert_eq!(p.masses(), q.masses());
        assert_eq!(p.types(), q.types());

        let xi = StatIntervention::from_reductions(&p, &[(1, 1, 0.1 / 3.0), (1, 2, 0.2 / 7.0)]).unwrap();
        let json = serde_json::to_string(&xi.to_records()).unwrap();
        let back: Vec<InterventionRecord> = serde_json::from_str(&json).unwrap();
        assert_eq!(StatIntervention::from_records(&back).unwrap(), xi);
    }

    fn arb_stats_and_xi() -> impl Strategy<Value = (Statistics, StatIntervention)> {
        prop::collection::vec((1u32..6, 0u32..6, 1u32..100), 1..6)
            .prop_flat_map(|raw| {
                let n = raw.len();
                (Just(raw), prop::collection::vec(prop::collection::vec(0.0f64..1.0, 7), n))
            })
            .prop_map(|(raw, splits)| {
                let total: u32 = raw.iter().map(|x| x.2).sum();
                let entries: Vec<_> = raw
                    .iter()
                    .map(|&(k, r, w)| (ty(k, k, r.min(k)), w as f64 / total as f64))
                    .collect();
                let p = Statistics::from_masses(entries).unwrap();
                let mut red = Vec::new();
                for (w, (t, m)) in p.iter().enumerate() {
                    let weights = &splits[w % splits.len()][..=t.r as usize];
                    let s: f64 = weights.iter().sum::<f64>() + 1e-9;
                    for eta in 1..=t.r {
                        red.push((w, eta, m * weights[eta as usize] / s * 0.999));
                    }
                }
                let xi = StatIntervention::from_reductions(&p, &red).unwrap();
                (p, xi)
            })
    }

    proptest! {
        #[test]
        fn post_statistics_preserves_mass_and_degrees((p, xi) in arb_stats_and_xi()) {
            let q = post_statistics(&p, &xi, false).unwrap();
            prop_assert!((q.masses().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!((moments(&q, Moment::D) - moments(&p, Moment::D)).abs() < 1e-12);
            prop_assert!((moments(&q, Moment::K) - moments(&p, Moment::K)).abs() < 1e-12);
            prop_assert!(intervention_cost(&xi) >= 0.0);
        }

        #[test]
        fn null_is_identity((p, _xi) in arb_stats_and_xi()) {
            let q = post_statistics(&p, &null_intervention(&p), false).unwrap();
            prop_assert_eq!(q.types(), p.types());
            prop_assert_eq!(q.masses(), p.masses());
        }
    }
}
