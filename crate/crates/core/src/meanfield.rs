//! Mean-field maps of the threshold dynamics on configuration-model networks.
//!
//! `phi_kr(z) = P[Bin(k, z) >= r]` is the probability that an agent with `k`
//! observed links, each pointing to an active agent with probability `z`,
//! meets threshold `r`. Averaging over types gives
//!
//! * `psi_p(z) = sum_w p_w phi_{k_w r_w}(z)`: fraction of active agents;
//! * `phi_p(z) = sum_w p_w d_w phi_{k_w r_w}(z) / <p, d>`: fraction of links
//!   pointing to active agents.
//!
//! Binomial tails use two independent evaluation routes: a term recurrence
//! seeded by a saddle-point pmf (small `k`) and the continued fraction of the
//! regularized incomplete beta function `I_z(r, k - r + 1)` (large `k`).

use thiserror::Error;

use crate::typestats::{
    moments, neumaier_sum, AgentType, Moment, StatIntervention, Statistics, TypeStatsError,
};

#[derive(Debug, Error, PartialEq)]
pub enum MeanFieldError {
    #[error("threshold {r} exceeds out-degree {k}")]
    ThresholdAboveDegree { k: u64, r: u64 },
    #[error("argument {0} outside [0, 1]")]
    OutOfUnitInterval(f64),
    #[error("<p, d> = 0: the link map is undefined")]
    ZeroMeanInDegree,
    #[error("reduction {eta} outside 1..={r}")]
    BadReduction { eta: u32, r: u32 },
    #[error("level {level} exceeds psi(1) = {max}")]
    LevelUnreachable { level: f64, max: f64 },
    #[error(transparent)]
    Stats(#[from] TypeStatsError),
}

pub type Result<T> = std::result::Result<T, MeanFieldError>;

/// Largest `k` evaluated by direct summation; above it the continued
/// fraction is used.
pub const SUMMATION_MAX_K: u64 = 64;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `ln(n!) - (n + 1/2) ln n + n - ln sqrt(2 pi)`, the Stirling remainder.
fn stirlerr(n: u64) -> f64 {
    if n <= 15 {
        let nf = n as f64;
        let ln_fact: f64 = (2..=n).map(|i| (i as f64).ln()).sum();
        return ln_fact - (nf + 0.5) * nf.ln() + nf - LN_SQRT_2PI;
    }
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    let n = n as f64;
    let nn = n * n;
    if n > 500.0 {
        (S0 - S1 / nn) / n
    } else if n > 80.0 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if n > 35.0 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// Deviance term `x ln(x / np) + np - x`, accurate when `x ~ np`.
fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let mut v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let s1 = s + ej / (2 * j + 1) as f64;
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        return s;
    }
    x * (x / np).ln() + np - x
}

/// `P[Bin(k, z) = u]` by the saddle-point expansion (Loader, 2000); relative
/// accuracy near machine precision for any `k`.
pub fn binomial_pmf(k: u64, u: u64, z: f64) -> f64 {
    if u > k {
        return 0.0;
    }
    let q = 1.0 - z;
    if z == 0.0 {
        return if u == 0 { 1.0 } else { 0.0 };
    }
    if q == 0.0 {
        return if u == k { 1.0 } else { 0.0 };
    }
    let kf = k as f64;
    if u == 0 {
        if k == 0 {
            return 1.0;
        }
        let lc = if z < 0.1 {
            -bd0(kf, kf * q) - kf * z
        } else {
            kf * q.ln()
        };
        return lc.exp();
    }
    if u == k {
        let lc = if q < 0.1 {
            -bd0(kf, kf * z) - kf * q
        } else {
            kf * z.ln()
        };
        return lc.exp();
    }
    let uf = u as f64;
    let lc = stirlerr(k) - stirlerr(u) - stirlerr(k - u) - bd0(uf, kf * z) - bd0(kf - uf, kf * q);
    let lf = 2.0 * LN_SQRT_2PI + uf.ln() + (-uf / kf).ln_1p();
    (lc - 0.5 * lf).exp()
}

fn check_args(k: u64, r: u64, z: f64) -> Result<()> {
    if r > k {
        return Err(MeanFieldError::ThresholdAboveDegree { k, r });
    }
    if !(0.0..=1.0).contains(&z) {
        return Err(MeanFieldError::OutOfUnitInterval(z));
    }
    Ok(())
}

/// `P[Bin(k, z) >= r]`, exact at `z in {0, 1}`.
pub fn phi_kr(k: u64, r: u64, z: f64) -> Result<f64> {
    check_args(k, r, z)?;
    Ok(tail(k, r, z))
}

fn tail(k: u64, r: u64, z: f64) -> f64 {
    if k <= SUMMATION_MAX_K {
        tail_by_summation(k, r, z)
    } else {
        tail_by_beta(k, r, z)
    }
}

/// Tail by term recurrence from the pmf at the boundary term, summing away
/// from the mode so terms shrink. Exposed for cross-validation.
pub fn tail_by_summation(k: u64, r: u64, z: f64) -> f64 {
    if r == 0 {
        return 1.0;
    }
    if z == 0.0 {
        return 0.0;
    }
    if z == 1.0 {
        return 1.0;
    }
    let kf = k as f64;
    if r as f64 > kf * z {
        let ratio = z / (1.0 - z);
        let mut t = binomial_pmf(k, r, z);
        let mut sum = t;
        for u in r..k {
            t *= (k - u) as f64 / (u + 1) as f64 * ratio;
            sum += t;
            if t <= sum * 1e-17 {
                break;
            }
        }
        sum.min(1.0)
    } else {
        let ratio = (1.0 - z) / z;
        let mut t = binomial_pmf(k, r - 1, z);
        let mut sum = t;
        for u in (1..r).rev() {
            t *= u as f64 / (k - u + 1) as f64 * ratio;
            sum += t;
            if t <= sum * 1e-17 {
                break;
            }
        }
        (1.0 - sum).max(0.0)
    }
}

/// Tail as `I_z(r, k - r + 1)` by the modified Lentz continued fraction,
/// using the reflection `1 - I_{1-z}(k - r + 1, r)` past the mean.
/// Exposed for cross-validation.
pub fn tail_by_beta(k: u64, r: u64, z: f64) -> f64 {
    if r == 0 {
        return 1.0;
    }
    if z == 0.0 {
        return 0.0;
    }
    if z == 1.0 {
        return 1.0;
    }
    let a = r as f64;
    let b = (k - r + 1) as f64;
    // x^a (1-x)^b / (a B(a, b)) = (1 - z) P[Bin(k, z) = r]
    let scaled = (1.0 - z) * binomial_pmf(k, r, z);
    if z < (a + 1.0) / (a + b + 2.0) {
        match beta_cf(a, b, z) {
            Some(cf) => (scaled * cf).min(1.0),
            None => tail_by_summation(k, r, z),
        }
    } else {
        match beta_cf(b, a, 1.0 - z) {
            Some(cf) => (1.0 - scaled * a / b * cf).max(0.0),
            None => tail_by_summation(k, r, z),
        }
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> Option<f64> {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..20_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            return Some(h);
        }
    }
    None
}

/// `psi_p` and `phi_p` bound to one statistics, with tails shared across
/// types of equal `(k, r)`.
#[derive(Debug, Clone)]
pub struct MeanFieldCurve {
    // (k, r, weight in psi, weight in phi)
    groups: Vec<(u64, u64, f64, f64)>,
    mean_d: f64,
}

impl MeanFieldCurve {
    pub fn new(p: &Statistics) -> Self {
        let mean_d = moments(p, Moment::D);
        let mut groups: Vec<(u64, u64, f64, f64)> = Vec::new();
        let mut keyed: std::collections::BTreeMap<(u64, u64), (Vec<f64>, Vec<f64>)> =
            Default::default();
        for (t, m) in p.support() {
            let e = keyed.entry((t.k as u64, t.r as u64)).or_default();
            e.0.push(m);
            e.1.push(m * t.d as f64);
        }
        for ((k, r), (wp, wd)) in keyed {
            let wpsi = neumaier_sum(wp.into_iter());
            let wphi = if mean_d > 0.0 {
                neumaier_sum(wd.into_iter()) / mean_d
            } else {
                0.0
            };
            groups.push((k, r, wpsi, wphi));
        }
        Self { groups, mean_d }
    }

    pub fn mean_in_degree(&self) -> f64 {
        self.mean_d
    }

    pub fn psi(&self, z: f64) -> Result<f64> {
        unit(z)?;
        Ok(neumaier_sum(self.groups.iter().map(|&(k, r, w, _)| w * tail(k, r, z))).clamp(0.0, 1.0))
    }

    pub fn phi(&self, z: f64) -> Result<f64> {
        unit(z)?;
        if self.mean_d <= 0.0 {
            return Err(MeanFieldError::ZeroMeanInDegree);
        }
        Ok(neumaier_sum(self.groups.iter().map(|&(k, r, _, w)| w * tail(k, r, z))).clamp(0.0, 1.0))
    }

    /// `(psi(z), phi(z))` from one pass over the tails.
    pub fn both(&self, z: f64) -> Result<(f64, f64)> {
        unit(z)?;
        if self.mean_d <= 0.0 {
            return Err(MeanFieldError::ZeroMeanInDegree);
        }
        let tails: Vec<f64> = self.groups.iter().map(|&(k, r, _, _)| tail(k, r, z)).collect();
        let psi = neumaier_sum(self.groups.iter().zip(&tails).map(|(g, t)| g.2 * t));
        let phi = neumaier_sum(self.groups.iter().zip(&tails).map(|(g, t)| g.3 * t));
        Ok((psi.clamp(0.0, 1.0), phi.clamp(0.0, 1.0)))
    }

    /// `inf { z in [0, 1] : psi(z) >= level }` by 60 bisection steps.
    pub fn psi_inverse(&self, level: f64) -> Result<f64> {
        unit(level)?;
        if level <= 0.0 {
            return Ok(0.0);
        }
        let top = self.psi(1.0)?;
        if level > top {
            return Err(MeanFieldError::LevelUnreachable { level, max: top });
        }
        if level >= 1.0 {
            // psi < 1 on [0, 1) iff some positive-mass type has r >= 1.
            let binding = self.groups.iter().any(|&(_, r, w, _)| r >= 1 && w > 0.0);
            return Ok(if binding { 1.0 } else { 0.0 });
        }
        if self.psi(0.0)? >= level {
            return Ok(0.0);
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.psi(mid)? >= level {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }
}

fn unit(z: f64) -> Result<()> {
    if (0.0..=1.0).contains(&z) {
        Ok(())
    } else {
        Err(MeanFieldError::OutOfUnitInterval(z))
    }
}

pub fn psi(p: &Statistics, z: f64) -> Result<f64> {
    MeanFieldCurve::new(p).psi(z)
}

pub fn phi(p: &Statistics, z: f64) -> Result<f64> {
    MeanFieldCurve::new(p).phi(z)
}

pub fn psi_inverse(p: &Statistics, level: f64) -> Result<f64> {
    MeanFieldCurve::new(p).psi_inverse(level)
}

/// `a_w(eta, z) = d_w (phi_{k, r - eta}(z) - phi_{k, r}(z)) / <p0, d>`: the
/// gain in `phi` per unit of type-`w` mass lowered by `eta`.
pub fn coeff_a(w: &AgentType, eta: u32, z: f64, mean_d0: f64) -> Result<f64> {
    if eta == 0 || eta > w.r {
        return Err(MeanFieldError::BadReduction { eta, r: w.r });
    }
    unit(z)?;
    if mean_d0 <= 0.0 {
        return Err(MeanFieldError::ZeroMeanInDegree);
    }
    let k = w.k as u64;
    let diff = tail(k, (w.r - eta) as u64, z) - tail(k, w.r as u64, z);
    Ok((w.d as f64 * diff / mean_d0).max(0.0))
}

/// `phi_{p(xi)}(z)` as `phi_{p0}(z) + sum a_w(eta, z) xi_w(eta)`.
pub fn phi_decomposed(p0: &Statistics, xi: &StatIntervention, z: f64) -> Result<f64> {
    xi.validate_against(p0)?;
    let curve = MeanFieldCurve::new(p0);
    let base = curve.phi(z)?;
    let mean_d0 = curve.mean_in_degree();
    let mut terms = vec![base];
    for (t, row) in xi.iter() {
        for (eta, &m) in row.iter().enumerate().skip(1) {
            if m != 0.0 {
                terms.push(coeff_a(t, eta as u32, z, mean_d0)? * m);
            }
        }
    }
    Ok(neumaier_sum(terms.into_iter()))
}

/// Mean-field trajectory `(z(t), y(t))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Recursion {
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub converged: bool,
}

impl Recursion {
    /// Value at `t`, holding the last value past the end.
    pub fn z_at(&self, t: usize) -> f64 {
        self.z[t.min(self.z.len() - 1)]
    }

    pub fn y_at(&self, t: usize) -> f64 {
        self.y[t.min(self.y.len() - 1)]
    }
}

/// `y(t+1) = psi(z(t))`, `z(t+1) = phi(z(t))` from `y(0) = z(0) = 0`.
pub fn recursion(p: &Statistics, t_max: usize) -> Result<Recursion> {
    recursion_from(p, 0.0, t_max)
}

/// As [`recursion`] with `z(0) = z0`; `y(0)` stays 0.
pub fn recursion_from(p: &Statistics, z0: f64, t_max: usize) -> Result<Recursion> {
    unit(z0)?;
    let curve = MeanFieldCurve::new(p);
    let mut z = vec![z0];
    let mut y = vec![0.0];
    let mut converged = false;
    for _ in 0..t_max {
        let cur = *z.last().unwrap();
        let (ps, ph) = curve.both(cur)?;
        z.push(ph);
        y.push(ps);
        if (ph - cur).abs() < 1e-12 {
            converged = true;
            break;
        }
    }
    Ok(Recursion { z, y, converged })
}

/// Uniform bound `d_max 2^(k_max + 1) k_max / <p0, d> + 1` on the slope of
/// `phi_{p(xi)}(z) - z`, over types with positive mass.
pub fn derivative_bound(p0: &Statistics) -> f64 {
    let d_max = p0.support().map(|(t, _)| t.d).max().unwrap_or(0) as f64;
    let k_max = p0.support().map(|(t, _)| t.k).max().unwrap_or(0) as i32;
    let mean_d = moments(p0, Moment::D);
    if mean_d <= 0.0 {
        return f64::INFINITY;
    }
    d_max * 2f64.powi(k_max + 1) * k_max as f64 / mean_d + 1.0
}
