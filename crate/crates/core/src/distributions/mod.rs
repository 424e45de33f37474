//! Tail-specified distributions.
//!
//! The primitive is the tail `P(|X| > t)` (strict inequality at atoms).
//! Truncated moments come from closed forms where they exist and otherwise
//! from the integration-by-parts identity
//! `E(|X|^r 1(|X| ≤ t)) = ∫_0^t r x^{r-1} P(|X| > x) dx − t^r P(|X| > t)`.

mod family;
pub mod quadrature;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slowly_varying::{Normalizer, SlowlyVaryingFn};

pub use family::{
    compose_check, compose_threshold, counterexample_value, envelope, uniform_integrability_gap, VaryingFamily,
};

/// A law on the real line described through its absolute-value tail.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TailDistribution {
    /// `P(|X| > t) = min(1, c t^{-q} / L0(t))`, symmetric unless `one_sided`.
    Pareto(ParetoTail),
    /// `X = ±v` with probability 1/2 each.
    TwoPoint { v: f64 },
    /// `X ≡ c`.
    PointMass { c: f64 },
    /// `X = ±1` with probability 1/2 each.
    Rademacher,
    /// Uniform on `[-v, v]`.
    Uniform { v: f64 },
    /// `X = ±v` with probability `mass / 2` each, `0` otherwise.
    Spike { v: f64, mass: f64 },
    /// Finitely many atoms `(value, probability)`.
    Discrete { atoms: Vec<(f64, f64)> },
}

/// Pareto-type tail with a slowly varying correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParetoSpec", into = "ParetoSpec")]
pub struct ParetoTail {
    q: f64,
    c: f64,
    // Regularized so that t^q L0(t) is strictly increasing.
    l0: SlowlyVaryingFn,
    one_sided: bool,
    // Tail equals 1 on [0, x0].
    x0: f64,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParetoSpec {
    q: f64,
    #[serde(default = "one")]
    c: f64,
    #[serde(rename = "L0", default = "SlowlyVaryingFn::one")]
    l0: SlowlyVaryingFn,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    one_sided: bool,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<ParetoSpec> for ParetoTail {
    type Error = Error;
    fn try_from(s: ParetoSpec) -> Result<Self> {
        ParetoTail::new(s.q, s.c, s.l0, s.one_sided)
    }
}

impl From<ParetoTail> for ParetoSpec {
    fn from(p: ParetoTail) -> Self {
        ParetoSpec {
            q: p.q,
            c: p.c,
            l0: p.l0.unregularized(),
            one_sided: p.one_sided,
        }
    }
}

impl ParetoTail {
    pub fn new(q: f64, c: f64, l0: SlowlyVaryingFn, one_sided: bool) -> Result<Self> {
        if !(q > 0.0 && q.is_finite() && c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "pareto needs q > 0 and c > 0, got q={q}, c={c}"
            )));
        }
        let l0 = if l0.is_constant() { l0 } else { l0.monotone_adjust(q)? };
        let mut tail = Self {
            q,
            c,
            l0,
            one_sided,
            x0: 0.0,
        };
        tail.x0 = tail.solve_ln_tail(0.0).exp();
        Ok(tail)
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn one_sided(&self) -> bool {
        self.one_sided
    }

    /// `ln(c t^{-q} / L0(t))` at `t = e^u`, before capping at 1.
    fn ln_raw_tail(&self, u: f64) -> f64 {
        self.c.ln() - self.q * u - self.l0.ln_eval_ln(u)
    }

    /// `u` with `ln_raw_tail(u) = level`; `ln_raw_tail` is strictly decreasing.
    fn solve_ln_tail(&self, level: f64) -> f64 {
        if let Some((k, 0.0, 0.0)) = self.l0.closed_params() {
            return ((self.c / k).ln() - level) / self.q;
        }
        let (mut lo, mut hi) = (-50.0f64, 50.0f64);
        while self.ln_raw_tail(lo) < level {
            lo *= 2.0;
        }
        while self.ln_raw_tail(hi) > level {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.ln_raw_tail(mid) > level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn tail(&self, t: f64) -> f64 {
        self.scaled_tail(1.0, t)
    }

    /// `s · P(|X| > t)`, with the factor folded in before dividing.
    fn scaled_tail(&self, s: f64, t: f64) -> f64 {
        if t <= self.x0 {
            s
        } else if let Some((k, 0.0, 0.0)) = self.l0.closed_params() {
            let tq = if self.q == 1.0 { t } else { t.powf(self.q) };
            ((s * self.c) / (k * tq)).min(s)
        } else {
            s * self.ln_raw_tail(t.ln()).exp().min(1.0)
        }
    }

    fn abs_quantile(&self, s: f64) -> f64 {
        if s >= 1.0 {
            return self.x0;
        }
        if let Some((k, 0.0, 0.0)) = self.l0.closed_params() {
            return (self.c / (k * s)).powf(1.0 / self.q);
        }
        self.solve_ln_tail(s.ln()).exp().max(self.x0)
    }

    /// Effective constant when `L0` is constant.
    fn const_c(&self) -> Option<f64> {
        match self.l0.closed_params() {
            Some((k, 0.0, 0.0)) => Some(self.c / k),
            _ => None,
        }
    }

    fn truncated_moment(&self, r: f64, t: f64) -> Result<f64> {
        if t <= self.x0 {
            return Ok(0.0);
        }
        let (q, x0) = (self.q, self.x0);
        if let Some(c) = self.const_c() {
            let body = if r == q {
                r * c * (t / x0).ln()
            } else {
                r * c * (t.powf(r - q) - x0.powf(r - q)) / (r - q)
            };
            return Ok(x0.powf(r) + body - c * t.powf(r - q));
        }
        let quad = quadrature::integrate_dyadic(|x| r * x.powf(r - 1.0) * self.tail(x), x0, t)?;
        Ok((x0.powf(r) + quad.value - t.powf(r) * self.tail(t)).max(0.0))
    }

    fn upper_moment(&self, r: f64, t: f64) -> Result<f64> {
        let s = t.max(self.x0);
        if r > self.q {
            return Ok(f64::INFINITY);
        }
        if let Some(c) = self.const_c() {
            if r == self.q {
                return Ok(f64::INFINITY);
            }
            return Ok(c * s.powf(r - self.q) * self.q / (self.q - r));
        }
        let quad = quadrature::integrate_to_infinity(|x| r * x.powf(r - 1.0) * self.tail(x), s)?;
        Ok(s.powf(r) * self.tail(s) + quad.value)
    }
}

impl TailDistribution {
    /// Two-sided Pareto `P(|X| > t) = min(1, c t^{-q})`.
    pub fn pareto(q: f64, c: f64) -> Result<Self> {
        Ok(Self::Pareto(ParetoTail::new(q, c, SlowlyVaryingFn::one(), false)?))
    }

    pub fn pareto_with(q: f64, c: f64, l0: SlowlyVaryingFn, one_sided: bool) -> Result<Self> {
        Ok(Self::Pareto(ParetoTail::new(q, c, l0, one_sided)?))
    }

    /// Validates parameters that serde cannot check.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        match self {
            Self::Pareto(_) | Self::Rademacher => Ok(()),
            Self::TwoPoint { v } | Self::Uniform { v } if !(*v > 0.0 && v.is_finite()) => {
                bad(format!("v must be positive, got {v}"))
            }
            Self::PointMass { c } if !c.is_finite() => bad(format!("point mass must be finite, got {c}")),
            Self::Spike { v, mass } if !(*v >= 0.0 && (0.0..=1.0).contains(mass)) => {
                bad(format!("spike needs v >= 0 and mass in [0, 1], got v={v}, mass={mass}"))
            }
            Self::Discrete { atoms } => {
                let total: f64 = atoms.iter().map(|a| a.1).sum();
                if atoms.is_empty()
                    || atoms.iter().any(|&(x, w)| !x.is_finite() || !(w >= 0.0))
                    || (total - 1.0).abs() > 1e-9
                {
                    bad(format!(
                        "discrete atoms must be finite with probabilities summing to 1 (sum {total})"
                    ))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Equally weighted atoms.
    pub fn discrete_uniform(values: &[f64]) -> Self {
        let w = 1.0 / values.len() as f64;
        Self::Discrete {
            atoms: values.iter().map(|&x| (x, w)).collect(),
        }
    }

    /// `P(|X| > t)`.
    pub fn tail(&self, t: f64) -> f64 {
        match self {
            Self::Pareto(p) => p.tail(t),
            Self::TwoPoint { v } => f64::from(t < *v),
            Self::PointMass { c } => f64::from(t < c.abs()),
            Self::Rademacher => f64::from(t < 1.0),
            Self::Uniform { v } => (1.0 - t / v).clamp(0.0, 1.0),
            Self::Spike { v, mass } => {
                if t < *v {
                    *mass
                } else {
                    0.0
                }
            }
            Self::Discrete { atoms } => atoms.iter().filter(|a| a.0.abs() > t).map(|a| a.1).sum(),
        }
    }

    /// `E(|X|^r 1(|X| ≤ t))` for `r > 0`.
    pub fn truncated_moment(&self, r: f64, t: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "moment order must be positive, got {r}"
            )));
        }
        if t <= 0.0 {
            return Ok(0.0);
        }
        let atom = |x: f64, w: f64| if x.abs() <= t { w * x.abs().powf(r) } else { 0.0 };
        Ok(match self {
            Self::Pareto(p) => p.truncated_moment(r, t)?,
            Self::TwoPoint { v } => atom(*v, 1.0),
            Self::PointMass { c } => atom(*c, 1.0),
            Self::Rademacher => atom(1.0, 1.0),
            Self::Uniform { v } => t.min(*v).powf(r + 1.0) / ((r + 1.0) * v),
            Self::Spike { v, mass } => atom(*v, *mass),
            Self::Discrete { atoms } => atoms.iter().map(|&(x, w)| atom(x, w)).sum(),
        })
    }

    /// `E(|X|^r 1(|X| > t))`; may be infinite.
    pub fn upper_moment(&self, r: f64, t: f64) -> Result<f64> {
        if !(r > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "moment order must be positive, got {r}"
            )));
        }
        let atom = |x: f64, w: f64| if x.abs() > t { w * x.abs().powf(r) } else { 0.0 };
        Ok(match self {
            Self::Pareto(p) => p.upper_moment(r, t)?,
            Self::TwoPoint { v } => atom(*v, 1.0),
            Self::PointMass { c } => atom(*c, 1.0),
            Self::Rademacher => atom(1.0, 1.0),
            Self::Uniform { v } => {
                let s = t.clamp(0.0, *v);
                (v.powf(r + 1.0) - s.powf(r + 1.0)) / ((r + 1.0) * v)
            }
            Self::Spike { v, mass } => atom(*v, *mass),
            Self::Discrete { atoms } => atoms.iter().map(|&(x, w)| atom(x, w)).sum(),
        })
    }

    /// `E|X|^r`; may be infinite.
    pub fn moment(&self, r: f64) -> Result<f64> {
        Ok(self.truncated_moment(r, 0.0)? + self.upper_moment(r, 0.0)?)
    }

    /// Whether `X` and `-X` have the same law.
    pub fn is_symmetric(&self) -> bool {
        match self {
            Self::Pareto(p) => !p.one_sided,
            Self::PointMass { c } => *c == 0.0,
            Self::Discrete { atoms } => {
                let mut pos: Vec<(f64, f64)> = atoms.iter().filter(|a| a.0 > 0.0).cloned().collect();
                let mut neg: Vec<(f64, f64)> = atoms.iter().filter(|a| a.0 < 0.0).map(|a| (-a.0, a.1)).collect();
                pos.sort_by(|a, b| a.partial_cmp(b).unwrap());
                neg.sort_by(|a, b| a.partial_cmp(b).unwrap());
                pos == neg
            }
            _ => true,
        }
    }

    /// `E(X 1(|X| ≤ t))` (signed).
    pub fn truncated_mean(&self, t: f64) -> Result<f64> {
        if t < 0.0 || self.is_symmetric() {
            return Ok(0.0);
        }
        Ok(match self {
            Self::Pareto(p) if p.one_sided => p.truncated_moment(1.0, t)?,
            Self::PointMass { c } => {
                if c.abs() <= t {
                    *c
                } else {
                    0.0
                }
            }
            Self::Discrete { atoms } => atoms.iter().filter(|a| a.0.abs() <= t).map(|a| a.0 * a.1).sum(),
            _ => 0.0,
        })
    }

    /// `E X`, or `None` when `E|X| = ∞`.
    pub fn mean(&self) -> Result<Option<f64>> {
        if self.moment(1.0)?.is_infinite() {
            return Ok(None);
        }
        Ok(Some(match self {
            Self::Pareto(p) if p.one_sided => p.upper_moment(1.0, 0.0)?,
            Self::PointMass { c } => *c,
            Self::Discrete { atoms } => atoms.iter().map(|a| a.0 * a.1).sum(),
            _ => 0.0,
        }))
    }

    /// `E(X 1(|X| > t))` (signed); `None` when `E|X| = ∞`.
    pub fn upper_mean(&self, t: f64) -> Result<Option<f64>> {
        Ok(self.mean()?.map(|m| m - self.truncated_mean(t).unwrap_or(0.0)))
    }

    /// `inf{x ≥ 0 : P(|X| > x) ≤ s}` for continuous kinds.
    fn abs_quantile(&self, s: f64) -> f64 {
        match self {
            Self::Pareto(p) => p.abs_quantile(s),
            Self::Uniform { v } => v * (1.0 - s).max(0.0),
            _ => unreachable!("abs_quantile is only used for continuous kinds"),
        }
    }

    fn is_continuous(&self) -> bool {
        matches!(self, Self::Pareto(_) | Self::Uniform { .. })
    }

    fn atoms(&self) -> Vec<(f64, f64)> {
        let mut atoms = match self {
            Self::TwoPoint { v } => vec![(-v, 0.5), (*v, 0.5)],
            Self::PointMass { c } => vec![(*c, 1.0)],
            Self::Rademacher => vec![(-1.0, 0.5), (1.0, 0.5)],
            Self::Spike { v, mass } => vec![(-v, 0.5 * mass), (0.0, 1.0 - mass), (*v, 0.5 * mass)],
            Self::Discrete { atoms } => atoms.clone(),
            _ => Vec::new(),
        };
        atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        atoms
    }

    /// Left-continuous inverse of the distribution function, `u ∈ (0, 1)`.
    /// For symmetric continuous laws the flat stretch at `u = 1/2` maps to 0.
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            Self::Pareto(p) if p.one_sided => p.abs_quantile(1.0 - u),
            Self::Pareto(_) | Self::Uniform { .. } => {
                if u < 0.5 {
                    -self.abs_quantile(2.0 * u)
                } else if u > 0.5 {
                    self.abs_quantile(2.0 * (1.0 - u))
                } else {
                    0.0
                }
            }
            _ => {
                let atoms = self.atoms();
                let mut cum = 0.0;
                for &(x, w) in &atoms {
                    cum += w;
                    if cum >= u {
                        return x;
                    }
                }
                atoms.last().map_or(0.0, |a| a.0)
            }
        }
    }

    /// The `q`-point quantile lattice `F^{-1}((w + 0.5)/q)`, `w = 0..q`.
    /// Symmetric continuous laws get an exactly antisymmetric lattice.
    pub fn lattice(&self, q: usize) -> Vec<f64> {
        if self.is_continuous() && self.is_symmetric() {
            let mut out = vec![0.0; q];
            for w in 0..q {
                let mirror = q - 1 - w;
                if w < mirror {
                    let x = self.abs_quantile((2 * w + 1) as f64 / q as f64);
                    out[w] = -x;
                    out[mirror] = x;
                }
            }
            out
        } else {
            (0..q).map(|w| self.quantile((w as f64 + 0.5) / q as f64)).collect()
        }
    }

    /// Draws one variate.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Pareto(p) => {
                let s = 1.0 - rng.random::<f64>();
                let x = p.abs_quantile(s);
                if p.one_sided || rng.random::<bool>() {
                    x
                } else {
                    -x
                }
            }
            Self::TwoPoint { v } => {
                if rng.random::<bool>() {
                    *v
                } else {
                    -v
                }
            }
            Self::PointMass { c } => *c,
            Self::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            Self::Uniform { v } => v * (2.0 * rng.random::<f64>() - 1.0),
            Self::Spike { v, mass } => {
                let u = rng.random::<f64>();
                if u < 0.5 * mass {
                    *v
                } else if u < *mass {
                    -v
                } else {
                    0.0
                }
            }
            Self::Discrete { .. } => self.quantile(rng.random::<f64>().max(f64::MIN_POSITIVE)),
        }
    }
}

/// `n · P(|X| > b_n)`.
pub fn gut_condition(d: &TailDistribution, norm: &Normalizer, n: u64) -> f64 {
    let b = norm.value(n);
    match d {
        TailDistribution::Pareto(p) => p.scaled_tail(n as f64, b),
        _ => n as f64 * d.tail(b),
    }
}
