//! Index-dependent families and uniform-integrability diagnostics.

use serde::{Deserialize, Serialize};

use super::{quadrature, TailDistribution};
use crate::error::{Error, Result};
use crate::slowly_varying::SlowlyVaryingFn;

/// Below this index harmonic numbers are summed exactly.
const HARMONIC_EXACT: u64 = 256;

/// `n^{1/p}`, the atom of the `n`-th counterexample member.
pub fn counterexample_value(n: u64, p: f64) -> f64 {
    (n as f64).powf(1.0 / p)
}

/// Rule `n ↦` law of `X_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VaryingFamily {
    /// Every `X_n` has the same law.
    Identical { law: TailDistribution },
    /// `X_n ∈ {0, ±n^{1/p}}` with probabilities `{1 − 1/n, 1/(2n), 1/(2n)}`.
    Counterexample { p: f64 },
}

impl VaryingFamily {
    pub fn counterexample(p: f64) -> Result<Self> {
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::InvalidParameter(format!("counterexample needs p > 0, got {p}")));
        }
        Ok(Self::Counterexample { p })
    }

    /// Law of `X_n`, `n ≥ 1`.
    pub fn member(&self, n: u64) -> TailDistribution {
        match self {
            Self::Identical { law } => law.clone(),
            Self::Counterexample { p } => TailDistribution::Spike {
                v: counterexample_value(n, *p),
                mass: 1.0 / n as f64,
            },
        }
    }

    /// `P(|X_n| > t)`.
    pub fn tail(&self, n: u64, t: f64) -> f64 {
        self.member(n).tail(t)
    }

    /// Smallest `n ≥ 1` with `n^{1/p} > x` for the counterexample; `None`
    /// beyond the `u64` range.
    pub(crate) fn first_exceeding(p: f64, x: f64) -> Option<u64> {
        if x < 1.0 {
            return Some(1);
        }
        let guess = x.powf(p).floor();
        if guess >= 2f64.powi(62) {
            return None;
        }
        let mut n = (guess as u64).max(1);
        while n > 1 && counterexample_value(n - 1, p) > x {
            n -= 1;
        }
        while counterexample_value(n, p) <= x {
            n += 1;
        }
        Some(n)
    }

    /// `Σ_{i=lo}^{hi} P(|X_i| > t)`.
    pub fn tail_sum_range(&self, lo: u64, hi: u64, t: f64) -> f64 {
        if hi < lo {
            return 0.0;
        }
        match self {
            Self::Identical { law } => (hi - lo + 1) as f64 * law.tail(t),
            Self::Counterexample { p } => match Self::first_exceeding(*p, t) {
                Some(m) if m.max(lo) <= hi => harmonic_diff(m.max(lo).max(1) - 1, hi),
                _ => 0.0,
            },
        }
    }

    /// `Σ_{i=1}^{k} E(X_i 1(|X_i| ≤ t))`.
    pub fn truncated_mean_sum(&self, k: u64, t: f64) -> Result<f64> {
        match self {
            Self::Identical { law } => Ok(k as f64 * law.truncated_mean(t)?),
            Self::Counterexample { .. } => Ok(0.0),
        }
    }
}

/// `H_n − ln n − γ` for `n > HARMONIC_EXACT`, asymptotic series.
fn harmonic_remainder(n: f64) -> f64 {
    let n2 = n * n;
    1.0 / (2.0 * n) - 1.0 / (12.0 * n2) + 1.0 / (120.0 * n2 * n2) - 1.0 / (252.0 * n2 * n2 * n2)
}

/// `H_b − H_a` for `a ≤ b`.
fn harmonic_diff(a: u64, b: u64) -> f64 {
    if b - a <= HARMONIC_EXACT {
        return ((a + 1)..=b).rev().map(|i| 1.0 / i as f64).sum();
    }
    if a < HARMONIC_EXACT {
        return harmonic_diff(a, HARMONIC_EXACT) + harmonic_diff(HARMONIC_EXACT, b);
    }
    let (x, y) = (a as f64, b as f64);
    (y / x).ln() + harmonic_remainder(y) - harmonic_remainder(x)
}

/// `H_n`.
#[cfg(test)]
pub(crate) fn harmonic(n: u64) -> f64 {
    if n <= HARMONIC_EXACT {
        harmonic_diff(0, n)
    } else {
        harmonic_diff(0, HARMONIC_EXACT) + harmonic_diff(HARMONIC_EXACT, n)
    }
}

/// `sup_n P(|X_n| > x)`, the tail of the smallest dominating law.
pub fn envelope(fam: &VaryingFamily, x: f64) -> f64 {
    match fam {
        VaryingFamily::Identical { law } => law.tail(x),
        VaryingFamily::Counterexample { p } => match VaryingFamily::first_exceeding(*p, x) {
            Some(n) => 1.0 / n as f64,
            None => x.powf(-p),
        },
    }
}

/// `sup_n E(Y_n 1(Y_n > a))` with `Y_n = |X_n|^p L(|X_n|^p)`.
///
/// Exact for constant `L`. For other `L` the counterexample supremum is taken
/// over indices up to `10^12` and continuous laws integrate by parts with a
/// numerical derivative of `x ↦ x^p L(x^p)`.
pub fn uniform_integrability_gap(fam: &VaryingFamily, p: f64, l: &SlowlyVaryingFn, a: f64) -> Result<f64> {
    if !(a > 0.0) || !(p > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "ui gap needs a > 0 and p > 0 (got a={a}, p={p})"
        )));
    }
    let f = |x: f64| {
        let y = x.powf(p);
        y * l.eval(y)
    };
    match fam {
        VaryingFamily::Counterexample { p: q } => {
            // Y_n = y L(y) with y = n^{p/q} on an event of probability 1/n.
            let term = |n: u64| {
                let y = f(counterexample_value(n, *q));
                if y > a {
                    y / n as f64
                } else {
                    0.0
                }
            };
            if l.is_constant() && p == *q {
                let c = l.eval(1.0);
                return Ok(if a.is_finite() { c } else { 0.0 });
            }
            let mut best = 0.0f64;
            let mut n = 1u64;
            while n <= 1_000_000_000_000 {
                best = best.max(term(n));
                n = if n < 10_000 { n + 1 } else { n + n / 1000 };
            }
            Ok(best)
        }
        VaryingFamily::Identical { law } => identical_ui_gap(law, p, l, a, f),
    }
}

fn identical_ui_gap(
    law: &TailDistribution,
    p: f64,
    l: &SlowlyVaryingFn,
    a: f64,
    f: impl Fn(f64) -> f64,
) -> Result<f64> {
    match law {
        TailDistribution::Pareto(_) | TailDistribution::Uniform { .. } => {
            // t with f(t) = a; f is increasing on the relevant range.
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            while f(hi) <= a {
                hi *= 2.0;
                if !hi.is_finite() {
                    return Ok(0.0);
                }
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f(mid) > a {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let t = hi;
            if l.is_constant() {
                return Ok(l.eval(1.0) * law.upper_moment(p, t)?);
            }
            let df = |x: f64| {
                let h = 1e-6 * x;
                (f(x + h) - f(x - h)) / (2.0 * h)
            };
            let q = quadrature::integrate_to_infinity(|x| df(x) * law.tail(x), t)?;
            Ok(f(t) * law.tail(t) + q.value)
        }
        _ => {
            let atoms = law.atoms();
            Ok(atoms
                .iter()
                .map(|&(x, w)| {
                    let y = f(x.abs());
                    if y > a {
                        w * y
                    } else {
                        0.0
                    }
                })
                .sum())
        }
    }
}

/// `f(g(n))/n` at `n = e^u` with `f(x) = x^p L(x^p)` and
/// `g(x) = x^{1/p} L̃^{1/p}(x)`, which reduces to `L̃(n) L(n L̃(n))`.
/// Without an analytic conjugate the numeric fixed point stands in for `L̃`.
pub fn compose_check_ln(p: f64, l: &SlowlyVaryingFn, u: f64) -> Result<f64> {
    if !(p > 0.0) {
        return Err(Error::InvalidParameter(format!("compose_check needs p > 0, got {p}")));
    }
    let ln_conj = match l.de_bruijn_conjugate() {
        Ok(conj) => conj.ln_eval_ln(u),
        Err(Error::NoAnalyticConjugate(_)) => l.de_bruijn_numeric_ln(u.max(1.0), 1e-12)?.ln(),
        Err(e) => return Err(e),
    };
    Ok((ln_conj + l.ln_eval_ln(u + ln_conj)).exp())
}

/// [`compose_check_ln`] at an integer `n`.
pub fn compose_check(p: f64, l: &SlowlyVaryingFn, n: u64) -> Result<f64> {
    compose_check_ln(p, l, (n.max(1) as f64).ln())
}

/// Smallest `ln n` on the grid `{0.1 k : k ≤ 10 u_max}` from which on
/// [`compose_check_ln`] stays above 1/2; `None` if it fails at `u_max`.
pub fn compose_threshold(p: f64, l: &SlowlyVaryingFn, u_max: f64) -> Result<Option<f64>> {
    let steps = (u_max * 10.0).floor() as u64;
    let mut threshold = None;
    for k in 0..=steps {
        let u = k as f64 / 10.0;
        if compose_check_ln(p, l, u)? > 0.5 {
            threshold.get_or_insert(u);
        } else {
            threshold = None;
        }
    }
    Ok(threshold)
}
