//! Slowly varying functions, normalizing sequences and de Bruijn conjugates.
//!
//! Every logarithm here follows the convention `log(x) = ln(max{x, e})`, so
//! all built-in functions are total and positive on `[0, ∞)`. The built-in
//! family is `c · log^γ · loglog^δ`; an escape hatch accepts arbitrary
//! evaluators, which lose analytic conjugates and closed-form thresholds.

use std::f64::consts::E;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Grid step and upper end of the regularization search.
pub const RAMP_GRID_STEP: f64 = 0.01;
pub const RAMP_GRID_MAX: f64 = 1e6;

const FIXED_POINT_DAMPING: f64 = 0.5;
pub const FIXED_POINT_MAX_ITER: usize = 200;

/// `ln(max{x, e})`.
pub fn log_conv(x: f64) -> f64 {
    if x > E {
        x.ln()
    } else {
        1.0
    }
}

/// Evaluator signature for user-supplied slowly varying functions.
pub type CustomEval = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Shape {
    Closed { coef: f64, log_pow: f64, loglog_pow: f64 },
    Custom { name: String, eval: CustomEval },
}

impl PartialEq for Shape {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (
                Shape::Closed {
                    coef: a,
                    log_pow: b,
                    loglog_pow: c,
                },
                Shape::Closed {
                    coef: x,
                    log_pow: y,
                    loglog_pow: z,
                },
            ) => a == x && b == y && c == z,
            (Shape::Custom { name: a, .. }, Shape::Custom { name: b, .. }) => a == b,
            _ => false,
        }
    }
}

/// Linear ramp `L_1(x) = value · x / threshold` on `[0, threshold)`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Ramp {
    threshold: f64,
    value: f64,
}

/// A slowly varying function, optionally regularized near the origin.
#[derive(Clone, PartialEq)]
pub struct SlowlyVaryingFn {
    shape: Shape,
    ramp: Option<Ramp>,
}

impl SlowlyVaryingFn {
    /// `c · log^γ(x) · loglog^δ(x)`.
    pub fn closed(coef: f64, log_pow: f64, loglog_pow: f64) -> Self {
        assert!(coef > 0.0 && coef.is_finite(), "coefficient must be positive");
        assert!(log_pow.is_finite() && loglog_pow.is_finite());
        Self {
            shape: Shape::Closed {
                coef,
                log_pow,
                loglog_pow,
            },
            ramp: None,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::closed(c, 0.0, 0.0)
    }

    pub fn one() -> Self {
        Self::constant(1.0)
    }

    pub fn log_power(gamma: f64) -> Self {
        Self::closed(1.0, gamma, 0.0)
    }

    pub fn loglog_power(gamma: f64) -> Self {
        Self::closed(1.0, 0.0, gamma)
    }

    /// User-supplied evaluator. `f` must be positive on `(0, ∞)`.
    pub fn custom(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            shape: Shape::Custom {
                name: name.into(),
                eval: Arc::new(f),
            },
            ramp: None,
        }
    }

    /// `(c, γ, δ)` for the built-in family; `None` for custom evaluators.
    pub fn closed_params(&self) -> Option<(f64, f64, f64)> {
        match self.shape {
            Shape::Closed {
                coef,
                log_pow,
                loglog_pow,
            } => Some((coef, log_pow, loglog_pow)),
            Shape::Custom { .. } => None,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.closed_params(), Some((_, g, d)) if g == 0.0 && d == 0.0)
    }

    /// Regularization point `a` (0 when no ramp is applied).
    pub fn ramp_threshold(&self) -> f64 {
        self.ramp.map_or(0.0, |r| r.threshold)
    }

    /// The same function with any ramp removed.
    pub fn unregularized(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            ramp: None,
        }
    }

    /// Pointwise product; only defined inside the built-in family.
    pub fn product(&self, other: &Self) -> Result<Self> {
        match (self.closed_params(), other.closed_params()) {
            (Some((c1, g1, d1)), Some((c2, g2, d2))) => Ok(Self::closed(c1 * c2, g1 + g2, d1 + d2)),
            _ => Err(Error::Unsupported(
                "product with a custom slowly varying function".into(),
            )),
        }
    }

    /// `L^e`; only defined inside the built-in family.
    pub fn powf(&self, e: f64) -> Result<Self> {
        match self.closed_params() {
            Some((c, g, d)) => Ok(Self::closed(c.powf(e), g * e, d * e)),
            None => Err(Error::Unsupported("power of a custom slowly varying function".into())),
        }
    }

    fn shape_eval_ln(&self, u: f64) -> f64 {
        match &self.shape {
            Shape::Closed { .. } => self.shape_ln_eval_ln(u).exp(),
            Shape::Custom { eval, .. } => eval(u.exp()),
        }
    }

    fn shape_ln_eval_ln(&self, u: f64) -> f64 {
        match &self.shape {
            Shape::Closed {
                coef,
                log_pow,
                loglog_pow,
            } => {
                let l1 = u.max(1.0);
                let mut out = coef.ln();
                if *log_pow != 0.0 {
                    out += log_pow * l1.ln();
                }
                if *loglog_pow != 0.0 {
                    out += loglog_pow * l1.ln().max(1.0).ln();
                }
                out
            }
            Shape::Custom { eval, .. } => eval(u.exp()).ln(),
        }
    }

    /// `L(x)` for `x ≥ 0`.
    pub fn eval(&self, x: f64) -> f64 {
        if let Some(r) = self.ramp {
            if x < r.threshold {
                return r.value * x / r.threshold;
            }
        }
        match &self.shape {
            Shape::Closed { .. } => self.shape_eval_ln(x.ln()),
            Shape::Custom { eval, .. } => eval(x),
        }
    }

    /// `L(e^u)`, usable far beyond the range of `f64` arguments.
    pub fn eval_ln(&self, u: f64) -> f64 {
        self.ln_eval_ln(u).exp()
    }

    /// `ln L(e^u)`.
    pub fn ln_eval_ln(&self, u: f64) -> f64 {
        if let Some(r) = self.ramp {
            if u < r.threshold.ln() {
                return r.value.ln() + u - r.threshold.ln();
            }
        }
        self.shape_ln_eval_ln(u)
    }

    /// Elasticity `x L'(x) / L(x)`; one-sided (right) at the log kinks.
    pub fn elasticity(&self, x: f64) -> f64 {
        if let Some(r) = self.ramp {
            if x < r.threshold {
                return 1.0;
            }
        }
        self.shape_elasticity(x)
    }

    fn shape_elasticity(&self, x: f64) -> f64 {
        match &self.shape {
            Shape::Closed {
                log_pow, loglog_pow, ..
            } => {
                let u = x.ln();
                let mut out = 0.0;
                if u > 1.0 {
                    out += log_pow / u;
                }
                if u > E {
                    out += loglog_pow / (u * u.ln());
                }
                out
            }
            Shape::Custom { eval, .. } => {
                let h = 1e-5 * x.max(1e-8);
                let (lo, hi) = (x - h, x + h);
                (eval(hi).ln() - eval(lo).ln()) / (hi.ln() - lo.ln())
            }
        }
    }

    /// Regularized version `L_1` for exponent `r`: `L_1 ≡ L` on `[a, ∞)`,
    /// linear from `L_1(0) = 0` to `L(a)` on `[0, a)`, with
    /// `x ↦ x^r L_1(x)` strictly increasing on `[0, ∞)`.
    ///
    /// `a` is the smallest point of the grid `{0.01 k}` (up to `10^6`) beyond
    /// which `r L(x) + x L'(x) > 0`, and never below the last log kink. For the
    /// built-in family the failure set of the derivative condition is located
    /// analytically and snapped to the grid; custom evaluators are scanned.
    pub fn monotone_adjust(&self, r: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidParameter(format!("monotone_adjust needs r > 0, got {r}")));
        }
        let base = self.unregularized();
        let threshold = match self.shape {
            Shape::Closed {
                log_pow, loglog_pow, ..
            } => closed_threshold(&base, log_pow, loglog_pow, r)?,
            Shape::Custom { .. } => scanned_threshold(&base, r)?,
        };
        if threshold == 0.0 {
            return Ok(base);
        }
        let value = base.eval(threshold);
        Ok(Self {
            shape: base.shape,
            ramp: Some(Ramp { threshold, value }),
        })
    }

    /// Analytic de Bruijn conjugate `1/L` for the built-in family.
    pub fn de_bruijn_conjugate(&self) -> Result<Self> {
        match self.closed_params() {
            Some((c, g, d)) => Ok(Self::closed(1.0 / c, -g, -d)),
            None => Err(Error::NoAnalyticConjugate(self.to_string())),
        }
    }

    /// `L(x) · L̃(x L(x))` evaluated at `x = e^u`, for a given conjugate.
    pub fn conjugate_identity_ln(&self, conj: &Self, u: f64) -> f64 {
        let ln_l = self.ln_eval_ln(u);
        (ln_l + conj.ln_eval_ln(u + ln_l)).exp()
    }

    /// Numeric de Bruijn conjugate at `x`: the fixed point `y = 1/L(x y)`.
    pub fn de_bruijn_numeric(&self, x: f64, tol: f64) -> Result<f64> {
        if !(x >= E) {
            return Err(Error::InvalidParameter(format!(
                "de_bruijn_numeric needs x >= e, got {x}"
            )));
        }
        self.de_bruijn_numeric_ln(x.ln(), tol)
    }

    /// [`SlowlyVaryingFn::de_bruijn_numeric`] at `x = e^u`.
    ///
    /// Damped iteration from `y_0 = 1/L(x)`; stops once successive iterates
    /// differ by less than `tol` and `|y L(x y) − 1| < 10 tol`.
    pub fn de_bruijn_numeric_ln(&self, u: f64, tol: f64) -> Result<f64> {
        if !(tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tolerance must be positive, got {tol}"
            )));
        }
        if !(u >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "de_bruijn_numeric needs x >= e, got e^{u}"
            )));
        }
        let mut y = 1.0 / self.eval_ln(u);
        for _ in 0..FIXED_POINT_MAX_ITER {
            let target = 1.0 / self.eval_ln(u + y.ln());
            let next = FIXED_POINT_DAMPING * y + (1.0 - FIXED_POINT_DAMPING) * target;
            if !next.is_finite() || next <= 0.0 {
                return Err(Error::FixedPointDivergence {
                    iterations: FIXED_POINT_MAX_ITER,
                    last: y,
                });
            }
            let residual = (next * self.eval_ln(u + next.ln()) - 1.0).abs();
            let step = (next - y).abs();
            y = next;
            if step < tol && residual < 10.0 * tol {
                return Ok(y);
            }
        }
        Err(Error::FixedPointDivergence {
            iterations: FIXED_POINT_MAX_ITER,
            last: y,
        })
    }
}

fn grid_point_at_or_above(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        (x / RAMP_GRID_STEP).ceil() * RAMP_GRID_STEP
    }
}

/// Largest root of an increasing function on `[lo, hi]` with `f(lo) ≤ 0 < f(hi)`.
fn bisect_increasing(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    hi
}

fn closed_threshold(base: &SlowlyVaryingFn, gamma: f64, delta: f64, r: f64) -> Result<f64> {
    let kink = if delta != 0.0 {
        E.powf(E)
    } else if gamma != 0.0 {
        E
    } else {
        0.0
    };
    let kink_grid = grid_point_at_or_above(kink);

    // In u = ln x the condition reads r + γ/u + δ/(u ln u) > 0, with the
    // δ-term active only for u > e and the γ-term only for u > 1.
    let mut sup_fail: Option<f64> = None;
    let seg_a_end = if delta != 0.0 { E } else { f64::INFINITY };
    if gamma < 0.0 && -gamma / r > 1.0 {
        sup_fail = Some((-gamma / r).min(seg_a_end));
    }
    if delta != 0.0 {
        let g = |u: f64| r * u + gamma + delta / u.ln();
        let big = |mut hi: f64| {
            while g(hi) <= 0.0 {
                hi *= 2.0;
            }
            hi
        };
        let start = E * (1.0 + 1e-12);
        let from = if delta > 0.0 && delta / r > E {
            // g decreases until u ln²u = δ/r, then increases.
            let h = |u: f64| u * u.ln() * u.ln() - delta / r;
            let mut hi = E * 2.0;
            while h(hi) < 0.0 {
                hi *= 2.0;
            }
            bisect_increasing(h, E, hi)
        } else {
            start
        };
        if g(from) <= 0.0 {
            let hi = big(from * 2.0);
            let root = bisect_increasing(g, from, hi);
            sup_fail = Some(sup_fail.map_or(root, |s: f64| s.max(root)));
        }
    }

    let Some(u_fail) = sup_fail else {
        return Ok(kink_grid);
    };
    let x_fail = u_fail.exp();
    if x_fail >= RAMP_GRID_MAX {
        return Err(Error::InvalidParameter(format!(
            "x^{r} L(x) is not increasing below {RAMP_GRID_MAX:e} for {base}"
        )));
    }
    let holds = |k: i64| r + base.shape_elasticity(k as f64 * RAMP_GRID_STEP) > 0.0;
    let k0 = (x_fail / RAMP_GRID_STEP).floor() as i64;
    let last_fail = (k0 - 3..=k0 + 3).filter(|&k| k > 0 && !holds(k)).max().unwrap_or(k0);
    Ok(((last_fail + 1) as f64 * RAMP_GRID_STEP).max(kink_grid))
}

fn scanned_threshold(base: &SlowlyVaryingFn, r: f64) -> Result<f64> {
    if !(base.eval(RAMP_GRID_MAX) > 0.0) {
        return Err(Error::InvalidParameter(format!("{base} is not eventually positive")));
    }
    let steps = (RAMP_GRID_MAX / RAMP_GRID_STEP) as i64;
    let mut last_fail: Option<i64> = None;
    for k in 1..=steps {
        let x = k as f64 * RAMP_GRID_STEP;
        if !(base.eval(x) > 0.0 && r + base.shape_elasticity(x) > 0.0) {
            last_fail = Some(k);
        }
    }
    match last_fail {
        None => Ok(0.0),
        Some(k) if k == steps => Err(Error::InvalidParameter(format!(
            "x^{r} L(x) is not increasing below {RAMP_GRID_MAX:e} for {base}"
        ))),
        Some(k) => Ok((k + 1) as f64 * RAMP_GRID_STEP),
    }
}

impl fmt::Display for SlowlyVaryingFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.shape {
            Shape::Custom { name, .. } => write!(f, "custom:{name}"),
            Shape::Closed {
                coef,
                log_pow,
                loglog_pow,
            } => {
                let mut parts = Vec::new();
                if *coef != 1.0 {
                    parts.push(format!("{coef}"));
                }
                for (name, pow) in [("log", log_pow), ("loglog", loglog_pow)] {
                    if *pow == 1.0 {
                        parts.push(name.to_string());
                    } else if *pow != 0.0 {
                        parts.push(format!("{name}^{pow}"));
                    }
                }
                if parts.is_empty() {
                    f.write_str("1")
                } else {
                    f.write_str(&parts.join(" * "))
                }
            }
        }
    }
}

impl fmt::Debug for SlowlyVaryingFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SlowlyVaryingFn({self}")?;
        if let Some(r) = self.ramp {
            write!(f, ", ramp below {}", r.threshold)?;
        }
        f.write_str(")")
    }
}

impl FromStr for SlowlyVaryingFn {
    type Err = Error;

    /// Parses descriptors such as `"1"`, `"log"`, `"2 * log^-1"`,
    /// `"log^2 * loglog^-1"`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |reason: &str| Error::Descriptor {
            input: s.to_string(),
            reason: reason.to_string(),
        };
        let parse_num = |t: &str| -> Result<f64> {
            let t = t.trim().trim_start_matches('(').trim_end_matches(')').trim();
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(&format!("bad number {t:?}")))
        };
        let (mut coef, mut log_pow, mut loglog_pow) = (1.0, 0.0, 0.0);
        if s.trim().is_empty() {
            return Err(bad("empty descriptor"));
        }
        for factor in s.split('*') {
            let factor = factor.trim();
            let (head, exp) = match factor.split_once('^') {
                Some((h, e)) => (h.trim(), parse_num(e)?),
                None => (factor, 1.0),
            };
            match head {
                "log" => log_pow += exp,
                "loglog" => loglog_pow += exp,
                _ => {
                    let c = parse_num(head)?.powf(exp);
                    if !(c > 0.0) {
                        return Err(bad("constant factors must be positive"));
                    }
                    coef *= c;
                }
            }
        }
        Ok(Self::closed(coef, log_pow, loglog_pow))
    }
}

impl Serialize for SlowlyVaryingFn {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for SlowlyVaryingFn {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `b_n = n^{1/p} L(n)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NormalizerSpec", into = "NormalizerSpec")]
pub struct Normalizer {
    p: f64,
    l: SlowlyVaryingFn,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormalizerSpec {
    p: f64,
    #[serde(rename = "L", default = "SlowlyVaryingFn::one")]
    l: SlowlyVaryingFn,
}

impl TryFrom<NormalizerSpec> for Normalizer {
    type Error = Error;
    fn try_from(s: NormalizerSpec) -> Result<Self> {
        Normalizer::new(s.p, s.l)
    }
}

impl From<Normalizer> for NormalizerSpec {
    fn from(n: Normalizer) -> Self {
        NormalizerSpec { p: n.p, l: n.l }
    }
}

impl Normalizer {
    /// Accepts `0 < p < 2`; the theorems need `1 ≤ p < 2`, see
    /// [`Normalizer::in_theorem_range`].
    pub fn new(p: f64, l: SlowlyVaryingFn) -> Result<Self> {
        if !(p > 0.0 && p < 2.0) {
            return Err(Error::InvalidParameter(format!(
                "normalizer exponent p must lie in (0, 2), got {p}"
            )));
        }
        Ok(Self { p, l })
    }

    /// Like [`Normalizer::new`] with `L` replaced by its regularization for
    /// `r = 1/p`, so that `b_x` is strictly increasing on `[0, ∞)`.
    pub fn regularized(p: f64, l: SlowlyVaryingFn) -> Result<Self> {
        let l = l.monotone_adjust(1.0 / p)?;
        Self::new(p, l)
    }

    /// `n^{1/p} L̃^{1/p}(n)`, the normalizer of the uniformly integrable case.
    pub fn conjugate(p: f64, l: &SlowlyVaryingFn) -> Result<Self> {
        let conj = l.de_bruijn_conjugate()?.powf(1.0 / p)?;
        Self::new(p, conj)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn l(&self) -> &SlowlyVaryingFn {
        &self.l
    }

    pub fn in_theorem_range(&self) -> bool {
        (1.0..2.0).contains(&self.p)
    }

    /// `b_n`.
    pub fn value(&self, n: u64) -> f64 {
        self.at(n as f64)
    }

    /// `b_x` for real `x ≥ 0`.
    pub fn at(&self, x: f64) -> f64 {
        x.powf(1.0 / self.p) * self.l.eval(x)
    }

    /// `ln b_{e^u}`.
    pub fn ln_at_ln(&self, u: f64) -> f64 {
        u / self.p + self.l.ln_eval_ln(u)
    }

    /// `b_{2^m}`.
    pub fn dyadic(&self, m: u32) -> f64 {
        self.at(2f64.powi(m as i32))
    }

    /// `sup_{1 ≤ m ≤ m_max} b_{2^m} / b_{2^{m-1}}`.
    pub fn dyadic_ratio_sup(&self, m_max: u32) -> f64 {
        (1..=m_max)
            .map(|m| self.dyadic(m) / self.dyadic(m - 1))
            .fold(0.0, f64::max)
    }
}

/// Result of [`karamata_sum`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KaramataSum {
    /// `Σ_{k=1}^n α^k L(β^k)`; infinite when it overflows.
    pub sum: f64,
    pub ln_sum: f64,
    /// `sum / (α^n L(β^n))`.
    pub ratio: f64,
}

/// `Σ_{k=1}^n α^k L(β^k)` and its ratio to the last term.
pub fn karamata_sum(alpha: f64, beta: f64, l: &SlowlyVaryingFn, n: u32) -> Result<KaramataSum> {
    if !(alpha > 1.0) || !(beta >= 1.0) || n == 0 {
        return Err(Error::InvalidParameter(format!(
            "karamata_sum needs alpha > 1, beta >= 1, n >= 1 (got {alpha}, {beta}, {n})"
        )));
    }
    let ln_term = |k: u32| k as f64 * alpha.ln() + l.ln_eval_ln(k as f64 * beta.ln());
    let ln_last = ln_term(n);
    if ln_last < 700.0 {
        let term = |k: u32| alpha.powi(k as i32) * l.eval(beta.powi(k as i32));
        let sum: f64 = (1..=n).map(term).sum();
        return Ok(KaramataSum {
            sum,
            ln_sum: sum.ln(),
            ratio: sum / term(n),
        });
    }
    let ratio: f64 = (1..=n).map(|k| (ln_term(k) - ln_last).exp()).sum();
    let ln_sum = ln_last + ratio.ln();
    Ok(KaramataSum {
        sum: ln_sum.exp(),
        ln_sum,
        ratio,
    })
}
