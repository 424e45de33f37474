//! Adaptive Simpson quadrature on dyadic panels.

use crate::error::{Error, Result};

pub const REL_TOL: f64 = 1e-10;
pub const ABS_TOL: f64 = 1e-14;
const MAX_DEPTH: u32 = 48;
const MAX_PANELS: u32 = 4000;

/// Integral value with an error estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quad {
    pub value: f64,
    pub error: f64,
}

struct Acc {
    value: f64,
    error: f64,
    ok: bool,
}

#[allow(clippy::too_many_arguments)]
fn adapt(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    acc: &mut Acc,
) {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let halves = left + right;
    let diff = halves - whole;
    // Richardson: the refined estimate's error is about |diff| / 15.
    if diff.abs() <= 15.0 * tol || depth >= MAX_DEPTH {
        if depth >= MAX_DEPTH && diff.abs() > 15.0 * tol {
            acc.ok = false;
        }
        acc.value += halves + diff / 15.0;
        acc.error += diff.abs() / 15.0;
        return;
    }
    adapt(f, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1, acc);
    adapt(f, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1, acc);
}

fn simpson_panel(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, acc: &mut Acc) {
    if b <= a {
        return;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    adapt(f, a, b, fa, fm, fb, whole, tol, 0, acc);
}

/// Integrates over one panel with tolerance `max(abs_tol, rel_tol · scale)`,
/// where `scale` is a crude magnitude estimate of the panel integral.
fn panel(f: &impl Fn(f64) -> f64, a: f64, b: f64, acc: &mut Acc) {
    let probe = [a, 0.25 * (3.0 * a + b), 0.5 * (a + b), 0.25 * (a + 3.0 * b), b];
    let scale = probe.iter().map(|&x| f(x).abs()).fold(0.0, f64::max) * (b - a);
    simpson_panel(f, a, b, ABS_TOL.max(REL_TOL * scale), acc);
}

/// `∫_a^b f` with `0 < a ≤ b`, split into panels `[a 2^k, a 2^{k+1}]`.
pub fn integrate_dyadic(f: impl Fn(f64) -> f64, a: f64, b: f64) -> Result<Quad> {
    let mut acc = Acc {
        value: 0.0,
        error: 0.0,
        ok: true,
    };
    if b > a {
        assert!(a > 0.0, "dyadic panels need a positive left end");
        let mut lo = a;
        while lo < b {
            let hi = (2.0 * lo).min(b);
            panel(&f, lo, hi, &mut acc);
            lo = hi;
        }
    }
    finish(acc)
}

/// `∫_a^∞ f` over dyadic panels, stopping once panel contributions are
/// negligible against the running total for several consecutive panels.
pub fn integrate_to_infinity(f: impl Fn(f64) -> f64, a: f64) -> Result<Quad> {
    assert!(a > 0.0, "dyadic panels need a positive left end");
    let mut acc = Acc {
        value: 0.0,
        error: 0.0,
        ok: true,
    };
    let mut lo = a;
    let mut quiet = 0;
    for _ in 0..MAX_PANELS {
        let hi = 2.0 * lo;
        if !hi.is_finite() {
            break;
        }
        let before = acc.value;
        panel(&f, lo, hi, &mut acc);
        let contribution = (acc.value - before).abs();
        if contribution <= REL_TOL * 1e-2 * acc.value.abs() || contribution <= ABS_TOL * 1e-2 {
            quiet += 1;
            if quiet >= 4 {
                return finish(acc);
            }
        } else {
            quiet = 0;
        }
        lo = hi;
    }
    Err(Error::Quadrature {
        estimate: acc.value,
        error_bound: f64::INFINITY,
    })
}

fn finish(acc: Acc) -> Result<Quad> {
    if acc.ok && acc.value.is_finite() {
        Ok(Quad {
            value: acc.value,
            error: acc.error,
        })
    } else {
        Err(Error::Quadrature {
            estimate: acc.value,
            error_bound: acc.error,
        })
    }
}
