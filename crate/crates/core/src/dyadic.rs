//! Scale-indexed diagnostics for maximal sums over dyadic blocks.
//!
//! Truncation is `X_{i,t} = X_i 1(|X_i| ≤ b_t)`. At scale `m` the blocks are
//! `[k 2^m + 1, (k+1) 2^m]` and the half-blocks `[k 2^m + 1, k 2^m + 2^{m-1}]`.

use serde::{Deserialize, Serialize};

use crate::distributions::TailDistribution;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::generators::{stream_id, RngStream, SequenceModel};
use crate::maxsum_stats::{ConvergenceEstimate, PreparedStatistic, StatisticKind, MIN_REPS};
use crate::slowly_varying::{Normalizer, SlowlyVaryingFn};

/// Relative slack tolerance absorbing floating-point rounding in the sums.
pub const SLACK_REL_TOL: f64 = 1e-12;

/// Constants `a, b, ε₁` with `1/2 < a < 1/p`, `a + b = 1/p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DyadicParams {
    pub a: f64,
    pub b: f64,
    #[serde(default = "one")]
    pub eps1: f64,
}

fn one() -> f64 {
    1.0
}

impl DyadicParams {
    /// Midpoint `a = (1/2 + 1/p)/2`, `b = 1/p − a`, `ε₁ = 1`.
    pub fn defaults(p: f64) -> Self {
        let a = 0.25 + 0.5 / p;
        Self {
            a,
            b: 1.0 / p - a,
            eps1: 1.0,
        }
    }

    /// `a` given, `b = 1/p − a`.
    pub fn with_a(p: f64, a: f64, eps1: f64) -> Self {
        Self {
            a,
            b: 1.0 / p - a,
            eps1,
        }
    }

    pub fn validate(&self, p: f64) -> Result<()> {
        check_ab(self.a, self.b, self.eps1)?;
        if (self.a + self.b - 1.0 / p).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "a + b must equal 1/p = {}, got a={}, b={}",
                1.0 / p,
                self.a,
                self.b
            )));
        }
        Ok(())
    }

    /// `C₁(b) = 2^b / (2^b − 1)`.
    pub fn c1(&self) -> f64 {
        let t = 2f64.powf(self.b);
        t / (t - 1.0)
    }
}

fn check_ab(a: f64, b: f64, eps1: f64) -> Result<()> {
    if !(a > 0.5 && b > 0.0 && eps1 > 0.0) || !(a + b).is_finite() {
        return Err(Error::InvalidParameter(format!(
            "need 1/2 < a < 1/p = a + b with b > 0 and eps1 > 0 (got a={a}, b={b}, eps1={eps1})"
        )));
    }
    Ok(())
}

/// `λ_{m,n} = ε₁ 2^{bm} 2^{an} L(2^n)`; `1/p` is `a + b`.
pub fn lambda(m: u32, n: u32, eps1: f64, a: f64, b: f64, l: &SlowlyVaryingFn) -> Result<f64> {
    check_ab(a, b, eps1)?;
    if m < 1 || m > n {
        return Err(Error::InvalidParameter(format!("need 1 <= m <= n, got m={m}, n={n}")));
    }
    Ok(ln_lambda(m, n, eps1, a, b, l).exp())
}

fn ln_lambda(m: u32, n: u32, eps1: f64, a: f64, b: f64, l: &SlowlyVaryingFn) -> f64 {
    let ln2 = std::f64::consts::LN_2;
    eps1.ln() + (b * m as f64 + a * n as f64) * ln2 + l.ln_eval_ln(n as f64 * ln2)
}

/// `Σ_{m=1}^n λ_{m,n}` against `C₁(b) ε₁ b_{2^n}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LambdaSum {
    pub n: u32,
    pub sum: f64,
    pub bound: f64,
}

pub fn lambda_sum(n: u32, params: &DyadicParams, norm: &Normalizer) -> Result<LambdaSum> {
    params.validate(norm.p())?;
    let l = norm.l();
    let sum = (1..=n)
        .map(|m| lambda(m, n, params.eps1, params.a, params.b, l))
        .sum::<Result<f64>>()?;
    let bound = params.c1() * params.eps1 * norm.dyadic(n);
    Ok(LambdaSum { n, sum, bound })
}

/// All scale-indexed terms of one path of length `2^n − 1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DyadicDecomposition {
    pub n: u32,
    /// `max_{1≤j<2^n} |S_{j,n}|`.
    pub lhs: f64,
    /// Half-block maxima of centered `X_{i,2^{m-1}}`, `m = 1..n`.
    pub block_terms: Vec<f64>,
    /// Block maxima of `Y_{i,m}`, `m = 1..n`.
    pub y_terms: Vec<f64>,
    /// `D_m = 2^{m+1} b_{2^m} P(|X| > b_{2^{m-1}})`, `m = 1..n`.
    pub tail_terms: Vec<f64>,
}

impl DyadicDecomposition {
    pub fn rhs(&self) -> f64 {
        self.block_terms.iter().sum::<f64>() + self.y_terms.iter().sum::<f64>() + self.tail_terms.iter().sum::<f64>()
    }

    pub fn slack(&self) -> f64 {
        self.rhs() - self.lhs
    }

    /// Negative slack beyond rounding.
    pub fn violated(&self) -> bool {
        self.slack() < -SLACK_REL_TOL * self.rhs().max(1.0)
    }
}

/// Analytic ingredients of the decomposition for one `(X, b, n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DyadicPlan {
    n: u32,
    /// `b_{2^k}`, `k = 0..=n`.
    levels: Vec<f64>,
    /// `E X 1(|X| ≤ b_{2^k})`.
    means: Vec<f64>,
    /// `E|X_{i,2^m} − X_{i,2^{m-1}}|`, index `m`; entry 0 unused.
    abs_diff_means: Vec<f64>,
    tail_terms: Vec<f64>,
}

impl DyadicPlan {
    pub fn new(d: &TailDistribution, norm: &Normalizer, n: u32) -> Result<Self> {
        if n == 0 || n > 40 {
            return Err(Error::InvalidParameter(format!(
                "scale count must be in 1..=40, got {n}"
            )));
        }
        let levels: Vec<f64> = (0..=n).map(|k| norm.dyadic(k)).collect();
        let means = levels
            .iter()
            .map(|&t| d.truncated_mean(t))
            .collect::<Result<Vec<_>>>()?;
        let abs_moments = levels
            .iter()
            .map(|&t| d.truncated_moment(1.0, t))
            .collect::<Result<Vec<_>>>()?;
        let mut abs_diff_means = vec![0.0; n as usize + 1];
        let mut tail_terms = Vec::with_capacity(n as usize);
        for m in 1..=n as usize {
            abs_diff_means[m] = (abs_moments[m] - abs_moments[m - 1]).max(0.0);
            tail_terms.push(2f64.powi(m as i32 + 1) * levels[m] * d.tail(levels[m - 1]));
        }
        Ok(Self {
            n,
            levels,
            means,
            abs_diff_means,
            tail_terms,
        })
    }

    pub fn path_len(&self) -> usize {
        (1usize << self.n) - 1
    }

    pub fn decompose(&self, path: &[f64]) -> Result<DyadicDecomposition> {
        let len = self.path_len();
        if path.len() != len {
            return Err(Error::PathLength(path.len()));
        }
        let n = self.n as usize;
        let trunc = |x: f64, k: usize| if x.abs() <= self.levels[k] { x } else { 0.0 };

        let mut s = 0.0;
        let mut lhs = 0.0f64;
        for &x in path {
            s += trunc(x, n) - self.means[n];
            lhs = lhs.max(s.abs());
        }

        let mut block_terms = Vec::with_capacity(n);
        let mut y_terms = Vec::with_capacity(n);
        for m in 1..=n {
            let block = 1usize << m;
            let half = block >> 1;
            let mut best_half = 0.0f64;
            let mut best_y = 0.0f64;
            for start in (0..len).step_by(block) {
                let half_sum: f64 = path[start..start + half]
                    .iter()
                    .map(|&x| trunc(x, m - 1) - self.means[m - 1])
                    .sum();
                best_half = best_half.max(half_sum.abs());
                // The last block stops at index 2^n − 1.
                let end = (start + block).min(len);
                let y_sum: f64 = path[start..end]
                    .iter()
                    .map(|&x| (trunc(x, m) - trunc(x, m - 1)).abs() - self.abs_diff_means[m])
                    .sum();
                best_y = best_y.max(y_sum.abs());
            }
            block_terms.push(best_half);
            y_terms.push(best_y);
        }
        Ok(DyadicDecomposition {
            n: self.n,
            lhs,
            block_terms,
            y_terms,
            tail_terms: self.tail_terms.clone(),
        })
    }
}

/// Decomposes one path of length `2^n − 1`.
pub fn decompose_path(path: &[f64], d: &TailDistribution, norm: &Normalizer) -> Result<DyadicDecomposition> {
    let len = path.len() + 1;
    if !len.is_power_of_two() || len < 2 {
        return Err(Error::PathLength(path.len()));
    }
    DyadicPlan::new(d, norm, len.trailing_zeros())?.decompose(path)
}

/// `K_m` with its bound `(sup_k b_{2^k}/b_{2^{k-1}}) 2^m P(|X| > b_{2^{m-1}})`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KmEntry {
    pub m: u32,
    pub k_m: f64,
    pub bound: f64,
}

/// Largest `2^{m-1}` for which every `n` in `[2^{m-1}, 2^m)` is visited.
const KM_FULL_SCAN: u64 = 1 << 12;

fn one_signed(d: &TailDistribution) -> bool {
    match d {
        TailDistribution::Pareto(p) => p.one_sided(),
        TailDistribution::PointMass { .. } => true,
        TailDistribution::Discrete { atoms } => {
            atoms.iter().all(|a| a.0 >= 0.0 || a.1 == 0.0) || atoms.iter().all(|a| a.0 <= 0.0 || a.1 == 0.0)
        }
        _ => d.is_symmetric(),
    }
}

/// `K_m = max_{2^{m-1} ≤ n < 2^m} (2^m − 1) |E X 1(b_n < |X| ≤ b_{2^m})| / b_{2^{m-1}}`
/// for identically distributed coordinates.
///
/// For one-signed or symmetric laws the maximum sits at `n = 2^{m-1}`. For
/// other laws every `n` is visited while `2^{m-1} ≤ 4096`, beyond that a
/// 4096-point subgrid plus the endpoints.
pub fn km_sequence(d: &TailDistribution, norm: &Normalizer, m_max: u32) -> Result<Vec<KmEntry>> {
    if m_max == 0 || m_max > 62 {
        return Err(Error::InvalidParameter(format!("m_max must be in 1..=62, got {m_max}")));
    }
    let sup_ratio = norm.dyadic_ratio_sup(m_max);
    let mut out = Vec::with_capacity(m_max as usize);
    for m in 1..=m_max {
        let lo = 1u64 << (m - 1);
        let hi = 1u64 << m;
        let top = d.truncated_mean(norm.value(hi))?;
        let gap = |n: u64| -> Result<f64> { Ok((top - d.truncated_mean(norm.value(n))?).abs()) };
        let worst = if d.is_symmetric() {
            0.0
        } else if one_signed(d) {
            gap(lo)?
        } else {
            let span = hi - lo;
            let step = if span <= KM_FULL_SCAN { 1 } else { span / KM_FULL_SCAN };
            let mut w = gap(hi - 1)?;
            let mut n = lo;
            while n < hi {
                w = w.max(gap(n)?);
                n += step;
            }
            w
        };
        let b_prev = norm.dyadic(m - 1);
        out.push(KmEntry {
            m,
            k_m: (hi - 1) as f64 * worst / b_prev,
            bound: sup_ratio * hi as f64 * d.tail(b_prev),
        });
    }
    Ok(out)
}

/// Deterministic bound sequences at scale count `n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundRow {
    pub n: u32,
    pub tail_drift: f64,
    pub i_bound: f64,
    pub j_bound: f64,
}

/// `tail_drift_n`, `I_bound_n` and `J_bound_n` for `n = 1..=n_max`, with all
/// weights combined in log space.
pub fn bound_sequences(
    d: &TailDistribution,
    norm: &Normalizer,
    params: &DyadicParams,
    n_max: u32,
) -> Result<Vec<BoundRow>> {
    params.validate(norm.p())?;
    if n_max == 0 {
        return Ok(Vec::new());
    }
    let ln2 = std::f64::consts::LN_2;
    let (a, b, eps1) = (params.a, params.b, params.eps1);
    let l = norm.l();
    let ln_l = |m: u32| l.ln_eval_ln(m as f64 * ln2);
    let ln_bd = |m: u32| norm.ln_at_ln(m as f64 * ln2);
    // Per-scale ingredients, m = 1..=n_max.
    let mut ln_tail = Vec::new();
    let mut ln_second = Vec::new();
    for m in 1..=n_max {
        let b_prev = norm.dyadic(m - 1);
        let tail = d.tail(b_prev);
        ln_tail.push(tail.ln());
        let second = d.truncated_moment(2.0, b_prev)? + b_prev * b_prev * tail;
        ln_second.push(second.ln());
    }
    let sum_exp = |terms: &mut dyn Iterator<Item = f64>| -> f64 { terms.map(f64::exp).sum() };
    let mut rows = Vec::with_capacity(n_max as usize);
    for n in 1..=n_max {
        let nf = n as f64;
        let ln_pref = -2.0 * eps1.ln() - nf * (2.0 * a - 1.0) * ln2 - 2.0 * ln_l(n);
        let tail_drift =
            sum_exp(&mut (1..=n).map(|m| ln_bd(m) + (m as f64 + 1.0) * ln2 + ln_tail[m as usize - 1] - ln_bd(n)));
        let i_bound = sum_exp(&mut (1..=n).map(|m| {
            let mf = m as f64;
            ln_pref + mf * (2.0 * a - 1.0) * ln2 + 2.0 * ln_l(m) + mf * ln2 + ln_tail[m as usize - 1]
        }));
        let j_bound =
            sum_exp(&mut (1..=n).map(|m| {
                ln_pref + nf * 2.0 * a * ln2 - 2.0 * (b * m as f64 + a * nf) * ln2 + ln_second[m as usize - 1]
            }));
        rows.push(BoundRow {
            n,
            tail_drift,
            i_bound,
            j_bound,
        });
    }
    Ok(rows)
}

/// Paired estimates of the direct and dyadic statistics on coupled paths.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReductionEstimate {
    pub n: u64,
    pub m: u32,
    /// Statistic at `n` on the first `n` coordinates.
    pub direct: ConvergenceEstimate,
    /// Statistic with truncation at `b_{2^m}` on all `2^m − 1` coordinates.
    pub dyadic: ConvergenceEstimate,
    pub gap: f64,
    /// Sum of the two Wilson half-widths.
    pub joint_half_width: f64,
}

/// Estimates `P(T_n > ε)` and `P(T^{(2^m)} > ε)` on the same paths, where
/// `2^{m-1} ≤ n < 2^m` and `T^{(2^m)}` uses `X_{i,2^m}` centered at
/// `E X_{i,2^m}` with scale `b_{2^m}`.
#[allow(clippy::too_many_arguments)]
pub fn dyadic_reduction_check(
    model: &SequenceModel,
    kind: StatisticKind,
    norm: &Normalizer,
    n: u64,
    eps: f64,
    reps: u64,
    seed: u64,
    exec: Execution,
) -> Result<ReductionEstimate> {
    if n == 0 || n >= 1 << 40 {
        return Err(Error::InvalidParameter(format!("n must be in 1..2^40, got {n}")));
    }
    if reps < MIN_REPS {
        return Err(Error::InvalidParameter(format!(
            "reps must be at least {MIN_REPS}, got {reps}"
        )));
    }
    model.validate()?;
    let m = 64 - n.leading_zeros();
    let big = (1u64 << m) - 1;
    let fam = model.family();
    let direct = PreparedStatistic::new(kind, &fam, norm, n as usize)?;
    let top = kind.normalizer(norm)?.dyadic(m);
    let dyadic = PreparedStatistic::new(kind, &fam, norm, big as usize)?;
    let center = match &fam {
        crate::distributions::VaryingFamily::Identical { law } => law.truncated_mean(top)?,
        crate::distributions::VaryingFamily::Counterexample { .. } => 0.0,
    };
    let outcomes = exec.map_init(
        reps,
        || (Vec::new(), Vec::new()),
        |(buf, trunc), r| -> Result<(bool, bool)> {
            let mut rng = RngStream::new(seed, stream_id(0, r));
            model.generate_into(big as usize, &mut rng, buf)?;
            let a = direct.evaluate(&buf[..n as usize])? > eps;
            trunc.clear();
            trunc.extend(buf.iter().map(|&x| if x.abs() <= top { x } else { 0.0 }));
            let b = dyadic_value(kind, &dyadic, trunc, center, top)? > eps;
            Ok((a, b))
        },
    );
    let (mut ha, mut hb) = (0u64, 0u64);
    for o in outcomes {
        let (a, b) = o?;
        ha += a as u64;
        hb += b as u64;
    }
    let da = ConvergenceEstimate::from_counts(n, eps, ha, reps);
    let db = ConvergenceEstimate::from_counts(big + 1, eps, hb, reps);
    Ok(ReductionEstimate {
        n,
        m,
        direct: da,
        dyadic: db,
        gap: (da.p_hat - db.p_hat).abs(),
        joint_half_width: 0.5 * (da.ci_high - da.ci_low) + 0.5 * (db.ci_high - db.ci_low),
    })
}

fn dyadic_value(kind: StatisticKind, stat: &PreparedStatistic, trunc: &[f64], center: f64, top: f64) -> Result<f64> {
    Ok(match kind {
        StatisticKind::MaxAbs => trunc.iter().fold(0.0f64, |m, x| m.max(x.abs())) / top,
        StatisticKind::PlainCenteredSum => (trunc.iter().sum::<f64>() - trunc.len() as f64 * center).abs() / top,
        StatisticKind::CenteringDrift => stat.fixed_value().unwrap_or(0.0),
        _ => crate::maxsum_stats::max_abs_partial_sum(trunc, center) / top,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn log() -> SlowlyVaryingFn {
        SlowlyVaryingFn::log_power(1.0)
    }

    fn flat(p: f64) -> Normalizer {
        Normalizer::new(p, SlowlyVaryingFn::one()).unwrap()
    }

    /// Brute-force evaluation of `max_j |S_{j,n}|` against a direct
    /// expansion: `S_{j,n}` equals the sum over scales of half-block pieces at
    /// level `m − 1` plus the increments between levels.
    fn telescoping_residual(path: &[f64], d: &TailDistribution, norm: &Normalizer) -> f64 {
        let n = (path.len() + 1).trailing_zeros() as usize;
        let lv: Vec<f64> = (0..=n).map(|k| norm.dyadic(k as u32)).collect();
        let mean = |k: usize| d.truncated_mean(lv[k]).unwrap();
        let tr = |x: f64, k: usize| if x.abs() <= lv[k] { x } else { 0.0 };
        let mut worst = 0.0f64;
        for j in 1..path.len() + 1 {
            let direct: f64 = path[..j].iter().map(|&x| tr(x, n) - mean(n)).sum();
            let mut rebuilt = 0.0;
            for m in 1..=n {
                let (jm, jm1) = ((j >> m) << m, (j >> (m - 1)) << (m - 1));
                for &x in &path[jm..jm1] {
                    rebuilt += tr(x, m - 1) - mean(m - 1);
                    for l in m..=n {
                        rebuilt += (tr(x, l) - mean(l)) - (tr(x, l - 1) - mean(l - 1));
                    }
                }
            }
            worst = worst.max((direct - rebuilt).abs());
        }
        worst
    }

    #[test]
    fn telescoping_expansion_is_an_identity() {
        let d = TailDistribution::pareto_with(1.0, 1.0, SlowlyVaryingFn::one(), true).unwrap();
        let norm = Normalizer::new(1.0, log()).unwrap();
        let model = SequenceModel::iid(d.clone());
        for r in 0..5 {
            let path = model.generate(63, &mut RngStream::new(8, r)).unwrap();
            assert!(telescoping_residual(&path, &d, &norm) < 1e-9);
        }
    }

    #[test]
    fn zero_path_slack_is_tail_mass() {
        let d = TailDistribution::PointMass { c: 0.0 };
        let dec = decompose_path(&[0.0; 15], &d, &flat(1.0)).unwrap();
        assert_eq!(dec.lhs, 0.0);
        assert!(dec.block_terms.iter().chain(&dec.y_terms).all(|&t| t == 0.0));
        assert_eq!(dec.slack(), dec.tail_terms.iter().sum::<f64>());
        assert!(dec.slack() >= 0.0);
    }

    #[test]
    fn no_truncation_means_no_y_terms() {
        let d = TailDistribution::Uniform { v: 0.5 };
        let model = SequenceModel::iid(d.clone());
        let path = model.generate(255, &mut RngStream::new(1, 1)).unwrap();
        let dec = decompose_path(&path, &d, &flat(1.0)).unwrap();
        assert!(dec.y_terms.iter().all(|&t| t == 0.0));
        assert!(!dec.violated());
    }

    #[test]
    fn rejects_bad_path_lengths() {
        let d = TailDistribution::Rademacher;
        assert_eq!(decompose_path(&[0.0; 14], &d, &flat(1.0)), Err(Error::PathLength(14)));
        assert_eq!(decompose_path(&[], &d, &flat(1.0)), Err(Error::PathLength(0)));
    }

    #[test]
    fn pareto_log_slack_nonnegative() {
        let d = TailDistribution::pareto(1.0, 1.0).unwrap();
        let norm = Normalizer::new(1.0, log()).unwrap();
        let plan = DyadicPlan::new(&d, &norm, 10).unwrap();
        let model = SequenceModel::iid(d);
        let mut buf = Vec::new();
        for r in 0..1000 {
            model
                .generate_into(plan.path_len(), &mut RngStream::new(3, r), &mut buf)
                .unwrap();
            let dec = plan.decompose(&buf).unwrap();
            assert!(!dec.violated(), "path {r}: slack {}", dec.slack());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn slack_nonnegative_on_arbitrary_paths(
            xs in proptest::collection::vec(-50f64..50.0, 127),
            one_sided in any::<bool>(),
        ) {
            let d = TailDistribution::pareto_with(1.3, 1.0, SlowlyVaryingFn::one(), one_sided).unwrap();
            let norm = Normalizer::new(1.3, log()).unwrap();
            let path: Vec<f64> = if one_sided { xs.iter().map(|x| x.abs()).collect() } else { xs };
            let dec = decompose_path(&path, &d, &norm).unwrap();
            prop_assert!(!dec.violated(), "slack {}", dec.slack());
        }

        #[test]
        fn lambda_sum_bound(n in 1u32..=60, p in 1.0f64..1.99, frac in 0.05f64..0.95, log_l in any::<bool>()) {
            let a = 0.5 + frac * (1.0 / p - 0.5);
            let params = DyadicParams::with_a(p, a, 1.0);
            let l = if log_l { log() } else { SlowlyVaryingFn::one() };
            let norm = Normalizer::new(p, l).unwrap();
            let s = lambda_sum(n, &params, &norm).unwrap();
            prop_assert!(s.sum <= s.bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn lambda_examples() {
        let one = SlowlyVaryingFn::one();
        assert_relative_eq!(
            lambda(2, 4, 1.0, 0.75, 0.25, &one).unwrap(),
            8.0 * 2f64.sqrt(),
            max_relative = 1e-14
        );
        let params = DyadicParams::defaults(1.0);
        assert_eq!((params.a, params.b), (0.75, 0.25));
        let s = lambda_sum(4, &params, &flat(1.0)).unwrap();
        let direct = 8.0 * (2f64.powf(0.25) + 2f64.sqrt() + 2f64.powf(0.75) + 2.0);
        assert_relative_eq!(s.sum, direct, max_relative = 1e-14);
        assert_relative_eq!(s.sum, 50.28, epsilon = 0.01);
        assert_relative_eq!(s.bound, 100.56, epsilon = 0.01);
        for n in 1..=20 {
            assert_relative_eq!(
                lambda(n, n, 1.0, 0.75, 0.25, &one).unwrap(),
                2f64.powi(n as i32),
                max_relative = 1e-14
            );
        }
        assert!(lambda(1, 2, 1.0, 0.5, 0.5, &one).is_err());
        assert!(lambda(3, 2, 1.0, 0.75, 0.25, &one).is_err());
        assert!(DyadicParams {
            a: 0.75,
            b: 0.3,
            eps1: 1.0
        }
        .validate(1.0)
        .is_err());
    }

    #[test]
    fn km_examples_and_chain() {
        let norm = Normalizer::new(1.0, log()).unwrap();
        let bounded = TailDistribution::Uniform { v: 1.0 };
        assert!(km_sequence(&bounded, &norm, 20).unwrap().iter().all(|e| e.k_m == 0.0));
        let tp = TailDistribution::TwoPoint { v: 1.0 };
        assert!(km_sequence(&tp, &norm, 20).unwrap().iter().all(|e| e.k_m == 0.0));
        let pareto = TailDistribution::pareto(1.0, 1.0).unwrap();
        let km = km_sequence(&pareto, &norm, 20).unwrap();
        let e20 = km[19];
        let ratio = norm.dyadic_ratio_sup(20);
        let expected = ratio * 2f64.powi(20) / (2f64.powi(19) * 19.0 * 2f64.ln());
        assert_relative_eq!(e20.bound, expected, max_relative = 1e-12);
        assert!((0.1..1.0).contains(&e20.bound));
        for law in [
            TailDistribution::pareto_with(1.0, 1.0, SlowlyVaryingFn::one(), true).unwrap(),
            TailDistribution::PointMass { c: 7.0 },
            TailDistribution::Discrete {
                atoms: vec![(-30.0, 0.1), (2.0, 0.6), (500.0, 0.3)],
            },
        ] {
            for e in km_sequence(&law, &norm, 24).unwrap() {
                assert!(
                    e.k_m <= e.bound * (1.0 + 1e-12),
                    "{law:?} m={}: {} > {}",
                    e.m,
                    e.k_m,
                    e.bound
                );
            }
        }
    }

    /// Independent summation with explicit Pareto tails `1/t`.
    fn pareto_log_oracle(n: u32) -> (f64, f64, f64) {
        let (a, b) = (0.75, 0.25);
        let lg = |x: f64| x.max(std::f64::consts::E).ln();
        let bb = |m: u32| 2f64.powi(m as i32) * lg(2f64.powi(m as i32));
        let tail = |t: f64| (1.0 / t).min(1.0);
        // E X² 1(|X| ≤ t) = t − 1 − t² · 0 ... for t ≥ 1: ∫_1^t x² x^{-2} dx = t − 1.
        let second = |t: f64| if t >= 1.0 { t - 1.0 } else { 0.0 };
        let mut td = 0.0;
        let mut ib = 0.0;
        let mut jb = 0.0;
        for m in 1..=n {
            let pm = tail(bb(m - 1));
            td += bb(m) * 2f64.powi(m as i32 + 1) * pm;
            ib += 2f64.powf(m as f64 * (2.0 * a - 1.0)) * lg(2f64.powi(m as i32)).powi(2) * 2f64.powi(m as i32) * pm;
            let t = bb(m - 1);
            jb += 2f64.powf(-2.0 * b * m as f64) * (second(t) + t * t * tail(t));
        }
        let ln_n = lg(2f64.powi(n as i32));
        let pref = 2f64.powf(-(n as f64) * (2.0 * a - 1.0)) / (ln_n * ln_n);
        (td / bb(n), pref * ib, pref * jb)
    }

    #[test]
    fn bound_sequences_match_oracle() {
        let d = TailDistribution::pareto(1.0, 1.0).unwrap();
        let norm = Normalizer::new(1.0, log()).unwrap();
        let rows = bound_sequences(&d, &norm, &DyadicParams::defaults(1.0), 60).unwrap();
        for r in &rows {
            let (td, ib, jb) = pareto_log_oracle(r.n);
            assert_relative_eq!(r.tail_drift, td, max_relative = 1e-10);
            assert_relative_eq!(r.i_bound, ib, max_relative = 1e-10);
            assert_relative_eq!(r.j_bound, jb, max_relative = 1e-10);
        }
        // Slow 1/log decay: still well above 1e-2 at n = 60.
        let last = rows.last().unwrap();
        assert!(last.tail_drift > 0.1 && last.tail_drift < 0.3);
    }

    #[test]
    fn i_bound_equals_lambda_route() {
        // Σ_m 2^n λ_{m,n}^{-2} b_{2^m}² P(|X| > b_{2^{m-1}}).
        let d = TailDistribution::pareto(1.5, 1.0).unwrap();
        let norm = Normalizer::new(1.2, log()).unwrap();
        let params = DyadicParams::defaults(1.2);
        let rows = bound_sequences(&d, &norm, &params, 30).unwrap();
        for r in rows {
            let via_lambda: f64 = (1..=r.n)
                .map(|m| {
                    let lam = lambda(m, r.n, params.eps1, params.a, params.b, norm.l()).unwrap();
                    2f64.powi(r.n as i32) / (lam * lam) * norm.dyadic(m).powi(2) * d.tail(norm.dyadic(m - 1))
                })
                .sum();
            assert_relative_eq!(r.i_bound, via_lambda, max_relative = 1e-10);
        }
    }

    #[test]
    fn bound_sequences_trivial_cases() {
        let params = DyadicParams::defaults(1.0);
        let zero = bound_sequences(&TailDistribution::PointMass { c: 0.0 }, &flat(1.0), &params, 30).unwrap();
        assert!(zero
            .iter()
            .all(|r| r.tail_drift == 0.0 && r.i_bound == 0.0 && r.j_bound == 0.0));
        let rows = bound_sequences(&TailDistribution::Uniform { v: 4.0 }, &flat(1.0), &params, 40).unwrap();
        // P(|X| > b_{2^{m-1}}) = 0 from m = 3 on, so the sums freeze and the
        // prefactors decay geometrically.
        for w in rows[3..].windows(2) {
            assert_relative_eq!(w[1].i_bound / w[0].i_bound, 2f64.powf(-0.5), max_relative = 1e-9);
            assert!(w[1].tail_drift < w[0].tail_drift);
        }
        assert!(rows.last().unwrap().j_bound < 1e-2);
    }

    #[test]
    fn reduction_check_examples() {
        let pm = SequenceModel::iid(TailDistribution::PointMass { c: 0.0 });
        let r = dyadic_reduction_check(
            &pm,
            StatisticKind::MaxCenteredTruncmean,
            &flat(1.0),
            100,
            0.1,
            100,
            0,
            Execution::default(),
        )
        .unwrap();
        assert_eq!((r.m, r.direct.p_hat, r.dyadic.p_hat), (7, 0.0, 0.0));
        let ce = SequenceModel::counterexample(1.0).unwrap();
        let r = dyadic_reduction_check(
            &ce,
            StatisticKind::MaxAbs,
            &flat(1.0),
            3000,
            0.2,
            2000,
            5,
            Execution::default(),
        )
        .unwrap();
        assert!(r.direct.p_hat > 0.7 && r.dyadic.p_hat > 0.7, "{r:?}");
    }
}
