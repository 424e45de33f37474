//! Path statistics and Monte Carlo convergence estimates.

use serde::{Deserialize, Serialize};

use crate::distributions::VaryingFamily;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::generators::{stream_id, RngStream, SequenceModel};
use crate::slowly_varying::Normalizer;

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;
pub const MIN_REPS: u64 = 100;

/// Default `ε` for convergence claims.
pub const DEFAULT_EPS: f64 = 0.1;
/// Default `ε` for the counterexample (must stay below 1/4).
pub const DEFAULT_COUNTEREXAMPLE_EPS: f64 = 0.2;

/// Which normalized statistic to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    /// `max_j |Σ_{i≤j} (X_i − E X_i 1(|X_i| ≤ b_n))| / b_n`.
    MaxCenteredTruncmean,
    /// `|S_n − Σ_{i≤n} E X_i 1(|X_i| ≤ b_n)| / b_n`.
    PlainCenteredSum,
    /// `max_j |Σ_{i≤j} (X_i − E X_i)| / b̃_n` with the conjugate normalizer.
    MaxCenteredMean,
    /// `max_i |X_i| / b_n`.
    MaxAbs,
    /// `max_j |Σ_{i≤j} E X_i 1(|X_i| > b̃_n)| / b̃_n`; ignores the path.
    CenteringDrift,
}

impl StatisticKind {
    pub const ALL: [StatisticKind; 5] = [
        StatisticKind::MaxCenteredTruncmean,
        StatisticKind::PlainCenteredSum,
        StatisticKind::MaxCenteredMean,
        StatisticKind::MaxAbs,
        StatisticKind::CenteringDrift,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StatisticKind::MaxCenteredTruncmean => "max_centered_truncmean",
            StatisticKind::PlainCenteredSum => "plain_centered_sum",
            StatisticKind::MaxCenteredMean => "max_centered_mean",
            StatisticKind::MaxAbs => "max_abs",
            StatisticKind::CenteringDrift => "centering_drift",
        }
    }

    /// Whether the kind normalizes by `n^{1/p} L̃^{1/p}(n)` instead of `b_n`.
    pub fn uses_conjugate(self) -> bool {
        matches!(self, StatisticKind::MaxCenteredMean | StatisticKind::CenteringDrift)
    }

    /// The normalizer this kind divides by, derived from `(p, L)`.
    pub fn normalizer(self, norm: &Normalizer) -> Result<Normalizer> {
        if !self.uses_conjugate() {
            return Ok(norm.clone());
        }
        Normalizer::conjugate(norm.p(), norm.l()).map_err(|e| match e {
            Error::NoAnalyticConjugate(l) => {
                Error::KindMismatch(format!("{} needs an analytic conjugate of L = {l}", self.name()))
            }
            other => other,
        })
    }
}

impl std::fmt::Display for StatisticKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A statistic with its scale and analytic centering fixed for one `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedStatistic {
    kind: StatisticKind,
    n: usize,
    scale: f64,
    /// Per-coordinate centering, the same for every `i`.
    center: f64,
    /// Value of the deterministic kind.
    fixed: Option<f64>,
}

impl PreparedStatistic {
    pub fn new(kind: StatisticKind, fam: &VaryingFamily, norm: &Normalizer, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::PathLength(0));
        }
        let norm = kind.normalizer(norm)?;
        let scale = norm.value(n as u64);
        let mut center = 0.0;
        let mut fixed = None;
        match kind {
            StatisticKind::MaxCenteredTruncmean | StatisticKind::PlainCenteredSum => {
                center = identical_or_zero(fam, |law| law.truncated_mean(scale))?;
            }
            StatisticKind::MaxCenteredMean => {
                center = identical_or_zero(fam, |law| {
                    law.mean()?
                        .ok_or_else(|| Error::KindMismatch("max_centered_mean needs E|X| < infinity".into()))
                })?;
            }
            StatisticKind::MaxAbs => {}
            StatisticKind::CenteringDrift => {
                let upper = identical_or_zero(fam, |law| {
                    if law.is_symmetric() {
                        return Ok(0.0);
                    }
                    law.upper_mean(scale)?
                        .ok_or_else(|| Error::KindMismatch("centering_drift needs E|X| < infinity".into()))
                })?;
                // Partial sums j · upper peak at j = n.
                fixed = Some(n as f64 * upper.abs() / scale);
            }
        }
        Ok(Self {
            kind,
            n,
            scale,
            center,
            fixed,
        })
    }

    pub fn kind(&self) -> StatisticKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Normalizing constant used at this `n`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    /// The value of a path-independent kind.
    pub fn fixed_value(&self) -> Option<f64> {
        self.fixed
    }

    /// Evaluates on a path of length `n`.
    pub fn evaluate(&self, path: &[f64]) -> Result<f64> {
        if path.len() != self.n {
            return Err(Error::PathLength(path.len()));
        }
        if let Some(v) = self.fixed {
            return Ok(v);
        }
        Ok(match self.kind {
            StatisticKind::MaxAbs => path.iter().fold(0.0f64, |m, x| m.max(x.abs())) / self.scale,
            StatisticKind::PlainCenteredSum => {
                (path.iter().sum::<f64>() - self.n as f64 * self.center).abs() / self.scale
            }
            _ => max_abs_partial_sum(path, self.center) / self.scale,
        })
    }
}

/// The centering for families whose members are identical; symmetric
/// index-dependent families center at 0.
fn identical_or_zero(
    fam: &VaryingFamily,
    f: impl FnOnce(&crate::distributions::TailDistribution) -> Result<f64>,
) -> Result<f64> {
    match fam {
        VaryingFamily::Identical { law } => f(law),
        VaryingFamily::Counterexample { .. } => Ok(0.0),
    }
}

/// `max_j |Σ_{i≤j} (x_i − c)|`.
pub fn max_abs_partial_sum(path: &[f64], c: f64) -> f64 {
    let mut s = 0.0;
    let mut best = 0.0f64;
    for &x in path {
        s += x - c;
        best = best.max(s.abs());
    }
    best
}

/// Statistic of `kind` on `path`, with `n = path.len()`.
pub fn statistic_value(kind: StatisticKind, path: &[f64], fam: &VaryingFamily, norm: &Normalizer) -> Result<f64> {
    PreparedStatistic::new(kind, fam, norm, path.len())?.evaluate(path)
}

/// `Σ_{i=1}^n P(|X_i| > ε b_n)`.
pub fn tail_sum(fam: &VaryingFamily, norm: &Normalizer, n: u64, eps: f64) -> f64 {
    fam.tail_sum_range(1, n, eps * norm.value(n))
}

/// `Σ_{i=⌊n/2⌋}^n P(|X_i| > ε b_n)`.
pub fn restricted_tail_sum(fam: &VaryingFamily, norm: &Normalizer, n: u64, eps: f64) -> f64 {
    fam.tail_sum_range((n / 2).max(1), n, eps * norm.value(n))
}

/// Exact `P(max_{i≤n} |X_i| > ε n^{1/p})` for the counterexample, from the
/// telescoping product `Π_{i=m}^n (1 − 1/i) = (m − 1)/n`.
pub fn counterexample_max_prob(p: f64, n: u64, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 0.25) {
        return Err(Error::InvalidParameter(format!(
            "counterexample needs eps in (0, 1/4), got {eps}"
        )));
    }
    if n == 0 || !(p > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need n >= 1 and p > 0 (got n={n}, p={p})"
        )));
    }
    let x = eps * crate::distributions::counterexample_value(n, p);
    Ok(match VaryingFamily::first_exceeding(p, x) {
        Some(m) if m <= n => 1.0 - (m - 1) as f64 / n as f64,
        _ => 0.0,
    })
}

/// One grid point of a convergence campaign.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceEstimate {
    pub n: u64,
    pub eps: f64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub reps: u64,
    pub hits: u64,
}

/// Wilson 95% interval for `hits` out of `reps`.
pub fn wilson_interval(hits: u64, reps: u64) -> (f64, f64) {
    let n = reps as f64;
    let p = hits as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let mid = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if hits == 0 { 0.0 } else { (mid - half).clamp(0.0, p) };
    let hi = if hits == reps { 1.0 } else { (mid + half).clamp(p, 1.0) };
    (lo, hi)
}

impl ConvergenceEstimate {
    pub fn from_counts(n: u64, eps: f64, hits: u64, reps: u64) -> Self {
        let (ci_low, ci_high) = wilson_interval(hits, reps);
        Self {
            n,
            eps,
            p_hat: hits as f64 / reps as f64,
            ci_low,
            ci_high,
            reps,
            hits,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Converges,
    Diverges,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Converges => "converges",
            Verdict::Diverges => "diverges",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

/// Decision thresholds for [`verdict`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictThresholds {
    /// "converges" needs the largest-`n` upper bound below this.
    #[serde(default = "default_converge_upper")]
    pub converge_upper: f64,
    /// "diverges" needs the largest-`n` lower bound above this.
    #[serde(default = "default_diverge_lower")]
    pub diverge_lower: f64,
}

fn default_converge_upper() -> f64 {
    0.05
}

fn default_diverge_lower() -> f64 {
    0.2
}

impl Default for VerdictThresholds {
    fn default() -> Self {
        Self {
            converge_upper: default_converge_upper(),
            diverge_lower: default_diverge_lower(),
        }
    }
}

/// "converges" when the last upper bound is below `converge_upper` and
/// `p_hat` does not increase over the last three grid points; "diverges"
/// when the last lower bound exceeds `diverge_lower`.
pub fn verdict(estimates: &[ConvergenceEstimate], th: &VerdictThresholds) -> Verdict {
    let Some(last) = estimates.last() else {
        return Verdict::Inconclusive;
    };
    let tail = &estimates[estimates.len().saturating_sub(3)..];
    let non_increasing = tail.windows(2).all(|w| w[1].p_hat <= w[0].p_hat);
    if last.ci_high < th.converge_upper && non_increasing {
        Verdict::Converges
    } else if last.ci_low > th.diverge_lower {
        Verdict::Diverges
    } else {
        Verdict::Inconclusive
    }
}

/// Estimates and verdict of one campaign.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub kind: StatisticKind,
    pub model_hash: String,
    pub seed: u64,
    pub estimates: Vec<ConvergenceEstimate>,
    pub verdict: Verdict,
}

/// Inputs of [`estimate_convergence`].
#[derive(Clone, Debug)]
pub struct Campaign<'a> {
    pub model: &'a SequenceModel,
    pub kind: StatisticKind,
    pub norm: &'a Normalizer,
    pub n_grid: &'a [u64],
    pub eps: f64,
    pub reps: u64,
    pub seed: u64,
    pub thresholds: VerdictThresholds,
}

/// Fraction of replications with statistic `> ε` per grid point.
/// Grid point `g`, replication `r` draws from stream `stream_id(g, r)`.
pub fn estimate_convergence(c: &Campaign<'_>, exec: Execution) -> Result<ConvergenceReport> {
    if c.reps < MIN_REPS {
        return Err(Error::InvalidParameter(format!(
            "reps must be at least {MIN_REPS}, got {}",
            c.reps
        )));
    }
    if c.n_grid.is_empty() || c.n_grid.windows(2).any(|w| w[1] <= w[0]) || c.n_grid[0] == 0 {
        return Err(Error::InvalidParameter(
            "n_grid must be a non-empty increasing list of positive integers".into(),
        ));
    }
    if !(c.eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {}", c.eps)));
    }
    c.model.validate()?;
    let fam = c.model.family();
    let mut estimates = Vec::with_capacity(c.n_grid.len());
    for (g, &n) in c.n_grid.iter().enumerate() {
        let stat = PreparedStatistic::new(c.kind, &fam, c.norm, n as usize)?;
        let hits = count_exceedances(c.model, &stat, c.eps, c.reps, c.seed, g as u64, exec)?;
        estimates.push(ConvergenceEstimate::from_counts(n, c.eps, hits, c.reps));
    }
    let verdict = verdict(&estimates, &c.thresholds);
    Ok(ConvergenceReport {
        kind: c.kind,
        model_hash: c.model.model_hash(),
        seed: c.seed,
        estimates,
        verdict,
    })
}

/// Number of replications `r < reps` whose statistic exceeds `eps`.
pub fn count_exceedances(
    model: &SequenceModel,
    stat: &PreparedStatistic,
    eps: f64,
    reps: u64,
    seed: u64,
    grid: u64,
    exec: Execution,
) -> Result<u64> {
    if let Some(v) = stat.fixed {
        return Ok(if v > eps { reps } else { 0 });
    }
    let outcomes = exec.map_init(reps, Vec::new, |buf, r| -> Result<bool> {
        let mut rng = RngStream::new(seed, stream_id(grid, r));
        model.generate_into(stat.n, &mut rng, buf)?;
        Ok(stat.evaluate(buf)? > eps)
    });
    let mut hits = 0;
    for o in outcomes {
        hits += u64::from(o?);
    }
    Ok(hits)
}
