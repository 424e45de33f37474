//! Config-driven batch runner behind the `wlln-lab` binary.
//!
//! A run reads one JSON [`ExperimentConfig`], executes it through the library
//! and writes CSV tables, plot data and a `summary.json` into the output
//! directory. Exit status is 0 whenever the run completes, 2 for an invalid
//! config and 1 for runtime failures.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::distributions::{
    counterexample_value, gut_condition, uniform_integrability_gap, TailDistribution, VaryingFamily,
};
use crate::dyadic::{bound_sequences, km_sequence, lambda_sum, DyadicParams, DyadicPlan};
use crate::error::Error;
use crate::exec::{with_threads, Execution};
use crate::generators::{
    hash_hex, stream_id, variance_inequality_check, verify_not_mutually_independent, verify_pairwise_independence,
    RngStream, SequenceModel, Transform, ENUMERATION_MAX_Q,
};
use crate::maxsum_stats::{
    counterexample_max_prob, estimate_convergence, restricted_tail_sum, Campaign, ConvergenceReport, StatisticKind,
    VerdictThresholds, DEFAULT_COUNTEREXAMPLE_EPS, DEFAULT_EPS, MIN_REPS,
};
use crate::slowly_varying::{Normalizer, SlowlyVaryingFn};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_OUT_DIR: &str = "wlln-lab-out";

/// One batch run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reps: Option<u64>,
    /// Output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub experiment: Experiment,
}

/// Grid of sample sizes: an explicit list, `2^lo..=2^hi` or `10^lo..=10^hi`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NGrid {
    List(Vec<u64>),
    Pow2 { pow2: [u32; 2] },
    Pow10 { pow10: [u32; 2] },
}

impl NGrid {
    pub fn values(&self) -> Result<Vec<u64>, String> {
        let powers = |base: u64, lo: u32, hi: u32, max: u32| -> Result<Vec<u64>, String> {
            if lo > hi || hi > max {
                return Err(format!(
                    "exponent range [{lo}, {hi}] must be increasing and at most {max}"
                ));
            }
            Ok((lo..=hi).map(|k| base.pow(k)).collect())
        };
        let v = match self {
            NGrid::List(v) => v.clone(),
            NGrid::Pow2 { pow2: [lo, hi] } => powers(2, *lo, *hi, 40)?,
            NGrid::Pow10 { pow10: [lo, hi] } => powers(10, *lo, *hi, 18)?,
        };
        if v.is_empty() || v[0] == 0 || v.windows(2).any(|w| w[1] <= w[0]) {
            return Err("n_grid must be a non-empty increasing list of positive integers".into());
        }
        Ok(v)
    }
}

fn default_eps() -> f64 {
    DEFAULT_EPS
}

fn default_ce_eps() -> f64 {
    DEFAULT_COUNTEREXAMPLE_EPS
}

fn default_statistic() -> StatisticKind {
    StatisticKind::MaxCenteredTruncmean
}

fn default_ce_statistic() -> StatisticKind {
    StatisticKind::MaxAbs
}

fn default_bound_n_max() -> u32 {
    60
}

fn default_km_m_max() -> u32 {
    30
}

fn default_tol() -> f64 {
    1e-12
}

fn default_ln_x() -> Vec<f64> {
    vec![10.0, 20.0, 50.0, 100.0, 200.0]
}

fn is_default_thresholds(t: &VerdictThresholds) -> bool {
    *t == VerdictThresholds::default()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    /// `n P(|X| > b_n)` over the grid.
    CheckCondition {
        law: TailDistribution,
        normalizer: Normalizer,
        n_grid: NGrid,
    },
    Simulate {
        model: SequenceModel,
        normalizer: Normalizer,
        #[serde(default = "default_statistic")]
        statistic: StatisticKind,
        n_grid: NGrid,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default, skip_serializing_if = "is_default_thresholds")]
        thresholds: VerdictThresholds,
    },
    /// Counterexample sequence with `b_n = n^{1/p}`, plus exact columns.
    Counterexample {
        p: f64,
        n_grid: NGrid,
        #[serde(default = "default_ce_eps")]
        eps: f64,
        #[serde(default = "default_ce_statistic")]
        statistic: StatisticKind,
        #[serde(default, skip_serializing_if = "is_default_thresholds")]
        thresholds: VerdictThresholds,
    },
    /// Pathwise decomposition on `reps` paths of length `2^scales − 1`, plus
    /// the deterministic sequences.
    Dyadic {
        model: SequenceModel,
        normalizer: Normalizer,
        scales: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params: Option<DyadicParams>,
        /// Extra values of `a` for the threshold sums, with `b = 1/p − a`.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        alternate_a: Vec<f64>,
        #[serde(default = "default_bound_n_max")]
        bound_n_max: u32,
        #[serde(default = "default_km_m_max")]
        km_m_max: u32,
    },
    /// Conjugate identity and fixed-point solver over `x = e^{ln_x}`.
    SvVerify {
        #[serde(rename = "L")]
        l: SlowlyVaryingFn,
        #[serde(default = "default_ln_x")]
        ln_x: Vec<f64>,
        #[serde(default = "default_tol")]
        tol: f64,
    },
    UiCheck {
        family: VaryingFamily,
        p: f64,
        #[serde(rename = "L", default = "SlowlyVaryingFn::one")]
        l: SlowlyVaryingFn,
        a: Vec<f64>,
    },
    VarianceCheck {
        model: SequenceModel,
        transforms: Vec<Transform>,
        ells: Vec<usize>,
        /// Window offset.
        #[serde(default)]
        k: usize,
    },
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::CheckCondition { .. } => "check-condition",
            Experiment::Simulate { .. } => "simulate",
            Experiment::Counterexample { .. } => "counterexample",
            Experiment::Dyadic { .. } => "dyadic",
            Experiment::SvVerify { .. } => "sv-verify",
            Experiment::UiCheck { .. } => "ui-check",
            Experiment::VarianceCheck { .. } => "variance-check",
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(
            self,
            Experiment::Simulate { .. }
                | Experiment::Counterexample { .. }
                | Experiment::Dyadic { .. }
                | Experiment::VarianceCheck { .. }
        )
    }
}

/// Failures of a CLI run.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] Error),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs serialize")
    }

    /// Hash of schema, seed, reps and experiment; the output path is excluded.
    pub fn config_hash(&self) -> String {
        let view = json!({
            "schema": self.schema,
            "seed": self.seed,
            "reps": self.reps,
            "experiment": self.experiment,
        });
        hash_hex(view.to_string().as_bytes())
    }

    /// Checks that serde cannot express.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.schema != SCHEMA_VERSION {
            return bad(format!(
                "unsupported schema {} (expected {SCHEMA_VERSION})",
                self.schema
            ));
        }
        if self.experiment.is_stochastic() {
            if self.seed.is_none() {
                return bad(format!("`seed` is required for {}", self.experiment.kind()));
            }
            match self.reps {
                None => return bad(format!("`reps` is required for {}", self.experiment.kind())),
                Some(r) if r < MIN_REPS => return bad(format!("`reps` must be at least {MIN_REPS}, got {r}")),
                _ => {}
            }
        }
        let model_check = |m: &SequenceModel| m.validate().map_err(|e| CliError::Config(e.to_string()));
        let eps_check = |eps: f64| {
            if eps > 0.0 && eps.is_finite() {
                Ok(())
            } else {
                Err(CliError::Config(format!("eps must be positive, got {eps}")))
            }
        };
        let grid_check = |g: &NGrid| g.values().map(|_| ()).map_err(CliError::Config);
        match &self.experiment {
            Experiment::CheckCondition { law, n_grid, .. } => {
                law.validate().map_err(|e| CliError::Config(e.to_string()))?;
                grid_check(n_grid)?;
            }
            Experiment::Simulate { model, n_grid, eps, .. } => {
                model_check(model)?;
                grid_check(n_grid)?;
                eps_check(*eps)?;
            }
            Experiment::Counterexample { p, n_grid, eps, .. } => {
                VaryingFamily::counterexample(*p).map_err(|e| CliError::Config(e.to_string()))?;
                Normalizer::new(*p, SlowlyVaryingFn::one()).map_err(|e| CliError::Config(e.to_string()))?;
                grid_check(n_grid)?;
                eps_check(*eps)?;
            }
            Experiment::Dyadic {
                model,
                normalizer,
                scales,
                params,
                ..
            } => {
                model_check(model)?;
                if !matches!(model.family(), VaryingFamily::Identical { .. }) {
                    return bad("dyadic needs identically distributed coordinates".into());
                }
                if !(1..=24).contains(scales) {
                    return bad(format!("scales must be in 1..=24, got {scales}"));
                }
                if let Some(pr) = params {
                    pr.validate(normalizer.p())
                        .map_err(|e| CliError::Config(e.to_string()))?;
                }
            }
            Experiment::SvVerify { ln_x, tol, .. } => {
                if ln_x.iter().any(|&u| !(u >= 1.0)) {
                    return bad("ln_x values must be at least 1".into());
                }
                if !(*tol > 0.0) {
                    return bad(format!("tol must be positive, got {tol}"));
                }
            }
            Experiment::UiCheck { a, .. } => {
                if a.iter().any(|&a| !(a > 0.0)) {
                    return bad("a values must be positive".into());
                }
            }
            Experiment::VarianceCheck {
                model,
                transforms,
                ells,
                ..
            } => {
                model_check(model)?;
                for t in transforms {
                    t.validate().map_err(|e| CliError::Config(e.to_string()))?;
                }
                if ells.is_empty() || ells.contains(&0) {
                    return bad("ells must be a non-empty list of positive window lengths".into());
                }
            }
        }
        Ok(())
    }
}

/// A CSV cell.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(u64),
    Real(f64),
    Text(String),
    Bool(bool),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Real(v) => format_real(*v),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
        }
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Real(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

/// Named table written as `<name>.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: impl Into<String>, header: &[&'static str]) -> Self {
        Self {
            name: name.into(),
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// RFC 4180 text with `\n` line endings.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| *h == name)
    }

    /// Copy restricted to `columns`, in that order.
    pub fn select(&self, name: impl Into<String>, columns: &[&'static str]) -> Table {
        let idx: Vec<usize> = columns.iter().map(|c| self.column(c).expect("known column")).collect();
        Table {
            name: name.into(),
            header: columns.to_vec(),
            rows: self
                .rows
                .iter()
                .map(|r| idx.iter().map(|&i| r[i].clone()).collect())
                .collect(),
        }
    }
}

/// Everything a run produces before it touches the file system.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub kind: &'static str,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub tables: Vec<Table>,
    pub plots: Vec<Table>,
    pub summary: Map<String, Value>,
}

impl ExperimentReport {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn summary_json(&self) -> String {
        let mut m = Map::new();
        m.insert("schema".into(), json!(SCHEMA_VERSION));
        m.insert("experiment".into(), json!(self.kind));
        m.insert("config_hash".into(), json!(self.config_hash));
        m.insert("seed".into(), json!(self.seed));
        let mut files: Vec<String> = self.tables.iter().map(|t| format!("{}.csv", t.name)).collect();
        files.extend(self.plots.iter().map(|t| format!("plot_{}.csv", t.name)));
        m.insert("files".into(), json!(files));
        for (k, v) in &self.summary {
            m.insert(k.clone(), v.clone());
        }
        let mut s = serde_json::to_string_pretty(&Value::Object(m)).expect("summary serializes");
        s.push('\n');
        s
    }
}

/// Reals with 17 significant digits, fixed notation for exponents in
/// `[-5, 17)`, trailing zeros dropped.
pub fn format_real(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    let sci = format!("{x:.16e}");
    let (mant, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..17).contains(&exp) {
        trim(&format!("{:.*}", (16 - exp) as usize, x))
    } else {
        format!("{}e{exp}", trim(mant))
    }
}

/// Writes tables, plot data and `summary.json` into `dir`.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut written = Vec::new();
    for t in &report.tables {
        written.push(write_table(t, &dir.join(format!("{}.csv", t.name)))?);
    }
    written.extend(emit_plotdata(report, dir)?);
    let path = dir.join("summary.json");
    std::fs::write(&path, report.summary_json()).map_err(|e| CliError::io(&path, e))?;
    written.push(path);
    Ok(written)
}

/// Writes the long-format plot tables as `plot_<name>.csv`.
pub fn emit_plotdata(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    report
        .plots
        .iter()
        .map(|t| write_table(t, &dir.join(format!("plot_{}.csv", t.name))))
        .collect()
}

fn write_table(t: &Table, path: &Path) -> Result<PathBuf, CliError> {
    std::fs::write(path, t.to_csv()).map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

/// Runs a validated config.
pub fn run(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentReport, CliError> {
    cfg.validate()?;
    let seed = cfg.seed.unwrap_or(0);
    let reps = cfg.reps.unwrap_or(0);
    let mut report = ExperimentReport {
        kind: cfg.experiment.kind(),
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
        tables: Vec::new(),
        plots: Vec::new(),
        summary: Map::new(),
    };
    match &cfg.experiment {
        Experiment::CheckCondition {
            law,
            normalizer,
            n_grid,
        } => {
            let grid = n_grid.values().map_err(CliError::Config)?;
            run_check_condition(&mut report, law, normalizer, &grid);
        }
        Experiment::Simulate {
            model,
            normalizer,
            statistic,
            n_grid,
            eps,
            thresholds,
        } => {
            let grid = n_grid.values().map_err(CliError::Config)?;
            let campaign = Campaign {
                model,
                kind: *statistic,
                norm: normalizer,
                n_grid: &grid,
                eps: *eps,
                reps,
                seed,
                thresholds: *thresholds,
            };
            let conv = estimate_convergence(&campaign, exec)?;
            push_convergence(&mut report, &conv);
        }
        Experiment::Counterexample {
            p,
            n_grid,
            eps,
            statistic,
            thresholds,
        } => {
            let grid = n_grid.values().map_err(CliError::Config)?;
            run_counterexample(&mut report, *p, &grid, *eps, *statistic, *thresholds, reps, seed, exec)?;
        }
        Experiment::Dyadic {
            model,
            normalizer,
            scales,
            params,
            alternate_a,
            bound_n_max,
            km_m_max,
        } => {
            let params = params.unwrap_or_else(|| DyadicParams::defaults(normalizer.p()));
            let setup = DyadicSetup {
                model,
                norm: normalizer,
                scales: *scales,
                params,
                alternate_a,
                bound_n_max: *bound_n_max,
                km_m_max: *km_m_max,
            };
            run_dyadic(&mut report, &setup, reps, seed, exec)?;
        }
        Experiment::SvVerify { l, ln_x, tol } => run_sv_verify(&mut report, l, ln_x, *tol)?,
        Experiment::UiCheck { family, p, l, a } => {
            let mut t = Table::new("ui_gap", &["a", "gap"]);
            let mut worst = 0.0f64;
            for &a in a {
                let g = uniform_integrability_gap(family, *p, l, a)?;
                worst = worst.max(g);
                t.push(vec![a.into(), g.into()]);
            }
            report.plots.push(t.clone());
            report.tables.push(t);
            report.summary.insert("max_gap".into(), json!(worst));
        }
        Experiment::VarianceCheck {
            model,
            transforms,
            ells,
            k,
        } => run_variance_check(&mut report, model, transforms, ells, *k, reps, seed, exec)?,
    }
    Ok(report)
}

fn run_check_condition(report: &mut ExperimentReport, law: &TailDistribution, norm: &Normalizer, grid: &[u64]) {
    let mut t = Table::new("condition", &["n", "b_n", "n_tail"]);
    let values: Vec<f64> = grid.iter().map(|&n| gut_condition(law, norm, n)).collect();
    for (&n, &v) in grid.iter().zip(&values) {
        t.push(vec![n.into(), norm.value(n).into(), v.into()]);
    }
    let trend = if values.windows(2).all(|w| w[1] == w[0]) {
        "constant"
    } else if values.windows(2).all(|w| w[1] <= w[0]) {
        "non-increasing"
    } else if values.windows(2).all(|w| w[1] >= w[0]) {
        "non-decreasing"
    } else {
        "mixed"
    };
    report.summary.insert("trend".into(), json!(trend));
    report.summary.insert("last_n_tail".into(), json!(values.last()));
    report.plots.push(t.select("condition", &["n", "n_tail"]));
    report.tables.push(t);
}

const CONVERGENCE_COLUMNS: [&str; 9] = [
    "n",
    "eps",
    "reps",
    "p_hat",
    "ci_low",
    "ci_high",
    "statistic_kind",
    "model_hash",
    "seed",
];

fn push_convergence(report: &mut ExperimentReport, conv: &ConvergenceReport) {
    let mut t = Table::new("convergence", &CONVERGENCE_COLUMNS);
    for e in &conv.estimates {
        t.push(vec![
            e.n.into(),
            e.eps.into(),
            e.reps.into(),
            e.p_hat.into(),
            e.ci_low.into(),
            e.ci_high.into(),
            conv.kind.name().into(),
            conv.model_hash.as_str().into(),
            conv.seed.into(),
        ]);
    }
    report
        .plots
        .push(t.select("convergence", &["n", "eps", "p_hat", "ci_low", "ci_high"]));
    report.tables.push(t);
    report.summary.insert("verdict".into(), json!(conv.verdict.to_string()));
    report.summary.insert("statistic_kind".into(), json!(conv.kind.name()));
    report.summary.insert("model_hash".into(), json!(conv.model_hash));
    if let Some(last) = conv.estimates.last() {
        report.summary.insert("last_p_hat".into(), json!(last.p_hat));
        report.summary.insert("last_ci_high".into(), json!(last.ci_high));
    }
}

#[allow(clippy::too_many_arguments)]
fn run_counterexample(
    report: &mut ExperimentReport,
    p: f64,
    grid: &[u64],
    eps: f64,
    kind: StatisticKind,
    thresholds: VerdictThresholds,
    reps: u64,
    seed: u64,
    exec: Execution,
) -> Result<(), CliError> {
    let model = SequenceModel::counterexample(p)?;
    let norm = Normalizer::new(p, SlowlyVaryingFn::one())?;
    let campaign = Campaign {
        model: &model,
        kind,
        norm: &norm,
        n_grid: grid,
        eps,
        reps,
        seed,
        thresholds,
    };
    let conv = estimate_convergence(&campaign, exec)?;
    let fam = model.family();
    let exact_applies = kind == StatisticKind::MaxAbs && eps < 0.25;
    let mut t = Table::new("exact", &["n", "eps", "exact_p", "z_score", "restricted_tail_sum"]);
    let mut worst_z = 0.0f64;
    for e in &conv.estimates {
        let (exact, z) = if exact_applies {
            let exact = counterexample_max_prob(p, e.n, eps)?;
            let se = (exact * (1.0 - exact) / reps as f64).sqrt();
            let z = if se > 0.0 {
                (e.p_hat - exact) / se
            } else if e.p_hat == exact {
                0.0
            } else {
                f64::INFINITY
            };
            worst_z = worst_z.max(z.abs());
            (exact, z)
        } else {
            (f64::NAN, f64::NAN)
        };
        let rts = restricted_tail_sum(&fam, &norm, e.n, eps);
        t.push(vec![e.n.into(), eps.into(), exact.into(), z.into(), rts.into()]);
    }
    push_convergence(report, &conv);
    if exact_applies {
        report.summary.insert("max_abs_z_score".into(), json!(worst_z));
    }
    report.summary.insert(
        "x_n_at_last_n".into(),
        json!(grid.last().map(|&n| counterexample_value(n, p))),
    );
    report.tables.push(t);
    Ok(())
}

struct DyadicSetup<'a> {
    model: &'a SequenceModel,
    norm: &'a Normalizer,
    scales: u32,
    params: DyadicParams,
    alternate_a: &'a [f64],
    bound_n_max: u32,
    km_m_max: u32,
}

fn run_dyadic(
    report: &mut ExperimentReport,
    s: &DyadicSetup<'_>,
    reps: u64,
    seed: u64,
    exec: Execution,
) -> Result<(), CliError> {
    let VaryingFamily::Identical { law } = s.model.family() else {
        return Err(CliError::Config(
            "dyadic needs identically distributed coordinates".into(),
        ));
    };
    let plan = DyadicPlan::new(&law, s.norm, s.scales)?;
    let len = plan.path_len();
    let decs = exec.map_init(reps, Vec::new, |buf, r| {
        s.model
            .generate_into(len, &mut RngStream::new(seed, stream_id(0, r)), buf)?;
        plan.decompose(buf)
    });
    let mut slack = Table::new("slack", &["path", "lhs", "rhs", "slack", "violated"]);
    let (mut violations, mut min_slack) = (0u64, f64::INFINITY);
    for (r, d) in decs.into_iter().enumerate() {
        let d = d?;
        violations += d.violated() as u64;
        min_slack = min_slack.min(d.slack());
        slack.push(vec![
            (r as u64).into(),
            d.lhs.into(),
            d.rhs().into(),
            d.slack().into(),
            d.violated().into(),
        ]);
    }
    report.summary.insert("paths".into(), json!(reps));
    report.summary.insert("violations".into(), json!(violations));
    report.summary.insert("min_slack".into(), json!(min_slack));

    let mut bounds = Table::new("bounds", &["n", "tail_drift", "I_bound", "J_bound"]);
    let rows = bound_sequences(&law, s.norm, &s.params, s.bound_n_max)?;
    for r in &rows {
        bounds.push(vec![
            u64::from(r.n).into(),
            r.tail_drift.into(),
            r.i_bound.into(),
            r.j_bound.into(),
        ]);
    }
    if let Some(last) = rows.last() {
        report.summary.insert(
            "bounds_at_n_max".into(),
            json!({"n": last.n, "tail_drift": last.tail_drift, "I_bound": last.i_bound, "J_bound": last.j_bound}),
        );
    }

    let mut km = Table::new("km", &["m", "k_m", "bound"]);
    for e in km_sequence(&law, s.norm, s.km_m_max)? {
        km.push(vec![u64::from(e.m).into(), e.k_m.into(), e.bound.into()]);
    }

    let mut lam = Table::new("lambda", &["a", "b", "n", "sum", "bound"]);
    let mut all_params = vec![s.params];
    all_params.extend(
        s.alternate_a
            .iter()
            .map(|&a| DyadicParams::with_a(s.norm.p(), a, s.params.eps1)),
    );
    let mut worst_ratio = 0.0f64;
    for pr in &all_params {
        for n in 1..=s.bound_n_max {
            let ls = lambda_sum(n, pr, s.norm)?;
            worst_ratio = worst_ratio.max(ls.sum / ls.bound);
            lam.push(vec![
                pr.a.into(),
                pr.b.into(),
                u64::from(n).into(),
                ls.sum.into(),
                ls.bound.into(),
            ]);
        }
    }
    report.summary.insert("lambda_max_ratio".into(), json!(worst_ratio));

    report.plots.push(bounds.clone());
    report.tables.extend([slack, bounds, km, lam]);
    Ok(())
}

fn run_sv_verify(report: &mut ExperimentReport, l: &SlowlyVaryingFn, ln_x: &[f64], tol: f64) -> Result<(), CliError> {
    let conj = match l.de_bruijn_conjugate() {
        Ok(c) => Some(c),
        Err(Error::NoAnalyticConjugate(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let mut t = Table::new(
        "conjugate",
        &[
            "ln_x",
            "identity",
            "identity_gap",
            "analytic",
            "numeric",
            "relative_gap",
        ],
    );
    let mut gaps = Vec::new();
    for &u in ln_x {
        let numeric = l.de_bruijn_numeric_ln(u, tol)?;
        let (identity, analytic) = match &conj {
            Some(c) => (l.conjugate_identity_ln(c, u), c.eval_ln(u)),
            None => (f64::NAN, f64::NAN),
        };
        let gap = (identity - 1.0).abs();
        gaps.push(gap);
        t.push(vec![
            u.into(),
            identity.into(),
            gap.into(),
            analytic.into(),
            numeric.into(),
            (numeric / analytic - 1.0).abs().into(),
        ]);
    }
    report.summary.insert("L".into(), json!(l.to_string()));
    report.summary.insert(
        "identity_gap_non_increasing".into(),
        json!(conj.is_some() && gaps.windows(2).all(|w| w[1] <= w[0])),
    );
    report.summary.insert("last_identity_gap".into(), json!(gaps.last()));
    report
        .plots
        .push(t.select("conjugate", &["ln_x", "identity_gap", "relative_gap"]));
    report.tables.push(t);
    Ok(())
}

fn transform_label(t: &Transform) -> String {
    match t {
        Transform::Identity => "identity".into(),
        Transform::Clip { lo, hi } => format!("clip[{lo},{hi}]"),
        Transform::Softplus { scale } => format!("softplus[{scale}]"),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_variance_check(
    report: &mut ExperimentReport,
    model: &SequenceModel,
    transforms: &[Transform],
    ells: &[usize],
    k: usize,
    reps: u64,
    seed: u64,
    exec: Execution,
) -> Result<(), CliError> {
    let mut t = Table::new("variance", &["transform", "ell", "ratio", "std_error", "z", "reps"]);
    let mut worst_z = 0.0f64;
    let mut grid = 0u64;
    for tr in transforms {
        for &ell in ells {
            let v = variance_inequality_check(model, tr, k, ell, reps, seed, grid, exec)?;
            grid += 1;
            let z = (v.ratio - 1.0) / v.std_error;
            worst_z = worst_z.max(z.abs());
            t.push(vec![
                transform_label(tr).into(),
                (ell as u64).into(),
                v.ratio.into(),
                v.std_error.into(),
                z.into(),
                v.reps.into(),
            ]);
        }
    }
    report.summary.insert("model_hash".into(), json!(model.model_hash()));
    report.summary.insert("max_abs_z".into(), json!(worst_z));
    report
        .plots
        .push(t.select("variance", &["transform", "ell", "ratio", "std_error"]));
    report.tables.push(t);
    if let SequenceModel::Joffe(j) = model {
        if j.q() <= ENUMERATION_MAX_Q {
            let pw = verify_pairwise_independence(model)?;
            let not_mutual = verify_not_mutually_independent(model)?;
            let mut e = Table::new("pairwise", &["q", "pass", "max_deviation", "not_mutually_independent"]);
            e.push(vec![
                j.q().into(),
                pw.pass.into(),
                pw.max_deviation.into(),
                not_mutual.into(),
            ]);
            report.summary.insert("pairwise_pass".into(), json!(pw.pass));
            report
                .summary
                .insert("not_mutually_independent".into(), json!(not_mutual));
            report.tables.push(e);
        }
    }
    Ok(())
}

/// Built-in configs, one per reproduced claim.
pub fn presets() -> Vec<(&'static str, &'static str, ExperimentConfig)> {
    let pareto1 = json!({"kind": "pareto", "q": 1.0});
    let log_norm = json!({"p": 1.0, "L": "log"});
    let raw = [
        (
            "counterexample",
            "counterexample sequence, p=1, eps=0.2: max probability stays near 0.8",
            json!({"schema": 1, "seed": 1, "reps": 10000, "experiment": {
                "kind": "counterexample", "p": 1.0, "eps": 0.2, "n_grid": [1000, 10000, 100000]}}),
        ),
        (
            "counterexample-lower-bound",
            "restricted tail sums of the counterexample over n=10..10^6, p=1.9",
            json!({"schema": 1, "seed": 2, "reps": 1000, "experiment": {
                "kind": "counterexample", "p": 1.9, "eps": 0.2, "n_grid": {"pow10": [1, 6]}}}),
        ),
        (
            "ui-failure",
            "uniform-integrability gap of the counterexample, p=1, L=1",
            json!({"schema": 1, "experiment": {
                "kind": "ui-check", "family": {"kind": "counterexample", "p": 1.0}, "p": 1.0, "a": [1.0, 10.0, 1000.0]}}),
        ),
        (
            "joffe-positive",
            "pairwise independent Joffe blocks, Pareto q=1, p=1, L=log",
            json!({"schema": 1, "seed": 4, "reps": 2000, "experiment": {
                "kind": "simulate",
                "model": {"kind": "joffe", "q": 4099, "marginal": pareto1, "blocks": true},
                "normalizer": log_norm, "statistic": "max_centered_truncmean",
                "eps": 0.1, "n_grid": {"pow2": [10, 16]}}}),
        ),
        (
            "gut-boundary",
            "n P(|X| > b_n) for Pareto q=1, p=1, L=1 (identically 1)",
            json!({"schema": 1, "experiment": {
                "kind": "check-condition", "law": pareto1, "normalizer": {"p": 1.0, "L": "1"},
                "n_grid": {"pow10": [1, 12]}}}),
        ),
        (
            "gut-log",
            "n P(|X| > b_n) for Pareto q=1, p=1, L=log (1/log n)",
            json!({"schema": 1, "experiment": {
                "kind": "check-condition", "law": pareto1, "normalizer": log_norm,
                "n_grid": {"pow10": [1, 12]}}}),
        ),
        (
            "dyadic-slack",
            "pathwise dyadic decomposition on 1000 paths of length 4095",
            json!({"schema": 1, "seed": 6, "reps": 1000, "experiment": {
                "kind": "dyadic", "model": {"kind": "iid", "marginal": pareto1},
                "normalizer": log_norm, "scales": 12}}),
        ),
        (
            "lambda-sums",
            "threshold sums against C1(b) eps1 b_{2^n}, defaults and two alternates",
            json!({"schema": 1, "seed": 7, "reps": 100, "experiment": {
                "kind": "dyadic", "model": {"kind": "iid", "marginal": pareto1},
                "normalizer": log_norm, "scales": 4, "alternate_a": [0.6, 0.9]}}),
        ),
        (
            "bound-decay",
            "tail drift, I and J bound sequences up to n=60",
            json!({"schema": 1, "seed": 8, "reps": 100, "experiment": {
                "kind": "dyadic", "model": {"kind": "iid", "marginal": pareto1},
                "normalizer": log_norm, "scales": 6, "bound_n_max": 60}}),
        ),
        (
            "joffe-exactness",
            "exact pairwise independence of the Joffe scheme, q=31",
            json!({"schema": 1, "seed": 9, "reps": 1000, "experiment": {
                "kind": "variance-check",
                "model": {"kind": "joffe", "q": 31, "marginal": {"kind": "uniform", "v": 1.0}},
                "transforms": [{"kind": "identity"}], "ells": [4, 16]}}),
        ),
        (
            "de-bruijn",
            "conjugate identity and fixed-point solver for L=log",
            json!({"schema": 1, "experiment": {"kind": "sv-verify", "L": "log"}}),
        ),
        (
            "variance-ratio",
            "variance ratio of windowed sums, Joffe q=4099, identity and clipping",
            json!({"schema": 1, "seed": 11, "reps": 10000, "experiment": {
                "kind": "variance-check",
                "model": {"kind": "joffe", "q": 4099, "marginal": {"kind": "uniform", "v": 1.0}},
                "transforms": [{"kind": "identity"}, {"kind": "clip", "lo": -0.5, "hi": 0.5}],
                "ells": [4, 16, 64]}}),
        ),
        (
            "reproducibility",
            "small i.i.d. campaign used for byte-identical reruns",
            json!({"schema": 1, "seed": 12, "reps": 500, "experiment": {
                "kind": "simulate",
                "model": {"kind": "iid", "marginal": {"kind": "pareto", "q": 1.5}},
                "normalizer": {"p": 1.2, "L": "1"}, "n_grid": [100, 1000, 4000]}}),
        ),
    ];
    raw.into_iter()
        .map(|(name, about, v)| {
            let cfg: ExperimentConfig = serde_json::from_value(v).expect("preset parses");
            cfg.validate().expect("preset validates");
            (name, about, cfg)
        })
        .collect()
}

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    presets().into_iter().find(|p| p.0 == name).map(|p| p.2)
}

#[derive(Parser, Debug)]
#[command(name = "wlln-lab", version, about = "Weak-law experiments for maximal partial sums")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    CheckCondition(RunArgs),
    Simulate(RunArgs),
    Counterexample(RunArgs),
    Dyadic(RunArgs),
    SvVerify(RunArgs),
    UiCheck(RunArgs),
    VarianceCheck(RunArgs),
    /// List built-in configs, or print one.
    Presets {
        #[arg(long)]
        show: Option<String>,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, env = "WLLN_LAB_OUT")]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<u64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, env = "WLLN_LAB_THREADS")]
    threads: Option<usize>,
}

fn load_config(args: &RunArgs, kind: &str) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<ExperimentConfig>(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        (None, Some(name)) => preset(name).ok_or_else(|| CliError::Config(format!("unknown preset {name:?}")))?,
        (None, None) => return Err(CliError::Config("one of --config or --preset is required".into())),
    };
    if cfg.experiment.kind() != kind {
        return Err(CliError::Config(format!(
            "config describes a {} experiment, not {kind}",
            cfg.experiment.kind()
        )));
    }
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    if args.reps.is_some() {
        cfg.reps = args.reps;
    }
    if args.out.is_some() {
        cfg.output = args.out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(args: &RunArgs, kind: &str) -> Result<String, CliError> {
    let cfg = load_config(args, kind)?;
    let threads = args.threads.unwrap_or(0);
    let exec = if threads == 1 {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let report = with_threads(threads, || run(&cfg, exec))?;
    let dir = cfg.output.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let files = write_report(&report, &dir)?;
    let mut out = String::new();
    for f in files {
        let _ = writeln!(out, "{}", f.display());
    }
    Ok(out)
}

fn list_presets(show: Option<&str>) -> Result<String, CliError> {
    match show {
        Some(name) => preset(name)
            .map(|c| c.to_json() + "\n")
            .ok_or_else(|| CliError::Config(format!("unknown preset {name:?}"))),
        None => {
            let mut out = String::new();
            for (name, about, cfg) in presets() {
                let _ = writeln!(out, "{name:<28} {:<16} {about}", cfg.experiment.kind());
            }
            Ok(out)
        }
    }
}

/// Parses `args` (including the program name), runs, and returns the exit
/// status. Output paths go to stdout, diagnostics to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::CheckCondition(a) => execute(a, "check-condition"),
        Command::Simulate(a) => execute(a, "simulate"),
        Command::Counterexample(a) => execute(a, "counterexample"),
        Command::Dyadic(a) => execute(a, "dyadic"),
        Command::SvVerify(a) => execute(a, "sv-verify"),
        Command::UiCheck(a) => execute(a, "ui-check"),
        Command::VarianceCheck(a) => execute(a, "variance-check"),
        Command::Presets { show } => list_presets(show.as_deref()),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("wlln-lab: {e}");
            e.exit_code()
        }
    }
}
