//! Runs every acceptance criterion at its stated tolerance and prints one
//! PASS/FAIL line per criterion. Exits non-zero if any criterion fails.

use std::path::Path;
use std::time::{Duration, Instant};

use wlln_lab::cli::main_with_args;
use wlln_lab::distributions::{gut_condition, uniform_integrability_gap, TailDistribution, VaryingFamily};
use wlln_lab::dyadic::{bound_sequences, lambda_sum, DyadicParams, DyadicPlan};
use wlln_lab::exec::Execution;
use wlln_lab::generators::{
    stream_id, variance_inequality_check, verify_not_mutually_independent, verify_pairwise_independence, RngStream,
    SequenceModel, Transform,
};
use wlln_lab::maxsum_stats::{
    counterexample_max_prob, estimate_convergence, restricted_tail_sum, Campaign, StatisticKind, Verdict,
    VerdictThresholds,
};
use wlln_lab::slowly_varying::{Normalizer, SlowlyVaryingFn};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(limit: Duration, elapsed: Duration) -> bool {
    elapsed <= limit
}

fn log() -> SlowlyVaryingFn {
    SlowlyVaryingFn::log_power(1.0)
}

fn counterexample_non_convergence() -> Outcome {
    let start = Instant::now();
    let grid = [1_000u64, 10_000, 100_000];
    let reps = 10_000;
    let model = SequenceModel::counterexample(1.0).unwrap();
    let norm = Normalizer::new(1.0, SlowlyVaryingFn::one()).unwrap();
    let report = estimate_convergence(
        &Campaign {
            model: &model,
            kind: StatisticKind::MaxAbs,
            norm: &norm,
            n_grid: &grid,
            eps: 0.2,
            reps,
            seed: 1,
            thresholds: VerdictThresholds::default(),
        },
        Execution::default(),
    )
    .unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for e in &report.estimates {
        let exact = counterexample_max_prob(1.0, e.n, 0.2).unwrap();
        let se = (exact * (1.0 - exact) / reps as f64).sqrt();
        let z = (e.p_hat - exact) / se;
        pass &= (0.78..=0.82).contains(&exact) && z.abs() <= 4.0;
        parts.push(format!("n={} exact={exact:.4} p_hat={:.4} z={z:+.2}", e.n, e.p_hat));
    }
    let t = start.elapsed();
    pass &= within(Duration::from_secs(30), t);
    outcome(pass, format!("{} ({:.1}s)", parts.join("; "), t.as_secs_f64()))
}

fn counterexample_lower_bound() -> Outcome {
    let start = Instant::now();
    let mut worst = f64::INFINITY;
    let mut at = (0.0, 0);
    for p in [1.0, 1.5, 1.9] {
        let fam = VaryingFamily::counterexample(p).unwrap();
        let norm = Normalizer::new(p, SlowlyVaryingFn::one()).unwrap();
        for n in 2..=1_000_000u64 {
            let s = restricted_tail_sum(&fam, &norm, n, 0.2);
            if s < worst {
                worst = s;
                at = (p, n);
            }
        }
    }
    let t = start.elapsed();
    outcome(
        worst >= 0.5 && within(Duration::from_secs(10), t),
        format!(
            "min restricted tail sum {worst:.6} at p={}, n={} ({:.1}s)",
            at.0,
            at.1,
            t.as_secs_f64()
        ),
    )
}

fn ui_failure() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for p in [1.0, 1.5, 1.9] {
        let fam = VaryingFamily::counterexample(p).unwrap();
        for a in [1.0, 10.0, 1e3] {
            let g = uniform_integrability_gap(&fam, p, &SlowlyVaryingFn::one(), a).unwrap();
            pass &= g == 1.0;
            parts.push(format!("{g}"));
        }
    }
    outcome(
        pass,
        format!(
            "gaps for p in {{1, 1.5, 1.9}} x a in {{1, 10, 1e3}}: {}",
            parts.join(", ")
        ),
    )
}

fn joffe_positive_case() -> Outcome {
    let start = Instant::now();
    let model = SequenceModel::joffe(4099, TailDistribution::pareto(1.0, 1.0).unwrap(), true).unwrap();
    let norm = Normalizer::new(1.0, log()).unwrap();
    let grid: Vec<u64> = (10..=16).map(|k| 1u64 << k).collect();
    let report = estimate_convergence(
        &Campaign {
            model: &model,
            kind: StatisticKind::MaxCenteredTruncmean,
            norm: &norm,
            n_grid: &grid,
            eps: 0.1,
            reps: 2000,
            seed: 4,
            thresholds: VerdictThresholds::default(),
        },
        Execution::default(),
    )
    .unwrap();
    let last = report.estimates.last().unwrap();
    let p_hats: Vec<String> = report.estimates.iter().map(|e| format!("{:.4}", e.p_hat)).collect();
    outcome(
        report.verdict == Verdict::Converges && last.ci_high < 0.05,
        format!(
            "verdict {} p_hat [{}] last ci_high {:.4} ({:.1}s)",
            report.verdict,
            p_hats.join(", "),
            last.ci_high,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn gut_boundary() -> Outcome {
    let d = TailDistribution::pareto(1.0, 1.0).unwrap();
    let flat = Normalizer::new(1.0, SlowlyVaryingFn::one()).unwrap();
    let logn = Normalizer::new(1.0, log()).unwrap();
    let mut ns: Vec<u64> = (0..=40).map(|k| 1u64 << k).collect();
    ns.extend((1..=12).map(|k| 10u64.pow(k)));
    ns.extend([3, 7, 49, 12_345, 999_999_937, 123_456_789_012]);
    let flat_exact = ns.iter().all(|&n| gut_condition(&d, &flat, n) == 1.0);
    let log_err = ns
        .iter()
        .filter(|&&n| n >= 3)
        .map(|&n| (gut_condition(&d, &logn, n) * (n as f64).ln() - 1.0).abs())
        .fold(0.0, f64::max);
    outcome(
        flat_exact && log_err < 1e-12,
        format!(
            "L=1: n P(|X|>b_n) == 1 on {} grid points: {flat_exact}; L=log: max |n P log n - 1| = {log_err:.1e}",
            ns.len()
        ),
    )
}

fn dyadic_slack() -> Outcome {
    let start = Instant::now();
    let pareto1 = TailDistribution::pareto(1.0, 1.0).unwrap();
    let suite: Vec<(&str, SequenceModel, Normalizer)> = vec![
        (
            "pareto(1) L=log",
            SequenceModel::iid(pareto1.clone()),
            Normalizer::new(1.0, log()).unwrap(),
        ),
        (
            "one-sided pareto(1.5) p=1.2",
            SequenceModel::iid(TailDistribution::pareto_with(1.5, 1.0, SlowlyVaryingFn::one(), true).unwrap()),
            Normalizer::new(1.2, SlowlyVaryingFn::one()).unwrap(),
        ),
        (
            "pareto(1.2, L0=log) p=1.1",
            SequenceModel::iid(TailDistribution::pareto_with(1.2, 1.0, log(), false).unwrap()),
            Normalizer::new(1.1, log()).unwrap(),
        ),
        (
            "rademacher p=1.5",
            SequenceModel::iid(TailDistribution::Rademacher),
            Normalizer::new(1.5, SlowlyVaryingFn::one()).unwrap(),
        ),
        (
            "uniform(3) p=1",
            SequenceModel::iid(TailDistribution::Uniform { v: 3.0 }),
            Normalizer::new(1.0, SlowlyVaryingFn::one()).unwrap(),
        ),
        (
            "discrete asymmetric p=1",
            SequenceModel::iid(TailDistribution::Discrete {
                atoms: vec![(-40.0, 0.05), (-1.0, 0.45), (2.0, 0.4), (300.0, 0.1)],
            }),
            Normalizer::new(1.0, SlowlyVaryingFn::one()).unwrap(),
        ),
        (
            "joffe(4099) pareto(1) L=log",
            SequenceModel::joffe(4099, pareto1, false).unwrap(),
            Normalizer::new(1.0, log()).unwrap(),
        ),
    ];
    let mut violations = 0u64;
    let mut parts = Vec::new();
    for (name, model, norm) in &suite {
        let VaryingFamily::Identical { law } = model.family() else {
            unreachable!()
        };
        let plan = DyadicPlan::new(&law, norm, 12).unwrap();
        let decs = Execution::default().map_init(1000, Vec::new, |buf, r| {
            model
                .generate_into(plan.path_len(), &mut RngStream::new(6, stream_id(0, r)), buf)
                .unwrap();
            plan.decompose(buf).unwrap()
        });
        let v = decs.iter().filter(|d| d.violated()).count() as u64;
        let min_slack = decs.iter().map(|d| d.slack()).fold(f64::INFINITY, f64::min);
        violations += v;
        parts.push(format!("{name}: {v} violations, min slack {min_slack:.3e}"));
    }
    let t = start.elapsed();
    outcome(
        violations == 0 && within(Duration::from_secs(120), t),
        format!("{} ({:.1}s)", parts.join("; "), t.as_secs_f64()),
    )
}

fn threshold_bound() -> Outcome {
    let mut pass = true;
    let mut worst = [0.0f64; 2];
    for (i, l) in [SlowlyVaryingFn::one(), log()].into_iter().enumerate() {
        for p in [1.0, 1.5] {
            let norm = Normalizer::new(p, l.clone()).unwrap();
            let d = DyadicParams::defaults(p);
            let span = 1.0 / p - 0.5;
            let alternates = [
                DyadicParams::with_a(p, 0.5 + 0.2 * span, 1.0),
                DyadicParams::with_a(p, 0.5 + 0.9 * span, 0.5),
            ];
            for params in std::iter::once(d).chain(alternates) {
                for n in 1..=60 {
                    let s = lambda_sum(n, &params, &norm).unwrap();
                    let excess = s.sum / s.bound - 1.0;
                    worst[i] = worst[i].max(excess);
                    pass &= if i == 0 { s.sum <= s.bound } else { excess <= 1e-12 };
                }
            }
        }
    }
    outcome(
        pass,
        format!("max sum/bound - 1: L=1 {:.3e}, L=log {:.3e}", worst[0], worst[1]),
    )
}

fn bound_decay() -> Outcome {
    let d = TailDistribution::pareto(1.0, 1.0).unwrap();
    let norm = Normalizer::new(1.0, log()).unwrap();
    let rows = bound_sequences(&d, &norm, &DyadicParams::defaults(1.0), 60).unwrap();
    let series: [(&str, Vec<f64>); 3] = [
        ("tail_drift", rows.iter().map(|r| r.tail_drift).collect()),
        ("I_bound", rows.iter().map(|r| r.i_bound).collect()),
        ("J_bound", rows.iter().map(|r| r.j_bound).collect()),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, s) in &series {
        let peak = s
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > s[best] { i } else { best });
        let monotone = s[peak..].windows(2).all(|w| w[1] <= w[0]);
        let last = *s.last().unwrap();
        pass &= monotone && last < 1e-2;
        parts.push(format!(
            "{name}(60)={last:.4} peak n={} non-increasing after peak: {monotone}",
            peak + 1
        ));
    }
    outcome(pass, parts.join("; "))
}

fn joffe_exactness() -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for q in [5u64, 7, 11, 31] {
        let model = SequenceModel::joffe(q, TailDistribution::Uniform { v: 1.0 }, false).unwrap();
        let pw = verify_pairwise_independence(&model).unwrap();
        let nm = verify_not_mutually_independent(&model).unwrap();
        pass &= pw.pass && pw.max_deviation == 0.0 && nm;
        parts.push(format!("q={q}: dev {} not mutual {nm}", pw.max_deviation));
    }
    let t = start.elapsed();
    pass &= within(Duration::from_secs(1), t);
    outcome(pass, format!("{} ({:.3}s)", parts.join("; "), t.as_secs_f64()))
}

fn de_bruijn() -> Outcome {
    let u = 200.0;
    let l = log();
    let conj = l.de_bruijn_conjugate().unwrap();
    let identity_gap = (l.conjugate_identity_ln(&conj, u) - 1.0).abs();
    let mut pass = identity_gap < 0.06;
    let mut parts = vec![format!("identity gap {identity_gap:.4}")];
    for g in [-1.0, 1.0, 2.0] {
        let lg = SlowlyVaryingFn::log_power(g);
        let y = lg.de_bruijn_numeric_ln(u, 1e-12).unwrap();
        let analytic = lg.de_bruijn_conjugate().unwrap().eval_ln(u);
        let rel = (y / analytic - 1.0).abs();
        pass &= rel < 0.05;
        parts.push(format!("gamma={g}: numeric vs analytic {rel:.4}"));
    }
    outcome(pass, parts.join("; "))
}

fn variance_sanity() -> Outcome {
    let marginal = TailDistribution::Uniform { v: 1.0 };
    let models = [
        ("iid", SequenceModel::iid(marginal.clone())),
        ("joffe", SequenceModel::joffe(4099, marginal, false).unwrap()),
    ];
    let transforms = [Transform::Identity, Transform::Clip { lo: -0.5, hi: 0.5 }];
    let mut pass = true;
    let mut worst = 0.0f64;
    let mut grid = 0;
    for (_, model) in &models {
        for t in &transforms {
            for ell in [4, 16, 64] {
                let v = variance_inequality_check(model, t, 0, ell, 10_000, 11, grid, Execution::default()).unwrap();
                grid += 1;
                let z = (v.ratio - 1.0) / v.std_error;
                worst = worst.max(z.abs());
                pass &= z.abs() <= 3.0;
            }
        }
    }
    outcome(pass, format!("12 cases, max |ratio - 1| / se = {worst:.2}"))
}

fn read_csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

fn reproducibility() -> Outcome {
    let runs: [(&str, &str, &[&str]); 4] = [
        ("simulate", "reproducibility", &[]),
        ("counterexample", "counterexample", &["--reps", "2000"]),
        ("dyadic", "dyadic-slack", &["--reps", "100"]),
        ("variance-check", "variance-ratio", &["--reps", "1000"]),
    ];
    let tmp = tempfile::tempdir().unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (sub, preset, extra) in runs {
        let mut outputs = Vec::new();
        for (tag, threads) in [("a", "1"), ("b", "1"), ("c", "8")] {
            let dir = tmp.path().join(format!("{preset}-{tag}"));
            let mut args = vec![
                "wlln-lab",
                sub,
                "--preset",
                preset,
                "--threads",
                threads,
                "--out",
                dir.to_str().unwrap(),
            ];
            args.extend_from_slice(extra);
            let code = main_with_args(args);
            pass &= code == 0;
            outputs.push(read_csvs(&dir));
        }
        let same = !outputs[0].is_empty() && outputs[0] == outputs[1] && outputs[1] == outputs[2];
        pass &= same;
        parts.push(format!("{preset}: {} csv files identical: {same}", outputs[0].len()));
    }
    outcome(pass, parts.join("; "))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 12] = [
        ("counterexample non-convergence", counterexample_non_convergence),
        ("counterexample lower bound", counterexample_lower_bound),
        ("uniform integrability failure", ui_failure),
        ("pairwise-independent positive case", joffe_positive_case),
        ("tail condition boundary", gut_boundary),
        ("pathwise dyadic slack", dyadic_slack),
        ("threshold sum bound", threshold_bound),
        ("bound-sequence decay", bound_decay),
        ("joffe exactness", joffe_exactness),
        ("de bruijn identities", de_bruijn),
        ("variance inequality sanity", variance_sanity),
        ("reproducibility", reproducibility),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        println!(
            "[{}] {:>2} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail
        );
        if !o.pass {
            failed.push(i + 1);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 12 criteria pass");
    } else {
        println!("acceptance: {} of 12 criteria fail: {failed:?}", failed.len());
        std::process::exit(1);
    }
}
