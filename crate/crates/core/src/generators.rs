//! Sample paths under declared dependence structures.
//!
//! Randomness comes from [`RngStream`], a ChaCha8 keystream addressed by a
//! master seed and a 64-bit stream index. Replication `r` at grid point `g`
//! uses stream [`stream_id`]`(g, r)`, so paths never depend on scheduling.

use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distributions::{TailDistribution, VaryingFamily};
use crate::error::{Error, Result};
use crate::exec::Execution;

/// Largest `q` accepted by the enumeration checks.
pub const ENUMERATION_MAX_Q: u64 = 101;

/// Stream index for grid point `grid` and replication `rep`.
pub fn stream_id(grid: u64, rep: u64) -> u64 {
    (grid << 32) | (rep & 0xffff_ffff)
}

/// Counter-based random stream keyed by `(seed, stream)`.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Position in the keystream, in 32-bit words.
    pub fn counter(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn set_counter(&mut self, words: u128) {
        self.rng.set_word_pos(words);
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

pub fn is_prime(q: u64) -> bool {
    if q < 2 {
        return false;
    }
    if q.is_multiple_of(2) {
        return q == 2;
    }
    let mut d = 3;
    while d * d <= q {
        if q.is_multiple_of(d) {
            return false;
        }
        d += 2;
    }
    true
}

/// Joffe's scheme `W_i = U + i V mod q` mapped through the marginal quantile
/// on the midpoint grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "JoffeSpec", into = "JoffeSpec")]
pub struct Joffe {
    q: u64,
    marginal: TailDistribution,
    blocks: bool,
    lattice: Arc<[f64]>,
}

impl PartialEq for Joffe {
    fn eq(&self, other: &Self) -> bool {
        self.q == other.q && self.marginal == other.marginal && self.blocks == other.blocks
    }
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JoffeSpec {
    q: u64,
    marginal: TailDistribution,
    #[serde(default)]
    blocks: bool,
}

impl TryFrom<JoffeSpec> for Joffe {
    type Error = Error;
    fn try_from(s: JoffeSpec) -> Result<Self> {
        Joffe::new(s.q, s.marginal, s.blocks)
    }
}

impl From<Joffe> for JoffeSpec {
    fn from(j: Joffe) -> Self {
        JoffeSpec {
            q: j.q,
            marginal: j.marginal,
            blocks: j.blocks,
        }
    }
}

impl Joffe {
    pub fn new(q: u64, marginal: TailDistribution, blocks: bool) -> Result<Self> {
        if !is_prime(q) {
            return Err(Error::NotPrime(q));
        }
        if q > u32::MAX as u64 {
            return Err(Error::InvalidParameter(format!(
                "q too large for a cached lattice: {q}"
            )));
        }
        marginal.validate()?;
        let lattice = marginal.lattice(q as usize).into();
        Ok(Self {
            q,
            marginal,
            blocks,
            lattice,
        })
    }

    pub fn q(&self) -> u64 {
        self.q
    }

    pub fn lattice(&self) -> &[f64] {
        &self.lattice
    }

    /// Grid index `W_i` for seeds `(u, v)`.
    pub fn index(&self, u: u64, v: u64, i: u64) -> u64 {
        ((u as u128 + i as u128 * v as u128) % self.q as u128) as u64
    }

    /// Exact law of every coordinate: uniform on the lattice.
    pub fn exact_marginal(&self) -> TailDistribution {
        TailDistribution::discrete_uniform(&self.lattice)
    }
}

/// Stationary finite Markov chain on real-valued states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MarkovSpec", into = "MarkovSpec")]
pub struct MarkovChain {
    transition: Vec<Vec<f64>>,
    values: Vec<f64>,
    stationary: Vec<f64>,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MarkovSpec {
    transition: Vec<Vec<f64>>,
    values: Vec<f64>,
}

impl TryFrom<MarkovSpec> for MarkovChain {
    type Error = Error;
    fn try_from(s: MarkovSpec) -> Result<Self> {
        MarkovChain::new(s.transition, s.values)
    }
}

impl From<MarkovChain> for MarkovSpec {
    fn from(m: MarkovChain) -> Self {
        MarkovSpec {
            transition: m.transition,
            values: m.values,
        }
    }
}

impl MarkovChain {
    pub fn new(transition: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self> {
        let k = values.len();
        let bad = |msg: &str| Err(Error::InvalidParameter(format!("markov chain: {msg}")));
        if k == 0 || transition.len() != k || transition.iter().any(|row| row.len() != k) {
            return bad("transition must be a square matrix matching the state values");
        }
        for row in &transition {
            if row.iter().any(|&x| !(x >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return bad("rows must be probability vectors");
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return bad("state values must be finite");
        }
        // Power iteration on a lazy chain, which converges for any irreducible chain.
        let mut pi = vec![1.0 / k as f64; k];
        let mut converged = false;
        for _ in 0..1_000_000 {
            let mut next = vec![0.0; k];
            for (i, &w) in pi.iter().enumerate() {
                for (j, &t) in transition[i].iter().enumerate() {
                    next[j] += 0.5 * w * t;
                }
                next[i] += 0.5 * w;
            }
            let diff: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
            pi = next;
            if diff < 1e-15 {
                converged = true;
                break;
            }
        }
        if !converged {
            return bad("stationary law did not converge");
        }
        Ok(Self {
            transition,
            values,
            stationary: pi,
        })
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    fn draw(weights: &[f64], u: f64) -> usize {
        let mut cum = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            cum += w;
            if u < cum {
                return i;
            }
        }
        weights.len() - 1
    }

    /// Stationary marginal law.
    pub fn marginal(&self) -> TailDistribution {
        TailDistribution::Discrete {
            atoms: self
                .values
                .iter()
                .copied()
                .zip(self.stationary.iter().copied())
                .collect(),
        }
    }
}

/// Recipe for a finite path `X_1, …, X_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SequenceModel {
    Iid {
        marginal: TailDistribution,
    },
    Joffe(Joffe),
    Counterexample {
        p: f64,
    },
    MarkovPhiMixing(MarkovChain),
    /// `X_{2k} = −X_{2k−1}` with `X_1, X_3, …` i.i.d.
    AntitheticPairs {
        marginal: TailDistribution,
    },
}

impl SequenceModel {
    pub fn iid(marginal: TailDistribution) -> Self {
        Self::Iid { marginal }
    }

    pub fn joffe(q: u64, marginal: TailDistribution, blocks: bool) -> Result<Self> {
        Ok(Self::Joffe(Joffe::new(q, marginal, blocks)?))
    }

    pub fn counterexample(p: f64) -> Result<Self> {
        VaryingFamily::counterexample(p)?;
        Ok(Self::Counterexample { p })
    }

    pub fn markov(transition: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self> {
        Ok(Self::MarkovPhiMixing(MarkovChain::new(transition, values)?))
    }

    /// Parameter checks that serde cannot express.
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Iid { marginal } => marginal.validate(),
            Self::AntitheticPairs { marginal } => {
                marginal.validate()?;
                if marginal.is_symmetric() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(
                        "antithetic pairs need a symmetric marginal".into(),
                    ))
                }
            }
            Self::Counterexample { p } => VaryingFamily::counterexample(*p).map(|_| ()),
            Self::Joffe(_) | Self::MarkovPhiMixing(_) => Ok(()),
        }
    }

    /// Exact laws of the coordinates, used for analytic centering.
    pub fn family(&self) -> VaryingFamily {
        match self {
            Self::Iid { marginal } | Self::AntitheticPairs { marginal } => {
                VaryingFamily::Identical { law: marginal.clone() }
            }
            Self::Joffe(j) => VaryingFamily::Identical {
                law: j.exact_marginal(),
            },
            Self::Counterexample { p } => VaryingFamily::Counterexample { p: *p },
            Self::MarkovPhiMixing(m) => VaryingFamily::Identical { law: m.marginal() },
        }
    }

    /// Short hash of the canonical JSON descriptor.
    pub fn model_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("models serialize");
        hash_hex(json.as_bytes())
    }

    /// Generates `X_1..X_n`.
    pub fn generate(&self, n: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        self.generate_into(n, rng, &mut out)?;
        Ok(out)
    }

    /// Like [`SequenceModel::generate`] but reuses `out`.
    pub fn generate_into(&self, n: usize, rng: &mut RngStream, out: &mut Vec<f64>) -> Result<()> {
        if n == 0 {
            return Err(Error::PathLength(0));
        }
        out.clear();
        match self {
            Self::Iid { marginal } => out.extend((0..n).map(|_| marginal.sample(rng))),
            Self::AntitheticPairs { marginal } => {
                while out.len() < n {
                    let x = marginal.sample(rng);
                    out.push(x);
                    if out.len() < n {
                        out.push(-x);
                    }
                }
            }
            Self::Joffe(j) => {
                if n as u64 > j.q && !j.blocks {
                    return Err(Error::JoffeBlockMode { n, q: j.q });
                }
                while out.len() < n {
                    let u = rng.random_range(0..j.q);
                    let v = rng.random_range(0..j.q);
                    let len = (n - out.len()).min(j.q as usize);
                    let mut w = u;
                    for _ in 0..len {
                        out.push(j.lattice[w as usize]);
                        w += v;
                        if w >= j.q {
                            w -= j.q;
                        }
                    }
                }
            }
            Self::Counterexample { p } => counterexample_path(*p, n, rng, out),
            Self::MarkovPhiMixing(m) => {
                let mut s = MarkovChain::draw(&m.stationary, rng.random());
                out.push(m.values[s]);
                for _ in 1..n {
                    s = MarkovChain::draw(&m.transition[s], rng.random());
                    out.push(m.values[s]);
                }
            }
        }
        Ok(())
    }
}

/// Counterexample path with exact skipping: after a nonzero at index `j`,
/// the next nonzero index `K` satisfies `P(K > k) = j / k`.
fn counterexample_path(p: f64, n: usize, rng: &mut RngStream, out: &mut Vec<f64>) {
    out.resize(n, 0.0);
    let mut j = 1u64;
    loop {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        out[(j - 1) as usize] = sign * crate::distributions::counterexample_value(j, p);
        let u = 1.0 - rng.random::<f64>();
        let next = (j as f64 / u).floor() + 1.0;
        if next > n as f64 {
            break;
        }
        j = next as u64;
    }
}

/// First 8 bytes of SHA-256 as lowercase hex.
pub fn hash_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Result of [`verify_pairwise_independence`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PairwiseReport {
    pub pass: bool,
    /// `max |P(W_i = a, W_j = b) − 1/q²|` over pairs and values.
    pub max_deviation: f64,
}

fn joffe_for_enumeration(model: &SequenceModel) -> Result<&Joffe> {
    match model {
        SequenceModel::Joffe(j) if j.q <= ENUMERATION_MAX_Q => Ok(j),
        SequenceModel::Joffe(j) => Err(Error::Unsupported(format!(
            "enumeration needs q <= {ENUMERATION_MAX_Q}, got {}",
            j.q
        ))),
        _ => Err(Error::KindMismatch("enumeration checks need a joffe model".into())),
    }
}

/// Enumerates all `q²` seeds and compares every pair's joint law with `1/q²`.
pub fn verify_pairwise_independence(model: &SequenceModel) -> Result<PairwiseReport> {
    let j = joffe_for_enumeration(model)?;
    let q = j.q;
    let mut worst = 0u64;
    let mut counts = vec![0u64; (q * q) as usize];
    for a in 0..q {
        for b in (a + 1)..q {
            counts.iter_mut().for_each(|c| *c = 0);
            for u in 0..q {
                for v in 0..q {
                    counts[(j.index(u, v, a) * q + j.index(u, v, b)) as usize] += 1;
                }
            }
            worst = worst.max(counts.iter().map(|&c| c.abs_diff(1)).max().unwrap_or(0));
        }
    }
    Ok(PairwiseReport {
        pass: worst == 0,
        max_deviation: worst as f64 / (q * q) as f64,
    })
}

/// Looks for a triple whose joint law differs from `1/q³` somewhere.
pub fn verify_not_mutually_independent(model: &SequenceModel) -> Result<bool> {
    let j = joffe_for_enumeration(model)?;
    let q = j.q;
    if q < 3 {
        return Ok(false);
    }
    let mut counts = vec![0u64; (q * q * q) as usize];
    for (a, b, c) in [(0, 1, 2)]
        .into_iter()
        .chain((0..q).flat_map(|a| ((a + 1)..q).flat_map(move |b| ((b + 1)..q).map(move |c| (a, b, c)))))
    {
        counts.iter_mut().for_each(|x| *x = 0);
        for u in 0..q {
            for v in 0..q {
                let key = (j.index(u, v, a) * q + j.index(u, v, b)) * q + j.index(u, v, c);
                counts[key as usize] += 1;
            }
        }
        // Independence would need count · q = 1 for every cell.
        if counts.iter().any(|&n| n * q != 1) {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Nondecreasing transforms for [`variance_inequality_check`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Transform {
    Identity,
    Clip {
        lo: f64,
        hi: f64,
    },
    /// `s · ln(1 + e^{x/s})`.
    Softplus {
        scale: f64,
    },
}

impl Transform {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Transform::Identity => x,
            Transform::Clip { lo, hi } => x.clamp(lo, hi),
            Transform::Softplus { scale } => {
                let z = x / scale;
                scale
                    * if z > 30.0 {
                        z + (-z).exp().ln_1p()
                    } else {
                        z.exp().ln_1p()
                    }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Transform::Clip { lo, hi } if !(lo <= hi) => Err(Error::InvalidParameter(format!(
                "clip needs lo <= hi, got [{lo}, {hi}]"
            ))),
            Transform::Softplus { scale } if !(scale > 0.0) => Err(Error::InvalidParameter(format!(
                "softplus scale must be positive, got {scale}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Estimate of `var(Σ f(X_i)) / Σ var(f(X_i))` over a window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VarianceRatio {
    pub ratio: f64,
    /// Jackknife standard error.
    pub std_error: f64,
    pub numerator: f64,
    pub denominator: f64,
    pub reps: u64,
}

/// Monte Carlo ratio over the window `i = k+1..k+ℓ`, one path per replication
/// on stream `stream_id(grid, r)`.
#[allow(clippy::too_many_arguments)]
pub fn variance_inequality_check(
    model: &SequenceModel,
    transform: &Transform,
    k: usize,
    ell: usize,
    reps: u64,
    seed: u64,
    grid: u64,
    exec: Execution,
) -> Result<VarianceRatio> {
    if ell == 0 || reps < 3 {
        return Err(Error::InvalidParameter(format!(
            "need ell >= 1 and reps >= 3 (got {ell}, {reps})"
        )));
    }
    transform.validate()?;
    let rows = exec.map_init(reps, Vec::new, |buf, r| -> Result<Vec<f64>> {
        let mut rng = RngStream::new(seed, stream_id(grid, r));
        model.generate_into(k + ell, &mut rng, buf)?;
        Ok(buf[k..].iter().map(|&x| transform.apply(x)).collect())
    });
    let rows: Vec<Vec<f64>> = rows.into_iter().collect::<Result<_>>()?;
    let n = reps as f64;
    // Column and window-sum moments, accumulated in replication order.
    let mut s1 = vec![0.0; ell];
    let mut s2 = vec![0.0; ell];
    let (mut t1, mut t2) = (0.0, 0.0);
    for row in &rows {
        let mut t = 0.0;
        for (i, &y) in row.iter().enumerate() {
            s1[i] += y;
            s2[i] += y * y;
            t += y;
        }
        t1 += t;
        t2 += t * t;
    }
    let var = |a: f64, b: f64, m: f64| (b - a * a / m) / (m - 1.0);
    let den: f64 = (0..ell).map(|i| var(s1[i], s2[i], n)).sum();
    if !(den > 0.0) {
        return Err(Error::Degenerate);
    }
    let num = var(t1, t2, n);
    let ratio = num / den;
    let mut loo = Vec::with_capacity(rows.len());
    for row in &rows {
        let t: f64 = row.iter().sum();
        let num_i = var(t1 - t, t2 - t * t, n - 1.0);
        let den_i: f64 = row
            .iter()
            .enumerate()
            .map(|(i, &y)| var(s1[i] - y, s2[i] - y * y, n - 1.0))
            .sum();
        loo.push(num_i / den_i);
    }
    let mean_loo = loo.iter().sum::<f64>() / n;
    let jk = loo.iter().map(|x| (x - mean_loo).powi(2)).sum::<f64>() * (n - 1.0) / n;
    Ok(VarianceRatio {
        ratio,
        std_error: jk.sqrt(),
        numerator: num,
        denominator: den,
        reps,
    })
}

/// `var(Σ_{i≤ℓ} X_i) / (ℓ var X_1)` for a stationary chain, from its
/// autocovariances.
pub fn markov_variance_ratio(chain: &MarkovChain, ell: usize) -> f64 {
    let k = chain.values.len();
    let pi = &chain.stationary;
    let mean: f64 = pi.iter().zip(&chain.values).map(|(p, v)| p * v).sum();
    let centered: Vec<f64> = chain.values.iter().map(|v| v - mean).collect();
    let var: f64 = pi.iter().zip(&centered).map(|(p, c)| p * c * c).sum();
    // dist_h = row law after h steps started from π-weighted centered values.
    let mut weighted: Vec<f64> = (0..k).map(|i| pi[i] * centered[i]).collect();
    let mut total = ell as f64 * var;
    for h in 1..ell {
        let mut next = vec![0.0; k];
        for (w, row) in weighted.iter().zip(&chain.transition) {
            for (nj, t) in next.iter_mut().zip(row) {
                *nj += w * t;
            }
        }
        weighted = next;
        let cov: f64 = weighted.iter().zip(&centered).map(|(w, c)| w * c).sum();
        total += 2.0 * (ell - h) as f64 * cov;
    }
    total / (ell as f64 * var)
}
