//! Critical values for the changepoint scan.
//!
//! Two sources are provided, matching the two limit regimes of the sup
//! statistic:
//!
//! * **Window scans** (sup over s in [s1, s2] strictly inside (0,1)) converge
//!   to `sup ||W(s) - s W(1)||^2 / (s (1-s))` for a (p+1)-dimensional
//!   standard Brownian motion W. No closed form is known; quantiles are
//!   estimated by Monte Carlo on a uniform grid ([`simulate_bridge_sup`]).
//!   The grid sup underestimates the continuum sup, so refining the grid can
//!   only raise the tabulated values.
//! * **Full-range scans** admit an extreme-value approximation: with
//!   `ell = ln ln (T/nu)`,
//!
//!   ```text
//!   b_T = (2 ell + (p+1)/2 ln ell - ln Gamma((p+1)/2))^2 / (2 ell),
//!   a_T = sqrt(b_T / (2 ell)),
//!   ```
//!
//!   the normalized sup converges to the law `F(x) = exp(-2 e^{-x/2})`
//!   ([`gumbel_norming`], [`critical_value_full`]). The iterated-logarithm
//!   rate is extremely slow; the closed form is exposed as stated, without
//!   any finite-sample accuracy claim.
//!
//! Bridge replicates draw each Brownian coordinate from its own substream,
//! so for a fixed seed the per-replicate sup is pathwise nondecreasing in
//! the dimension and in the window — the tabulated quantiles inherit both
//! monotonicities exactly.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::rng::{substream_rng, substream_seed, DOMAIN_BRIDGE};

/// Default quantile levels tabulated when none are requested.
pub const DEFAULT_LEVELS: &[f64] = &[0.90, 0.95, 0.99];

/// Desk-scale Monte Carlo defaults (grid size, replicates). Production tables
/// should use m = 10^4, reps = 10^5.
pub const DESK_GRID: usize = 1000;
pub const DESK_REPS: usize = 10_000;

/// Extreme-value norming constants for the full-range sup.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GumbelNorm {
    pub a_t: f64,
    pub b_t: f64,
    pub horizon: f64,
    pub period: f64,
    pub p: usize,
}

/// Norming constants; defined only for T/nu > e^e (so ln ln ln is positive).
pub fn gumbel_norming(horizon: f64, period: f64, p: usize) -> Result<GumbelNorm> {
    if !(period > 0.0 && horizon > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "horizon and period must be positive, got T={horizon}, nu={period}"
        )));
    }
    let ratio = horizon / period;
    let e_to_e = std::f64::consts::E.exp();
    if ratio <= e_to_e {
        return Err(Error::HorizonTooShort { ratio });
    }
    let ell = ratio.ln().ln();
    let lll = ell.ln();
    let dim_half = (p as f64 + 1.0) / 2.0;
    let num = 2.0 * ell + dim_half * lll - ln_gamma(dim_half);
    let b_t = num * num / (2.0 * ell);
    let a_t = (b_t / (2.0 * ell)).sqrt();
    Ok(GumbelNorm {
        a_t,
        b_t,
        horizon,
        period,
        p,
    })
}

/// F(x) = exp(-2 e^{-x/2}).
pub fn gumbel_cdf(x: f64) -> f64 {
    (-2.0 * (-x / 2.0).exp()).exp()
}

/// Inverse of [`gumbel_cdf`]: -2 ln(-ln(q)/2).
pub fn gumbel_quantile(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidProbability { q });
    }
    Ok(-2.0 * (-q.ln() / 2.0).ln())
}

/// Closed-form critical value for the full-range scan at the given level:
/// a_T * quantile(1 - level) + b_T.
pub fn critical_value_full(horizon: f64, period: f64, p: usize, level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidLevel { level });
    }
    let norm = gumbel_norming(horizon, period, p)?;
    Ok(norm.a_t * gumbel_quantile(1.0 - level)? + norm.b_t)
}

/// One tabulated quantile with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct QuantileEstimate {
    pub level: f64,
    pub value: f64,
    pub se: f64,
}

/// Monte Carlo quantile table of the windowed bridge-sup limit.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BridgeQuantileTable {
    pub p: usize,
    pub s1: f64,
    pub s2: f64,
    pub m: usize,
    pub reps: usize,
    pub seed: u64,
    pub quantiles: Vec<QuantileEstimate>,
}

impl BridgeQuantileTable {
    /// Quantile at the given probability, interpolating linearly between
    /// tabulated levels when necessary.
    pub fn quantile_at(&self, prob: f64) -> Result<f64> {
        const MATCH_TOL: f64 = 1e-9;
        if let Some(q) = self
            .quantiles
            .iter()
            .find(|q| (q.level - prob).abs() <= MATCH_TOL)
        {
            return Ok(q.value);
        }
        let mut sorted: Vec<&QuantileEstimate> = self.quantiles.iter().collect();
        sorted.sort_by(|a, b| a.level.partial_cmp(&b.level).expect("finite levels"));
        for w in sorted.windows(2) {
            if w[0].level < prob && prob < w[1].level {
                let t = (prob - w[0].level) / (w[1].level - w[0].level);
                return Ok(w[0].value + t * (w[1].value - w[0].value));
            }
        }
        Err(Error::InvalidConfig(format!(
            "table does not cover quantile level {prob}"
        )))
    }
}

fn validate_window(window: (f64, f64)) -> Result<()> {
    let (s1, s2) = window;
    // Degenerate windows (s1 = s2) are allowed: they give the fixed-s
    // marginal, which is chi-square and serves as an oracle.
    if !(s1 > 0.0 && s1 <= s2 && s2 < 1.0) {
        return Err(Error::WindowInvalid { s1, s2 });
    }
    Ok(())
}

/// Grid index range {k : s1 <= k/m <= s2}, guarded against roundoff.
fn window_index_range(window: (f64, f64), m: usize) -> Result<(usize, usize)> {
    let (s1, s2) = window;
    let k_lo = ((s1 * m as f64) - 1e-9).ceil().max(1.0) as usize;
    let k_hi = ((s2 * m as f64) + 1e-9).floor().min(m as f64 - 1.0) as usize;
    if k_lo > k_hi {
        return Err(Error::WindowInvalid { s1, s2 });
    }
    Ok((k_lo, k_hi))
}

/// Domain tag separating the per-dimension substreams of one replicate.
const BRIDGE_DIM_DOMAIN: u64 = 0xB21D;

/// One replicate of the grid sup; dimension d draws from substream
/// (replicate_seed, d), making the sup pathwise monotone in p and window.
fn bridge_sup_one(p: usize, m: usize, k_lo: usize, k_hi: usize, replicate_seed: u64) -> f64 {
    let dims = p + 1;
    let step_sd = (1.0 / m as f64).sqrt();
    // Partial sums W_d(k/m) for k <= k_hi, plus the endpoint W_d(1).
    let mut partials = vec![0.0f64; dims * (k_hi + 1)];
    let mut w1 = vec![0.0f64; dims];
    for d in 0..dims {
        let mut rng = substream_rng(replicate_seed, BRIDGE_DIM_DOMAIN, d as u64);
        let mut running = 0.0;
        for k in 1..=m {
            let z: f64 = rng.sample(StandardNormal);
            running += step_sd * z;
            if k <= k_hi {
                partials[d * (k_hi + 1) + k] = running;
            }
        }
        w1[d] = running;
    }
    let mut sup = f64::NEG_INFINITY;
    for k in k_lo..=k_hi {
        let s = k as f64 / m as f64;
        let mut norm_sq = 0.0;
        for d in 0..dims {
            let dev = partials[d * (k_hi + 1) + k] - s * w1[d];
            norm_sq += dev * dev;
        }
        let stat = norm_sq / (s * (1.0 - s));
        if stat > sup {
            sup = stat;
        }
    }
    sup
}

/// Raw Monte Carlo sample of the windowed grid sup (replicate order fixed by
/// index, independent of thread scheduling).
pub fn bridge_sup_replicates(
    p: usize,
    window: (f64, f64),
    m: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    validate_window(window)?;
    if m < 100 {
        return Err(Error::InvalidConfig(format!(
            "bridge grid size must be at least 100, got {m}"
        )));
    }
    if reps < 100 {
        return Err(Error::InsufficientReplicates {
            got: reps,
            min: 100,
        });
    }
    let (k_lo, k_hi) = window_index_range(window, m)?;
    Ok((0..reps)
        .into_par_iter()
        .map(|i| {
            let rep_seed = substream_seed(seed, DOMAIN_BRIDGE, i as u64);
            bridge_sup_one(p, m, k_lo, k_hi, rep_seed)
        })
        .collect())
}

/// Type-7 (linear order-statistic interpolation) empirical quantile.
/// `sorted` must be ascending.
pub(crate) fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    let h = (n as f64 - 1.0) * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Order-statistic standard error: half the spread between the ranks one
/// binomial standard deviation away from n*q.
pub(crate) fn quantile_se(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len() as f64;
    let half_width = (n * q * (1.0 - q)).sqrt();
    let center = n * q;
    let lo = ((center - half_width).floor().max(0.0) as usize).min(sorted.len() - 1);
    let hi = ((center + half_width).ceil().max(0.0) as usize).min(sorted.len() - 1);
    (sorted[hi] - sorted[lo]) / 2.0
}

/// Tabulate Monte Carlo quantiles of the windowed bridge sup.
pub fn simulate_bridge_sup(
    p: usize,
    window: (f64, f64),
    m: usize,
    reps: usize,
    seed: u64,
    levels: &[f64],
) -> Result<BridgeQuantileTable> {
    for &q in levels {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::InvalidProbability { q });
        }
    }
    let mut sample = bridge_sup_replicates(p, window, m, reps, seed)?;
    sample.sort_unstable_by(|a, b| a.partial_cmp(b).expect("sups are finite"));
    let quantiles = levels
        .iter()
        .map(|&level| QuantileEstimate {
            level,
            value: empirical_quantile(&sample, level),
            se: quantile_se(&sample, level),
        })
        .collect();
    Ok(BridgeQuantileTable {
        p,
        s1: window.0,
        s2: window.1,
        m,
        reps,
        seed,
        quantiles,
    })
}

/// Cache filename for a table, keyed by every generation parameter.
fn table_filename(p: usize, window: (f64, f64), m: usize, reps: usize, seed: u64) -> String {
    format!(
        "bridge_p{p}_s{:.6}_{:.6}_m{m}_r{reps}_seed{seed}.json",
        window.0, window.1
    )
}

/// Load a cached table if one exists with all requested levels; otherwise
/// compute and store it. The cache key is (p, s1, s2, m, reps, seed).
pub fn load_or_compute_table(
    dir: &Path,
    p: usize,
    window: (f64, f64),
    m: usize,
    reps: usize,
    seed: u64,
    levels: &[f64],
) -> Result<BridgeQuantileTable> {
    let path = dir.join(table_filename(p, window, m, reps, seed));
    if let Ok(bytes) = std::fs::read(&path) {
        if let Ok(table) = serde_json::from_slice::<BridgeQuantileTable>(&bytes) {
            let covered = levels.iter().all(|&l| {
                table
                    .quantiles
                    .iter()
                    .any(|q| (q.level - l).abs() <= 1e-9)
            });
            if covered && table.p == p && table.m == m && table.reps == reps && table.seed == seed
            {
                return Ok(table);
            }
        }
    }
    // Merge requested levels with the defaults so the cache serves both.
    let mut all: Vec<f64> = DEFAULT_LEVELS.to_vec();
    for &l in levels {
        if !all.iter().any(|&x| (x - l).abs() <= 1e-9) {
            all.push(l);
        }
    }
    all.sort_by(|a, b| a.partial_cmp(b).expect("finite levels"));
    let table = simulate_bridge_sup(p, window, m, reps, seed, &all)?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(&path, serde_json::to_vec_pretty(&table)?)?;
    Ok(table)
}
