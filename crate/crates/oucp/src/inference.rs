//! Drift estimation and the generalized likelihood-ratio changepoint scan.
//!
//! For theta = (mu_1..mu_p, alpha) the log-likelihood of a segment with
//! statistics (Q, R~) is, up to a theta-free constant,
//!
//! ```text
//! l(theta) = theta' R~ / sigma^2 - theta' Q theta / (2 sigma^2),
//! ```
//!
//! maximized at theta_hat = Q^{-1} R~ with maximum R~' Q^{-1} R~ / (2 sigma^2).
//! The scan statistic at a candidate split tau = s T is twice the gain in
//! maximized log-likelihood from fitting the two sides separately:
//!
//! ```text
//! Lambda_T(s) = [ R~_tau' Q_tau^{-1} R~_tau
//!               + (R~_T - R~_tau)' (Q_T - Q_tau)^{-1} (R~_T - R~_tau)
//!               - R~_T' Q_T^{-1} R~_T ] / sigma^2,
//! ```
//!
//! which is nonnegative whenever all three matrices are positive definite,
//! because the statistics are exactly additive across the split. Candidates
//! whose segments are too short or whose Gram matrices are ill-conditioned
//! are skipped and recorded, never silently evaluated.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::asymptotics::{
    critical_value_full, gumbel_norming, simulate_bridge_sup, BridgeQuantileTable,
};
use crate::basis::PeriodicBasis;
use crate::error::{Error, Result};
use crate::model::DriftParams;
use crate::simulate::SamplePath;
use crate::suffstats::{accumulate, estimate_sigma_sq, prefix_stats, SuffStats};

/// Condition-number gate: Gram matrices beyond this are treated as singular.
pub const COND_LIMIT: f64 = 1e12;

/// Target number of candidates for the automatic grid (stride = ceil(N/512)).
const AUTO_TARGET: usize = 512;

/// Minimum number of evaluated candidates for a meaningful scan.
const MIN_VALID_CANDIDATES: usize = 3;

// ---------------------------------------------------------------------------
// Maximum-likelihood fit
// ---------------------------------------------------------------------------

/// Drift estimate theta_hat = Q^{-1} R~ with fit diagnostics.
///
/// `loglik` is the maximized log-likelihood at unit diffusion; divide by
/// sigma^2 for other diffusion values (the maximizer itself does not depend
/// on sigma).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MleFit {
    pub mu: Vec<f64>,
    pub alpha: f64,
    pub cond_q: f64,
    pub loglik: f64,
    pub alpha_nonpositive: bool,
}

impl MleFit {
    /// The estimate as drift parameters.
    pub fn params(&self) -> DriftParams {
        DriftParams::new(self.mu.clone(), self.alpha)
    }

    /// The estimate as a stacked vector (mu_1..mu_p, alpha).
    pub fn theta(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.mu.len() + 1);
        for (j, &m) in self.mu.iter().enumerate() {
            v[j] = m;
        }
        v[self.mu.len()] = self.alpha;
        v
    }
}

/// Condition number (eigenvalue ratio) and Cholesky factor of a symmetric
/// matrix, or the offending condition number if the gate fails.
fn gated_cholesky(q: &DMatrix<f64>) -> std::result::Result<(f64, Cholesky<f64, Dyn>), f64> {
    let eig = SymmetricEigen::new(q.clone());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &l in eig.eigenvalues.iter() {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(cond <= COND_LIMIT) {
        return Err(cond);
    }
    match Cholesky::new(q.clone()) {
        Some(chol) => Ok((cond, chol)),
        None => Err(cond),
    }
}

/// R~' Q^{-1} R~ via the Cholesky factor.
fn quad_form(chol: &Cholesky<f64, Dyn>, rt: &DVector<f64>) -> f64 {
    rt.dot(&chol.solve(rt))
}

/// Maximum-likelihood drift estimate from segment statistics.
pub fn mle(stats: &SuffStats) -> Result<MleFit> {
    let (cond_q, chol) = gated_cholesky(stats.q()).map_err(|cond| Error::SingularStats { cond })?;
    let theta = chol.solve(stats.rt());
    let p = stats.dim() - 1;
    let alpha = theta[p];
    let mu = theta.iter().take(p).copied().collect();
    // Maximized log-likelihood at unit diffusion: theta' R~ - theta' Q theta / 2.
    let loglik = theta.dot(stats.rt()) - theta.dot(&(stats.q() * &theta)) / 2.0;
    Ok(MleFit {
        mu,
        alpha,
        cond_q,
        loglik,
        alpha_nonpositive: alpha <= 0.0,
    })
}

/// Segment log-likelihood (up to a theta-free constant) at given parameters.
pub fn loglik(stats: &SuffStats, params: &DriftParams, sigma: f64) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(Error::NonpositiveSigma { sigma });
    }
    if params.dim() != stats.dim() {
        return Err(Error::DimensionMismatch {
            expected: stats.dim(),
            got: params.dim(),
        });
    }
    let theta = DVector::from_iterator(
        stats.dim(),
        params.mu.iter().copied().chain(std::iter::once(params.alpha)),
    );
    let quad = theta.dot(&(stats.q() * &theta));
    Ok((theta.dot(stats.rt()) - quad / 2.0) / (sigma * sigma))
}

// ---------------------------------------------------------------------------
// Scan configuration
// ---------------------------------------------------------------------------

/// Where the scan looks for a changepoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ScanMode {
    /// Sup over candidates with s in [s1, s2], 0 < s1 < s2 < 1. Critical
    /// values come from the bridge-sup Monte Carlo table.
    Window { s1: f64, s2: f64 },
    /// Sup over all valid candidates; critical values from the closed-form
    /// extreme-value approximation.
    Full,
}

impl ScanMode {
    /// The conventional interior window [0.1, 0.9].
    pub fn default_window() -> Self {
        ScanMode::Window { s1: 0.1, s2: 0.9 }
    }

    fn validate(&self) -> Result<()> {
        if let ScanMode::Window { s1, s2 } = *self {
            if !(s1 > 0.0 && s1 < s2 && s2 < 1.0) {
                return Err(Error::WindowInvalid { s1, s2 });
            }
        }
        Ok(())
    }

    fn contains(&self, s: f64) -> bool {
        match *self {
            ScanMode::Window { s1, s2 } => s >= s1 - 1e-12 && s <= s2 + 1e-12,
            ScanMode::Full => true,
        }
    }
}

/// Candidate changepoint indices to evaluate.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum CandidateGrid {
    /// Every ceil(N/512)-th grid index.
    #[default]
    Auto,
    /// Every `stride`-th grid index.
    Stride(usize),
    /// Explicit grid indices (each in 1..N).
    Explicit(Vec<usize>),
}

/// A candidate that was excluded from the sup, with the reason.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkippedCandidate {
    pub s: f64,
    pub reason: String,
}

/// The scan statistic over the candidate grid.
#[derive(Debug, Clone)]
pub struct GlrCurve {
    mode: ScanMode,
    indices: Vec<usize>,
    s: Vec<f64>,
    lambda: Vec<f64>,
    argmax_pos: usize,
    skipped: Vec<SkippedCandidate>,
}

impl GlrCurve {
    pub fn mode(&self) -> ScanMode {
        self.mode
    }

    /// Evaluated candidate grid indices (strictly increasing).
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Candidate fractions s = t_k / T, aligned with [`Self::indices`].
    pub fn s_values(&self) -> &[f64] {
        &self.s
    }

    /// Lambda_T(s) per candidate, aligned with [`Self::indices`].
    pub fn lambda_values(&self) -> &[f64] {
        &self.lambda
    }

    /// The scan statistic sup_s Lambda_T(s).
    pub fn sup(&self) -> f64 {
        self.lambda[self.argmax_pos]
    }

    /// Smallest s attaining the sup.
    pub fn s_hat(&self) -> f64 {
        self.s[self.argmax_pos]
    }

    /// Grid index of the argmax.
    pub fn argmax_index(&self) -> usize {
        self.indices[self.argmax_pos]
    }

    pub fn skipped(&self) -> &[SkippedCandidate] {
        &self.skipped
    }
}

/// Minimum grid points per segment: one period's worth, floored at 10(p+1).
fn min_segment_points(path: &SamplePath, basis: &PeriodicBasis) -> usize {
    let per_period = ((path.nu() / path.dt()) - 1e-9).ceil() as usize;
    per_period.max(10 * (basis.count() + 1))
}

fn base_candidates(n: usize, grid: &CandidateGrid) -> Result<Vec<usize>> {
    let indices = match grid {
        CandidateGrid::Auto => {
            let stride = n.div_ceil(AUTO_TARGET).max(1);
            (1..n).step_by(stride).collect::<Vec<usize>>()
        }
        CandidateGrid::Stride(stride) => {
            if *stride == 0 {
                return Err(Error::InvalidConfig("candidate stride must be >= 1".into()));
            }
            (*stride..n).step_by(*stride).collect()
        }
        CandidateGrid::Explicit(list) => {
            let mut v = list.clone();
            v.sort_unstable();
            v.dedup();
            if v.iter().any(|&k| k == 0 || k >= n) {
                return Err(Error::InvalidConfig(format!(
                    "explicit candidates must lie in 1..{n}"
                )));
            }
            v
        }
    };
    Ok(indices)
}

// ---------------------------------------------------------------------------
// The scan
// ---------------------------------------------------------------------------

/// Evaluate Lambda_T(s) over the candidate grid.
///
/// Candidates outside the window are out of scope; candidates inside it that
/// fail the segment-length or conditioning gates are recorded in
/// `skipped`. Fewer than 3 evaluated candidates is an error
/// ([`Error::GridTooCoarse`]) rather than a silently degenerate scan.
pub fn glr_curve(
    path: &SamplePath,
    basis: &PeriodicBasis,
    sigma: f64,
    mode: ScanMode,
    grid: &CandidateGrid,
) -> Result<GlrCurve> {
    if sigma <= 0.0 {
        return Err(Error::NonpositiveSigma { sigma });
    }
    mode.validate()?;
    let n = path.num_steps();
    let horizon = path.horizon();
    let times = path.times();
    let min_points = min_segment_points(path, basis);

    let mut skipped = Vec::new();
    let mut evaluable = Vec::new();
    for k in base_candidates(n, grid)? {
        let s = times[k] / horizon;
        if !mode.contains(s) {
            continue;
        }
        // Segment lengths in grid points: pre has k+1, post has n-k+1; the
        // gate counts increments-bearing points, i.e. k and n-k steps.
        let shorter = k.min(n - k);
        if shorter < min_points {
            skipped.push(SkippedCandidate {
                s,
                reason: format!("segment below minimum length ({shorter} < {min_points} steps)"),
            });
            continue;
        }
        evaluable.push(k);
    }
    if evaluable.len() < MIN_VALID_CANDIDATES {
        return Err(Error::GridTooCoarse {
            valid: evaluable.len(),
        });
    }

    let prefix = prefix_stats(path, basis, &evaluable)?;
    let full = prefix.full();
    let (_, chol_full) =
        gated_cholesky(full.q()).map_err(|cond| Error::SingularStats { cond })?;
    let quad_full = quad_form(&chol_full, full.rt());
    let inv_sigma_sq = 1.0 / (sigma * sigma);

    let mut indices = Vec::with_capacity(evaluable.len());
    let mut s_vals = Vec::with_capacity(evaluable.len());
    let mut lambda = Vec::with_capacity(evaluable.len());
    for (pos, &k) in evaluable.iter().enumerate() {
        let s = times[k] / horizon;
        let pre = prefix.prefix(pos);
        let post = prefix.suffix(pos);
        let quad_pre = match gated_cholesky(pre.q()) {
            Ok((_, chol)) => quad_form(&chol, pre.rt()),
            Err(cond) => {
                skipped.push(SkippedCandidate {
                    s,
                    reason: format!("pre-change statistics ill-conditioned (cond {cond:.3e})"),
                });
                continue;
            }
        };
        let quad_post = match gated_cholesky(post.q()) {
            Ok((_, chol)) => quad_form(&chol, post.rt()),
            Err(cond) => {
                skipped.push(SkippedCandidate {
                    s,
                    reason: format!("post-change statistics ill-conditioned (cond {cond:.3e})"),
                });
                continue;
            }
        };
        indices.push(k);
        s_vals.push(s);
        lambda.push((quad_pre + quad_post - quad_full) * inv_sigma_sq);
    }
    if indices.len() < MIN_VALID_CANDIDATES {
        return Err(Error::GridTooCoarse {
            valid: indices.len(),
        });
    }
    // Smallest s attaining the sup: strict improvement only.
    let mut argmax_pos = 0;
    for (pos, &l) in lambda.iter().enumerate() {
        if l > lambda[argmax_pos] {
            argmax_pos = pos;
        }
    }
    Ok(GlrCurve {
        mode,
        indices,
        s: s_vals,
        lambda,
        argmax_pos,
        skipped,
    })
}

/// Lambda_T at explicit grid indices via one prefix pass. Unlike
/// [`glr_curve`], gate failures here are hard errors: the caller asked for
/// these exact splits.
pub fn glr_at_indices(
    path: &SamplePath,
    basis: &PeriodicBasis,
    sigma: f64,
    indices: &[usize],
) -> Result<Vec<f64>> {
    if sigma <= 0.0 {
        return Err(Error::NonpositiveSigma { sigma });
    }
    let n = path.num_steps();
    for &k in indices {
        if k == 0 || k >= n {
            return Err(Error::InvalidConfig(format!(
                "split index {k} outside 1..{n}"
            )));
        }
    }
    let mut uniq = indices.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    let prefix = prefix_stats(path, basis, &uniq)?;
    let full = prefix.full();
    let (_, chol_full) =
        gated_cholesky(full.q()).map_err(|cond| Error::SingularStats { cond })?;
    let quad_full = quad_form(&chol_full, full.rt());
    let inv_sigma_sq = 1.0 / (sigma * sigma);
    let mut by_pos = Vec::with_capacity(uniq.len());
    for pos in 0..uniq.len() {
        let pre = prefix.prefix(pos);
        let post = prefix.suffix(pos);
        let mut quads = [0.0; 2];
        for (slot, stats) in quads.iter_mut().zip([pre, &post]) {
            let (_, chol) =
                gated_cholesky(stats.q()).map_err(|cond| Error::SingularStats { cond })?;
            *slot = quad_form(&chol, stats.rt());
        }
        by_pos.push((quads[0] + quads[1] - quad_full) * inv_sigma_sq);
    }
    Ok(indices
        .iter()
        .map(|k| by_pos[uniq.binary_search(k).expect("present by construction")])
        .collect())
}

/// Lambda_T at a single grid index, via fresh per-segment accumulation
/// (used for fixed-s studies and as an independent cross-check of the
/// prefix-difference path).
pub fn glr_at(path: &SamplePath, basis: &PeriodicBasis, sigma: f64, index: usize) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(Error::NonpositiveSigma { sigma });
    }
    let n = path.num_steps();
    if index == 0 || index >= n {
        return Err(Error::InvalidConfig(format!(
            "split index {index} outside 1..{n}"
        )));
    }
    let times = path.times();
    let tau = times[index];
    let horizon = path.horizon();
    let pre = accumulate(path, basis, (0.0, tau))?;
    let post = accumulate(path, basis, (tau, horizon))?;
    let full = crate::suffstats::combine(&pre, &post)?;
    let mut quads = [0.0; 3];
    for (slot, stats) in quads.iter_mut().zip([&pre, &post, &full]) {
        let (_, chol) =
            gated_cholesky(stats.q()).map_err(|cond| Error::SingularStats { cond })?;
        *slot = quad_form(&chol, stats.rt());
    }
    Ok((quads[0] + quads[1] - quads[2]) / (sigma * sigma))
}

/// Lambda_T via three maximum-likelihood fits:
/// 2 [ l_pre(theta_pre) + l_post(theta_post) - l_full(theta_full) ].
/// Algebraically identical to the quadratic-form route; kept as an
/// independent code path for cross-checking.
pub fn glr_via_loglik(
    pre: &SuffStats,
    post: &SuffStats,
    full: &SuffStats,
    sigma: f64,
) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(Error::NonpositiveSigma { sigma });
    }
    let inv_sigma_sq = 1.0 / (sigma * sigma);
    let mut parts = [0.0; 3];
    for (slot, stats) in parts.iter_mut().zip([pre, post, full]) {
        let fit = mle(stats)?;
        *slot = fit.loglik * inv_sigma_sq;
    }
    Ok(2.0 * (parts[0] + parts[1] - parts[2]))
}

// ---------------------------------------------------------------------------
// The test
// ---------------------------------------------------------------------------

/// Diffusion coefficient: supplied or estimated from quadratic variation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaSpec {
    Known(f64),
    Estimate,
}

/// Where the critical value comes from.
#[derive(Debug)]
pub enum CriticalValueSpec<'a> {
    /// A precomputed bridge-sup quantile table (window mode only).
    FromTable(&'a BridgeQuantileTable),
    /// Run the bridge-sup Monte Carlo now (window mode only).
    BridgeMc { m: usize, reps: usize, seed: u64 },
    /// Closed-form extreme-value approximation (full mode only).
    Gumbel,
}

/// Provenance of the critical value actually used, recorded in the report.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CvSource {
    Bridge {
        p: usize,
        s1: f64,
        s2: f64,
        m: usize,
        reps: usize,
        seed: u64,
    },
    Gumbel {
        a_t: f64,
        b_t: f64,
    },
}

/// The diffusion value used by the scan, with its origin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SigmaUsed {
    pub value: f64,
    pub source: String,
}

/// Full changepoint-test outcome.
#[derive(Debug, Clone, Serialize)]
pub struct TestReport {
    pub statistic: f64,
    pub mode: ScanMode,
    pub level: f64,
    pub critical_value: f64,
    pub cv_source: CvSource,
    pub reject: bool,
    pub s_hat: f64,
    pub tau_hat: f64,
    pub theta_pre: MleFit,
    pub theta_post: MleFit,
    pub sigma_used: SigmaUsed,
    pub skipped: Vec<SkippedCandidate>,
}

/// Run the changepoint test end to end: scan, critical value, decision,
/// and pre/post fits at the estimated changepoint.
///
/// `level` is the test size in (0, 1]; level = 1 always rejects (the
/// critical value degenerates to negative infinity). Window modes must use a
/// bridge critical value and full mode the closed form; mixing them is a
/// configuration error, not an approximation.
pub fn run_test(
    path: &SamplePath,
    basis: &PeriodicBasis,
    sigma: SigmaSpec,
    mode: ScanMode,
    level: f64,
    cv: CriticalValueSpec<'_>,
) -> Result<TestReport> {
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::InvalidLevel { level });
    }
    mode.validate()?;
    match (&mode, &cv) {
        (ScanMode::Window { .. }, CriticalValueSpec::Gumbel) => {
            return Err(Error::InvalidConfig(
                "window scans take Monte Carlo critical values, not the closed form".into(),
            ));
        }
        (ScanMode::Full, CriticalValueSpec::FromTable(_))
        | (ScanMode::Full, CriticalValueSpec::BridgeMc { .. }) => {
            return Err(Error::InvalidConfig(
                "full-range scans take the closed-form critical value, not a bridge table".into(),
            ));
        }
        _ => {}
    }

    let sigma_used = match sigma {
        SigmaSpec::Known(v) => {
            if v <= 0.0 {
                return Err(Error::NonpositiveSigma { sigma: v });
            }
            SigmaUsed {
                value: v,
                source: "known".into(),
            }
        }
        SigmaSpec::Estimate => SigmaUsed {
            value: estimate_sigma_sq(path)?.sqrt(),
            source: "estimated".into(),
        },
    };

    let p = basis.count();
    let (critical_value, cv_source) = match cv {
        CriticalValueSpec::FromTable(table) => {
            let (s1, s2) = match mode {
                ScanMode::Window { s1, s2 } => (s1, s2),
                ScanMode::Full => unreachable!("rejected above"),
            };
            if table.p != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: table.p,
                });
            }
            if (table.s1 - s1).abs() > 1e-9 || (table.s2 - s2).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "table window [{}, {}] does not match scan window [{s1}, {s2}]",
                    table.s1, table.s2
                )));
            }
            let value = if level >= 1.0 {
                f64::NEG_INFINITY
            } else {
                table.quantile_at(1.0 - level)?
            };
            (
                value,
                CvSource::Bridge {
                    p,
                    s1,
                    s2,
                    m: table.m,
                    reps: table.reps,
                    seed: table.seed,
                },
            )
        }
        CriticalValueSpec::BridgeMc { m, reps, seed } => {
            let (s1, s2) = match mode {
                ScanMode::Window { s1, s2 } => (s1, s2),
                ScanMode::Full => unreachable!("rejected above"),
            };
            let value = if level >= 1.0 {
                f64::NEG_INFINITY
            } else {
                let table =
                    simulate_bridge_sup(p, (s1, s2), m, reps, seed, &[1.0 - level])?;
                table.quantiles[0].value
            };
            (
                value,
                CvSource::Bridge {
                    p,
                    s1,
                    s2,
                    m,
                    reps,
                    seed,
                },
            )
        }
        CriticalValueSpec::Gumbel => {
            let norm = gumbel_norming(path.horizon(), path.nu(), p)?;
            let value = if level >= 1.0 {
                f64::NEG_INFINITY
            } else {
                critical_value_full(path.horizon(), path.nu(), p, level)?
            };
            (
                value,
                CvSource::Gumbel {
                    a_t: norm.a_t,
                    b_t: norm.b_t,
                },
            )
        }
    };

    let curve = glr_curve(path, basis, sigma_used.value, mode, &CandidateGrid::Auto)?;
    let statistic = curve.sup();
    let k_hat = curve.argmax_index();
    let tau_hat = path.times()[k_hat];
    let pre = accumulate(path, basis, (0.0, tau_hat))?;
    let post = accumulate(path, basis, (tau_hat, path.horizon()))?;
    let theta_pre = mle(&pre)?;
    let theta_post = mle(&post)?;

    Ok(TestReport {
        statistic,
        mode,
        level,
        critical_value,
        reject: statistic > critical_value,
        s_hat: curve.s_hat(),
        tau_hat,
        theta_pre,
        theta_post,
        sigma_used,
        cv_source,
        skipped: curve.skipped().to_vec(),
    })
}

// ---------------------------------------------------------------------------
