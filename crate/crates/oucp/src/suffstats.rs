//! Sufficient statistics of the drift likelihood over path segments.
//!
//! For a segment of a discretized path the statistics are
//!
//! ```text
//! Q  = time-Gram matrix of the regressor columns (phi_1, ..., phi_p, -X),
//! R~ = ( int phi_1 dX, ..., int phi_p dX, -int X dX ),
//! ```
//!
//! assembled from left-endpoint sums: Lebesgue integrals as
//! sum f(t_i) g(t_i) dt and stochastic integrals as sum f(t_i)(X_{i+1}-X_i).
//! Left endpoints are mandatory — any other evaluation point changes the Ito
//! meaning of the dX sums — and make Q exactly the Gram matrix of sampled
//! columns, hence positive semidefinite by construction. Segment statistics
//! are additive, so prefix snapshots along candidate changepoints yield every
//! pre/post split by subtraction, exactly.

use nalgebra::{DMatrix, DVector};

use crate::basis::PeriodicBasis;
use crate::error::{Error, Result};
use crate::simulate::SamplePath;

/// Relative tolerance for segment-boundary matching in [`combine`].
const ADJACENCY_REL_TOL: f64 = 1e-9;

/// Sufficient statistics (Q, R~) over a grid segment [t_a, t_b].
#[derive(Debug, Clone)]
pub struct SuffStats {
    q: DMatrix<f64>,
    rt: DVector<f64>,
    t_start: f64,
    t_end: f64,
    n_points: usize,
}

impl SuffStats {
    /// Neutral element at time t: zero statistics over the empty segment [t, t].
    pub fn empty(p: usize, t: f64) -> Self {
        SuffStats {
            q: DMatrix::zeros(p + 1, p + 1),
            rt: DVector::zeros(p + 1),
            t_start: t,
            t_end: t,
            n_points: 1,
        }
    }

    /// Full parameter dimension p + 1.
    pub fn dim(&self) -> usize {
        self.rt.len()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn rt(&self) -> &DVector<f64> {
        &self.rt
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    /// Build statistics from raw components; intended for analytic fixtures
    /// and for reloading debug dumps, not for normal use (prefer
    /// [`accumulate`]).
    #[doc(hidden)]
    pub fn from_parts(
        q: DMatrix<f64>,
        rt: DVector<f64>,
        t_start: f64,
        t_end: f64,
        n_points: usize,
    ) -> Result<Self> {
        if q.nrows() != q.ncols() || q.nrows() != rt.len() {
            return Err(Error::DimensionMismatch {
                expected: rt.len(),
                got: q.nrows(),
            });
        }
        Ok(SuffStats {
            q,
            rt,
            t_start,
            t_end,
            n_points,
        })
    }

    /// Diagnostic JSON dump (row-major Q).
    pub fn debug_json(&self) -> serde_json::Value {
        let dim = self.dim();
        let q_rows: Vec<Vec<f64>> = (0..dim)
            .map(|j| (0..dim).map(|k| self.q[(j, k)]).collect())
            .collect();
        serde_json::json!({
            "q": q_rows,
            "rt": self.rt.iter().copied().collect::<Vec<f64>>(),
            "t_start": self.t_start,
            "t_end": self.t_end,
            "n_points": self.n_points,
        })
    }

    /// Exact segment difference: statistics over [self.start, other.end] minus
    /// this prefix, used to form post-change statistics without re-summation.
    fn difference(&self, longer: &SuffStats) -> SuffStats {
        SuffStats {
            q: &longer.q - &self.q,
            rt: &longer.rt - &self.rt,
            t_start: self.t_end,
            t_end: longer.t_end,
            n_points: longer.n_points - self.n_points + 1,
        }
    }
}

/// Streaming accumulator of the left-endpoint sums.
struct Accumulator {
    q: DMatrix<f64>,
    rt: DVector<f64>,
    regressors: Vec<f64>,
}

impl Accumulator {
    fn new(p: usize) -> Self {
        Accumulator {
            q: DMatrix::zeros(p + 1, p + 1),
            rt: DVector::zeros(p + 1),
            regressors: vec![0.0; p + 1],
        }
    }

    #[inline]
    fn step(&mut self, basis: &PeriodicBasis, t: f64, x: f64, dx: f64, dt: f64) {
        let dim = self.regressors.len();
        basis.eval_all(t, &mut self.regressors[..dim - 1]);
        self.regressors[dim - 1] = -x;
        for j in 0..dim {
            let cj = self.regressors[j];
            self.rt[j] += cj * dx;
            for k in j..dim {
                self.q[(j, k)] += cj * self.regressors[k] * dt;
            }
        }
    }

    /// Snapshot with the lower triangle mirrored.
    fn snapshot(&self, t_start: f64, t_end: f64, n_points: usize) -> SuffStats {
        let dim = self.regressors.len();
        let mut q = self.q.clone();
        for j in 0..dim {
            for k in 0..j {
                q[(j, k)] = q[(k, j)];
            }
        }
        SuffStats {
            q,
            rt: self.rt.clone(),
            t_start,
            t_end,
            n_points,
        }
    }
}

fn require_orthonormal(basis: &PeriodicBasis) -> Result<()> {
    if basis.is_orthonormal() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(
            "statistics require an orthonormalized basis (call orthonormalize first)".into(),
        ))
    }
}

/// Accumulate the statistics over [t_a, t_b]; endpoints must be grid times.
pub fn accumulate(path: &SamplePath, basis: &PeriodicBasis, segment: (f64, f64)) -> Result<SuffStats> {
    require_orthonormal(basis)?;
    let ia = path.index_of_time(segment.0)?;
    let ib = path.index_of_time(segment.1)?;
    if ia >= ib {
        return Err(Error::EmptySegment);
    }
    let dt = path.dt();
    let times = path.times();
    let values = path.values();
    let mut acc = Accumulator::new(basis.count());
    for i in ia..ib {
        let dx = values[i + 1] - values[i];
        acc.step(basis, times[i], values[i], dx, dt);
    }
    Ok(acc.snapshot(times[ia], times[ib], ib - ia + 1))
}

/// Merge statistics over adjacent segments by entrywise addition (exact).
pub fn combine(s1: &SuffStats, s2: &SuffStats) -> Result<SuffStats> {
    if s1.dim() != s2.dim() {
        return Err(Error::DimensionMismatch {
            expected: s1.dim(),
            got: s2.dim(),
        });
    }
    let tol = ADJACENCY_REL_TOL * s1.t_end.abs().max(1.0);
    if (s1.t_end - s2.t_start).abs() > tol {
        return Err(Error::NonAdjacentSegments {
            end: s1.t_end,
            start: s2.t_start,
        });
    }
    Ok(SuffStats {
        q: &s1.q + &s2.q,
        rt: &s1.rt + &s2.rt,
        t_start: s1.t_start,
        t_end: s2.t_end,
        n_points: s1.n_points + s2.n_points - 1,
    })
}

/// Cumulative statistics at candidate changepoint indices, one pass over the
/// path. The full-sample entry (index N) is always present as the last entry.
#[derive(Debug, Clone)]
pub struct StatsPrefix {
    indices: Vec<usize>,
    entries: Vec<SuffStats>,
}

impl StatsPrefix {
    /// Candidate grid indices, in increasing order; last is N.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn entries(&self) -> &[SuffStats] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Statistics over [0, t_k] for the candidate at position `pos`.
    pub fn prefix(&self, pos: usize) -> &SuffStats {
        &self.entries[pos]
    }

    /// Full-sample statistics (over [0, T]).
    pub fn full(&self) -> &SuffStats {
        self.entries.last().expect("prefix never empty")
    }

    /// Statistics over (t_k, T] for the candidate at position `pos`,
    /// by exact subtraction from the full-sample entry.
    pub fn suffix(&self, pos: usize) -> SuffStats {
        self.entries[pos].difference(self.full())
    }
}

/// Build cumulative statistics at the given strictly increasing candidate
/// indices (grid indices in 1..=N).
pub fn prefix_stats(
    path: &SamplePath,
    basis: &PeriodicBasis,
    candidates: &[usize],
) -> Result<StatsPrefix> {
    require_orthonormal(basis)?;
    let n = path.num_steps();
    let mut indices: Vec<usize> = Vec::with_capacity(candidates.len() + 1);
    for &k in candidates {
        if k == 0 {
            return Err(Error::EmptySegment);
        }
        if k > n {
            return Err(Error::SegmentOffGrid {
                t: k as f64 * path.dt(),
            });
        }
        if let Some(&prev) = indices.last() {
            if k <= prev {
                return Err(Error::InvalidConfig(
                    "candidate indices must be strictly increasing".into(),
                ));
            }
        }
        indices.push(k);
    }
    if indices.last() != Some(&n) {
        indices.push(n);
    }

    let dt = path.dt();
    let times = path.times();
    let values = path.values();
    let mut acc = Accumulator::new(basis.count());
    let mut entries = Vec::with_capacity(indices.len());
    let mut next = 0usize;
    for i in 0..n {
        let dx = values[i + 1] - values[i];
        acc.step(basis, times[i], values[i], dx, dt);
        while next < indices.len() && indices[next] == i + 1 {
            entries.push(acc.snapshot(0.0, times[i + 1], i + 2));
            next += 1;
        }
    }
    Ok(StatsPrefix { indices, entries })
}

/// Quadratic-variation estimate of the squared diffusion coefficient:
/// sigma^2 ~ (1/T) sum (X_{i+1} - X_i)^2.
pub fn estimate_sigma_sq(path: &SamplePath) -> Result<f64> {
    let values = path.values();
    if values.len() < 2 {
        return Err(Error::DegeneratePath {
            points: values.len(),
        });
    }
    let qv: f64 = values.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum();
    Ok(qv / path.horizon())
}
