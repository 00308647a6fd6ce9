//! Periodic basis families for the mean-reversion level.
//!
//! A [`PeriodicBasis`] is a finite set of nu-periodic functions
//! (phi_1, ..., phi_p) used to expand the drift level L(t) = sum_j mu_j
//! phi_j(t). Inference in this crate assumes the normalization
//!
//! ```text
//! integral_0^nu phi_j(t) phi_k(t) dt = nu * delta_jk,
//! ```
//!
//! i.e. each function has squared L^2 norm nu over one period (so the
//! constant function 1 is a valid first element). Bases can be built from the
//! trigonometric family, from arbitrary closures, or from tabulated samples
//! (interpolated with a periodic cubic spline); non-orthonormal inputs are
//! repaired with [`PeriodicBasis::orthonormalize`].
//!
//! Evaluation wraps its argument with `rem_euclid`, which is exact in IEEE
//! arithmetic: the periodic extension introduces no rounding beyond that of
//! the representative point in [0, nu).

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::quad;

/// A single basis component, evaluated on the fundamental period [0, nu).
pub type BasisFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Relative tolerance (in units of nu) for declaring a basis orthonormal.
pub const ORTHONORMALITY_TOL: f64 = 1e-8;

/// Residual L^2-norm threshold (in units of nu) below which a raw function is
/// declared linearly dependent on its predecessors.
pub const DEPENDENCE_TOL: f64 = 1e-10;

#[derive(Clone)]
pub struct PeriodicBasis {
    period: f64,
    components: Vec<BasisFn>,
    quad_points: usize,
    orthonormal: bool,
}

impl fmt::Debug for PeriodicBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PeriodicBasis")
            .field("period", &self.period)
            .field("count", &self.components.len())
            .field("quad_points", &self.quad_points)
            .field("orthonormal", &self.orthonormal)
            .finish()
    }
}

impl PeriodicBasis {
    /// Trigonometric basis: 1, sqrt(2) cos(2 pi t/nu), sqrt(2) sin(2 pi t/nu),
    /// sqrt(2) cos(4 pi t/nu), ... truncated to `count` functions.
    ///
    /// This family satisfies the norm-nu orthonormality exactly, so the
    /// returned basis is flagged orthonormal without a quadrature check.
    pub fn fourier(period: f64, count: usize, quad_points: usize) -> Result<Self> {
        validate_period(period)?;
        validate_count(count)?;
        let mut components: Vec<BasisFn> = Vec::with_capacity(count);
        for j in 0..count {
            components.push(fourier_component(period, j));
        }
        Ok(PeriodicBasis {
            period,
            components,
            quad_points: quad_points.max(1),
            orthonormal: true,
        })
    }

    /// Basis from arbitrary closures.
    ///
    /// Each closure is evaluated only on [0, nu) and extended periodically,
    /// so any function defines a valid component; periodicity of the raw
    /// closure outside the fundamental period is irrelevant. Orthonormality
    /// is checked by quadrature and recorded in [`Self::is_orthonormal`].
    pub fn from_functions(period: f64, functions: Vec<BasisFn>, quad_points: usize) -> Result<Self> {
        validate_period(period)?;
        validate_count(functions.len())?;
        let mut basis = PeriodicBasis {
            period,
            components: functions,
            quad_points: quad_points.max(1),
            orthonormal: false,
        };
        basis.orthonormal = basis.measures_orthonormal();
        Ok(basis)
    }

    /// Basis from uniform samples over one period.
    ///
    /// Row j holds samples of function j at t_i = i * nu / m for
    /// i = 0, ..., m-1 (the point at nu is the wrap-around of the one at 0).
    /// Each row is interpolated with a periodic cubic spline.
    pub fn from_samples(period: f64, samples: Vec<Vec<f64>>, quad_points: usize) -> Result<Self> {
        validate_period(period)?;
        validate_count(samples.len())?;
        let m = samples[0].len();
        if m < 4 {
            return Err(Error::InvalidConfig(format!(
                "tabulated basis needs at least 4 samples per period, got {m}"
            )));
        }
        if let Some(bad) = samples.iter().find(|row| row.len() != m) {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: bad.len(),
            });
        }
        if samples
            .iter()
            .any(|row| row.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidConfig(
                "tabulated basis samples must be finite".into(),
            ));
        }
        let mut components: Vec<BasisFn> = Vec::with_capacity(samples.len());
        for row in samples {
            let spline = Arc::new(PeriodicSpline::new(period, row)?);
            components.push(Arc::new(move |t| spline.eval(t)));
        }
        let mut basis = PeriodicBasis {
            period,
            components,
            quad_points: quad_points.max(1),
            orthonormal: false,
        };
        basis.orthonormal = basis.measures_orthonormal();
        Ok(basis)
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Number of basis functions p.
    pub fn count(&self) -> usize {
        self.components.len()
    }

    pub fn quad_points(&self) -> usize {
        self.quad_points
    }

    /// Whether the norm-nu orthonormality held (exactly or by quadrature
    /// check at construction / orthonormalization).
    pub fn is_orthonormal(&self) -> bool {
        self.orthonormal
    }

    /// Evaluate component j at time t (any real t; wraps periodically).
    pub fn eval(&self, j: usize, t: f64) -> f64 {
        let u = self.wrap(t);
        (self.components[j])(u)
    }

    /// Evaluate all components at time t into `out` (length p).
    pub fn eval_all(&self, t: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.components.len());
        let u = self.wrap(t);
        for (slot, f) in out.iter_mut().zip(&self.components) {
            *slot = f(u);
        }
    }

    /// Map t to its representative in [0, nu).
    fn wrap(&self, t: f64) -> f64 {
        let mut u = t.rem_euclid(self.period);
        // rem_euclid can round up to the period for tiny negative inputs.
        if u >= self.period {
            u -= self.period;
        }
        u
    }

    /// Matrix of pairwise period integrals integral_0^nu phi_j phi_k dt,
    /// computed with the basis quadrature resolution.
    pub fn gram_matrix(&self) -> DMatrix<f64> {
        let p = self.count();
        let (nodes, weights) = quad::composite_rule(0.0, self.period, self.quad_points);
        // One evaluation pass per function, then weighted dot products.
        let values: Vec<Vec<f64>> = self
            .components
            .iter()
            .map(|f| nodes.iter().map(|&x| f(x)).collect())
            .collect();
        let mut g = DMatrix::zeros(p, p);
        for j in 0..p {
            for k in j..p {
                let s: f64 = weights
                    .iter()
                    .zip(values[j].iter().zip(&values[k]))
                    .map(|(w, (a, b))| w * a * b)
                    .sum();
                g[(j, k)] = s;
                g[(k, j)] = s;
            }
        }
        g
    }

    fn measures_orthonormal(&self) -> bool {
        let g = self.gram_matrix();
        let p = self.count();
        let tol = ORTHONORMALITY_TOL * self.period;
        for j in 0..p {
            for k in 0..p {
                let target = if j == k { self.period } else { 0.0 };
                if (g[(j, k)] - target).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// Gram-Schmidt orthonormalization to the norm-nu convention.
    ///
    /// Runs modified Gram-Schmidt with one re-orthogonalization sweep on the
    /// function values at the quadrature nodes, tracking the coefficients of
    /// each output in terms of the raw inputs. Signs are fixed by requiring
    /// the first nonvanishing value along the node sequence to be positive,
    /// making the output independent of sign flips in the input.
    ///
    /// Inputs that are already orthonormal are reproduced up to that sign
    /// convention. A residual with L^2 norm below [`DEPENDENCE_TOL`] * nu
    /// signals linear dependence and aborts with [`Error::DependentBasis`].
    pub fn orthonormalize(&self) -> Result<PeriodicBasis> {
        let p = self.count();
        let nu = self.period;
        let (nodes, weights) = quad::composite_rule(0.0, nu, self.quad_points);
        let dot = |a: &[f64], b: &[f64]| -> f64 {
            weights
                .iter()
                .zip(a.iter().zip(b))
                .map(|(w, (x, y))| w * x * y)
                .sum()
        };

        let mut values: Vec<Vec<f64>> = self
            .components
            .iter()
            .map(|f| nodes.iter().map(|&x| f(x)).collect())
            .collect();
        // coeffs[j] expresses output j in the raw components.
        let mut coeffs: Vec<Vec<f64>> = (0..p)
            .map(|j| {
                let mut c = vec![0.0; p];
                c[j] = 1.0;
                c
            })
            .collect();

        for j in 0..p {
            // Two sweeps: plain MGS, then re-orthogonalization to mop up the
            // rounding left by the first pass.
            for _ in 0..2 {
                for i in 0..j {
                    // Predecessors are normalized to squared norm nu.
                    let proj = dot(&values[i], &values[j]) / nu;
                    let (vi, ci) = (values[i].clone(), coeffs[i].clone());
                    for (a, b) in values[j].iter_mut().zip(&vi) {
                        *a -= proj * b;
                    }
                    for (a, b) in coeffs[j].iter_mut().zip(&ci) {
                        *a -= proj * b;
                    }
                }
            }
            let norm = dot(&values[j], &values[j]).max(0.0).sqrt();
            if norm < DEPENDENCE_TOL * nu {
                return Err(Error::DependentBasis {
                    index: j,
                    residual: norm,
                });
            }
            let scale = nu.sqrt() / norm;
            for v in values[j].iter_mut() {
                *v *= scale;
            }
            for c in coeffs[j].iter_mut() {
                *c *= scale;
            }
            // Sign convention: first node where the value is resolvably
            // nonzero decides the orientation.
            let peak = values[j].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let lead = values[j].iter().find(|v| v.abs() > 1e-8 * peak);
            if let Some(&v) = lead {
                if v < 0.0 {
                    for x in values[j].iter_mut() {
                        *x = -*x;
                    }
                    for c in coeffs[j].iter_mut() {
                        *c = -*c;
                    }
                }
            }
        }

        let components: Vec<BasisFn> = coeffs
            .into_iter()
            .map(|c| {
                let parents = self.components.clone();
                let f: BasisFn = Arc::new(move |t| {
                    parents
                        .iter()
                        .zip(&c)
                        .map(|(g, w)| w * g(t))
                        .sum::<f64>()
                });
                f
            })
            .collect();
        Ok(PeriodicBasis {
            period: nu,
            components,
            quad_points: self.quad_points,
            orthonormal: true,
        })
    }
}

fn validate_period(period: f64) -> Result<()> {
    if !(period.is_finite() && period > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "period must be positive and finite, got {period}"
        )));
    }
    Ok(())
}

fn validate_count(count: usize) -> Result<()> {
    if count == 0 {
        return Err(Error::InvalidConfig(
            "basis needs at least one function".into(),
        ));
    }
    Ok(())
}

fn fourier_component(period: f64, j: usize) -> BasisFn {
    let sqrt2 = std::f64::consts::SQRT_2;
    if j == 0 {
        return Arc::new(|_| 1.0);
    }
    // j = 1, 2, 3, 4, ... -> cos k=1, sin k=1, cos k=2, sin k=2, ...
    let k = (j + 1) / 2;
    let omega = 2.0 * std::f64::consts::PI * k as f64 / period;
    if j % 2 == 1 {
        Arc::new(move |t| sqrt2 * (omega * t).cos())
    } else {
        Arc::new(move |t| sqrt2 * (omega * t).sin())
    }
}

// --- periodic cubic spline -------------------------------------------------

/// Cubic spline interpolant with periodic boundary conditions on a uniform
/// grid over [0, period].
pub struct PeriodicSpline {
    period: f64,
    h: f64,
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m2: Vec<f64>,
}

impl PeriodicSpline {
    /// `y[i]` is the value at t = i * period / y.len(); the value at `period`
    /// wraps to `y[0]`.
    pub fn new(period: f64, y: Vec<f64>) -> Result<Self> {
        validate_period(period)?;
        let m = y.len();
        if m < 3 {
            return Err(Error::InvalidConfig(format!(
                "periodic spline needs at least 3 knots, got {m}"
            )));
        }
        let h = period / m as f64;
        // Continuity of the first derivative at each knot gives the cyclic
        // tridiagonal system (h/6) M_{i-1} + (2h/3) M_i + (h/6) M_{i+1} = d_i
        // with d_i the second difference of y over h.
        let rhs: Vec<f64> = (0..m)
            .map(|i| {
                let prev = y[(i + m - 1) % m];
                let next = y[(i + 1) % m];
                (next - 2.0 * y[i] + prev) / h
            })
            .collect();
        let m2 = solve_cyclic_tridiagonal(h / 6.0, 2.0 * h / 3.0, h / 6.0, &rhs);
        Ok(PeriodicSpline { period, h, y, m2 })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let mut u = t.rem_euclid(self.period);
        if u >= self.period {
            u -= self.period;
        }
        let m = self.y.len();
        let mut k = (u / self.h) as usize;
        if k >= m {
            k = m - 1;
        }
        let t0 = k as f64 * self.h;
        let a = (t0 + self.h - u) / self.h;
        let b = (u - t0) / self.h;
        let (y0, y1) = (self.y[k], self.y[(k + 1) % m]);
        let (m0, m1) = (self.m2[k], self.m2[(k + 1) % m]);
        a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * self.h * self.h / 6.0
    }
}

/// Solve a cyclic tridiagonal system with constant bands via the
/// Sherman-Morrison rank-one update of a plain Thomas solve.
fn solve_cyclic_tridiagonal(sub: f64, diag: f64, sup: f64, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    debug_assert!(n >= 3);
    // Corner entries: row 0 couples to n-1 with `sub`, row n-1 to 0 with `sup`.
    let (beta, alpha) = (sub, sup);
    let gamma = -diag;
    let mut dd = vec![diag; n];
    dd[0] = diag - gamma;
    dd[n - 1] = diag - alpha * beta / gamma;
    let x = solve_tridiagonal(sub, &dd, sup, rhs);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = solve_tridiagonal(sub, &dd, sup, &u);
    let fact = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(a, b)| a - fact * b).collect()
}

/// Thomas algorithm with constant sub/super diagonals and per-row diagonal.
fn solve_tridiagonal(sub: f64, diag: &[f64], sup: f64, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let denom = diag[i] - sub * c[i - 1];
        c[i] = sup / denom;
        d[i] = (rhs[i] - sub * d[i - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}
