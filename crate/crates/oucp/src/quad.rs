//! Gauss-Legendre quadrature.
//!
//! All deterministic integrals in the crate (basis Gram matrices, stationary
//! mean profiles, per-step drift convolutions) go through this module, so the
//! node/weight tables are computed once per order and cached. Nodes are the
//! roots of the Legendre polynomial P_n, found by Newton iteration from the
//! Chebyshev-based initial guess; this converges to machine precision in a
//! handful of steps for every order used here.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

/// Quadrature order used per panel by [`integrate`].
pub const PANEL_ORDER: usize = 64;

/// Default number of quadrature points per period for basis/model integrals.
pub const DEFAULT_QUAD_POINTS: usize = 512;

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
///
/// Nodes are returned in increasing order. Results are cached per order.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be at least 1");
    static CACHE: OnceLock<Mutex<HashMap<usize, (Vec<f64>, Vec<f64>)>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("quadrature cache poisoned");
    guard.entry(n).or_insert_with(|| compute_rule(n)).clone()
}

fn compute_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-like initial guess for the i-th root (descending order).
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-15 {
                let (_, d) = legendre_with_derivative(n, x);
                dp = d;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = w;
        nodes[i] = -x;
        weights[i] = w;
    }
    if n % 2 == 1 {
        // Exact midpoint for odd orders; the loop above already set it, but
        // pin the node to zero so symmetry is bitwise.
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// P_n(x) and P_n'(x) by the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    // P_n'(x) = n (x P_n - P_{n-1}) / (x^2 - 1)
    let d = (n as f64) * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Single n-point Gauss-Legendre panel over [a, b].
pub fn panel<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, order: usize) -> f64 {
    let (nodes, weights) = gauss_legendre(order);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut sum = 0.0;
    for (x, w) in nodes.iter().zip(&weights) {
        sum += w * f(mid + half * x);
    }
    half * sum
}

/// Composite Gauss-Legendre integral of `f` over [a, b].
///
/// The interval is split into equal panels of [`PANEL_ORDER`] points so that
/// the total node count is at least `min_points`. For smooth periodic
/// integrands the result converges spectrally in the panel order, so the
/// default resolution is far inside machine precision.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, min_points: usize) -> f64 {
    if a == b {
        return 0.0;
    }
    let panels = min_points.div_ceil(PANEL_ORDER).max(1);
    let (nodes, weights) = gauss_legendre(PANEL_ORDER);
    let width = (b - a) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let lo = a + k as f64 * width;
        let half = 0.5 * width;
        let mid = lo + half;
        let mut sum = 0.0;
        for (x, w) in nodes.iter().zip(&weights) {
            sum += w * f(mid + half * x);
        }
        total += half * sum;
    }
    total
}

/// Nodes and weights of the composite rule used by [`integrate`] on [a, b].
///
/// Weights already include the affine panel scaling, so an integral is just
/// the weighted sum of integrand values at the returned nodes. Nodes are in
/// increasing order.
pub fn composite_rule(a: f64, b: f64, min_points: usize) -> (Vec<f64>, Vec<f64>) {
    let panels = min_points.div_ceil(PANEL_ORDER).max(1);
    let (nodes, weights) = gauss_legendre(PANEL_ORDER);
    let width = (b - a) / panels as f64;
    let mut xs = Vec::with_capacity(panels * PANEL_ORDER);
    let mut ws = Vec::with_capacity(panels * PANEL_ORDER);
    for k in 0..panels {
        let half = 0.5 * width;
        let mid = a + k as f64 * width + half;
        for (x, w) in nodes.iter().zip(&weights) {
            xs.push(mid + half * x);
            ws.push(half * w);
        }
    }
    (xs, ws)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn composite_rule_reproduces_integrate() {
        let (xs, ws) = composite_rule(0.0, 2.0, 200);
        let by_nodes: f64 = xs.iter().zip(&ws).map(|(x, w)| w * (x * x)).sum();
        assert_relative_eq!(by_nodes, 8.0 / 3.0, max_relative = 1e-13);
        assert_relative_eq!(
            by_nodes,
            integrate(|x| x * x, 0.0, 2.0, 200),
            max_relative = 1e-15
        );
    }

    #[test]
    fn low_order_rule_is_exact_for_polynomials() {
        // n-point Gauss-Legendre is exact up to degree 2n-1.
        let int_x3 = panel(|x| x * x * x, 0.0, 1.0, 2);
        assert_relative_eq!(int_x3, 0.25, max_relative = 1e-14);
        let int_x5 = panel(|x| x.powi(5), -1.0, 2.0, 3);
        assert_relative_eq!(int_x5, (64.0 - 1.0) / 6.0, max_relative = 1e-14);
    }

    #[test]
    fn weights_sum_to_interval_length() {
        for n in [1, 2, 8, 64, 65] {
            let (_, w) = gauss_legendre(n);
            assert_relative_eq!(w.iter().sum::<f64>(), 2.0, max_relative = 1e-13);
        }
    }

    #[test]
    fn nodes_are_sorted_and_symmetric() {
        let (x, _) = gauss_legendre(64);
        assert!(x.windows(2).all(|p| p[0] < p[1]));
        for i in 0..32 {
            assert_relative_eq!(x[i], -x[63 - i], max_relative = 1e-14);
        }
    }

    #[test]
    fn composite_matches_known_integrals() {
        let v = integrate(|t| (2.0 * std::f64::consts::PI * t).cos().powi(2), 0.0, 1.0, 512);
        assert_relative_eq!(v, 0.5, max_relative = 1e-13);
        let v = integrate(|t| t.exp(), 0.0, 3.0, 256);
        assert_relative_eq!(v, 3f64.exp() - 1.0, max_relative = 1e-13);
    }

    #[test]
    fn eight_point_panel_handles_per_step_drift_kernels() {
        // Kernel shape used by the exact sampler: exp(-a(d-u)) * trig(t+u).
        let a = 1.7;
        let d = 0.01;
        let exact = {
            // Antiderivative of e^{a u} cos(w u) evaluated analytically.
            let w = 2.0 * std::f64::consts::PI;
            let prim = |u: f64| (a * u).exp() * (a * (w * u).cos() + w * (w * u).sin()) / (a * a + w * w);
            (-a * d).exp() * (prim(d) - prim(0.0))
        };
        let got = panel(|u| (-a * (d - u)).exp() * (2.0 * std::f64::consts::PI * u).cos(), 0.0, d, 8);
        assert_relative_eq!(got, exact, max_relative = 1e-13);
    }
}
