//! Model specification: drift parameters, the mean-reversion level L, the
//! stationary mean profile, and the information-limit matrix.
//!
//! The process under study solves
//!
//! ```text
//! dX_t = (L(t) - alpha X_t) dt + sigma dB_t,      L(t) = sum_j mu_j phi_j(t),
//! ```
//!
//! with a nu-periodic level L. For alpha > 0 the drift admits a unique
//! nu-periodic attractor h~ solving h' = L(t) - alpha h; the stationary
//! process fluctuates around it with variance sigma^2 / (2 alpha). The
//! long-horizon limit of the scaled information matrix is
//!
//! ```text
//! Sigma = [ nu I_p   Lambda ]      Lambda_j = int_0^nu phi_j h~ dt,
//!         [ Lambda^t  omega ]      omega    = int_0^nu h~^2 dt + nu sigma^2/(2 alpha),
//! ```
//!
//! computed here by quadrature from the same basis and parameters.
//!
//! h~ is evaluated through its periodic fixed point rather than the defining
//! improper integral: h~(0) = (int_0^nu e^{alpha s} L ds) / (e^{alpha nu} - 1)
//! followed by variation of constants across one period. All exponentials are
//! kept in shifted form exp(alpha (s - t)) with s <= t, so the evaluator stays
//! finite for arbitrarily large alpha nu.

use nalgebra::DMatrix;

use crate::basis::PeriodicBasis;
use crate::error::{Error, Result};
use crate::quad;

/// Drift parameters theta = (mu_1, ..., mu_p, alpha).
///
/// alpha > 0 is the admissible simulation region; estimates may leave it and
/// are flagged rather than rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftParams {
    pub mu: Vec<f64>,
    pub alpha: f64,
}

impl DriftParams {
    pub fn new(mu: Vec<f64>, alpha: f64) -> Self {
        DriftParams { mu, alpha }
    }

    /// Full parameter dimension p + 1.
    pub fn dim(&self) -> usize {
        self.mu.len() + 1
    }

    /// Parameters as the stacked vector (mu..., alpha).
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = self.mu.clone();
        v.push(self.alpha);
        v
    }

    pub fn require_positive_alpha(&self) -> Result<()> {
        if self.alpha > 0.0 && self.alpha.is_finite() {
            Ok(())
        } else {
            Err(Error::NonpositiveAlpha { alpha: self.alpha })
        }
    }
}

/// Initial condition policy for simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitPolicy {
    /// Start at the given value.
    Fixed(f64),
    /// Draw X_0 from the stationary time-0 marginal N(h~(0), sigma^2/(2 alpha)).
    Stationary,
}

/// Complete generative specification of the process.
///
/// `sigma = 0` is accepted and yields the noise-free mean dynamics (useful
/// for fixtures); operations that divide by sigma^2 reject it separately.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub basis: PeriodicBasis,
    pub theta: DriftParams,
    pub sigma: f64,
    pub init: InitPolicy,
}

impl ModelSpec {
    pub fn new(basis: PeriodicBasis, theta: DriftParams, sigma: f64, init: InitPolicy) -> Result<Self> {
        if theta.mu.len() != basis.count() {
            return Err(Error::DimensionMismatch {
                expected: basis.count(),
                got: theta.mu.len(),
            });
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::NonpositiveSigma { sigma });
        }
        if !theta.alpha.is_finite() {
            return Err(Error::NonpositiveAlpha { alpha: theta.alpha });
        }
        if let InitPolicy::Fixed(x0) = init {
            if !x0.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "fixed initial value must be finite, got {x0}"
                )));
            }
        }
        Ok(ModelSpec {
            basis,
            theta,
            sigma,
            init,
        })
    }

    /// The mean-reversion level L(t) = sum_j mu_j phi_j(t).
    pub fn mean_reversion(&self, t: f64) -> f64 {
        self.theta
            .mu
            .iter()
            .enumerate()
            .map(|(j, m)| m * self.basis.eval(j, t))
            .sum()
    }
}

/// Evaluate L(t) = sum_j mu_j phi_j(t mod nu) for an arbitrary coefficient
/// vector against a basis.
pub fn eval_mean_reversion(basis: &PeriodicBasis, mu: &[f64], t: f64) -> Result<f64> {
    if mu.len() != basis.count() {
        return Err(Error::DimensionMismatch {
            expected: basis.count(),
            got: mu.len(),
        });
    }
    Ok(mu
        .iter()
        .enumerate()
        .map(|(j, m)| m * basis.eval(j, t))
        .sum())
}

/// Precomputed evaluator of the periodic stationary mean profile h~.
///
/// Construction integrates e^{alpha(s - .)} L(s) across one period, storing
/// the convolution at panel boundaries; each evaluation then needs two
/// exponentials and one partial quadrature panel.
pub struct HtildeEvaluator {
    period: f64,
    alpha: f64,
    basis: PeriodicBasis,
    mu: Vec<f64>,
    panel_width: f64,
    /// cumulative[k] = int_0^{a_k} e^{-alpha (a_k - s)} L(s) ds at a_k = k w.
    cumulative: Vec<f64>,
    h0: f64,
}

impl HtildeEvaluator {
    pub fn new(basis: &PeriodicBasis, theta: &DriftParams, quad_points: usize) -> Result<Self> {
        theta.require_positive_alpha()?;
        if theta.mu.len() != basis.count() {
            return Err(Error::DimensionMismatch {
                expected: basis.count(),
                got: theta.mu.len(),
            });
        }
        let nu = basis.period();
        let alpha = theta.alpha;
        let panels = quad_points.div_ceil(quad::PANEL_ORDER).max(1);
        let width = nu / panels as f64;
        let level = |s: f64| -> f64 {
            theta
                .mu
                .iter()
                .enumerate()
                .map(|(j, m)| m * basis.eval(j, s))
                .sum()
        };
        // Panel convolutions K_k = int_{a_k}^{a_{k+1}} e^{-alpha(a_{k+1}-s)} L ds,
        // then the boundary recurrence C_{k+1} = e^{-alpha w} C_k + K_k.
        let decay = (-alpha * width).exp();
        let mut cumulative = Vec::with_capacity(panels + 1);
        cumulative.push(0.0);
        for k in 0..panels {
            let a = k as f64 * width;
            let b = a + width;
            let kk = quad::panel(|s| (-alpha * (b - s)).exp() * level(s), a, b, quad::PANEL_ORDER);
            let prev = *cumulative.last().expect("nonempty");
            cumulative.push(decay * prev + kk);
        }
        // Periodic fixed point: h(0)(1 - e^{-alpha nu}) = C_n.
        let c_full = *cumulative.last().expect("nonempty");
        let h0 = c_full / (-(-alpha * nu).exp_m1());
        Ok(HtildeEvaluator {
            period: nu,
            alpha,
            basis: basis.clone(),
            mu: theta.mu.clone(),
            panel_width: width,
            cumulative,
            h0,
        })
    }

    pub fn h0(&self) -> f64 {
        self.h0
    }

    /// h~(t) for arbitrary real t (periodic extension).
    pub fn eval(&self, t: f64) -> f64 {
        let mut u = t.rem_euclid(self.period);
        if u >= self.period {
            u -= self.period;
        }
        let n = self.cumulative.len() - 1;
        let mut k = (u / self.panel_width) as usize;
        if k >= n {
            k = n - 1;
        }
        let a_k = k as f64 * self.panel_width;
        let level = |s: f64| -> f64 {
            self.mu
                .iter()
                .enumerate()
                .map(|(j, m)| m * self.basis.eval(j, s))
                .sum()
        };
        let tail = quad::panel(
            |s| (-self.alpha * (u - s)).exp() * level(s),
            a_k,
            u,
            quad::PANEL_ORDER,
        );
        (-self.alpha * u).exp() * self.h0
            + (-self.alpha * (u - a_k)).exp() * self.cumulative[k]
            + tail
    }
}

/// The nu-periodic stationary mean h~(t), one-shot convenience form.
///
/// Builds an [`HtildeEvaluator`] per call; use the evaluator directly when
/// evaluating at many points.
pub fn h_tilde(model: &ModelSpec, t: f64) -> Result<f64> {
    let eval = HtildeEvaluator::new(&model.basis, &model.theta, model.basis.quad_points())?;
    Ok(eval.eval(t))
}

/// The limit matrix Sigma of the scaled information per period.
///
/// Top-left block nu I_p (exact under the basis normalization), borders
/// Lambda_j = int_0^nu phi_j h~ dt, corner int_0^nu h~^2 dt + nu sigma^2/(2 alpha).
pub fn sigma_matrix(model: &ModelSpec) -> Result<DMatrix<f64>> {
    if !model.basis.is_orthonormal() {
        return Err(Error::InvalidConfig(
            "sigma_matrix requires an orthonormalized basis".into(),
        ));
    }
    model.theta.require_positive_alpha()?;
    let p = model.basis.count();
    let nu = model.basis.period();
    let mq = model.basis.quad_points();
    let h = HtildeEvaluator::new(&model.basis, &model.theta, mq)?;
    let mut sigma = DMatrix::zeros(p + 1, p + 1);
    for j in 0..p {
        sigma[(j, j)] = nu;
        let lambda = quad::integrate(|t| model.basis.eval(j, t) * h.eval(t), 0.0, nu, mq);
        sigma[(j, p)] = lambda;
        sigma[(p, j)] = lambda;
    }
    let omega = quad::integrate(|t| h.eval(t) * h.eval(t), 0.0, nu, mq)
        + nu * model.sigma * model.sigma / (2.0 * model.theta.alpha);
    sigma[(p, p)] = omega;
    Ok(sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const QP: usize = 512;

    fn const_model(mu: f64, alpha: f64, sigma: f64, nu: f64) -> ModelSpec {
        let basis = PeriodicBasis::fourier(nu, 1, QP).unwrap();
        ModelSpec::new(basis, DriftParams::new(vec![mu], alpha), sigma, InitPolicy::Fixed(0.0))
            .unwrap()
    }

    #[test]
    fn mean_reversion_examples() {
        let basis = PeriodicBasis::fourier(1.0, 1, QP).unwrap();
        assert_eq!(eval_mean_reversion(&basis, &[3.0], 17.2).unwrap(), 3.0);

        let basis2 = PeriodicBasis::fourier(1.0, 2, QP).unwrap();
        let v = eval_mean_reversion(&basis2, &[1.0, 1.0], 0.0).unwrap();
        assert_relative_eq!(v, 1.0 + std::f64::consts::SQRT_2, max_relative = 1e-15);

        assert_eq!(eval_mean_reversion(&basis2, &[0.0, 0.0], 0.37).unwrap(), 0.0);
        assert!(matches!(
            eval_mean_reversion(&basis2, &[1.0], 0.0),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn mean_reversion_is_bitwise_periodic_on_dyadic_grid() {
        let basis = PeriodicBasis::fourier(1.0, 3, QP).unwrap();
        let mu = [0.7, -1.1, 0.4];
        for i in 0..512 {
            let t = i as f64 / 256.0;
            let a = eval_mean_reversion(&basis, &mu, t).unwrap();
            let b = eval_mean_reversion(&basis, &mu, t + 1.0).unwrap();
            assert_eq!(a, b, "t={t}");
        }
    }

    #[test]
    fn h_tilde_constant_level_is_mu_over_alpha() {
        let model = const_model(3.0, 1.5, 0.3, 2.0);
        for t in [0.0, 0.3, 1.9, 7.25] {
            assert_relative_eq!(h_tilde(&model, t).unwrap(), 2.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn h_tilde_matches_analytic_trig_solution() {
        // L(t) = sqrt(2) cos(2 pi t), alpha = 1, nu = 1: the periodic solution
        // of h' = L - h is sqrt(2) (cos(2 pi t) + 2 pi sin(2 pi t)) / (1 + 4 pi^2).
        let basis = PeriodicBasis::fourier(1.0, 2, QP).unwrap();
        let theta = DriftParams::new(vec![0.0, 1.0], 1.0); // component 1 is the cosine
        let model = ModelSpec::new(basis, theta, 0.2, InitPolicy::Stationary).unwrap();
        let tau = 2.0 * std::f64::consts::PI;
        let reference = |t: f64| {
            std::f64::consts::SQRT_2 * ((tau * t).cos() + tau * (tau * t).sin()) / (1.0 + tau * tau)
        };
        for t in [0.0, 0.25, 0.5] {
            assert_relative_eq!(h_tilde(&model, t).unwrap(), reference(t), max_relative = 1e-10, epsilon = 1e-12);
        }
        // Frozen spot value guards against silent changes in the quadrature.
        assert_relative_eq!(
            h_tilde(&model, 0.0).unwrap(),
            0.034937471523611575,
            max_relative = 1e-12
        );
    }

    #[test]
    fn h_tilde_is_periodic() {
        let basis = PeriodicBasis::fourier(1.5, 3, QP).unwrap();
        let theta = DriftParams::new(vec![0.5, -1.0, 0.25], 0.8);
        let h = HtildeEvaluator::new(&basis, &theta, QP).unwrap();
        for i in 0..16 {
            let t = i as f64 * 1.5 / 16.0;
            assert_relative_eq!(h.eval(t), h.eval(t + 1.5), max_relative = 1e-11, epsilon = 1e-13);
            assert_relative_eq!(h.eval(t), h.eval(t - 1.5), max_relative = 1e-11, epsilon = 1e-13);
        }
    }

    #[test]
    fn h_tilde_solves_the_ode() {
        let basis = PeriodicBasis::fourier(1.0, 3, 1024).unwrap();
        let theta = DriftParams::new(vec![1.0, 0.5, -0.7], 2.0);
        let h = HtildeEvaluator::new(&basis, &theta, 1024).unwrap();
        let level = |t: f64| eval_mean_reversion(&basis, &theta.mu, t).unwrap();
        let delta = 1e-5;
        for i in 1..20 {
            let t = i as f64 / 20.0;
            let deriv = (h.eval(t + delta) - h.eval(t - delta)) / (2.0 * delta);
            let rhs = level(t) - theta.alpha * h.eval(t);
            assert!(
                (deriv - rhs).abs() < 1e-6,
                "ODE residual {} at t={t}",
                (deriv - rhs).abs()
            );
        }
    }

    #[test]
    fn h_tilde_is_stable_for_stiff_alpha() {
        // alpha * nu = 500: naive unshifted exponentials overflow well before
        // this point; the shifted form must stay finite and near L/alpha.
        let model = const_model(2.0, 500.0, 0.1, 1.0);
        let v = h_tilde(&model, 0.6).unwrap();
        assert!(v.is_finite());
        assert_relative_eq!(v, 2.0 / 500.0, max_relative = 1e-9);
    }

    #[test]
    fn sigma_matrix_constant_basis_closed_form() {
        let (mu, alpha, sigma, nu) = (3.0, 1.5, 0.5, 2.0);
        let model = const_model(mu, alpha, sigma, nu);
        let s = sigma_matrix(&model).unwrap();
        assert_relative_eq!(s[(0, 0)], nu, max_relative = 1e-12);
        assert_relative_eq!(s[(0, 1)], nu * mu / alpha, max_relative = 1e-10);
        assert_relative_eq!(s[(1, 0)], nu * mu / alpha, max_relative = 1e-10);
        assert_relative_eq!(
            s[(1, 1)],
            nu * mu * mu / (alpha * alpha) + nu * sigma * sigma / (2.0 * alpha),
            max_relative = 1e-10
        );
    }

    #[test]
    fn sigma_matrix_zero_level_is_diagonal() {
        let basis = PeriodicBasis::fourier(1.0, 3, QP).unwrap();
        let model = ModelSpec::new(
            basis,
            DriftParams::new(vec![0.0; 3], 2.0),
            0.4,
            InitPolicy::Stationary,
        )
        .unwrap();
        let s = sigma_matrix(&model).unwrap();
        for j in 0..3 {
            assert_relative_eq!(s[(j, j)], 1.0, max_relative = 1e-12);
            assert!(s[(j, 3)].abs() < 1e-12);
        }
        assert_relative_eq!(s[(3, 3)], 0.4 * 0.4 / 4.0, max_relative = 1e-12);
    }

    #[test]
    fn sigma_matrix_is_symmetric_positive_definite() {
        let basis = PeriodicBasis::fourier(1.0, 2, QP).unwrap();
        let model = ModelSpec::new(
            basis,
            DriftParams::new(vec![1.0, 0.5], 1.0),
            0.2,
            InitPolicy::Stationary,
        )
        .unwrap();
        let s = sigma_matrix(&model).unwrap();
        for j in 0..3 {
            for k in 0..3 {
                assert_eq!(s[(j, k)], s[(k, j)]);
            }
        }
        assert!(
            nalgebra::Cholesky::new(s).is_some(),
            "Sigma must be positive definite"
        );
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let basis = PeriodicBasis::fourier(1.0, 1, QP).unwrap();
        let model = ModelSpec::new(
            basis.clone(),
            DriftParams::new(vec![1.0], -1.0),
            0.2,
            InitPolicy::Stationary,
        )
        .unwrap();
        assert!(matches!(
            h_tilde(&model, 0.0),
            Err(Error::NonpositiveAlpha { .. })
        ));
        assert!(matches!(
            ModelSpec::new(
                basis.clone(),
                DriftParams::new(vec![1.0], 1.0),
                -0.5,
                InitPolicy::Stationary
            ),
            Err(Error::NonpositiveSigma { .. })
        ));
        assert!(matches!(
            ModelSpec::new(
                basis,
                DriftParams::new(vec![1.0, 2.0], 1.0),
                0.5,
                InitPolicy::Stationary
            ),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
