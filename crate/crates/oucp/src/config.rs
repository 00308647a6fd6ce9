//! Serializable model and basis configuration.
//!
//! These are the JSON-facing companions of the in-memory types in `basis`
//! and `model`; `build` methods validate and construct the runtime objects.
//! Tabulated bases are orthonormalized during `build`, so anything
//! constructed from a config is ready for the estimation routines.

use serde::{Deserialize, Serialize};

use crate::basis::PeriodicBasis;
use crate::error::Result;
use crate::model::{DriftParams, InitPolicy, ModelSpec};
use crate::quad::DEFAULT_QUAD_POINTS;

fn default_quad_points() -> usize {
    DEFAULT_QUAD_POINTS
}

/// Basis family selector.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum BasisFamily {
    /// 1, sqrt(2) cos(2 pi k t / nu), sqrt(2) sin(2 pi k t / nu), ...
    Fourier { count: usize },
    /// Periodic cubic-spline interpolants of uniformly spaced samples over
    /// one period (one inner list per basis function).
    Tabulated { samples: Vec<Vec<f64>> },
}

/// JSON description of a periodic basis.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BasisConfig {
    pub period: f64,
    #[serde(default = "default_quad_points")]
    pub quad_points: usize,
    #[serde(flatten)]
    pub family: BasisFamily,
}

impl BasisConfig {
    /// Construct the basis; tabulated families are orthonormalized.
    pub fn build(&self) -> Result<PeriodicBasis> {
        match &self.family {
            BasisFamily::Fourier { count } => {
                PeriodicBasis::fourier(self.period, *count, self.quad_points)
            }
            BasisFamily::Tabulated { samples } => {
                PeriodicBasis::from_samples(self.period, samples.clone(), self.quad_points)?
                    .orthonormalize()
            }
        }
    }
}

/// Initial-condition selector; defaults to the stationary draw.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Default)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum InitConfig {
    #[default]
    Stationary,
    Fixed {
        value: f64,
    },
}

impl InitConfig {
    pub fn policy(&self) -> InitPolicy {
        match *self {
            InitConfig::Stationary => InitPolicy::Stationary,
            InitConfig::Fixed { value } => InitPolicy::Fixed(value),
        }
    }
}

/// JSON description of the full generative model.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub basis: BasisConfig,
    pub mu: Vec<f64>,
    pub alpha: f64,
    pub sigma: f64,
    #[serde(default)]
    pub init: InitConfig,
}

impl ModelConfig {
    pub fn build(&self) -> Result<ModelSpec> {
        ModelSpec::new(
            self.basis.build()?,
            DriftParams::new(self.mu.clone(), self.alpha),
            self.sigma,
            self.init.policy(),
        )
    }
}
