//! Error type shared across the crate.
//!
//! Variants are grouped by origin: configuration/domain errors (bad inputs,
//! dimension mismatches), numerical failures (singular statistics, dependent
//! basis functions), and I/O. [`Error::is_numerical`] distinguishes the
//! numerical group so callers can map failures to distinct exit codes.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// Coefficient vector length does not match the basis dimension.
    DimensionMismatch { expected: usize, got: usize },
    /// Gram-Schmidt residual fell below threshold: inputs are linearly dependent.
    DependentBasis { index: usize, residual: f64 },
    /// Mean-reversion rate must be strictly positive for the requested operation.
    NonpositiveAlpha { alpha: f64 },
    /// Diffusion coefficient must be strictly positive for the requested operation.
    NonpositiveSigma { sigma: f64 },
    /// Step size is nonpositive or does not divide the horizon.
    InvalidStep { dt: f64, horizon: f64 },
    /// Requested time does not lie on the sample grid.
    SegmentOffGrid { t: f64 },
    /// Segment contains no increments.
    EmptySegment,
    /// Summary segments must abut to be merged without re-summation.
    NonAdjacentSegments { end: f64, start: f64 },
    /// Path has too few points for the requested statistic.
    DegeneratePath { points: usize },
    /// Information matrix is singular or numerically unusable.
    SingularStats { cond: f64 },
    /// Fewer than three candidate changepoints survived the validity gates.
    GridTooCoarse { valid: usize },
    /// Scan window is empty or escapes the open unit interval.
    WindowInvalid { s1: f64, s2: f64 },
    /// Horizon too short for the extreme-value approximation (requires T/nu > e^e).
    HorizonTooShort { ratio: f64 },
    /// Test level outside its admissible range.
    InvalidLevel { level: f64 },
    /// Probability argument outside (0, 1).
    InvalidProbability { q: f64 },
    /// Monte Carlo sample size below the supported minimum.
    InsufficientReplicates { got: usize, min: usize },
    /// Catch-all for malformed configuration.
    InvalidConfig(String),
    Io(std::io::Error),
    Json(serde_json::Error),
}

impl Error {
    /// True for failures of floating-point conditioning rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularStats { .. } | Error::DependentBasis { .. }
        )
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Error::DependentBasis { index, residual } => write!(
                f,
                "basis function {index} is linearly dependent on its predecessors \
                 (residual norm {residual:.3e})"
            ),
            Error::NonpositiveAlpha { alpha } => {
                write!(f, "mean-reversion rate must be positive, got {alpha}")
            }
            Error::NonpositiveSigma { sigma } => {
                write!(f, "diffusion coefficient must be positive, got {sigma}")
            }
            Error::InvalidStep { dt, horizon } => write!(
                f,
                "step {dt} is not a positive divisor of the horizon {horizon}"
            ),
            Error::SegmentOffGrid { t } => {
                write!(f, "time {t} does not lie on the sample grid")
            }
            Error::EmptySegment => write!(f, "segment contains no increments"),
            Error::NonAdjacentSegments { end, start } => write!(
                f,
                "segments are not adjacent: first ends at {end}, second starts at {start}"
            ),
            Error::DegeneratePath { points } => {
                write!(f, "path with {points} points is too short")
            }
            Error::SingularStats { cond } => write!(
                f,
                "information matrix is singular or ill-conditioned (cond {cond:.3e})"
            ),
            Error::GridTooCoarse { valid } => write!(
                f,
                "only {valid} candidate changepoints survived the validity gates (need >= 3)"
            ),
            Error::WindowInvalid { s1, s2 } => {
                write!(f, "invalid scan window [{s1}, {s2}]")
            }
            Error::HorizonTooShort { ratio } => write!(
                f,
                "horizon/period ratio {ratio} too small for extreme-value norming \
                 (requires ratio > e^e ~ 15.154)"
            ),
            Error::InvalidLevel { level } => {
                write!(f, "test level must lie in (0, 1], got {level}")
            }
            Error::InvalidProbability { q } => {
                write!(f, "probability must lie in (0, 1), got {q}")
            }
            Error::InsufficientReplicates { got, min } => {
                write!(f, "need at least {min} replicates, got {got}")
            }
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Json(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}
