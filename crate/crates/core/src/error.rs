//! Error type shared across the registration pipeline.

use thiserror::Error;

/// Errors surfaced by geometry, indexing, and solver routines.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A point projected with nonpositive depth; the pinhole model is
    /// undefined there.
    #[error("point is behind the camera (depth {depth:.3e} <= {min:.0e})")]
    BehindCamera { depth: f64, min: f64 },

    /// Rotation angle too close to pi for a stable logarithm.
    #[error("rotation angle {angle:.9} rad is within 1e-6 of the cut locus at pi")]
    CutLocus { angle: f64 },

    /// An operation that needs target points received none.
    #[error("target point set is empty")]
    EmptyTargetSet,

    /// An operation that needs source points received none.
    #[error("source point set is empty")]
    EmptySourceSet,

    /// A configuration value is out of its documented range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The normal equations stayed singular after repeated damping
    /// escalations, or every point fell behind the camera.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// Subset selection could not produce the minimum number of points.
    #[error("subset selection needs at least {needed} candidate points, got {got}")]
    InsufficientSubset { needed: usize, got: usize },

    /// The depth-to-lateral ratio of the point set is too small for the
    /// rotation/translation duality analysis.
    #[error("depth-to-lateral ratio {ratio:.3} is below the minimum {min:.2}")]
    DepthRatio { ratio: f64, min: f64 },

    /// A point or pose file could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
