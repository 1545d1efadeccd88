//! Crate-wide error type.
//!
//! Numerical failures carry enough context to diagnose them from a log:
//! solver failures keep a (downsampled) residual history, ellipticity
//! failures name the sample point, config errors name the offending key.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("unknown preset {name:?}; available presets: identity, laminate, smooth-checkerboard, full-lower-order")]
    UnknownPreset { name: String },

    #[error("not elliptic: smallest symmetric-part eigenvalue {eigenvalue:.6e} at y=({y1:.6},{y2:.6})")]
    NotElliptic { y1: f64, y2: f64, eigenvalue: f64 },

    #[error("ellipticity upper bound violated: largest symmetric-part eigenvalue {eigenvalue:.6e} exceeds 1/mu = {bound:.6e} at y=({y1:.6},{y2:.6})")]
    EllipticityUpperBound {
        y1: f64,
        y2: f64,
        eigenvalue: f64,
        bound: f64,
    },

    #[error("effective tensor is not elliptic: smallest symmetric-part eigenvalue {eigenvalue:.6e}")]
    EffectiveNotElliptic { eigenvalue: f64 },

    #[error("grid size {n} aliases the coefficients: need a power of two with N >= {required}")]
    Aliasing { n: usize, required: usize },

    #[error("grid mismatch: expected N={expected}, got N={found}")]
    GridMismatch { expected: usize, found: usize },

    #[error("{what}: mean {mean:.3e} exceeds {limit:.3e} (scale {scale:.3e}); right-hand side is not solvable on the torus")]
    MeanNotZero {
        what: String,
        mean: f64,
        limit: f64,
        scale: f64,
    },

    #[error("eps={eps} is not commensurate with the mesh: {detail}")]
    Commensurability { eps: f64, detail: String },

    #[error("{context}: no convergence after {iterations} iterations (relative residual {residual:.3e}); residual history (sampled): {history:?}")]
    SolveFailure {
        context: String,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("operator is not coercive: probe {probe:.3e} <= 0 at lambda={lambda}; increase lambda")]
    NotCoercive { lambda: f64, probe: f64 },

    #[error("no lambda in {{0,1,2,4,...,64}} reaches coercivity probe >= {threshold}; probes: {probes:?}")]
    LambdaSearchFailed {
        threshold: f64,
        probes: Vec<(f64, f64)>,
    },

    #[error("invariant violated: {0}")]
    InvariantViolated(String),

    #[error("cache: {0}")]
    Cache(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
