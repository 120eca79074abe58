use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid size: {0}")]
    InvalidSize(String),
    #[error("spectrum is not conjugate-symmetric (imaginary residue {residue:e})")]
    NonSymmetricSpectrum { residue: f64 },
    #[error("gaussian bandwidth must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("regularization weight must be at least 1e-8, got {0}")]
    NonPositiveLambda(f64),
    #[error("cache does not match gradient: {0}")]
    StaleCache(String),
    #[error("crop margin {margin} too large for side {m}")]
    MarginTooLarge { margin: usize, m: usize },
    #[error("dense oracle refused side {m} (limit {limit})")]
    TooLarge { m: usize, limit: usize },
    #[error("dense system is singular or not positive definite")]
    SingularSystem,
    #[error("objective evaluated to a non-finite value at coordinate {0}")]
    NonFiniteEvaluation(usize),
    #[error("degenerate rectangle: {0}")]
    DegenerateRect(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid range for {field}: [{lo}, {hi}]")]
    InvalidRange { field: &'static str, lo: f64, hi: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    DivergedLoss { epoch: usize, loss: f64 },
    #[error("missing ground truth file {0}")]
    MissingGroundTruth(PathBuf),
    #[error("{frames} frames but {rects} ground-truth rectangles")]
    FrameCountMismatch { frames: usize, rects: usize },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
