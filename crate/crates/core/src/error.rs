use std::io;

use thiserror::Error;

/// Errors raised by grid construction, noise assembly, time stepping and studies.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("axis {axis}: index {index} outside 1..={max}")]
    IndexOutOfRange { axis: usize, index: usize, max: usize },

    #[error("point {0:?} lies outside [0,1]^d")]
    PointOutsideDomain(Vec<f64>),

    #[error("expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("field contains a non-finite value at flat index {0}")]
    NonFinite(usize),

    #[error("alpha = {alpha} violates 0 < alpha < min(2, d) = {bound} (d = {dim})")]
    InvalidAlpha { alpha: f64, dim: usize, bound: f64 },

    #[error("space-time white noise is only supported in dimension 1 (got d = {0})")]
    WhiteNoiseDimension(usize),

    #[error("covariance is not positive semidefinite: pivot {pivot:e} at cell {cell}")]
    Indefinite { pivot: f64, cell: usize },

    #[error("mesh {fine} is not a multiple of mesh {coarse}")]
    NonDivisibleMesh { fine: usize, coarse: usize },

    #[error("explicit scheme unstable: n^2 T/m = {ratio} exceeds q = {q} (need n^2 T/m <= q < 1/2)")]
    Stability { ratio: f64, q: f64 },

    #[error("non-finite value produced at time level {level}")]
    NumericalAbort { level: usize },

    #[error("{aborted} of {replicas} replicas aborted (limit 1%)")]
    TooManyAborts { aborted: usize, replicas: usize },

    #[error("regression: {0}")]
    Regression(String),

    #[error("quadrature did not converge (achieved relative tolerance {achieved:e})")]
    Quadrature { achieved: f64 },

    #[error("study: {0}")]
    Study(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed covariance file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
