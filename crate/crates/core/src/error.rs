use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid interval ({left}, {right})")]
    InvalidInterval { left: f64, right: f64 },

    #[error("invalid diffeomorphism: {0}")]
    InvalidDiffeomorphism(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("eigensolver did not converge for index {index} after {iterations} iterations")]
    EigenNoConvergence { index: usize, iterations: usize },

    #[error("spectral gap condition fails for m = {m}: gap {gap} vs threshold {threshold}, lambda_m {lambda_m} vs L {lipschitz}")]
    GapViolation {
        m: usize,
        gap: f64,
        threshold: f64,
        lambda_m: f64,
        lipschitz: f64,
    },

    #[error("integration unstable at t = {t}: coefficient magnitude {magnitude:e} exceeds guard")]
    Unstable { t: f64, magnitude: f64 },

    #[error("Lyapunov-Perron iteration did not contract within {iterations} iterations (last change {last_change:e}, ratios {ratios:?})")]
    NoContraction {
        iterations: usize,
        last_change: f64,
        ratios: Vec<f64>,
    },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("enumeration cap exceeded: |X| = {x}, |Y| = {y}, cap {cap}")]
    EnumerationCap { x: usize, y: usize, cap: usize },

    #[error("invalid metric space: {0}")]
    InvalidMetric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O failure at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV failure: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON failure: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
