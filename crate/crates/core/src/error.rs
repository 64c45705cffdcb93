use crate::types::TokenId;

/// Errors raised across the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("token {token} has non-positive probability {prob}")]
    NonPositiveProbability { token: TokenId, prob: f64 },

    #[error("probabilities sum to {sum}, expected 1")]
    SumNotOne { sum: f64 },

    #[error("distribution has empty support")]
    EmptySupport,

    #[error("ensemble is empty")]
    EmptyEnsemble,

    #[error("histogram is empty")]
    EmptyHistogram,

    #[error("thresholds must satisfy low < high, got low={low} high={high}")]
    BadThresholds { low: i64, high: i64 },

    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),

    #[error("epsilon must be positive, got {0}")]
    NonPositiveEps(f64),

    #[error("teacher {0} is not live")]
    NotLive(usize),

    #[error("teacher {teacher} out of range for ensemble of {n}")]
    UnknownTeacher { teacher: usize, n: usize },

    #[error("no live teachers remain")]
    NoLiveTeachers,

    #[error("provider failure: {0}")]
    ProviderFailure(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
