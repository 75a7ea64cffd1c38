use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),

    #[error("F'' is singular at t = {t} for {profile}")]
    SingularDerivative { profile: String, t: f64 },

    #[error("invalid condition: {0}")]
    InvalidCondition(String),

    #[error("resolution {resolution} out of range for {kind}")]
    Resolution { kind: &'static str, resolution: usize },

    #[error("incompatible input: {0}")]
    Incompatible(String),

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("Hessian of size {size} exceeds the cap of {cap}")]
    SizeCap { size: usize, cap: usize },

    #[error("map is not homothetic (k^2 = {k2:.6}, residual {residual:.3e})")]
    NotHomothetic { k2: f64, residual: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
