use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("simulation failed at t = {time}: {reason}")]
    Simulation { time: f64, reason: String },
    #[error("singular least-squares design: column `{column}` is not identifiable")]
    Singular { column: String },
    #[error("estimation failed: {0}")]
    Estimation(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("missing inputs: {0}")]
    MissingInputs(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
