use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("invalid field: {0}")]
    Field(String),
    #[error("invalid profile: {0}")]
    Profile(String),
    #[error("blow-up at t = {t}: {reason}")]
    BlowUp { t: f64, reason: String },
    #[error("characteristic seeded at {seed} left the grid at t = {t}")]
    PathExit { seed: f64, t: f64 },
    #[error("modulation failed at t = {t}: {reason}")]
    Modulation { t: f64, reason: String },
    #[error("weight construction failed: {0}")]
    Weight(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
