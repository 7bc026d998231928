use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("point ({lat}, {lon}) lies outside the grid")]
    OutOfGrid { lat: f64, lon: f64 },

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("architecture mismatch: {0}")]
    Architecture(String),

    #[error("non-finite value during training: {0}")]
    NonFinite(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("episode already finished at t = {0} s")]
    EpisodeDone(f64),

    #[error("region contains no grid cells")]
    EmptyRegion,

    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier used in the CLI's JSON error output and FFI error codes.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::OutOfGrid { .. } => "out_of_grid",
            Error::Domain(_) => "domain",
            Error::Shape { .. } => "shape",
            Error::Architecture(_) => "architecture",
            Error::NonFinite(_) => "non_finite",
            Error::Config(_) => "config",
            Error::MissingColumn(_) => "missing_column",
            Error::EpisodeDone(_) => "episode_done",
            Error::EmptyRegion => "empty_region",
            Error::FormatVersion { .. } => "format_version",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
