use thiserror::Error;

/// Errors raised anywhere in the risk pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("point ({lat}, {lon}) lies outside the region")]
    OutOfRegion { lat: f64, lon: f64 },

    #[error("cell index {cell} out of range for a grid of {cells} cells")]
    CellOutOfRange { cell: usize, cells: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty prior set: {0}")]
    EmptyPrior(&'static str),

    #[error("no series has a crime with a nonempty prior set")]
    NoEligibleCrime,

    #[error("non-finite gradient at iteration {iteration}: {detail}")]
    NonFiniteGradient { iteration: u64, detail: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("unknown series id {0}")]
    UnknownSeries(u32),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// Stable snake_case name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGeometry(_) => "invalid_geometry",
            Error::OutOfRegion { .. } => "out_of_region",
            Error::CellOutOfRange { .. } => "cell_out_of_range",
            Error::NonFinite(_) => "non_finite",
            Error::EmptyPrior(_) => "empty_prior",
            Error::NoEligibleCrime => "no_eligible_crime",
            Error::NonFiniteGradient { .. } => "non_finite_gradient",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::InvalidConfig(_) => "invalid_config",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::UnknownSeries(_) => "unknown_series",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Toml(_) => "toml",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
