use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid annulus: inner radius {inner} must be positive and below outer radius {outer}")]
    InvalidAnnulus { inner: f64, outer: f64 },

    #[error("circle of radius {radius} around ({x}, {y}) leaves the grid window")]
    CircleOutsideWindow { x: f64, y: f64, radius: f64 },

    #[error("radius {radius} is below twice the mesh spacing {spacing}")]
    RadiusTooSmall { radius: f64, spacing: f64 },

    #[error("margin {margin} leaves an empty window")]
    EmptyWindow { margin: f64 },

    #[error("invalid LQG parameters: {0}")]
    InvalidParams(String),

    #[error("invalid sampler configuration: {0}")]
    InvalidSampler(String),

    #[error("support of radius {radius} around ({x}, {y}) leaves the grid window")]
    SupportOutsideWindow { x: f64, y: f64, radius: f64 },

    #[error("mollification scale {epsilon} is below the mesh spacing {spacing}")]
    EpsilonTooSmall { epsilon: f64, spacing: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("vertices {u} and {v} are not adjacent")]
    NotAdjacent { u: usize, v: usize },

    #[error("vertex {0} is outside the metric mask")]
    Masked(usize),

    #[error("empty vertex set: {0}")]
    EmptySet(&'static str),

    #[error("{0}")]
    NotSubset(&'static str),

    #[error("annulus ring is disconnected or does not surround the hole")]
    AnnulusRingDisconnected,

    #[error("point ({x}, {y}) is outside the domain of the map")]
    OutOfDomain { x: f64, y: f64 },

    #[error("point ({x}, {y}) is a critical point of the map")]
    CriticalPoint { x: f64, y: f64 },

    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("preimage ({x}, {y}) escapes the source window")]
    PreimageEscapes { x: f64, y: f64 },

    #[error("point ({x}, {y}) is outside the valid window")]
    OutOfWindow { x: f64, y: f64 },

    #[error("metric ball of radius {radius} reaches the window boundary")]
    BallEscapesWindow { radius: f64 },

    #[error("field container: {0}")]
    Format(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
