use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    /// A forward value or gradient became NaN or infinite.
    #[error("numerical health failure in {op}: non-finite value at element {index}")]
    NumericalHealth { op: &'static str, index: usize },

    #[error("tape error: {0}")]
    Tape(String),

    #[error("link {link} vertex {vertex} ({lat}, {lon}) lies outside the grid extent")]
    OutOfBounds {
        link: String,
        vertex: usize,
        lat: f64,
        lon: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// Process exit code for the command-line surface.
    ///
    /// 2 = configuration, 3 = data, 4 = numerical health, 1 = anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_)
            | Error::Validation(_)
            | Error::OutOfBounds { .. }
            | Error::Csv(_)
            | Error::Checkpoint(_) => 3,
            Error::NumericalHealth { .. } => 4,
            Error::Stage { source, .. } => source.exit_code(),
            Error::Shape(_) | Error::Tape(_) | Error::Io(_) | Error::Json(_) => 1,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
