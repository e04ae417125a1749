use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("argument error: {0}")]
    Argument(String),
    #[error("contraction error: {0}")]
    Contract(String),
    #[error("size guard exceeded: {what} = {value} > {limit}")]
    Size {
        what: String,
        value: f64,
        limit: f64,
    },
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("linear algebra failure: {0}")]
    Linalg(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}

impl From<ndarray::ShapeError> for Error {
    fn from(e: ndarray::ShapeError) -> Self {
        Error::Contract(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}

pub(crate) fn guard(what: &str, value: f64, limit: f64) -> Result<()> {
    if value > limit {
        Err(Error::Size {
            what: what.to_string(),
            value,
            limit,
        })
    } else {
        Ok(())
    }
}
