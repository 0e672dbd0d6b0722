use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    /// A conserving term of degree six or more survived normal ordering, so the
    /// operator's expectation value needs more than the 2-RDM.
    #[error("operator is not two-body reducible: term {term} survives with |coefficient| = {magnitude:.3e}")]
    NotTwoBodyReducible { term: String, magnitude: f64 },

    #[error("resource cap exceeded: {0}")]
    Resource(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
