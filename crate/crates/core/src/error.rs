use std::io;

use thiserror::Error;

/// Errors raised anywhere in the lab. The variants map one-to-one onto the
/// C error codes exported by the FFI crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed caller input: out-of-range symbol ids, bad histories, bad positions.
    #[error("input error: {0}")]
    Input(String),

    /// An LM or estimator specification that cannot be honored.
    #[error("spec error: {0}")]
    Spec(String),

    /// A request that would exceed a configured size cap.
    #[error("resource error: {0}")]
    Resource(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    /// Two artifacts that should line up do not (score files, corpora, retries).
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("training error: {0}")]
    Training(String),

    /// The history chain never reaches EOS, so expected visit counts diverge.
    #[error("divergence error: {0}")]
    Divergence(String),

    #[error("degenerate column `{0}`: fewer than two distinct values")]
    DegenerateColumn(String),

    #[error("design matrix is rank deficient; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
