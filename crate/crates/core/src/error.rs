use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the range the operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    /// The Gram matrix of the steering block cannot be inverted reliably.
    #[error("steering block is ill-conditioned (condition number {0:.3e})")]
    IllConditioned(f64),

    /// More columns, measurements or supports were requested than available.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// The least-squares refit hit a rank-deficient column set.
    #[error("degenerate recovery problem: {0}")]
    Degenerate(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
