use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("empty point set")]
    EmptyPointSet,
    #[error("degenerate simplex")]
    Degenerate,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("projection search failed: {0}")]
    ProjectionFailed(String),
    #[error("not an immersion here: {0}")]
    NotImmersion(String),
    #[error("direction is not normal: tangential component {0:.3e}")]
    NotNormal(f64),
    #[error("point is not a projection of the query: {0}")]
    NotAProjection(String),
    #[error("osculating or nearly osculating (1 - lambda_max = {0:.3e})")]
    NearlyOsculating(f64),
    #[error("newton diverged: {0}")]
    Diverged(String),
    #[error("cloud of {size} points exceeds the limit of {limit}")]
    SizeGuard { size: usize, limit: usize },
    #[error("classification requires P1-P4")]
    RequiresConditions,
    #[error("intrinsic dim 0")]
    IntrinsicDimZero,
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;
