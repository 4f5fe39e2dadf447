use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid coefficient at probe {probe}: {detail}")]
    InvalidCoefficient { probe: String, detail: String },

    #[error("mollification failed: {0}")]
    Mollification(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("ellipticity violated: {0}")]
    Ellipticity(String),

    #[error("iteration diverged after {iterations} iterations (last residual {residual:e})")]
    Divergence { iterations: usize, residual: f64 },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("insufficient sample: {got} paths, need at least {need}")]
    InsufficientSample { got: usize, need: usize },

    #[error("Girsanov weight overflow on path {path}")]
    WeightOverflow { path: usize },

    #[error("target {target} lies outside the nodal interval [{lower}, {upper}]")]
    OutOfNodalSet { target: f64, lower: f64, upper: f64 },

    #[error("degenerate sigma: {0} <= 0")]
    DegenerateSigma(f64),

    #[error("unknown problem id `{0}`")]
    UnknownProblem(String),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, msg: msg.into() }
    }
}
