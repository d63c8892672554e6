use thiserror::Error;

#[derive(Debug, Error)]
pub enum UnfoldError {
    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),
    #[error("point {point} lies outside the domain [{lo}, {hi}]")]
    OutOfDomain { point: f64, lo: f64, hi: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },
    #[error("spline order {0} too low for a curvature penalty (need >= 3)")]
    OrderTooLow(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("negative coefficient {value} at index {index}")]
    NegativeCoefficient { index: usize, value: f64 },
    #[error("quadrature did not converge: max relative change {change:.3e} at {nodes} nodes")]
    QuadratureNonConvergence { change: f64, nodes: usize },
    #[error("matrix is singular or not positive definite: {0}")]
    Singular(String),
    #[error("empty chain")]
    EmptyChain,
    #[error("bootstrap replicate {replicate} failed: {source}")]
    Replicate {
        replicate: usize,
        #[source]
        source: Box<UnfoldError>,
    },
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<UnfoldError>,
    },
    #[error("optimizer did not converge: {0}")]
    NonConvergence(String),
    #[error("malformed CSV at row {row}: {message}")]
    Csv { row: usize, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl UnfoldError {
    pub fn at_stage(self, stage: &'static str) -> Self {
        UnfoldError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn at_replicate(self, replicate: usize) -> Self {
        UnfoldError::Replicate {
            replicate,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, UnfoldError>;
