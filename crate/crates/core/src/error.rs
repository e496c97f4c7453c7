use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {index} out of range for {len} agents")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid block layout: {0}")]
    InvalidLayout(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("coordinate {coordinate} = {value} lies outside its box [{lo}, {hi}]")]
    OutsideBox {
        coordinate: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("agent {0} cannot deliver to itself")]
    SelfDelivery(usize),

    #[error("reference solver hit the iteration cap ({iterations}) with residual {residual:e}")]
    IterationCap { iterations: u64, residual: f64 },

    #[error("malformed event log: {0}")]
    MalformedLog(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed trace file: {0}")]
    Trace(String),

    #[error("report: {0}")]
    Report(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
