use thiserror::Error;

/// Errors raised by the simulator, diagnostics and I/O layers.
#[derive(Debug, Error)]
pub enum KsnsError {
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("not supported: {0}")]
    NotSupported(String),
    #[error("poisson right-hand side has nonzero mean (|k=0 coefficient| = {0:e})")]
    MeanNotZero(f64),
    #[error("argument out of domain: {0}")]
    OutOfDomain(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("numerical breakdown at step {step} (t = {t}): {what}")]
    NumericalBreakdown { step: usize, t: f64, what: String },
    #[error("time step {dt:e} fell below dt_min = {dt_min:e}")]
    DtUnderflow { dt: f64, dt_min: f64 },
    #[error("invalid exponent p = {0}")]
    InvalidExponent(f64),
    #[error("state is flagged (negative undershoot) and cannot be used here")]
    StaleState,
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("wrong model: {0}")]
    WrongModel(String),
    #[error("invalid series: {0}")]
    InvalidSeries(String),
    #[error("scaled run did not complete: {0}")]
    ScaledRunFailed(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = KsnsError> = std::result::Result<T, E>;
