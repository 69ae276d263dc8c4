use thiserror::Error;

#[derive(Debug, Error, Clone)]
pub enum Error {
    #[error("grid extent {extent} is not an integer multiple of dx = {dx}")]
    NonIntegerCells { extent: f64, dx: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: String, right: String },

    #[error("window [{lo}, {hi}] is not aligned with the cell boundaries of {grid}")]
    MisalignedWindow { lo: f64, hi: f64, grid: String },

    #[error("non-finite value {value} in cell {cell}")]
    NonFinite { cell: usize, value: f64 },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("kernel width must be positive, got H = {0}")]
    NonPositiveWidth(f64),

    #[error("convolution needs {required} ghost cells on the right, only {available} available")]
    InsufficientGhosts { required: usize, available: usize },

    #[error("CFL violation: h = {h} at cell {cell}")]
    CflViolation { cell: usize, h: f64 },

    #[error("time step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid scheme configuration: {0}")]
    InvalidScheme(String),

    #[error("invalid speed law: {0}")]
    InvalidSpeed(String),

    #[error("query out of range: {0}")]
    OutOfRange(String),

    #[error("trajectory is not stored at every step (store_every = {0})")]
    IncompleteTrajectory(usize),

    #[error("invalid objective: {0}")]
    InvalidObjective(String),

    #[error("invalid optimizer configuration: {0}")]
    InvalidOptimizer(String),

    #[error("optimization aborted after {} iterations: {source}", .report.iterations)]
    Aborted {
        report: Box<crate::optimize::OptimizationReport>,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid study: {0}")]
    InvalidStudy(String),
}

pub type Result<T> = std::result::Result<T, Error>;
