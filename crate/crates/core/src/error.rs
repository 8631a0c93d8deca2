use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid too small: need at least 3 cells per axis, got {nx}x{ny}")]
    GridTooSmall { nx: usize, ny: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field length {got} does not match grid node count {expected}")]
    FieldLength { expected: usize, got: usize },

    #[error("field contains a non-finite value at node {0}")]
    NonFiniteField(usize),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("degenerate variance {0}: must be strictly positive")]
    DegenerateVariance(f64),

    #[error("stability bound violated: {0}")]
    StabilityViolation(String),

    #[error("solver produced a non-finite density after step {step}")]
    NonFiniteState { step: usize },

    #[error("snapshot times are not compatible with dt: {0}")]
    NotMultipleOfDt(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("operation requires a network with scalar output, got width {0}")]
    RequiresScalarOutput(usize),

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite loss at epoch {epoch}, step {step}: {loss}")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },

    #[error("conjugate gradient did not converge: relative residual {residual:e} after {iterations} iterations")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("right-hand side is incompatible with the Neumann problem (relative correction {0:e})")]
    IncompatibleRhs(f64),

    #[error("unknown benchmark '{0}'")]
    UnknownBenchmark(String),

    #[error("reference field is identically zero")]
    ZeroReference,

    #[error("format version mismatch: {0}")]
    FormatVersionMismatch(String),

    #[error("checksum mismatch: stored {stored:016x}, computed {computed:016x}")]
    ChecksumMismatch { stored: u64, computed: u64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    /// Stable machine-readable category, used by the CLI for its error line
    /// and exit code.
    pub fn category(&self) -> &'static str {
        match self {
            Error::GridTooSmall { .. }
            | Error::InvalidGrid(_)
            | Error::FieldLength { .. }
            | Error::NonFiniteField(_)
            | Error::GridMismatch => "grid",
            Error::DegenerateVariance(_)
            | Error::StabilityViolation(_)
            | Error::NonFiniteState { .. }
            | Error::NotMultipleOfDt(_) => "solver",
            Error::Precondition(_) => "precondition",
            Error::DimensionMismatch { .. } | Error::RequiresScalarOutput(_) => "network",
            Error::EmptyBatch | Error::NonFiniteLoss { .. } => "training",
            Error::SolverDiverged { .. } | Error::IncompatibleRhs(_) => "oracle",
            Error::UnknownBenchmark(_) | Error::Config(_) => "config",
            Error::ZeroReference => "eval",
            Error::FormatVersionMismatch(_) | Error::ChecksumMismatch { .. } => "format",
            Error::Io(_) => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 2,
            "io" => 3,
            "format" => 4,
            "grid" | "network" | "precondition" => 5,
            "solver" => 6,
            "training" => 7,
            "oracle" => 8,
            "eval" => 9,
            _ => 1,
        }
    }
}
