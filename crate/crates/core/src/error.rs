use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("network matrix is singular (|det| = {det:e})")]
    SingularNetworkMatrix { det: f64 },

    #[error("non-finite state component {index} at t = {t}")]
    NonFiniteState { index: usize, t: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid solver configuration: {0}")]
    InvalidSolveConfig(String),

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("dense solution has no steps")]
    EmptySolution,

    #[error("invalid input domain: {0}")]
    InvalidDomain(String),

    #[error("grid of {points} points exceeds the cap of {cap}")]
    GridTooLarge { points: u128, cap: usize },

    #[error("trajectory {id} failed: {source}")]
    TrajectoryFailed {
        id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("split `{split}` would contain no trajectories ({available} available)")]
    TooFewTrajectories { split: &'static str, available: usize },

    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format mismatch: {0}")]
    FormatVersionMismatch(String),

    #[error("checksum mismatch in {0}")]
    ChecksumMismatch(PathBuf),

    #[error("invalid layer dimensions: {0}")]
    InvalidDims(String),

    #[error("non-finite network input")]
    NonFiniteInput,

    #[error("non-finite loss{}", epoch.map(|e| format!(" at epoch {e}")).unwrap_or_default())]
    NonFiniteLoss { epoch: Option<usize> },

    #[error("all loss terms are disabled or empty")]
    AllTermsDisabled,

    #[error("optimizer diverged at epoch {epoch}: loss {loss:e} vs initial {initial:e}")]
    OptimizerDiverged { epoch: usize, loss: f64, initial: f64 },

    #[error("line search failed after {trials} trial steps")]
    LineSearchFailed { trials: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    /// Stable identifier of the variant, for machine-readable reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::SingularNetworkMatrix { .. } => "singular_network_matrix",
            Error::NonFiniteState { .. } => "non_finite_state",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidParams(_) => "invalid_params",
            Error::InvalidSolveConfig(_) => "invalid_solve_config",
            Error::StepSizeUnderflow { .. } => "step_size_underflow",
            Error::EmptySolution => "empty_solution",
            Error::InvalidDomain(_) => "invalid_domain",
            Error::GridTooLarge { .. } => "grid_too_large",
            Error::TrajectoryFailed { .. } => "trajectory_failed",
            Error::TooFewTrajectories { .. } => "too_few_trajectories",
            Error::InvalidRatios(_) => "invalid_ratios",
            Error::Io { .. } => "io_failure",
            Error::FormatVersionMismatch(_) => "format_mismatch",
            Error::ChecksumMismatch(_) => "checksum_mismatch",
            Error::InvalidDims(_) => "invalid_dims",
            Error::NonFiniteInput => "non_finite_input",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::AllTermsDisabled => "all_terms_disabled",
            Error::OptimizerDiverged { .. } => "optimizer_diverged",
            Error::LineSearchFailed { .. } => "line_search_failed",
            Error::EmptyBatch => "empty_batch",
            Error::Config { .. } => "config_error",
            Error::MissingArtifact(_) => "missing_artifact",
        }
    }

    /// Process exit status: 2 for configuration problems, 3 for missing or
    /// unreadable artifacts, 4 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. }
            | Error::InvalidParams(_)
            | Error::InvalidSolveConfig(_)
            | Error::InvalidDomain(_)
            | Error::GridTooLarge { .. }
            | Error::TooFewTrajectories { .. }
            | Error::InvalidRatios(_)
            | Error::InvalidDims(_)
            | Error::AllTermsDisabled
            | Error::DimensionMismatch { .. } => 2,
            Error::MissingArtifact(_)
            | Error::FormatVersionMismatch(_)
            | Error::ChecksumMismatch(_) => 3,
            Error::SingularNetworkMatrix { .. }
            | Error::NonFiniteState { .. }
            | Error::StepSizeUnderflow { .. }
            | Error::EmptySolution
            | Error::TrajectoryFailed { .. }
            | Error::NonFiniteInput
            | Error::NonFiniteLoss { .. }
            | Error::OptimizerDiverged { .. }
            | Error::LineSearchFailed { .. }
            | Error::EmptyBatch => 4,
            Error::Io { .. } => 1,
        }
    }
}
