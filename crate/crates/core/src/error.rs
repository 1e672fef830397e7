use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("moment order {order} out of range 1..={i_max}")]
    MomentOrder { order: usize, i_max: usize },

    #[error("non-finite moment of order {0}")]
    NonFiniteMoment(usize),

    #[error("Gram matrix is not positive semidefinite (pivot {pivot} = {value:e})")]
    GramNotPsd { pivot: usize, value: f64 },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("polynomial index {index} outside 1..={rank}")]
    BasisIndex { index: usize, rank: usize },

    #[error("basis was built from a different model")]
    BasisModelMismatch,

    #[error("regression failed: {0}")]
    Regression(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("jump admissibility violated at {count} of {total} (path, step) points")]
    JumpCondition { count: usize, total: usize },

    #[error("CFL violation: dt = {dt:e} exceeds the stable bound {bound:e}")]
    Cfl { dt: f64, bound: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{}", format_config_errors(.0))]
    Config(Vec<ConfigError>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code: 1 for validation problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidModel(_)
            | Error::MomentOrder { .. }
            | Error::BasisIndex { .. }
            | Error::BasisModelMismatch
            | Error::InvalidArgument(_)
            | Error::Config(_)
            | Error::Io(_) => 1,
            _ => 2,
        }
    }
}

/// One located configuration problem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub section: String,
    pub key: String,
    pub reason: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.key.is_empty() {
            write!(f, "[{}]: {}", self.section, self.reason)
        } else {
            write!(f, "{}.{}: {}", self.section, self.key, self.reason)
        }
    }
}

fn format_config_errors(errors: &[ConfigError]) -> String {
    let lines: Vec<String> = errors.iter().map(|e| e.to_string()).collect();
    format!("scenario errors:\n  {}", lines.join("\n  "))
}
