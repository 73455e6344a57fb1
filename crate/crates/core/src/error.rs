use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    /// Every validation problem found, not just the first.
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("internal invariant breached: {0}")]
    Invariant(String),
    #[error("no grid point meets SLO attainment target {target}")]
    SweepInfeasible { target: f64 },
}

impl SimError {
    pub fn config(msg: impl Into<String>) -> Self {
        SimError::Config(vec![msg.into()])
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code for this failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Config(_) => 1,
            SimError::SweepInfeasible { .. } => 2,
            SimError::Io { .. } => 3,
            SimError::Invariant(_) => 4,
        }
    }
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
