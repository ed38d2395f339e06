use std::path::PathBuf;

use tdprobe_core::analysis::AnalysisError;
use tdprobe_core::behavior_fit::FitError;
use tdprobe_core::interventions::InterventionError;
use tdprobe_core::sae::SaeError;
use tdprobe_core::store::StoreError;
use tdprobe_core::synth::SynthError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("dependency error: {0}")]
    Dependency(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Dependency(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Io { .. } | CliError::Other(_) => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            StoreError::Io { path, source } => CliError::Io { path, source },
            other => CliError::Dependency(format!("unreadable artifact: {other}")),
        }
    }
}

impl From<SaeError> for CliError {
    fn from(e: SaeError) -> Self {
        match e {
            SaeError::Diverged { .. } | SaeError::NonFiniteInput { .. } | SaeError::AllZero => {
                CliError::Numerical(e.to_string())
            }
            SaeError::Config(_) => CliError::Config(e.to_string()),
            SaeError::Store(s) => s.into(),
            other => CliError::Dependency(other.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::StressIncrease { .. } | AnalysisError::ZeroMatrix | AnalysisError::ZeroRow(_) => {
                CliError::Numerical(e.to_string())
            }
            AnalysisError::Invalid(_) => CliError::Config(e.to_string()),
            other => CliError::Dependency(other.to_string()),
        }
    }
}

impl From<InterventionError> for CliError {
    fn from(e: InterventionError) -> Self {
        match e {
            InterventionError::Sae(s) => s.into(),
            InterventionError::Analysis(a) => a.into(),
            InterventionError::NonFinite => CliError::Numerical(e.to_string()),
            InterventionError::Misaligned(_) | InterventionError::MissingModel(_) => {
                CliError::Dependency(e.to_string())
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::ConstantSignal(_) => CliError::Numerical(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::Options(_) => CliError::Config(e.to_string()),
            other => CliError::Dependency(format!("unusable trajectory: {other}")),
        }
    }
}
