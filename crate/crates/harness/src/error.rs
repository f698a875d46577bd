use thiserror::Error;

/// A core error tagged with the pipeline stage it came from.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: adcsd::Error,
    },

    #[error("{0}")]
    Usage(String),

    #[error("report: {0}")]
    Report(String),

    /// A verification check ran to completion and found a violation.
    #[error("{0}")]
    Violation(String),
}

impl HarnessError {
    pub fn usage(msg: impl Into<String>) -> Self {
        HarnessError::Usage(msg.into())
    }

    /// 0 success, 1 usage/config, 2 data/parse, 3 numerical contract violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Stage { source, .. } => source.exit_code(),
            HarnessError::Usage(_) => 1,
            HarnessError::Report(_) => 2,
            HarnessError::Violation(_) => 3,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

/// Attaches a stage name to core results.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for adcsd::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|source| HarnessError::Stage { stage, source })
    }
}
