use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error(transparent)]
    Core(#[from] cilab_core::Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    /// Some runs of a sweep failed; the rest were reported.
    #[error("{failed} of {total} runs failed")]
    PartialFailure { failed: usize, total: usize },
}

pub type LabResult<T> = Result<T, LabError>;

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 2 configuration or input, 3 numerical,
    /// 4 partial sweep failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Core(e) if e.is_numerical() => 3,
            LabError::PartialFailure { .. } => 4,
            _ => 2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(LabError::Config("x".into()).exit_code(), 2);
        assert_eq!(LabError::io("p", std::io::Error::other("gone")).exit_code(), 2);
        assert_eq!(
            LabError::Core(cilab_core::Error::NonFinite("loss".into())).exit_code(),
            3
        );
        assert_eq!(LabError::Core(cilab_core::Error::Config("bad".into())).exit_code(), 2);
        assert_eq!(LabError::PartialFailure { failed: 1, total: 3 }.exit_code(), 4);
    }
}
