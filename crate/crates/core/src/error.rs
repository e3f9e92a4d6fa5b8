use std::io;
use std::path::PathBuf;

use crate::forward::StabilityReport;

pub type Result<T, E = TsfError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum TsfError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "explicit scheme is unstable: CFL factor {:.4} exceeds 1 (reduce dt or the diffusivity bound)",
        .0.cfl_factor
    )]
    Unstable(StabilityReport),

    #[error("frame/step mismatch: {0}")]
    FrameMismatch(String),

    #[error("optimization diverged at epoch {epoch}: loss is not finite, lower the learning rate")]
    Divergence { epoch: usize },

    #[error("format error in {context}: {message}")]
    Format { context: String, message: String },

    #[error("training failed: {0}")]
    Training(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl TsfError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        TsfError::InvalidArgument(msg.into())
    }

    pub(crate) fn format(context: impl Into<String>, message: impl Into<String>) -> Self {
        TsfError::Format {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        TsfError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end:
    /// 2 for data/format problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            TsfError::Unstable(_) | TsfError::Divergence { .. } | TsfError::Training(_) => 3,
            TsfError::InvalidArgument(_)
            | TsfError::FrameMismatch(_)
            | TsfError::Format { .. }
            | TsfError::Io { .. } => 2,
        }
    }
}
