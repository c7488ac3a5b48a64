use std::path::PathBuf;

use thiserror::Error;

use crate::backends::BackendError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A record in an input file violates the data model. `line` is 1-based.
    #[error("{file}:{line}: field `{field}`: {message}")]
    Data {
        file: String,
        line: usize,
        field: String,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A caller-side precondition was not met.
    #[error("{0}")]
    Precondition(String),

    #[error("backend error: {0}")]
    Backend(#[from] BackendError),

    #[error("ASR failed on chunk {index} [{start_s:.3}s, {end_s:.3}s]: {source}")]
    Chunk {
        index: usize,
        start_s: f64,
        end_s: f64,
        #[source]
        source: BackendError,
    },

    #[error("talk {talk_id}: {source}")]
    Talk {
        talk_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("post-editing chunk {chunk} of talk {talk_id}: {source}")]
    ApeChunk {
        talk_id: String,
        chunk: usize,
        #[source]
        source: BackendError,
    },

    #[error("count mismatch: {0}")]
    CountMismatch(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn data(
        file: impl Into<String>,
        line: usize,
        field: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Data {
            file: file.into(),
            line,
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn in_talk(self, talk_id: &str) -> Self {
        Error::Talk {
            talk_id: talk_id.to_string(),
            source: Box::new(self),
        }
    }

    /// True when the root cause is a backend (transport or protocol) failure.
    pub fn is_backend(&self) -> bool {
        match self {
            Error::Backend(_) | Error::Chunk { .. } | Error::ApeChunk { .. } => true,
            Error::Talk { source, .. } => source.is_backend(),
            _ => false,
        }
    }
}
