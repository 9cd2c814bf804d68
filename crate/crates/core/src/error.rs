use std::path::PathBuf;

use thiserror::Error;

use crate::coding::CodingError;
use crate::corpus::CorpusError;
use crate::evaluation::EvalError;
use crate::gateway::GatewayError;
use crate::prompting::PromptError;
use crate::reporting::ReportError;
use crate::theming::ThemingError;

/// Broad failure category, used by front-ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input, configuration, or filesystem state.
    Input,
    /// The chat or embedding provider failed.
    Provider,
    /// A model response could not be turned into structured data.
    Parse,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Coding(#[from] CodingError),
    #[error(transparent)]
    Theming(#[from] ThemingError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Gateway(_) => ErrorKind::Provider,
            Error::Coding(e) => e.kind(),
            Error::Theming(e) => e.kind(),
            Error::Eval(e) => e.kind(),
            Error::Corpus(_) | Error::Prompt(_) | Error::Report(_) | Error::Io { .. } => {
                ErrorKind::Input
            }
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
