use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{what}:{line}: {msg}")]
    Parse {
        what: String,
        line: usize,
        msg: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("unknown emotion term {term:?} (nearest known: {})", nearest.join(", "))]
    UnknownEmotion { term: String, nearest: Vec<String> },

    #[error("unknown joint {0:?}")]
    UnknownJoint(String),

    #[error("invalid skeleton: {0}")]
    Skeleton(String),

    #[error("empty sentence after tokenization")]
    EmptySentence,

    #[error("empty gesture sequence")]
    EmptySequence,

    #[error("degenerate sequence: {0}")]
    Degenerate(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("invalid attribute: {0}")]
    Attribute(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("non-finite loss at epoch {epoch}: {diagnostic}")]
    NonFiniteLoss { epoch: usize, diagnostic: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn parse(what: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            what: what.into(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
