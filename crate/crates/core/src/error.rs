use std::path::PathBuf;

use crate::ir::validate::Diagnostic;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor shapes or bounds do not fit the operation.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A caller-supplied argument is out of its documented domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// The targeted layer has the wrong kind for the requested rewrite.
    #[error("layer `{layer}` is {found}, expected {expected}")]
    Kind {
        layer: String,
        expected: &'static str,
        found: String,
    },

    /// Failure while executing a particular graph node.
    #[error("node `{node}`: {source}")]
    Node {
        node: String,
        #[source]
        source: Box<Error>,
    },

    /// A named graph input was not supplied.
    #[error("missing graph input `{0}`")]
    MissingInput(String),

    /// The graph violates structural invariants.
    #[error("invalid graph: {}", summarize(.0))]
    Invalid(Vec<Diagnostic>),

    /// Model or dataset file could not be parsed.
    #[error(transparent)]
    Format(#[from] FormatError),

    /// Calibration could not produce a range.
    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Parse failures for the on-disk model and dataset formats.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("unsupported format version `{found}` (expected `{expected}`)")]
    Version { found: String, expected: &'static str },

    #[error("unsupported layer kind `{0}`")]
    UnsupportedKind(String),

    #[error("tensor `{name}` [{offset}, {offset}+{length}) lies outside the {blob_len}-byte blob")]
    OutOfBounds {
        name: String,
        offset: u64,
        length: u64,
        blob_len: u64,
    },

    #[error("tensor `{name}` offset {offset} is not 4-byte aligned")]
    Misaligned { name: String, offset: u64 },

    #[error("tensor `{name}`: {detail}")]
    Tensor { name: String, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn at_node(self, node: &str) -> Self {
        match self {
            e @ Error::Node { .. } => e,
            other => Error::Node {
                node: node.to_string(),
                source: Box::new(other),
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn summarize(diags: &[Diagnostic]) -> String {
    diags.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}
