use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("node id {id} out of range (graph declares {num_nodes} nodes) at line {line}")]
    NodeOutOfRange {
        id: usize,
        num_nodes: usize,
        line: usize,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("multiplication level exhausted during {context} ({op} needs level >= 1)")]
    LevelExhausted { op: &'static str, context: String },

    #[error(
        "level budget too small: the layer chain needs {required} levels but {configured} are configured; raise --levels"
    )]
    InsufficientLevels { required: u32, configured: u32 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Unsupported(String),
}
