use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("layer {layer}: {msg}")]
    InvalidLayer { layer: String, msg: String },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("arithmetic overflow computing {0}")]
    Overflow(&'static str),

    #[error("architecture config: {path}: {msg}")]
    Config { path: String, msg: String },

    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    #[error("invalid mapping: {0}")]
    InvalidMapping(String),

    #[error("invalid mapping encoding: {0}")]
    Encoding(String),

    #[error("no valid mapping exists for layer {0}")]
    EmptyMapspace(String),

    #[error("oracle cap exceeded: {macs} padded MACs > cap {cap}")]
    OracleCap { macs: u64, cap: u64 },

    #[error("tensor shape mismatch: {0}")]
    Shape(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
