use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("symmetric eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    NotConverged { sweeps: usize, off_norm: f64 },

    #[error("least-squares system is underdetermined ({rows} rows < {cols} unknowns)")]
    Underdetermined { rows: usize, cols: usize },

    /// The sketch or its projected matrix carries no usable directions.
    #[error("no usable subspace for the update direction")]
    NoSubspace,

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("policy diverged: {0}")]
    Diverged(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("nothing to plot: {0}")]
    EmptyRecords(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
