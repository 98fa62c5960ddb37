//! Error type shared across the toolkit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FodError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// The file is not a NIfTI-1 single-file image.
    #[error("format error: {0}")]
    Format(String),

    /// Valid NIfTI, but a feature outside the supported subset
    /// (float32, little-endian, single-file).
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Model/training configuration rejected by validation.
    #[error("config error: {0}")]
    Config(String),

    /// A numerical procedure failed (rank-deficient solve, non-finite value).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Rejection sampling exhausted its attempt budget.
    #[error("patch sampling failed: {0}")]
    Sampling(String),

    #[error("training aborted: {0}")]
    Training(String),

    /// Statistics requested over a mask that selects no voxels.
    #[error("empty selection: mask selects no voxels")]
    EmptyMask,

    /// Statistics requested over voxels that are all ACC-undefined.
    #[error("empty selection: all {0} selected voxels have undefined ACC")]
    AllUndefined(usize),
}

pub type Result<T> = std::result::Result<T, FodError>;
