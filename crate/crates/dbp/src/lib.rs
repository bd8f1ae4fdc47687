//! Training loop, evaluation harness, on-disk formats, and CLI glue for
//! the grasp-supervised depth estimator in `dbp-core`.

pub mod checkpoint;
pub mod cli;
pub mod dataset_file;
pub mod eval;
pub mod run_config;
pub mod trainer;

use std::sync::Once;

/// One error type across formats, training, and the CLI.
#[derive(Debug, thiserror::Error)]
pub enum DbpError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found:?}, expected {expected:?}")]
    BadMagic {
        path: String,
        found: [u8; 4],
        expected: [u8; 4],
    },
    #[error("{path}: unsupported format version {found} (expected {expected})")]
    UnsupportedVersion {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("{path}: truncated while reading {what}")]
    Truncated { path: String, what: String },
    #[error("{path}: {len} trailing bytes after the declared contents")]
    TrailingBytes { path: String, len: usize },
    #[error("{path}: inconsistent sample dims: {msg}")]
    DimMismatch { path: String, msg: String },
    #[error("checkpoint config mismatch: {msg}")]
    ConfigMismatch { msg: String },
    #[error("config {path}:{line}: {msg}")]
    ConfigParse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("training aborted at step {step}: {msg}")]
    TrainAborted { step: usize, msg: String },
    #[error("{0}")]
    Core(#[from] dbp_core::Error),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, DbpError>;

impl DbpError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        DbpError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// glibc returns chunks above ~128 KiB to the kernel on free; the training
/// loop allocates activation buffers of exactly that size every step and
/// would otherwise page-fault continuously. Raise the thresholds once.
pub fn tune_allocator() {
    static ONCE: Once = Once::new();
    ONCE.call_once(|| {
        #[cfg(target_os = "linux")]
        unsafe {
            libc::mallopt(libc::M_MMAP_THRESHOLD, 64 << 20);
            libc::mallopt(libc::M_TRIM_THRESHOLD, 64 << 20);
        }
    });
}
