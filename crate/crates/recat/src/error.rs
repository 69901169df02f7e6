use std::path::{Path, PathBuf};

/// Failures of the std-side layer: files, formats and the engine itself.
#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("format error: {0}")]
    Format(String),
    #[error("checkpoint: unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint: parameter {name}: {detail}")]
    Param { name: String, detail: String },
    #[error(transparent)]
    Engine(#[from] recat_core::Error),
}

pub type IoResult<T> = Result<T, IoError>;

pub(crate) fn read_to_string(path: &Path) -> IoResult<String> {
    std::fs::read_to_string(path).map_err(|source| IoError::File { path: path.to_path_buf(), source })
}

pub(crate) fn read_bytes(path: &Path) -> IoResult<Vec<u8>> {
    std::fs::read(path).map_err(|source| IoError::File { path: path.to_path_buf(), source })
}

pub(crate) fn write(path: &Path, data: impl AsRef<[u8]>) -> IoResult<()> {
    std::fs::write(path, data).map_err(|source| IoError::File { path: path.to_path_buf(), source })
}
