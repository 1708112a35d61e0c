//! On-disk features: MMFB tensors, dataset manifests, lexicons and the
//! synthetic dataset generator.

pub mod bundle;
pub mod lexicon;
pub mod manifest;
pub mod mmfb;
pub mod synth;

use std::path::PathBuf;

use thiserror::Error;

pub use bundle::{load_bundle, FeatureBundle, Schema};
pub use lexicon::Lexicon;
pub use manifest::{FeatureFiles, Manifest, SampleEntry, Split};
pub use mmfb::MmfbError;
pub use synth::{synth_dataset, SynthConfig, SynthSummary};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Mmfb {
        path: PathBuf,
        #[source]
        source: MmfbError,
    },
    #[error("sample `{id}` {field}: expected {expected}, got {actual}")]
    Schema {
        id: String,
        field: &'static str,
        expected: String,
        actual: String,
    },
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("lexicon {path} line {line}: {message}")]
    Lexicon {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: not valid UTF-8 ({source})")]
    Encoding {
        path: PathBuf,
        #[source]
        source: std::string::FromUtf8Error,
    },
}

impl StoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StoreError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Reads a file and decodes it as a single MMFB record.
pub fn load_matrix(path: &std::path::Path) -> Result<crate::Matrix<f32>, StoreError> {
    let bytes = std::fs::read(path).map_err(|e| StoreError::io(path, e))?;
    mmfb::decode(&bytes).map_err(|source| StoreError::Mmfb {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_matrix(path: &std::path::Path, m: &crate::Matrix<f32>) -> Result<(), StoreError> {
    mmfb::save_matrix(path, m).map_err(|e| StoreError::io(path, e))
}
