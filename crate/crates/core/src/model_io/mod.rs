//! Weight container, configuration schema and reference weights.
//!
//! Container layout (all integers little-endian): `"EMSF"`, `u32` format
//! version, `u64` manifest length, UTF-8 JSON manifest, zero padding to a
//! 64-byte boundary, then raw `f32` tensor blobs at the 64-aligned absolute
//! offsets listed in the manifest.

mod config;
mod container;
mod init;
mod shapes;
mod store;

pub use config::{ContextConfig, DecoderConfig, DecoderKind, ModelConfig, Preprocessing, MAX_CLASSES, NYUV2_STUFF};
pub use container::{
    from_bytes, load, read_manifest, replace_manifest, save, to_bytes, TensorEntry, WeightManifest, ALIGN, FORMAT_VERSION, HEADER_LEN,
    MAGIC,
};
pub use init::{fnv1a64, reference_init, INIT_LOGIT_SCALE, INIT_STD};
pub use shapes::{crosses_modality, expected_shapes, modality_isolated, ShapeTable};
pub use store::{Scope, WeightStore};

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a weight container (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("header version {header} does not match manifest version {manifest}")]
    VersionMismatch { header: u32, manifest: u32 },
    #[error("container truncated: need {needed} bytes, have {actual}")]
    Truncated { needed: u64, actual: u64 },
    #[error("malformed manifest: {0}")]
    ManifestParse(String),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("tensor {0:?} listed twice")]
    DuplicateTensor(String),
    #[error("unexpected tensor {0:?}")]
    UnexpectedTensor(String),
    #[error("missing tensor {0:?}")]
    MissingTensor(String),
    #[error("tensor {name:?} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor {name:?} at offset {offset} is not 64-byte aligned")]
    Misaligned { name: String, offset: u64 },
    #[error("tensor {0:?} overlaps another tensor or the manifest")]
    Overlap(String),
    #[error("tensor {name:?} has a non-finite value at index {index}")]
    NonFinite { name: String, index: usize },
    #[error("tensor {0:?} mixes rgb and depth channels")]
    ModalityLeak(String),
}

impl LoadError {
    /// Stable identifier of the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            LoadError::Io(_) => "io",
            LoadError::BadMagic => "bad-magic",
            LoadError::UnsupportedVersion(_) => "unsupported-version",
            LoadError::VersionMismatch { .. } => "version-mismatch",
            LoadError::Truncated { .. } => "truncated",
            LoadError::ManifestParse(_) => "manifest-parse",
            LoadError::InvalidConfig(_) => "invalid-config",
            LoadError::DuplicateTensor(_) => "duplicate-tensor",
            LoadError::UnexpectedTensor(_) => "unexpected-tensor",
            LoadError::MissingTensor(_) => "missing-tensor",
            LoadError::ShapeMismatch { .. } => "shape-mismatch",
            LoadError::Misaligned { .. } => "misaligned",
            LoadError::Overlap(_) => "overlap",
            LoadError::NonFinite { .. } => "non-finite",
            LoadError::ModalityLeak(_) => "modality-leak",
        }
    }
}

#[cfg(test)]
mod tests;
