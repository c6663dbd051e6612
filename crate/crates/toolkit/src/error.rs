use std::path::{Path, PathBuf};

use serde::Serialize;

pub type Result<T, E = ToolkitError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum ToolkitError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: corrupt image: {reason}")]
    CorruptImage { path: PathBuf, reason: String },
    #[error("{path}: unsupported bit depth or format: {found}")]
    UnsupportedBitDepth { path: PathBuf, found: String },
    #[error("{path}: bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { path: PathBuf, expected: &'static str, found: String },
    #[error("{path}: payload size mismatch: header implies {expected} bytes, found {found}")]
    PayloadSizeMismatch { path: PathBuf, expected: usize, found: usize },
    #[error("{path}: invalid label map: {reason}")]
    InvalidLabelMap { path: PathBuf, reason: String },
    #[error("{path}: invalid weights: {reason}")]
    InvalidWeights { path: PathBuf, reason: String },
    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    /// A referenced file does not agree with another input.
    #[error("{file}: field `{field}`: {reason}")]
    Inconsistent { file: PathBuf, field: String, reason: String },
    #[error("level {level}: alpha is {alpha} but no feature map was given")]
    MissingFeatureMap { level: usize, alpha: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] spxrefine_core::Error),
}

impl ToolkitError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            Self::Io { .. } => "io",
            Self::CorruptImage { .. } => "corrupt_image",
            Self::UnsupportedBitDepth { .. } => "unsupported_bit_depth",
            Self::BadMagic { .. } => "bad_magic",
            Self::PayloadSizeMismatch { .. } => "payload_size_mismatch",
            Self::InvalidLabelMap { .. } => "invalid_label_map",
            Self::InvalidWeights { .. } => "invalid_weights",
            Self::Parse { .. } => "parse",
            Self::Inconsistent { .. } => "inconsistent_input",
            Self::MissingFeatureMap { .. } => "missing_feature_map",
            Self::Config(_) => "config",
            Self::Core(_) => "core",
        }
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Payload<'a> {
            error: &'a str,
            message: String,
        }
        serde_json::to_string(&Payload { error: self.code(), message: self.to_string() }).expect("serializable")
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn inconsistent(file: &Path, field: &str, reason: impl Into<String>) -> Self {
        Self::Inconsistent { file: file.to_path_buf(), field: field.to_string(), reason: reason.into() }
    }
}
