use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MbsError>;

#[derive(Debug, Error)]
pub enum MbsError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("duplicate language id \"{0}\"")]
    DuplicateLanguage(String),

    #[error("unknown language \"{0}\"")]
    UnknownLanguage(String),

    #[error(
        "corpus too short for language \"{lang}\": {available} tokens, segment length {seg_len}"
    )]
    CorpusTooShort {
        lang: String,
        available: usize,
        seg_len: usize,
    },

    #[error("invalid calibration plan: {0}")]
    Plan(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unrecognized checkpoint: {0}")]
    BadMagic(String),

    #[error("truncated checkpoint: missing {0}")]
    Truncated(String),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("layer {layer}: {source}")]
    Layer {
        layer: usize,
        #[source]
        source: Box<MbsError>,
    },

    #[error("language \"{lang}\": {source}")]
    Language {
        lang: String,
        #[source]
        source: Box<MbsError>,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl MbsError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MbsError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_layer(self, layer: usize) -> Self {
        MbsError::Layer {
            layer,
            source: Box::new(self),
        }
    }

    pub fn in_language(self, lang: impl Into<String>) -> Self {
        MbsError::Language {
            lang: lang.into(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad user input (configs, manifests, paths)
    /// rather than by the numerical pipeline.
    pub fn is_config_error(&self) -> bool {
        match self {
            MbsError::Io { .. }
            | MbsError::Manifest { .. }
            | MbsError::DuplicateLanguage(_)
            | MbsError::UnknownLanguage(_)
            | MbsError::Plan(_)
            | MbsError::InvalidArgument(_)
            | MbsError::BadMagic(_)
            | MbsError::Truncated(_)
            | MbsError::Checkpoint(_)
            | MbsError::Json(_)
            | MbsError::Csv(_) => true,
            MbsError::Layer { source, .. } | MbsError::Language { source, .. } => {
                source.is_config_error()
            }
            MbsError::CorpusTooShort { .. } | MbsError::Shape(_) | MbsError::Numerical(_) => false,
        }
    }
}
