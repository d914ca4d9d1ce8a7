//! Crate-wide error type.
//!
//! Errors are split into two broad classes so the CLI can map them to exit
//! codes: [`ErrorClass::Usage`] for bad invocations, configs, or inputs that
//! fail validation, and [`ErrorClass::Runtime`] for failures that occur while
//! doing otherwise-valid work (I/O, numerics, infeasible sampling).

use std::path::PathBuf;

use crate::datasets::CountVector;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// The caller asked for something invalid (exit code 1).
    Usage,
    /// The work itself failed (exit code 2).
    Runtime,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A config value (or combination of values) fails validation.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// An unknown key appeared in a config file or flag set.
    #[error("unknown config key `{key}`{}", suggestion_suffix(.suggestion))]
    UnknownConfigKey {
        key: String,
        suggestion: Option<String>,
    },

    /// A requested count vector falls outside the configured support.
    #[error("count vector {got} is not admissible: {reason}")]
    InvalidCountVector { got: String, reason: String },

    /// Two tensors or datasets that must agree in shape do not.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },

    /// Object placement could not satisfy the non-overlap constraint.
    #[error(
        "placement infeasible for item {item_index} (counts {counts}) after {attempts} attempts"
    )]
    PlacementInfeasible {
        item_index: usize,
        counts: String,
        attempts: usize,
    },

    /// A glyph class has no usable (nonzero-mass) glyphs.
    #[error("glyph class {class} has no glyphs with foreground mass")]
    EmptyGlyphClass { class: usize },

    /// A holdout exclusion matched nothing or is out of range.
    #[error("invalid holdout exclusion (class {class}, count {count}): {reason}")]
    InvalidExclusion {
        class: usize,
        count: u32,
        reason: String,
    },

    /// A holdout request contradicts the declared evaluation mode.
    #[error("holdout mode violation: {0}")]
    ModeViolation(String),

    /// The patch cropper could not reach its per-combination quota.
    #[error("crop quota shortfall: {0} combination(s) under target; first: {1}")]
    CropShortfall(usize, String),

    /// A metric was asked to run on too little data.
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    /// A data-mixing fraction falls outside its valid range.
    #[error("invalid fraction {value}: {reason}")]
    InvalidFraction { value: f64, reason: String },

    /// A dataset item could not be read or decoded.
    #[error("unreadable dataset item `{path}`: {reason}")]
    DataError { path: PathBuf, reason: String },

    /// A checkpoint file is malformed or from an incompatible layout.
    #[error("bad checkpoint `{path}`: {reason}")]
    BadCheckpoint { path: PathBuf, reason: String },

    /// A numeric routine failed to converge or produced non-finite values.
    #[error("numerical failure in {context}: {reason}")]
    Numerical { context: String, reason: String },

    /// Generic I/O with path context.
    #[error("io error on `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// JSON (de)serialization with path context.
    #[error("json error on `{path}`: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// Image decode/encode failure with path context.
    #[error("image error on `{path}`: {reason}")]
    Image { path: PathBuf, reason: String },
}

impl Error {
    /// Which exit-code class this error belongs to.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidConfig(_)
            | Error::UnknownConfigKey { .. }
            | Error::InvalidCountVector { .. }
            | Error::InvalidExclusion { .. }
            | Error::InsufficientSamples(_)
            | Error::InvalidFraction { .. }
            | Error::ModeViolation(_) => ErrorClass::Usage,
            Error::ShapeMismatch { .. }
            | Error::PlacementInfeasible { .. }
            | Error::EmptyGlyphClass { .. }
            | Error::CropShortfall(..)
            | Error::DataError { .. }
            | Error::BadCheckpoint { .. }
            | Error::Numerical { .. }
            | Error::Io { .. }
            | Error::Json { .. }
            | Error::Image { .. } => ErrorClass::Runtime,
        }
    }

    /// Attach a path to a raw [`std::io::Error`].
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a path to a [`serde_json::Error`].
    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Build an [`Error::InvalidCountVector`] with a rendered vector.
    pub fn bad_counts(counts: &CountVector, reason: impl Into<String>) -> Self {
        Error::InvalidCountVector {
            got: counts.to_string(),
            reason: reason.into(),
        }
    }
}

fn suggestion_suffix(suggestion: &Option<String>) -> String {
    match suggestion {
        Some(s) => format!(" (did you mean `{s}`?)"),
        None => String::new(),
    }
}
