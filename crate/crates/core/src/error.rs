use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variant names are part of the public contract: the CLI maps them onto exit
/// codes and the C ABI reports [`Error::name`] verbatim.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed tensor header: {0}")]
    MalformedHeader(String),

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },

    #[error("unsupported tensor dtype {0:?}")]
    UnsupportedDType(String),

    #[error("missing tensor file {0}")]
    MissingTensor(PathBuf),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric positive definite")]
    NonSpdMatrix,

    #[error("cell index {index:?} out of range for shape {shape:?}")]
    IndexOutOfRange { index: Vec<usize>, shape: Vec<usize> },

    #[error("point {0:?} lies outside the grid extent")]
    OutOfDomain(Vec<f64>),

    #[error("grid carries no probability mass")]
    DegenerateGrid,

    #[error("grid geometries differ")]
    GeometryMismatch,

    #[error("calibration set is empty")]
    EmptyCalibrationSet,

    #[error("score ledger is empty")]
    EmptyLedger,

    #[error("method {method} needs {field} but example {id:?} has none")]
    MissingField {
        method: String,
        field: &'static str,
        id: String,
    },

    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("noise model not supported here: {0}")]
    UnsupportedNoise(String),

    #[error("unknown method {0:?}")]
    UnknownMethod(String),

    #[error("unknown format {0:?}")]
    UnknownFormat(String),

    #[error("example ids do not align: {0}")]
    IdMismatch(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Stable name of the variant, e.g. `"ShapeMismatch"`.
    pub fn name(&self) -> &'static str {
        match self {
            Error::Io { .. } => "IoError",
            Error::MalformedHeader(_) => "MalformedHeader",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::UnsupportedDType(_) => "UnsupportedDType",
            Error::MissingTensor(_) => "MissingTensor",
            Error::InvariantViolation(_) => "InvariantViolation",
            Error::Manifest(_) => "InvalidManifest",
            Error::DimMismatch { .. } => "DimMismatch",
            Error::NonSpdMatrix => "NonSPDMatrix",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::OutOfDomain(_) => "OutOfDomain",
            Error::DegenerateGrid => "DegenerateGrid",
            Error::GeometryMismatch => "GeometryMismatch",
            Error::EmptyCalibrationSet => "EmptyCalibrationSet",
            Error::EmptyLedger => "EmptyLedger",
            Error::MissingField { .. } => "MissingField",
            Error::InvalidAlpha(_) => "InvalidAlpha",
            Error::InvalidConfig { .. } => "InvalidConfig",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::UnsupportedNoise(_) => "UnsupportedNoise",
            Error::UnknownMethod(_) => "UnknownMethod",
            Error::UnknownFormat(_) => "UnknownFormat",
            Error::IdMismatch(_) => "IdMismatch",
            Error::Json(_) => "JsonError",
        }
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

pub(crate) fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimMismatch { expected, found })
    }
}
