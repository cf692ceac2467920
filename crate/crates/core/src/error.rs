use std::fmt;
use std::path::PathBuf;

use serde::Serialize;

pub type Result<T> = std::result::Result<T, Error>;

/// Kind of a single record-level validation failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IssueKind {
    DuplicateId,
    ProbOutOfRange,
    LabelNotBinary,
    LengthMismatch,
}

impl IssueKind {
    pub fn code(self) -> &'static str {
        match self {
            IssueKind::DuplicateId => "DUPLICATE_ID",
            IssueKind::ProbOutOfRange => "PROB_OUT_OF_RANGE",
            IssueKind::LabelNotBinary => "LABEL_NOT_BINARY",
            IssueKind::LengthMismatch => "LENGTH_MISMATCH",
        }
    }
}

/// One offending record, named by sample id and field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationIssue {
    pub kind: IssueKind,
    pub sample_id: String,
    pub field: String,
    pub detail: String,
    /// 1-based line in the source file, when the record came from one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} sample `{}` field `{}`", self.kind.code(), self.sample_id, self.field)?;
        if let Some(line) = self.line {
            write!(f, " (line {line})")?;
        }
        if !self.detail.is_empty() {
            write!(f, ": {}", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid table: {}", join_issues(.0))]
    InvalidTable(Vec<ValidationIssue>),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("{what} = {value} outside its domain")]
    Domain { what: &'static str, value: f64 },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("mechanism mismatch: expected {expected}, found {found}")]
    MechanismMismatch { expected: String, found: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("selection mask is empty")]
    EmptyMask,
    #[error("quantile of an empty list")]
    EmptyInput,
    #[error("no correct predictions to calibrate class `{0}`")]
    EmptyPool(String),
    #[error("table has no records")]
    EmptyTable,
    #[error("AUC undefined for every class; calibration is degenerate")]
    CalibrationDegenerate,
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unknown source `{0}`")]
    UnknownSource(String),
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
    #[error("invalid generator spec: {0}")]
    SpecInvalid(String),
    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn join_issues(issues: &[ValidationIssue]) -> String {
    issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; ")
}

impl Error {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidTable(issues) => match issues.first() {
                Some(issue) => issue.kind.code(),
                None => "INVALID_TABLE",
            },
            Error::InvalidSchema(_) => "INVALID_SCHEMA",
            Error::Domain { .. } => "DOMAIN",
            Error::LengthMismatch { .. } => "LENGTH_MISMATCH",
            Error::MechanismMismatch { .. } => "MECHANISM_MISMATCH",
            Error::ShapeMismatch(_) => "SHAPE_MISMATCH",
            Error::EmptyMask => "EMPTY_MASK",
            Error::EmptyInput => "EMPTY_INPUT",
            Error::EmptyPool(_) => "EMPTY_POOL",
            Error::EmptyTable => "EMPTY_TABLE",
            Error::CalibrationDegenerate => "CALIBRATION_DEGENERATE",
            Error::SchemaMismatch(_) => "SCHEMA_MISMATCH",
            Error::InvalidConfig(_) => "INVALID_CONFIG",
            Error::Parse { .. } => "PARSE_ERROR",
            Error::MissingColumn(_) => "MISSING_COLUMN",
            Error::UnknownSource(_) => "UNKNOWN_SOURCE",
            Error::DegenerateSplit(_) => "DEGENERATE_SPLIT",
            Error::SpecInvalid(_) => "SPEC_INVALID",
            Error::Io { .. } => "IO_ERROR",
            Error::Json(_) => "PARSE_ERROR",
            Error::Csv(_) => "PARSE_ERROR",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
