//! Domain types shared across the toolkit: class schema, prediction records,
//! validated score tables and the mechanism/scope/mode selectors.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IssueKind, Result, ValidationIssue};
use crate::scalar::Scalar;

/// Which uncertainty signal drives rejection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    /// Binary entropy in nats; confident when below the threshold.
    Entropy,
    /// Distance `|p - theta|`; confident when the margin exceeds the half-width.
    Interval,
}

/// One shared threshold or one per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Global,
    ClassSpecific,
}

/// Granularity at which accept/reject decisions are taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// A sample is kept whole if any of its classes is confident.
    ImageLevel,
    /// Each (sample, class) cell is kept or rejected on its own.
    #[default]
    PerClass,
}

macro_rules! display_as_serde {
    ($($ty:ty),*) => {$(
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let s = serde_json::to_value(self).map_err(|_| fmt::Error)?;
                f.write_str(s.as_str().unwrap_or_default())
            }
        }
    )*};
}
display_as_serde!(Mechanism, Scope, Mode);

/// Ordered class names plus the decision boundary used to binarize scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ClassSchema<T: Scalar> {
    class_names: Vec<String>,
    decision_boundary: T,
}

impl<T: Scalar> ClassSchema<T> {
    pub fn new<S: Into<String>>(class_names: impl IntoIterator<Item = S>, decision_boundary: T) -> Result<Self> {
        let class_names: Vec<String> = class_names.into_iter().map(Into::into).collect();
        if class_names.is_empty() {
            return Err(Error::InvalidSchema("no classes declared".into()));
        }
        let mut seen = HashSet::new();
        for name in &class_names {
            if name.is_empty() {
                return Err(Error::InvalidSchema("empty class name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidSchema(format!("duplicate class `{name}`")));
            }
        }
        if !(decision_boundary > T::zero() && decision_boundary < T::one()) {
            return Err(Error::InvalidSchema(format!("decision boundary {decision_boundary} not in (0, 1)")));
        }
        Ok(Self { class_names, decision_boundary })
    }

    /// Schema with the conventional 0.5 boundary.
    pub fn with_default_boundary<S: Into<String>>(class_names: impl IntoIterator<Item = S>) -> Result<Self> {
        Self::new(class_names, T::lit(0.5))
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn theta(&self) -> T {
        self.decision_boundary
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    /// Hex SHA-256 over the class names (in order) and the boundary.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for name in &self.class_names {
            hasher.update(name.as_bytes());
            hasher.update(b"\n");
        }
        hasher.update(format!("theta={}", self.decision_boundary).as_bytes());
        hex::encode(hasher.finalize())
    }
}

/// Unvalidated record as it arrives from a file or a caller.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord<T> {
    pub sample_id: String,
    pub source: String,
    pub probs: Vec<T>,
    /// Expected to be 0 or 1; anything else is rejected by validation.
    pub labels: Vec<T>,
}

/// One sample's per-class probabilities and binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord<T> {
    pub sample_id: String,
    /// Dataset of origin; empty means unspecified.
    pub source: String,
    pub probs: Vec<T>,
    pub labels: Vec<bool>,
}

impl<T: Scalar> PredictionRecord<T> {
    pub fn to_raw(&self) -> RawRecord<T> {
        RawRecord {
            sample_id: self.sample_id.clone(),
            source: self.source.clone(),
            probs: self.probs.clone(),
            labels: self.labels.iter().map(|&l| if l { T::one() } else { T::zero() }).collect(),
        }
    }
}

/// Validated, immutable collection of records sharing a schema.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable<T: Scalar> {
    schema: ClassSchema<T>,
    records: Vec<PredictionRecord<T>>,
}

/// Checks every record against the schema and collects all issues.
pub fn validate_table<T: Scalar>(
    raw: impl IntoIterator<Item = RawRecord<T>>,
    schema: ClassSchema<T>,
) -> Result<ScoreTable<T>> {
    validate_with_lines(raw, schema, None)
}

/// Validation that tags each issue with the record's source line.
pub(crate) fn validate_with_lines<T: Scalar>(
    raw: impl IntoIterator<Item = RawRecord<T>>,
    schema: ClassSchema<T>,
    lines: Option<&[usize]>,
) -> Result<ScoreTable<T>> {
    let n_classes = schema.n_classes();
    let mut issues = Vec::new();
    let mut seen = HashSet::new();
    let mut records = Vec::new();

    for (index, rec) in raw.into_iter().enumerate() {
        let first_issue = issues.len();
        let mut ok = true;
        if !seen.insert(rec.sample_id.clone()) {
            issues.push(issue(IssueKind::DuplicateId, &rec.sample_id, "sample_id", String::new()));
            ok = false;
        }
        for (field, len) in [("probs", rec.probs.len()), ("labels", rec.labels.len())] {
            if len != n_classes {
                issues.push(issue(
                    IssueKind::LengthMismatch,
                    &rec.sample_id,
                    field,
                    format!("expected {n_classes} values, found {len}"),
                ));
                ok = false;
            }
        }
        for (c, &p) in rec.probs.iter().enumerate() {
            if !(p >= T::zero() && p <= T::one()) {
                issues.push(issue(
                    IssueKind::ProbOutOfRange,
                    &rec.sample_id,
                    &field_name(&schema, "prob", c),
                    format!("{p} not in [0, 1]"),
                ));
                ok = false;
            }
        }
        let mut labels = Vec::with_capacity(rec.labels.len());
        for (c, &l) in rec.labels.iter().enumerate() {
            if l == T::zero() || l == T::one() {
                labels.push(l == T::one());
            } else {
                issues.push(issue(
                    IssueKind::LabelNotBinary,
                    &rec.sample_id,
                    &field_name(&schema, "label", c),
                    format!("{l} is not 0 or 1"),
                ));
                ok = false;
            }
        }
        if let Some(line) = lines.and_then(|l| l.get(index)) {
            for issue in &mut issues[first_issue..] {
                issue.line = Some(*line);
            }
        }
        if ok {
            records.push(PredictionRecord { sample_id: rec.sample_id, source: rec.source, probs: rec.probs, labels });
        }
    }

    if issues.is_empty() {
        Ok(ScoreTable { schema, records })
    } else {
        Err(Error::InvalidTable(issues))
    }
}

fn issue(kind: IssueKind, sample_id: &str, field: &str, detail: String) -> ValidationIssue {
    ValidationIssue { kind, sample_id: sample_id.to_string(), field: field.to_string(), detail, line: None }
}

fn field_name<T: Scalar>(schema: &ClassSchema<T>, prefix: &str, c: usize) -> String {
    match schema.class_names().get(c) {
        Some(name) => format!("{prefix}_{name}"),
        None => format!("{prefix}[{c}]"),
    }
}

impl<T: Scalar> ScoreTable<T> {
    pub fn schema(&self) -> &ClassSchema<T> {
        &self.schema
    }

    pub fn records(&self) -> &[PredictionRecord<T>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.schema.n_classes()
    }

    pub fn prob(&self, sample: usize, class: usize) -> T {
        self.records[sample].probs[class]
    }

    pub fn label(&self, sample: usize, class: usize) -> bool {
        self.records[sample].labels[class]
    }

    pub fn probs_column(&self, class: usize) -> Vec<T> {
        self.records.iter().map(|r| r.probs[class]).collect()
    }

    pub fn labels_column(&self, class: usize) -> Vec<bool> {
        self.records.iter().map(|r| r.labels[class]).collect()
    }

    /// Distinct source tags in order of first appearance.
    pub fn sources(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.records.iter().filter(|r| seen.insert(r.source.as_str())).map(|r| r.source.clone()).collect()
    }

    /// Row indices belonging to each source, in `sources()` order.
    pub fn source_indices(&self) -> Vec<(String, Vec<usize>)> {
        let sources = self.sources();
        sources
            .into_iter()
            .map(|s| {
                let idx = self.records.iter().enumerate().filter(|(_, r)| r.source == s).map(|(i, _)| i).collect();
                (s, idx)
            })
            .collect()
    }

    /// New table holding the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> ScoreTable<T> {
        ScoreTable { schema: self.schema.clone(), records: rows.iter().map(|&i| self.records[i].clone()).collect() }
    }

    pub fn to_raw(&self) -> Vec<RawRecord<T>> {
        self.records.iter().map(PredictionRecord::to_raw).collect()
    }
}
