//! Count-based learner representation.
//!
//! Each student becomes a histogram of (operation, time bucket) counts over
//! the course span. Vectors are not normalized, so a student's total
//! activity volume stays visible to the model.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{csv_io, EventRecord, OperationVocab, Timestamp};
use crate::error::{Error, Result};

pub const DEFAULT_BUCKETS: usize = 4;

/// Per-student feature vectors keyed by student id.
pub type FeatureTable = BTreeMap<String, Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub vocab: OperationVocab,
    pub n_buckets: usize,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            vocab: OperationVocab::default(),
            n_buckets: DEFAULT_BUCKETS,
        }
    }
}

impl FeatureSpec {
    pub fn new(vocab: OperationVocab, n_buckets: usize) -> Result<Self> {
        let spec = FeatureSpec { vocab, n_buckets };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab.is_empty() {
            return Err(Error::invalid("feature vocabulary is empty"));
        }
        if self.n_buckets == 0 {
            return Err(Error::invalid("n_buckets must be at least 1"));
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.vocab.len() * self.n_buckets
    }

    /// Stable content hash of the vocabulary order and bucket count.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for name in self.vocab.names() {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        h.update(self.n_buckets.to_le_bytes());
        hex::encode(&h.finalize()[..8])
    }
}

/// Closed time interval that every featurized event must fall in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CourseSpan {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl CourseSpan {
    pub fn new(start: Timestamp, end: Timestamp) -> Result<Self> {
        if end <= start {
            return Err(Error::invalid("course span must have end after start"));
        }
        Ok(CourseSpan { start, end })
    }

    fn bucket(&self, t: Timestamp, n_buckets: usize) -> Option<usize> {
        if t < self.start || t > self.end {
            return None;
        }
        let offset = (t - self.start).num_seconds() as i128;
        let width = (self.end - self.start).num_seconds() as i128;
        let b = (offset * n_buckets as i128 / width) as usize;
        Some(b.min(n_buckets - 1))
    }
}

/// Histogram features for every student that appears in `events`.
///
/// Entry `op * n_buckets + bucket` counts the student's events of that
/// operation inside that equal-width slice of `span`. Operations outside the
/// spec vocabulary are not counted.
pub fn featurize(events: &[EventRecord], spec: &FeatureSpec, span: &CourseSpan) -> Result<FeatureTable> {
    spec.validate()?;
    let dim = spec.dimension();
    let mut table = FeatureTable::new();
    for e in events {
        let bucket = span.bucket(e.event_time, spec.n_buckets).ok_or_else(|| {
            Error::invalid(format!(
                "event of `{}` at {} lies outside the course span",
                e.student_id, e.event_time
            ))
        })?;
        let row = table.entry(e.student_id.clone()).or_insert_with(|| vec![0.0; dim]);
        if let Some(op) = spec.vocab.index_of(&e.operation) {
            row[op * spec.n_buckets + bucket] += 1.0;
        }
    }
    Ok(table)
}

/// [`featurize`] restricted to `students`, with zero vectors for students
/// that have no events.
pub fn featurize_cohort(
    events: &[EventRecord],
    students: &[String],
    spec: &FeatureSpec,
    span: &CourseSpan,
) -> Result<FeatureTable> {
    let mut table = featurize(events, spec, span)?;
    let dim = spec.dimension();
    Ok(students
        .iter()
        .map(|s| (s.clone(), table.remove(s).unwrap_or_else(|| vec![0.0; dim])))
        .collect())
}

/// Writes `student_id,f_0,...,f_{D-1}`.
pub fn write_feature_table(path: impl AsRef<Path>, table: &FeatureTable) -> Result<()> {
    let path = path.as_ref();
    let dim = table.values().next().map_or(0, Vec::len);
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut header = vec!["student_id".to_string()];
    header.extend((0..dim).map(|i| format!("f_{i}")));
    w.write_record(&header)?;
    for (student, row) in table {
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: row.len(),
            });
        }
        let mut rec = vec![student.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a feature CSV and returns its dimension with the table.
pub fn read_feature_table(path: impl AsRef<Path>) -> Result<(usize, FeatureTable)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Err(Error::EmptyFile { path: path.into() });
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    if headers.get(0) != Some("student_id") {
        return Err(Error::MissingColumn {
            path: path.into(),
            column: "student_id".into(),
        });
    }
    let dim = headers.len() - 1;
    let mut table = FeatureTable::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let err = |message: String| Error::Record {
            path: path.into(),
            line,
            message,
        };
        let values = row
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| err("non-numeric or non-finite feature".into()))?;
        let student = row.get(0).unwrap_or("").to_string();
        if table.insert(student.clone(), values).is_some() {
            return Err(err(format!("duplicate student `{student}`")));
        }
    }
    if table.is_empty() {
        return Err(Error::EmptyFile { path: path.into() });
    }
    Ok((dim, table))
}
