//! Learner records: event logs, letter grades, grade scoring, at-risk labels
//! and lecture-window truncation.
//!
//! Events and grades are read from CSV files with a header row. Timestamps
//! are RFC 3339 and are stored in UTC at second resolution.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scale factor applied to the cumulative grade fraction.
pub const DEFAULT_MAX_SCORE: f64 = 0.95;

/// Students at or below the grade found at this position from the bottom are at-risk.
pub const DEFAULT_THRESHOLD_RANK: usize = 15;

/// Bucket for operations outside the configured vocabulary.
pub const OTHER_OPERATION: &str = "OTHER";

/// Operations recorded by the e-book reader.
pub const DEFAULT_OPERATIONS: [&str; 9] = [
    "OPEN",
    "CLOSE",
    "NEXT",
    "PREV",
    "ADD_MARKER",
    "DELETE_MARKER",
    "ADD_MEMO",
    "DELETE_MEMO",
    "PAGE_JUMP",
];

pub type Timestamp = DateTime<Utc>;

/// Parses an RFC 3339 timestamp into UTC, dropping sub-second precision.
pub fn parse_timestamp(s: &str) -> Option<Timestamp> {
    let parsed = DateTime::parse_from_rfc3339(s.trim()).ok()?;
    DateTime::<Utc>::from_timestamp(parsed.timestamp(), 0)
}

pub fn format_timestamp(t: &Timestamp) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Ordered set of known operation names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationVocab {
    names: Vec<String>,
}

impl OperationVocab {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut seen = BTreeSet::new();
        let names = names
            .into_iter()
            .map(|s| s.into().trim().to_ascii_uppercase())
            .filter(|s| !s.is_empty() && seen.insert(s.clone()))
            .collect();
        OperationVocab { names }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, op: &str) -> Option<usize> {
        self.names.iter().position(|n| n == op)
    }

    /// Maps a raw operation name onto the vocabulary, or `None` if unknown.
    pub fn normalize(&self, raw: &str) -> Option<&str> {
        let key = raw.trim().to_ascii_uppercase();
        self.names.iter().find(|n| **n == key).map(String::as_str)
    }
}

impl Default for OperationVocab {
    fn default() -> Self {
        OperationVocab::new(DEFAULT_OPERATIONS)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub student_id: String,
    pub material_id: String,
    pub operation: String,
    pub event_time: Timestamp,
}

/// Result of reading an events file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventLog {
    pub records: Vec<EventRecord>,
    /// Rows whose operation was outside the vocabulary and mapped to `OTHER`.
    pub other_count: usize,
}

/// Letter grade, ordered from worst to best.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Grade {
    F = 1,
    D = 2,
    C = 3,
    B = 4,
    A = 5,
}

impl Grade {
    pub const ALL: [Grade; 5] = [Grade::F, Grade::D, Grade::C, Grade::B, Grade::A];

    /// Ordinal in `1..=5`.
    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(m: usize) -> Option<Grade> {
        Grade::ALL.get(m.checked_sub(1)?).copied()
    }

    pub fn letter(self) -> char {
        match self {
            Grade::F => 'F',
            Grade::D => 'D',
            Grade::C => 'C',
            Grade::B => 'B',
            Grade::A => 'A',
        }
    }
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for Grade {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "F" => Ok(Grade::F),
            "D" => Ok(Grade::D),
            "C" => Ok(Grade::C),
            "B" => Ok(Grade::B),
            "A" => Ok(Grade::A),
            other => Err(Error::invalid(format!("unknown grade `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradeRecord {
    pub student_id: String,
    pub grade: Grade,
}

impl GradeRecord {
    pub fn new(student_id: impl Into<String>, grade: Grade) -> Self {
        GradeRecord {
            student_id: student_id.into(),
            grade,
        }
    }
}

/// Converts letter grades into regression targets.
///
/// `G_m = max_score * (x_1 + ... + x_m) / total`, where `x_j` counts the
/// students holding grade `j` and `total` is the cohort size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradeScoring {
    max_score: f64,
    counts: [u64; 5],
    total: u64,
}

impl GradeScoring {
    pub fn from_records(records: &[GradeRecord], max_score: f64) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyInput("grade records"));
        }
        let mut counts = [0u64; 5];
        for r in records {
            counts[r.grade.ordinal() - 1] += 1;
        }
        Self::from_counts(counts, max_score)
    }

    /// Counts `x_1..x_5` ordered F, D, C, B, A; the total is their sum.
    pub fn from_counts(counts: [u64; 5], max_score: f64) -> Result<Self> {
        let total = counts.iter().sum();
        Self::with_total(counts, total, max_score)
    }

    /// Like [`GradeScoring::from_counts`] with an explicit cohort size, which
    /// may exceed the summed counts when some enrolled students hold no
    /// letter grade. `G_5` then falls below `max_score`.
    pub fn with_total(counts: [u64; 5], total: u64, max_score: f64) -> Result<Self> {
        if !(max_score > 0.0 && max_score.is_finite()) {
            return Err(Error::invalid(format!("max_score must be positive, got {max_score}")));
        }
        if total == 0 {
            return Err(Error::EmptyInput("grade distribution"));
        }
        let graded: u64 = counts.iter().sum();
        if graded > total {
            return Err(Error::invalid(format!(
                "grade counts sum to {graded}, more than the total {total}"
            )));
        }
        Ok(GradeScoring {
            max_score,
            counts,
            total,
        })
    }

    pub fn max_score(&self) -> f64 {
        self.max_score
    }

    pub fn counts(&self) -> [u64; 5] {
        self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn score(&self, grade: Grade) -> f64 {
        let cumulative: u64 = self.counts[..grade.ordinal()].iter().sum();
        self.max_score * cumulative as f64 / self.total as f64
    }

    /// `(G_1, ..., G_5)`.
    pub fn scores(&self) -> [f64; 5] {
        Grade::ALL.map(|g| self.score(g))
    }
}

/// Scores every student against the grade distribution of `records`.
pub fn score_grades(records: &[GradeRecord], max_score: f64) -> Result<BTreeMap<String, f64>> {
    let scoring = GradeScoring::from_records(records, max_score)?;
    Ok(records
        .iter()
        .map(|r| (r.student_id.clone(), scoring.score(r.grade)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AtRiskLabeling {
    pub threshold_rank: usize,
    /// Grade of the student at `threshold_rank` from the bottom.
    pub boundary: Grade,
    pub labels: BTreeMap<String, bool>,
    /// Set when the cohort was smaller than `threshold_rank`.
    pub clamped: bool,
}

impl AtRiskLabeling {
    pub fn at_risk_count(&self) -> usize {
        self.labels.values().filter(|&&b| b).count()
    }
}

/// Labels every student whose grade is at or below the grade of the student
/// ranked `threshold_rank` from the bottom. Ties at the boundary are all
/// included, so the count may exceed `threshold_rank`.
pub fn label_at_risk(records: &[GradeRecord], threshold_rank: usize) -> Result<AtRiskLabeling> {
    if threshold_rank == 0 {
        return Err(Error::invalid("threshold_rank must be at least 1"));
    }
    if records.is_empty() {
        return Err(Error::EmptyInput("grade records"));
    }
    let mut grades: Vec<Grade> = records.iter().map(|r| r.grade).collect();
    grades.sort_unstable();
    let clamped = threshold_rank > grades.len();
    if clamped {
        warn!(
            "threshold rank {threshold_rank} exceeds cohort size {}; every student is labeled at-risk",
            grades.len()
        );
    }
    let boundary = grades[threshold_rank.min(grades.len()) - 1];
    let labels = records
        .iter()
        .map(|r| (r.student_id.clone(), clamped || r.grade <= boundary))
        .collect();
    Ok(AtRiskLabeling {
        threshold_rank,
        boundary: if clamped { Grade::A } else { boundary },
        labels,
        clamped,
    })
}

/// End timestamps of consecutive lecture windows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LectureSchedule {
    /// Course start, when the schedule file carries a `lecture_index` 0 row.
    pub start: Option<Timestamp>,
    window_ends: Vec<Timestamp>,
}

impl LectureSchedule {
    pub fn new(start: Option<Timestamp>, window_ends: Vec<Timestamp>) -> Result<Self> {
        if window_ends.is_empty() {
            return Err(Error::EmptyInput("lecture schedule"));
        }
        let mut prev = start;
        for (i, t) in window_ends.iter().enumerate() {
            if let Some(p) = prev {
                if *t <= p {
                    return Err(Error::invalid(format!(
                        "schedule not strictly increasing at lecture {}",
                        i + 1
                    )));
                }
            }
            prev = Some(*t);
        }
        Ok(LectureSchedule { start, window_ends })
    }

    pub fn window_ends(&self) -> &[Timestamp] {
        &self.window_ends
    }

    pub fn lecture_count(&self) -> usize {
        self.window_ends.len()
    }

    /// End of lecture window `k` (1-based).
    pub fn window_end(&self, k: usize) -> Result<Timestamp> {
        if k == 0 || k > self.window_ends.len() {
            return Err(Error::invalid(format!(
                "lecture k={k} outside 1..={}",
                self.window_ends.len()
            )));
        }
        Ok(self.window_ends[k - 1])
    }
}

/// Keeps only the events up to the end of lecture window `k`.
pub fn truncate_events(records: &[EventRecord], schedule: &LectureSchedule, k: usize) -> Result<Vec<EventRecord>> {
    let end = schedule.window_end(k)?;
    Ok(records.iter().filter(|r| r.event_time <= end).cloned().collect())
}

/// Students with a grade but no logged activity.
pub fn inactive_students(events: &[EventRecord], grades: &[GradeRecord]) -> Vec<String> {
    let active: BTreeSet<&str> = events.iter().map(|e| e.student_id.as_str()).collect();
    grades
        .iter()
        .filter(|g| !active.contains(g.student_id.as_str()))
        .map(|g| g.student_id.clone())
        .collect()
}

fn read_nonempty(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Err(Error::EmptyFile { path: path.into() });
    }
    Ok(text)
}

fn column_indices<const N: usize>(path: &Path, headers: &csv::StringRecord, names: [&str; N]) -> Result<[usize; N]> {
    let mut out = [0; N];
    for (slot, name) in out.iter_mut().zip(names) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn {
                path: path.into(),
                column: name.to_string(),
            })?;
    }
    Ok(out)
}

fn record_error(path: &Path, rec: &csv::StringRecord, message: String) -> Error {
    Error::Record {
        path: path.into(),
        line: rec.position().map_or(0, |p| p.line()),
        message,
    }
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

/// Reads an events CSV (`student_id,material_id,operation,event_time`).
///
/// Records come back sorted by `(student_id, event_time)`; rows with equal
/// keys keep file order.
pub fn ingest_events(path: impl AsRef<Path>, vocab: &OperationVocab) -> Result<EventLog> {
    let path = path.as_ref();
    let text = read_nonempty(path)?;
    let mut reader = csv_reader(&text);
    let headers = reader.headers()?.clone();
    let [sid, mid, op, time] = column_indices(
        path,
        &headers,
        ["student_id", "material_id", "operation", "event_time"],
    )?;

    let mut records = Vec::new();
    let mut other_count = 0;
    for row in reader.records() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or("");
        let event_time = parse_timestamp(field(time)).ok_or_else(|| {
            record_error(path, &row, format!("malformed event_time `{}`", field(time)))
        })?;
        let operation = match vocab.normalize(field(op)) {
            Some(name) => name.to_string(),
            None => {
                other_count += 1;
                OTHER_OPERATION.to_string()
            }
        };
        records.push(EventRecord {
            student_id: field(sid).to_string(),
            material_id: field(mid).to_string(),
            operation,
            event_time,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyFile { path: path.into() });
    }
    if other_count > 0 {
        warn!(
            "{}: {other_count} event(s) with unknown operation mapped to {OTHER_OPERATION}",
            path.display()
        );
    }
    records.sort_by(|a, b| (&a.student_id, a.event_time).cmp(&(&b.student_id, b.event_time)));
    Ok(EventLog {
        records,
        other_count,
    })
}

pub fn write_events(path: impl AsRef<Path>, records: &[EventRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["student_id", "material_id", "operation", "event_time"])?;
    for r in records {
        w.write_record([
            r.student_id.as_str(),
            r.material_id.as_str(),
            r.operation.as_str(),
            &format_timestamp(&r.event_time),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a grades CSV (`student_id,grade`); each student may appear once.
pub fn ingest_grades(path: impl AsRef<Path>) -> Result<Vec<GradeRecord>> {
    let path = path.as_ref();
    let text = read_nonempty(path)?;
    let mut reader = csv_reader(&text);
    let headers = reader.headers()?.clone();
    let [sid, grade] = column_indices(path, &headers, ["student_id", "grade"])?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let student = row.get(sid).unwrap_or("").to_string();
        let g: Grade = row
            .get(grade)
            .unwrap_or("")
            .parse()
            .map_err(|e: Error| record_error(path, &row, e.to_string()))?;
        if !seen.insert(student.clone()) {
            return Err(record_error(path, &row, format!("duplicate student `{student}`")));
        }
        out.push(GradeRecord::new(student, g));
    }
    if out.is_empty() {
        return Err(Error::EmptyFile { path: path.into() });
    }
    Ok(out)
}

pub fn write_grades(path: impl AsRef<Path>, records: &[GradeRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["student_id", "grade"])?;
    for r in records {
        w.write_record([r.student_id.as_str(), &r.grade.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a schedule CSV (`lecture_index,window_end`). An optional row with
/// `lecture_index` 0 gives the course start.
pub fn read_schedule(path: impl AsRef<Path>) -> Result<LectureSchedule> {
    let path = path.as_ref();
    let text = read_nonempty(path)?;
    let mut reader = csv_reader(&text);
    let headers = reader.headers()?.clone();
    let [idx, end] = column_indices(path, &headers, ["lecture_index", "window_end"])?;
    let mut rows = Vec::new();
    for row in reader.records() {
        let row = row?;
        let k: usize = row
            .get(idx)
            .unwrap_or("")
            .parse()
            .map_err(|_| record_error(path, &row, "lecture_index is not an integer".into()))?;
        let t = parse_timestamp(row.get(end).unwrap_or(""))
            .ok_or_else(|| record_error(path, &row, "malformed window_end".into()))?;
        rows.push((k, t));
    }
    rows.sort_by_key(|r| r.0);
    let start = match rows.first() {
        Some((0, t)) => Some(*t),
        _ => None,
    };
    let ends: Vec<Timestamp> = rows.iter().filter(|r| r.0 > 0).map(|r| r.1).collect();
    for (expected, (k, _)) in (1..).zip(rows.iter().filter(|r| r.0 > 0)) {
        if *k != expected {
            return Err(Error::invalid(format!(
                "{}: lecture indices must run 1..=K without gaps (found {k})",
                path.display()
            )));
        }
    }
    LectureSchedule::new(start, ends)
}

pub fn write_schedule(path: impl AsRef<Path>, schedule: &LectureSchedule) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["lecture_index", "window_end"])?;
    if let Some(start) = schedule.start {
        w.write_record(["0", &format_timestamp(&start)])?;
    }
    for (k, t) in schedule.window_ends.iter().enumerate() {
        w.write_record([(k + 1).to_string(), format_timestamp(t)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::invalid(format!("{}: {kind:?}", path.display())),
    }
}

/// One course's students as seen by its owner: features, letter grades and
/// grade scores computed from this course's own distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    client_id: String,
    students: Vec<String>,
    features: Vec<Vec<f64>>,
    grades: Vec<Grade>,
    scored_grades: Vec<f64>,
    lecture_count: usize,
}

impl ClientDataset {
    pub fn new(
        client_id: impl Into<String>,
        students: Vec<String>,
        features: Vec<Vec<f64>>,
        grades: Vec<Grade>,
        max_score: f64,
        lecture_count: usize,
    ) -> Result<Self> {
        let client_id = client_id.into();
        if students.is_empty() {
            return Err(Error::EmptyInput("client students"));
        }
        if features.len() != students.len() || grades.len() != students.len() {
            return Err(Error::invalid(format!(
                "client `{client_id}`: {} students, {} feature rows, {} grades",
                students.len(),
                features.len(),
                grades.len()
            )));
        }
        let dim = features[0].len();
        for row in &features {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("client `{client_id}`: non-finite feature")));
            }
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = students.iter().find(|s| !seen.insert(s.as_str())) {
            return Err(Error::invalid(format!("client `{client_id}`: duplicate student `{dup}`")));
        }
        if lecture_count == 0 {
            return Err(Error::invalid("lecture_count must be positive"));
        }
        let records: Vec<GradeRecord> = students
            .iter()
            .zip(&grades)
            .map(|(s, g)| GradeRecord::new(s.clone(), *g))
            .collect();
        let scoring = GradeScoring::from_records(&records, max_score)?;
        let scored_grades = grades.iter().map(|g| scoring.score(*g)).collect();
        Ok(ClientDataset {
            client_id,
            students,
            features,
            grades,
            scored_grades,
            lecture_count,
        })
    }

    /// Joins a feature table with grade records. Graded students without a
    /// feature row get a zero vector; feature rows without a grade are rejected.
    pub fn from_tables(
        client_id: impl Into<String>,
        features: &BTreeMap<String, Vec<f64>>,
        dim: usize,
        grades: &[GradeRecord],
        max_score: f64,
        lecture_count: usize,
    ) -> Result<Self> {
        let graded: BTreeSet<&str> = grades.iter().map(|g| g.student_id.as_str()).collect();
        let ungraded: Vec<&str> = features
            .keys()
            .map(String::as_str)
            .filter(|s| !graded.contains(s))
            .collect();
        if !ungraded.is_empty() {
            return Err(Error::KeyMismatch(format!(
                "students with features but no grade: {}",
                ungraded.join(", ")
            )));
        }
        let mut students = Vec::with_capacity(grades.len());
        let mut rows = Vec::with_capacity(grades.len());
        let mut letters = Vec::with_capacity(grades.len());
        for g in grades {
            students.push(g.student_id.clone());
            rows.push(features.get(&g.student_id).cloned().unwrap_or_else(|| vec![0.0; dim]));
            letters.push(g.grade);
        }
        Self::new(client_id, students, rows, letters, max_score, lecture_count)
    }

    pub fn client_id(&self) -> &str {
        &self.client_id
    }

    pub fn students(&self) -> &[String] {
        &self.students
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn grades(&self) -> &[Grade] {
        &self.grades
    }

    pub fn scored_grades(&self) -> &[f64] {
        &self.scored_grades
    }

    pub fn lecture_count(&self) -> usize {
        self.lecture_count
    }

    pub fn len(&self) -> usize {
        self.students.len()
    }

    pub fn is_empty(&self) -> bool {
        self.students.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn grade_records(&self) -> Vec<GradeRecord> {
        self.students
            .iter()
            .zip(&self.grades)
            .map(|(s, g)| GradeRecord::new(s.clone(), *g))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn cohort(counts: [usize; 5]) -> Vec<GradeRecord> {
        let mut out = Vec::new();
        for (g, &c) in Grade::ALL.iter().zip(&counts) {
            for i in 0..c {
                out.push(GradeRecord::new(format!("{}{i:03}", g.letter()), *g));
            }
        }
        out
    }

    fn temp_csv(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn uniform_distribution_scores() {
        let s = GradeScoring::from_counts([2, 2, 2, 2, 2], 0.95).unwrap();
        let expected = [0.19, 0.38, 0.57, 0.76, 0.95];
        for (got, want) in s.scores().iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn all_a_scores_max() {
        let scores = score_grades(&cohort([0, 0, 0, 0, 10]), 0.95).unwrap();
        assert!(scores.values().all(|&v| v == 0.95));
    }

    #[test]
    fn single_student_scores_max() {
        let s = GradeScoring::from_counts([1, 0, 0, 0, 0], 0.95).unwrap();
        assert_eq!(s.score(Grade::F), 0.95);
    }

    #[test]
    fn empty_grades_rejected() {
        assert!(matches!(score_grades(&[], 0.95), Err(Error::EmptyInput(_))));
        assert!(GradeScoring::from_counts([1, 0, 0, 0, 0], 0.0).is_err());
    }

    #[test]
    fn at_risk_counts_follow_boundary_ties() {
        // F, D, C, B, A
        let e2021 = label_at_risk(&cohort([26, 4, 8, 16, 3]), 15).unwrap();
        assert_eq!(e2021.at_risk_count(), 26);
        assert_eq!(e2021.boundary, Grade::F);
        let d2022 = label_at_risk(&cohort([17, 8, 8, 10, 50]), 15).unwrap();
        assert_eq!(d2022.at_risk_count(), 17);
    }

    #[test]
    fn threshold_above_cohort_labels_everyone() {
        let l = label_at_risk(&cohort([1, 1, 1, 1, 1]), 15).unwrap();
        assert!(l.clamped);
        assert_eq!(l.at_risk_count(), 5);
        assert!(label_at_risk(&cohort([1, 1, 1, 1, 1]), 0).is_err());
    }

    #[test]
    fn ingest_sorts_by_student_then_time() {
        let f = temp_csv(
            "student_id,material_id,operation,event_time\n\
             s2,m1,NEXT,2024-04-01T10:00:05Z\n\
             s1,m1,OPEN,2024-04-01T10:00:02+09:00\n\
             s1,m1,PREV,2024-04-01T00:00:00Z\n",
        );
        let log = ingest_events(f.path(), &OperationVocab::default()).unwrap();
        assert_eq!(log.records.len(), 3);
        assert_eq!(log.other_count, 0);
        let ids: Vec<_> = log.records.iter().map(|r| (r.student_id.as_str(), r.operation.as_str())).collect();
        // 10:00:02+09:00 is 01:00:02Z, after 00:00:00Z
        assert_eq!(ids, [("s1", "PREV"), ("s1", "OPEN"), ("s2", "NEXT")]);
    }

    #[test]
    fn unknown_operation_goes_to_other() {
        let f = temp_csv(
            "student_id,material_id,operation,event_time\n\
             s1,m1,HIGHLIGHT,2024-04-01T10:00:00Z\n\
             s1,m1,next,2024-04-01T10:00:01Z\n",
        );
        let log = ingest_events(f.path(), &OperationVocab::default()).unwrap();
        assert_eq!(log.other_count, 1);
        assert_eq!(log.records[0].operation, OTHER_OPERATION);
        assert_eq!(log.records[1].operation, "NEXT");
    }

    #[test]
    fn bad_timestamp_names_line() {
        let f = temp_csv(
            "student_id,material_id,operation,event_time\n\
             s1,m1,OPEN,not-a-date\n",
        );
        match ingest_events(f.path(), &OperationVocab::default()) {
            Err(Error::Record { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_distinct_error() {
        let f = temp_csv("");
        assert!(matches!(
            ingest_events(f.path(), &OperationVocab::default()),
            Err(Error::EmptyFile { .. })
        ));
        let header_only = temp_csv("student_id,material_id,operation,event_time\n");
        assert!(matches!(
            ingest_events(header_only.path(), &OperationVocab::default()),
            Err(Error::EmptyFile { .. })
        ));
    }

    #[test]
    fn missing_column_reported() {
        let f = temp_csv("student_id,operation,event_time\ns1,OPEN,2024-04-01T10:00:00Z\n");
        assert!(matches!(
            ingest_events(f.path(), &OperationVocab::default()),
            Err(Error::MissingColumn { .. })
        ));
    }

    #[test]
    fn duplicate_grade_rejected() {
        let f = temp_csv("student_id,grade\ns1,A\ns1,B\n");
        assert!(matches!(ingest_grades(f.path()), Err(Error::Record { line: 3, .. })));
        let bad = temp_csv("student_id,grade\ns1,E\n");
        assert!(ingest_grades(bad.path()).is_err());
    }

    fn weekly_fixture() -> (Vec<EventRecord>, LectureSchedule) {
        let start = parse_timestamp("2024-04-01T00:00:00Z").unwrap();
        let week = chrono::Duration::days(7);
        let ends: Vec<_> = (1..=8).map(|k| start + week * k).collect();
        let mut events = Vec::new();
        // window w gets w events for each of two students
        for w in 1..=8 {
            for n in 0..w {
                for s in ["a", "b"] {
                    events.push(EventRecord {
                        student_id: s.into(),
                        material_id: "m".into(),
                        operation: "NEXT".into(),
                        event_time: start + week * (w - 1) + chrono::Duration::hours(n as i64 + 1),
                    });
                }
            }
        }
        events.sort_by(|a, b| (&a.student_id, a.event_time).cmp(&(&b.student_id, b.event_time)));
        (events, LectureSchedule::new(Some(start), ends).unwrap())
    }

    #[test]
    fn truncation_keeps_leading_windows() {
        let (events, schedule) = weekly_fixture();
        assert_eq!(truncate_events(&events, &schedule, 8).unwrap(), events);
        // windows 1..=4 hold 1+2+3+4 events per student
        let first4 = truncate_events(&events, &schedule, 4).unwrap();
        assert_eq!(first4.len(), 2 * 10);
        assert!(first4.windows(2).all(|w| w[0].student_id < w[1].student_id
            || (w[0].student_id == w[1].student_id && w[0].event_time <= w[1].event_time)));
        assert!(truncate_events(&events, &schedule, 0).is_err());
        assert!(truncate_events(&events, &schedule, 9).is_err());
    }

    #[test]
    fn schedule_must_increase() {
        let t = parse_timestamp("2024-04-01T00:00:00Z").unwrap();
        assert!(LectureSchedule::new(None, vec![t, t]).is_err());
        assert!(LectureSchedule::new(Some(t), vec![t]).is_err());
    }

    #[test]
    fn schedule_roundtrip() {
        let (_, schedule) = weekly_fixture();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("schedule.csv");
        write_schedule(&p, &schedule).unwrap();
        assert_eq!(read_schedule(&p).unwrap(), schedule);
    }

    #[test]
    fn inactive_students_flagged() {
        let (events, _) = weekly_fixture();
        let grades = vec![GradeRecord::new("a", Grade::A), GradeRecord::new("z", Grade::F)];
        assert_eq!(inactive_students(&events, &grades), ["z"]);
    }

    #[test]
    fn client_dataset_scores_per_client() {
        let c = ClientDataset::new(
            "c",
            vec!["x".into(), "y".into()],
            vec![vec![1.0], vec![2.0]],
            vec![Grade::F, Grade::A],
            0.95,
            8,
        )
        .unwrap();
        assert_eq!(c.scored_grades(), [0.475, 0.95]);
        assert!(ClientDataset::new("c", vec!["x".into(), "x".into()], vec![vec![1.0], vec![2.0]], vec![Grade::F, Grade::A], 0.95, 8).is_err());
    }
}
