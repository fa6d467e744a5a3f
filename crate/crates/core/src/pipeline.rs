//! Glue between records, features, models and metrics.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;
use std::path::Path;

use serde::Serialize;

use crate::data::{csv_io, label_at_risk, truncate_events, ClientDataset, EventRecord, GradeRecord, LectureSchedule};
use crate::error::{Error, Result};
use crate::features::{featurize_cohort, CourseSpan, FeatureSpec};
use crate::metrics::{evaluate, make_ranking, random_baseline, MetricsReport, MetricsRow, RiskRanking, METRICS_HEADER};
use crate::model::TrainedModel;

/// Span covered by lectures `1..=k`. Starts at the schedule's course start,
/// or at the earliest event when the schedule has none.
pub fn observed_span(events: &[EventRecord], schedule: &LectureSchedule, k: usize) -> Result<CourseSpan> {
    let end = schedule.window_end(k)?;
    let start = match schedule.start {
        Some(s) => s,
        None => events
            .iter()
            .map(|e| e.event_time)
            .min()
            .ok_or(Error::EmptyInput("events"))?,
    };
    CourseSpan::new(start, end)
}

/// Featurizes the logs of lectures `1..=k` for every graded student.
///
/// The time buckets divide the observed span only, so a student with steady
/// activity gets roughly `k / K` times their full-course vector.
pub fn client_from_logs(
    client_id: &str,
    events: &[EventRecord],
    grades: &[GradeRecord],
    schedule: &LectureSchedule,
    k: usize,
    spec: &FeatureSpec,
    max_score: f64,
) -> Result<ClientDataset> {
    let kept = truncate_events(events, schedule, k)?;
    let span = observed_span(events, schedule, k)?;
    let students: Vec<String> = grades.iter().map(|g| g.student_id.clone()).collect();
    let graded: std::collections::BTreeSet<&str> = students.iter().map(String::as_str).collect();
    let kept: Vec<EventRecord> = kept
        .into_iter()
        .filter(|e| graded.contains(e.student_id.as_str()))
        .collect();
    let table = featurize_cohort(&kept, &students, spec, &span)?;
    ClientDataset::from_tables(
        client_id,
        &table,
        spec.dimension(),
        grades,
        max_score,
        schedule.lecture_count(),
    )
}

/// Ranks one course with `model` against its at-risk labels.
pub fn rank_course(model: &TrainedModel, client: &ClientDataset, threshold_rank: usize) -> Result<RiskRanking> {
    let scores = model.score_students(client.students(), client.features())?;
    let labels = label_at_risk(&client.grade_records(), threshold_rank)?.labels;
    let grades: BTreeMap<String, f64> = client
        .students()
        .iter()
        .cloned()
        .zip(client.scored_grades().iter().copied())
        .collect();
    make_ranking(&scores, &labels, &grades)
}

pub fn evaluate_course(model: &TrainedModel, client: &ClientDataset, threshold_rank: usize) -> Result<MetricsReport> {
    evaluate(&rank_course(model, client, threshold_rank)?)
}

/// Mean metrics of several models on the same course.
pub fn evaluate_runs(models: &[TrainedModel], client: &ClientDataset, threshold_rank: usize) -> Result<MetricsReport> {
    let reports = models
        .iter()
        .map(|m| evaluate_course(m, client, threshold_rank))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::mean(&reports)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub k: usize,
    /// `model` or `random`.
    pub method: String,
    pub metrics: MetricsReport,
}

/// Options for [`early_sweep`].
#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub lectures: RangeInclusive<usize>,
    pub threshold_rank: usize,
    pub max_score: f64,
    pub shuffles: usize,
    pub seed: u64,
}

/// For each `k`, truncates the logs to lectures `1..=k`, scores the course
/// with every model (metrics averaged over models) and adds a random-order
/// baseline row.
pub fn early_sweep(
    models: &[TrainedModel],
    client_id: &str,
    events: &[EventRecord],
    grades: &[GradeRecord],
    schedule: &LectureSchedule,
    opts: &SweepOptions,
) -> Result<Vec<SweepRow>> {
    let first = models.first().ok_or(Error::EmptyInput("models"))?;
    let spec = first
        .feature_spec
        .as_ref()
        .ok_or_else(|| Error::IncompatibleModel("model was trained on external features; cannot featurize logs".into()))?;
    for m in models {
        m.check_feature_spec(spec)?;
    }
    let (lo, hi) = (*opts.lectures.start(), *opts.lectures.end());
    if lo == 0 || lo > hi || hi > schedule.lecture_count() {
        return Err(Error::invalid(format!(
            "lecture range {lo}..={hi} outside 1..={}",
            schedule.lecture_count()
        )));
    }
    let mut rows = Vec::new();
    for k in lo..=hi {
        let client = client_from_logs(client_id, events, grades, schedule, k, spec, opts.max_score)?;
        rows.push(SweepRow {
            k,
            method: "model".into(),
            metrics: evaluate_runs(models, &client, opts.threshold_rank)?,
        });
        let reference = rank_course(first, &client, opts.threshold_rank)?;
        rows.push(SweepRow {
            k,
            method: "random".into(),
            metrics: random_baseline(&reference, opts.shuffles, opts.seed)?,
        });
    }
    Ok(rows)
}

/// Writes sweep rows as `k` followed by the metrics table columns. The
/// `runs` column holds the model count for model rows and the shuffle count
/// for random rows.
pub fn write_sweep_csv(
    path: impl AsRef<Path>,
    course: &str,
    models: usize,
    shuffles: usize,
    rows: &[SweepRow],
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut header = vec!["k"];
    header.extend(METRICS_HEADER);
    w.write_record(&header)?;
    for r in rows {
        let row = MetricsRow {
            course: course.to_string(),
            method: r.method.clone(),
            runs: if r.method == "random" { shuffles } else { models },
            metrics: r.metrics.clone(),
        };
        let mut rec = vec![r.k.to_string()];
        rec.extend(row.csv_fields());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
