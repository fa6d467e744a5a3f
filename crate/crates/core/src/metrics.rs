//! Risk ranking and its evaluation: Top-n precision, nDCG and PR-AUC.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::csv_io;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedStudent {
    pub student_id: String,
    pub score: f64,
    pub at_risk: bool,
    /// Scored grade `G_m`; relevance for nDCG is `1 - G_m`.
    pub grade_score: f64,
}

/// Students in ascending predicted score (highest risk first); equal scores
/// are ordered by student id.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskRanking {
    entries: Vec<RankedStudent>,
}

fn describe_diff(a: &BTreeSet<&String>, b: &BTreeSet<&String>, what: &str) -> Option<String> {
    let missing: Vec<&str> = a.difference(b).map(|s| s.as_str()).collect();
    (!missing.is_empty()).then(|| format!("missing from {what}: {}", missing.join(", ")))
}

pub fn make_ranking(
    scores: &BTreeMap<String, f64>,
    labels: &BTreeMap<String, bool>,
    grades: &BTreeMap<String, f64>,
) -> Result<RiskRanking> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("scores"));
    }
    let ks: BTreeSet<&String> = scores.keys().collect();
    let kl: BTreeSet<&String> = labels.keys().collect();
    let kg: BTreeSet<&String> = grades.keys().collect();
    let problems: Vec<String> = [
        describe_diff(&ks, &kl, "labels"),
        describe_diff(&kl, &ks, "scores"),
        describe_diff(&ks, &kg, "grades"),
        describe_diff(&kg, &ks, "scores"),
    ]
    .into_iter()
    .flatten()
    .collect();
    if !problems.is_empty() {
        return Err(Error::KeyMismatch(problems.join("; ")));
    }
    if let Some((id, _)) = scores.iter().find(|(_, v)| v.is_nan()) {
        return Err(Error::invalid(format!("score of `{id}` is NaN")));
    }
    let mut entries: Vec<RankedStudent> = scores
        .iter()
        .map(|(id, &score)| RankedStudent {
            student_id: id.clone(),
            score,
            at_risk: labels[id],
            grade_score: grades[id],
        })
        .collect();
    entries.sort_by(|a, b| {
        a.score
            .total_cmp(&b.score)
            .then_with(|| a.student_id.cmp(&b.student_id))
    });
    Ok(RiskRanking { entries })
}

impl RiskRanking {
    /// Builds a ranking from entries already in the desired order.
    pub fn from_ordered(entries: Vec<RankedStudent>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyInput("ranking"));
        }
        Ok(RiskRanking { entries })
    }

    pub fn entries(&self) -> &[RankedStudent] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn at_risk_count(&self) -> usize {
        self.entries.iter().filter(|e| e.at_risk).count()
    }

    /// Same students in a uniformly random order.
    pub fn shuffled<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Self {
        let mut entries = self.entries.clone();
        entries.shuffle(rng);
        RiskRanking { entries }
    }
}

/// Fraction of truly at-risk students among the first `n`.
pub fn top_n_precision(r: &RiskRanking, n: usize) -> Result<f64> {
    if n == 0 || n > r.len() {
        return Err(Error::invalid(format!("n={n} outside 1..={}", r.len())));
    }
    let hits = r.entries[..n].iter().filter(|e| e.at_risk).count();
    Ok(hits as f64 / n as f64)
}

fn dcg(relevance: impl Iterator<Item = f64>) -> f64 {
    relevance
        .enumerate()
        .map(|(k, rel)| rel / ((k + 2) as f64).log2())
        .sum()
}

/// nDCG over the full ranking with relevance `1 - G_m`.
pub fn ndcg(r: &RiskRanking) -> f64 {
    let actual = dcg(r.entries.iter().map(|e| 1.0 - e.grade_score));
    let mut ideal_rel: Vec<f64> = r.entries.iter().map(|e| 1.0 - e.grade_score).collect();
    ideal_rel.sort_by(|a, b| b.total_cmp(a));
    let ideal = dcg(ideal_rel.into_iter());
    if ideal == 0.0 {
        warn!("all relevances are zero; nDCG defined as 1");
        return 1.0;
    }
    if actual == ideal {
        return 1.0;
    }
    actual / ideal
}

/// One point of the Top-n sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub n: usize,
    pub recall: f64,
    pub precision: f64,
}

/// `(recall_n, precision_n)` for `n = 1..=N`.
pub fn pr_curve(r: &RiskRanking) -> Result<Vec<PrPoint>> {
    let positives = r.at_risk_count();
    if positives == 0 {
        return Err(Error::NoAtRisk);
    }
    let mut hits = 0usize;
    Ok(r.entries
        .iter()
        .enumerate()
        .map(|(k, e)| {
            hits += e.at_risk as usize;
            PrPoint {
                n: k + 1,
                recall: hits as f64 / positives as f64,
                precision: hits as f64 / (k + 1) as f64,
            }
        })
        .collect())
}

/// Trapezoidal area under the Top-n precision/recall sweep, starting from
/// `(0, precision_1)`. Points sharing a recall value contribute no area, so
/// each recall step is bridged from the last point at the lower recall to
/// the first point at the higher one.
pub fn pr_auc(r: &RiskRanking) -> Result<f64> {
    let curve = pr_curve(r)?;
    let mut prev = (0.0, curve[0].precision);
    let mut area = 0.0;
    for p in &curve {
        area += (p.recall - prev.0) * (p.precision + prev.1) / 2.0;
        prev = (p.recall, p.precision);
    }
    Ok(area)
}

/// Metrics for one ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision_at_5: f64,
    pub precision_at_10: f64,
    pub precision_at_15: f64,
    pub precision_at_risk: f64,
    pub ndcg: f64,
    pub pr_auc: f64,
    pub at_risk_count: usize,
    pub students: usize,
}

pub const TOP_N: [usize; 3] = [5, 10, 15];

pub fn evaluate(r: &RiskRanking) -> Result<MetricsReport> {
    let at_risk = r.at_risk_count();
    if at_risk == 0 {
        return Err(Error::NoAtRisk);
    }
    Ok(MetricsReport {
        precision_at_5: top_n_precision(r, TOP_N[0])?,
        precision_at_10: top_n_precision(r, TOP_N[1])?,
        precision_at_15: top_n_precision(r, TOP_N[2])?,
        precision_at_risk: top_n_precision(r, at_risk)?,
        ndcg: ndcg(r),
        pr_auc: pr_auc(r)?,
        at_risk_count: at_risk,
        students: r.len(),
    })
}

impl MetricsReport {
    /// Per-metric mean over several runs on the same cohort.
    pub fn mean(reports: &[MetricsReport]) -> Result<MetricsReport> {
        let first = reports.first().ok_or(Error::EmptyInput("metric reports"))?;
        let k = reports.len() as f64;
        let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
        Ok(MetricsReport {
            precision_at_5: avg(|m| m.precision_at_5),
            precision_at_10: avg(|m| m.precision_at_10),
            precision_at_15: avg(|m| m.precision_at_15),
            precision_at_risk: avg(|m| m.precision_at_risk),
            ndcg: avg(|m| m.ndcg),
            pr_auc: avg(|m| m.pr_auc),
            at_risk_count: first.at_risk_count,
            students: first.students,
        })
    }
}

/// Mean metrics over `shuffles` uniformly random orderings.
pub fn random_baseline(r: &RiskRanking, shuffles: usize, seed: u64) -> Result<MetricsReport> {
    if shuffles == 0 {
        return Err(Error::invalid("shuffles must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reports = (0..shuffles)
        .map(|_| evaluate(&r.shuffled(&mut rng)))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::mean(&reports)
}

/// One row of a metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub course: String,
    pub method: String,
    pub runs: usize,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

pub const METRICS_HEADER: [&str; 11] = [
    "course",
    "method",
    "runs",
    "top5",
    "top10",
    "top15",
    "top_at_risk",
    "ndcg",
    "pr_auc",
    "at_risk",
    "students",
];

fn fmt_metric(v: f64) -> String {
    format!("{v:.6}")
}

impl MetricsRow {
    pub fn csv_fields(&self) -> Vec<String> {
        let m = &self.metrics;
        vec![
            self.course.clone(),
            self.method.clone(),
            self.runs.to_string(),
            fmt_metric(m.precision_at_5),
            fmt_metric(m.precision_at_10),
            fmt_metric(m.precision_at_15),
            fmt_metric(m.precision_at_risk),
            fmt_metric(m.ndcg),
            fmt_metric(m.pr_auc),
            m.at_risk_count.to_string(),
            m.students.to_string(),
        ]
    }
}

pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record(r.csv_fields())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_pr_curve_csv(path: impl AsRef<Path>, points: &[PrPoint]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["n", "recall", "precision"])?;
    for p in points {
        w.write_record([p.n.to_string(), fmt_metric(p.recall), fmt_metric(p.precision)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
