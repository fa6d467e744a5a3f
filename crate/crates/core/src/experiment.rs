//! Experiment configuration and the operations behind the `fedrank` binary.
//!
//! A single JSON document describes data sources, the training matrix
//! (modes x differential flag x runs) and evaluation settings. Relative
//! paths inside it resolve against the directory holding the file.
//!
//! ```json
//! {
//!   "seed": 7,
//!   "runs": 2,
//!   "modes": ["federated", "centralized"],
//!   "differential": [true, false],
//!   "threshold_rank": 15,
//!   "federation": { "rounds": 30, "max_pairs_per_client": 1500,
//!                   "mlp": { "input_dim": 100, "learning_rate": 0.01 } },
//!   "train": [ { "id": "A-2019", "grades": "a/grades.csv", "features": "a/features.csv" } ],
//!   "test":  [ { "id": "A-2022", "grades": "t/grades.csv",
//!                "events": "t/events.csv", "schedule": "t/schedule.csv" } ]
//! }
//! ```
//!
//! `generate` reads a `synthetic` section instead of `train`/`test` and
//! writes both, plus a resolved `experiment.json` next to them. With
//! `"reference_shapes": true` any empty course list falls back to the
//! built-in cohort and hold-out shapes; with `logs` present the courses are
//! written as event logs rather than feature tables.
//!
//! ```json
//! { "seed": 3, "synthetic": { "reference_shapes": true, "logs": { "base_rate": 3.0 } } }
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    ingest_events, ingest_grades, read_schedule, write_events, write_grades, write_schedule, ClientDataset,
    DEFAULT_MAX_SCORE, DEFAULT_THRESHOLD_RANK,
};
use crate::error::{Error, Result};
use crate::features::{read_feature_table, write_feature_table, FeatureSpec, FeatureTable};
use crate::federation::{derive_seed, run, FederationConfig, TrainingMode, TrainingRunReport};
use crate::metrics::{write_metrics_csv, MetricsRow};
use crate::model::TrainedModel;
use crate::pipeline::{client_from_logs, evaluate_runs};
use crate::synth::{generate, generate_logs, CourseShape, LogSpec, SynthSpec};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "FEDRANK_OUT";

/// Files describing one course. Either `features` or `events` + `schedule`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CourseFiles {
    pub id: String,
    pub grades: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lectures: Option<usize>,
}

/// Synthetic data section used by `generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSection {
    /// Training courses come from `spec.courses`; when that list is empty
    /// and `reference_shapes` is set, the twelve reference training shapes
    /// and five hold-out shapes are used.
    #[serde(default)]
    pub spec: SynthSpec,
    #[serde(default)]
    pub reference_shapes: bool,
    /// Hold-out courses generated with the same shared patterns.
    #[serde(default)]
    pub test_courses: Vec<CourseShape>,
    /// Emit event logs instead of feature tables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logs: Option<LogSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub runs: usize,
    pub modes: Vec<TrainingMode>,
    pub differential: Vec<bool>,
    pub max_score: f64,
    pub threshold_rank: usize,
    pub federation: FederationConfig,
    pub features: FeatureSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSection>,
    pub train: Vec<CourseFiles>,
    pub test: Vec<CourseFiles>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            runs: 1,
            modes: vec![TrainingMode::Federated],
            differential: vec![true],
            max_score: DEFAULT_MAX_SCORE,
            threshold_rank: DEFAULT_THRESHOLD_RANK,
            federation: FederationConfig::default(),
            features: FeatureSpec::default(),
            synthetic: None,
            train: Vec::new(),
            test: Vec::new(),
        }
    }
}

/// A config together with the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: ExperimentConfig = serde_json::from_str(&text)?;
        if config.runs == 0 || config.modes.is_empty() || config.differential.is_empty() {
            return Err(Error::invalid("runs, modes and differential must be non-empty"));
        }
        Ok(LoadedConfig {
            config,
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn resolved(&self, files: &CourseFiles) -> CourseFiles {
        CourseFiles {
            grades: self.resolve(&files.grades),
            features: files.features.as_deref().map(|p| self.resolve(p)),
            events: files.events.as_deref().map(|p| self.resolve(p)),
            schedule: files.schedule.as_deref().map(|p| self.resolve(p)),
            ..files.clone()
        }
    }

    pub fn load_train(&self) -> Result<Vec<ClientDataset>> {
        self.config
            .train
            .iter()
            .map(|f| load_course(&self.resolved(f), &self.config.features, self.config.max_score, None))
            .collect()
    }

    /// Content hash over every training input file.
    pub fn input_hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        for f in &self.config.train {
            let f = self.resolved(f);
            h.update(f.id.as_bytes());
            for p in [Some(&f.grades), f.features.as_ref(), f.events.as_ref(), f.schedule.as_ref()]
                .into_iter()
                .flatten()
            {
                h.update(fs::read(p).map_err(|e| Error::io(p, e))?);
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    pub fn test_files(&self) -> Vec<CourseFiles> {
        self.config.test.iter().map(|f| self.resolved(f)).collect()
    }
}

/// Reads one course into a dataset. Log-based courses are featurized with
/// `spec` over lectures `1..=k` (all lectures when `k` is `None`).
pub fn load_course(files: &CourseFiles, spec: &FeatureSpec, max_score: f64, k: Option<usize>) -> Result<ClientDataset> {
    let grades = ingest_grades(&files.grades)?;
    match (&files.features, &files.events, &files.schedule) {
        (Some(features), _, _) => {
            let (dim, table) = read_feature_table(features)?;
            ClientDataset::from_tables(&files.id, &table, dim, &grades, max_score, files.lectures.unwrap_or(1))
        }
        (None, Some(events), Some(schedule)) => {
            let log = ingest_events(events, &spec.vocab)?;
            let schedule = read_schedule(schedule)?;
            let k = k.unwrap_or(schedule.lecture_count());
            client_from_logs(&files.id, &log.records, &grades, &schedule, k, spec, max_score)
        }
        _ => Err(Error::invalid(format!(
            "course `{}` needs either `features` or both `events` and `schedule`",
            files.id
        ))),
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn dataset_table(c: &ClientDataset) -> FeatureTable {
    c.students().iter().cloned().zip(c.features().iter().cloned()).collect()
}

/// Writes the synthetic cohorts under `out/{train,test}/<id>/` and a ready
/// to run `experiment.json` pointing at them. Returns that file's path.
pub fn generate_cohorts(loaded: &LoadedConfig, out: &Path) -> Result<PathBuf> {
    let cfg = &loaded.config;
    let section = cfg
        .synthetic
        .as_ref()
        .ok_or_else(|| Error::invalid("config has no `synthetic` section"))?;
    let mut spec = section.spec.clone();
    let mut test_courses = section.test_courses.clone();
    if section.reference_shapes {
        if spec.courses.is_empty() {
            spec.courses = SynthSpec::training_like(spec.seed).courses;
        }
        if test_courses.is_empty() {
            test_courses = SynthSpec::test_courses();
        }
    }
    let n_train = spec.courses.len();
    spec.courses.extend(test_courses);
    spec.max_score = cfg.max_score;

    let mut train = Vec::new();
    let mut test = Vec::new();
    let place = |k: usize, id: &str| -> Result<(PathBuf, PathBuf)> {
        let split = if k < n_train { "train" } else { "test" };
        let rel = PathBuf::from(split).join(id);
        let dir = out.join(&rel);
        create_dir(&dir)?;
        Ok((rel, dir))
    };

    if let Some(logs) = &section.logs {
        for (k, course) in generate_logs(&spec, logs)?.into_iter().enumerate() {
            let (rel, dir) = place(k, &course.client_id)?;
            write_events(dir.join("events.csv"), &course.events)?;
            write_grades(dir.join("grades.csv"), &course.grades)?;
            write_schedule(dir.join("schedule.csv"), &course.schedule)?;
            let files = CourseFiles {
                id: course.client_id.clone(),
                grades: rel.join("grades.csv"),
                features: None,
                events: Some(rel.join("events.csv")),
                schedule: Some(rel.join("schedule.csv")),
                lectures: Some(course.schedule.lecture_count()),
            };
            if k < n_train { train.push(files) } else { test.push(files) }
        }
    } else {
        for (k, client) in generate(&spec)?.into_iter().enumerate() {
            let (rel, dir) = place(k, client.client_id())?;
            write_feature_table(dir.join("features.csv"), &dataset_table(&client))?;
            write_grades(dir.join("grades.csv"), &client.grade_records())?;
            let files = CourseFiles {
                id: client.client_id().to_string(),
                grades: rel.join("grades.csv"),
                features: Some(rel.join("features.csv")),
                events: None,
                schedule: None,
                lectures: Some(client.lecture_count()),
            };
            if k < n_train { train.push(files) } else { test.push(files) }
        }
    }

    let mut next = cfg.clone();
    next.train = train;
    next.test = test;
    if section.logs.is_none() {
        next.federation.mlp.input_dim = spec.feature_dim;
    } else {
        next.features.vocab = section.logs.as_ref().map(|l| l.vocab.clone()).unwrap_or_default();
        next.federation.mlp.input_dim = next.features.dimension();
    }
    let path = out.join("experiment.json");
    write_json(&path, &next)?;
    Ok(path)
}

/// One cell of the training matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunKey {
    pub mode: TrainingMode,
    pub differential: bool,
    pub run: usize,
}

impl RunKey {
    /// Model family name shared by all runs of one (mode, differential) cell.
    pub fn method(&self) -> String {
        format!("{}-{}", self.mode, if self.differential { "diff" } else { "plain" })
    }

    pub fn name(&self) -> String {
        format!("{}-run{:02}", self.method(), self.run)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub name: String,
    pub run: usize,
    pub input_hash: String,
    #[serde(flatten)]
    pub report: TrainingRunReport,
}

#[derive(Debug, Clone, Serialize)]
struct RunMeta {
    name: String,
    wall_clock_seconds: f64,
    finished_at: String,
}

/// Trains every cell of the matrix, optionally restricted to one mode and
/// differential setting, writing `models/<name>.model` and
/// `reports/<name>.json` (timing goes to `<name>.meta.json`).
pub fn train_matrix(
    loaded: &LoadedConfig,
    out: &Path,
    mode: Option<TrainingMode>,
    differential: Option<bool>,
) -> Result<Vec<RunRecord>> {
    let cfg = &loaded.config;
    let clients = loaded.load_train()?;
    if clients.is_empty() {
        return Err(Error::EmptyInput("training courses"));
    }
    let input_hash = loaded.input_hash()?;
    let uses_logs = cfg.train.iter().any(|f| f.features.is_none());
    let models_dir = out.join("models");
    let reports_dir = out.join("reports");
    create_dir(&models_dir)?;
    create_dir(&reports_dir)?;

    let modes: Vec<TrainingMode> = mode.map_or_else(|| cfg.modes.clone(), |m| vec![m]);
    let diffs: Vec<bool> = differential.map_or_else(|| cfg.differential.clone(), |d| vec![d]);
    let mut records = Vec::new();
    for &m in &modes {
        for &d in &diffs {
            for run_index in 0..cfg.runs {
                let key = RunKey {
                    mode: m,
                    differential: d,
                    run: run_index,
                };
                let fed = FederationConfig {
                    mode: m,
                    use_differential: d,
                    seed: derive_seed(cfg.seed, &[run_index as u64]),
                    ..cfg.federation.clone()
                };
                let report = run(&clients, &fed)?;
                let model = TrainedModel::new(
                    report.final_params.clone(),
                    fed.mlp.dropout_rate,
                    d,
                    uses_logs.then(|| cfg.features.clone()),
                );
                let name = key.name();
                model.save(models_dir.join(format!("{name}.model")))?;
                let record = RunRecord {
                    name: name.clone(),
                    run: run_index,
                    input_hash: input_hash.clone(),
                    report,
                };
                write_json(&reports_dir.join(format!("{name}.json")), &record)?;
                write_json(
                    &reports_dir.join(format!("{name}.meta.json")),
                    &RunMeta {
                        name,
                        wall_clock_seconds: record.report.wall_clock_seconds,
                        finished_at: chrono::Utc::now().to_rfc3339(),
                    },
                )?;
                records.push(record);
            }
        }
    }
    Ok(records)
}

/// Groups `<method>-runNN.model` files in `dir` by method.
pub fn discover_models(dir: &Path) -> Result<BTreeMap<String, Vec<PathBuf>>> {
    let mut groups: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("model") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let method = stem.rsplit_once("-run").map_or(stem, |(m, _)| m).to_string();
        groups.entry(method).or_default().push(path);
    }
    for paths in groups.values_mut() {
        paths.sort();
    }
    Ok(groups)
}

/// Evaluates each model group on each course; one row per (course, group)
/// carrying the per-metric mean over the group's runs.
pub fn evaluate_groups(
    groups: &BTreeMap<String, Vec<TrainedModel>>,
    courses: &[CourseFiles],
    threshold_rank: usize,
    max_score: f64,
) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    for files in courses {
        for (method, models) in groups {
            let first = models.first().ok_or(Error::EmptyInput("models"))?;
            let spec = first.feature_spec.clone().unwrap_or_default();
            if files.features.is_none() {
                for m in models {
                    m.check_feature_spec(&spec)?;
                }
            }
            let client = load_course(files, &spec, max_score, None)?;
            for m in models {
                m.check_dimension(client.feature_dim())?;
            }
            rows.push(MetricsRow {
                course: files.id.clone(),
                method: method.clone(),
                runs: models.len(),
                metrics: evaluate_runs(models, &client, threshold_rank)?,
            });
        }
    }
    Ok(rows)
}

/// Writes `metrics.csv` and `metrics.json` into `out`.
pub fn write_metrics(out: &Path, rows: &[MetricsRow]) -> Result<()> {
    create_dir(out)?;
    write_metrics_csv(out.join("metrics.csv"), rows)?;
    write_json(&out.join("metrics.json"), &rows)
}

pub fn load_models(paths: &[PathBuf]) -> Result<Vec<TrainedModel>> {
    paths.iter().map(TrainedModel::load).collect()
}

/// Default output directory: `$FEDRANK_OUT`, else `fedrank-out`.
pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("fedrank-out"), PathBuf::from)
}
