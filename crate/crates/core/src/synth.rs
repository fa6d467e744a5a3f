//! Synthetic multi-course cohorts with tunable grade signal, per-course
//! feature shift and grade imbalance.
//!
//! Each course `k` draws a multiplicative scale `s_k` and an additive offset
//! `o_k`; a student with grade ordinal `m` gets a latent ability
//! `a = (m - 1) / 4 + noise` and features
//!
//! ```text
//! v = s_k * (baseline + signal_strength * a * direction) + o_k + noise
//! ```
//!
//! `baseline` and `direction` are non-negative and shared by all courses.
//! Within one course the offset cancels in `v_i - v_j`, which is exactly the
//! shift that differential features remove.

use chrono::Duration;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{
    parse_timestamp, ClientDataset, EventRecord, Grade, GradeRecord, LectureSchedule, OperationVocab, Timestamp,
    DEFAULT_MAX_SCORE,
};
use crate::error::{Error, Result};
use crate::federation::derive_seed;
use crate::features::CourseSpan;

/// Grade counts (A, B, C, D, F) and lecture counts of twelve training courses.
pub const TRAINING_COURSES: [(&str, [u64; 5], usize, usize); 12] = [
    ("A-2019", [15, 9, 6, 10, 12], 52, 8),
    ("A-2020", [22, 23, 5, 3, 7], 60, 7),
    ("A-2021", [9, 11, 10, 18, 6], 54, 8),
    ("B-2019", [30, 103, 28, 1, 1], 163, 8),
    ("C-2021-1", [9, 53, 32, 7, 6], 107, 15),
    ("C-2021-2", [15, 88, 37, 26, 9], 175, 15),
    ("D-2020", [61, 7, 1, 2, 34], 105, 14),
    ("D-2021", [60, 3, 6, 4, 33], 106, 15),
    ("E-2020-1", [17, 23, 12, 8, 13], 73, 14),
    ("E-2020-2", [0, 2, 8, 21, 25], 56, 15),
    ("F-2021", [71, 13, 4, 3, 3], 150, 14),
    ("G-2021", [26, 3, 3, 0, 3], 35, 16),
];

/// Grade counts (A, B, C, D, F) and lecture counts of five hold-out courses.
pub const TEST_COURSES: [(&str, [u64; 5], usize); 5] = [
    ("A-2022", [17, 6, 5, 22, 2], 8),
    ("B-2020", [37, 38, 12, 2, 4], 7),
    ("C-2022-1", [17, 37, 34, 4, 4], 15),
    ("D-2022", [50, 10, 8, 8, 17], 16),
    ("E-2021", [3, 16, 8, 4, 26], 16),
];

/// Reorders (A, B, C, D, F) counts into grade ordinal order (F..A).
pub fn counts_f_to_a(a_to_f: [u64; 5]) -> [u64; 5] {
    let [a, b, c, d, f] = a_to_f;
    [f, d, c, b, a]
}

/// Grade records with the given (A, B, C, D, F) counts.
pub fn cohort_from_counts(prefix: &str, a_to_f: [u64; 5]) -> Vec<GradeRecord> {
    let mut out = Vec::new();
    for (grade, count) in Grade::ALL.iter().zip(counts_f_to_a(a_to_f)) {
        for i in 0..count {
            out.push(GradeRecord::new(format!("{prefix}-{}{i:03}", grade.letter()), *grade));
        }
    }
    out
}

/// One course to generate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CourseShape {
    pub id: String,
    pub students: usize,
    /// Grade probabilities in F, D, C, B, A order; normalized on use.
    pub grade_weights: [f64; 5],
    pub lectures: usize,
    /// Treat `grade_weights` as exact counts (summing to `students`) instead
    /// of sampling probabilities.
    #[serde(default)]
    pub exact_counts: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub courses: Vec<CourseShape>,
    pub feature_dim: usize,
    pub signal_strength: f64,
    pub client_shift: f64,
    pub noise_std: f64,
    /// Adds the per-course offset `o_k`; switch off to isolate the scale.
    pub additive_offsets: bool,
    pub max_score: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            courses: Vec::new(),
            feature_dim: 100,
            signal_strength: 1.0,
            client_shift: 1.0,
            noise_std: 0.3,
            additive_offsets: true,
            max_score: DEFAULT_MAX_SCORE,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// `n_clients` courses of uniformly drawn size in `size_range`, all
    /// sharing one grade distribution.
    pub fn uniform(n_clients: usize, size_range: (usize, usize), grade_weights: [f64; 5], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5EED]));
        let courses = (0..n_clients)
            .map(|k| CourseShape {
                id: format!("client-{k:02}"),
                students: rng.random_range(size_range.0..=size_range.1),
                grade_weights,
                lectures: 15,
                exact_counts: false,
            })
            .collect();
        SynthSpec {
            courses,
            seed,
            ..Default::default()
        }
    }

    /// Twelve courses with the sizes, grade mixes and lecture counts of the
    /// reference training cohort (1136 students).
    pub fn training_like(seed: u64) -> Self {
        let courses = TRAINING_COURSES
            .iter()
            .map(|(id, counts, n, lectures)| CourseShape {
                id: id.to_string(),
                students: *n,
                grade_weights: counts_f_to_a(*counts).map(|c| c as f64),
                lectures: *lectures,
                exact_counts: false,
            })
            .collect();
        SynthSpec {
            courses,
            seed,
            ..Default::default()
        }
    }

    /// The five hold-out course shapes, with exact grade counts.
    pub fn test_courses() -> Vec<CourseShape> {
        TEST_COURSES
            .iter()
            .map(|(id, counts, lectures)| CourseShape {
                id: id.to_string(),
                students: counts.iter().sum::<u64>() as usize,
                grade_weights: counts_f_to_a(*counts).map(|c| c as f64),
                lectures: *lectures,
                exact_counts: true,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.courses.is_empty() {
            return Err(Error::EmptyInput("synthetic courses"));
        }
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature_dim must be at least 1"));
        }
        for c in &self.courses {
            if c.students == 0 {
                return Err(Error::invalid(format!("course `{}` has zero students", c.id)));
            }
            if c.lectures == 0 {
                return Err(Error::invalid(format!("course `{}` has zero lectures", c.id)));
            }
            let bad_weight = c.grade_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite()));
            if bad_weight || c.grade_weights.iter().sum::<f64>() <= 0.0 {
                return Err(Error::invalid(format!("course `{}` has invalid grade weights", c.id)));
            }
        }
        for (name, v) in [
            ("signal_strength", self.signal_strength),
            ("client_shift", self.client_shift),
            ("noise_std", self.noise_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Per-course latent quantities, exposed for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct CourseShift {
    pub scale: f64,
    pub offset: Vec<f64>,
}

struct Shared {
    baseline: Vec<f64>,
    direction: Vec<f64>,
}

fn shared_patterns(dim: usize, seed: u64) -> Shared {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xBA5E]));
    let baseline = (0..dim).map(|_| rng.random_range(0.2..1.0)).collect();
    let direction = (0..dim).map(|_| rng.random_range(0.0..1.0)).collect();
    Shared { baseline, direction }
}

fn course_shift<R: Rng>(rng: &mut R, spec: &SynthSpec) -> CourseShift {
    let z: f64 = rng.sample(StandardNormal);
    let scale = (0.5 * spec.client_shift * z).exp();
    let offset = (0..spec.feature_dim)
        .map(|_| {
            let e: f64 = rng.sample(StandardNormal);
            if spec.additive_offsets {
                spec.client_shift * e
            } else {
                0.0
            }
        })
        .collect();
    CourseShift { scale, offset }
}

fn draw_grades<R: Rng>(rng: &mut R, course: &CourseShape) -> Result<Vec<Grade>> {
    if course.exact_counts {
        let mut grades: Vec<Grade> = Grade::ALL
            .iter()
            .zip(course.grade_weights)
            .flat_map(|(g, c)| std::iter::repeat_n(*g, c as usize))
            .collect();
        if grades.len() != course.students {
            return Err(Error::invalid(format!(
                "course `{}`: grade counts sum to {}, expected {}",
                course.id,
                grades.len(),
                course.students
            )));
        }
        grades.shuffle(rng);
        return Ok(grades);
    }
    let dist = WeightedIndex::new(course.grade_weights).map_err(|e| Error::invalid(e.to_string()))?;
    Ok((0..course.students)
        .map(|_| Grade::ALL[dist.sample(rng)])
        .collect())
}

fn ability<R: Rng>(rng: &mut R, grade: Grade, noise_std: f64) -> f64 {
    let jitter: f64 = rng.sample(StandardNormal);
    (grade.ordinal() - 1) as f64 / 4.0 + 0.25 * noise_std * jitter
}

/// Feature-level cohorts, one dataset per course.
pub fn generate(spec: &SynthSpec) -> Result<Vec<ClientDataset>> {
    Ok(generate_detailed(spec)?.into_iter().map(|(c, _)| c).collect())
}

/// Like [`generate`] but also returns each course's latent shift.
pub fn generate_detailed(spec: &SynthSpec) -> Result<Vec<(ClientDataset, CourseShift)>> {
    spec.validate()?;
    let shared = shared_patterns(spec.feature_dim, spec.seed);
    spec.courses
        .iter()
        .enumerate()
        .map(|(k, course)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[0xC0, k as u64]));
            let shift = course_shift(&mut rng, spec);
            let grades = draw_grades(&mut rng, course)?;
            let features = grades
                .iter()
                .map(|&g| {
                    let a = ability(&mut rng, g, spec.noise_std);
                    (0..spec.feature_dim)
                        .map(|d| {
                            let e: f64 = rng.sample(StandardNormal);
                            let base = shared.baseline[d] + spec.signal_strength * a * shared.direction[d];
                            shift.scale * base + spec.noise_std * e + shift.offset[d]
                        })
                        .collect()
                })
                .collect();
            let students = (0..course.students).map(|i| format!("{}-s{i:03}", course.id)).collect();
            let dataset = ClientDataset::new(course.id.clone(), students, features, grades, spec.max_score, course.lectures)?;
            Ok((dataset, shift))
        })
        .collect()
}

/// Event-log generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogSpec {
    pub vocab: OperationVocab,
    pub course_start: Timestamp,
    pub lecture_days: i64,
    /// Mean events per operation per lecture for an average student.
    pub base_rate: f64,
}

impl Default for LogSpec {
    fn default() -> Self {
        LogSpec {
            vocab: OperationVocab::default(),
            course_start: parse_timestamp("2024-04-08T00:00:00Z").expect("valid literal"),
            lecture_days: 7,
            base_rate: 2.0,
        }
    }
}

/// A synthetic course as raw records.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCourse {
    pub client_id: String,
    pub events: Vec<EventRecord>,
    pub grades: Vec<GradeRecord>,
    pub schedule: LectureSchedule,
}

impl SynthCourse {
    pub fn span(&self) -> CourseSpan {
        CourseSpan {
            start: self.schedule.start.expect("synthetic schedules carry a start"),
            end: *self.schedule.window_ends().last().expect("non-empty schedule"),
        }
    }
}

/// Event logs with activity that is stationary across lectures.
///
/// Each student has a fixed per-operation rate; every lecture window gets a
/// Poisson number of events at uniform times inside it. `feature_dim` is
/// ignored; the representation comes from the featurizer.
pub fn generate_logs(spec: &SynthSpec, logs: &LogSpec) -> Result<Vec<SynthCourse>> {
    spec.validate()?;
    if logs.vocab.is_empty() || logs.lecture_days <= 0 || !(logs.base_rate > 0.0) {
        return Err(Error::invalid("log spec needs a vocabulary, positive lecture length and rate"));
    }
    let v = logs.vocab.len();
    let shared = shared_patterns(v, spec.seed);
    let window = Duration::days(logs.lecture_days);
    let window_secs = window.num_seconds();
    spec.courses
        .iter()
        .enumerate()
        .map(|(k, course)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[0x106, k as u64]));
            let z: f64 = rng.sample(StandardNormal);
            let scale = (0.5 * spec.client_shift * z).exp();
            let op_offset: Vec<f64> = (0..v)
                .map(|_| {
                    let e: f64 = rng.sample(StandardNormal);
                    if spec.additive_offsets {
                        0.5 * spec.client_shift * e.abs()
                    } else {
                        0.0
                    }
                })
                .collect();
            let grades = draw_grades(&mut rng, course)?;
            let ends: Vec<Timestamp> = (1..=course.lectures as i32)
                .map(|w| logs.course_start + window * w)
                .collect();
            let schedule = LectureSchedule::new(Some(logs.course_start), ends)?;

            let mut events = Vec::new();
            let mut records = Vec::with_capacity(grades.len());
            for (i, &g) in grades.iter().enumerate() {
                let student = format!("{}-s{i:03}", course.id);
                let a = ability(&mut rng, g, spec.noise_std);
                let rates: Vec<f64> = (0..v)
                    .map(|op| {
                        let e: f64 = rng.sample(StandardNormal);
                        let raw = shared.baseline[op] + spec.signal_strength * a * shared.direction[op] + spec.noise_std * 0.25 * e;
                        logs.base_rate * (scale * raw.max(0.02) + op_offset[op])
                    })
                    .collect();
                for lecture in 0..course.lectures as i32 {
                    let window_start = logs.course_start + window * lecture;
                    for (op, &rate) in rates.iter().enumerate() {
                        let n = Poisson::new(rate).map_err(|e| Error::invalid(e.to_string()))?.sample(&mut rng) as u64;
                        for _ in 0..n {
                            let offset = rng.random_range(0..window_secs);
                            events.push(EventRecord {
                                student_id: student.clone(),
                                material_id: format!("{}-m{:02}", course.id, lecture + 1),
                                operation: logs.vocab.names()[op].clone(),
                                event_time: window_start + Duration::seconds(offset),
                            });
                        }
                    }
                }
                records.push(GradeRecord::new(student, g));
            }
            events.sort_by(|a, b| (&a.student_id, a.event_time).cmp(&(&b.student_id, b.event_time)));
            Ok(SynthCourse {
                client_id: course.id.clone(),
                events,
                grades: records,
                schedule,
            })
        })
        .collect()
}
