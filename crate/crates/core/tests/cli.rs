use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fedrank::data::{write_grades, Grade, GradeRecord};
use fedrank::features::{write_feature_table, FeatureTable};
use fedrank::metrics::MetricsReport;
use fedrank::model::TrainedModel;
use fedrank::nn::{Layout, ModelParams};
use fedrank::pipeline::evaluate_course;

fn fedrank() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fedrank"));
    c.env_remove("FEDRANK_OUT");
    c
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_single_error_line(out: &Output, code: &str) {
    let err = stderr(out);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "stderr: {err}");
    assert!(lines[0].starts_with(&format!("error[{code}]: ")), "stderr: {err}");
}

/// 20 F, 10 D, 10 C, 10 B, 10 A; the single feature is the scored grade.
fn write_fixture(dir: &Path, dim: usize) -> (PathBuf, PathBuf) {
    let counts = [(Grade::F, 20), (Grade::D, 10), (Grade::C, 10), (Grade::B, 10), (Grade::A, 10)];
    let mut grades = Vec::new();
    let mut table = FeatureTable::new();
    let mut cumulative = 0;
    for (g, n) in counts {
        cumulative += n;
        let score = 0.95 * cumulative as f64 / 60.0;
        for i in 0..n {
            let id = format!("{}{i:02}", g.letter());
            grades.push(GradeRecord::new(id.clone(), g));
            let mut row = vec![0.0; dim];
            row[0] = score;
            table.insert(id, row);
        }
    }
    let g = dir.join("grades.csv");
    let f = dir.join("features.csv");
    write_grades(&g, &grades).unwrap();
    write_feature_table(&f, &table).unwrap();
    (g, f)
}

/// `sign * relu(relu(x_0))`.
fn plain_oracle(sign: f64) -> TrainedModel {
    let layout = Layout {
        input_dim: 1,
        hidden: [1, 1],
    };
    // W1 b1 W2 b2 W3 b3
    let values = vec![1.0, 0.0, 1.0, 0.0, sign, 0.0];
    TrainedModel::new(ModelParams::from_values(layout, values).unwrap(), 0.2, false, None)
}

/// Pairwise model that returns `d_0` exactly: `relu(d) - relu(-d)`.
fn differential_oracle() -> TrainedModel {
    let layout = Layout {
        input_dim: 1,
        hidden: [2, 2],
    };
    let values = vec![
        1.0, -1.0, // W1
        0.0, 0.0, // b1
        1.0, 0.0, 0.0, 1.0, // W2
        0.0, 0.0, // b2
        1.0, -1.0, // W3
        0.0, // b3
    ];
    TrainedModel::new(ModelParams::from_values(layout, values).unwrap(), 0.2, true, None)
}

fn metrics_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn missing_data_file_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    std::fs::write(
        &config,
        r#"{ "train": [ { "id": "x", "grades": "nowhere/grades.csv", "features": "nowhere/features.csv" } ] }"#,
    )
    .unwrap();
    let out = fedrank()
        .args(["train", "--mode", "federated", "--differential", "true", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_single_error_line(&out, "E_IO");
    assert!(stderr(&out).contains("nowhere/grades.csv"));
}

#[test]
fn malformed_config_and_bad_usage_fail_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, "{ not json").unwrap();
    let out = fedrank().args(["train", "--config"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert_single_error_line(&out, "E_CONFIG");

    let out = fedrank().args(["train", "--mode", "sideways", "--config", "x.json"]).output().unwrap();
    assert!(!out.status.success());
    assert_single_error_line(&out, "E_USAGE");
}

#[test]
fn perfect_oracles_score_all_ones() {
    let dir = tempfile::tempdir().unwrap();
    let (grades, features) = write_fixture(dir.path(), 1);
    for (name, model) in [("plain", plain_oracle(1.0)), ("diff", differential_oracle())] {
        let path = dir.path().join(format!("{name}.model"));
        model.save(&path).unwrap();
        let out_dir = dir.path().join(name);
        let out = fedrank()
            .args(["evaluate", "--model"])
            .arg(&path)
            .arg("--grades")
            .arg(&grades)
            .arg("--features")
            .arg(&features)
            .arg("--out")
            .arg(&out_dir)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        let rows = metrics_rows(&out_dir.join("metrics.csv"));
        assert_eq!(rows.len(), 1);
        for v in &rows[0][3..9] {
            assert_eq!(v, "1.000000", "{name}: {:?}", rows[0]);
        }
        assert_eq!(rows[0][9], "20");
        let curve = std::fs::read_to_string(out_dir.join("pr_curve.csv")).unwrap();
        assert_eq!(curve.lines().count(), 61);
    }
}

#[test]
fn ten_models_report_their_mean() {
    let dir = tempfile::tempdir().unwrap();
    let (grades, features) = write_fixture(dir.path(), 1);
    let mut paths = Vec::new();
    let mut models = Vec::new();
    for k in 0..10 {
        let m = plain_oracle(if k % 3 == 0 { -1.0 } else { 1.0 });
        let p = dir.path().join(format!("m-run{k:02}.model"));
        m.save(&p).unwrap();
        paths.push(p);
        models.push(m);
    }
    let out_dir = dir.path().join("out");
    let out = fedrank()
        .args(["evaluate", "--grades"])
        .arg(&grades)
        .arg("--features")
        .arg(&features)
        .arg("--out")
        .arg(&out_dir)
        .arg("--model")
        .args(&paths)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));

    let files = fedrank::experiment::CourseFiles {
        id: "course".into(),
        grades,
        features: Some(features),
        events: None,
        schedule: None,
        lectures: None,
    };
    let client = fedrank::experiment::load_course(&files, &Default::default(), 0.95, None).unwrap();
    let each: Vec<MetricsReport> = models.iter().map(|m| evaluate_course(m, &client, 15).unwrap()).collect();
    let mean_pr = each.iter().map(|m| m.pr_auc).sum::<f64>() / 10.0;
    let mean_ndcg = each.iter().map(|m| m.ndcg).sum::<f64>() / 10.0;
    assert!(each[0].pr_auc < 0.5 && each[1].pr_auc == 1.0);

    let rows = metrics_rows(&out_dir.join("metrics.csv"));
    assert_eq!(rows[0][2], "10");
    assert_eq!(rows[0][7], format!("{mean_ndcg:.6}"));
    assert_eq!(rows[0][8], format!("{mean_pr:.6}"));
}

#[test]
fn dimension_mismatch_is_refused_with_the_featurizer_hash() {
    let dir = tempfile::tempdir().unwrap();
    let (grades, features) = write_fixture(dir.path(), 80);
    let layout = Layout {
        input_dim: 100,
        hidden: [50, 10],
    };
    let model = TrainedModel::new(ModelParams::zeros(layout), 0.2, true, None);
    let path = dir.path().join("d100.model");
    model.save(&path).unwrap();
    let out = fedrank()
        .args(["evaluate", "--model"])
        .arg(&path)
        .arg("--grades")
        .arg(&grades)
        .arg("--features")
        .arg(&features)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
    assert_single_error_line(&out, "E_MODEL");
    let err = stderr(&out);
    assert!(err.contains("external-d100") && err.contains("80"), "{err}");
}

#[test]
fn predict_writes_a_ranked_table() {
    let dir = tempfile::tempdir().unwrap();
    let (_, features) = write_fixture(dir.path(), 1);
    let path = dir.path().join("oracle.model");
    differential_oracle().save(&path).unwrap();
    let out = fedrank().args(["predict", "--model"]).arg(&path).arg("--features").arg(&features).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "rank,student_id,score");
    assert_eq!(lines.len(), 61);
    assert!(lines[1].starts_with("1,F"));
    assert!(lines[60].starts_with("60,A"));
}

fn log_experiment(dir: &Path) -> PathBuf {
    let config = dir.join("gen.json");
    std::fs::write(
        &config,
        r#"{
  "seed": 5,
  "modes": ["centralized"],
  "federation": { "rounds": 2, "max_pairs_per_client": 200, "mlp": { "learning_rate": 0.0003 } },
  "synthetic": {
    "spec": {
      "seed": 5,
      "courses": [
        { "id": "T1", "students": 30, "grade_weights": [1, 1, 1, 1, 1], "lectures": 6 },
        { "id": "T2", "students": 25, "grade_weights": [1, 1, 2, 2, 1], "lectures": 5 }
      ]
    },
    "test_courses": [
      { "id": "H1", "students": 24, "grade_weights": [6, 4, 4, 5, 5], "lectures": 7, "exact_counts": true }
    ],
    "logs": { "base_rate": 2.0 }
  }
}"#,
    )
    .unwrap();
    config
}

#[test]
fn generate_train_sweep_with_env_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let config = log_experiment(dir.path());
    let out = dir.path().join("env-out");
    let run = |args: &[&str]| {
        let o = fedrank().env("FEDRANK_OUT", &out).args(args).output().unwrap();
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
        o
    };
    run(&["generate", "--config", config.to_str().unwrap()]);
    let experiment = out.join("experiment.json");
    assert!(experiment.exists());
    run(&["train", "--config", experiment.to_str().unwrap(), "--mode", "centralized"]);

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("reports/centralized-diff-run00.json")).unwrap()).unwrap();
    assert_eq!(report["mode"], "centralized");
    assert_eq!(report["use_differential"], true);
    assert_eq!(report["round_losses"].as_array().unwrap().len(), 2);
    assert_eq!(report["input_hash"].as_str().unwrap().len(), 64);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("reports/centralized-diff-run00.meta.json")).unwrap())
            .unwrap();
    assert!(meta["wall_clock_seconds"].is_number());

    let course = out.join("test/H1");
    let model = out.join("models/centralized-diff-run00.model");
    let p = |name: &str| course.join(name).to_str().unwrap().to_string();
    run(&[
        "early-sweep",
        "--model",
        model.to_str().unwrap(),
        "--events",
        &p("events.csv"),
        "--grades",
        &p("grades.csv"),
        "--schedule",
        &p("schedule.csv"),
        "--k-min",
        "2",
        "--k-max",
        "6",
        "--shuffles",
        "20",
    ]);
    let sweep = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let model_rows: Vec<&str> = sweep.lines().filter(|l| l.contains(",model,")).collect();
    let random_rows = sweep.lines().filter(|l| l.contains(",random,")).count();
    assert_eq!(model_rows.len(), 5);
    assert_eq!(random_rows, 5);
    let ks: Vec<&str> = model_rows.iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ks, ["2", "3", "4", "5", "6"]);

    let o = fedrank()
        .env("FEDRANK_OUT", &out)
        .args(["early-sweep", "--model", model.to_str().unwrap()])
        .args(["--events", &p("events.csv"), "--grades", &p("grades.csv"), "--schedule", &p("schedule.csv")])
        .args(["--k-max", "9"])
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert_single_error_line(&o, "E_INPUT");
}
