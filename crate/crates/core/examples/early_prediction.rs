//! Trains on synthetic event logs, then asks how well a held-out course can be
//! ranked after only the first few lectures.

use fedrank::features::FeatureSpec;
use fedrank::federation::{run, FederationConfig, TrainingMode};
use fedrank::model::TrainedModel;
use fedrank::nn::MlpConfig;
use fedrank::pipeline::{client_from_logs, early_sweep, SweepOptions};
use fedrank::synth::{generate_logs, CourseShape, LogSpec, SynthSpec};

fn main() -> fedrank::Result<()> {
    let logs = LogSpec {
        base_rate: 3.0,
        ..LogSpec::default()
    };
    let features = FeatureSpec::default();
    let spec = SynthSpec {
        signal_strength: 2.0,
        client_shift: 0.5,
        seed: 4,
        ..SynthSpec::uniform(5, (40, 70), [1.0, 1.0, 2.0, 2.0, 1.0], 4)
    };
    let train: Vec<_> = generate_logs(&spec, &logs)?
        .iter()
        .map(|c| {
            let k = c.schedule.lecture_count();
            client_from_logs(&c.client_id, &c.events, &c.grades, &c.schedule, k, &features, 0.95)
        })
        .collect::<fedrank::Result<_>>()?;

    let cfg = FederationConfig {
        rounds: 40,
        mode: TrainingMode::Federated,
        max_pairs_per_client: Some(800),
        seed: 2,
        mlp: MlpConfig {
            input_dim: features.dimension(),
            learning_rate: 0.0003,
            ..MlpConfig::default()
        },
        ..FederationConfig::default()
    };
    let report = run(&train, &cfg)?;
    let model = TrainedModel::new(report.final_params, cfg.mlp.dropout_rate, true, Some(features));

    let held_out = SynthSpec {
        courses: vec![CourseShape {
            id: "H".into(),
            students: 60,
            grade_weights: [1.0, 1.0, 2.0, 2.0, 1.0],
            lectures: 10,
            exact_counts: false,
        }],
        seed: 77,
        ..spec
    };
    let course = generate_logs(&held_out, &logs)?.remove(0);
    let opts = SweepOptions {
        lectures: 1..=10,
        threshold_rank: 15,
        max_score: 0.95,
        shuffles: 200,
        seed: 0,
    };
    let rows = early_sweep(&[model], "H", &course.events, &course.grades, &course.schedule, &opts)?;
    println!(" k  method   PR-AUC  nDCG");
    for r in rows {
        println!("{:>2}  {:<7} {:.3}   {:.3}", r.k, r.method, r.metrics.pr_auc, r.metrics.ndcg);
    }
    Ok(())
}
