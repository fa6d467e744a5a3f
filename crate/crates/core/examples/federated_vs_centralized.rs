//! Trains the same cohort federated and centralized, with and without pairwise
//! features, and scores each model on held-out courses.

use fedrank::federation::{run, FederationConfig, TrainingMode};
use fedrank::model::TrainedModel;
use fedrank::nn::MlpConfig;
use fedrank::pipeline::evaluate_course;
use fedrank::synth::{generate, SynthSpec};

fn main() -> fedrank::Result<()> {
    let mut spec = SynthSpec::uniform(6, (40, 80), [1.0, 1.0, 2.0, 2.0, 1.0], 3);
    spec.feature_dim = 20;
    let train = generate(&spec)?;
    let test = generate(&SynthSpec {
        courses: SynthSpec::test_courses(),
        seed: 99,
        ..spec.clone()
    })?;

    println!("{:<12} {:<6} {:>8} {:>8}", "mode", "diff", "nDCG", "PR-AUC");
    for mode in [TrainingMode::Federated, TrainingMode::Centralized] {
        for differential in [true, false] {
            let cfg = FederationConfig {
                rounds: 15,
                mode,
                use_differential: differential,
                max_pairs_per_client: Some(800),
                seed: 1,
                mlp: MlpConfig {
                    input_dim: spec.feature_dim,
                    learning_rate: 0.01,
                    ..MlpConfig::default()
                },
                ..FederationConfig::default()
            };
            let report = run(&train, &cfg)?;
            let model = TrainedModel::new(report.final_params, cfg.mlp.dropout_rate, differential, None);
            let (mut ndcg, mut pr) = (0.0, 0.0);
            for course in &test {
                let m = evaluate_course(&model, course, 15)?;
                ndcg += m.ndcg / test.len() as f64;
                pr += m.pr_auc / test.len() as f64;
            }
            println!("{:<12} {:<6} {ndcg:>8.3} {pr:>8.3}", format!("{mode:?}"), differential);
        }
    }
    Ok(())
}
