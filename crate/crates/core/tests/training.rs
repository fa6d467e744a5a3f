use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use fedrank::data::{ClientDataset, Grade};
use fedrank::federation::{run, FederationConfig, LocalClient, Server, TrainingMode};
use fedrank::nn::{init_params, predict_batch, train_epoch, MlpConfig, Mode};
use fedrank::synth::{generate, SynthSpec};

fn small_cohort(seed: u64) -> Vec<ClientDataset> {
    let mut spec = SynthSpec::uniform(3, (8, 14), [1.0, 1.0, 2.0, 2.0, 1.0], seed);
    spec.feature_dim = 6;
    generate(&spec).unwrap()
}

fn small_config(mode: TrainingMode) -> FederationConfig {
    FederationConfig {
        rounds: 4,
        mode,
        max_pairs_per_client: Some(60),
        seed: 21,
        mlp: MlpConfig {
            input_dim: 6,
            batch_size: 16,
            ..MlpConfig::default()
        },
        ..FederationConfig::default()
    }
}

#[test]
fn dropout_preserves_expected_preactivation() {
    let cfg = MlpConfig {
        input_dim: 5,
        seed: 3,
        ..MlpConfig::default()
    };
    let params = init_params(&cfg).unwrap();
    let x = [0.7, -1.2, 2.0, 0.3, 1.1];
    let eval = params.forward_trace(&x, Mode::Eval, 0.2).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let draws = 20_000;
    let mut mean = vec![0.0; eval.z2.len()];
    for _ in 0..draws {
        let t = params.forward_trace(&x, Mode::Train(&mut rng), 0.2).unwrap();
        for (m, z) in mean.iter_mut().zip(&t.z2) {
            *m += z / draws as f64;
        }
    }
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|a| a * a).sum::<f64>().sqrt();
    let diff = norm(&mut mean.iter().zip(&eval.z2).map(|(m, z)| m - z));
    let scale = norm(&mut eval.z2.iter().copied());
    assert!(diff <= 0.02 * scale, "|train mean - eval| = {diff}, |eval| = {scale}");
}

#[test]
fn eval_mode_is_deterministic_and_row_wise() {
    let params = init_params(&MlpConfig::with_input_dim(3)).unwrap();
    let xs = vec![vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.0], vec![4.0, -2.0, 1.0]];
    let a = predict_batch(&params, &xs).unwrap();
    assert_eq!(a, predict_batch(&params, &xs).unwrap());
    let reversed: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
    let mut b = predict_batch(&params, &reversed).unwrap();
    b.reverse();
    assert_eq!(a, b);
}

#[test]
fn loss_falls_below_a_tenth_on_a_linear_teacher() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let teacher: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
    let samples: Vec<(Vec<f64>, f64)> = (0..256)
        .map(|_| {
            let x: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
            let y = x.iter().zip(&teacher).map(|(a, b)| a * b).sum();
            (x, y)
        })
        .collect();
    let cfg = MlpConfig {
        input_dim: 5,
        seed: 1,
        ..MlpConfig::default()
    };
    let mut params = init_params(&cfg).unwrap();
    let initial = params.loss(&samples).unwrap();
    for _ in 0..50 {
        params = train_epoch(&params, &samples, &cfg, &mut rng).unwrap().params;
    }
    let last = params.loss(&samples).unwrap();
    assert!(last < 0.1 * initial, "loss {initial} -> {last}");
}

#[test]
fn training_is_reproducible_for_a_seed() {
    let clients = small_cohort(4);
    for mode in [TrainingMode::Federated, TrainingMode::Centralized] {
        let a = run(&clients, &small_config(mode)).unwrap();
        let b = run(&clients, &small_config(mode)).unwrap();
        assert_eq!(a.final_params, b.final_params);
        assert_eq!(a.round_losses, b.round_losses);
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let clients = small_cohort(5);
    let cfg = small_config(TrainingMode::Federated);
    let run_with = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run(&clients, &cfg).unwrap().final_params)
    };
    assert_eq!(run_with(1), run_with(4));
}

#[test]
fn twin_clients_average_to_either() {
    let client = small_cohort(6).remove(0);
    let cfg = small_config(TrainingMode::Federated);
    let mut twins = vec![
        LocalClient::new(0, client.clone(), &cfg).unwrap(),
        LocalClient::new(0, client.clone(), &cfg).unwrap(),
    ];
    let mut alone = vec![LocalClient::new(0, client, &cfg).unwrap()];
    let start = fedrank::federation::initial_params(&cfg).unwrap();
    let mut pair_server = Server::new(start.clone());
    let mut solo_server = Server::new(start);
    for _ in 0..3 {
        let counts = pair_server.run_round(&mut twins).unwrap();
        assert_eq!(counts[0], counts[1]);
        solo_server.run_round(&mut alone).unwrap();
        assert_eq!(pair_server.global(), solo_server.global());
    }
}

#[test]
fn client_sample_counts_are_pairs_in_differential_mode() {
    let clients = small_cohort(8);
    let cfg = FederationConfig {
        max_pairs_per_client: None,
        ..small_config(TrainingMode::Federated)
    };
    let report = run(&clients, &cfg).unwrap();
    for c in &clients {
        let n = c.len() as u64;
        assert_eq!(report.client_sample_counts[c.client_id()], n * (n - 1));
    }
    let plain = run(&clients, &FederationConfig { use_differential: false, ..cfg }).unwrap();
    for c in &clients {
        assert_eq!(plain.client_sample_counts[c.client_id()], c.len() as u64);
    }
}

#[test]
fn dimension_mismatch_names_the_client() {
    let mut clients = small_cohort(9);
    let odd = ClientDataset::new("odd", vec!["a".into(), "b".into()], vec![vec![0.0; 4]; 2], vec![Grade::A, Grade::F], 0.95, 1)
        .unwrap();
    clients.push(odd);
    let err = run(&clients, &small_config(TrainingMode::Federated)).unwrap_err();
    assert!(err.to_string().contains("odd"), "{err}");
    assert_eq!(err.code(), "E_FEDERATION");
}

#[test]
fn diverging_training_is_reported() {
    let clients = small_cohort(10);
    let mut cfg = small_config(TrainingMode::Centralized);
    cfg.mlp.learning_rate = 1e6;
    let err = run(&clients, &cfg).unwrap_err();
    assert_eq!(err.code(), "E_TRAIN", "{err}");
}
