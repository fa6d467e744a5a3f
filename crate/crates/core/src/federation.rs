//! In-process simulation of synchronous federated averaging, plus the
//! centralized baseline that pools the same training samples.
//!
//! The server side ([`Server`]) only ever receives [`ClientUpdate`]s, i.e.
//! a parameter vector and a sample count. Client data stays inside
//! [`LocalClient`], which has no accessor for it:
//!
//! ```compile_fail
//! # use fedrank::federation::LocalClient;
//! fn peek(c: &LocalClient) {
//!     let _ = c.dataset;
//! }
//! ```

use std::collections::BTreeMap;
use std::time::Instant;

use log::debug;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::nn::{init_params, train_epoch, MlpConfig, ModelParams};
use crate::pairs::{make_pairs, pair_cap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingMode {
    Federated,
    Centralized,
}

impl std::fmt::Display for TrainingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainingMode::Federated => "federated",
            TrainingMode::Centralized => "centralized",
        })
    }
}

impl std::str::FromStr for TrainingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "federated" => Ok(TrainingMode::Federated),
            "centralized" => Ok(TrainingMode::Centralized),
            other => Err(Error::invalid(format!("unknown mode `{other}`"))),
        }
    }
}

/// Training hyperparameters a single client may override.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalOverride {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub local_epochs_per_round: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FederationConfig {
    pub rounds: usize,
    pub mode: TrainingMode,
    pub use_differential: bool,
    /// Per-client, per-round cap on training pairs; `None` uses all pairs.
    pub max_pairs_per_client: Option<usize>,
    pub seed: u64,
    pub mlp: MlpConfig,
    pub client_overrides: BTreeMap<String, LocalOverride>,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            rounds: 100,
            mode: TrainingMode::Federated,
            use_differential: true,
            max_pairs_per_client: None,
            seed: 0,
            mlp: MlpConfig::default(),
            client_overrides: BTreeMap::new(),
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::invalid("rounds must be at least 1"));
        }
        self.mlp.validate()?;
        for (client, o) in &self.client_overrides {
            self.local_config(client).validate().map_err(|e| Error::Client {
                client: client.clone(),
                source: Box::new(e),
            })?;
            if o.batch_size == Some(0) {
                return Err(Error::invalid(format!("client `{client}`: batch_size 0")));
            }
        }
        Ok(())
    }

    fn local_config(&self, client: &str) -> MlpConfig {
        let mut cfg = self.mlp.clone();
        if let Some(o) = self.client_overrides.get(client) {
            cfg.learning_rate = o.learning_rate.unwrap_or(cfg.learning_rate);
            cfg.batch_size = o.batch_size.unwrap_or(cfg.batch_size);
            cfg.local_epochs_per_round = o.local_epochs_per_round.unwrap_or(cfg.local_epochs_per_round);
        }
        cfg
    }
}

/// Mixes a base seed with stream tags into an independent seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut x = base ^ 0x9E37_79B9_7F4A_7C15;
    for &t in tags {
        x = splitmix(x ^ splitmix(t.wrapping_add(0xD1B5_4A32_D192_ED03)));
    }
    splitmix(x)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_INIT: u64 = 0;
const STREAM_TRAIN: u64 = 1;
const STREAM_PAIRS: u64 = 2;

/// Initial global parameters for a run.
pub fn initial_params(config: &FederationConfig) -> Result<ModelParams> {
    init_params(&MlpConfig {
        seed: derive_seed(config.seed, &[STREAM_INIT]),
        ..config.mlp.clone()
    })
}

type TrainingSet = Vec<(Vec<f64>, f64)>;

/// Regression examples one client trains on in a given round: difference
/// pairs when differential mode is on, otherwise `(v_i, g_i)`.
pub fn client_training_set(
    client: &ClientDataset,
    client_index: usize,
    round: usize,
    config: &FederationConfig,
) -> Result<TrainingSet> {
    if !config.use_differential {
        return Ok(client
            .features()
            .iter()
            .cloned()
            .zip(client.scored_grades().iter().copied())
            .collect());
    }
    let pairs = match config.max_pairs_per_client {
        None => make_pairs(client)?,
        Some(cap) => pair_cap(
            client,
            cap,
            derive_seed(config.seed, &[STREAM_PAIRS, client_index as u64, round as u64]),
        )?,
    };
    Ok(pairs.into_iter().map(|p| (p.d, p.e)).collect())
}

/// What a client sends back after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: String,
    pub params: ModelParams,
    pub sample_count: u64,
}

/// A participant as seen by the server.
pub trait FederatedClient: Send {
    fn id(&self) -> &str;

    /// Trains from `global` on local data and reports the result.
    fn local_update(&mut self, global: &ModelParams, round: usize) -> Result<ClientUpdate>;
}

/// Client that owns one course's data and trains on it locally.
pub struct LocalClient {
    index: usize,
    dataset: ClientDataset,
    config: FederationConfig,
    local: MlpConfig,
    rng: ChaCha8Rng,
    fixed_set: Option<TrainingSet>,
    last_loss: Option<f64>,
}

impl LocalClient {
    pub fn new(index: usize, dataset: ClientDataset, config: &FederationConfig) -> Result<Self> {
        let local = config.local_config(dataset.client_id());
        if dataset.feature_dim() != local.input_dim {
            return Err(Error::Client {
                client: dataset.client_id().to_string(),
                source: Box::new(Error::DimensionMismatch {
                    expected: local.input_dim,
                    actual: dataset.feature_dim(),
                }),
            });
        }
        let resampled = config.use_differential && config.max_pairs_per_client.is_some();
        let fixed_set = if resampled {
            None
        } else {
            Some(client_training_set(&dataset, index, 0, config)?)
        };
        Ok(LocalClient {
            index,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[STREAM_TRAIN, index as u64])),
            dataset,
            config: config.clone(),
            local,
            fixed_set,
            last_loss: None,
        })
    }

    /// Mean training loss of the most recent round. Local diagnostics only;
    /// not part of [`ClientUpdate`].
    pub fn last_loss(&self) -> Option<f64> {
        self.last_loss
    }
}

impl FederatedClient for LocalClient {
    fn id(&self) -> &str {
        self.dataset.client_id()
    }

    fn local_update(&mut self, global: &ModelParams, round: usize) -> Result<ClientUpdate> {
        let fresh;
        let samples = match &self.fixed_set {
            Some(s) => s,
            None => {
                fresh = client_training_set(&self.dataset, self.index, round, &self.config)?;
                &fresh
            }
        };
        let mut params = global.clone();
        let mut loss = 0.0;
        for _ in 0..self.local.local_epochs_per_round {
            let out = train_epoch(&params, samples, &self.local, &mut self.rng)?;
            params = out.params;
            loss += out.mean_loss;
        }
        self.last_loss = Some(loss / self.local.local_epochs_per_round as f64);
        Ok(ClientUpdate {
            client_id: self.id().to_string(),
            params,
            sample_count: samples.len() as u64,
        })
    }
}

/// `sum_k (n_k / N) w_k`, accumulated in the given client order.
pub fn fedavg(updates: &[ClientUpdate]) -> Result<ModelParams> {
    let first = updates.first().ok_or(Error::EmptyInput("client updates"))?;
    let layout = first.params.layout();
    for u in updates {
        if u.params.layout() != layout {
            return Err(Error::LayoutMismatch {
                reference: first.client_id.clone(),
                client: u.client_id.clone(),
            });
        }
        if u.sample_count == 0 {
            return Err(Error::ZeroSamples {
                client: u.client_id.clone(),
            });
        }
    }
    let total: u64 = updates.iter().map(|u| u.sample_count).sum();
    let total = total as f64;
    let weight = |u: &ClientUpdate| u.sample_count as f64 / total;

    let w0 = weight(first);
    let mut acc: Vec<f64> = first.params.values().iter().map(|v| w0 * v).collect();
    for u in &updates[1..] {
        let w = weight(u);
        for (a, v) in acc.iter_mut().zip(u.params.values()) {
            *a += w * v;
        }
    }
    ModelParams::from_values(layout, acc)
}

/// Holds the global model and runs synchronous rounds.
#[derive(Debug, Clone)]
pub struct Server {
    global: ModelParams,
    rounds_done: usize,
}

impl Server {
    pub fn new(initial: ModelParams) -> Self {
        Server {
            global: initial,
            rounds_done: 0,
        }
    }

    pub fn global(&self) -> &ModelParams {
        &self.global
    }

    pub fn into_global(self) -> ModelParams {
        self.global
    }

    /// Broadcasts the global model, collects every client's update (in
    /// parallel) and replaces the global model with their weighted average.
    /// Returns the per-client sample counts in client order.
    pub fn run_round<C: FederatedClient>(&mut self, clients: &mut [C]) -> Result<Vec<u64>> {
        if clients.is_empty() {
            return Err(Error::EmptyInput("clients"));
        }
        let round = self.rounds_done + 1;
        let global = &self.global;
        let updates = clients
            .par_iter_mut()
            .map(|c| {
                c.local_update(global, round).map_err(|e| Error::Client {
                    client: c.id().to_string(),
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.global = fedavg(&updates)?;
        self.rounds_done = round;
        Ok(updates.iter().map(|u| u.sample_count).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingRunReport {
    pub mode: TrainingMode,
    pub use_differential: bool,
    /// Sample-count weighted mean training loss per round.
    pub round_losses: Vec<f64>,
    /// Training samples per client in the final round.
    pub client_sample_counts: BTreeMap<String, u64>,
    pub config: FederationConfig,
    #[serde(skip)]
    pub final_params: ModelParams,
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

fn check_clients(clients: &[ClientDataset], config: &FederationConfig) -> Result<()> {
    config.validate()?;
    if clients.is_empty() {
        return Err(Error::EmptyInput("clients"));
    }
    for c in clients {
        if config.use_differential && c.len() < 2 {
            return Err(Error::Client {
                client: c.client_id().to_string(),
                source: Box::new(Error::invalid("differential mode needs at least 2 students")),
            });
        }
        if c.feature_dim() != config.mlp.input_dim {
            return Err(Error::Client {
                client: c.client_id().to_string(),
                source: Box::new(Error::DimensionMismatch {
                    expected: config.mlp.input_dim,
                    actual: c.feature_dim(),
                }),
            });
        }
    }
    Ok(())
}

/// Federated training: every round each client trains locally from the
/// broadcast model and the server averages the results.
pub fn run_federated(clients: &[ClientDataset], config: &FederationConfig) -> Result<TrainingRunReport> {
    check_clients(clients, config)?;
    let started = Instant::now();
    let mut locals = clients
        .iter()
        .enumerate()
        .map(|(k, c)| LocalClient::new(k, c.clone(), config))
        .collect::<Result<Vec<_>>>()?;
    let mut server = Server::new(initial_params(config)?);
    let mut round_losses = Vec::with_capacity(config.rounds);
    let mut counts = Vec::new();
    for t in 1..=config.rounds {
        counts = server.run_round(&mut locals)?;
        let total: u64 = counts.iter().sum();
        let loss = locals
            .iter()
            .zip(&counts)
            .map(|(c, &n)| c.last_loss().unwrap_or(f64::NAN) * n as f64)
            .sum::<f64>()
            / total as f64;
        debug!("federated round {t}: loss {loss:.6}");
        round_losses.push(loss);
    }
    Ok(TrainingRunReport {
        mode: TrainingMode::Federated,
        use_differential: config.use_differential,
        round_losses,
        client_sample_counts: clients
            .iter()
            .map(|c| c.client_id().to_string())
            .zip(counts)
            .collect(),
        config: FederationConfig {
            mode: TrainingMode::Federated,
            ..config.clone()
        },
        final_params: server.into_global(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Centralized baseline: pools every client's samples (pairs are still
/// formed within each client) and trains one model on the union.
pub fn run_centralized(clients: &[ClientDataset], config: &FederationConfig) -> Result<TrainingRunReport> {
    check_clients(clients, config)?;
    let started = Instant::now();
    let resampled = config.use_differential && config.max_pairs_per_client.is_some();
    let pool = |round: usize| -> Result<(TrainingSet, Vec<u64>)> {
        let mut pooled = Vec::new();
        let mut counts = Vec::with_capacity(clients.len());
        for (k, c) in clients.iter().enumerate() {
            let set = client_training_set(c, k, round, config).map_err(|e| Error::Client {
                client: c.client_id().to_string(),
                source: Box::new(e),
            })?;
            counts.push(set.len() as u64);
            pooled.extend(set);
        }
        Ok((pooled, counts))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[STREAM_TRAIN, 0]));
    let mut params = initial_params(config)?;
    let mut fixed = if resampled { None } else { Some(pool(0)?) };
    let mut round_losses = Vec::with_capacity(config.rounds);
    let mut counts = Vec::new();
    let epochs = config.mlp.local_epochs_per_round;
    for t in 1..=config.rounds {
        let fresh;
        let (samples, c) = match &mut fixed {
            Some(f) => (&f.0, &f.1),
            None => {
                fresh = pool(t)?;
                (&fresh.0, &fresh.1)
            }
        };
        counts = c.clone();
        let mut loss = 0.0;
        for _ in 0..epochs {
            let out = train_epoch(&params, samples, &config.mlp, &mut rng)?;
            params = out.params;
            loss += out.mean_loss;
        }
        let loss = loss / epochs as f64;
        debug!("centralized round {t}: loss {loss:.6}");
        round_losses.push(loss);
    }
    Ok(TrainingRunReport {
        mode: TrainingMode::Centralized,
        use_differential: config.use_differential,
        round_losses,
        client_sample_counts: clients
            .iter()
            .map(|c| c.client_id().to_string())
            .zip(counts)
            .collect(),
        config: FederationConfig {
            mode: TrainingMode::Centralized,
            ..config.clone()
        },
        final_params: params,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Dispatches on `config.mode`.
pub fn run(clients: &[ClientDataset], config: &FederationConfig) -> Result<TrainingRunReport> {
    match config.mode {
        TrainingMode::Federated => run_federated(clients, config),
        TrainingMode::Centralized => run_centralized(clients, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Grade;
    use crate::nn::Layout;

    fn scalar(v: f64, n: u64, id: &str) -> ClientUpdate {
        let layout = Layout {
            input_dim: 1,
            hidden: [1, 1],
        };
        ClientUpdate {
            client_id: id.into(),
            params: ModelParams::from_values(layout, vec![v; 6]).unwrap(),
            sample_count: n,
        }
    }

    #[test]
    fn two_client_weighted_mean() {
        let out = fedavg(&[scalar(0.0, 1, "a"), scalar(4.0, 3, "b")]).unwrap();
        assert!(out.values().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn single_update_passes_through() {
        let u = scalar(-0.0, 5, "a");
        let out = fedavg(std::slice::from_ref(&u)).unwrap();
        assert_eq!(
            out.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            u.params.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn fedavg_errors() {
        assert!(fedavg(&[]).is_err());
        assert!(matches!(
            fedavg(&[scalar(1.0, 0, "z")]),
            Err(Error::ZeroSamples { client }) if client == "z"
        ));
        let other = ClientUpdate {
            client_id: "big".into(),
            params: ModelParams::zeros(Layout {
                input_dim: 2,
                hidden: [1, 1],
            }),
            sample_count: 1,
        };
        match fedavg(&[scalar(1.0, 1, "a"), other]) {
            Err(Error::LayoutMismatch { reference, client }) => {
                assert_eq!((reference.as_str(), client.as_str()), ("a", "big"))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn small_client(id: &str, n: usize, offset: f64) -> ClientDataset {
        let students = (0..n).map(|i| format!("{id}-{i}")).collect();
        let grades: Vec<Grade> = (0..n).map(|i| Grade::from_ordinal(i % 5 + 1).unwrap()).collect();
        let features = grades
            .iter()
            .map(|g| vec![g.ordinal() as f64 * 0.3 + offset, 0.5 - offset])
            .collect();
        ClientDataset::new(id, students, features, grades, 0.95, 8).unwrap()
    }

    fn small_config() -> FederationConfig {
        FederationConfig {
            rounds: 3,
            mlp: MlpConfig {
                input_dim: 2,
                hidden: [4, 3],
                batch_size: 4,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn pooled_pair_count_is_sum_of_client_pair_counts() {
        let clients = [small_client("a", 5, 0.0), small_client("b", 6, 1.0)];
        let report = run_centralized(&clients, &small_config()).unwrap();
        let total: u64 = report.client_sample_counts.values().sum();
        assert_eq!(total, 50);
    }

    #[test]
    fn report_has_one_loss_per_round() {
        let clients = [small_client("a", 5, 0.0), small_client("b", 6, 1.0)];
        let report = run_federated(&clients, &small_config()).unwrap();
        assert_eq!(report.round_losses.len(), 3);
        assert!(report.round_losses.iter().all(|l| l.is_finite()));
        assert_eq!(report.client_sample_counts["a"], 20);
    }

    #[test]
    fn differential_needs_two_students() {
        let clients = [small_client("a", 1, 0.0)];
        assert!(run_federated(&clients, &small_config()).is_err());
        let cfg = FederationConfig {
            use_differential: false,
            ..small_config()
        };
        assert!(run_federated(&clients, &cfg).is_ok());
    }

    #[test]
    fn derived_seeds_differ_by_tag() {
        assert_ne!(derive_seed(1, &[1, 0]), derive_seed(1, &[1, 1]));
        assert_ne!(derive_seed(1, &[1, 0]), derive_seed(2, &[1, 0]));
        assert_eq!(derive_seed(9, &[2, 3, 4]), derive_seed(9, &[2, 3, 4]));
    }
}
