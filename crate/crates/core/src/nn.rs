//! Two-hidden-layer ReLU regressor with inverted dropout, trained by
//! mini-batch SGD on squared error.
//!
//! Parameters live in one flat vector so they can be averaged across
//! clients without knowing the network structure. The canonical order is
//! `W1, b1, W2, b2, W3, b3`, with weight matrices stored row-major as
//! `[out][in]`.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairs::PairSample;

pub const DEFAULT_HIDDEN: [usize; 2] = [50, 10];
pub const DEFAULT_DROPOUT: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: [usize; 2],
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs_per_round: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            input_dim: 100,
            hidden: DEFAULT_HIDDEN,
            dropout_rate: DEFAULT_DROPOUT,
            learning_rate: 0.01,
            batch_size: 64,
            local_epochs_per_round: 1,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn with_input_dim(input_dim: usize) -> Self {
        MlpConfig {
            input_dim,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::invalid("layer sizes must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be finite and non-negative"));
        }
        if self.batch_size == 0 || self.local_epochs_per_round == 0 {
            return Err(Error::invalid("batch_size and local_epochs_per_round must be at least 1"));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout {
            input_dim: self.input_dim,
            hidden: self.hidden,
        }
    }
}

/// Layer sizes; two parameter vectors can be averaged iff their layouts match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Layout {
    pub input_dim: usize,
    pub hidden: [usize; 2],
}

struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    len: usize,
}

impl Layout {
    pub fn param_count(&self) -> usize {
        self.offsets().len
    }

    fn offsets(&self) -> Offsets {
        let (d, [h1, h2]) = (self.input_dim, self.hidden);
        let w1 = 0;
        let b1 = w1 + h1 * d;
        let w2 = b1 + h1;
        let b2 = w2 + h2 * h1;
        let w3 = b2 + h2;
        let b3 = w3 + h2;
        Offsets {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            len: b3 + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    layout: Layout,
    values: Vec<f64>,
}

/// Dropout switch for a forward pass.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub z1: Vec<f64>,
    pub h1: Vec<f64>,
    pub z2: Vec<f64>,
    pub h2: Vec<f64>,
    pub output: f64,
}

/// Anything usable as one regression example.
pub trait Sample {
    fn input(&self) -> &[f64];
    fn target(&self) -> f64;
}

impl Sample for PairSample {
    fn input(&self) -> &[f64] {
        &self.d
    }
    fn target(&self) -> f64 {
        self.e
    }
}

impl Sample for (Vec<f64>, f64) {
    fn input(&self) -> &[f64] {
        &self.0
    }
    fn target(&self) -> f64 {
        self.1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochResult {
    pub params: ModelParams,
    /// Mean squared error over the epoch, measured before each batch update.
    pub mean_loss: f64,
}

/// He-scaled normal weights, zero biases.
pub fn init_params(config: &MlpConfig) -> Result<ModelParams> {
    config.validate()?;
    let layout = config.layout();
    let o = layout.offsets();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut values = vec![0.0; o.len];
    let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
        let scale = (2.0 / fan_in as f64).sqrt();
        for v in &mut values[range] {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = z * scale;
        }
    };
    let [h1, h2] = layout.hidden;
    fill(o.w1..o.b1, layout.input_dim);
    fill(o.w2..o.b2, h1);
    fill(o.w3..o.b3, h2);
    Ok(ModelParams { layout, values })
}

impl ModelParams {
    pub fn from_values(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.param_count() {
            return Err(Error::DimensionMismatch {
                expected: layout.param_count(),
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("parameters must be finite"));
        }
        Ok(ModelParams { layout, values })
    }

    pub fn zeros(layout: Layout) -> Self {
        ModelParams {
            layout,
            values: vec![0.0; layout.param_count()],
        }
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn input_dim(&self) -> usize {
        self.layout.input_dim
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.layout.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.layout.input_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// `W3 . drop(relu(W2 . drop(relu(W1 x + b1)) + b2)) + b3`.
    pub fn forward(&self, x: &[f64], mode: Mode<'_>, dropout_rate: f64) -> Result<f64> {
        Ok(self.forward_trace(x, mode, dropout_rate)?.output)
    }

    pub fn forward_trace(&self, x: &[f64], mode: Mode<'_>, dropout_rate: f64) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let masks = match mode {
            Mode::Eval => None,
            Mode::Train(rng) => Some(self.sample_masks(rng, dropout_rate)),
        };
        let (m1, m2) = match &masks {
            Some((a, b)) => (Some(a.as_slice()), Some(b.as_slice())),
            None => (None, None),
        };
        Ok(self.run(x, m1, m2))
    }

    fn sample_masks<R: Rng + ?Sized>(&self, rng: &mut R, rate: f64) -> (Vec<f64>, Vec<f64>) {
        let [h1, h2] = self.layout.hidden;
        let keep = 1.0 - rate;
        let scale = 1.0 / keep;
        let mut draw = |n: usize| -> Vec<f64> {
            if rate == 0.0 {
                return vec![1.0; n];
            }
            (0..n)
                .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
                .collect()
        };
        let a = draw(h1);
        let b = draw(h2);
        (a, b)
    }

    fn run(&self, x: &[f64], m1: Option<&[f64]>, m2: Option<&[f64]>) -> ForwardTrace {
        let o = self.layout.offsets();
        let (d, [h1n, h2n]) = (self.layout.input_dim, self.layout.hidden);
        let p = &self.values;

        let z1: Vec<f64> = (0..h1n)
            .map(|u| p[o.b1 + u] + dot(&p[o.w1 + u * d..o.w1 + (u + 1) * d], x))
            .collect();
        let h1: Vec<f64> = z1
            .iter()
            .enumerate()
            .map(|(u, z)| z.max(0.0) * m1.map_or(1.0, |m| m[u]))
            .collect();
        let z2: Vec<f64> = (0..h2n)
            .map(|u| p[o.b2 + u] + dot(&p[o.w2 + u * h1n..o.w2 + (u + 1) * h1n], &h1))
            .collect();
        let h2: Vec<f64> = z2
            .iter()
            .enumerate()
            .map(|(u, z)| z.max(0.0) * m2.map_or(1.0, |m| m[u]))
            .collect();
        let output = p[o.b3] + dot(&p[o.w3..o.b3], &h2);
        ForwardTrace { z1, h1, z2, h2, output }
    }

    /// Adds the gradient of `weight * (y_hat - target)^2` into `grad` and
    /// returns the unweighted squared error.
    fn accumulate_gradient(
        &self,
        x: &[f64],
        target: f64,
        masks: Option<(&[f64], &[f64])>,
        weight: f64,
        grad: &mut [f64],
    ) -> f64 {
        let o = self.layout.offsets();
        let (d, [h1n, h2n]) = (self.layout.input_dim, self.layout.hidden);
        let p = &self.values;
        let (m1, m2) = match masks {
            Some((a, b)) => (Some(a), Some(b)),
            None => (None, None),
        };
        let t = self.run(x, m1, m2);
        let err = t.output - target;
        let dy = 2.0 * err * weight;

        grad[o.b3] += dy;
        let mut dz2 = vec![0.0; h2n];
        for u in 0..h2n {
            grad[o.w3 + u] += dy * t.h2[u];
            if t.z2[u] > 0.0 {
                dz2[u] = dy * p[o.w3 + u] * m2.map_or(1.0, |m| m[u]);
            }
        }
        let mut dh1 = vec![0.0; h1n];
        for (u, &g) in dz2.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad[o.b2 + u] += g;
            let row = o.w2 + u * h1n;
            for k in 0..h1n {
                grad[row + k] += g * t.h1[k];
                dh1[k] += g * p[row + k];
            }
        }
        for u in 0..h1n {
            if t.z1[u] <= 0.0 {
                continue;
            }
            let g = dh1[u] * m1.map_or(1.0, |m| m[u]);
            if g == 0.0 {
                continue;
            }
            grad[o.b1 + u] += g;
            let row = o.w1 + u * d;
            for (gw, xi) in grad[row..row + d].iter_mut().zip(x) {
                *gw += g * xi;
            }
        }
        err * err
    }

    /// Mean squared error and its gradient over `samples`, dropout disabled.
    pub fn loss_and_gradient<S: Sample>(&self, samples: &[S]) -> Result<(f64, Vec<f64>)> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("training samples"));
        }
        let mut grad = vec![0.0; self.values.len()];
        let w = 1.0 / samples.len() as f64;
        let mut loss = 0.0;
        for s in samples {
            self.check_input(s.input())?;
            loss += self.accumulate_gradient(s.input(), s.target(), None, w, &mut grad);
        }
        Ok((loss * w, grad))
    }

    /// Mean squared error in eval mode.
    pub fn loss<S: Sample>(&self, samples: &[S]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("training samples"));
        }
        let mut total = 0.0;
        for s in samples {
            self.check_input(s.input())?;
            let e = self.run(s.input(), None, None).output - s.target();
            total += e * e;
        }
        Ok(total / samples.len() as f64)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One shuffled pass of mini-batch SGD over `samples`.
pub fn train_epoch<S: Sample, R: Rng + ?Sized>(
    params: &ModelParams,
    samples: &[S],
    config: &MlpConfig,
    rng: &mut R,
) -> Result<EpochResult> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyInput("training samples"));
    }
    for s in samples {
        params.check_input(s.input())?;
    }
    let mut current = params.clone();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);

    let mut grad = vec![0.0; current.values.len()];
    let mut total_loss = 0.0;
    for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let w = 1.0 / chunk.len() as f64;
        let mut batch_loss = 0.0;
        for &k in chunk {
            let s = &samples[k];
            let masks = if config.dropout_rate > 0.0 {
                Some(current.sample_masks(rng, config.dropout_rate))
            } else {
                None
            };
            let masks = masks.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice()));
            batch_loss += current.accumulate_gradient(s.input(), s.target(), masks, w, &mut grad);
        }
        if !batch_loss.is_finite() {
            return Err(Error::NonFiniteLoss { batch });
        }
        total_loss += batch_loss;
        if config.learning_rate != 0.0 {
            for (v, g) in current.values.iter_mut().zip(&grad) {
                *v -= config.learning_rate * g;
            }
        }
    }
    let mean_loss = total_loss / samples.len() as f64;
    if current.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss {
            batch: samples.len().div_ceil(config.batch_size) - 1,
        });
    }
    Ok(EpochResult {
        params: current,
        mean_loss,
    })
}

/// Eval-mode predictions, one per input.
pub fn predict_batch(params: &ModelParams, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
    xs.iter()
        .map(|x| params.forward(x, Mode::Eval, 0.0))
        .collect()
}
