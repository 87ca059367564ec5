use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{NeuralError, Result};
use crate::network::{ActShape, Mode, Network, NetworkSpec};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
    Sgd { lr: f64 },
}

impl Optimizer {
    pub fn lr(&self) -> f64 {
        match *self {
            Optimizer::Adam { lr, .. } | Optimizer::Sgd { lr } => lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub standardize_features: bool,
    pub standardize_target: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            optimizer: Optimizer::Adam {
                lr: 1e-3,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            epochs: 200,
            batch_size: 32,
            seed: 0,
            standardize_features: true,
            standardize_target: true,
        }
    }
}

impl TrainOptions {
    fn validate(&self) -> Result<()> {
        let lr = self.optimizer.lr();
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(NeuralError::Config(format!("learning rate must be finite and >= 0, got {lr}")));
        }
        if self.epochs == 0 {
            return Err(NeuralError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(NeuralError::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Feature and target affine normalization fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub feature_mean: Vec<f64>,
    pub feature_sd: Vec<f64>,
    pub target_mean: f64,
    pub target_sd: f64,
}

impl Normalization {
    fn identity(n_features: usize) -> Self {
        Normalization {
            feature_mean: vec![0.0; n_features],
            feature_sd: vec![1.0; n_features],
            target_mean: 0.0,
            target_sd: 1.0,
        }
    }
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    (mean, if sd > 0.0 && sd.is_finite() { sd } else { 1.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedNetwork {
    pub network: Network,
    pub normalization: Normalization,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub model: TrainedNetwork,
    /// Mean training loss per epoch, in standardized target units.
    pub loss_curve: Vec<f64>,
}

fn check_rows(n_features: usize, features: &[f64], expected_rows: Option<usize>) -> Result<usize> {
    if n_features == 0 || features.len() % n_features != 0 {
        return Err(NeuralError::shape(
            "feature matrix",
            format!("{} values do not form rows of {n_features}", features.len()),
        ));
    }
    let rows = features.len() / n_features;
    if let Some(r) = expected_rows {
        if r != rows {
            return Err(NeuralError::shape("feature matrix", format!("{rows} rows vs {r} targets")));
        }
    }
    Ok(rows)
}

struct AdamState {
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    step: i32,
}

/// Minibatch MSE training of `spec` on row-major `features` (`n_features`
/// per row) against `targets`.
pub fn train_network(
    spec: NetworkSpec,
    features: &[f64],
    n_features: usize,
    targets: &[f64],
    opts: &TrainOptions,
) -> Result<TrainingOutcome> {
    opts.validate()?;
    let rows = check_rows(n_features, features, Some(targets.len()))?;
    if rows == 0 {
        return Err(NeuralError::Config("empty training set".into()));
    }
    if spec.input_size() != n_features {
        return Err(NeuralError::shape(
            "network input",
            format!("spec expects {} features, data has {n_features}", spec.input_size()),
        ));
    }
    if spec.output_shape()? != ActShape::Flat(1) {
        return Err(NeuralError::Config("regression network must end in a single output unit".into()));
    }

    let mut norm = Normalization::identity(n_features);
    if opts.standardize_features {
        for j in 0..n_features {
            let (m, s) = mean_sd((0..rows).map(|i| features[i * n_features + j]));
            norm.feature_mean[j] = m;
            norm.feature_sd[j] = s;
        }
    }
    if opts.standardize_target {
        let (m, s) = mean_sd(targets.iter().copied());
        norm.target_mean = m;
        norm.target_sd = s;
    }
    let x: Vec<f64> = features
        .iter()
        .enumerate()
        .map(|(i, v)| (v - norm.feature_mean[i % n_features]) / norm.feature_sd[i % n_features])
        .collect();
    let y: Vec<f64> = targets.iter().map(|t| (t - norm.target_mean) / norm.target_sd).collect();

    let mut net = Network::init(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..rows).collect();
    let mut adam = AdamState {
        m: BTreeMap::new(),
        v: BTreeMap::new(),
        step: 0,
    };
    let mut loss_curve = Vec::with_capacity(opts.epochs);

    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(opts.batch_size) {
            let mut bx = Vec::with_capacity(chunk.len() * n_features);
            let mut by = Vec::with_capacity(chunk.len());
            for &i in chunk {
                bx.extend_from_slice(&x[i * n_features..(i + 1) * n_features]);
                by.push(y[i]);
            }
            let batch = Tensor::new(vec![chunk.len(), n_features], bx)?;
            let mut tape = Tape::new();
            let pass = net.record(
                &mut tape,
                &batch,
                Mode::Train {
                    dropout_seed: rng.gen(),
                },
            )?;
            let loss = tape.mse(pass.output, &by)?;
            let loss_value = tape.value(loss).values()[0];
            if !loss_value.is_finite() {
                return Err(NeuralError::Diverged {
                    epoch,
                    loss: loss_value,
                });
            }
            total += loss_value * chunk.len() as f64;
            let grads = tape.backward(loss)?;
            net.update_running_stats(&pass.batch_stats);
            apply_update(&mut net, &grads, &opts.optimizer, &mut adam);
        }
        let epoch_loss = total / rows as f64;
        if !epoch_loss.is_finite() {
            return Err(NeuralError::Diverged { epoch, loss: epoch_loss });
        }
        loss_curve.push(epoch_loss);
    }

    Ok(TrainingOutcome {
        model: TrainedNetwork {
            network: net,
            normalization: norm,
        },
        loss_curve,
    })
}

fn apply_update(net: &mut Network, grads: &BTreeMap<String, Tensor>, opt: &Optimizer, state: &mut AdamState) {
    state.step += 1;
    for (name, g) in grads {
        let Some(p) = net.params.get_mut(name) else { continue };
        match *opt {
            Optimizer::Sgd { lr } => {
                for (w, d) in p.values_mut().iter_mut().zip(g.values()) {
                    *w -= lr * d;
                }
            }
            Optimizer::Adam { lr, beta1, beta2, eps } => {
                let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
                let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
                let c1 = 1.0 - beta1.powi(state.step);
                let c2 = 1.0 - beta2.powi(state.step);
                for (((w, d), mi), vi) in p.values_mut().iter_mut().zip(g.values()).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *mi = beta1 * *mi + (1.0 - beta1) * d;
                    *vi = beta2 * *vi + (1.0 - beta2) * d * d;
                    *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                }
            }
        }
    }
}

impl TrainedNetwork {
    pub fn n_features(&self) -> usize {
        self.normalization.feature_mean.len()
    }

    /// Inference-mode predictions in original target units.
    pub fn predict(&self, features: &[f64], n_features: usize) -> Result<Vec<f64>> {
        if n_features != self.n_features() {
            return Err(NeuralError::shape(
                "predict",
                format!("model expects {} features, got {n_features}", self.n_features()),
            ));
        }
        let rows = check_rows(n_features, features, None)?;
        if rows == 0 {
            return Ok(Vec::new());
        }
        let norm = &self.normalization;
        let x: Vec<f64> = features
            .iter()
            .enumerate()
            .map(|(i, v)| (v - norm.feature_mean[i % n_features]) / norm.feature_sd[i % n_features])
            .collect();
        let out = self
            .network
            .forward(&Tensor::new(vec![rows, n_features], x)?, Mode::Infer)?;
        Ok(out
            .values()
            .iter()
            .map(|v| v * norm.target_sd + norm.target_mean)
            .collect())
    }
}
