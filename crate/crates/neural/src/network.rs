//! Layer specifications, shape inference, parameter initialization and the
//! forward pass of a feed-forward network over 1-D inputs.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{NeuralError, Result};
use crate::tape::{conv1d_output_len, BatchStats, Tape, Var};
use crate::tensor::Tensor;

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        out_units: usize,
    },
    Conv1d {
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    Batchnorm1d,
    GlobalAvgPool,
    Dropout {
        rate: f64,
    },
    /// conv-bn-relu-conv-bn plus a skip path, relu after the addition.
    ResidualBlock {
        out_channels: usize,
        stride: usize,
    },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::Relu => "relu",
            LayerSpec::Batchnorm1d => "batchnorm1d",
            LayerSpec::GlobalAvgPool => "global_avg_pool",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::ResidualBlock { .. } => "residual_block",
        }
    }
}

/// Per-example activation shape (batch axis excluded).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActShape {
    Flat(usize),
    Seq { channels: usize, length: usize },
}

impl ActShape {
    pub fn size(&self) -> usize {
        match *self {
            ActShape::Flat(n) => n,
            ActShape::Seq { channels, length } => channels * length,
        }
    }

    fn channels(&self) -> usize {
        match *self {
            ActShape::Flat(n) => n,
            ActShape::Seq { channels, .. } => channels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// (channels, length) of one example.
    pub input_shape: (usize, usize),
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
}

fn layer_err(index: usize, layer: &LayerSpec, message: impl Into<String>) -> NeuralError {
    NeuralError::shape(format!("layer {index} ({})", layer.name()), message)
}

fn residual_needs_projection(in_channels: usize, out_channels: usize, stride: usize) -> bool {
    in_channels != out_channels || stride != 1
}

impl NetworkSpec {
    /// Output shape of every layer in order, validating composition.
    pub fn layer_shapes(&self) -> Result<Vec<ActShape>> {
        let (channels, length) = self.input_shape;
        if channels == 0 || length == 0 {
            return Err(NeuralError::Config("input shape must be non-empty".into()));
        }
        let mut shape = ActShape::Seq { channels, length };
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match (layer, shape) {
                (LayerSpec::Dense { out_units }, _) => {
                    if *out_units == 0 {
                        return Err(layer_err(i, layer, "out_units must be positive"));
                    }
                    ActShape::Flat(*out_units)
                }
                (
                    LayerSpec::Conv1d {
                        out_channels,
                        kernel_size,
                        stride,
                        padding,
                    },
                    ActShape::Seq { length, .. },
                ) => {
                    if *kernel_size == 0 || *stride == 0 || *out_channels == 0 {
                        return Err(layer_err(i, layer, "kernel_size, stride and out_channels must be >= 1"));
                    }
                    let out_len = conv1d_output_len(length, *kernel_size, *stride, *padding)
                        .ok_or_else(|| layer_err(i, layer, format!("kernel longer than padded length {length}")))?;
                    ActShape::Seq {
                        channels: *out_channels,
                        length: out_len,
                    }
                }
                (LayerSpec::ResidualBlock { out_channels, stride }, ActShape::Seq { length, .. }) => {
                    if *stride == 0 || *out_channels == 0 {
                        return Err(layer_err(i, layer, "stride and out_channels must be >= 1"));
                    }
                    let out_len = conv1d_output_len(length, 3, *stride, 1)
                        .ok_or_else(|| layer_err(i, layer, "sequence too short"))?;
                    ActShape::Seq {
                        channels: *out_channels,
                        length: out_len,
                    }
                }
                (LayerSpec::Conv1d { .. } | LayerSpec::ResidualBlock { .. }, ActShape::Flat(_)) => {
                    return Err(layer_err(i, layer, "needs a (channels, length) input, got a flat vector"))
                }
                (LayerSpec::GlobalAvgPool, ActShape::Seq { channels, .. }) => ActShape::Flat(channels),
                (LayerSpec::GlobalAvgPool, ActShape::Flat(_)) => {
                    return Err(layer_err(i, layer, "needs a (channels, length) input, got a flat vector"))
                }
                (LayerSpec::Dropout { rate }, s) => {
                    if !(0.0..1.0).contains(rate) {
                        return Err(layer_err(i, layer, format!("dropout rate {rate} outside [0, 1)")));
                    }
                    s
                }
                (LayerSpec::Relu | LayerSpec::Batchnorm1d, s) => s,
            };
            shapes.push(shape);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<ActShape> {
        let shapes = self.layer_shapes()?;
        Ok(*shapes.last().unwrap_or(&ActShape::Seq {
            channels: self.input_shape.0,
            length: self.input_shape.1,
        }))
    }

    pub fn input_size(&self) -> usize {
        self.input_shape.0 * self.input_shape.1
    }
}

/// Feed-forward network: a spec plus its trainable parameters and
/// non-trainable buffers (batch-norm running statistics).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub spec: NetworkSpec,
    pub params: BTreeMap<String, Tensor>,
    pub buffers: BTreeMap<String, Tensor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; dropout masks drawn from the seed.
    Train { dropout_seed: u64 },
    Infer,
}

pub struct ForwardPass {
    pub output: Var,
    /// Batch statistics observed per batch-norm layer (training mode only),
    /// keyed by the layer's buffer prefix.
    pub batch_stats: Vec<(String, BatchStats)>,
}

fn he_normal(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| normal.sample(rng)).collect()).expect("shape matches")
}

fn layer_prefix(i: usize) -> String {
    format!("layer{i:02}")
}

impl Network {
    /// Deterministic He-normal initialization from `spec.seed`; biases and
    /// batch-norm shifts start at 0, batch-norm scales at 1.
    pub fn init(spec: NetworkSpec) -> Result<Self> {
        let shapes = spec.layer_shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut params = BTreeMap::new();
        let mut buffers = BTreeMap::new();
        let mut input = ActShape::Seq {
            channels: spec.input_shape.0,
            length: spec.input_shape.1,
        };
        let add_bn = |prefix: &str, c: usize, params: &mut BTreeMap<String, Tensor>, buffers: &mut BTreeMap<String, Tensor>| {
            params.insert(format!("{prefix}.gamma"), Tensor::filled(vec![c], 1.0));
            params.insert(format!("{prefix}.beta"), Tensor::zeros(vec![c]));
            buffers.insert(format!("{prefix}.running_mean"), Tensor::zeros(vec![c]));
            buffers.insert(format!("{prefix}.running_var"), Tensor::filled(vec![c], 1.0));
        };
        for (i, layer) in spec.layers.iter().enumerate() {
            let p = layer_prefix(i);
            match layer {
                LayerSpec::Dense { out_units } => {
                    let fan_in = input.size();
                    params.insert(format!("{p}.weight"), he_normal(&mut rng, vec![fan_in, *out_units], fan_in));
                    params.insert(format!("{p}.bias"), Tensor::zeros(vec![*out_units]));
                }
                LayerSpec::Conv1d {
                    out_channels,
                    kernel_size,
                    ..
                } => {
                    let cin = input.channels();
                    params.insert(
                        format!("{p}.weight"),
                        he_normal(&mut rng, vec![*out_channels, cin, *kernel_size], cin * kernel_size),
                    );
                    params.insert(format!("{p}.bias"), Tensor::zeros(vec![*out_channels]));
                }
                LayerSpec::Batchnorm1d => add_bn(&p, input.channels(), &mut params, &mut buffers),
                LayerSpec::ResidualBlock { out_channels, stride } => {
                    let cin = input.channels();
                    let cout = *out_channels;
                    params.insert(format!("{p}.conv1.weight"), he_normal(&mut rng, vec![cout, cin, 3], cin * 3));
                    add_bn(&format!("{p}.bn1"), cout, &mut params, &mut buffers);
                    params.insert(format!("{p}.conv2.weight"), he_normal(&mut rng, vec![cout, cout, 3], cout * 3));
                    add_bn(&format!("{p}.bn2"), cout, &mut params, &mut buffers);
                    if residual_needs_projection(cin, cout, *stride) {
                        params.insert(format!("{p}.proj.weight"), he_normal(&mut rng, vec![cout, cin, 1], cin));
                    }
                }
                LayerSpec::Relu | LayerSpec::GlobalAvgPool | LayerSpec::Dropout { .. } => {}
            }
            input = shapes[i];
        }
        Ok(Network { spec, params, buffers })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    fn leaf(&self, tape: &mut Tape, name: &str) -> Result<Var> {
        let t = self
            .params
            .get(name)
            .ok_or_else(|| NeuralError::Config(format!("missing parameter {name}")))?;
        Ok(tape.param(name, t.clone()))
    }

    fn batch_norm(
        &self,
        tape: &mut Tape,
        x: Var,
        prefix: &str,
        mode: Mode,
        stats: &mut Vec<(String, BatchStats)>,
    ) -> Result<Var> {
        let gamma = self.leaf(tape, &format!("{prefix}.gamma"))?;
        let beta = self.leaf(tape, &format!("{prefix}.beta"))?;
        match mode {
            Mode::Train { .. } => {
                let (y, s) = tape.batch_norm(x, gamma, beta, BATCH_NORM_EPS, None)?;
                stats.push((prefix.to_string(), s));
                Ok(y)
            }
            Mode::Infer => {
                let missing = || NeuralError::Config(format!("missing running statistics for {prefix}"));
                let mean = self.buffers.get(&format!("{prefix}.running_mean")).ok_or_else(missing)?;
                let var = self.buffers.get(&format!("{prefix}.running_var")).ok_or_else(missing)?;
                let (y, _) = tape.batch_norm(x, gamma, beta, BATCH_NORM_EPS, Some((mean.values(), var.values())))?;
                Ok(y)
            }
        }
    }

    /// Records the forward pass of a `[B, F]` (or `[B, C, L]`) batch on `tape`.
    pub fn record(&self, tape: &mut Tape, batch: &Tensor, mode: Mode) -> Result<ForwardPass> {
        let (c, l) = self.spec.input_shape;
        let b = match batch.shape() {
            [b, f] if *f == c * l => *b,
            [b, cc, ll] if *cc == c && *ll == l => *b,
            s => {
                return Err(NeuralError::shape(
                    "network input",
                    format!("expected [B, {}] or [B, {c}, {l}], got {s:?}", c * l),
                ))
            }
        };
        let mut x = tape.constant(batch.reshaped(vec![b, c, l])?);
        let mut stats = Vec::new();
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let p = layer_prefix(i);
            let at = |e: NeuralError| match e {
                NeuralError::Shape { message, .. } => layer_err(i, layer, message),
                other => other,
            };
            x = match layer {
                LayerSpec::Dense { .. } => {
                    let shape = tape.value(x).shape().to_vec();
                    let flat = shape[1..].iter().product();
                    let x2 = if shape.len() == 2 { x } else { tape.reshape(x, vec![b, flat]).map_err(at)? };
                    let w = self.leaf(tape, &format!("{p}.weight"))?;
                    let bias = self.leaf(tape, &format!("{p}.bias"))?;
                    let y = tape.matmul(x2, w).map_err(at)?;
                    tape.channel_bias(y, bias).map_err(at)?
                }
                LayerSpec::Conv1d { stride, padding, .. } => {
                    let w = self.leaf(tape, &format!("{p}.weight"))?;
                    let bias = self.leaf(tape, &format!("{p}.bias"))?;
                    let y = tape.conv1d(x, w, *stride, *padding).map_err(at)?;
                    tape.channel_bias(y, bias).map_err(at)?
                }
                LayerSpec::Relu => tape.relu(x),
                LayerSpec::Batchnorm1d => self.batch_norm(tape, x, &p, mode, &mut stats).map_err(at)?,
                LayerSpec::GlobalAvgPool => tape.global_avg_pool(x).map_err(at)?,
                LayerSpec::Dropout { rate } => match mode {
                    Mode::Infer => x,
                    Mode::Train { dropout_seed } => {
                        if *rate == 0.0 {
                            x
                        } else {
                            let n = tape.value(x).len();
                            let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                            let keep = 1.0 / (1.0 - rate);
                            let mask = (0..n)
                                .map(|_| if rng.gen::<f64>() < *rate { 0.0 } else { keep })
                                .collect();
                            tape.scale_const(x, mask).map_err(at)?
                        }
                    }
                },
                LayerSpec::ResidualBlock { out_channels, stride } => {
                    let cin = tape.value(x).shape()[1];
                    let w1 = self.leaf(tape, &format!("{p}.conv1.weight"))?;
                    let h = tape.conv1d(x, w1, *stride, 1).map_err(at)?;
                    let h = self.batch_norm(tape, h, &format!("{p}.bn1"), mode, &mut stats).map_err(at)?;
                    let h = tape.relu(h);
                    let w2 = self.leaf(tape, &format!("{p}.conv2.weight"))?;
                    let h = tape.conv1d(h, w2, 1, 1).map_err(at)?;
                    let h = self.batch_norm(tape, h, &format!("{p}.bn2"), mode, &mut stats).map_err(at)?;
                    let skip = if residual_needs_projection(cin, *out_channels, *stride) {
                        let wp = self.leaf(tape, &format!("{p}.proj.weight"))?;
                        tape.conv1d(x, wp, *stride, 0).map_err(at)?
                    } else {
                        x
                    };
                    let sum = tape.add(h, skip).map_err(at)?;
                    tape.relu(sum)
                }
            };
        }
        let out_shape = tape.value(x).shape().to_vec();
        let output = if out_shape.len() == 3 {
            let flat = out_shape[1] * out_shape[2];
            tape.reshape(x, vec![b, flat])?
        } else {
            x
        };
        Ok(ForwardPass {
            output,
            batch_stats: stats,
        })
    }

    /// Forward pass without gradient bookkeeping beyond a throwaway tape.
    pub fn forward(&self, batch: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pass = self.record(&mut tape, batch, mode)?;
        Ok(tape.value(pass.output).clone())
    }

    /// Exponential moving update of batch-norm running statistics.
    pub fn update_running_stats(&mut self, stats: &[(String, BatchStats)]) {
        for (prefix, s) in stats {
            if let Some(m) = self.buffers.get_mut(&format!("{prefix}.running_mean")) {
                for (r, v) in m.values_mut().iter_mut().zip(&s.mean) {
                    *r = (1.0 - BATCH_NORM_MOMENTUM) * *r + BATCH_NORM_MOMENTUM * v;
                }
            }
            if let Some(m) = self.buffers.get_mut(&format!("{prefix}.running_var")) {
                for (r, v) in m.values_mut().iter_mut().zip(&s.var) {
                    *r = (1.0 - BATCH_NORM_MOMENTUM) * *r + BATCH_NORM_MOMENTUM * v;
                }
            }
        }
    }
}

/// Dense/ReLU stack ending in one output unit.
pub fn build_mlp(input_features: usize, hidden: &[usize], seed: u64) -> NetworkSpec {
    let mut layers = Vec::with_capacity(2 * hidden.len() + 1);
    for &h in hidden {
        layers.push(LayerSpec::Dense { out_units: h });
        layers.push(LayerSpec::Relu);
    }
    layers.push(LayerSpec::Dense { out_units: 1 });
    NetworkSpec {
        input_shape: (1, input_features),
        layers,
        seed,
    }
}

pub const CNN7_DEFAULT_CHANNELS: [usize; 7] = [16, 16, 32, 32, 64, 64, 64];
pub const RESNET1D_DEFAULT_CHANNELS: [usize; 3] = [32, 64, 128];

/// Seven same-padded kernel-3 convolutions with ReLU, then GAP and a
/// 64-unit dense head.
pub fn build_cnn7(input_features: usize, channels: &[usize], seed: u64) -> Result<NetworkSpec> {
    if channels.len() != 7 {
        return Err(NeuralError::Config(format!(
            "cnn7 needs exactly 7 channel counts, got {}",
            channels.len()
        )));
    }
    let mut layers = Vec::new();
    for &c in channels {
        layers.push(LayerSpec::Conv1d {
            out_channels: c,
            kernel_size: 3,
            stride: 1,
            padding: 1,
        });
        layers.push(LayerSpec::Relu);
    }
    layers.extend([
        LayerSpec::GlobalAvgPool,
        LayerSpec::Dense { out_units: 64 },
        LayerSpec::Relu,
        LayerSpec::Dense { out_units: 1 },
    ]);
    Ok(NetworkSpec {
        input_shape: (1, input_features),
        layers,
        seed,
    })
}

/// Stem convolution, three residual blocks (the first keeps resolution, the
/// other two halve it), global average pooling and a 256-128-1 dense head
/// with dropout 0.5 between the dense layers.
pub fn build_resnet1d(input_features: usize, block_channels: &[usize], seed: u64) -> Result<NetworkSpec> {
    if block_channels.len() != 3 {
        return Err(NeuralError::Config(format!(
            "resnet1d needs exactly 3 block channel counts, got {}",
            block_channels.len()
        )));
    }
    let mut layers = vec![
        LayerSpec::Conv1d {
            out_channels: block_channels[0],
            kernel_size: 3,
            stride: 1,
            padding: 1,
        },
        LayerSpec::Batchnorm1d,
        LayerSpec::Relu,
    ];
    for (i, &c) in block_channels.iter().enumerate() {
        layers.push(LayerSpec::ResidualBlock {
            out_channels: c,
            stride: if i == 0 { 1 } else { 2 },
        });
    }
    layers.extend([
        LayerSpec::GlobalAvgPool,
        LayerSpec::Dense { out_units: 256 },
        LayerSpec::Relu,
        LayerSpec::Dropout { rate: 0.5 },
        LayerSpec::Dense { out_units: 128 },
        LayerSpec::Relu,
        LayerSpec::Dropout { rate: 0.5 },
        LayerSpec::Dense { out_units: 1 },
    ]);
    Ok(NetworkSpec {
        input_shape: (1, input_features),
        layers,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn mlp_layout() {
        let spec = build_mlp(35, &[64, 32], 0);
        let kinds: Vec<_> = spec.layers.iter().map(LayerSpec::name).collect();
        assert_eq!(kinds, ["dense", "relu", "dense", "relu", "dense"]);
        assert_eq!(spec.layers[0], LayerSpec::Dense { out_units: 64 });
        assert_eq!(spec.layers[2], LayerSpec::Dense { out_units: 32 });
        assert_eq!(build_mlp(35, &[], 0).layers, vec![LayerSpec::Dense { out_units: 1 }]);
        let net = Network::init(spec).unwrap();
        assert_eq!(net.forward(&batch(8, 35, 1), Mode::Infer).unwrap().shape(), &[8, 1]);
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let spec = NetworkSpec {
            input_shape: (1, 3),
            layers: vec![LayerSpec::Dense { out_units: 3 }],
            seed: 0,
        };
        let mut net = Network::init(spec).unwrap();
        let mut eye = Tensor::zeros(vec![3, 3]);
        for i in 0..3 {
            eye.values_mut()[i * 3 + i] = 1.0;
        }
        net.params.insert("layer00.weight".into(), eye);
        let x = batch(4, 3, 2);
        assert_eq!(net.forward(&x, Mode::Infer).unwrap().values(), x.values());
    }

    #[test]
    fn dropout_is_inert_at_inference() {
        let spec = NetworkSpec {
            input_shape: (1, 5),
            layers: vec![LayerSpec::Dropout { rate: 0.5 }],
            seed: 0,
        };
        let net = Network::init(spec).unwrap();
        let x = batch(3, 5, 3);
        assert_eq!(net.forward(&x, Mode::Infer).unwrap().values(), x.values());
        let trained = net.forward(&x, Mode::Train { dropout_seed: 9 }).unwrap();
        assert!(trained
            .values()
            .iter()
            .zip(x.values())
            .all(|(t, v)| *t == 0.0 || (*t - 2.0 * v).abs() < 1e-12));
    }

    #[test]
    fn cnn7_has_seven_convolutions() {
        let spec = build_cnn7(35, &CNN7_DEFAULT_CHANNELS, 4).unwrap();
        assert_eq!(spec.layers.iter().filter(|l| matches!(l, LayerSpec::Conv1d { .. })).count(), 7);
        assert_eq!(spec.output_shape().unwrap(), ActShape::Flat(1));
        let a = Network::init(spec.clone()).unwrap();
        let b = Network::init(spec).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.forward(&batch(5, 35, 0), Mode::Infer).unwrap().shape(), &[5, 1]);
        assert!(build_cnn7(35, &[1, 2, 3], 0).is_err());
    }

    #[test]
    fn resnet1d_layout() {
        let spec = build_resnet1d(35, &RESNET1D_DEFAULT_CHANNELS, 0).unwrap();
        let blocks = spec
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::ResidualBlock { .. }))
            .count();
        assert_eq!(blocks, 3);
        let gap = spec.layers.iter().position(|l| *l == LayerSpec::GlobalAvgPool).unwrap();
        let head: Vec<_> = spec.layers[gap + 1..]
            .iter()
            .filter(|l| !matches!(l, LayerSpec::Relu))
            .cloned()
            .collect();
        assert_eq!(
            head,
            vec![
                LayerSpec::Dense { out_units: 256 },
                LayerSpec::Dropout { rate: 0.5 },
                LayerSpec::Dense { out_units: 128 },
                LayerSpec::Dropout { rate: 0.5 },
                LayerSpec::Dense { out_units: 1 },
            ]
        );
        assert_eq!(spec.output_shape().unwrap(), ActShape::Flat(1));
        assert!(build_resnet1d(35, &[8, 8], 0).is_err());
    }

    #[test]
    fn zeroed_residual_branch_returns_projected_input() {
        let spec = NetworkSpec {
            input_shape: (2, 6),
            layers: vec![LayerSpec::ResidualBlock {
                out_channels: 2,
                stride: 1,
            }],
            seed: 3,
        };
        let mut net = Network::init(spec).unwrap();
        net.params.insert("layer00.conv2.weight".into(), Tensor::zeros(vec![2, 2, 3]));
        // Non-negative input so the closing ReLU is the identity on the skip path.
        let x = batch(3, 12, 5).map(f64::abs);
        for mode in [Mode::Infer, Mode::Train { dropout_seed: 0 }] {
            let y = net.forward(&x.reshaped(vec![3, 2, 6]).unwrap(), mode).unwrap();
            for (a, b) in y.values().iter().zip(x.values()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let spec = NetworkSpec {
            input_shape: (1, 4),
            layers: vec![LayerSpec::GlobalAvgPool, LayerSpec::GlobalAvgPool],
            seed: 0,
        };
        let err = spec.layer_shapes().unwrap_err().to_string();
        assert!(err.contains("layer 1 (global_avg_pool)"), "{err}");

        let net = Network::init(build_mlp(4, &[2], 0)).unwrap();
        assert!(net.forward(&batch(2, 5, 0), Mode::Infer).is_err());
    }
}
