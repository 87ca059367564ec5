//! Reverse-mode differentiation over a recorded operation tape.
//!
//! Every forward computation appends a node holding its value and the
//! operation that produced it. [`Tape::backward`] walks the nodes in reverse
//! and accumulates adjoints; gradients are returned for the named parameter
//! leaves only.

use std::collections::BTreeMap;

use crate::error::{NeuralError, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    ChannelBias(Var, Var),
    Conv1d {
        input: Var,
        weight: Var,
        stride: usize,
        padding: usize,
    },
    Relu(Var),
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    GlobalAvgPool(Var),
    ScaleConst(Var, Vec<f64>),
    Add(Var, Var),
    Mul(Var, Var),
    Reshape(Var),
    Sum(Var),
    Mse(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    param: Option<String>,
}

/// Gradients of a scalar loss with respect to every named parameter leaf.
pub type Gradients = BTreeMap<String, Tensor>;

/// Per-channel statistics observed by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// (batch, channels, length) view of a rank-2 or rank-3 activation.
fn bcl(shape: &[usize], location: &str) -> Result<(usize, usize, usize)> {
    match shape {
        [b, c] => Ok((*b, *c, 1)),
        [b, c, l] => Ok((*b, *c, *l)),
        _ => Err(NeuralError::shape(
            location,
            format!("expected rank-2 or rank-3 activation, got {shape:?}"),
        )),
    }
}

pub fn conv1d_output_len(length: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = length + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Sign pattern (`input > 0`) of every ReLU on the tape, in recording order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut pattern = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                pattern.extend(self.nodes[x.0].value.values().iter().map(|v| *v > 0.0));
            }
        }
        pattern
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Trainable leaf whose gradient is reported under `name`.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            param: Some(name.into()),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// `[n, k] x [k, m] -> [n, m]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let (n, k, m) = match (sa, sb) {
            ([n, k], [k2, m]) if k == k2 => (*n, *k, *m),
            _ => {
                return Err(NeuralError::shape(
                    "matmul",
                    format!("incompatible operands {sa:?} x {sb:?}"),
                ))
            }
        };
        let (av, bv) = (self.value(a).values(), self.value(b).values());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &av[i * k..(i + 1) * k];
            let dst = &mut out[i * m..(i + 1) * m];
            for (p, &x) in row.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                for (d, &w) in dst.iter_mut().zip(&bv[p * m..(p + 1) * m]) {
                    *d += x * w;
                }
            }
        }
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b)))
    }

    /// Adds `bias[c]` along channel axis 1 of a `[B, C]` or `[B, C, L]` tensor.
    pub fn channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (b, c, l) = bcl(self.value(x).shape(), "channel_bias")?;
        if self.value(bias).shape() != [c] {
            return Err(NeuralError::shape(
                "channel_bias",
                format!("bias shape {:?} for {c} channels", self.value(bias).shape()),
            ));
        }
        let bv = self.value(bias).values().to_vec();
        let mut out = self.value(x).clone();
        let vals = out.values_mut();
        for bi in 0..b {
            for (ci, &bias_c) in bv.iter().enumerate() {
                let start = (bi * c + ci) * l;
                for v in &mut vals[start..start + l] {
                    *v += bias_c;
                }
            }
        }
        Ok(self.push(out, Op::ChannelBias(x, bias)))
    }

    /// Cross-correlation of `[B, Cin, L]` with weights `[Cout, Cin, K]`, zero padded.
    pub fn conv1d(&mut self, input: Var, weight: Var, stride: usize, padding: usize) -> Result<Var> {
        let (b, cin, l) = match self.value(input).shape() {
            [b, c, l] => (*b, *c, *l),
            s => return Err(NeuralError::shape("conv1d", format!("input must be [B, C, L], got {s:?}"))),
        };
        let (cout, k) = match self.value(weight).shape() {
            [o, c, k] if *c == cin => (*o, *k),
            s => {
                return Err(NeuralError::shape(
                    "conv1d",
                    format!("weight {s:?} incompatible with {cin} input channels"),
                ))
            }
        };
        let lout = conv1d_output_len(l, k, stride, padding)
            .ok_or_else(|| NeuralError::shape("conv1d", format!("kernel {k} longer than padded input {l}")))?;
        let (xv, wv) = (self.value(input).values(), self.value(weight).values());
        let mut out = vec![0.0; b * cout * lout];
        for bi in 0..b {
            for o in 0..cout {
                let dst = &mut out[(bi * cout + o) * lout..(bi * cout + o + 1) * lout];
                for c in 0..cin {
                    let xrow = &xv[(bi * cin + c) * l..(bi * cin + c + 1) * l];
                    let wrow = &wv[(o * cin + c) * k..(o * cin + c + 1) * k];
                    for (t, d) in dst.iter_mut().enumerate() {
                        let origin = (t * stride) as isize - padding as isize;
                        let mut acc = 0.0;
                        for (kk, &w) in wrow.iter().enumerate() {
                            let i = origin + kk as isize;
                            if i >= 0 && (i as usize) < l {
                                acc += w * xrow[i as usize];
                            }
                        }
                        *d += acc;
                    }
                }
            }
        }
        let value = Tensor::new(vec![b, cout, lout], out)?;
        Ok(self.push(
            value,
            Op::Conv1d {
                input,
                weight,
                stride,
                padding,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, Op::Relu(x))
    }

    /// Batch normalization over the batch and length axes, per channel.
    ///
    /// With `fixed = None` the batch statistics are used (and returned so the
    /// caller can update running averages); otherwise the given mean/variance.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        fixed: Option<(&[f64], &[f64])>,
    ) -> Result<(Var, BatchStats)> {
        let (b, c, l) = bcl(self.value(x).shape(), "batch_norm")?;
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(NeuralError::shape("batch_norm", format!("affine parameters must have shape [{c}]")));
        }
        let xv = self.value(x).values();
        let count = (b * l) as f64;
        let (mean, var) = match fixed {
            Some((m, v)) => {
                if m.len() != c || v.len() != c {
                    return Err(NeuralError::shape("batch_norm", "running statistics length mismatch"));
                }
                (m.to_vec(), v.to_vec())
            }
            None => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ci in 0..c {
                    let mut s = 0.0;
                    for bi in 0..b {
                        s += xv[(bi * c + ci) * l..(bi * c + ci + 1) * l].iter().sum::<f64>();
                    }
                    let m = s / count;
                    let mut ss = 0.0;
                    for bi in 0..b {
                        ss += xv[(bi * c + ci) * l..(bi * c + ci + 1) * l]
                            .iter()
                            .map(|v| (v - m) * (v - m))
                            .sum::<f64>();
                    }
                    mean[ci] = m;
                    var[ci] = ss / count;
                }
                (mean, var)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (gv, bv) = (self.value(gamma).values(), self.value(beta).values());
        let mut normalized = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for bi in 0..b {
            for ci in 0..c {
                for t in 0..l {
                    let idx = (bi * c + ci) * l + t;
                    let xh = (xv[idx] - mean[ci]) * inv_std[ci];
                    normalized[idx] = xh;
                    out[idx] = gv[ci] * xh + bv[ci];
                }
            }
        }
        let value = Tensor::new(self.value(x).shape().to_vec(), out)?;
        let var_node = self.push(
            value,
            Op::BatchNorm {
                input: x,
                gamma,
                beta,
                normalized,
                inv_std,
                batch_stats: fixed.is_none(),
            },
        );
        Ok((var_node, BatchStats { mean, var }))
    }

    /// `[B, C, L] -> [B, C]` mean over the length axis.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (b, c, l) = match self.value(x).shape() {
            [b, c, l] => (*b, *c, *l),
            s => return Err(NeuralError::shape("global_avg_pool", format!("input must be [B, C, L], got {s:?}"))),
        };
        let xv = self.value(x).values();
        let out: Vec<f64> = (0..b * c)
            .map(|i| xv[i * l..(i + 1) * l].iter().sum::<f64>() / l as f64)
            .collect();
        Ok(self.push(Tensor::new(vec![b, c], out)?, Op::GlobalAvgPool(x)))
    }

    /// Elementwise product with a constant tensor (dropout masks).
    pub fn scale_const(&mut self, x: Var, factors: Vec<f64>) -> Result<Var> {
        if factors.len() != self.value(x).len() {
            return Err(NeuralError::shape("scale_const", "mask length mismatch"));
        }
        let mut value = self.value(x).clone();
        for (v, f) in value.values_mut().iter_mut().zip(&factors) {
            *v *= f;
        }
        Ok(self.push(value, Op::ScaleConst(x, factors)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(NeuralError::shape(
                "add",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(NeuralError::shape(
                "mul",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let values = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), values)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).values().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Mean squared error between `pred` and a constant target of equal length.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let pv = self.value(pred).values();
        if pv.len() != target.len() || pv.is_empty() {
            return Err(NeuralError::shape(
                "mse",
                format!("{} predictions vs {} targets", pv.len(), target.len()),
            ));
        }
        let loss = pv.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pv.len() as f64;
        Ok(self.push(Tensor::scalar(loss), Op::Mse(pred, target.to_vec())))
    }

    /// Accumulates d(loss)/d(node) for every node and returns the parameter
    /// gradients. Parameters off the loss path get zero tensors.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(NeuralError::State(
                "backward already ran on this tape; record a new forward pass".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(NeuralError::shape("backward", "loss must be a scalar"));
        }
        self.consumed = true;

        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Tensor::filled(self.value(loss).shape().to_vec(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    adj[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let (n, k) = (av.shape()[0], av.shape()[1]);
                    let m = bv.shape()[1];
                    let gv = g.values();
                    let mut ga = vec![0.0; n * k];
                    let mut gb = vec![0.0; k * m];
                    for i in 0..n {
                        let grow = &gv[i * m..(i + 1) * m];
                        for p in 0..k {
                            let brow = &bv.values()[p * m..(p + 1) * m];
                            ga[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                            let x = av.values()[i * k + p];
                            for (d, &gg) in gb[p * m..(p + 1) * m].iter_mut().zip(grow) {
                                *d += x * gg;
                            }
                        }
                    }
                    accumulate(&mut adj, *a, Tensor::new(vec![n, k], ga)?);
                    accumulate(&mut adj, *b, Tensor::new(vec![k, m], gb)?);
                }
                Op::ChannelBias(x, bias) => {
                    let (b, c, l) = bcl(g.shape(), "channel_bias")?;
                    let mut gb = vec![0.0; c];
                    for bi in 0..b {
                        for (ci, d) in gb.iter_mut().enumerate() {
                            *d += g.values()[(bi * c + ci) * l..(bi * c + ci + 1) * l].iter().sum::<f64>();
                        }
                    }
                    accumulate(&mut adj, *bias, Tensor::new(vec![c], gb)?);
                    accumulate(&mut adj, *x, g);
                }
                Op::Conv1d {
                    input,
                    weight,
                    stride,
                    padding,
                } => {
                    let (xv, wv) = (&self.nodes[input.0].value, &self.nodes[weight.0].value);
                    let (b, cin, l) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                    let (cout, k) = (wv.shape()[0], wv.shape()[2]);
                    let lout = g.shape()[2];
                    let mut gx = vec![0.0; xv.len()];
                    let mut gw = vec![0.0; wv.len()];
                    for bi in 0..b {
                        for o in 0..cout {
                            let grow = &g.values()[(bi * cout + o) * lout..(bi * cout + o + 1) * lout];
                            for c in 0..cin {
                                let xoff = (bi * cin + c) * l;
                                let woff = (o * cin + c) * k;
                                for (t, &gg) in grow.iter().enumerate() {
                                    if gg == 0.0 {
                                        continue;
                                    }
                                    let origin = (t * stride) as isize - *padding as isize;
                                    for kk in 0..k {
                                        let i = origin + kk as isize;
                                        if i >= 0 && (i as usize) < l {
                                            let i = i as usize;
                                            gx[xoff + i] += wv.values()[woff + kk] * gg;
                                            gw[woff + kk] += xv.values()[xoff + i] * gg;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    let (xs, ws) = (xv.shape().to_vec(), wv.shape().to_vec());
                    accumulate(&mut adj, *input, Tensor::new(xs, gx)?);
                    accumulate(&mut adj, *weight, Tensor::new(ws, gw)?);
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[x.0].value;
                    let values = g
                        .values()
                        .iter()
                        .zip(xv.values())
                        .map(|(&gg, &v)| if v > 0.0 { gg } else { 0.0 })
                        .collect();
                    let t = Tensor::new(g.shape().to_vec(), values)?;
                    accumulate(&mut adj, *x, t);
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    normalized,
                    inv_std,
                    batch_stats,
                } => {
                    let (b, c, l) = bcl(g.shape(), "batch_norm")?;
                    let gamma_v = self.nodes[gamma.0].value.values();
                    let gv = g.values();
                    let mut ggamma = vec![0.0; c];
                    let mut gbeta = vec![0.0; c];
                    let mut gx = vec![0.0; gv.len()];
                    let count = (b * l) as f64;
                    for ci in 0..c {
                        let mut sum_dxh = 0.0;
                        let mut sum_dxh_xh = 0.0;
                        for bi in 0..b {
                            for t in 0..l {
                                let idx = (bi * c + ci) * l + t;
                                ggamma[ci] += gv[idx] * normalized[idx];
                                gbeta[ci] += gv[idx];
                                let dxh = gv[idx] * gamma_v[ci];
                                sum_dxh += dxh;
                                sum_dxh_xh += dxh * normalized[idx];
                            }
                        }
                        for bi in 0..b {
                            for t in 0..l {
                                let idx = (bi * c + ci) * l + t;
                                let dxh = gv[idx] * gamma_v[ci];
                                gx[idx] = if *batch_stats {
                                    inv_std[ci] / count
                                        * (count * dxh - sum_dxh - normalized[idx] * sum_dxh_xh)
                                } else {
                                    dxh * inv_std[ci]
                                };
                            }
                        }
                    }
                    let shape = g.shape().to_vec();
                    accumulate(&mut adj, *gamma, Tensor::new(vec![c], ggamma)?);
                    accumulate(&mut adj, *beta, Tensor::new(vec![c], gbeta)?);
                    accumulate(&mut adj, *input, Tensor::new(shape, gx)?);
                }
                Op::GlobalAvgPool(x) => {
                    let xs = self.nodes[x.0].value.shape().to_vec();
                    let l = xs[2];
                    let mut gx = vec![0.0; xs.iter().product()];
                    for (i, &gg) in g.values().iter().enumerate() {
                        for v in &mut gx[i * l..(i + 1) * l] {
                            *v = gg / l as f64;
                        }
                    }
                    accumulate(&mut adj, *x, Tensor::new(xs, gx)?);
                }
                Op::ScaleConst(x, factors) => {
                    let values = g.values().iter().zip(factors).map(|(a, b)| a * b).collect();
                    accumulate(&mut adj, *x, Tensor::new(g.shape().to_vec(), values)?);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let ga = g.values().iter().zip(bv.values()).map(|(x, y)| x * y).collect();
                    let gb = g.values().iter().zip(av.values()).map(|(x, y)| x * y).collect();
                    let shape = g.shape().to_vec();
                    accumulate(&mut adj, *a, Tensor::new(shape.clone(), ga)?);
                    accumulate(&mut adj, *b, Tensor::new(shape, gb)?);
                }
                Op::Reshape(x) => {
                    let xs = self.nodes[x.0].value.shape().to_vec();
                    accumulate(&mut adj, *x, g.reshaped(xs)?);
                }
                Op::Sum(x) => {
                    let xs = self.nodes[x.0].value.shape().to_vec();
                    accumulate(&mut adj, *x, Tensor::filled(xs, g.values()[0]));
                }
                Op::Mse(pred, target) => {
                    let pv = &self.nodes[pred.0].value;
                    let scale = 2.0 * g.values()[0] / target.len() as f64;
                    let values = pv.values().iter().zip(target).map(|(p, t)| scale * (p - t)).collect();
                    accumulate(&mut adj, *pred, Tensor::new(pv.shape().to_vec(), values)?);
                }
            }
        }

        let mut grads = Gradients::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Some(name) = &node.param {
                let g = adj[idx]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape().to_vec()));
                match grads.get_mut(name) {
                    Some(existing) => existing.add_assign(&g),
                    None => {
                        grads.insert(name.clone(), g);
                    }
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
