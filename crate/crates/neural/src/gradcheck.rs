//! Central finite-difference verification of reverse-mode gradients.

use crate::error::Result;
use crate::network::{Mode, Network, NetworkSpec};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Gradients below this magnitude are compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-3;

const PROBE_DROPOUT_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|analytic - numeric| / max(|analytic|, |numeric|, RELATIVE_FLOOR)`.
    pub max_rel_deviation: f64,
    pub worst_parameter: Option<String>,
    pub checked: usize,
    /// Coordinates whose +-h probes changed some ReLU's sign and were
    /// therefore not differentiable at the probe.
    pub skipped_at_kinks: usize,
}

fn loss_and_pattern(net: &Network, batch: &Tensor, targets: &[f64], mode: Mode) -> Result<(f64, Vec<bool>)> {
    let mut tape = Tape::new();
    let pass = net.record(&mut tape, batch, mode)?;
    let loss = tape.mse(pass.output, targets)?;
    Ok((tape.value(loss).values()[0], tape.relu_pattern()))
}

/// Checks every parameter of a freshly initialized `spec` on `batch` with
/// training-mode semantics (batch statistics, a fixed dropout mask).
pub fn grad_check(spec: &NetworkSpec, batch: &Tensor, h: f64) -> Result<GradCheckReport> {
    let net = Network::init(spec.clone())?;
    let rows = batch.shape()[0];
    let targets: Vec<f64> = (0..rows).map(|i| 0.5 + 0.25 * i as f64).collect();
    grad_check_network(&net, batch, &targets, h, Mode::Train { dropout_seed: PROBE_DROPOUT_SEED })
}

pub fn grad_check_network(
    net: &Network,
    batch: &Tensor,
    targets: &[f64],
    h: f64,
    mode: Mode,
) -> Result<GradCheckReport> {
    let mut tape = Tape::new();
    let pass = net.record(&mut tape, batch, mode)?;
    let base_pattern = tape.relu_pattern();
    let loss = tape.mse(pass.output, targets)?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport {
        max_rel_deviation: 0.0,
        worst_parameter: None,
        checked: 0,
        skipped_at_kinks: 0,
    };
    let mut probe = net.clone();
    for (name, analytic) in &grads {
        for i in 0..analytic.len() {
            let original = net.params[name].values()[i];
            probe.params.get_mut(name).expect("parameter").values_mut()[i] = original + h;
            let (plus, plus_pattern) = loss_and_pattern(&probe, batch, targets, mode)?;
            probe.params.get_mut(name).expect("parameter").values_mut()[i] = original - h;
            let (minus, minus_pattern) = loss_and_pattern(&probe, batch, targets, mode)?;
            probe.params.get_mut(name).expect("parameter").values_mut()[i] = original;

            if plus_pattern != base_pattern || minus_pattern != base_pattern {
                report.skipped_at_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.values()[i];
            let dev = (a - numeric).abs() / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            report.checked += 1;
            if dev > report.max_rel_deviation {
                report.max_rel_deviation = dev;
                report.worst_parameter = Some(format!("{name}[{i}]"));
            }
        }
    }
    Ok(report)
}
