use super::train::weighted_loss;
use super::{Activations, Dense, Gradients, RegressionModel};
use crate::hwcounters::HardwareDescriptor;
use crate::search_space::ArchEncoding;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Entries checked per weight or bias block; `None` checks all of them.
    pub max_entries_per_block: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            max_entries_per_block: None,
        }
    }
}

/// Smoothed loss of a single sample and its analytic parameter gradients.
pub fn loss_and_gradients(
    m: &RegressionModel,
    a: &ArchEncoding,
    s: &HardwareDescriptor,
    latency_ms: f64,
) -> (f64, Gradients) {
    let enc = a.flatten();
    let feats = m.descriptor_features(s);
    let target = [m.target.forward(latency_ms)];
    let mut acts = Activations::default();
    m.forward_cached(&enc, &feats, &[0], &mut acts);
    let pred = &acts.joint[m.joint_layers.len() - 1];
    let mut d_out = [0.0];
    let loss = weighted_loss(pred, &target, &[1.0], Some(&mut d_out));
    let mut grads = Gradients::zeros_like(m);
    m.backward(&enc, &feats, &[0], &acts, &d_out, &mut grads);
    (loss, grads)
}

fn sample_loss(m: &RegressionModel, enc: &[f64], feats: &[f64], target: f64) -> f64 {
    let pred = m.predict_transformed(enc, feats, &[0]);
    weighted_loss(&pred, &[target], &[1.0], None)
}

fn block_indices(len: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(k) if k < len => (0..k).map(|i| i * len / k).collect(),
        _ => (0..len).collect(),
    }
}

/// Largest relative difference between analytic gradients and central
/// finite differences over the checked parameters. Relative error is
/// `|a - n| / max(|a|, |n|, floor)` with `floor = 1e-5 * max(|loss|, 1)`.
///
/// Rounding in the forward pass leaves the difference quotient with an
/// absolute error near `1e-9 * |loss|` at the default step, so smaller
/// gradients cannot be resolved to `1e-4` relative accuracy.
pub fn gradient_check(
    m: &RegressionModel,
    a: &ArchEncoding,
    s: &HardwareDescriptor,
    latency_ms: f64,
    opts: GradCheckOptions,
) -> f64 {
    let (_, grads) = loss_and_gradients(m, a, s, latency_ms);
    let enc = a.flatten();
    let feats = m.descriptor_features(s);
    let target = m.target.forward(latency_ms);
    let mut probe = m.clone();
    let mut worst = 0.0f64;
    let floor = 1e-5 * sample_loss(m, &enc, &feats, target).abs().max(1.0);

    let n_layers = m.arch_layers.len() + m.joint_layers.len();
    for layer in 0..n_layers {
        for bias in [false, true] {
            let analytic: Vec<f64> = {
                let g: &Dense = grads.layers().nth(layer).unwrap();
                if bias { g.biases.clone() } else { g.weights.clone() }
            };
            for i in block_indices(analytic.len(), opts.max_entries_per_block) {
                let original = param(&mut probe, layer, bias)[i];
                param(&mut probe, layer, bias)[i] = original + opts.step;
                let up = sample_loss(&probe, &enc, &feats, target);
                param(&mut probe, layer, bias)[i] = original - opts.step;
                let down = sample_loss(&probe, &enc, &feats, target);
                param(&mut probe, layer, bias)[i] = original;
                let numeric = (up - down) / (2.0 * opts.step);
                let scale = analytic[i].abs().max(numeric.abs()).max(floor);
                worst = worst.max((analytic[i] - numeric).abs() / scale);
            }
        }
    }
    worst
}

fn param(m: &mut RegressionModel, layer: usize, bias: bool) -> &mut Vec<f64> {
    let l = m.layers_mut().nth(layer).unwrap();
    if bias {
        &mut l.biases
    } else {
        &mut l.weights
    }
}
