use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Activations, FeatureNorm, Gradients, RegressionModel, TargetTransform, LOSS_EPSILON};
use crate::dataset::SampleSet;
use crate::error::{Error, Result};
use crate::search_space::{encode, ENCODING_LEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Entry 0 is the loss of the model before any update; entry `e` is the
    /// weighted mean of the batch losses seen during epoch `e`.
    pub epoch_losses: Vec<f64>,
    /// Loss over the whole training set after the last epoch.
    pub final_loss: f64,
    pub epochs: usize,
}

/// Training set flattened into model inputs.
pub(crate) struct Prepared {
    pub enc: Vec<f64>,
    pub device_feats: Vec<f64>,
    pub device_idx: Vec<usize>,
    pub targets: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Prepared {
    fn new(m: &RegressionModel, set: &SampleSet) -> Result<Self> {
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        let mut device_feats = Vec::new();
        for id in set.device_ids() {
            let d = set.descriptors.get(&id).ok_or_else(|| {
                Error::Validation(format!("device `{id}` has no descriptor"))
            })?;
            device_feats.extend(m.descriptor_features(d));
            let next = index.len();
            index.insert(id, next);
        }
        let n = set.samples.len();
        let mut enc = Vec::with_capacity(n * ENCODING_LEN);
        let mut device_idx = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for s in &set.samples {
            enc.extend(encode(s.arch).flatten());
            device_idx.push(index[&s.device_id]);
            targets.push(m.target.forward(s.latency_ms));
            weights.push(s.weight);
        }
        Ok(Prepared {
            enc,
            device_feats,
            device_idx,
            targets,
            weights,
        })
    }
}

/// Smoothed weighted MAE of `preds` and its gradient with respect to them.
pub(crate) fn weighted_loss(preds: &[f64], targets: &[f64], weights: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let total: f64 = weights.iter().sum();
    let mut loss = 0.0;
    let mut grad = grad;
    for i in 0..preds.len() {
        let e = preds[i] - targets[i];
        let s = (e * e + LOSS_EPSILON * LOSS_EPSILON).sqrt();
        loss += weights[i] * s;
        if let Some(g) = grad.as_deref_mut() {
            g[i] = weights[i] / total * e / s;
        }
    }
    loss / total
}

struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(model: &RegressionModel) -> Self {
        let shapes: Vec<usize> = model
            .layers()
            .flat_map(|l| [l.weights.len(), l.biases.len()])
            .collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn update(&mut self, model: &mut RegressionModel, grads: &Gradients, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let params = model.layers_mut().flat_map(|l| [&mut l.weights, &mut l.biases]);
        let gs = grads.layers().flat_map(|l| [&l.weights, &l.biases]);
        for (((p, g), m), v) in params.zip(gs).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = flush(self.beta1 * m[i] + (1.0 - self.beta1) * g[i]);
                v[i] = flush(self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i]);
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

// Moments of parameters that stop receiving gradient decay geometrically
// into subnormal range, where arithmetic is very slow.
fn flush(x: f64) -> f64 {
    if x.abs() < 1e-200 {
        0.0
    } else {
        x
    }
}

fn full_loss(m: &RegressionModel, data: &Prepared) -> f64 {
    let preds = m.predict_transformed(&data.enc, &data.device_feats, &data.device_idx);
    weighted_loss(&preds, &data.targets, &data.weights, None)
}

/// Fits normalization statistics to `set`, then minimizes the weighted
/// absolute error by mini-batch Adam with a seeded shuffle per epoch.
pub fn train(model: &RegressionModel, set: &SampleSet) -> Result<(RegressionModel, TrainReport)> {
    if set.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    set.validate()?;
    let cfg = model.config.clone();
    let mut m = model.clone();

    let include = cfg.include_latency();
    let rows: Vec<Vec<f64>> = set
        .device_ids()
        .iter()
        .map(|id| set.descriptors[id].features(include))
        .collect();
    m.descriptor_norm = FeatureNorm::fit(&rows);
    let latencies: Vec<f64> = set.samples.iter().map(|s| s.latency_ms).collect();
    m.target = TargetTransform::fit(&latencies, cfg.log_target);

    let data = Prepared::new(&m, set)?;
    let n = data.targets.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_5EED);
    let mut order: Vec<usize> = (0..n).collect();
    let mut adam = Adam::new(&m);
    let mut grads = Gradients::zeros_like(&m);
    let mut acts = Activations::default();

    let mut epoch_losses = Vec::with_capacity(cfg.epochs + 1);
    let initial = full_loss(&m, &data);
    if !initial.is_finite() {
        return Err(Error::Divergence { epoch: 0 });
    }
    epoch_losses.push(initial);

    let bs = cfg.batch_size.min(n);
    let mut enc = Vec::with_capacity(bs * ENCODING_LEN);
    let mut idx = Vec::with_capacity(bs);
    let mut tgt = Vec::with_capacity(bs);
    let mut wts = Vec::with_capacity(bs);
    let mut d_out = vec![0.0; bs];
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut acc = 0.0;
        let mut acc_w = 0.0;
        for batch in order.chunks(bs) {
            enc.clear();
            idx.clear();
            tgt.clear();
            wts.clear();
            for &i in batch {
                enc.extend_from_slice(&data.enc[i * ENCODING_LEN..(i + 1) * ENCODING_LEN]);
                idx.push(data.device_idx[i]);
                tgt.push(data.targets[i]);
                wts.push(data.weights[i]);
            }
            m.forward_cached(&enc, &data.device_feats, &idx, &mut acts);
            let preds = &acts.joint[m.joint_layers.len() - 1];
            let d = &mut d_out[..batch.len()];
            let loss = weighted_loss(preds, &tgt, &wts, Some(d));
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            let bw: f64 = wts.iter().sum();
            acc += loss * bw;
            acc_w += bw;
            m.backward(&enc, &data.device_feats, &idx, &acts, d, &mut grads);
            adam.update(&mut m, &grads, cfg.learning_rate);
        }
        epoch_losses.push(acc / acc_w);
    }

    let final_loss = full_loss(&m, &data);
    if !final_loss.is_finite() {
        return Err(Error::Divergence { epoch: cfg.epochs });
    }
    Ok((
        m,
        TrainReport {
            epoch_losses,
            final_loss,
            epochs: cfg.epochs,
        },
    ))
}

/// Loss of `m` on `set` using the model's current normalization.
pub fn evaluate_loss(m: &RegressionModel, set: &SampleSet) -> Result<f64> {
    let data = Prepared::new(m, set)?;
    Ok(full_loss(m, &data))
}
