//! Dual-stream latency regression model.
//!
//! The architecture stream maps the 30-value one-hot encoding through two
//! hidden layers to a 32-value projection. The projection is concatenated
//! with the normalized hardware descriptor and passed through the joint
//! stream (two hidden layers and a scalar output). The output lives in a
//! transformed target space (z-scored log latency by default) and is mapped
//! back to milliseconds on prediction.

mod gradcheck;
pub(crate) mod linalg;
mod train;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hwcounters::{HardwareDescriptor, COUNTER_LEN, DESCRIPTOR_LEN};
use crate::search_space::{encode, ArchEncoding, ArchitectureId, ENCODING_LEN};

pub use gradcheck::{gradient_check, loss_and_gradients, GradCheckOptions};
pub use train::{evaluate_loss, train, TrainReport};

/// Smoothing constant of the absolute-error loss `√(e² + ε²)`.
pub const LOSS_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch_hidden: Vec<usize>,
    pub arch_projection_dim: usize,
    pub joint_hidden: Vec<usize>,
    /// 165 with operator latencies appended, 150 for counters only.
    pub descriptor_dim: usize,
    /// Regress on log latency; otherwise on raw milliseconds.
    pub log_target: bool,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arch_hidden: vec![64, 64],
            arch_projection_dim: 32,
            joint_hidden: vec![128, 128],
            descriptor_dim: DESCRIPTOR_LEN,
            log_target: true,
            learning_rate: 3e-3,
            epochs: 400,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn include_latency(&self) -> bool {
        self.descriptor_dim == DESCRIPTOR_LEN
    }

    pub fn validate(&self) -> Result<()> {
        if self.arch_projection_dim != 32 {
            return Err(Error::Validation(
                "the architecture projection must be 32-dimensional".into(),
            ));
        }
        if self.descriptor_dim != DESCRIPTOR_LEN && self.descriptor_dim != COUNTER_LEN {
            return Err(Error::Validation(format!(
                "descriptor_dim must be {DESCRIPTOR_LEN} or {COUNTER_LEN}, got {}",
                self.descriptor_dim
            )));
        }
        if self.arch_hidden.iter().chain(&self.joint_hidden).any(|&d| d == 0) {
            return Err(Error::Validation("layer widths must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Validation("learning_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn joint_input_dim(&self) -> usize {
        self.arch_projection_dim + self.descriptor_dim
    }

    fn arch_dims(&self) -> Vec<usize> {
        let mut dims = vec![ENCODING_LEN];
        dims.extend(&self.arch_hidden);
        dims.push(self.arch_projection_dim);
        dims
    }

    fn joint_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.joint_input_dim()];
        dims.extend(&self.joint_hidden);
        dims.push(1);
        dims
    }
}

/// Fully connected layer; `weights` is `inputs × outputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn fan_in_uniform<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = (6.0 / inputs as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Dense {
            weights,
            ..Dense::zeros(inputs, outputs)
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    fn check(&self) -> Result<()> {
        if self.weights.len() != self.inputs * self.outputs || self.biases.len() != self.outputs {
            return Err(Error::Shape(format!(
                "layer {}→{} holds {} weights and {} biases",
                self.inputs,
                self.outputs,
                self.weights.len(),
                self.biases.len()
            )));
        }
        Ok(())
    }
}

/// Per-feature `log1p` followed by z-scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureNorm {
    pub fn identity(dim: usize) -> Self {
        FeatureNorm {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Statistics over `rows`, each already a raw feature vector.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v.ln_1p() / n;
            }
        }
        let mut std = vec![0.0; dim];
        for r in rows {
            for ((s, m), v) in std.iter_mut().zip(&mean).zip(r) {
                *s += (v.ln_1p() - m).powi(2) / n;
            }
        }
        for s in std.iter_mut() {
            *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
        }
        FeatureNorm { mean, std }
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v.ln_1p() - m) / s)
            .collect()
    }
}

/// Maps latency (ms) to the regression target and back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetTransform {
    pub log: bool,
    pub mean: f64,
    pub std: f64,
}

impl TargetTransform {
    pub fn identity() -> Self {
        TargetTransform {
            log: false,
            mean: 0.0,
            std: 1.0,
        }
    }

    pub fn fit(latencies_ms: &[f64], log: bool) -> Self {
        let xs: Vec<f64> = latencies_ms
            .iter()
            .map(|&y| if log { y.ln() } else { y })
            .collect();
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let std = if var > 1e-24 { var.sqrt() } else { 1.0 };
        TargetTransform { log, mean, std }
    }

    pub fn forward(&self, latency_ms: f64) -> f64 {
        let x = if self.log { latency_ms.ln() } else { latency_ms };
        (x - self.mean) / self.std
    }

    pub fn inverse(&self, t: f64) -> f64 {
        let x = t * self.std + self.mean;
        if self.log {
            x.exp()
        } else {
            x
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub config: ModelConfig,
    pub arch_layers: Vec<Dense>,
    pub joint_layers: Vec<Dense>,
    pub descriptor_norm: FeatureNorm,
    pub target: TargetTransform,
}

/// Fresh model with fan-in scaled uniform weights and zero biases.
/// Normalization starts as the identity; [`train`] fits it to the data.
pub fn init_model(cfg: &ModelConfig) -> Result<RegressionModel> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let build = |dims: Vec<usize>, rng: &mut ChaCha8Rng| -> Vec<Dense> {
        dims.windows(2)
            .map(|p| Dense::fan_in_uniform(p[0], p[1], rng))
            .collect()
    };
    let arch_layers = build(cfg.arch_dims(), &mut rng);
    let joint_layers = build(cfg.joint_dims(), &mut rng);
    Ok(RegressionModel {
        config: cfg.clone(),
        arch_layers,
        joint_layers,
        descriptor_norm: FeatureNorm::identity(cfg.descriptor_dim),
        target: if cfg.log_target {
            TargetTransform {
                log: true,
                ..TargetTransform::identity()
            }
        } else {
            TargetTransform::identity()
        },
    })
}

/// Intermediate activations of a batched forward pass.
#[derive(Default)]
pub(crate) struct Activations {
    pub batch: usize,
    pub arch: Vec<Vec<f64>>,
    pub joint: Vec<Vec<f64>>,
    device_rows: Vec<f64>,
}

/// Parameter gradients laid out like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub arch: Vec<Dense>,
    pub joint: Vec<Dense>,
}

impl Gradients {
    pub(crate) fn zeros_like(m: &RegressionModel) -> Self {
        let z = |ls: &[Dense]| ls.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect();
        Gradients {
            arch: z(&m.arch_layers),
            joint: z(&m.joint_layers),
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.arch.iter().chain(&self.joint)
    }

    pub fn norm(&self) -> f64 {
        self.layers()
            .flat_map(|l| l.weights.iter().chain(&l.biases))
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

fn add_bias_relu(out: &mut [f64], biases: &[f64], relu: bool) {
    for row in out.chunks_mut(biases.len()) {
        for (v, b) in row.iter_mut().zip(biases) {
            *v += b;
            if relu && *v < 0.0 {
                *v = 0.0;
            }
        }
    }
}

fn column_sums(delta: &[f64], cols: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for row in delta.chunks(cols) {
        for (o, d) in out.iter_mut().zip(row) {
            *o += d;
        }
    }
}

fn relu_mask(delta: &mut [f64], activations: &[f64]) {
    for (d, a) in delta.iter_mut().zip(activations) {
        if *a <= 0.0 {
            *d = 0.0;
        }
    }
}

impl RegressionModel {
    pub fn param_count(&self) -> usize {
        self.arch_layers
            .iter()
            .chain(&self.joint_layers)
            .map(Dense::param_count)
            .sum()
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.arch_layers.iter().chain(&self.joint_layers)
    }

    pub(crate) fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.arch_layers.iter_mut().chain(self.joint_layers.iter_mut())
    }

    /// Checks that the layer shapes chain and match the configuration.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let check_chain = |layers: &[Dense], dims: Vec<usize>, name: &str| -> Result<()> {
            if layers.len() + 1 != dims.len() {
                return Err(Error::Shape(format!("{name} stream has {} layers", layers.len())));
            }
            for (l, p) in layers.iter().zip(dims.windows(2)) {
                l.check()?;
                if l.inputs != p[0] || l.outputs != p[1] {
                    return Err(Error::Shape(format!(
                        "{name} layer is {}→{}, expected {}→{}",
                        l.inputs, l.outputs, p[0], p[1]
                    )));
                }
            }
            Ok(())
        };
        check_chain(&self.arch_layers, self.config.arch_dims(), "architecture")?;
        check_chain(&self.joint_layers, self.config.joint_dims(), "joint")?;
        let d = self.config.descriptor_dim;
        if self.descriptor_norm.mean.len() != d || self.descriptor_norm.std.len() != d {
            return Err(Error::Shape(format!(
                "descriptor normalization must have {d} entries"
            )));
        }
        Ok(())
    }

    /// Normalized model features for a descriptor.
    pub fn descriptor_features(&self, d: &HardwareDescriptor) -> Vec<f64> {
        self.descriptor_norm
            .apply(&d.features(self.config.include_latency()))
    }

    /// Batched forward pass into transformed target space.
    ///
    /// `enc` holds `batch` encodings (30 values each); `device_feats` holds
    /// normalized descriptor rows, and sample `i` uses row `device_idx[i]`.
    pub(crate) fn forward_cached(
        &self,
        enc: &[f64],
        device_feats: &[f64],
        device_idx: &[usize],
        acts: &mut Activations,
    ) {
        let batch = device_idx.len();
        let d = self.config.descriptor_dim;
        let n_dev = device_feats.len() / d;
        acts.batch = batch;
        acts.arch.resize_with(self.arch_layers.len(), Vec::new);
        acts.joint.resize_with(self.joint_layers.len(), Vec::new);

        let last_arch = self.arch_layers.len() - 1;
        for (l, layer) in self.arch_layers.iter().enumerate() {
            let mut out = std::mem::take(&mut acts.arch[l]);
            out.resize(batch * layer.outputs, 0.0);
            let input = if l == 0 { enc } else { &acts.arch[l - 1] };
            linalg::matmul(input, &layer.weights, &mut out, batch, layer.inputs, layer.outputs, false);
            add_bias_relu(&mut out, &layer.biases, l != last_arch);
            acts.arch[l] = out;
        }

        let proj = &acts.arch[last_arch];
        let p = self.config.arch_projection_dim;
        let first = &self.joint_layers[0];
        let h = first.outputs;
        // The descriptor half of the first joint layer is evaluated once per
        // device rather than once per sample.
        acts.device_rows.resize(n_dev * h, 0.0);
        linalg::matmul(device_feats, &first.weights[p * h..], &mut acts.device_rows, n_dev, d, h, false);
        let mut out = std::mem::take(&mut acts.joint[0]);
        out.resize(batch * h, 0.0);
        linalg::matmul(proj, &first.weights[..p * h], &mut out, batch, p, h, false);
        for (row, &di) in out.chunks_mut(h).zip(device_idx) {
            for ((v, dv), b) in row.iter_mut().zip(&acts.device_rows[di * h..(di + 1) * h]).zip(&first.biases) {
                *v = (*v + dv + b).max(0.0);
            }
        }
        acts.joint[0] = out;

        let last_joint = self.joint_layers.len() - 1;
        for l in 1..self.joint_layers.len() {
            let layer = &self.joint_layers[l];
            let mut out = std::mem::take(&mut acts.joint[l]);
            out.resize(batch * layer.outputs, 0.0);
            linalg::matmul(&acts.joint[l - 1], &layer.weights, &mut out, batch, layer.inputs, layer.outputs, false);
            add_bias_relu(&mut out, &layer.biases, l != last_joint);
            acts.joint[l] = out;
        }
    }

    /// Backpropagates `d_out` (one value per sample) through the activations
    /// of the last forward pass, overwriting `grads`.
    pub(crate) fn backward(
        &self,
        enc: &[f64],
        device_feats: &[f64],
        device_idx: &[usize],
        acts: &Activations,
        d_out: &[f64],
        grads: &mut Gradients,
    ) {
        let batch = acts.batch;
        let d = self.config.descriptor_dim;
        let n_dev = device_feats.len() / d;
        let p = self.config.arch_projection_dim;

        let mut delta = d_out.to_vec();
        for l in (1..self.joint_layers.len()).rev() {
            let layer = &self.joint_layers[l];
            let g = &mut grads.joint[l];
            let input = &acts.joint[l - 1];
            linalg::matmul_at_b(input, &delta, &mut g.weights, batch, layer.inputs, layer.outputs, false);
            column_sums(&delta, layer.outputs, &mut g.biases);
            let mut d_in = vec![0.0; batch * layer.inputs];
            linalg::matmul_a_bt(&delta, &layer.weights, &mut d_in, batch, layer.outputs, layer.inputs);
            relu_mask(&mut d_in, input);
            delta = d_in;
        }

        let first = &self.joint_layers[0];
        let h = first.outputs;
        let g = &mut grads.joint[0];
        let proj = &acts.arch[self.arch_layers.len() - 1];
        linalg::matmul_at_b(proj, &delta, &mut g.weights[..p * h], batch, p, h, false);
        let mut per_device = vec![0.0; n_dev * h];
        for (row, &di) in delta.chunks(h).zip(device_idx) {
            for (acc, v) in per_device[di * h..(di + 1) * h].iter_mut().zip(row) {
                *acc += v;
            }
        }
        linalg::matmul_at_b(device_feats, &per_device, &mut g.weights[p * h..], n_dev, d, h, false);
        column_sums(&delta, h, &mut g.biases);
        let mut d_proj = vec![0.0; batch * p];
        linalg::matmul_a_bt(&delta, &first.weights[..p * h], &mut d_proj, batch, h, p);
        delta = d_proj;

        for l in (0..self.arch_layers.len()).rev() {
            let layer = &self.arch_layers[l];
            let g = &mut grads.arch[l];
            let input: &[f64] = if l == 0 { enc } else { &acts.arch[l - 1] };
            linalg::matmul_at_b(input, &delta, &mut g.weights, batch, layer.inputs, layer.outputs, false);
            column_sums(&delta, layer.outputs, &mut g.biases);
            if l > 0 {
                let mut d_in = vec![0.0; batch * layer.inputs];
                linalg::matmul_a_bt(&delta, &layer.weights, &mut d_in, batch, layer.outputs, layer.inputs);
                relu_mask(&mut d_in, input);
                delta = d_in;
            }
        }
    }

    /// Predictions in transformed space for raw inputs.
    pub(crate) fn predict_transformed(
        &self,
        enc: &[f64],
        device_feats: &[f64],
        device_idx: &[usize],
    ) -> Vec<f64> {
        const CHUNK: usize = 2048;
        let mut acts = Activations::default();
        let mut out = Vec::with_capacity(device_idx.len());
        for (c, idx) in device_idx.chunks(CHUNK).enumerate() {
            let e = &enc[c * CHUNK * ENCODING_LEN..(c * CHUNK + idx.len()) * ENCODING_LEN];
            self.forward_cached(e, device_feats, idx, &mut acts);
            out.extend_from_slice(&acts.joint[self.joint_layers.len() - 1]);
        }
        out
    }

    /// Prediction in milliseconds from a raw 30-value encoding and raw
    /// descriptor features (165 or 150 values, un-normalized).
    pub fn forward_features(&self, encoding: &[f64], descriptor: &[f64]) -> Result<f64> {
        if encoding.len() != ENCODING_LEN {
            return Err(Error::Shape(format!(
                "encoding has {} values, expected {ENCODING_LEN}",
                encoding.len()
            )));
        }
        if descriptor.len() != self.config.descriptor_dim {
            return Err(Error::Shape(format!(
                "descriptor has {} values, expected {}",
                descriptor.len(),
                self.config.descriptor_dim
            )));
        }
        let feats = self.descriptor_norm.apply(descriptor);
        let t = self.predict_transformed(encoding, &feats, &[0])[0];
        Ok(self.target.inverse(t))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let m: RegressionModel = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }
}

/// Predicted latency (ms) of one architecture on one device.
pub fn forward(m: &RegressionModel, a: &ArchEncoding, s: &HardwareDescriptor) -> Result<f64> {
    Ok(predict_batch(m, &[(*a, s)])?[0])
}

/// Elementwise [`forward`], preserving input order.
pub fn predict_batch(
    m: &RegressionModel,
    pairs: &[(ArchEncoding, &HardwareDescriptor)],
) -> Result<Vec<f64>> {
    let d = m.config.descriptor_dim;
    let mut unique: Vec<&HardwareDescriptor> = Vec::new();
    let mut device_feats = Vec::new();
    let mut device_idx = Vec::with_capacity(pairs.len());
    let mut enc = Vec::with_capacity(pairs.len() * ENCODING_LEN);
    for (a, s) in pairs {
        let i = match unique.iter().position(|u| std::ptr::eq(*u, *s)) {
            Some(i) => i,
            None => {
                let feats = m.descriptor_features(s);
                if feats.len() != d {
                    return Err(Error::Shape(format!("descriptor has {} features, expected {d}", feats.len())));
                }
                device_feats.extend(feats);
                unique.push(s);
                unique.len() - 1
            }
        };
        device_idx.push(i);
        enc.extend(a.flatten());
    }
    Ok(m.predict_transformed(&enc, &device_feats, &device_idx)
        .into_iter()
        .map(|t| m.target.inverse(t))
        .collect())
}

/// Predictions for many architectures on a single device.
pub fn predict_device(
    m: &RegressionModel,
    archs: &[ArchitectureId],
    s: &HardwareDescriptor,
) -> Vec<f64> {
    let feats = m.descriptor_features(s);
    let enc: Vec<f64> = archs.iter().flat_map(|&a| encode(a).flatten()).collect();
    let idx = vec![0; archs.len()];
    m.predict_transformed(&enc, &feats, &idx)
        .into_iter()
        .map(|t| m.target.inverse(t))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devicesim::{pool_device, sim_descriptor};

    #[test]
    fn default_parameter_count() {
        // Closed-form count of the layer chain 30→64→64→32, 197→128→128→1.
        let shapes = [(30, 64), (64, 64), (64, 32), (197, 128), (128, 128), (128, 1)];
        let expected: usize = shapes.iter().map(|(i, o)| i * o + o).sum();
        assert_eq!(expected, 50_209);
        let m = init_model(&ModelConfig::default()).unwrap();
        assert_eq!(m.param_count(), expected);
        m.validate().unwrap();
    }

    #[test]
    fn counter_only_ablation_width() {
        let cfg = ModelConfig {
            descriptor_dim: 150,
            ..ModelConfig::default()
        };
        let m = init_model(&cfg).unwrap();
        assert_eq!(m.joint_layers[0].inputs, 182);
        assert!(init_model(&ModelConfig { descriptor_dim: 151, ..ModelConfig::default() }).is_err());
        assert!(init_model(&ModelConfig { arch_projection_dim: 16, ..ModelConfig::default() }).is_err());
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let cfg = ModelConfig {
            seed: 17,
            ..ModelConfig::default()
        };
        let a = init_model(&cfg).unwrap();
        assert_eq!(a, init_model(&cfg).unwrap());
        assert!(a.layers().all(|l| l.biases.iter().all(|&b| b == 0.0)));
        let b = init_model(&ModelConfig { seed: 18, ..cfg }).unwrap();
        assert_ne!(a.arch_layers[0].weights, b.arch_layers[0].weights);
    }

    #[test]
    fn zero_weights_predict_zero() {
        let mut m = init_model(&ModelConfig::default()).unwrap();
        m.target = TargetTransform::identity();
        for l in m.layers_mut() {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        let s = sim_descriptor(&pool_device(2));
        for id in [0, 77, 15_624] {
            let a = encode(ArchitectureId::new(id).unwrap());
            assert_eq!(forward(&m, &a, &s).unwrap(), 0.0);
        }
    }

    #[test]
    fn batch_matches_single_and_permutes() {
        let m = init_model(&ModelConfig { seed: 3, ..ModelConfig::default() }).unwrap();
        let s1 = sim_descriptor(&pool_device(1));
        let s2 = sim_descriptor(&pool_device(5));
        let pairs: Vec<(ArchEncoding, &HardwareDescriptor)> = [(10, &s1), (2000, &s2), (15_000, &s1)]
            .iter()
            .map(|&(id, s)| (encode(ArchitectureId::new(id).unwrap()), s))
            .collect();
        let batch = predict_batch(&m, &pairs).unwrap();
        for (p, (a, s)) in batch.iter().zip(&pairs) {
            assert_eq!(*p, forward(&m, a, s).unwrap());
        }
        let reversed: Vec<_> = pairs.iter().rev().cloned().collect();
        let mut back = predict_batch(&m, &reversed).unwrap();
        back.reverse();
        assert_eq!(back, batch);
    }

    #[test]
    fn feature_entry_point_checks_shapes() {
        let m = init_model(&ModelConfig::default()).unwrap();
        let s = sim_descriptor(&pool_device(1));
        let a = encode(ArchitectureId::new(5).unwrap());
        let y = m.forward_features(&a.flatten(), &s.flattened()).unwrap();
        assert_eq!(y, forward(&m, &a, &s).unwrap());
        assert!(matches!(m.forward_features(&a.flatten(), &[0.0; 3]), Err(Error::Shape(_))));
        assert!(matches!(m.forward_features(&[0.0; 29], &s.flattened()), Err(Error::Shape(_))));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let m = init_model(&ModelConfig { seed: 9, ..ModelConfig::default() }).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(RegressionModel::from_json_str(&text).unwrap(), m);
        let mut broken = m.clone();
        broken.joint_layers[1].weights.pop();
        let text = serde_json::to_string(&broken).unwrap();
        assert!(matches!(RegressionModel::from_json_str(&text), Err(Error::Shape(_))));
    }

    #[test]
    fn target_transform_inverts() {
        let t = TargetTransform::fit(&[1.0, 10.0, 100.0], true);
        for y in [0.5, 3.0, 250.0] {
            assert!((t.inverse(t.forward(y)) - y).abs() < 1e-9 * y);
        }
        assert!((t.forward(10.0)).abs() < 1e-12);
    }
}
