use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::ErrorBoundReport;
use super::report::{LoocvReport, LoocvRow};
use crate::baselines::{
    build_lut, fit_flops_scale, flops_predict, lut_predict, LayerwisePredictor, LAYERWISE_REPEATS,
};
use crate::dataset::{
    build_training_set, collect_adaptation, collect_initial, select_training_architectures,
    Device, SampleSet,
};
use crate::devicesim::SimDevice;
use crate::error::{Error, Result};
use crate::predictor::{init_model, predict_device, train, ModelConfig};
use crate::search_space::{enumerate_architectures, ArchitectureId, NetworkSkeleton};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// The trained hardware-aware predictor.
    Maple,
    Lut,
    Layerwise,
    /// Latency proportional to FLOPs, scale fitted by least squares.
    Flops,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Maple, Method::Lut, Method::Layerwise, Method::Flops];

    pub fn name(self) -> &'static str {
        match self {
            Method::Maple => "maple",
            Method::Lut => "lut",
            Method::Layerwise => "layerwise",
            Method::Flops => "flops",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoocvConfig {
    pub n_train: usize,
    pub k_adapt: Vec<usize>,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub model: ModelConfig,
    pub skeleton: NetworkSkeleton,
}

impl Default for LoocvConfig {
    fn default() -> Self {
        LoocvConfig {
            n_train: 900,
            k_adapt: vec![0, 3, 10],
            methods: Method::ALL.to_vec(),
            seed: 0,
            model: ModelConfig::default(),
            skeleton: NetworkSkeleton::default(),
        }
    }
}

pub fn loocv(pool: &[SimDevice], cfg: &LoocvConfig) -> Result<LoocvReport> {
    loocv_with_progress(pool, cfg, |_| {})
}

/// Holds each device out in turn. The same `n_train` architectures are
/// measured on every training device; evaluation covers the whole space
/// against noiseless latencies. `progress` sees each row as it completes.
pub fn loocv_with_progress(
    pool: &[SimDevice],
    cfg: &LoocvConfig,
    mut progress: impl FnMut(&LoocvRow),
) -> Result<LoocvReport> {
    if pool.len() < 2 {
        return Err(Error::Domain(format!(
            "leave-one-out needs at least 2 devices, got {}",
            pool.len()
        )));
    }
    let archs = select_training_architectures(cfg.n_train, cfg.seed)?;
    let all = enumerate_architectures();
    let skel = &cfg.skeleton;
    let mut report = LoocvReport::default();

    for (h, held_out) in pool.iter().enumerate() {
        let target = Device::Sim(held_out.clone());
        let train_devices: Vec<Device> = pool
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != h)
            .map(|(_, d)| Device::Sim(d.clone()))
            .collect();
        let train_ids: Vec<String> = train_devices.iter().map(|d| d.id().to_string()).collect();
        let truth: Vec<f64> = all.iter().map(|&a| held_out.true_latency(a, skel)).collect();

        // Built lazily: only MAPLE and the k=0 FLOPs fit use it.
        let mut initial: Option<SampleSet> = None;
        for &method in &cfg.methods {
            for &k in &cfg.k_adapt {
                let result = match method {
                    Method::Maple | Method::Flops => {
                        if initial.is_none() {
                            initial = Some(collect_initial(
                                &train_devices,
                                &archs,
                                skel,
                                cfg.seed.wrapping_add(1),
                            )?);
                        }
                        let initial = initial.as_ref().unwrap();
                        let adaptation =
                            collect_adaptation(&target, k, skel, cfg.seed.wrapping_add(2))?;
                        if method == Method::Maple {
                            run_maple(initial, &adaptation, &target, &all, cfg)
                        } else {
                            run_flops(initial, &adaptation, &all, skel)
                        }
                    }
                    Method::Lut => build_lut(&target, skel)
                        .map(|lut| all.iter().map(|&a| lut_predict(&lut, a, skel)).collect()),
                    Method::Layerwise => LayerwisePredictor::measure(&target, skel, LAYERWISE_REPEATS)
                        .map(|p| all.iter().map(|&a| p.predict(a, skel)).collect()),
                };
                let uses_initial = matches!(method, Method::Maple)
                    || (method == Method::Flops && k == 0);
                let (report_, error) =
                    match result.and_then(|preds| ErrorBoundReport::compute(&preds, &truth)) {
                        Ok(r) => (Some(r), None),
                        Err(e) => (None, Some(e.to_string())),
                    };
                let row = LoocvRow {
                    held_out_device: held_out.device_id.clone(),
                    method,
                    k_adapt: k,
                    report: report_,
                    error,
                    train_devices: if uses_initial { train_ids.clone() } else { Vec::new() },
                };
                progress(&row);
                report.rows.push(row);
            }
        }
    }
    report.finish();
    Ok(report)
}

fn run_maple(
    initial: &SampleSet,
    adaptation: &SampleSet,
    target: &Device,
    all: &[ArchitectureId],
    cfg: &LoocvConfig,
) -> Result<Vec<f64>> {
    let set = build_training_set(initial, adaptation);
    let (model, _) = train(&init_model(&cfg.model)?, &set)?;
    let desc = adaptation
        .descriptors
        .get(target.id())
        .ok_or_else(|| Error::Validation(format!("no descriptor for {}", target.id())))?;
    Ok(predict_device(&model, all, desc))
}

fn run_flops(
    initial: &SampleSet,
    adaptation: &SampleSet,
    all: &[ArchitectureId],
    skel: &NetworkSkeleton,
) -> Result<Vec<f64>> {
    let source = if adaptation.is_empty() { initial } else { adaptation };
    let pairs: Vec<(ArchitectureId, f64)> =
        source.samples.iter().map(|s| (s.arch, s.latency_ms)).collect();
    let scale = fit_flops_scale(&pairs, skel)?;
    Ok(all.iter().map(|&a| flops_predict(scale, a, skel)).collect())
}
