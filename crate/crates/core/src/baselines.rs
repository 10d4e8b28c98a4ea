//! Reference latency estimators: operator look-up table, layer-wise sums of
//! fresh per-operator measurements, and a FLOPs proxy.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Device;
use crate::error::{Error, Result};
use crate::kernels::{measure_operator, run_network, DEFAULT_REPEATS};
use crate::search_space::{
    flops, operator_workloads, ArchitectureId, NetworkSkeleton, OpKind, OperatorWorkload,
    NUM_WORKLOADS, STAGE_WIDTHS,
};

pub const LAYERWISE_REPEATS: usize = 25;

/// Per-device operator latency table.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyLUT {
    pub device_id: String,
    pub fixed_overhead_ms: f64,
    /// Canonical workload order; `None` entries are 0.
    pub entries: [f64; NUM_WORKLOADS],
}

impl LatencyLUT {
    pub fn get(&self, kind: OpKind, width: usize) -> f64 {
        self.entries[OperatorWorkload { kind, width }.index()]
    }

    /// The same table with the skeleton overhead dropped.
    pub fn without_overhead(&self) -> Self {
        LatencyLUT {
            fixed_overhead_ms: 0.0,
            ..self.clone()
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        LatencyLUT {
            device_id: self.device_id.clone(),
            fixed_overhead_ms: self.fixed_overhead_ms * c,
            entries: self.entries.map(|e| e * c),
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&LutFile::from(self))?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file: LutFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        file.try_into()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LutFile {
    device_id: String,
    fixed_overhead_ms: f64,
    entries: BTreeMap<String, f64>,
}

impl From<&LatencyLUT> for LutFile {
    fn from(l: &LatencyLUT) -> Self {
        LutFile {
            device_id: l.device_id.clone(),
            fixed_overhead_ms: l.fixed_overhead_ms,
            entries: operator_workloads()
                .iter()
                .map(|w| (w.name(), l.entries[w.index()]))
                .collect(),
        }
    }
}

impl TryFrom<LutFile> for LatencyLUT {
    type Error = Error;

    fn try_from(f: LutFile) -> Result<Self> {
        if f.entries.len() != NUM_WORKLOADS {
            return Err(Error::Validation(format!(
                "LUT must have {NUM_WORKLOADS} entries, found {}",
                f.entries.len()
            )));
        }
        let mut entries = [0.0; NUM_WORKLOADS];
        for (name, v) in &f.entries {
            let w: OperatorWorkload = name.parse()?;
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::Validation(format!("LUT entry `{name}` is {v}")));
            }
            entries[w.index()] = *v;
        }
        if !(f.fixed_overhead_ms.is_finite() && f.fixed_overhead_ms >= 0.0) {
            return Err(Error::Validation("LUT overhead must be non-negative".into()));
        }
        Ok(LatencyLUT {
            device_id: f.device_id,
            fixed_overhead_ms: f.fixed_overhead_ms,
            entries,
        })
    }
}

fn measured_table(device: &Device, skel: &NetworkSkeleton, repeats: usize) -> Result<LatencyLUT> {
    let zero = ArchitectureId::new(0).unwrap();
    match device {
        Device::Sim(d) => Ok(LatencyLUT {
            device_id: d.device_id.clone(),
            fixed_overhead_ms: d.true_latency(zero, skel),
            entries: d.op_cost_ms,
        }),
        Device::Host { device_id, .. } => {
            let mut entries = [0.0; NUM_WORKLOADS];
            for w in operator_workloads() {
                if w.kind != OpKind::None {
                    entries[w.index()] = measure_operator(w, repeats)?.mean_ms;
                }
            }
            Ok(LatencyLUT {
                device_id: device_id.clone(),
                fixed_overhead_ms: run_network(zero, skel, repeats)?.mean_ms,
                entries,
            })
        }
    }
}

/// Measures (or simulates, noiselessly) every workload once and the
/// all-`None` network for the fixed overhead.
pub fn build_lut(device: &Device, skel: &NetworkSkeleton) -> Result<LatencyLUT> {
    measured_table(device, skel, DEFAULT_REPEATS)
}

/// `overhead + K · Σ_stages Σ_edges lut[(op, stage width)]`.
pub fn lut_predict(lut: &LatencyLUT, arch: ArchitectureId, skel: &NetworkSkeleton) -> f64 {
    let ops = arch.ops();
    let per_cell: f64 = STAGE_WIDTHS
        .iter()
        .map(|&w| ops.iter().map(|&op| lut.get(op, w)).sum::<f64>())
        .sum();
    lut.fixed_overhead_ms + skel.cells_per_stage as f64 * per_cell
}

/// Layer-wise summation over freshly measured per-operator latencies.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerwisePredictor {
    table: LatencyLUT,
}

impl LayerwisePredictor {
    /// Measures each operator `repeats` times (25 by default on the host).
    pub fn measure(device: &Device, skel: &NetworkSkeleton, repeats: usize) -> Result<Self> {
        Ok(LayerwisePredictor {
            table: measured_table(device, skel, repeats)?,
        })
    }

    pub fn predict(&self, arch: ArchitectureId, skel: &NetworkSkeleton) -> f64 {
        lut_predict(&self.table, arch, skel)
    }
}

pub fn layerwise_predict(
    device: &Device,
    arch: ArchitectureId,
    skel: &NetworkSkeleton,
) -> Result<f64> {
    Ok(LayerwisePredictor::measure(device, skel, LAYERWISE_REPEATS)?.predict(arch, skel))
}

/// Least-squares scale through the origin: `Σ f·y / Σ f²`.
pub fn fit_flops_scale(samples: &[(ArchitectureId, f64)], skel: &NetworkSkeleton) -> Result<f64> {
    let (num, den) = samples.iter().fold((0.0, 0.0), |(n, d), &(a, y)| {
        let f = flops(a, skel) as f64;
        (n + f * y, d + f * f)
    });
    if samples.is_empty() || den == 0.0 {
        return Err(Error::Domain("FLOPs scale needs at least one sample".into()));
    }
    Ok(num / den)
}

pub fn flops_predict(scale: f64, arch: ArchitectureId, skel: &NetworkSkeleton) -> f64 {
    scale * flops(arch, skel) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devicesim::{make_device, pool_device, SimConfig};
    use crate::search_space::{cell_flops, enumerate_architectures, skeleton_flops};

    fn uniform_lut(v: f64) -> LatencyLUT {
        let mut entries = [v; NUM_WORKLOADS];
        for w in operator_workloads() {
            if w.kind == OpKind::None {
                entries[w.index()] = 0.0;
            }
        }
        LatencyLUT {
            device_id: "u".into(),
            fixed_overhead_ms: 0.0,
            entries,
        }
    }

    #[test]
    fn sim_lut_matches_op_costs() {
        let d = pool_device(3);
        let lut = build_lut(&Device::Sim(d.clone()), &NetworkSkeleton::default()).unwrap();
        assert_eq!(lut.entries, d.op_cost_ms);
        assert_eq!(lut.entries.len(), 15);
        assert!(lut.entries.iter().all(|&v| v >= 0.0));
        assert_eq!(lut.fixed_overhead_ms, d.base_overhead_ms);
    }

    #[test]
    fn direct_sum() {
        use OpKind::*;
        let lut = uniform_lut(1.0);
        let arch = ArchitectureId::from_ops([Skip, Conv1x1, Conv3x3, AvgPool3x3, Skip, Conv3x3]);
        assert_eq!(lut_predict(&lut, arch, &NetworkSkeleton::default()), 18.0);
        let zero = ArchitectureId::new(0).unwrap();
        let mut l = uniform_lut(2.0);
        l.fixed_overhead_ms = 4.5;
        assert_eq!(lut_predict(&l, zero, &NetworkSkeleton::default()), 4.5);
    }

    #[test]
    fn interaction_causes_gap_and_zero_interaction_is_exact() {
        use OpKind::*;
        let skel = NetworkSkeleton::default();
        let arch = ArchitectureId::from_ops([Conv3x3, None, None, Conv1x1, None, None]);
        let d = pool_device(2);
        assert!(d.interaction_coeff > 0.0);
        let lut = build_lut(&Device::Sim(d.clone()), &skel).unwrap();
        assert!(lut_predict(&lut, arch, &skel) < d.true_latency(arch, &skel));

        let cfg = SimConfig {
            interaction_range: (0.0, 0.0),
            noise_cv: 0.0,
            ..SimConfig::default()
        };
        let d = make_device(11, &cfg);
        let lut = build_lut(&Device::Sim(d.clone()), &skel).unwrap();
        for a in enumerate_architectures().into_iter().step_by(97) {
            let (p, t) = (lut_predict(&lut, a, &skel), d.true_latency(a, &skel));
            assert!((p - t).abs() <= 1e-12 * t, "{p} vs {t}");
        }
    }

    #[test]
    fn lut_is_linear_in_entries() {
        let skel = NetworkSkeleton::default();
        let lut = build_lut(&Device::Sim(pool_device(5)), &skel).unwrap();
        let scaled = lut.scaled(4.0);
        for a in enumerate_architectures().into_iter().step_by(311) {
            assert_eq!(lut_predict(&scaled, a, &skel), 4.0 * lut_predict(&lut, a, &skel));
        }
    }

    #[test]
    fn layerwise_equals_lut_on_sim() {
        let skel = NetworkSkeleton::default();
        let dev = Device::Sim(pool_device(6));
        let lut = build_lut(&dev, &skel).unwrap();
        let lw = LayerwisePredictor::measure(&dev, &skel, LAYERWISE_REPEATS).unwrap();
        for a in enumerate_architectures().into_iter().step_by(127) {
            assert_eq!(lw.predict(a, &skel), lut_predict(&lut, a, &skel));
        }
        let zero = ArchitectureId::new(0).unwrap();
        assert_eq!(layerwise_predict(&dev, zero, &skel).unwrap(), lut.fixed_overhead_ms);
    }

    #[test]
    fn flops_proxy() {
        let skel = NetworkSkeleton::default();
        let zero = ArchitectureId::new(0).unwrap();
        let conv = ArchitectureId::from_ops([OpKind::Conv3x3; 6]);
        let scale = fit_flops_scale(&[(conv, 10.0)], &skel).unwrap();
        assert!((flops_predict(scale, conv, &skel) - 10.0).abs() < 1e-9);
        // Only stem, reductions and head remain for the all-None cell.
        assert!(flops_predict(scale, zero, &skel) < 0.05 * 10.0);

        let skel2 = NetworkSkeleton::with_cells_per_stage(2);
        assert_eq!(cell_flops(conv, &skel2), 2 * cell_flops(conv, &skel));
        assert_eq!(
            flops_predict(1.0, conv, &skel2) - flops_predict(1.0, conv, &skel),
            cell_flops(conv, &skel) as f64
        );
        assert_eq!(flops(zero, &skel2), skeleton_flops(&skel2));
        assert!(fit_flops_scale(&[], &skel).is_err());
    }

    #[test]
    fn lut_json_round_trip() {
        let lut = build_lut(&Device::Sim(pool_device(1)), &NetworkSkeleton::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lut.json");
        lut.save_json(&p).unwrap();
        assert_eq!(LatencyLUT::load_json(&p).unwrap(), lut);
    }
}
