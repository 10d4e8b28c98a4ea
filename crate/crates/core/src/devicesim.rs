//! Synthetic device pool.
//!
//! Each device is a parametric latency model: an end-to-end latency is a
//! fixed overhead plus the sum of per-operator costs over every cell edge,
//! inflated by an interaction term for each adjacent conv-conv edge pair.
//! Counter readings follow per-event power laws of the operator costs, with
//! the law parameters taken from a "proxy CPU" block that several devices
//! may share.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::hwcounters::{HardwareDescriptor, NUM_EVENTS};
use crate::search_space::{
    cell_flops, ArchitectureId, NetworkSkeleton, OpKind, OperatorWorkload, EDGES, NUM_WORKLOADS,
    STAGE_WIDTHS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceClass {
    Cpu,
    Gpu,
}

/// Parameters of one synthetic counter: `scale * cost_ms ^ exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CounterResponse {
    pub scale: f64,
    pub exponent: f64,
}

/// Generation settings for [`make_device`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub class: DeviceClass,
    /// Seed of the counter-response block; devices sharing it share a host CPU.
    pub proxy_seed: Option<u64>,
    pub noise_cv: f64,
    pub interaction_range: (f64, f64),
    /// Log-normal spread of individual operator costs around the device trend.
    pub op_jitter: f64,
    /// Log-normal spread of overall device speed within a class.
    pub speed_sigma: f64,
    /// Half-width of the uniform factor applied to the class's width growth.
    pub growth_jitter: f64,
    /// Log-normal spread of counter scales around their nominal rates.
    pub counter_scale_sigma: f64,
    /// Counter exponents are drawn uniformly from `1 ± counter_exponent_jitter`.
    pub counter_exponent_jitter: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            class: DeviceClass::Cpu,
            proxy_seed: None,
            noise_cv: 0.02,
            interaction_range: (0.05, 0.25),
            op_jitter: 0.05,
            speed_sigma: 0.3,
            growth_jitter: 0.05,
            counter_scale_sigma: 0.1,
            counter_exponent_jitter: 0.05,
        }
    }
}

impl SimConfig {
    /// Settings of the default pool: within each block of 8 seeds, the first
    /// three are CPUs and the rest GPUs; seed `8n + 7` shares the proxy CPU
    /// of seed `8n + 6`.
    pub fn for_pool_seed(seed: u64) -> Self {
        let slot = seed % 8;
        let class = if (1..=3).contains(&slot) {
            DeviceClass::Cpu
        } else {
            DeviceClass::Gpu
        };
        let proxy_seed = (slot == 7).then(|| seed - 1);
        SimConfig {
            class,
            proxy_seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDevice {
    pub device_id: String,
    pub seed: u64,
    pub class: DeviceClass,
    pub proxy_seed: u64,
    pub base_overhead_ms: f64,
    /// Per-call cost of each workload in canonical order; `None` costs 0.
    pub op_cost_ms: [f64; NUM_WORKLOADS],
    pub interaction_coeff: f64,
    pub noise_cv: f64,
    pub counter_profile: [CounterResponse; NUM_EVENTS],
}

pub fn sim_device_id(seed: u64) -> String {
    format!("sim-{seed}")
}

// Relative cost of each kind at width 16, and how it grows with width, per
// device class.
fn kind_profile(class: DeviceClass, kind: OpKind) -> (f64, f64) {
    match (class, kind) {
        (_, OpKind::None) => (0.0, 0.0),
        (DeviceClass::Cpu, OpKind::Skip) => (0.02, 1.0),
        (DeviceClass::Cpu, OpKind::Conv1x1) => (0.25, 1.8),
        (DeviceClass::Cpu, OpKind::Conv3x3) => (1.0, 1.8),
        (DeviceClass::Cpu, OpKind::AvgPool3x3) => (0.2, 1.0),
        (DeviceClass::Gpu, OpKind::Skip) => (0.05, 0.3),
        (DeviceClass::Gpu, OpKind::Conv1x1) => (0.3, 0.6),
        (DeviceClass::Gpu, OpKind::Conv3x3) => (1.0, 0.8),
        (DeviceClass::Gpu, OpKind::AvgPool3x3) => (0.2, 0.4),
    }
}

fn counter_profile(proxy_seed: u64, config: &SimConfig) -> [CounterResponse; NUM_EVENTS] {
    // Nominal events per millisecond of work, in canonical event order.
    const NOMINAL: [f64; NUM_EVENTS] = [3e6, 6e6, 4e4, 8e3, 2e6, 6e4, 3e3, 1e4, 1e3, 5e3];
    let mut rng = ChaCha8Rng::seed_from_u64(proxy_seed ^ 0xC0_FFEE);
    let mut out = [CounterResponse {
        scale: 0.0,
        exponent: 0.0,
    }; NUM_EVENTS];
    for (r, nominal) in out.iter_mut().zip(NOMINAL) {
        let z: f64 = StandardNormal.sample(&mut rng);
        r.scale = nominal * (config.counter_scale_sigma * z).exp();
        r.exponent = 1.0 + config.counter_exponent_jitter * rng.random_range(-1.0..1.0);
    }
    out
}

/// Deterministic device from `seed`.
pub fn make_device(seed: u64, config: &SimConfig) -> SimDevice {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xDE_71CE);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let (speed_median, overhead_range) = match config.class {
        DeviceClass::Cpu => (2.0, (0.5, 2.0)),
        DeviceClass::Gpu => (0.2, (0.2, 0.6)),
    };
    let speed = speed_median * (config.speed_sigma * normal(&mut rng)).exp();
    let growth_scale = 1.0 + config.growth_jitter * rng.random_range(-1.0..1.0);
    let base_overhead_ms = rng.random_range(overhead_range.0..overhead_range.1);
    let (lo, hi) = config.interaction_range;
    let interaction_coeff = if hi > lo { rng.random_range(lo..hi) } else { lo };

    let mut op_cost_ms = [0.0; NUM_WORKLOADS];
    for (i, cost) in op_cost_ms.iter_mut().enumerate() {
        let w = OperatorWorkload::from_index(i).unwrap();
        let (rel, growth) = kind_profile(config.class, w.kind);
        let jitter = (config.op_jitter * normal(&mut rng)).exp();
        let ratio = (w.width / STAGE_WIDTHS[0]) as f64;
        *cost = speed * rel * ratio.powf(growth * growth_scale) * jitter;
    }

    let proxy_seed = config.proxy_seed.unwrap_or(seed);
    SimDevice {
        device_id: sim_device_id(seed),
        seed,
        class: config.class,
        proxy_seed,
        base_overhead_ms,
        op_cost_ms,
        interaction_coeff,
        noise_cv: config.noise_cv,
        counter_profile: counter_profile(proxy_seed, config),
    }
}

/// The default pool device for `seed`.
pub fn pool_device(seed: u64) -> SimDevice {
    make_device(seed, &SimConfig::for_pool_seed(seed))
}

pub fn default_pool(seeds: impl IntoIterator<Item = u64>) -> Vec<SimDevice> {
    seeds.into_iter().map(pool_device).collect()
}

impl SimDevice {
    pub fn op_cost(&self, kind: OpKind, width: usize) -> f64 {
        self.op_cost_ms[OperatorWorkload { kind, width }.index()]
    }

    /// Noiseless latency.
    pub fn true_latency(&self, arch: ArchitectureId, skel: &NetworkSkeleton) -> f64 {
        let ops = arch.ops();
        let factor = 1.0 + self.interaction_coeff * arch.adjacent_conv_pairs() as f64;
        let per_cell: f64 = STAGE_WIDTHS
            .iter()
            .map(|&w| ops.iter().map(|&op| self.op_cost(op, w)).sum::<f64>() * factor)
            .sum();
        self.base_overhead_ms + skel.cells_per_stage as f64 * per_cell
    }

    /// Latency with multiplicative log-normal noise of CV `noise_cv`.
    pub fn noisy_latency<R: Rng>(
        &self,
        arch: ArchitectureId,
        skel: &NetworkSkeleton,
        rng: &mut R,
    ) -> f64 {
        let t = self.true_latency(arch, skel);
        if self.noise_cv == 0.0 {
            return t;
        }
        let sigma = (1.0 + self.noise_cv * self.noise_cv).ln().sqrt();
        let z: f64 = StandardNormal.sample(rng);
        t * (sigma * z - 0.5 * sigma * sigma).exp()
    }
}

/// Simulated latency; noisy when an RNG is supplied.
pub fn sim_latency<R: Rng>(
    d: &SimDevice,
    arch: ArchitectureId,
    skel: &NetworkSkeleton,
    noise: Option<&mut R>,
) -> f64 {
    match noise {
        Some(rng) => d.noisy_latency(arch, skel, rng),
        None => d.true_latency(arch, skel),
    }
}

pub fn sim_descriptor(d: &SimDevice) -> HardwareDescriptor {
    let mut counters = [[0.0; NUM_EVENTS]; NUM_WORKLOADS];
    for (row, &cost) in counters.iter_mut().zip(&d.op_cost_ms) {
        for (v, r) in row.iter_mut().zip(&d.counter_profile) {
            *v = r.scale * cost.powf(r.exponent);
        }
    }
    HardwareDescriptor {
        device_id: d.device_id.clone(),
        counters,
        op_latency_ms: d.op_cost_ms,
    }
}

/// True when node 3 is reachable from node 0 through non-`None` edges.
pub fn output_connected(arch: ArchitectureId) -> bool {
    let ops = arch.ops();
    let mut reach = [true, false, false, false];
    for (e, &(from, to)) in EDGES.iter().enumerate() {
        // Canonical edge order is topological.
        if reach[from] && ops[e] != OpKind::None {
            reach[to] = true;
        }
    }
    reach[3]
}

pub const ACCURACY_FLOOR: f64 = 0.1;

/// Stand-in for benchmark test accuracy.
///
/// Disconnected cells score exactly [`ACCURACY_FLOOR`] (chance level for 10
/// classes). Connected cells score a saturating function of cell FLOPs plus
/// small bonuses for skip connections and pooling, and a seeded perturbation
/// bounded by 0.03.
pub fn sim_accuracy(arch: ArchitectureId) -> f64 {
    if !output_connected(arch) {
        return ACCURACY_FLOOR;
    }
    let skel = NetworkSkeleton::default();
    let f = cell_flops(arch, &skel) as f64;
    let ops = arch.ops();
    let skips = ops.iter().filter(|&&k| k == OpKind::Skip).count() as f64;
    let pools = ops.iter().filter(|&&k| k == OpKind::AvgPool3x3).count() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC0_0000 ^ u64::from(arch.get()));
    let perturb = rng.random_range(0.0..0.03);
    let acc = 0.55 + 0.35 * (1.0 - (-f / 2.0e7).exp()) + 0.01 * skips.min(2.0)
        + 0.005 * pools
        + perturb;
    acc.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search_space::enumerate_architectures;

    #[test]
    fn same_seed_same_device() {
        assert_eq!(pool_device(3), pool_device(3));
        let cfg = SimConfig::default();
        assert_eq!(make_device(42, &cfg), make_device(42, &cfg));
    }

    #[test]
    fn pool_tables_pairwise_distinct() {
        let pool = default_pool(1..=8);
        for i in 0..8 {
            for j in i + 1..8 {
                assert_ne!(pool[i].op_cost_ms, pool[j].op_cost_ms);
            }
        }
        assert_eq!(pool[5].proxy_seed, pool[6].proxy_seed);
        assert_eq!(pool[5].counter_profile, pool[6].counter_profile);
    }

    #[test]
    fn all_none_latency_is_overhead() {
        let d = pool_device(1);
        let zero = ArchitectureId::new(0).unwrap();
        assert_eq!(d.true_latency(zero, &NetworkSkeleton::default()), d.base_overhead_ms);
    }

    #[test]
    fn noiseless_device_is_reproducible() {
        let cfg = SimConfig {
            noise_cv: 0.0,
            ..SimConfig::default()
        };
        let d = make_device(5, &cfg);
        let arch = ArchitectureId::new(4321).unwrap();
        let skel = NetworkSkeleton::default();
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(
            sim_latency(&d, arch, &skel, Some(&mut r1)),
            sim_latency(&d, arch, &skel, Some(&mut r2))
        );
        assert_eq!(
            sim_latency::<ChaCha8Rng>(&d, arch, &skel, None),
            d.true_latency(arch, &skel)
        );
    }

    #[test]
    fn upgrading_none_to_conv_increases_latency() {
        let skel = NetworkSkeleton::default();
        let pool = default_pool(1..=8);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut checked = 0;
        while checked < 100 {
            let arch = ArchitectureId::new(rng.random_range(0..15_625)).unwrap();
            let mut ops = arch.ops();
            let Some(e) = ops.iter().position(|&k| k == OpKind::None) else {
                continue;
            };
            ops[e] = OpKind::Conv3x3;
            let up = ArchitectureId::from_ops(ops);
            for d in &pool {
                assert!(d.true_latency(up, &skel) > d.true_latency(arch, &skel));
            }
            checked += 1;
        }
    }

    #[test]
    fn descriptors_deterministic_and_distinct() {
        let pool = default_pool(1..=8);
        let descs: Vec<_> = pool.iter().map(sim_descriptor).collect();
        assert_eq!(descs[0], sim_descriptor(&pool[0]));
        for d in &descs {
            assert!(d.counters.iter().flatten().all(|&v| v >= 0.0));
        }
        for i in 0..8 {
            for j in i + 1..8 {
                let a = descs[i].flattened();
                let b = descs[j].flattened();
                let dist: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
                assert!(dist.sqrt() > 0.0);
            }
        }
    }

    #[test]
    fn accuracy_bounded_and_floored_by_all_none() {
        let zero = sim_accuracy(ArchitectureId::new(0).unwrap());
        for arch in enumerate_architectures() {
            let a = sim_accuracy(arch);
            assert!((0.0..=1.0).contains(&a));
            assert!(a >= zero);
            assert_eq!(a, sim_accuracy(arch));
        }
    }

    #[test]
    fn connectivity() {
        use OpKind::*;
        assert!(!output_connected(ArchitectureId::from_ops([None; 6])));
        assert!(output_connected(ArchitectureId::from_ops([None, None, Skip, None, None, None])));
        // 0→1 then 1→3.
        assert!(output_connected(ArchitectureId::from_ops([Conv1x1, None, None, None, Skip, None])));
        // 0→1 only, with no path onward.
        assert!(!output_connected(ArchitectureId::from_ops([Conv1x1, None, None, None, None, None])));
    }
}
