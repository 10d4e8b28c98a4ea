//! Latency sample sets and the weighted training-set union.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::devicesim::{sim_descriptor, SimDevice};
use crate::error::{Error, Result};
use crate::hwcounters::{build_descriptor, HardwareDescriptor};
use crate::kernels::{run_network, DEFAULT_REPEATS};
use crate::search_space::{ArchitectureId, NetworkSkeleton, NUM_ARCHITECTURES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub device_id: String,
    pub arch: ArchitectureId,
    pub latency_ms: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleSet {
    pub samples: Vec<LatencySample>,
    pub descriptors: BTreeMap<String, HardwareDescriptor>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Checks positivity of latencies and weights, and that every sample
    /// has a descriptor.
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if !(s.latency_ms.is_finite() && s.latency_ms > 0.0) {
                return Err(Error::Validation(format!(
                    "sample {i} has non-positive latency {}",
                    s.latency_ms
                )));
            }
            if !(s.weight.is_finite() && s.weight > 0.0) {
                return Err(Error::Validation(format!(
                    "sample {i} has non-positive weight {}",
                    s.weight
                )));
            }
            if !self.descriptors.contains_key(&s.device_id) {
                return Err(Error::Validation(format!(
                    "sample {i} references device `{}` with no descriptor",
                    s.device_id
                )));
            }
        }
        Ok(())
    }

    pub fn device_ids(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.samples
            .iter()
            .filter(|s| seen.insert(s.device_id.as_str()))
            .map(|s| s.device_id.clone())
            .collect()
    }
}

/// A device that latency samples can be drawn from.
#[derive(Debug, Clone)]
pub enum Device {
    Sim(SimDevice),
    /// The machine running this process.
    Host {
        device_id: String,
        counter_iterations: usize,
        repeats: usize,
    },
}

impl Device {
    pub fn host(device_id: impl Into<String>) -> Self {
        Device::Host {
            device_id: device_id.into(),
            counter_iterations: crate::kernels::DEFAULT_LOOP_ITERATIONS,
            repeats: DEFAULT_REPEATS,
        }
    }

    pub fn id(&self) -> &str {
        match self {
            Device::Sim(d) => &d.device_id,
            Device::Host { device_id, .. } => device_id,
        }
    }

    pub fn descriptor(&self) -> Result<HardwareDescriptor> {
        match self {
            Device::Sim(d) => Ok(sim_descriptor(d)),
            Device::Host {
                device_id,
                counter_iterations,
                ..
            } => build_descriptor(device_id, *counter_iterations),
        }
    }

    /// One measured latency: noisy simulation, or a mean-of-`repeats` host run.
    pub fn measure<R: Rng>(
        &self,
        arch: ArchitectureId,
        skel: &NetworkSkeleton,
        rng: &mut R,
    ) -> Result<f64> {
        match self {
            Device::Sim(d) => Ok(d.noisy_latency(arch, skel, rng)),
            Device::Host { repeats, .. } => Ok(run_network(arch, skel, *repeats)?.mean_ms),
        }
    }

    fn stream_seed(&self) -> u64 {
        match self {
            Device::Sim(d) => d.seed,
            Device::Host { device_id, .. } => device_id
                .bytes()
                .fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
                    (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3)
                }),
        }
    }
}

fn device_rng(seed: u64, device: &Device, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(device.stream_seed().wrapping_mul(4).wrapping_add(stream));
    rng
}

/// `n` distinct ids drawn uniformly without replacement, sorted ascending.
pub fn select_training_architectures(n: usize, seed: u64) -> Result<Vec<ArchitectureId>> {
    let total = NUM_ARCHITECTURES as usize;
    if n == 0 || n > total {
        return Err(Error::Domain(format!(
            "cannot select {n} architectures from a space of {total}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<u32> = index::sample(&mut rng, total, n)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    ids.sort_unstable();
    Ok(ids.into_iter().map(|i| ArchitectureId::new(i).unwrap()).collect())
}

/// One sample per `(device, arch)` pair, device-major. Weights are 1.
pub fn collect_initial(
    devices: &[Device],
    archs: &[ArchitectureId],
    skel: &NetworkSkeleton,
    seed: u64,
) -> Result<SampleSet> {
    let mut set = SampleSet::default();
    for device in devices {
        set.descriptors
            .insert(device.id().to_string(), device.descriptor()?);
        let mut rng = device_rng(seed, device, 0);
        for &arch in archs {
            set.samples.push(LatencySample {
                device_id: device.id().to_string(),
                arch,
                latency_ms: device.measure(arch, skel, &mut rng)?,
                weight: 1.0,
            });
        }
    }
    Ok(set)
}

/// `k` samples from `device` on architectures drawn uniformly from the whole
/// space, independently of any initial-set selection.
pub fn collect_adaptation(
    device: &Device,
    k: usize,
    skel: &NetworkSkeleton,
    seed: u64,
) -> Result<SampleSet> {
    let mut set = SampleSet::default();
    set.descriptors
        .insert(device.id().to_string(), device.descriptor()?);
    if k == 0 {
        return Ok(set);
    }
    let archs = select_training_architectures(k, seed ^ device.stream_seed().rotate_left(17))?;
    let mut rng = device_rng(seed, device, 1);
    for arch in archs {
        set.samples.push(LatencySample {
            device_id: device.id().to_string(),
            arch,
            latency_ms: device.measure(arch, skel, &mut rng)?,
            weight: 1.0,
        });
    }
    Ok(set)
}

/// `T = X ∪ X̂` with initial samples weighted `1/√|X|` and adaptation samples
/// `1/√|X̂|`. A `(device, arch)` key present in both keeps the adaptation copy.
pub fn build_training_set(initial: &SampleSet, adaptation: &SampleSet) -> SampleSet {
    let adapted: HashSet<(&str, ArchitectureId)> = adaptation
        .samples
        .iter()
        .map(|s| (s.device_id.as_str(), s.arch))
        .collect();
    let kept: Vec<&LatencySample> = initial
        .samples
        .iter()
        .filter(|s| !adapted.contains(&(s.device_id.as_str(), s.arch)))
        .collect();

    let mut out = SampleSet::default();
    let w_init = 1.0 / (kept.len() as f64).sqrt();
    out.samples.extend(kept.into_iter().map(|s| LatencySample {
        weight: w_init,
        ..s.clone()
    }));
    let w_adapt = 1.0 / (adaptation.samples.len() as f64).sqrt();
    out.samples
        .extend(adaptation.samples.iter().map(|s| LatencySample {
            weight: w_adapt,
            ..s.clone()
        }));
    out.descriptors = initial.descriptors.clone();
    out.descriptors.extend(
        adaptation
            .descriptors
            .iter()
            .map(|(k, v)| (k.clone(), v.clone())),
    );
    out
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    device_id: String,
    arch_id: u32,
    latency_ms: f64,
    weight: f64,
}

pub fn write_samples_csv<W: Write>(samples: &[LatencySample], writer: W) -> Result<()> {
    // Written by hand so that an empty set still carries the header.
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(["device_id", "arch_id", "latency_ms", "weight"])
        .map_err(csv_error)?;
    for s in samples {
        w.serialize(CsvRow {
            device_id: s.device_id.clone(),
            arch_id: s.arch.get(),
            latency_ms: s.latency_ms,
            weight: s.weight,
        })
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses sample rows, rejecting bad ids and non-positive latencies or
/// weights with the offending line number.
pub fn read_samples_csv<R: Read>(reader: R) -> Result<Vec<LatencySample>> {
    let mut r = csv::Reader::from_reader(reader);
    let expected = ["device_id", "arch_id", "latency_ms", "weight"];
    let headers = r.headers().map_err(csv_error)?.clone();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", expected.join(",")),
        });
    }
    let mut out = Vec::new();
    for row in r.deserialize::<CsvRow>() {
        let row = row.map_err(csv_error)?;
        let line = out.len() as u64 + 2;
        let fail = |message: String| Error::Parse { line, message };
        let arch = ArchitectureId::new(row.arch_id).map_err(|e| fail(e.to_string()))?;
        if !(row.latency_ms.is_finite() && row.latency_ms > 0.0) {
            return Err(fail(format!("latency must be positive, got {}", row.latency_ms)));
        }
        if !(row.weight.is_finite() && row.weight > 0.0) {
            return Err(fail(format!("weight must be positive, got {}", row.weight)));
        }
        out.push(LatencySample {
            device_id: row.device_id,
            arch,
            latency_ms: row.latency_ms,
            weight: row.weight,
        });
    }
    Ok(out)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}

pub fn save_samples(set: &SampleSet, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_samples_csv(&set.samples, std::io::BufWriter::new(file))
}

/// Loads a sample CSV and joins it against `descriptors`.
pub fn load_samples(
    path: &Path,
    descriptors: &BTreeMap<String, HardwareDescriptor>,
) -> Result<SampleSet> {
    let samples = read_samples_csv(std::fs::File::open(path)?)?;
    let mut set = SampleSet {
        samples,
        descriptors: BTreeMap::new(),
    };
    for id in set.device_ids() {
        match descriptors.get(&id) {
            Some(d) => {
                set.descriptors.insert(id, d.clone());
            }
            None => {
                return Err(Error::Validation(format!(
                    "device `{id}` has no descriptor"
                )))
            }
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devicesim::{default_pool, make_device, SimConfig};

    fn sim_devices(seeds: std::ops::RangeInclusive<u64>) -> Vec<Device> {
        default_pool(seeds).into_iter().map(Device::Sim).collect()
    }

    #[test]
    fn selection_bounds() {
        let a = select_training_architectures(900, 7).unwrap();
        assert_eq!(a.len(), 900);
        assert_eq!(a.iter().collect::<HashSet<_>>().len(), 900);
        assert_eq!(a, select_training_architectures(900, 7).unwrap());
        let all = select_training_architectures(15_625, 1).unwrap();
        assert_eq!(all, crate::search_space::enumerate_architectures());
        assert!(select_training_architectures(0, 1).is_err());
        assert!(select_training_architectures(15_626, 1).is_err());
    }

    #[test]
    fn initial_collection_counts() {
        let devices = sim_devices(1..=7);
        let archs = select_training_architectures(900, 3).unwrap();
        let skel = NetworkSkeleton::default();
        let set = collect_initial(&devices, &archs, &skel, 11).unwrap();
        assert_eq!(set.len(), 6300);
        assert!(set.samples.iter().all(|s| s.latency_ms > 0.0));
        set.validate().unwrap();
    }

    #[test]
    fn noiseless_collection_repeats_exactly() {
        let cfg = SimConfig {
            noise_cv: 0.0,
            ..SimConfig::default()
        };
        let devices = vec![Device::Sim(make_device(4, &cfg))];
        let archs = select_training_architectures(50, 3).unwrap();
        let skel = NetworkSkeleton::default();
        assert_eq!(
            collect_initial(&devices, &archs, &skel, 1).unwrap(),
            collect_initial(&devices, &archs, &skel, 2).unwrap()
        );
    }

    #[test]
    fn adaptation_counts() {
        let dev = &sim_devices(8..=8)[0];
        let skel = NetworkSkeleton::default();
        assert_eq!(collect_adaptation(dev, 3, &skel, 5).unwrap().len(), 3);
        assert_eq!(collect_adaptation(dev, 10, &skel, 5).unwrap().len(), 10);
        let empty = collect_adaptation(dev, 0, &skel, 5).unwrap();
        assert!(empty.is_empty());
        assert!(empty.descriptors.contains_key("sim-8"));
    }

    #[test]
    fn weights_follow_inverse_sqrt() {
        let devices = sim_devices(1..=7);
        let archs = select_training_architectures(900, 3).unwrap();
        let skel = NetworkSkeleton::default();
        let initial = collect_initial(&devices, &archs, &skel, 1).unwrap();
        let target = &sim_devices(8..=8)[0];

        let adapt = collect_adaptation(target, 9, &skel, 1).unwrap();
        let t = build_training_set(&initial, &adapt);
        let adapt_w: Vec<f64> = t.samples.iter().filter(|s| s.device_id == "sim-8").map(|s| s.weight).collect();
        assert!(adapt_w.iter().all(|&w| w == 1.0 / 3.0));

        let adapt = collect_adaptation(target, 3, &skel, 1).unwrap();
        let t = build_training_set(&initial, &adapt);
        assert_eq!(t.len(), 6303);
        let w0 = t.samples[0].weight;
        assert!((w0 - 0.012_599).abs() < 1e-6);
        assert_eq!(w0, 1.0 / 6300f64.sqrt());
        t.validate().unwrap();
    }

    #[test]
    fn collisions_keep_adaptation_copy() {
        let skel = NetworkSkeleton::default();
        let dev = &sim_devices(2..=2)[0];
        let adapt = collect_adaptation(dev, 4, &skel, 9).unwrap();
        let archs: Vec<_> = adapt.samples.iter().map(|s| s.arch).collect();
        let mut initial = collect_initial(std::slice::from_ref(dev), &archs, &skel, 77).unwrap();
        initial.samples.push(LatencySample {
            device_id: "sim-2".into(),
            arch: ArchitectureId::new(0).unwrap(),
            latency_ms: 1.0,
            weight: 1.0,
        });
        let t = build_training_set(&initial, &adapt);
        assert_eq!(t.len(), 5);
        assert_eq!(t.samples[0].weight, 1.0);
        for s in &adapt.samples {
            let hit = t.samples.iter().find(|x| x.arch == s.arch).unwrap();
            assert_eq!(hit.latency_ms, s.latency_ms);
            assert_eq!(hit.weight, 0.5);
        }
    }

    #[test]
    fn empty_adaptation_allowed() {
        let skel = NetworkSkeleton::default();
        let devices = sim_devices(1..=2);
        let archs = select_training_architectures(8, 3).unwrap();
        let initial = collect_initial(&devices, &archs, &skel, 1).unwrap();
        let t = build_training_set(&initial, &SampleSet::default());
        assert_eq!(t.len(), 16);
        assert!(t.samples.iter().all(|s| s.weight == 0.25));
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let skel = NetworkSkeleton::default();
        let devices = sim_devices(1..=2);
        let archs = select_training_architectures(20, 3).unwrap();
        let set = collect_initial(&devices, &archs, &skel, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        save_samples(&set, &path).unwrap();
        assert_eq!(load_samples(&path, &set.descriptors).unwrap(), set);

        let bad = "device_id,arch_id,latency_ms,weight\nsim-1,3,1.5,1\nsim-1,4,-2.0,1\n";
        match read_samples_csv(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let garbled = "device_id,arch_id,latency_ms,weight\nsim-1,x,1.5,1\n";
        assert!(matches!(read_samples_csv(garbled.as_bytes()), Err(Error::Parse { line: 2, .. })));

        std::fs::write(&path, "device_id,arch_id,latency_ms,weight\nghost,3,1.5,1\n").unwrap();
        assert!(matches!(load_samples(&path, &set.descriptors), Err(Error::Validation(_))));
    }
}
