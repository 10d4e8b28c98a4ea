//! Hardware descriptors built from performance counters.
//!
//! A descriptor holds 10 counter readings for each of the 15 operator
//! workloads plus the per-call latency of each workload. The flattened model
//! input is workload-major: entry `(i, j)` sits at `i * 10 + j` and the
//! latency of workload `i` at `150 + i`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search_space::{operator_workloads, OperatorWorkload, NUM_WORKLOADS};

#[cfg(target_os = "linux")]
mod perf;

pub const NUM_EVENTS: usize = 10;
pub const COUNTER_LEN: usize = NUM_WORKLOADS * NUM_EVENTS;
pub const DESCRIPTOR_LEN: usize = COUNTER_LEN + NUM_WORKLOADS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CounterEvent {
    CpuCycles,
    Instructions,
    CacheReferences,
    CacheMisses,
    L1DcacheLoads,
    L1DcacheLoadMisses,
    LlcLoadMisses,
    LlcLoads,
    LlcStoreMisses,
    LlcStores,
}

impl CounterEvent {
    pub const ALL: [CounterEvent; NUM_EVENTS] = [
        CounterEvent::CpuCycles,
        CounterEvent::Instructions,
        CounterEvent::CacheReferences,
        CounterEvent::CacheMisses,
        CounterEvent::L1DcacheLoads,
        CounterEvent::L1DcacheLoadMisses,
        CounterEvent::LlcLoadMisses,
        CounterEvent::LlcLoads,
        CounterEvent::LlcStoreMisses,
        CounterEvent::LlcStores,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// The event name as `perf` spells it.
    pub fn name(self) -> &'static str {
        match self {
            CounterEvent::CpuCycles => "cpu-cycles",
            CounterEvent::Instructions => "instructions",
            CounterEvent::CacheReferences => "cache-references",
            CounterEvent::CacheMisses => "cache-misses",
            CounterEvent::L1DcacheLoads => "L1-dcache-loads",
            CounterEvent::L1DcacheLoadMisses => "L1-dcache-load-misses",
            CounterEvent::LlcLoadMisses => "LLC-load-misses",
            CounterEvent::LlcLoads => "LLC-loads",
            CounterEvent::LlcStoreMisses => "LLC-store-misses",
            CounterEvent::LlcStores => "LLC-stores",
        }
    }
}

impl fmt::Display for CounterEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CounterEvent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CounterEvent::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Domain(format!("unknown counter event `{s}`")))
    }
}

/// Per-device characterization: counters and latencies of every workload.
#[derive(Debug, Clone, PartialEq)]
pub struct HardwareDescriptor {
    pub device_id: String,
    /// Indexed `[workload][event]`, canonical orders.
    pub counters: [[f64; NUM_EVENTS]; NUM_WORKLOADS],
    pub op_latency_ms: [f64; NUM_WORKLOADS],
}

impl HardwareDescriptor {
    pub fn new(
        device_id: impl Into<String>,
        counters: [[f64; NUM_EVENTS]; NUM_WORKLOADS],
        op_latency_ms: [f64; NUM_WORKLOADS],
    ) -> Result<Self> {
        let d = HardwareDescriptor {
            device_id: device_id.into(),
            counters,
            op_latency_ms,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let bad_counter = self
            .counters
            .iter()
            .flatten()
            .any(|v| !v.is_finite() || *v < 0.0);
        let bad_latency = self
            .op_latency_ms
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0);
        if bad_counter || bad_latency {
            return Err(Error::Validation(format!(
                "descriptor `{}` has negative or non-finite entries",
                self.device_id
            )));
        }
        Ok(())
    }

    /// All 165 values: counters workload-major, then operator latencies.
    pub fn flattened(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(DESCRIPTOR_LEN);
        out.extend(self.counters.iter().flatten());
        out.extend(self.op_latency_ms);
        out
    }

    /// Model input features; drops the latency block when `include_latency`
    /// is false.
    pub fn features(&self, include_latency: bool) -> Vec<f64> {
        let mut v = self.flattened();
        if !include_latency {
            v.truncate(COUNTER_LEN);
        }
        v
    }

    pub fn counter(&self, w: OperatorWorkload, e: CounterEvent) -> f64 {
        self.counters[w.index()][e.index()]
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = DescriptorFile::from(self);
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&DescriptorFile::from(self))?)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: DescriptorFile = serde_json::from_str(text)?;
        file.try_into()
    }
}

/// On-disk layout of a descriptor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DescriptorFile {
    pub device_id: String,
    pub events: Vec<String>,
    pub workloads: Vec<String>,
    pub counters: Vec<Vec<f64>>,
    pub op_latency_ms: Vec<f64>,
}

impl From<&HardwareDescriptor> for DescriptorFile {
    fn from(d: &HardwareDescriptor) -> Self {
        DescriptorFile {
            device_id: d.device_id.clone(),
            events: CounterEvent::ALL.iter().map(|e| e.name().to_string()).collect(),
            workloads: operator_workloads().iter().map(|w| w.name()).collect(),
            counters: d.counters.iter().map(|row| row.to_vec()).collect(),
            op_latency_ms: d.op_latency_ms.to_vec(),
        }
    }
}

impl TryFrom<DescriptorFile> for HardwareDescriptor {
    type Error = Error;

    fn try_from(file: DescriptorFile) -> Result<Self> {
        let events: Vec<CounterEvent> = file
            .events
            .iter()
            .map(|s| s.parse())
            .collect::<Result<_>>()?;
        if events != CounterEvent::ALL {
            return Err(Error::Validation(
                "descriptor events must list the 10 canonical events in order".into(),
            ));
        }
        let workloads: Vec<OperatorWorkload> = file
            .workloads
            .iter()
            .map(|s| s.parse())
            .collect::<Result<_>>()?;
        if workloads != operator_workloads() {
            return Err(Error::Validation(
                "descriptor workloads must list the 15 canonical workloads in order".into(),
            ));
        }
        if file.counters.len() != NUM_WORKLOADS
            || file.counters.iter().any(|r| r.len() != NUM_EVENTS)
            || file.op_latency_ms.len() != NUM_WORKLOADS
        {
            return Err(Error::Validation(
                "descriptor must hold 15 rows of 10 counters and 15 latencies".into(),
            ));
        }
        let mut counters = [[0.0; NUM_EVENTS]; NUM_WORKLOADS];
        for (dst, src) in counters.iter_mut().zip(&file.counters) {
            dst.copy_from_slice(src);
        }
        let mut op_latency_ms = [0.0; NUM_WORKLOADS];
        op_latency_ms.copy_from_slice(&file.op_latency_ms);
        HardwareDescriptor::new(file.device_id, counters, op_latency_ms)
    }
}

/// Counts for one workload, normalized per loop iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterReading {
    pub events: Vec<CounterEvent>,
    pub counts: Vec<f64>,
    pub duration: Duration,
    pub iterations: usize,
}

impl CounterReading {
    pub fn get(&self, e: CounterEvent) -> Option<f64> {
        self.events
            .iter()
            .position(|&x| x == e)
            .map(|i| self.counts[i])
    }
}

/// Runs `run_workload_loop(w, iterations)` with `events` counting in user
/// space. Counts are divided by `iterations`.
pub fn measure_counters(
    w: OperatorWorkload,
    events: &[CounterEvent],
    iterations: usize,
) -> Result<CounterReading> {
    if iterations == 0 {
        return Err(Error::Domain("iterations must be at least 1".into()));
    }
    if events.is_empty() {
        return Err(Error::Domain("at least one counter event is required".into()));
    }
    platform_measure(w, events, iterations)
}

#[cfg(target_os = "linux")]
fn platform_measure(
    w: OperatorWorkload,
    events: &[CounterEvent],
    iterations: usize,
) -> Result<CounterReading> {
    perf::measure(w, events, iterations)
}

#[cfg(not(target_os = "linux"))]
fn platform_measure(_: OperatorWorkload, _: &[CounterEvent], _: usize) -> Result<CounterReading> {
    Err(Error::Unsupported(
        "perf_event_open is only available on Linux".into(),
    ))
}

/// Characterizes the host by measuring all 15 workloads.
pub fn build_descriptor(device_id: &str, iterations: usize) -> Result<HardwareDescriptor> {
    let mut counters = [[0.0; NUM_EVENTS]; NUM_WORKLOADS];
    let mut op_latency_ms = [0.0; NUM_WORKLOADS];
    for w in operator_workloads() {
        let reading = measure_counters(w, &CounterEvent::ALL, iterations)?;
        let i = w.index();
        counters[i].copy_from_slice(&reading.counts);
        op_latency_ms[i] = reading.duration.as_secs_f64() * 1e3 / iterations as f64;
    }
    HardwareDescriptor::new(device_id, counters, op_latency_ms)
}

/// Probes whether hardware counters can be opened on this host.
pub fn counters_available() -> Result<()> {
    #[cfg(target_os = "linux")]
    {
        perf::probe()
    }
    #[cfg(not(target_os = "linux"))]
    {
        Err(Error::Unsupported(
            "perf_event_open is only available on Linux".into(),
        ))
    }
}

/// Pins the calling thread to `core`. Used by measurement commands.
pub fn pin_to_core(core: usize) -> Result<()> {
    #[cfg(target_os = "linux")]
    {
        // SAFETY: cpu_set_t is plain data; zeroed is a valid empty set.
        unsafe {
            let mut set: libc::cpu_set_t = std::mem::zeroed();
            libc::CPU_SET(core, &mut set);
            if libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set) != 0 {
                return Err(Error::Io(std::io::Error::last_os_error()));
            }
        }
        Ok(())
    }
    #[cfg(not(target_os = "linux"))]
    {
        let _ = core;
        Err(Error::Unsupported("core pinning requires Linux".into()))
    }
}
