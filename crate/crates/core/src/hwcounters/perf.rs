//! Minimal `perf_event_open(2)` binding for counting-mode event groups.

use std::fs::File;
use std::io::{self, Read};
use std::os::fd::{AsRawFd, FromRawFd};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use super::{CounterEvent, CounterReading};
use crate::error::{Error, Result};
use crate::kernels::{prepare_workload, run_prepared_loop};
use crate::search_space::OperatorWorkload;

const PERF_TYPE_HARDWARE: u32 = 0;
const PERF_TYPE_HW_CACHE: u32 = 3;

const PERF_COUNT_HW_CPU_CYCLES: u64 = 0;
const PERF_COUNT_HW_INSTRUCTIONS: u64 = 1;
const PERF_COUNT_HW_CACHE_REFERENCES: u64 = 2;
const PERF_COUNT_HW_CACHE_MISSES: u64 = 3;

const CACHE_L1D: u64 = 0;
const CACHE_LL: u64 = 2;
const CACHE_OP_READ: u64 = 0;
const CACHE_OP_WRITE: u64 = 1;
const CACHE_RESULT_ACCESS: u64 = 0;
const CACHE_RESULT_MISS: u64 = 1;

const FORMAT_TOTAL_TIME_ENABLED: u64 = 1 << 0;
const FORMAT_TOTAL_TIME_RUNNING: u64 = 1 << 1;
const FORMAT_GROUP: u64 = 1 << 3;

const FLAG_DISABLED: u64 = 1 << 0;
const FLAG_EXCLUDE_KERNEL: u64 = 1 << 5;
const FLAG_EXCLUDE_HV: u64 = 1 << 6;

const IOC_ENABLE: libc::c_ulong = 0x2400;
const IOC_DISABLE: libc::c_ulong = 0x2401;
const IOC_RESET: libc::c_ulong = 0x2403;
const IOC_FLAG_GROUP: libc::c_ulong = 1;

/// Kernel ABI `struct perf_event_attr`, `PERF_ATTR_SIZE_VER5` layout.
#[repr(C)]
#[derive(Default)]
struct PerfEventAttr {
    type_: u32,
    size: u32,
    config: u64,
    sample_period: u64,
    sample_type: u64,
    read_format: u64,
    flags: u64,
    wakeup_events: u32,
    bp_type: u32,
    config1: u64,
    config2: u64,
    branch_sample_type: u64,
    sample_regs_user: u64,
    sample_stack_user: u32,
    clockid: i32,
    sample_regs_intr: u64,
    aux_watermark: u32,
    sample_max_stack: u16,
    reserved: u16,
}

const _: () = assert!(std::mem::size_of::<PerfEventAttr>() == 112);

fn event_config(e: CounterEvent) -> (u32, u64) {
    let cache = |id: u64, op: u64, result: u64| (PERF_TYPE_HW_CACHE, id | (op << 8) | (result << 16));
    match e {
        CounterEvent::CpuCycles => (PERF_TYPE_HARDWARE, PERF_COUNT_HW_CPU_CYCLES),
        CounterEvent::Instructions => (PERF_TYPE_HARDWARE, PERF_COUNT_HW_INSTRUCTIONS),
        CounterEvent::CacheReferences => (PERF_TYPE_HARDWARE, PERF_COUNT_HW_CACHE_REFERENCES),
        CounterEvent::CacheMisses => (PERF_TYPE_HARDWARE, PERF_COUNT_HW_CACHE_MISSES),
        CounterEvent::L1DcacheLoads => cache(CACHE_L1D, CACHE_OP_READ, CACHE_RESULT_ACCESS),
        CounterEvent::L1DcacheLoadMisses => cache(CACHE_L1D, CACHE_OP_READ, CACHE_RESULT_MISS),
        CounterEvent::LlcLoadMisses => cache(CACHE_LL, CACHE_OP_READ, CACHE_RESULT_MISS),
        CounterEvent::LlcLoads => cache(CACHE_LL, CACHE_OP_READ, CACHE_RESULT_ACCESS),
        CounterEvent::LlcStoreMisses => cache(CACHE_LL, CACHE_OP_WRITE, CACHE_RESULT_MISS),
        CounterEvent::LlcStores => cache(CACHE_LL, CACHE_OP_WRITE, CACHE_RESULT_ACCESS),
    }
}

fn open_event(e: CounterEvent, group_fd: libc::c_int) -> io::Result<File> {
    let (type_, config) = event_config(e);
    let mut attr = PerfEventAttr {
        type_,
        size: std::mem::size_of::<PerfEventAttr>() as u32,
        config,
        read_format: FORMAT_GROUP | FORMAT_TOTAL_TIME_ENABLED | FORMAT_TOTAL_TIME_RUNNING,
        flags: FLAG_EXCLUDE_KERNEL | FLAG_EXCLUDE_HV,
        ..Default::default()
    };
    if group_fd == -1 {
        attr.flags |= FLAG_DISABLED;
    }
    // SAFETY: attr is a valid, fully initialized perf_event_attr whose size
    // field matches its layout; pid 0 / cpu -1 means "this thread, any CPU".
    let fd = unsafe {
        libc::syscall(
            libc::SYS_perf_event_open,
            &mut attr as *mut PerfEventAttr,
            0 as libc::pid_t,
            -1 as libc::c_int,
            group_fd,
            0 as libc::c_ulong,
        )
    };
    if fd < 0 {
        return Err(io::Error::last_os_error());
    }
    // SAFETY: the syscall returned a fresh descriptor that we now own.
    Ok(unsafe { File::from_raw_fd(fd as libc::c_int) })
}

static SESSION_ACTIVE: AtomicBool = AtomicBool::new(false);

/// An open event group. Only one may exist per process.
struct Session {
    leader: File,
    _members: Vec<File>,
    n: usize,
}

struct Sample {
    enabled: u64,
    running: u64,
    values: Vec<u64>,
}

impl Session {
    fn open(events: &[CounterEvent]) -> Result<Session> {
        if SESSION_ACTIVE.swap(true, Ordering::SeqCst) {
            return Err(Error::Unsupported(
                "another counter session is already active in this process".into(),
            ));
        }
        Self::open_inner(events).inspect_err(|_| SESSION_ACTIVE.store(false, Ordering::SeqCst))
    }

    fn open_inner(events: &[CounterEvent]) -> Result<Session> {
        let unsupported = |e: CounterEvent, err: io::Error| {
            Error::Unsupported(format!("cannot open counter `{e}`: {err}"))
        };
        let leader = open_event(events[0], -1).map_err(|err| unsupported(events[0], err))?;
        let mut members = Vec::with_capacity(events.len() - 1);
        for &e in &events[1..] {
            members.push(open_event(e, leader.as_raw_fd()).map_err(|err| unsupported(e, err))?);
        }
        Ok(Session {
            leader,
            _members: members,
            n: events.len(),
        })
    }

    fn ioctl(&self, request: libc::c_ulong) -> Result<()> {
        // SAFETY: the leader fd is a valid perf event descriptor.
        let rc = unsafe { libc::ioctl(self.leader.as_raw_fd(), request as _, IOC_FLAG_GROUP) };
        if rc < 0 {
            return Err(Error::Io(io::Error::last_os_error()));
        }
        Ok(())
    }

    fn read(&mut self) -> Result<Sample> {
        let mut buf = vec![0u8; 8 * (3 + self.n)];
        self.leader.read_exact(&mut buf)?;
        let words: Vec<u64> = buf
            .chunks_exact(8)
            .map(|c| u64::from_ne_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Sample {
            enabled: words[1],
            running: words[2],
            values: words[3..3 + words[0] as usize].to_vec(),
        })
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        SESSION_ACTIVE.store(false, Ordering::SeqCst);
    }
}

/// Measures one group over one run of the workload loop.
fn measure_group(
    w: OperatorWorkload,
    events: &[CounterEvent],
    iterations: usize,
) -> Result<(Option<Vec<u64>>, std::time::Duration)> {
    let (op, input) = prepare_workload(w)?;
    let mut session = Session::open(events)?;
    session.ioctl(IOC_RESET)?;
    let start = Instant::now();
    session.ioctl(IOC_ENABLE)?;
    run_prepared_loop(&op, &input, iterations)?;
    session.ioctl(IOC_DISABLE)?;
    let elapsed = start.elapsed();
    let sample = session.read()?;
    // A group that was not scheduled the whole time is unusable.
    let complete = sample.running > 0 && sample.running == sample.enabled;
    Ok((complete.then_some(sample.values), elapsed))
}

pub(super) fn measure(
    w: OperatorWorkload,
    events: &[CounterEvent],
    iterations: usize,
) -> Result<CounterReading> {
    let per_iter = |v: u64| v as f64 / iterations as f64;
    let (values, duration) = measure_group(w, events, iterations)?;
    let counts = match values {
        Some(v) => v.into_iter().map(per_iter).collect(),
        None => {
            // Not enough hardware counters for one group: split into halves
            // over separate identical runs.
            let mid = events.len().div_ceil(2);
            let mut counts = Vec::with_capacity(events.len());
            for half in [&events[..mid], &events[mid..]] {
                if half.is_empty() {
                    continue;
                }
                let (v, _) = measure_group(w, half, iterations)?;
                let v = v.ok_or_else(|| {
                    Error::Unsupported("counter group could not be scheduled".into())
                })?;
                counts.extend(v.into_iter().map(per_iter));
            }
            counts
        }
    };
    Ok(CounterReading {
        events: events.to_vec(),
        counts,
        duration,
        iterations,
    })
}

pub(super) fn probe() -> Result<()> {
    let _session = Session::open(&[CounterEvent::Instructions])?;
    Ok(())
}
