//! `maple`: characterize devices, collect latency samples, train and
//! evaluate the latency predictor.
//!
//! Exit codes: 0 success, 1 internal error, 2 environment, measurement or
//! missing-input error, 3 validation error.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use maple_core::dataset::{
    build_training_set, collect_adaptation, collect_initial, load_samples, save_samples,
    select_training_architectures, Device, SampleSet,
};
use maple_core::devicesim::{make_device, sim_accuracy, sim_descriptor, SimConfig, SimDevice};
use maple_core::eval::{
    descriptor_distance_matrix, emit_report, loocv_with_progress, pareto_table, write_distance_csv,
    write_pareto_csv, LoocvConfig,
};
use maple_core::hwcounters::{build_descriptor, pin_to_core, HardwareDescriptor, COUNTER_LEN};
use maple_core::kernels::DEFAULT_LOOP_ITERATIONS;
use maple_core::predictor::{init_model, predict_device, train, ModelConfig, RegressionModel};
use maple_core::search_space::{enumerate_architectures, ArchitectureId, NetworkSkeleton};
use maple_core::{Error, Result};

#[derive(Parser)]
#[command(name = "maple", version, about = "Hardware-aware few-shot latency prediction")]
struct Cli {
    /// Seed for every random choice made by the command.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Report encoding for `loocv`.
    #[arg(long, global = true, default_value = "csv")]
    format: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a simulated device pool as JSON.
    Simgen {
        #[arg(long, default_value = "1..8")]
        seeds: String,
        #[arg(long)]
        noise_cv: Option<f64>,
    },
    /// Build a hardware descriptor from performance counters.
    Characterize {
        #[arg(long, default_value = "host")]
        device_id: String,
        #[arg(long, default_value_t = DEFAULT_LOOP_ITERATIONS)]
        iterations: usize,
        /// Describe this simulated device instead of the host.
        #[arg(long)]
        sim_device: Option<u64>,
        #[command(flatten)]
        pool: PoolArgs,
    },
    /// Measure latencies of the same architectures on several devices.
    Collect {
        /// `sim:1..7`, `host`, or bare seeds interpreted through `--source`.
        #[arg(long, default_value = "sim:1..7")]
        devices: String,
        /// File of architecture ids, one per line; random selection otherwise.
        #[arg(long)]
        archs: Option<PathBuf>,
        #[arg(long, default_value_t = 900)]
        n: usize,
        #[arg(long, default_value = "sim")]
        source: String,
        #[command(flatten)]
        pool: PoolArgs,
    },
    /// Train on a sample file.
    Train {
        #[arg(long)]
        samples: PathBuf,
        #[command(flatten)]
        descriptors: DescriptorArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Train on initial samples plus `k` samples from a new device.
    Adapt {
        #[arg(long)]
        samples: PathBuf,
        /// Device to adapt to, e.g. `sim:8` or `host`.
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Also write the adaptation samples here.
        #[arg(long)]
        adaptation_out: Option<PathBuf>,
        #[command(flatten)]
        descriptors: DescriptorArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Predict latencies on one device.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        descriptor: PathBuf,
        /// File of architecture ids; the whole space when omitted.
        #[arg(long)]
        archs: Option<PathBuf>,
    },
    /// Leave-one-device-out evaluation over a simulated pool.
    Loocv {
        #[arg(long, default_value = "0,3,10")]
        k: String,
        #[arg(long, default_value_t = 900)]
        n: usize,
        #[arg(long, default_value = "maple,lut,layerwise,flops")]
        methods: String,
        #[arg(long, default_value = "1..8")]
        seeds: String,
        #[command(flatten)]
        pool: PoolArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Compare Pareto fronts under true and predicted latency.
    Pareto {
        #[arg(long)]
        model: PathBuf,
        /// Simulated device, e.g. `sim:8`.
        #[arg(long)]
        target: String,
        #[command(flatten)]
        pool: PoolArgs,
    },
    /// Pairwise descriptor distances as a square CSV.
    Distmap {
        /// Descriptor files; the pool's descriptors when omitted.
        #[arg(long, num_args = 1..)]
        descriptors: Vec<PathBuf>,
        #[arg(long, default_value = "1..8")]
        seeds: String,
        /// Compare raw counter values instead of normalized features.
        #[arg(long)]
        raw: bool,
        #[command(flatten)]
        pool: PoolArgs,
    },
}

#[derive(Args)]
struct PoolArgs {
    /// Pool file written by `simgen`; default pool parameters when omitted.
    #[arg(long)]
    pool: Option<PathBuf>,
}

#[derive(Args)]
struct DescriptorArgs {
    /// Descriptor JSON files for devices in the sample file.
    #[arg(long, num_args = 1..)]
    descriptors: Vec<PathBuf>,
    #[command(flatten)]
    pool: PoolArgs,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value_t = ModelConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = ModelConfig::default().learning_rate)]
    learning_rate: f64,
    #[arg(long, default_value_t = ModelConfig::default().batch_size)]
    batch_size: usize,
    /// Leave operator latencies out of the descriptor.
    #[arg(long)]
    counters_only: bool,
    /// Regress on milliseconds rather than log latency.
    #[arg(long)]
    raw_target: bool,
}

impl ModelArgs {
    fn config(&self, seed: u64) -> ModelConfig {
        let mut cfg = ModelConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            log_target: !self.raw_target,
            seed,
            ..ModelConfig::default()
        };
        if self.counters_only {
            cfg.descriptor_dim = COUNTER_LEN;
        }
        cfg
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_)
        | Error::Parse { .. }
        | Error::MalformedEncoding(_)
        | Error::Shape(_)
        | Error::Json(_) => 3,
        Error::Usage(_) | Error::Domain(_) | Error::Unsupported(_) | Error::Io(_) => 2,
        Error::Divergence { .. } => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Simgen { seeds, noise_cv } => {
            let pool: Vec<SimDevice> = parse_seeds(seeds)?
                .into_iter()
                .map(|s| {
                    let mut cfg = SimConfig::for_pool_seed(s);
                    if let Some(cv) = noise_cv {
                        cfg.noise_cv = *cv;
                    }
                    make_device(s, &cfg)
                })
                .collect();
            write_output(out, serde_json::to_string_pretty(&pool)?.as_bytes())
        }
        Command::Characterize {
            device_id,
            iterations,
            sim_device,
            pool,
        } => {
            let desc = match sim_device {
                Some(seed) => {
                    let d = pool.device(*seed)?;
                    let mut desc = sim_descriptor(&d);
                    if device_id != "host" {
                        desc.device_id = device_id.clone();
                    }
                    desc
                }
                None => {
                    pin_from_env()?;
                    build_descriptor(device_id, *iterations).map_err(|e| match e {
                        Error::Unsupported(m) => Error::Unsupported(format!(
                            "{m}; pass --sim-device <seed> to describe a simulated device"
                        )),
                        other => other,
                    })?
                }
            };
            write_output(out, desc.to_json_string()?.as_bytes())
        }
        Command::Collect {
            devices,
            archs,
            n,
            source,
            pool,
        } => {
            let devices = parse_devices(devices, source, pool)?;
            if devices.iter().any(|d| matches!(d, Device::Host { .. })) {
                pin_from_env()?;
            }
            let archs = match archs {
                Some(p) => read_arch_file(p)?,
                None => select_training_architectures(*n, cli.seed)
                    .map_err(|e| Error::Usage(e.to_string()))?,
            };
            let skel = NetworkSkeleton::default();
            let set = collect_initial(&devices, &archs, &skel, cli.seed)?;
            write_samples(out, &set)
        }
        Command::Train {
            samples,
            descriptors,
            model,
        } => {
            let known = descriptors.load()?;
            let set = load_samples(samples, &known)?;
            let (m, report) = train(&init_model(&model.config(cli.seed))?, &set)?;
            eprintln!(
                "trained {} epochs on {} samples, final loss {:.6}",
                report.epochs,
                set.len(),
                report.final_loss
            );
            write_output(out, serde_json::to_string(&m)?.as_bytes())
        }
        Command::Adapt {
            samples,
            target,
            k,
            adaptation_out,
            descriptors,
            model,
        } => {
            let known = descriptors.load()?;
            let initial = load_samples(samples, &known)?;
            let target = parse_devices(target, "sim", &descriptors.pool)?
                .into_iter()
                .next()
                .ok_or_else(|| Error::Usage("--target names no device".into()))?;
            if initial.descriptors.contains_key(target.id()) {
                return Err(Error::Validation(format!(
                    "target `{}` already appears in the initial samples",
                    target.id()
                )));
            }
            if matches!(target, Device::Host { .. }) {
                pin_from_env()?;
            }
            let skel = NetworkSkeleton::default();
            let adaptation = collect_adaptation(&target, *k, &skel, cli.seed)?;
            if let Some(p) = adaptation_out {
                save_samples(&adaptation, p)?;
            }
            let set = build_training_set(&initial, &adaptation);
            let (m, report) = train(&init_model(&model.config(cli.seed))?, &set)?;
            eprintln!(
                "adapted to {} with {k} samples, final loss {:.6}",
                target.id(),
                report.final_loss
            );
            write_output(out, serde_json::to_string(&m)?.as_bytes())
        }
        Command::Predict {
            model,
            descriptor,
            archs,
        } => {
            let m = RegressionModel::load_json(model)?;
            let desc = HardwareDescriptor::load_json(descriptor)?;
            let archs = match archs {
                Some(p) => read_arch_file(p)?,
                None => enumerate_architectures(),
            };
            let preds = predict_device(&m, &archs, &desc);
            let mut text = String::from("arch_id,predicted_ms\n");
            for (a, p) in archs.iter().zip(preds) {
                text.push_str(&format!("{},{}\n", a.get(), p));
            }
            write_output(out, text.as_bytes())
        }
        Command::Loocv {
            k,
            n,
            methods,
            seeds,
            pool,
            model,
        } => {
            let devices = pool.devices(&parse_seeds(seeds)?)?;
            let cfg = LoocvConfig {
                n_train: *n,
                k_adapt: parse_list(k)?,
                methods: methods
                    .split(',')
                    .map(|m| m.trim().parse())
                    .collect::<Result<_>>()?,
                seed: cli.seed,
                model: model.config(cli.seed),
                skeleton: NetworkSkeleton::default(),
            };
            // Validate the format before the long run.
            cli.format.parse::<maple_core::eval::ReportFormat>()?;
            let report = loocv_with_progress(&devices, &cfg, |row| {
                let acc = row
                    .report
                    .map(|r| format!("{:.4}", r.acc_10pct))
                    .unwrap_or_else(|| "failed".into());
                eprintln!(
                    "{} {} k={} acc@10%={acc}",
                    row.held_out_device, row.method, row.k_adapt
                );
            })?;
            match out {
                Some(p) => emit_report(&report, &cli.format, p),
                None => {
                    let text = match cli.format.as_str() {
                        "json" => report.to_json_string()?,
                        _ => report.to_csv_string()?,
                    };
                    write_output(None, text.as_bytes())
                }
            }
        }
        Command::Pareto {
            model,
            target,
            pool,
        } => {
            let m = RegressionModel::load_json(model)?;
            let d = match parse_devices(target, "sim", pool)?.into_iter().next() {
                Some(Device::Sim(d)) => d,
                _ => return Err(Error::Usage("--target must be a simulated device".into())),
            };
            let skel = NetworkSkeleton::default();
            let archs = enumerate_architectures();
            let truth: Vec<f64> = archs.iter().map(|&a| d.true_latency(a, &skel)).collect();
            let preds = predict_device(&m, &archs, &sim_descriptor(&d));
            let acc: Vec<f64> = archs.iter().map(|&a| sim_accuracy(a)).collect();
            let (rows, agreement) = pareto_table(&archs, &truth, &preds, &acc);
            eprintln!("pareto agreement on {}: {agreement:.4}", d.device_id);
            let mut buf = Vec::new();
            write_pareto_csv(&rows, &mut buf)?;
            write_output(out, &buf)
        }
        Command::Distmap {
            descriptors,
            seeds,
            raw,
            pool,
        } => {
            let descs: Vec<HardwareDescriptor> = if descriptors.is_empty() {
                pool.devices(&parse_seeds(seeds)?)?
                    .iter()
                    .map(sim_descriptor)
                    .collect()
            } else {
                descriptors
                    .iter()
                    .map(|p| HardwareDescriptor::load_json(p))
                    .collect::<Result<_>>()?
            };
            let matrix = descriptor_distance_matrix(&descs, !raw)?;
            let labels: Vec<String> = descs.iter().map(|d| d.device_id.clone()).collect();
            let mut buf = Vec::new();
            write_distance_csv(&labels, &matrix, &mut buf)?;
            write_output(out, &buf)
        }
    }
}

impl PoolArgs {
    fn load(&self) -> Result<Option<Vec<SimDevice>>> {
        match &self.pool {
            Some(p) => Ok(Some(serde_json::from_str(&read_input(p)?)?)),
            None => Ok(None),
        }
    }

    fn device(&self, seed: u64) -> Result<SimDevice> {
        Ok(self.devices(&[seed])?.remove(0))
    }

    fn devices(&self, seeds: &[u64]) -> Result<Vec<SimDevice>> {
        let pool = self.load()?;
        seeds
            .iter()
            .map(|&s| match &pool {
                Some(p) => p.iter().find(|d| d.seed == s).cloned().ok_or_else(|| {
                    Error::Validation(format!("pool file has no device with seed {s}"))
                }),
                None => Ok(make_device(s, &SimConfig::for_pool_seed(s))),
            })
            .collect()
    }
}

impl DescriptorArgs {
    /// Explicit descriptor files, falling back to every pool device.
    fn load(&self) -> Result<BTreeMap<String, HardwareDescriptor>> {
        let mut out = BTreeMap::new();
        for p in &self.descriptors {
            if !p.exists() {
                return Err(missing(p));
            }
            let d = HardwareDescriptor::load_json(p)?;
            out.insert(d.device_id.clone(), d);
        }
        let pool = match self.pool.load()? {
            Some(p) => p,
            None if self.descriptors.is_empty() => (1..=8)
                .map(|s| make_device(s, &SimConfig::for_pool_seed(s)))
                .collect(),
            None => Vec::new(),
        };
        for d in pool {
            out.entry(d.device_id.clone())
                .or_insert_with(|| sim_descriptor(&d));
        }
        Ok(out)
    }
}

fn pin_from_env() -> Result<()> {
    if let Ok(v) = std::env::var("MAPLE_PIN_CORE") {
        let core: usize = v
            .parse()
            .map_err(|_| Error::Usage(format!("MAPLE_PIN_CORE must be a core index, got `{v}`")))?;
        pin_to_core(core)?;
    }
    Ok(())
}

/// `"1..8"` (inclusive), `"1,3,5"`, or a single value.
fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = parse_num(a)?;
        let b: u64 = parse_num(b)?;
        if a > b {
            return Err(Error::Usage(format!("empty range `{s}`")));
        }
        return Ok((a..=b).collect());
    }
    parse_list(s)
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>> {
    s.split(',').map(parse_num).collect()
}

fn parse_num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Usage(format!("expected a number, got `{s}`")))
}

fn parse_devices(spec: &str, source: &str, pool: &PoolArgs) -> Result<Vec<Device>> {
    let (kind, rest) = match spec.split_once(':') {
        Some((k, r)) => (k, r),
        None if spec == "host" => ("host", ""),
        None => (source, spec),
    };
    match kind {
        "sim" => Ok(pool
            .devices(&parse_seeds(rest)?)?
            .into_iter()
            .map(Device::Sim)
            .collect()),
        "host" => Ok(vec![Device::host(if rest.is_empty() { "host" } else { rest })]),
        other => Err(Error::Usage(format!(
            "unknown device source `{other}` (expected sim or host)"
        ))),
    }
}

fn read_arch_file(p: &Path) -> Result<Vec<ArchitectureId>> {
    read_input(p)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse().map_err(|e: Error| Error::Parse {
                line: i as u64 + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn missing(p: &Path) -> Error {
    Error::Io(io::Error::new(
        io::ErrorKind::NotFound,
        format!("{}: no such file", p.display()),
    ))
}

fn read_input(p: &Path) -> Result<String> {
    fs::read_to_string(p).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => missing(p),
        _ => Error::Io(e),
    })
}

fn write_samples(out: Option<&Path>, set: &SampleSet) -> Result<()> {
    let mut buf = Vec::new();
    maple_core::dataset::write_samples_csv(&set.samples, &mut buf)?;
    write_output(out, &buf)
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => fs::write(p, bytes)?,
        None => io::stdout().lock().write_all(bytes)?,
    }
    Ok(())
}
