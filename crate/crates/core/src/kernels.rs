//! Naive single-threaded reference kernels and a full-network executor.
//!
//! These run on the host both as the end-to-end latency workload and as the
//! per-operator workload measured under hardware counters. Convolutions are
//! direct loops; weights are fixed pseudo-random values seeded by
//! `(kind, width)` and never trained.

use std::hint::black_box;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search_space::{
    ArchitectureId, NetworkSkeleton, OpKind, OperatorWorkload, EDGES, NUM_EDGES, STAGE_WIDTHS,
};

pub const DEFAULT_REPEATS: usize = 50;
pub const WARMUP_RUNS: usize = 3;
pub const DEFAULT_LOOP_ITERATIONS: usize = 100;
const INPUT_SEED: u64 = 0x5EED_1A7E;

/// Dense `(channels, height, width)` tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Tensor {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_data(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "data length {} does not match shape ({channels}, {height}, {width})",
                data.len()
            )));
        }
        Ok(Tensor {
            channels,
            height,
            width,
            data,
        })
    }

    /// Uniform values in `[-1, 1)` from a fixed seed.
    pub fn seeded(channels: usize, height: usize, width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..channels * height * width)
            .map(|_| rng.random_range(-1.0f32..1.0))
            .collect();
        Tensor {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}

/// Mean and raw per-run durations of a repeated measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyMeasurement {
    pub mean_ms: f64,
    pub runs: usize,
    pub raw_ms: Vec<f64>,
}

impl LatencyMeasurement {
    pub fn from_raw(raw_ms: Vec<f64>) -> Self {
        let runs = raw_ms.len();
        let mean_ms = raw_ms.iter().sum::<f64>() / runs as f64;
        LatencyMeasurement {
            mean_ms,
            runs,
            raw_ms,
        }
    }

    pub fn coefficient_of_variation(&self) -> f64 {
        let var = self
            .raw_ms
            .iter()
            .map(|x| (x - self.mean_ms).powi(2))
            .sum::<f64>()
            / self.runs as f64;
        var.sqrt() / self.mean_ms
    }
}

fn weight_seed(kind: OpKind, c_in: usize, c_out: usize) -> u64 {
    ((kind.index() as u64) << 40) ^ ((c_in as u64) << 20) ^ c_out as u64
}

/// Direct convolution with stride 1 and "same" padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    /// `[c_out][c_in][ky][kx]`
    pub weights: Vec<f32>,
}

impl Conv2d {
    pub fn seeded(kind: OpKind, c_in: usize, c_out: usize, kernel: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(weight_seed(kind, c_in, c_out));
        let bound = 1.0 / ((c_in * kernel * kernel) as f32).sqrt();
        let weights = (0..c_out * c_in * kernel * kernel)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Conv2d {
            c_in,
            c_out,
            kernel,
            weights,
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.forward_impl::<false>(input, &mut 0)
    }

    /// Forward pass that also counts every multiply-accumulate it performs,
    /// including those against zero padding.
    pub fn forward_counting(&self, input: &Tensor, macs: &mut u64) -> Result<Tensor> {
        self.forward_impl::<true>(input, macs)
    }

    fn forward_impl<const COUNT: bool>(&self, input: &Tensor, macs: &mut u64) -> Result<Tensor> {
        if input.channels != self.c_in {
            return Err(Error::Shape(format!(
                "convolution expects {} input channels, got {}",
                self.c_in, input.channels
            )));
        }
        let (h, w) = (input.height, input.width);
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let mut out = Tensor::zeros(self.c_out, h, w);
        let plane = h * w;
        for co in 0..self.c_out {
            let out_plane = &mut out.data[co * plane..(co + 1) * plane];
            for ci in 0..self.c_in {
                let in_plane = &input.data[ci * plane..(ci + 1) * plane];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = self.weights[((co * self.c_in + ci) * k + ky) * k + kx];
                        let dy = ky as isize - pad;
                        let dx = kx as isize - pad;
                        if COUNT {
                            *macs += plane as u64;
                        }
                        // Clip the output range so the input index stays in bounds.
                        let y0 = (-dy).max(0) as usize;
                        let y1 = (h as isize - dy).min(h as isize).max(0) as usize;
                        let x0 = (-dx).max(0) as usize;
                        let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                        for y in y0..y1 {
                            let iy = (y as isize + dy) as usize;
                            let orow = &mut out_plane[y * w + x0..y * w + x1];
                            let ix0 = (x0 as isize + dx) as usize;
                            let irow = &in_plane[iy * w + ix0..iy * w + ix0 + (x1 - x0)];
                            for (o, i) in orow.iter_mut().zip(irow) {
                                *o += wv * *i;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// 3×3, stride 1, padding 1 average over in-bounds elements only.
pub fn avg_pool3x3(input: &Tensor) -> Tensor {
    let (c, h, w) = input.shape();
    let mut out = Tensor::zeros(c, h, w);
    let plane = input.plane();
    for ch in 0..c {
        let src = &input.data[ch * plane..(ch + 1) * plane];
        let dst = &mut out.data[ch * plane..(ch + 1) * plane];
        for y in 0..h {
            let ys = y.saturating_sub(1)..(y + 2).min(h);
            for x in 0..w {
                let xs = x.saturating_sub(1)..(x + 2).min(w);
                let mut sum = 0.0f32;
                for yy in ys.clone() {
                    for xx in xs.clone() {
                        sum += src[yy * w + xx];
                    }
                }
                dst[y * w + x] = sum / (ys.len() * xs.len()) as f32;
            }
        }
    }
    out
}

/// 2×2 stride-2 average pool over in-bounds elements; output size rounds up.
pub fn avg_pool_stride2(input: &Tensor) -> Tensor {
    let (c, h, w) = input.shape();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Tensor::zeros(c, oh, ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut sum = 0.0f32;
                let mut n = 0;
                for y in 2 * oy..(2 * oy + 2).min(h) {
                    for x in 2 * ox..(2 * ox + 2).min(w) {
                        sum += input.data[(ch * h + y) * w + x];
                        n += 1;
                    }
                }
                out.data[(ch * oh + oy) * ow + ox] = sum / n as f32;
            }
        }
    }
    out
}

/// An instantiated cell-edge operator with its weights.
#[derive(Debug, Clone)]
pub enum Operator {
    Zero,
    Identity,
    Conv(Conv2d),
    AvgPool,
}

impl Operator {
    pub fn new(kind: OpKind, width: usize) -> Self {
        match kind {
            OpKind::None => Operator::Zero,
            OpKind::Skip => Operator::Identity,
            OpKind::Conv1x1 | OpKind::Conv3x3 => {
                Operator::Conv(Conv2d::seeded(kind, width, width, kind.kernel_size()))
            }
            OpKind::AvgPool3x3 => Operator::AvgPool,
        }
    }

    pub fn apply(&self, input: &Tensor) -> Result<Tensor> {
        self.apply_impl(input, None)
    }

    fn apply_impl(&self, input: &Tensor, macs: Option<&mut u64>) -> Result<Tensor> {
        match self {
            Operator::Zero => Ok(Tensor::zeros(input.channels, input.height, input.width)),
            Operator::Identity => Ok(input.clone()),
            Operator::Conv(conv) => match macs {
                Some(m) => conv.forward_counting(input, m),
                None => conv.forward(input),
            },
            Operator::AvgPool => Ok(avg_pool3x3(input)),
        }
    }
}

/// Applies workload `w` to `input` once, returning the output and the
/// wall-clock time of the call (weight construction excluded).
pub fn run_operator(w: OperatorWorkload, input: &Tensor) -> Result<(Tensor, Duration)> {
    if input.channels != w.width {
        return Err(Error::Shape(format!(
            "workload {} expects {} channels, got {}",
            w, w.width, input.channels
        )));
    }
    let op = Operator::new(w.kind, w.width);
    let start = Instant::now();
    let out = op.apply(input)?;
    let elapsed = start.elapsed();
    Ok((out, elapsed))
}

/// Repeatedly applies `w` to a fixed seeded `width × 32 × 32` tensor and
/// returns the total elapsed time.
pub fn run_workload_loop(w: OperatorWorkload, iterations: usize) -> Result<Duration> {
    let (op, input) = prepare_workload(w)?;
    let start = Instant::now();
    run_prepared_loop(&op, &input, iterations)?;
    Ok(start.elapsed())
}

pub(crate) fn prepare_workload(w: OperatorWorkload) -> Result<(Operator, Tensor)> {
    let input = Tensor::seeded(w.width, 32, 32, INPUT_SEED ^ w.index() as u64);
    Ok((Operator::new(w.kind, w.width), input))
}

pub(crate) fn run_prepared_loop(op: &Operator, input: &Tensor, iterations: usize) -> Result<()> {
    if iterations == 0 {
        return Err(Error::Domain("iterations must be at least 1".into()));
    }
    for _ in 0..iterations {
        black_box(op.apply(black_box(input))?);
    }
    Ok(())
}

struct Cell {
    // One operator per edge, in canonical edge order.
    edges: Vec<Operator>,
}

impl Cell {
    fn new(arch: ArchitectureId, width: usize) -> Self {
        Cell {
            edges: arch.ops().iter().map(|&k| Operator::new(k, width)).collect(),
        }
    }

    fn forward(&self, input: &Tensor, mut macs: Option<&mut u64>) -> Result<Tensor> {
        let mut nodes: Vec<Tensor> = Vec::with_capacity(4);
        nodes.push(input.clone());
        for j in 1..4 {
            let mut acc = Tensor::zeros(input.channels, input.height, input.width);
            for e in 0..NUM_EDGES {
                let (from, to) = EDGES[e];
                if to == j {
                    let out = self.edges[e].apply_impl(&nodes[from], macs.as_deref_mut())?;
                    acc.add_assign(&out);
                }
            }
            nodes.push(acc);
        }
        Ok(nodes.pop().unwrap())
    }
}

/// A full network built from one cell architecture and a skeleton.
pub struct Network {
    stem: Conv2d,
    stages: Vec<Vec<Cell>>,
    reductions: Vec<Conv2d>,
    head: Vec<f32>,
    num_classes: usize,
}

impl Network {
    pub fn new(arch: ArchitectureId, skel: &NetworkSkeleton) -> Self {
        let stem = Conv2d::seeded(OpKind::Conv3x3, skel.in_channels, STAGE_WIDTHS[0], 3);
        let stages = STAGE_WIDTHS
            .iter()
            .map(|&c| (0..skel.cells_per_stage).map(|_| Cell::new(arch, c)).collect())
            .collect();
        let reductions = STAGE_WIDTHS
            .windows(2)
            .map(|p| Conv2d::seeded(OpKind::Conv1x1, p[0], p[1], 1))
            .collect();
        let last = STAGE_WIDTHS[STAGE_WIDTHS.len() - 1];
        let mut rng = ChaCha8Rng::seed_from_u64(0x4EAD);
        let head = (0..last * skel.num_classes)
            .map(|_| rng.random_range(-0.1f32..0.1))
            .collect();
        Network {
            stem,
            stages,
            reductions,
            head,
            num_classes: skel.num_classes,
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<Vec<f32>> {
        self.forward_impl(input, None)
    }

    /// Forward pass returning the logits and the number of multiply-accumulates
    /// executed by convolutions and the linear head.
    pub fn forward_counting(&self, input: &Tensor) -> Result<(Vec<f32>, u64)> {
        let mut macs = 0;
        let logits = self.forward_impl(input, Some(&mut macs))?;
        Ok((logits, macs))
    }

    fn forward_impl(&self, input: &Tensor, mut macs: Option<&mut u64>) -> Result<Vec<f32>> {
        let mut x = match macs.as_deref_mut() {
            Some(m) => self.stem.forward_counting(input, m)?,
            None => self.stem.forward(input)?,
        };
        for (s, cells) in self.stages.iter().enumerate() {
            if s > 0 {
                let pooled = avg_pool_stride2(&x);
                let red = &self.reductions[s - 1];
                x = match macs.as_deref_mut() {
                    Some(m) => red.forward_counting(&pooled, m)?,
                    None => red.forward(&pooled)?,
                };
            }
            for cell in cells {
                x = cell.forward(&x, macs.as_deref_mut())?;
            }
        }
        let plane = (x.height * x.width) as f32;
        let pooled: Vec<f32> = x
            .data
            .chunks(x.height * x.width)
            .map(|c| c.iter().sum::<f32>() / plane)
            .collect();
        let logits = (0..self.num_classes)
            .map(|k| {
                pooled
                    .iter()
                    .enumerate()
                    .map(|(c, v)| v * self.head[c * self.num_classes + k])
                    .sum()
            })
            .collect();
        if let Some(m) = macs {
            *m += (pooled.len() * self.num_classes) as u64;
        }
        Ok(logits)
    }
}

/// Times `repeats` forward passes after [`WARMUP_RUNS`] untimed ones.
pub fn run_network(
    arch: ArchitectureId,
    skel: &NetworkSkeleton,
    repeats: usize,
) -> Result<LatencyMeasurement> {
    if repeats == 0 {
        return Err(Error::Domain("repeats must be at least 1".into()));
    }
    let net = Network::new(arch, skel);
    let input = Tensor::seeded(skel.in_channels, skel.height, skel.width, INPUT_SEED);
    for _ in 0..WARMUP_RUNS {
        black_box(net.forward(black_box(&input))?);
    }
    let mut raw_ms = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        black_box(net.forward(black_box(&input))?);
        raw_ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(LatencyMeasurement::from_raw(raw_ms))
}

/// Mean single-call latency of workload `w` over `repeats` timed calls.
pub fn measure_operator(w: OperatorWorkload, repeats: usize) -> Result<LatencyMeasurement> {
    if repeats == 0 {
        return Err(Error::Domain("repeats must be at least 1".into()));
    }
    let (op, input) = prepare_workload(w)?;
    for _ in 0..WARMUP_RUNS {
        black_box(op.apply(black_box(&input))?);
    }
    let mut raw_ms = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        black_box(op.apply(black_box(&input))?);
        raw_ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(LatencyMeasurement::from_raw(raw_ms))
}
