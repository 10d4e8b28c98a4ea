//! The NAS-Bench-201 cell search space.
//!
//! A cell is a complete DAG over 4 nodes with 6 edges; each edge carries one
//! of five operations. Architectures are identified by the base-5 code of
//! their edge operations, so the whole space is the integer range
//! `0..15625`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_EDGES: usize = 6;
pub const NUM_OPS: usize = 5;
pub const NUM_ARCHITECTURES: u32 = 15_625;
pub const STAGE_WIDTHS: [usize; 3] = [16, 32, 64];
pub const NUM_WORKLOADS: usize = NUM_OPS * STAGE_WIDTHS.len();
pub const ENCODING_LEN: usize = NUM_EDGES * NUM_OPS;

/// Edges of the 4-node cell as `(from, to)` pairs, in canonical order.
pub const EDGES: [(usize, usize); NUM_EDGES] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// Operation kinds in canonical encoding order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    None,
    Skip,
    Conv1x1,
    Conv3x3,
    AvgPool3x3,
}

impl OpKind {
    pub const ALL: [OpKind; NUM_OPS] = [
        OpKind::None,
        OpKind::Skip,
        OpKind::Conv1x1,
        OpKind::Conv3x3,
        OpKind::AvgPool3x3,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<OpKind> {
        Self::ALL.get(i).copied()
    }

    pub fn is_conv(self) -> bool {
        matches!(self, OpKind::Conv1x1 | OpKind::Conv3x3)
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::None => "none",
            OpKind::Skip => "skip_connect",
            OpKind::Conv1x1 => "conv1x1",
            OpKind::Conv3x3 => "conv3x3",
            OpKind::AvgPool3x3 => "avg_pool3x3",
        }
    }

    /// Spatial kernel size, or 0 for operators without a kernel.
    pub fn kernel_size(self) -> usize {
        match self {
            OpKind::Conv1x1 => 1,
            OpKind::Conv3x3 | OpKind::AvgPool3x3 => 3,
            OpKind::None | OpKind::Skip => 0,
        }
    }
}

/// One (operation, channel width) pair; the unit of hardware characterization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OperatorWorkload {
    pub kind: OpKind,
    pub width: usize,
}

impl OperatorWorkload {
    /// Position in the canonical kind-major, width-minor ordering.
    pub fn index(&self) -> usize {
        let w = STAGE_WIDTHS
            .iter()
            .position(|&w| w == self.width)
            .expect("workload width must be a stage width");
        self.kind.index() * STAGE_WIDTHS.len() + w
    }

    pub fn from_index(i: usize) -> Option<OperatorWorkload> {
        if i >= NUM_WORKLOADS {
            return None;
        }
        Some(OperatorWorkload {
            kind: OpKind::ALL[i / STAGE_WIDTHS.len()],
            width: STAGE_WIDTHS[i % STAGE_WIDTHS.len()],
        })
    }

    pub fn name(&self) -> String {
        format!("{}_c{}", self.kind.name(), self.width)
    }
}

impl fmt::Display for OperatorWorkload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for OperatorWorkload {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        operator_workloads()
            .into_iter()
            .find(|w| w.name() == s)
            .ok_or_else(|| Error::Domain(format!("unknown workload name `{s}`")))
    }
}

/// The 15 canonical workloads, kind-major then width-minor.
pub fn operator_workloads() -> Vec<OperatorWorkload> {
    (0..NUM_WORKLOADS)
        .map(|i| OperatorWorkload::from_index(i).unwrap())
        .collect()
}

/// A cell architecture, identified by `Σ op_e · 5^e`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ArchitectureId(u32);

impl ArchitectureId {
    pub fn new(id: u32) -> Result<Self> {
        if id < NUM_ARCHITECTURES {
            Ok(ArchitectureId(id))
        } else {
            Err(Error::Domain(format!(
                "architecture id {id} outside 0..{NUM_ARCHITECTURES}"
            )))
        }
    }

    pub fn get(self) -> u32 {
        self.0
    }

    pub fn from_ops(ops: [OpKind; NUM_EDGES]) -> Self {
        let id = ops
            .iter()
            .rev()
            .fold(0u32, |acc, op| acc * NUM_OPS as u32 + op.index() as u32);
        ArchitectureId(id)
    }

    /// Edge operations in canonical edge order.
    pub fn ops(self) -> [OpKind; NUM_EDGES] {
        let mut rest = self.0;
        let mut ops = [OpKind::None; NUM_EDGES];
        for op in ops.iter_mut() {
            *op = OpKind::ALL[(rest % NUM_OPS as u32) as usize];
            rest /= NUM_OPS as u32;
        }
        ops
    }

    /// Count of edge pairs `(i→j, j→k)` where both edges are convolutions.
    pub fn adjacent_conv_pairs(self) -> usize {
        let ops = self.ops();
        let mut pairs = 0;
        for (a, &(_, mid)) in EDGES.iter().enumerate() {
            for (b, &(from, _)) in EDGES.iter().enumerate() {
                if from == mid && ops[a].is_conv() && ops[b].is_conv() {
                    pairs += 1;
                }
            }
        }
        pairs
    }
}

impl fmt::Display for ArchitectureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for ArchitectureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let id: u32 = s
            .trim()
            .parse()
            .map_err(|_| Error::Domain(format!("`{s}` is not an architecture id")))?;
        ArchitectureId::new(id)
    }
}

/// One-hot operations matrix: row per edge, column per [`OpKind`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchEncoding {
    pub matrix: [[u8; NUM_OPS]; NUM_EDGES],
}

impl ArchEncoding {
    /// Row-major flattening, the 30-value model input.
    pub fn flatten(&self) -> [f64; ENCODING_LEN] {
        let mut out = [0.0; ENCODING_LEN];
        for (e, row) in self.matrix.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                out[e * NUM_OPS + k] = f64::from(v);
            }
        }
        out
    }

    /// 30-character `0`/`1` string, row-major.
    pub fn to_bit_string(&self) -> String {
        self.matrix
            .iter()
            .flatten()
            .map(|&v| if v == 1 { '1' } else { '0' })
            .collect()
    }

    pub fn from_bit_string(s: &str) -> Result<Self> {
        let bytes = s.as_bytes();
        if bytes.len() != ENCODING_LEN {
            return Err(Error::MalformedEncoding(format!(
                "expected {ENCODING_LEN} characters, got {}",
                bytes.len()
            )));
        }
        let mut matrix = [[0u8; NUM_OPS]; NUM_EDGES];
        for (i, &b) in bytes.iter().enumerate() {
            matrix[i / NUM_OPS][i % NUM_OPS] = match b {
                b'0' => 0,
                b'1' => 1,
                _ => {
                    return Err(Error::MalformedEncoding(format!(
                        "invalid character at position {i}"
                    )))
                }
            };
        }
        Ok(ArchEncoding { matrix })
    }
}

/// Full-network macro skeleton around the cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSkeleton {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    /// Cells per stage (K).
    pub cells_per_stage: usize,
    pub num_classes: usize,
}

impl Default for NetworkSkeleton {
    fn default() -> Self {
        NetworkSkeleton {
            height: 32,
            width: 32,
            in_channels: 3,
            cells_per_stage: 1,
            num_classes: 10,
        }
    }
}

impl NetworkSkeleton {
    pub fn with_cells_per_stage(k: usize) -> Self {
        NetworkSkeleton {
            cells_per_stage: k,
            ..Self::default()
        }
    }

    /// Spatial size `(h, w)` of stage `s`; each reduction halves it (ceil).
    pub fn stage_spatial(&self, stage: usize) -> (usize, usize) {
        let mut hw = (self.height, self.width);
        for _ in 0..stage {
            hw = (hw.0.div_ceil(2), hw.1.div_ceil(2));
        }
        hw
    }

    pub fn total_cells(&self) -> usize {
        STAGE_WIDTHS.len() * self.cells_per_stage
    }
}

pub fn enumerate_architectures() -> Vec<ArchitectureId> {
    (0..NUM_ARCHITECTURES).map(ArchitectureId).collect()
}

pub fn encode(arch: ArchitectureId) -> ArchEncoding {
    let mut matrix = [[0u8; NUM_OPS]; NUM_EDGES];
    for (row, op) in matrix.iter_mut().zip(arch.ops()) {
        row[op.index()] = 1;
    }
    ArchEncoding { matrix }
}

/// Range-checked [`encode`] for raw integer ids.
pub fn encode_id(id: u32) -> Result<ArchEncoding> {
    ArchitectureId::new(id).map(encode)
}

pub fn decode(enc: &ArchEncoding) -> Result<ArchitectureId> {
    let mut ops = [OpKind::None; NUM_EDGES];
    for (e, row) in enc.matrix.iter().enumerate() {
        if row.iter().any(|&v| v > 1) || row.iter().map(|&v| v as u32).sum::<u32>() != 1 {
            return Err(Error::MalformedEncoding(format!(
                "edge {e} row {row:?} is not one-hot"
            )));
        }
        let k = row.iter().position(|&v| v == 1).unwrap();
        ops[e] = OpKind::ALL[k];
    }
    Ok(ArchitectureId::from_ops(ops))
}

fn conv_flops(kernel: usize, c_in: usize, c_out: usize, h: usize, w: usize) -> u64 {
    2 * (kernel * kernel * c_in * c_out * h * w) as u64
}

/// FLOPs (2 × multiply-accumulates) of one edge operation at the given shape.
pub fn op_flops(kind: OpKind, channels: usize, h: usize, w: usize) -> u64 {
    match kind {
        OpKind::Conv1x1 | OpKind::Conv3x3 => {
            conv_flops(kind.kernel_size(), channels, channels, h, w)
        }
        OpKind::None | OpKind::Skip | OpKind::AvgPool3x3 => 0,
    }
}

/// FLOPs contributed by the cells alone.
pub fn cell_flops(arch: ArchitectureId, skel: &NetworkSkeleton) -> u64 {
    let ops = arch.ops();
    STAGE_WIDTHS
        .iter()
        .enumerate()
        .map(|(s, &c)| {
            let (h, w) = skel.stage_spatial(s);
            let per_cell: u64 = ops.iter().map(|&op| op_flops(op, c, h, w)).sum();
            per_cell * skel.cells_per_stage as u64
        })
        .sum()
}

/// FLOPs of the architecture-independent parts: stem, reductions, head.
pub fn skeleton_flops(skel: &NetworkSkeleton) -> u64 {
    let stem = conv_flops(3, skel.in_channels, STAGE_WIDTHS[0], skel.height, skel.width);
    let reductions: u64 = (1..STAGE_WIDTHS.len())
        .map(|s| {
            let (h, w) = skel.stage_spatial(s);
            conv_flops(1, STAGE_WIDTHS[s - 1], STAGE_WIDTHS[s], h, w)
        })
        .sum();
    let head = 2 * (STAGE_WIDTHS[STAGE_WIDTHS.len() - 1] * skel.num_classes) as u64;
    stem + reductions + head
}

pub fn flops(arch: ArchitectureId, skel: &NetworkSkeleton) -> u64 {
    cell_flops(arch, skel) + skeleton_flops(skel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_bounds() {
        let all = enumerate_architectures();
        assert_eq!(all.len(), 15_625);
        assert_eq!(all[0].get(), 0);
        assert_eq!(all[0].ops(), [OpKind::None; 6]);
        assert_eq!(all[15_624].ops(), [OpKind::AvgPool3x3; 6]);
        assert!(all.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn encode_extremes() {
        let enc = encode(ArchitectureId::new(0).unwrap());
        assert!(enc.matrix.iter().all(|r| *r == [1, 0, 0, 0, 0]));
        let enc = encode(ArchitectureId::new(15_624).unwrap());
        assert!(enc.matrix.iter().all(|r| *r == [0, 0, 0, 0, 1]));
        assert!(matches!(encode_id(15_625), Err(Error::Domain(_))));
    }

    #[test]
    fn decode_cases() {
        let skip = ArchEncoding {
            matrix: [[0, 1, 0, 0, 0]; 6],
        };
        assert_eq!(decode(&skip).unwrap().get(), 3906);

        let mut bad = skip;
        bad.matrix[2] = [0, 1, 1, 0, 0];
        assert!(matches!(decode(&bad), Err(Error::MalformedEncoding(_))));
        bad.matrix[2] = [0, 0, 0, 0, 0];
        assert!(matches!(decode(&bad), Err(Error::MalformedEncoding(_))));
    }

    #[test]
    fn bit_string_round_trip() {
        let enc = encode(ArchitectureId::new(1234).unwrap());
        let s = enc.to_bit_string();
        assert_eq!(s.len(), 30);
        assert_eq!(ArchEncoding::from_bit_string(&s).unwrap(), enc);
        assert!(ArchEncoding::from_bit_string("01").is_err());
    }

    #[test]
    fn workloads_canonical() {
        let ws = operator_workloads();
        assert_eq!(ws.len(), 15);
        assert_eq!(
            ws[0],
            OperatorWorkload {
                kind: OpKind::None,
                width: 16
            }
        );
        let mut widths: Vec<_> = ws.iter().map(|w| w.width).collect();
        widths.sort_unstable();
        widths.dedup();
        assert_eq!(widths, vec![16, 32, 64]);
        for (i, w) in ws.iter().enumerate() {
            assert_eq!(w.index(), i);
            assert_eq!(w.name().parse::<OperatorWorkload>().unwrap(), *w);
        }
        assert_eq!(ws, operator_workloads());
    }

    #[test]
    fn single_conv1x1_flops() {
        assert_eq!(op_flops(OpKind::Conv1x1, 16, 32, 32), 524_288);
        assert_eq!(op_flops(OpKind::None, 16, 32, 32), 0);
        assert_eq!(op_flops(OpKind::Skip, 64, 8, 8), 0);
        assert_eq!(op_flops(OpKind::AvgPool3x3, 64, 8, 8), 0);
    }

    #[test]
    fn all_none_flops_is_skeleton_only() {
        let skel = NetworkSkeleton::default();
        let zero = ArchitectureId::new(0).unwrap();
        assert_eq!(cell_flops(zero, &skel), 0);
        assert_eq!(flops(zero, &skel), skeleton_flops(&skel));
    }

    #[test]
    fn adjacent_pairs() {
        use OpKind::*;
        let all_conv = ArchitectureId::from_ops([Conv3x3; 6]);
        assert_eq!(all_conv.adjacent_conv_pairs(), 4);
        // 0→1 and 1→2 only.
        let one = ArchitectureId::from_ops([Conv1x1, None, None, Conv3x3, None, None]);
        assert_eq!(one.adjacent_conv_pairs(), 1);
        // 0→3 and 1→2 do not share a node.
        let none = ArchitectureId::from_ops([None, None, Conv3x3, Conv3x3, None, None]);
        assert_eq!(none.adjacent_conv_pairs(), 0);
    }
}
