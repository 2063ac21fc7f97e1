//! SCOAP controllability/observability, rarity scores and percentile ranks.
//!
//! Controllability runs forward over the combinational topological order with
//! `CC0 = CC1 = 1` at primary and pseudo-primary inputs; observability runs
//! backward with `CO = 0` at primary and pseudo-primary outputs, taking the
//! minimum over fan-out branches. XOR/XNOR use the mixed-sum minima, MUX2 is
//! evaluated as `OR(AND(!s, a), AND(s, b))`. Values clamp at
//! [`SATURATION_CAP`]; a net with no path to any output stays at the cap.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{CutGraph, NodeAttrs, NodeId};
use crate::netlist::CellKind;

pub const SATURATION_CAP: u32 = i32::MAX as u32;
pub const DEFAULT_ALPHA: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoapError {
    #[error("alpha {0} outside [0.5, 1]")]
    AlphaOutOfRange(f64),
    #[error("histogram over an empty graph")]
    EmptyGraph,
    #[error("attribute table covers {attrs} nets but rarity table covers {rarity}")]
    SizeMismatch { attrs: usize, rarity: usize },
    #[error("bin counts must be positive")]
    ZeroBins,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoapScores {
    pub cc0: Vec<u32>,
    pub cc1: Vec<u32>,
    pub co: Vec<u32>,
    /// Set when any value was clamped at [`SATURATION_CAP`].
    pub saturated: bool,
}

struct Clamp {
    hit: bool,
}

impl Clamp {
    fn apply(&mut self, v: u64) -> u32 {
        if v >= SATURATION_CAP as u64 {
            self.hit = true;
            SATURATION_CAP
        } else {
            v as u32
        }
    }
}

#[derive(Clone, Copy)]
struct Cc {
    c0: u64,
    c1: u64,
}

/// Controllability of a cell output from its input controllabilities.
fn output_cc(kind: CellKind, ins: &[Cc]) -> Cc {
    let sum0 = || ins.iter().map(|x| x.c0).sum::<u64>();
    let sum1 = || ins.iter().map(|x| x.c1).sum::<u64>();
    let min0 = || ins.iter().map(|x| x.c0).min().unwrap();
    let min1 = || ins.iter().map(|x| x.c1).min().unwrap();
    match kind {
        CellKind::Buf => Cc {
            c0: ins[0].c0 + 1,
            c1: ins[0].c1 + 1,
        },
        CellKind::Inv => Cc {
            c0: ins[0].c1 + 1,
            c1: ins[0].c0 + 1,
        },
        CellKind::And => Cc {
            c0: min0() + 1,
            c1: sum1() + 1,
        },
        CellKind::Nand => Cc {
            c0: sum1() + 1,
            c1: min0() + 1,
        },
        CellKind::Or => Cc {
            c0: sum0() + 1,
            c1: min1() + 1,
        },
        CellKind::Nor => Cc {
            c0: min1() + 1,
            c1: sum0() + 1,
        },
        CellKind::Xor | CellKind::Xnor => {
            let (a, b) = (ins[0], ins[1]);
            let one = (a.c1 + b.c0).min(a.c0 + b.c1) + 1;
            let zero = (a.c0 + b.c0).min(a.c1 + b.c1) + 1;
            if kind == CellKind::Xor {
                Cc { c0: zero, c1: one }
            } else {
                Cc { c0: one, c1: zero }
            }
        }
        CellKind::Mux2 => {
            let m = Mux::new(ins[0], ins[1], ins[2]);
            m.y
        }
        CellKind::Dff => unreachable!("registers are cut"),
    }
}

/// MUX2 expanded into INV/AND/OR for testability purposes.
struct Mux {
    s: Cc,
    a: Cc,
    b: Cc,
    ns: Cc,
    t1: Cc,
    t2: Cc,
    y: Cc,
}

impl Mux {
    fn new(s: Cc, a: Cc, b: Cc) -> Self {
        let ns = output_cc(CellKind::Inv, &[s]);
        let t1 = output_cc(CellKind::And, &[ns, a]);
        let t2 = output_cc(CellKind::And, &[s, b]);
        let y = output_cc(CellKind::Or, &[t1, t2]);
        Mux {
            s,
            a,
            b,
            ns,
            t1,
            t2,
            y,
        }
    }

    /// Observability of input `pin_index` (0 = select, 1 = a, 2 = b).
    fn input_co(&self, pin_index: usize, co_y: u64) -> u64 {
        let co_t1 = co_y + self.t2.c0 + 1;
        let co_t2 = co_y + self.t1.c0 + 1;
        match pin_index {
            0 => {
                let via_ns = co_t1 + self.a.c1 + 1 + 1;
                let direct = co_t2 + self.b.c1 + 1;
                via_ns.min(direct)
            }
            1 => co_t1 + self.ns.c1 + 1,
            _ => co_t2 + self.s.c1 + 1,
        }
    }
}

/// Observability of input `pin_index` of a cell whose output has `co_y`.
fn input_co(kind: CellKind, ins: &[Cc], pin_index: usize, co_y: u64) -> u64 {
    let others = || ins.iter().enumerate().filter(move |(j, _)| *j != pin_index);
    match kind {
        CellKind::Inv | CellKind::Buf => co_y + 1,
        CellKind::And | CellKind::Nand => co_y + others().map(|(_, x)| x.c1).sum::<u64>() + 1,
        CellKind::Or | CellKind::Nor => co_y + others().map(|(_, x)| x.c0).sum::<u64>() + 1,
        CellKind::Xor | CellKind::Xnor => {
            let other = ins[1 - pin_index];
            co_y + other.c0.min(other.c1) + 1
        }
        CellKind::Mux2 => Mux::new(ins[0], ins[1], ins[2]).input_co(pin_index, co_y),
        CellKind::Dff => unreachable!("registers are cut"),
    }
}

/// Computes CC0/CC1/CO for every net of the combinational view.
pub fn compute_scoap(cut: &CutGraph) -> ScoapScores {
    let n = cut.node_count();
    let g = cut.graph();
    let mut clamp = Clamp { hit: false };
    let mut cc0 = vec![0u32; n];
    let mut cc1 = vec![0u32; n];
    let mut ins: Vec<Cc> = Vec::with_capacity(8);

    let gather = |v: NodeId, ins: &mut Vec<Cc>, cc0: &[u32], cc1: &[u32]| {
        ins.clear();
        for u in cut.comb_fanin(v) {
            ins.push(Cc {
                c0: cc0[u as usize] as u64,
                c1: cc1[u as usize] as u64,
            });
        }
    };

    for &v in cut.topo_order() {
        if cut.is_source(v) {
            cc0[v as usize] = 1;
            cc1[v as usize] = 1;
            continue;
        }
        let kind = g.driver_kind(v).expect("non-source net has a driver");
        gather(v, &mut ins, &cc0, &cc1);
        let out = output_cc(kind, &ins);
        cc0[v as usize] = clamp.apply(out.c0);
        cc1[v as usize] = clamp.apply(out.c1);
    }

    let mut co = vec![SATURATION_CAP; n];
    for &v in cut.topo_order().iter().rev() {
        if cut.is_sink(v) {
            co[v as usize] = 0;
            continue;
        }
        let mut best: Option<u64> = None;
        for e in cut.comb_fanout_edges(v) {
            let edge = g.edge(e);
            let w = edge.to;
            let kind = g.cell(edge.cell).kind;
            gather(w, &mut ins, &cc0, &cc1);
            let branch = input_co(kind, &ins, edge.pin_index as usize, co[w as usize] as u64);
            best = Some(best.map_or(branch, |b| b.min(branch)));
        }
        co[v as usize] = match best {
            Some(b) => clamp.apply(b),
            None => {
                clamp.hit = true;
                SATURATION_CAP
            }
        };
    }

    ScoapScores {
        cc0,
        cc1,
        co,
        saturated: clamp.hit,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RarityTable {
    pub alpha: f64,
    pub r: Vec<f64>,
    /// Percentile rank in [0, 100].
    pub pct: Vec<f64>,
}

impl RarityTable {
    /// Builds a table from raw scores, ranking them by percentile.
    pub fn from_scores(alpha: f64, r: Vec<f64>) -> Self {
        let pct = percentile_ranks(&r);
        RarityTable { alpha, r, pct }
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

/// `R(n) = max(CC0, CC1) + alpha * CO`, ranked by percentile.
pub fn rarity(scores: &ScoapScores, alpha: f64) -> Result<RarityTable, ScoapError> {
    if !(0.5..=1.0).contains(&alpha) {
        return Err(ScoapError::AlphaOutOfRange(alpha));
    }
    let r = (0..scores.cc0.len())
        .map(|i| rarity_score(scores.cc0[i], scores.cc1[i], scores.co[i], alpha))
        .collect();
    Ok(RarityTable::from_scores(alpha, r))
}

pub fn rarity_score(cc0: u32, cc1: u32, co: u32, alpha: f64) -> f64 {
    cc0.max(cc1) as f64 + alpha * co as f64
}

/// Percentile rank `rank / (N - 1) * 100` with zero-based average ranks for
/// ties. A single value sits at the midpoint, 50.
pub fn percentile_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![50.0];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut pct = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0;
        for &idx in &order[i..=j] {
            pct[idx] = avg_rank / (n - 1) as f64 * 100.0;
        }
        i = j + 1;
    }
    pct
}

/// Writes `net,cc0,cc1,co,r,pct,depth` rows in node order.
pub fn write_scoap_csv<W: Write>(
    cut: &CutGraph,
    scores: &ScoapScores,
    table: &RarityTable,
    out: W,
) -> io::Result<()> {
    let attrs = cut
        .attrs()
        .ok_or_else(|| io::Error::other("graph is not annotated"))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["net", "cc0", "cc1", "co", "r", "pct", "depth"])?;
    for i in 0..cut.node_count() {
        w.write_record([
            cut.name(i as NodeId).to_string(),
            scores.cc0[i].to_string(),
            scores.cc1[i].to_string(),
            scores.co[i].to_string(),
            table.r[i].to_string(),
            format!("{:.4}", table.pct[i]),
            attrs[i].depth.to_string(),
        ])?;
    }
    w.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeatmapBins {
    pub depth_bins: usize,
    pub rarity_bins: usize,
}

impl Default for HeatmapBins {
    fn default() -> Self {
        HeatmapBins {
            depth_bins: 16,
            rarity_bins: 20,
        }
    }
}

/// Depth-vs-rarity-percentile counts.
///
/// Depth bins split `[0, max_depth + 1)` evenly; rarity bins split the
/// percentile range `[0, 100]` evenly with 100 in the last bin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Heatmap {
    pub max_depth: u32,
    /// `counts[depth_bin][rarity_bin]`.
    pub counts: Vec<Vec<u64>>,
}

impl Heatmap {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["depth_bin", "rarity_bin", "count"])?;
        for (d, row) in self.counts.iter().enumerate() {
            for (r, c) in row.iter().enumerate() {
                w.write_record([d.to_string(), r.to_string(), c.to_string()])?;
            }
        }
        w.flush()
    }
}

pub fn depth_bin(depth: u32, max_depth: u32, bins: usize) -> usize {
    ((depth as u64 * bins as u64) / (max_depth as u64 + 1)) as usize
}

pub fn rarity_bin(pct: f64, bins: usize) -> usize {
    ((pct / 100.0 * bins as f64).floor() as usize).min(bins - 1)
}

pub fn depth_rarity_histogram(
    attrs: &[NodeAttrs],
    table: &RarityTable,
    bins: HeatmapBins,
) -> Result<Heatmap, ScoapError> {
    if attrs.is_empty() {
        return Err(ScoapError::EmptyGraph);
    }
    if attrs.len() != table.len() {
        return Err(ScoapError::SizeMismatch {
            attrs: attrs.len(),
            rarity: table.len(),
        });
    }
    if bins.depth_bins == 0 || bins.rarity_bins == 0 {
        return Err(ScoapError::ZeroBins);
    }
    let max_depth = attrs.iter().map(|a| a.depth).max().unwrap();
    let mut counts = vec![vec![0u64; bins.rarity_bins]; bins.depth_bins];
    for (a, &p) in attrs.iter().zip(&table.pct) {
        let d = depth_bin(a.depth, max_depth, bins.depth_bins);
        let r = rarity_bin(p, bins.rarity_bins);
        counts[d][r] += 1;
    }
    Ok(Heatmap { max_depth, counts })
}
