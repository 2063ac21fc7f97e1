//! Structural node attributes over the combinational view.
//!
//! Reconvergence is summarized per node from bounded cones:
//!
//! * the *input cone* of an in-edge `u -> v` is the set of strict ancestors
//!   of `u` within `k` levels. Two in-edges from the same net overlap fully.
//!   `cone_overlap` is the Jaccard index over every in-edge pair, reported as
//!   (max, mean).
//! * the *forward cone* of a fan-out branch `v -> w` is `w` plus its
//!   descendants within `k - 1` levels. `branch_disjointness` is the fraction
//!   of branch pairs whose forward cones do not intersect.
//!
//! Cones stop growing at [`CONE_CAP`] nodes and at most [`BRANCH_CAP`]
//! branches per node are compared, which keeps annotation linear on
//! high-fan-out nets.

use std::collections::{HashSet, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CutGraph, NodeId};
use crate::netlist::CellKind;

pub const DEFAULT_RECONV_RADIUS: u32 = 4;
pub const CONE_CAP: usize = 256;
pub const BRANCH_CAP: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateClass {
    Input,
    Cell(CellKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconvSignature {
    pub k: u32,
    pub overlap_max: f64,
    pub overlap_mean: f64,
    pub branch_disjointness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeAttrs {
    pub gate_class: GateClass,
    pub fanin: u32,
    pub fanout: u32,
    /// Longest combinational path from any (pseudo) primary input.
    pub depth: u32,
    /// Shortest combinational path to any (pseudo) primary output.
    pub dist_to_po: Option<u32>,
    /// Shortest distance to a register boundary, either direction.
    pub dist_to_ff: Option<u32>,
    pub reconv: ReconvSignature,
}

/// Populates [`NodeAttrs`] for every node using reconvergence radius `k`.
pub fn annotate(mut cut: CutGraph, k: u32) -> CutGraph {
    let k = k.max(1);
    let n = cut.node_count();
    let g = cut.graph();

    let mut depth = vec![0u32; n];
    let mut from_ff: Vec<Option<u32>> = vec![None; n];
    for &v in cut.topo_order() {
        if cut.is_pseudo_pi(v) {
            from_ff[v as usize] = Some(0);
            continue;
        }
        let mut d = 0;
        let mut f: Option<u32> = None;
        for u in cut.comb_fanin(v) {
            d = d.max(depth[u as usize] + 1);
            if let Some(x) = from_ff[u as usize] {
                f = Some(f.map_or(x + 1, |y: u32| y.min(x + 1)));
            }
        }
        depth[v as usize] = d;
        from_ff[v as usize] = f;
    }

    let mut to_po: Vec<Option<u32>> = vec![None; n];
    let mut to_ff: Vec<Option<u32>> = vec![None; n];
    for &v in cut.topo_order().iter().rev() {
        let mut p = if cut.is_sink(v) { Some(0) } else { None };
        let mut f = if cut.is_pseudo_po(v) { Some(0) } else { None };
        for w in cut.comb_fanout(v) {
            if let Some(x) = to_po[w as usize] {
                p = Some(p.map_or(x + 1, |y: u32| y.min(x + 1)));
            }
            if let Some(x) = to_ff[w as usize] {
                f = Some(f.map_or(x + 1, |y: u32| y.min(x + 1)));
            }
        }
        to_po[v as usize] = p;
        to_ff[v as usize] = f;
    }

    let reconv: Vec<ReconvSignature> = (0..n as NodeId)
        .into_par_iter()
        .map(|v| reconv_signature(&cut, v, k))
        .collect();

    let attrs = (0..n)
        .map(|i| {
            let v = i as NodeId;
            NodeAttrs {
                gate_class: match g.driver_kind(v) {
                    None => GateClass::Input,
                    Some(kind) => GateClass::Cell(kind),
                },
                fanin: g.fanin_edges(v).len() as u32,
                fanout: g.fanout_edges(v).len() as u32,
                depth: depth[i],
                dist_to_po: to_po[i],
                dist_to_ff: match (from_ff[i], to_ff[i]) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                },
                reconv: reconv[i],
            }
        })
        .collect();
    cut.attrs = Some(attrs);
    cut
}

fn reconv_signature(cut: &CutGraph, v: NodeId, k: u32) -> ReconvSignature {
    let sources: Vec<NodeId> = cut.comb_fanin(v).collect();
    let (overlap_max, overlap_mean) = if sources.len() < 2 {
        (0.0, 0.0)
    } else {
        let cones: Vec<Vec<NodeId>> = sources
            .iter()
            .map(|&u| bounded_cone(cut, u, k, false))
            .collect();
        let mut max: f64 = 0.0;
        let mut sum = 0.0;
        let mut pairs = 0usize;
        for i in 0..sources.len() {
            for j in i + 1..sources.len() {
                let o = if sources[i] == sources[j] {
                    1.0
                } else {
                    jaccard(&cones[i], &cones[j])
                };
                max = max.max(o);
                sum += o;
                pairs += 1;
            }
        }
        (max, sum / pairs as f64)
    };

    let sinks: Vec<NodeId> = cut.comb_fanout(v).take(BRANCH_CAP).collect();
    let branch_disjointness = if sinks.len() < 2 {
        0.0
    } else {
        let cones: Vec<Vec<NodeId>> = sinks
            .iter()
            .map(|&w| {
                let mut c = bounded_cone(cut, w, k - 1, true);
                c.push(w);
                c.sort_unstable();
                c.dedup();
                c
            })
            .collect();
        let mut disjoint = 0usize;
        let mut pairs = 0usize;
        for i in 0..sinks.len() {
            for j in i + 1..sinks.len() {
                if sinks[i] != sinks[j] && intersection_len(&cones[i], &cones[j]) == 0 {
                    disjoint += 1;
                }
                pairs += 1;
            }
        }
        disjoint as f64 / pairs as f64
    };

    ReconvSignature {
        k,
        overlap_max,
        overlap_mean,
        branch_disjointness,
    }
}

/// Strict ancestors (or descendants) of `start` within `levels`, sorted.
fn bounded_cone(cut: &CutGraph, start: NodeId, levels: u32, forward: bool) -> Vec<NodeId> {
    let mut seen: HashSet<NodeId> = HashSet::new();
    let mut queue = VecDeque::new();
    queue.push_back((start, 0u32));
    seen.insert(start);
    let mut cone = Vec::new();
    'bfs: while let Some((u, d)) = queue.pop_front() {
        if d == levels {
            continue;
        }
        let next: Vec<NodeId> = if forward {
            cut.comb_fanout(u).collect()
        } else {
            cut.comb_fanin(u).collect()
        };
        for w in next {
            if seen.insert(w) {
                cone.push(w);
                if cone.len() >= CONE_CAP {
                    break 'bfs;
                }
                queue.push_back((w, d + 1));
            }
        }
    }
    cone.sort_unstable();
    cone
}

fn intersection_len(a: &[NodeId], b: &[NodeId]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

fn jaccard(a: &[NodeId], b: &[NodeId]) -> f64 {
    let inter = intersection_len(a, b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}
