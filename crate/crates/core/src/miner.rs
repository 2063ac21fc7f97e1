//! Rare-net candidate selection and bounded cone-of-influence extraction.

use std::collections::{BTreeSet, HashMap};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{CutGraph, NodeId};
use crate::scoap::RarityTable;

pub const DEFAULT_THRESHOLD_PCT: f64 = 99.0;
pub const DEFAULT_MAX_NODES: usize = 512;
pub const DEFAULT_MAX_DEPTH: u32 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MinerError {
    #[error("threshold percentile {0} outside [0, 100)")]
    ThresholdOutOfRange(f64),
    #[error("unknown anchor net `{0}`")]
    UnknownAnchor(String),
    #[error("cone bounds must be positive")]
    ZeroBounds,
    #[error("graph is not annotated")]
    NotAnnotated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub min_overlap: f64,
    pub min_disjointness: f64,
    /// Keeps at most `max(1, floor(fraction * N))` candidates. `None` disables the cap.
    pub max_candidate_fraction: Option<f64>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_overlap: 0.25,
            min_disjointness: 0.5,
            max_candidate_fraction: Some(0.001),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Filter {
    ReconvergentFanin,
    DisjointBranching,
}

impl Filter {
    pub fn name(self) -> &'static str {
        match self {
            Filter::ReconvergentFanin => "reconvergent_fanin",
            Filter::DisjointBranching => "disjoint_branching",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateNet {
    pub net: String,
    pub pct: f64,
    pub reasons: Vec<Filter>,
}

/// Candidates at or above `threshold_pct` passing at least one structural filter.
pub fn select_rare(
    cut: &CutGraph,
    rt: &RarityTable,
    threshold_pct: f64,
    filters: &FilterConfig,
) -> Result<Vec<CandidateNet>, MinerError> {
    select_rare_excluding(cut, rt, threshold_pct, filters, |_| false)
}

/// [`select_rare`] skipping every node for which `excluded` holds.
pub fn select_rare_excluding(
    cut: &CutGraph,
    rt: &RarityTable,
    threshold_pct: f64,
    filters: &FilterConfig,
    excluded: impl Fn(NodeId) -> bool,
) -> Result<Vec<CandidateNet>, MinerError> {
    if !(0.0..100.0).contains(&threshold_pct) {
        return Err(MinerError::ThresholdOutOfRange(threshold_pct));
    }
    let attrs = cut.attrs().ok_or(MinerError::NotAnnotated)?;
    let mut out = Vec::new();
    for v in cut.graph().nodes() {
        let i = v as usize;
        if rt.pct[i] < threshold_pct || excluded(v) {
            continue;
        }
        let sig = attrs[i].reconv;
        let mut reasons = Vec::new();
        if sig.overlap_max >= filters.min_overlap && sig.overlap_max > 0.0 {
            reasons.push(Filter::ReconvergentFanin);
        }
        if sig.branch_disjointness >= filters.min_disjointness && sig.branch_disjointness > 0.0 {
            reasons.push(Filter::DisjointBranching);
        }
        if !reasons.is_empty() {
            out.push(CandidateNet {
                net: cut.name(v).to_string(),
                pct: rt.pct[i],
                reasons,
            });
        }
    }
    out.sort_by(|a, b| b.pct.total_cmp(&a.pct).then_with(|| a.net.cmp(&b.net)));
    if let Some(f) = filters.max_candidate_fraction {
        let cap = ((f * cut.node_count() as f64).floor() as usize).max(1);
        out.truncate(cap);
    }
    Ok(out)
}

pub fn write_candidates_csv<W: Write>(cands: &[CandidateNet], out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["net", "pct", "filters_passed"])?;
    for c in cands {
        let reasons: Vec<&str> = c.reasons.iter().map(|r| r.name()).collect();
        w.write_record([c.net.clone(), format!("{:.4}", c.pct), reasons.join("|")])?;
    }
    w.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConeBounds {
    pub max_nodes: usize,
    pub max_depth: u32,
}

impl Default for ConeBounds {
    fn default() -> Self {
        ConeBounds {
            max_nodes: DEFAULT_MAX_NODES,
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConeEdge {
    pub from: String,
    pub to: String,
    pub pin_index: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconvSummary {
    pub overlap_max: f64,
    pub overlap_mean: f64,
    pub disjointness_mean: f64,
    /// Cone members whose fan-in overlap passes the default filter.
    pub reconvergent_nodes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RarityStats {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeMeta {
    pub size: usize,
    /// Anchor distance to the nearest primary or register interface.
    pub depth_to_interface: u32,
    /// Anchor distance to the nearest register, if any is reachable.
    pub depth_to_register: Option<u32>,
    pub reconv: ReconvSummary,
    pub rarity: RarityStats,
    pub anchor_pct: f64,
    pub mean_fanin: f64,
    pub mean_fanout: f64,
    pub max_fanout: u32,
    pub truncated: bool,
}

/// An isolated copy of the cone around `anchor`, keyed by net name.
///
/// `internal` nets are those whose driver reads only cone members; every
/// other member is a `boundary_in` net. `edges` are the in-edges of internal
/// nets. `boundary_out` are internal nets observed outside the internal set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeOfInfluence {
    pub anchor: String,
    pub nodes: Vec<String>,
    pub internal: Vec<String>,
    pub edges: Vec<ConeEdge>,
    pub boundary_in: Vec<String>,
    pub boundary_out: Vec<String>,
    pub meta: ConeMeta,
}

impl ConeOfInfluence {
    pub fn is_internal(&self, net: &str) -> bool {
        self.internal.binary_search_by(|n| n.as_str().cmp(net)).is_ok()
    }

    pub fn contains(&self, net: &str) -> bool {
        self.nodes.binary_search_by(|n| n.as_str().cmp(net)).is_ok()
    }

    /// Internal nets in an order where every cone edge goes forward.
    pub fn topo_internal(&self) -> Vec<String> {
        let mut preds: HashMap<&str, Vec<&str>> = HashMap::new();
        for e in &self.edges {
            preds.entry(e.to.as_str()).or_default().push(e.from.as_str());
        }
        let mut done: BTreeSet<&str> = self.boundary_in.iter().map(String::as_str).collect();
        let mut order = Vec::new();
        let mut pending: Vec<&str> = self.internal.iter().map(String::as_str).collect();
        while !pending.is_empty() {
            let before = pending.len();
            pending.retain(|&v| {
                if preds.get(v).is_none_or(|p| p.iter().all(|u| done.contains(u))) {
                    order.push(v.to_string());
                    done.insert(v);
                    false
                } else {
                    true
                }
            });
            assert!(pending.len() < before, "cone edges are acyclic");
        }
        order
    }

    /// Cone members from which `net` is reachable over cone edges (excluding `net`).
    pub fn ancestors(&self, net: &str) -> BTreeSet<String> {
        let mut preds: HashMap<&str, Vec<&str>> = HashMap::new();
        for e in &self.edges {
            preds.entry(e.to.as_str()).or_default().push(e.from.as_str());
        }
        let mut seen = BTreeSet::new();
        let mut stack = vec![net];
        while let Some(v) = stack.pop() {
            for &u in preds.get(v).into_iter().flatten() {
                if seen.insert(u.to_string()) {
                    stack.push(u);
                }
            }
        }
        seen
    }
}

/// Extracts the bounded cone around `anchor`.
///
/// Levels alternate backward (fan-in) and forward (fan-out) expansion up to
/// `max_depth`. Backward expansion stops at primary and register inputs;
/// forward expansion stops at primary and register outputs and brings each
/// new net's side inputs along, so every forward net is internal. A net is
/// only added when it and its side inputs fit in `max_nodes`.
pub fn extract_coi(
    cut: &CutGraph,
    rt: &RarityTable,
    anchor: &str,
    bounds: ConeBounds,
) -> Result<ConeOfInfluence, MinerError> {
    if bounds.max_nodes == 0 || bounds.max_depth == 0 {
        return Err(MinerError::ZeroBounds);
    }
    let attrs = cut.attrs().ok_or(MinerError::NotAnnotated)?;
    let a = cut
        .node(anchor)
        .ok_or_else(|| MinerError::UnknownAnchor(anchor.to_string()))?;

    let mut member: HashMap<NodeId, u32> = HashMap::new();
    member.insert(a, 0);
    let mut order = vec![a];
    let mut truncated = false;
    let mut back_frontier = vec![a];
    let mut fwd_frontier = vec![a];

    for level in 1..=bounds.max_depth {
        let mut next = Vec::new();
        for &u in &back_frontier {
            for w in cut.comb_fanin(u) {
                if member.contains_key(&w) {
                    continue;
                }
                if order.len() >= bounds.max_nodes {
                    truncated = true;
                    continue;
                }
                member.insert(w, level);
                order.push(w);
                next.push(w);
            }
        }
        back_frontier = next;

        let mut next = Vec::new();
        for &u in &fwd_frontier {
            if cut.is_sink(u) {
                continue;
            }
            for w in cut.comb_fanout(u) {
                if member.contains_key(&w) {
                    continue;
                }
                let mut side: Vec<NodeId> = cut
                    .comb_fanin(w)
                    .filter(|x| !member.contains_key(x))
                    .collect();
                side.sort_unstable();
                side.dedup();
                if order.len() + 1 + side.len() > bounds.max_nodes {
                    truncated = true;
                    continue;
                }
                member.insert(w, level);
                order.push(w);
                next.push(w);
                for x in side {
                    member.insert(x, level);
                    order.push(x);
                }
            }
        }
        fwd_frontier = next;
        if back_frontier.is_empty() && fwd_frontier.is_empty() {
            break;
        }
    }
    let g = cut.graph();
    let is_internal = |v: NodeId| -> bool {
        !cut.is_source(v) && cut.comb_fanin(v).all(|u| member.contains_key(&u))
    };
    let mut internal_ids: Vec<NodeId> = order.iter().copied().filter(|&v| is_internal(v)).collect();
    internal_ids.sort_unstable();
    let internal_set: BTreeSet<NodeId> = internal_ids.iter().copied().collect();

    let mut edges = Vec::new();
    for &v in &internal_ids {
        for e in cut.comb_fanin_edges(v) {
            let edge = g.edge(e);
            edges.push(ConeEdge {
                from: g.name(edge.from).to_string(),
                to: g.name(v).to_string(),
                pin_index: edge.pin_index,
            });
        }
    }
    edges.sort();

    let names = |ids: &mut dyn Iterator<Item = NodeId>| -> Vec<String> {
        let mut v: Vec<String> = ids.map(|i| g.name(i).to_string()).collect();
        v.sort();
        v
    };
    let boundary_out = names(&mut internal_ids.iter().copied().filter(|&v| {
        cut.is_sink(v) || g.fanout(v).any(|w| !internal_set.contains(&w))
    }));
    let boundary_in = names(&mut order.iter().copied().filter(|v| !internal_set.contains(v)));

    let meta = cone_meta(attrs, rt, a, &order, truncated);
    Ok(ConeOfInfluence {
        anchor: anchor.to_string(),
        nodes: names(&mut order.iter().copied()),
        internal: names(&mut internal_ids.iter().copied()),
        edges,
        boundary_in,
        boundary_out,
        meta,
    })
}

fn cone_meta(
    attrs: &[crate::graph::NodeAttrs],
    rt: &RarityTable,
    anchor: NodeId,
    members: &[NodeId],
    truncated: bool,
) -> ConeMeta {
    let n = members.len() as f64;
    let mut pcts: Vec<f64> = members.iter().map(|&v| rt.pct[v as usize]).collect();
    pcts.sort_by(f64::total_cmp);
    let median = if pcts.len() % 2 == 1 {
        pcts[pcts.len() / 2]
    } else {
        (pcts[pcts.len() / 2 - 1] + pcts[pcts.len() / 2]) / 2.0
    };
    let mut reconv = ReconvSummary {
        overlap_max: 0.0,
        overlap_mean: 0.0,
        disjointness_mean: 0.0,
        reconvergent_nodes: 0,
    };
    let (mut fanin, mut fanout, mut max_fanout) = (0.0, 0.0, 0u32);
    for &v in members {
        let at = &attrs[v as usize];
        reconv.overlap_max = reconv.overlap_max.max(at.reconv.overlap_max);
        reconv.overlap_mean += at.reconv.overlap_max;
        reconv.disjointness_mean += at.reconv.branch_disjointness;
        if at.reconv.overlap_max >= FilterConfig::default().min_overlap {
            reconv.reconvergent_nodes += 1;
        }
        fanin += at.fanin as f64;
        fanout += at.fanout as f64;
        max_fanout = max_fanout.max(at.fanout);
    }
    reconv.overlap_mean /= n;
    reconv.disjointness_mean /= n;
    let at = &attrs[anchor as usize];
    let depth_to_interface = match at.dist_to_po {
        Some(p) => p.min(at.depth),
        None => at.depth,
    };
    ConeMeta {
        size: members.len(),
        depth_to_interface,
        depth_to_register: at.dist_to_ff,
        reconv,
        rarity: RarityStats {
            min: pcts[0],
            median,
            max: *pcts.last().unwrap(),
        },
        anchor_pct: rt.pct[anchor as usize],
        mean_fanin: fanin / n,
        mean_fanout: fanout / n,
        max_fanout,
        truncated,
    }
}
