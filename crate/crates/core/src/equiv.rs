//! Golden-vs-mutated miter simulation and scan-path integrity.
//!
//! A [`Miter`] materializes only the cone logic of both netlists: the golden
//! cone is traced back from the compare points to the shared boundary
//! inputs, and the mutated cone the same way, so everything outside is
//! excluded. Sequential cones are unrolled for a fixed number of cycles with
//! all registers starting at 0 and both sides fed identical input streams.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::miner::ConeOfInfluence;
use crate::netlist::{Driver, Netlist, Pin};
use crate::patterns::NamePatterns;
use crate::sim::{SimError, Simulator};

pub const DEFAULT_MAX_FREE_INPUTS: usize = 20;
pub const DEFAULT_UNROLL: u32 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquivError {
    #[error("compare point `{0}` missing from one of the netlists")]
    ComparePointMismatch(String),
    #[error("constrained net `{0}` not present in the mutated cone")]
    UnknownConstraint(String),
    #[error("cone is not closed: `{0}` is neither a boundary input nor driven by a cell")]
    OpenCone(String),
    #[error("{free} free inputs exceed the exhaustive bound {max}")]
    InputSpaceExceeded { free: usize, max: usize },
    #[error("at least one vector is required")]
    ZeroVectors,
    #[error("primary interface differs between golden and mutated netlists")]
    InterfaceMismatch,
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    pub net: String,
    pub value: bool,
}

impl Constraint {
    pub fn new(net: impl Into<String>, value: bool) -> Self {
        Constraint {
            net: net.into(),
            value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    EquivalentExhaustive,
    EquivalentSampled,
    Mismatch,
}

impl VerdictStatus {
    pub fn is_equivalent(self) -> bool {
        self != VerdictStatus::Mismatch
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Counterexample {
    Inputs {
        vector_index: u64,
        /// First cycle at which a compare point differs.
        cycle: u32,
        compare_point: String,
        /// Free-input values per cycle, up to and including `cycle`.
        assignment: Vec<BTreeMap<String, bool>>,
    },
    ScanEdge {
        /// `added` or `removed` relative to the golden netlist.
        change: String,
        edge: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: VerdictStatus,
    pub vectors_checked: u64,
    pub counterexample: Option<Counterexample>,
    pub seed: Option<u64>,
    pub unroll: u32,
    pub note: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Miter {
    pub golden: Netlist,
    pub mutated: Netlist,
    pub shared_inputs: Vec<String>,
    pub compare_points: Vec<String>,
    pub constraints: Vec<Constraint>,
    /// Cycles simulated per vector; 1 for purely combinational miters.
    pub unroll: u32,
    gsim: Simulator,
    msim: Simulator,
    free: Vec<String>,
}

/// Cells of `n` needed to compute `roots` from the nets in `stop`.
fn trace_cone(n: &Netlist, roots: &[String], stop: &BTreeSet<String>) -> Result<Netlist, EquivError> {
    let drivers = n.driver_map().map_err(|_| EquivError::OpenCone(n.name.clone()))?;
    let mut keep: HashSet<usize> = HashSet::new();
    let mut seen: HashSet<&str> = HashSet::new();
    let mut stack: Vec<&str> = roots.iter().map(String::as_str).collect();
    while let Some(net) = stack.pop() {
        if !seen.insert(net) || stop.contains(net) {
            continue;
        }
        match drivers.get(net) {
            Some(Driver::Cell(i)) => {
                keep.insert(*i);
                for (pin, x) in n.cells[*i].logic_inputs() {
                    debug_assert!(pin != Pin::Clk);
                    stack.push(x);
                }
            }
            _ => return Err(EquivError::OpenCone(net.to_string())),
        }
    }
    let mut idx: Vec<usize> = keep.into_iter().collect();
    idx.sort_unstable();
    Ok(Netlist {
        name: n.name.clone(),
        inputs: stop.iter().cloned().collect(),
        outputs: roots.to_vec(),
        cells: idx.into_iter().map(|i| n.cells[i].clone()).collect(),
    })
}

/// Builds the cone-restricted miter for `coi` between two netlists.
pub fn build_miter(
    golden: &Netlist,
    mutated: &Netlist,
    coi: &ConeOfInfluence,
    constraints: &[Constraint],
    unroll: u32,
) -> Result<Miter, EquivError> {
    let stop: BTreeSet<String> = coi.boundary_in.iter().cloned().collect();
    let g = trace_cone(golden, &coi.boundary_out, &stop)?;
    let mut roots = coi.boundary_out.clone();
    for c in constraints {
        if !stop.contains(&c.net) && !roots.contains(&c.net) && mutated.nets().contains(c.net.as_str()) {
            roots.push(c.net.clone());
        }
    }
    let mut m = trace_cone(mutated, &roots, &stop)?;
    m.outputs = coi.boundary_out.clone();
    Miter::new(g, m, constraints, unroll)
}

/// Miter over whole designs: primary inputs shared, primary outputs compared.
pub fn whole_design_miter(
    golden: &Netlist,
    mutated: &Netlist,
    constraints: &[Constraint],
    unroll: u32,
) -> Result<Miter, EquivError> {
    if golden.inputs != mutated.inputs || golden.outputs != mutated.outputs {
        return Err(EquivError::InterfaceMismatch);
    }
    Miter::new(golden.clone(), mutated.clone(), constraints, unroll)
}

impl Miter {
    fn new(
        golden: Netlist,
        mutated: Netlist,
        constraints: &[Constraint],
        unroll: u32,
    ) -> Result<Self, EquivError> {
        let gsim = Simulator::compile(&golden)?;
        let msim = Simulator::compile(&mutated)?;
        for cp in &golden.outputs {
            if msim.net(cp).is_none() {
                return Err(EquivError::ComparePointMismatch(cp.clone()));
            }
        }
        for c in constraints {
            if msim.net(&c.net).is_none() {
                return Err(EquivError::UnknownConstraint(c.net.clone()));
            }
        }
        let pinned: BTreeSet<&str> = constraints.iter().map(|c| c.net.as_str()).collect();
        let free: Vec<String> = golden
            .inputs
            .iter()
            .filter(|n| !pinned.contains(n.as_str()))
            .cloned()
            .collect();
        let sequential = gsim.register_count() + msim.register_count() > 0;
        Ok(Miter {
            shared_inputs: golden.inputs.clone(),
            compare_points: golden.outputs.clone(),
            constraints: constraints.to_vec(),
            unroll: if sequential { unroll.max(1) } else { 1 },
            golden,
            mutated,
            gsim,
            msim,
            free,
        })
    }

    pub fn free_inputs(&self) -> &[String] {
        &self.free
    }

    /// Size of the exhaustive space, `2^free`.
    pub fn input_space(&self) -> u128 {
        1u128 << self.free.len()
    }

    fn force_list(&self, sim: &Simulator) -> Vec<(u32, u64)> {
        self.constraints
            .iter()
            .filter_map(|c| sim.net(&c.net).map(|n| (n, if c.value { !0 } else { 0 })))
            .collect()
    }

    /// Simulates one word of 64 lanes. `words[c * free + f]` drives free
    /// input `f` in cycle `c`. Returns the lowest differing lane.
    fn check_word(&self, word: u64, words: &[u64], lanes: u64) -> Option<Counterexample> {
        let k = self.free.len();
        let (gs, ms) = (&self.gsim, &self.msim);
        let (gf, mf) = (self.force_list(gs), self.force_list(ms));
        let gfree: Vec<u32> = self.free.iter().map(|n| gs.net(n).unwrap()).collect();
        let mfree: Vec<Option<u32>> = self.free.iter().map(|n| ms.net(n)).collect();
        let gcp: Vec<u32> = self.compare_points.iter().map(|n| gs.net(n).unwrap()).collect();
        let mcp: Vec<u32> = self.compare_points.iter().map(|n| ms.net(n).unwrap()).collect();
        let (mut gv, mut mv) = (gs.new_values(), ms.new_values());
        let (mut gst, mut mst) = (gs.new_state(), ms.new_state());
        let mut diffs: Vec<Vec<u64>> = Vec::with_capacity(self.unroll as usize);
        let mut any = 0u64;
        for c in 0..self.unroll as usize {
            for f in 0..k {
                let w = words[c * k + f];
                gv[gfree[f] as usize] = w;
                if let Some(m) = mfree[f] {
                    mv[m as usize] = w;
                }
            }
            gs.eval(&mut gv, &gst, &gf);
            ms.eval(&mut mv, &mst, &mf);
            let d: Vec<u64> = gcp
                .iter()
                .zip(&mcp)
                .map(|(&g, &m)| (gv[g as usize] ^ mv[m as usize]) & lanes)
                .collect();
            any |= d.iter().fold(0, |a, &x| a | x);
            diffs.push(d);
            gs.clock(&gv, &mut gst);
            ms.clock(&mv, &mut mst);
        }
        if any == 0 {
            return None;
        }
        let lane = any.trailing_zeros();
        let bit = 1u64 << lane;
        let (cycle, cp) = diffs
            .iter()
            .enumerate()
            .find_map(|(c, d)| d.iter().position(|&x| x & bit != 0).map(|p| (c, p)))
            .unwrap();
        let assignment = (0..=cycle)
            .map(|c| {
                self.free
                    .iter()
                    .enumerate()
                    .map(|(f, n)| (n.clone(), words[c * k + f] & bit != 0))
                    .collect()
            })
            .collect();
        Some(Counterexample::Inputs {
            vector_index: word * 64 + lane as u64,
            cycle: cycle as u32,
            compare_point: self.compare_points[cp].clone(),
            assignment,
        })
    }

    /// Re-simulates a counterexample and reports whether the outputs differ.
    pub fn replay(&self, cex: &Counterexample) -> bool {
        let Counterexample::Inputs {
            cycle, assignment, ..
        } = cex
        else {
            return false;
        };
        let k = self.free.len();
        let mut words = vec![0u64; self.unroll as usize * k];
        for (c, a) in assignment.iter().enumerate() {
            for (f, n) in self.free.iter().enumerate() {
                if a.get(n).copied().unwrap_or(false) {
                    words[c * k + f] = 1;
                }
            }
        }
        matches!(self.check_word(0, &words, 1), Some(Counterexample::Inputs { cycle: c, .. }) if c == *cycle)
    }
}

const LANE_PATTERNS: [u64; 6] = [
    0xAAAA_AAAA_AAAA_AAAA,
    0xCCCC_CCCC_CCCC_CCCC,
    0xF0F0_F0F0_F0F0_F0F0,
    0xFF00_FF00_FF00_FF00,
    0xFFFF_0000_FFFF_0000,
    0xFFFF_FFFF_0000_0000,
];

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Per-cycle XOR mask; cycle 0 is unmasked. `i -> i ^ mask` is a bijection,
/// so every cycle still sees each assignment exactly once.
fn cycle_mask(cycle: usize, k: usize) -> u64 {
    if cycle == 0 || k == 0 {
        0
    } else {
        splitmix(cycle as u64) & ((1u64 << k) - 1)
    }
}

/// Simulates all `2^free` vectors; errors when `free > max_free_inputs`.
pub fn check_exhaustive(m: &Miter, max_free_inputs: usize) -> Result<Verdict, EquivError> {
    let k = m.free.len();
    if k > max_free_inputs || k > 40 {
        return Err(EquivError::InputSpaceExceeded {
            free: k,
            max: max_free_inputs,
        });
    }
    let total: u64 = 1u64 << k;
    let n_words = total.div_ceil(64);
    let lanes = if total >= 64 { !0 } else { (1u64 << total) - 1 };
    let u = m.unroll as usize;
    let masks: Vec<u64> = (0..u).map(|c| cycle_mask(c, k)).collect();
    let cex = (0..n_words).into_par_iter().find_map_first(|w| {
        let mut words = vec![0u64; u * k];
        for (c, &mask) in masks.iter().enumerate() {
            for f in 0..k {
                let base = if f < 6 {
                    LANE_PATTERNS[f]
                } else if (w >> (f - 6)) & 1 == 1 {
                    !0
                } else {
                    0
                };
                words[c * k + f] = if (mask >> f) & 1 == 1 { !base } else { base };
            }
        }
        m.check_word(w, &words, lanes)
    });
    Ok(finish(m, cex, total, None, VerdictStatus::EquivalentExhaustive))
}

/// Simulates `n_vectors` seeded uniform vectors.
pub fn check_random(m: &Miter, n_vectors: u64, seed: u64) -> Result<Verdict, EquivError> {
    if n_vectors == 0 {
        return Err(EquivError::ZeroVectors);
    }
    let k = m.free.len();
    let u = m.unroll as usize;
    let n_words = n_vectors.div_ceil(64);
    let cex = (0..n_words).into_par_iter().find_map_first(|w| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(w);
        let words: Vec<u64> = (0..u * k).map(|_| rng.next_u64()).collect();
        let remaining = n_vectors - w * 64;
        let lanes = if remaining >= 64 { !0 } else { (1u64 << remaining) - 1 };
        m.check_word(w, &words, lanes)
    });
    let mut v = finish(m, cex, n_vectors, Some(seed), VerdictStatus::EquivalentSampled);
    if v.status == VerdictStatus::EquivalentSampled {
        v.note = Some(format!(
            "sampled {n_vectors} of 2^{k} input vectors; equivalence not proven"
        ));
    }
    Ok(v)
}

fn finish(
    m: &Miter,
    cex: Option<Counterexample>,
    total: u64,
    seed: Option<u64>,
    ok: VerdictStatus,
) -> Verdict {
    match cex {
        None => Verdict {
            status: ok,
            vectors_checked: total,
            counterexample: None,
            seed,
            unroll: m.unroll,
            note: None,
        },
        Some(c) => {
            let checked = match &c {
                Counterexample::Inputs { vector_index, .. } => vector_index + 1,
                Counterexample::ScanEdge { .. } => 0,
            };
            Verdict {
                status: VerdictStatus::Mismatch,
                vectors_checked: checked,
                counterexample: Some(c),
                seed,
                unroll: m.unroll,
                note: None,
            }
        }
    }
}

/// Connections touching a net matched by `scan`, rendered for comparison.
fn scan_edges(n: &Netlist, scan: &NamePatterns) -> BTreeSet<String> {
    let mut out: BTreeSet<String> = n
        .connection_set()
        .into_iter()
        .filter(|(d, l, _, _)| scan.matches(d) || scan.matches(l))
        .map(|(d, l, kind, pin)| format!("{d} -> {l} ({}.{})", kind.name(), pin.name()))
        .collect();
    for net in n.nets() {
        if scan.matches(net) {
            let role = if n.inputs.iter().any(|x| x == net) { "input" } else { "net" };
            let po = if n.outputs.iter().any(|x| x == net) { "+output" } else { "" };
            out.insert(format!("{net} [{role}{po}]"));
        }
    }
    out
}

/// Compares the scan/test subgraphs (nets and incident edges, by name).
pub fn scan_integrity(golden: &Netlist, mutated: &Netlist, scan: &NamePatterns) -> Verdict {
    let g = scan_edges(golden, scan);
    let m = scan_edges(mutated, scan);
    let removed = g.difference(&m).next().map(|e| ("removed", e));
    let added = m.difference(&g).next().map(|e| ("added", e));
    let first = match (removed, added) {
        (Some(r), Some(a)) => Some(if r.1 <= a.1 { r } else { a }),
        (r, a) => r.or(a),
    };
    Verdict {
        status: if first.is_some() {
            VerdictStatus::Mismatch
        } else {
            VerdictStatus::EquivalentExhaustive
        },
        vectors_checked: 0,
        counterexample: first.map(|(change, edge)| Counterexample::ScanEdge {
            change: change.to_string(),
            edge: edge.clone(),
        }),
        seed: None,
        unroll: 0,
        note: Some(format!("{} scan/test connections compared", g.len())),
    }
}
