//! Trigger/payload template descriptors and their compilation into netlist
//! rewrites.
//!
//! A compiled rewrite renames the victim driver's output to a fresh net
//! `orig` and drives the victim net from `MUX2(S = trig, A = orig, B = payload)`.
//! Every payload branch evaluates to `orig` whenever `trig = 1`, so the splice
//! is a wire for both trigger values; the trigger logic only adds structure.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::miner::ConeOfInfluence;
use crate::netlist::{Cell, CellKind};
use crate::patterns::NamePatterns;

pub const SCHEMA_VERSION: u32 = 1;
/// Every net and instance created by a rewrite starts with this prefix.
pub const RESERVED_PREFIX: &str = "ht__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TriggerFamily {
    SequenceFSM,
    HammingProximity,
    WatchdogTimer,
    GlitchDetector,
    HashCombo,
}

impl TriggerFamily {
    pub const ALL: [TriggerFamily; 5] = [
        TriggerFamily::SequenceFSM,
        TriggerFamily::HammingProximity,
        TriggerFamily::WatchdogTimer,
        TriggerFamily::GlitchDetector,
        TriggerFamily::HashCombo,
    ];

    pub fn is_sequential(self) -> bool {
        matches!(self, TriggerFamily::SequenceFSM | TriggerFamily::WatchdogTimer)
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&f| f == self).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PayloadFamily {
    PassThroughMux,
    ShadowPath,
    InertToggler,
    GuardedOffset,
    GuardedBitflip,
}

impl PayloadFamily {
    pub const ALL: [PayloadFamily; 5] = [
        PayloadFamily::PassThroughMux,
        PayloadFamily::ShadowPath,
        PayloadFamily::InertToggler,
        PayloadFamily::GuardedOffset,
        PayloadFamily::GuardedBitflip,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&f| f == self).unwrap()
    }

    /// Smallest `local_depth` the payload branch fits in.
    pub fn min_local_depth(self) -> u8 {
        match self {
            PayloadFamily::GuardedOffset => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateParams {
    pub tap_count: u8,
    pub local_depth: u8,
    /// Added loads allowed on each tapped net.
    pub fanout_growth_budget: u8,
    /// Largest cone fan-in overlap the template accepts.
    pub reconv_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateDescriptor {
    pub schema_version: u32,
    pub id: String,
    pub trigger_family: TriggerFamily,
    pub payload_family: PayloadFamily,
    pub params: TemplateParams,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn violation(field: &str, message: impl Into<String>) -> Violation {
    Violation {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("{path}: unsupported schema version {found}")]
    SchemaVersion { path: String, found: u32 },
    #[error("invalid descriptors: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("cone too small: {need} taps needed, at most {have} available")]
    ConeTooSmall { need: usize, have: usize },
    #[error("no splice point: {0}")]
    NoSplicePoint(String),
    #[error("sequential trigger needs a clock but none is available")]
    NoClock,
    #[error("cone overlap {overlap} exceeds reconvergence tolerance {tolerance}")]
    ReconvTolerance { overlap: f64, tolerance: f64 },
    #[error("rewrite tag `{0}` is not a plain identifier")]
    BadTag(String),
}

pub fn validate_descriptor(d: &TemplateDescriptor) -> Vec<Violation> {
    let mut v = Vec::new();
    let p = &d.params;
    if d.schema_version != SCHEMA_VERSION {
        v.push(violation(
            "schema_version",
            format!("expected {SCHEMA_VERSION}, found {}", d.schema_version),
        ));
    }
    if d.id.is_empty() {
        v.push(violation("id", "empty"));
    }
    if !(2..=8).contains(&p.tap_count) {
        v.push(violation("tap_count", format!("{} outside 2..=8", p.tap_count)));
    }
    if !(1..=6).contains(&p.local_depth) {
        v.push(violation("local_depth", format!("{} outside 1..=6", p.local_depth)));
    } else if p.local_depth < d.payload_family.min_local_depth() {
        v.push(violation(
            "local_depth",
            format!(
                "{:?} needs at least {}",
                d.payload_family,
                d.payload_family.min_local_depth()
            ),
        ));
    }
    if !(1..=4).contains(&p.fanout_growth_budget) {
        v.push(violation(
            "fanout_growth_budget",
            format!("{} outside 1..=4", p.fanout_growth_budget),
        ));
    }
    if !(0.0..=1.0).contains(&p.reconv_tolerance) {
        v.push(violation(
            "reconv_tolerance",
            format!("{} outside [0, 1]", p.reconv_tolerance),
        ));
    }
    v
}

/// Per-descriptor checks plus id uniqueness across the batch.
pub fn validate_library(ds: &[TemplateDescriptor]) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for d in ds {
        for mut v in validate_descriptor(d) {
            v.message = format!("[{}] {}", d.id, v.message);
            out.push(v);
        }
        if !seen.insert(d.id.as_str()) {
            out.push(violation("id", format!("duplicate id `{}`", d.id)));
        }
    }
    out
}

const BUILTIN: [(&str, &str); 12] = [
    ("seqfsm-mux-3", include_str!("../templates/seqfsm-mux-3.json")),
    ("seqfsm-shadow-4", include_str!("../templates/seqfsm-shadow-4.json")),
    ("seqfsm-toggler-2", include_str!("../templates/seqfsm-toggler-2.json")),
    ("hamming-mux-4", include_str!("../templates/hamming-mux-4.json")),
    ("hamming-bitflip-6", include_str!("../templates/hamming-bitflip-6.json")),
    ("hamming-offset-8", include_str!("../templates/hamming-offset-8.json")),
    ("watchdog-toggler-3", include_str!("../templates/watchdog-toggler-3.json")),
    ("watchdog-offset-4", include_str!("../templates/watchdog-offset-4.json")),
    ("glitch-shadow-3", include_str!("../templates/glitch-shadow-3.json")),
    ("glitch-bitflip-4", include_str!("../templates/glitch-bitflip-4.json")),
    ("hash-offset-6", include_str!("../templates/hash-offset-6.json")),
    ("hash-toggler-8", include_str!("../templates/hash-toggler-8.json")),
];

/// The shipped descriptor set, in a fixed order.
pub fn builtin_library() -> Vec<TemplateDescriptor> {
    BUILTIN
        .iter()
        .map(|(name, text)| parse_descriptor(name, text).expect("builtin descriptor is valid"))
        .collect()
}

pub fn parse_descriptor(path: &str, text: &str) -> Result<TemplateDescriptor, TemplateError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|source| TemplateError::Json {
        path: path.to_string(),
        source,
    })?;
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .unwrap_or(0) as u32;
    if found != SCHEMA_VERSION {
        return Err(TemplateError::SchemaVersion {
            path: path.to_string(),
            found,
        });
    }
    let d: TemplateDescriptor = serde_json::from_value(value).map_err(|source| TemplateError::Json {
        path: path.to_string(),
        source,
    })?;
    let v = validate_descriptor(&d);
    if !v.is_empty() {
        return Err(TemplateError::Invalid(v));
    }
    Ok(d)
}

/// Loads every `*.json` descriptor in `dir`, sorted by file name.
pub fn load_library(dir: &Path) -> Result<Vec<TemplateDescriptor>, TemplateError> {
    let io = |source| TemplateError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(io)?
        .collect::<Result<Vec<_>, _>>()
        .map_err(io)?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut out = Vec::with_capacity(files.len());
    for f in files {
        let path = f.display().to_string();
        let text = std::fs::read_to_string(&f).map_err(|source| TemplateError::Io {
            path: path.clone(),
            source,
        })?;
        out.push(parse_descriptor(&path, &text)?);
    }
    let v = validate_library(&out);
    if !v.is_empty() {
        return Err(TemplateError::Invalid(v));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClockSource {
    /// No clock reachable: sequential families are rejected.
    None,
    /// Registers without a CLK pin, sharing the design's implicit clock.
    Implicit,
    Net(String),
}

#[derive(Debug, Clone)]
pub struct CompileContext {
    /// Distinguishes rewrites applied to the same design; `[A-Za-z0-9_]+`.
    pub tag: String,
    pub clock: ClockSource,
    /// Nets the rewrite must never read or drive.
    pub forbidden: NamePatterns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRewrite {
    pub template_id: String,
    pub seed: u64,
    pub tag: String,
    pub new_cells: Vec<Cell>,
    /// Every net created by the rewrite, including `orig_net`.
    pub new_nets: Vec<String>,
    /// Pre-existing cone net now driven by the splice MUX2.
    pub victim_net: String,
    /// New name of the victim driver's output.
    pub orig_net: String,
    /// Inactive at 0.
    pub trigger_net: String,
    /// MUX2 B-input.
    pub payload_net: String,
    pub splice_instance: String,
    pub taps: Vec<String>,
    /// Match patterns over the taps (or folded taps), MSB-first per tap order.
    pub secrets: Vec<String>,
    pub trigger_nets: Vec<String>,
    pub payload_nets: Vec<String>,
    /// Longest combinational path from a tap or register to `trigger_net`.
    pub trigger_depth: u32,
    /// Combinational depth added between `orig_net` and `victim_net`.
    pub victim_path_depth: u32,
    pub inactive_semantics: String,
}

impl GraphRewrite {
    pub fn gate_delta(&self) -> usize {
        self.new_cells.len()
    }

    /// Added loads per pre-existing net read by the rewrite.
    pub fn added_loads(&self) -> HashMap<&str, usize> {
        let created: BTreeSet<&str> = self.new_nets.iter().map(String::as_str).collect();
        let mut loads = HashMap::new();
        for c in &self.new_cells {
            for n in c.input_nets() {
                if !created.contains(n) {
                    *loads.entry(n).or_insert(0) += 1;
                }
            }
        }
        loads
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Side {
    Trigger,
    Payload,
}

struct Builder<'a> {
    tag: &'a str,
    cells: Vec<Cell>,
    depth: HashMap<String, u32>,
    trigger_nets: Vec<String>,
    payload_nets: Vec<String>,
    next: usize,
    clock: Option<String>,
}

impl<'a> Builder<'a> {
    fn fresh(&mut self, role: &str) -> String {
        self.next += 1;
        format!("{RESERVED_PREFIX}{}_{role}{}", self.tag, self.next)
    }

    fn depth_of(&self, net: &str) -> u32 {
        self.depth.get(net).copied().unwrap_or(0)
    }

    fn record(&mut self, net: &str, side: Side) {
        match side {
            Side::Trigger => self.trigger_nets.push(net.to_string()),
            Side::Payload => self.payload_nets.push(net.to_string()),
        }
    }

    fn gate_named(&mut self, kind: CellKind, inputs: Vec<String>, out: String, side: Side) -> String {
        let d = inputs.iter().map(|n| self.depth_of(n)).max().unwrap_or(0) + 1;
        let inst = self.fresh("u");
        self.cells.push(Cell::gate(inst, kind, inputs, out.clone()));
        self.depth.insert(out.clone(), d);
        self.record(&out, side);
        out
    }

    fn gate(&mut self, kind: CellKind, inputs: Vec<String>, side: Side) -> String {
        let out = self.fresh("n");
        self.gate_named(kind, inputs, out, side)
    }

    fn dff(&mut self, d: String) -> String {
        let q = self.fresh("q");
        let inst = self.fresh("r");
        self.cells.push(Cell::dff(inst, d, self.clock.clone(), q.clone()));
        self.depth.insert(q.clone(), 0);
        self.record(&q, Side::Trigger);
        q
    }

    /// AND of `lits` into `out` (a BUF when there is one literal).
    fn and_into(&mut self, lits: Vec<String>, out: String) -> String {
        if lits.len() == 1 {
            self.gate_named(CellKind::Buf, lits, out, Side::Trigger)
        } else {
            self.gate_named(CellKind::And, lits, out, Side::Trigger)
        }
    }

    fn and(&mut self, lits: Vec<String>) -> String {
        let out = self.fresh("n");
        self.and_into(lits, out)
    }
}

/// Literal per secret bit: the net itself for 1, its complement for 0.
/// Complements are cached so each source gains at most one extra load.
fn literals(
    b: &mut Builder<'_>,
    srcs: &[String],
    secret: &[bool],
    inv: &mut HashMap<String, String>,
) -> Vec<String> {
    srcs.iter()
        .zip(secret)
        .map(|(s, &bit)| {
            if bit {
                s.clone()
            } else if let Some(n) = inv.get(s) {
                n.clone()
            } else {
                let n = b.gate(CellKind::Inv, vec![s.clone()], Side::Trigger);
                inv.insert(s.clone(), n.clone());
                n
            }
        })
        .collect()
}

fn draw_secret(rng: &mut ChaCha8Rng, width: usize) -> Vec<bool> {
    let x: u32 = rng.random_range(1..(1u32 << width));
    (0..width).rev().map(|i| (x >> i) & 1 == 1).collect()
}

fn bits(s: &[bool]) -> String {
    s.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

fn is_plain_tag(tag: &str) -> bool {
    !tag.is_empty() && tag.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Compiles `d` against `coi`. Deterministic in `(d, coi, seed, ctx)`.
pub fn compile_template(
    d: &TemplateDescriptor,
    coi: &ConeOfInfluence,
    seed: u64,
    ctx: &CompileContext,
) -> Result<GraphRewrite, TemplateError> {
    let v = validate_descriptor(d);
    if !v.is_empty() {
        return Err(TemplateError::Invalid(v));
    }
    if !is_plain_tag(&ctx.tag) {
        return Err(TemplateError::BadTag(ctx.tag.clone()));
    }
    let p = d.params;
    let overlap = coi.meta.reconv.overlap_max;
    if overlap > p.reconv_tolerance {
        return Err(TemplateError::ReconvTolerance {
            overlap,
            tolerance: p.reconv_tolerance,
        });
    }
    let clock = match (&ctx.clock, d.trigger_family.is_sequential()) {
        (_, false) => None,
        (ClockSource::None, true) => return Err(TemplateError::NoClock),
        (ClockSource::Implicit, true) => None,
        (ClockSource::Net(n), true) => Some(n.clone()),
    };
    let clock_name = match &ctx.clock {
        ClockSource::Net(n) => Some(n.as_str()),
        _ => None,
    };
    let usable = |n: &str| !ctx.forbidden.matches(n) && Some(n) != clock_name;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = p.tap_count as usize;

    // victim: the anchor when it qualifies, otherwise a seeded pick
    let mut best_have = 0;
    let mut eligible: Vec<(String, Vec<String>)> = Vec::new();
    for v in &coi.internal {
        // the splice renames the driver's output, so its reads must be fair game too
        if !usable(v) || coi.edges.iter().any(|e| e.to == *v && !usable(&e.from)) {
            continue;
        }
        let anc: Vec<String> = coi.ancestors(v).into_iter().filter(|n| usable(n)).collect();
        best_have = best_have.max(anc.len());
        if anc.len() >= t {
            eligible.push((v.clone(), anc));
        }
    }
    if coi.internal.is_empty() {
        return Err(TemplateError::NoSplicePoint(format!(
            "cone around `{}` has no internal nets",
            coi.anchor
        )));
    }
    if eligible.is_empty() {
        return Err(TemplateError::ConeTooSmall {
            need: t,
            have: best_have,
        });
    }
    let pick = match eligible.iter().position(|(v, _)| *v == coi.anchor) {
        Some(i) => i,
        None => rng.random_range(0..eligible.len()),
    };
    let (victim, mut pool) = eligible.swap_remove(pick);
    pool.shuffle(&mut rng);
    pool.truncate(t);
    let taps = pool;

    let mut b = Builder {
        tag: &ctx.tag,
        cells: Vec::new(),
        depth: HashMap::new(),
        trigger_nets: Vec::new(),
        payload_nets: Vec::new(),
        next: 0,
        clock,
    };
    let trig = format!("{RESERVED_PREFIX}{}_trig", ctx.tag);
    let orig = format!("{RESERVED_PREFIX}{}_orig", ctx.tag);
    let mut secrets = Vec::new();
    let mut inv = HashMap::new();

    match d.trigger_family {
        TriggerFamily::HammingProximity => {
            let s = draw_secret(&mut rng, t);
            let lits = literals(&mut b, &taps, &s, &mut inv);
            b.and_into(lits, trig.clone());
            secrets.push(bits(&s));
        }
        TriggerFamily::GlitchDetector => {
            let b1 = b.gate(CellKind::Buf, vec![taps[0].clone()], Side::Trigger);
            let b2 = b.gate(CellKind::Buf, vec![b1.clone()], Side::Trigger);
            let edge = b.gate(CellKind::Xor, vec![b1, b2], Side::Trigger);
            let s = draw_secret(&mut rng, t - 1);
            let mut lits = vec![edge];
            lits.extend(literals(&mut b, &taps[1..], &s, &mut inv));
            b.and_into(lits, trig.clone());
            secrets.push(bits(&s));
        }
        TriggerFamily::HashCombo => {
            let folded: Vec<String> = taps
                .chunks(2)
                .map(|c| match c {
                    [x, y] => b.gate(CellKind::Xor, vec![x.clone(), y.clone()], Side::Trigger),
                    [x] => x.clone(),
                    _ => unreachable!(),
                })
                .collect();
            let s = draw_secret(&mut rng, folded.len());
            let lits = literals(&mut b, &folded, &s, &mut inv);
            b.and_into(lits, trig.clone());
            secrets.push(bits(&s));
        }
        TriggerFamily::SequenceFSM => {
            let bufs: Vec<String> = taps
                .iter()
                .map(|x| b.gate(CellKind::Buf, vec![x.clone()], Side::Trigger))
                .collect();
            let s: Vec<Vec<bool>> = (0..3).map(|_| draw_secret(&mut rng, t)).collect();
            let l1 = literals(&mut b, &bufs, &s[0], &mut inv);
            let m1 = b.and(l1);
            let q1 = b.dff(m1);
            let mut l2 = vec![q1];
            l2.extend(literals(&mut b, &bufs, &s[1], &mut inv));
            let d2 = b.and(l2);
            let q2 = b.dff(d2);
            let mut l3 = vec![q2];
            l3.extend(literals(&mut b, &bufs, &s[2], &mut inv));
            b.and_into(l3, trig.clone());
            secrets.extend(s.iter().map(|x| bits(x)));
        }
        TriggerFamily::WatchdogTimer => {
            let s = draw_secret(&mut rng, t);
            let lits = literals(&mut b, &taps, &s, &mut inv);
            let m = b.and(lits);
            let q1 = b.dff(m.clone());
            let q2 = b.dff(q1.clone());
            let q3 = b.dff(q2.clone());
            b.and_into(vec![m, q1, q2, q3], trig.clone());
            secrets.push(bits(&s));
        }
    }
    let trigger_depth = b.depth_of(&trig);

    b.depth.insert(orig.clone(), 0);
    b.payload_nets.push(orig.clone());
    let payload = match d.payload_family {
        PayloadFamily::PassThroughMux => orig.clone(),
        PayloadFamily::ShadowPath => {
            let mut cur = orig.clone();
            for _ in 0..p.local_depth {
                cur = b.gate(CellKind::Buf, vec![cur], Side::Payload);
            }
            cur
        }
        PayloadFamily::InertToggler => {
            let tb = b.gate(CellKind::Buf, vec![trig.clone()], Side::Payload);
            let z = b.gate(CellKind::Xor, vec![trig.clone(), tb], Side::Payload);
            b.gate(CellKind::Xor, vec![orig.clone(), z], Side::Payload)
        }
        PayloadFamily::GuardedOffset => {
            let nt = b.gate(CellKind::Inv, vec![trig.clone()], Side::Payload);
            let a = b.gate(CellKind::And, vec![orig.clone(), nt], Side::Payload);
            b.gate(CellKind::Xor, vec![orig.clone(), a], Side::Payload)
        }
        PayloadFamily::GuardedBitflip => {
            b.gate(CellKind::Xnor, vec![orig.clone(), trig.clone()], Side::Payload)
        }
    };
    // depth measured from orig only; trigger-side inputs are side branches
    let payload_depth = payload_depth_from(&b.cells, &orig, &payload);
    let splice = format!("{RESERVED_PREFIX}{}_mux", ctx.tag);
    b.cells.push(Cell::gate(
        splice.clone(),
        CellKind::Mux2,
        [trig.clone(), orig.clone(), payload.clone()],
        victim.clone(),
    ));
    let victim_path_depth = payload_depth + 1;
    if victim_path_depth > p.local_depth as u32 + 1 {
        return Err(TemplateError::NoSplicePoint(format!(
            "victim path depth {victim_path_depth} exceeds local_depth {} + 1",
            p.local_depth
        )));
    }

    let mut new_nets: Vec<String> = b.trigger_nets.clone();
    new_nets.extend(b.payload_nets.iter().cloned());
    let rw = GraphRewrite {
        template_id: d.id.clone(),
        seed,
        tag: ctx.tag.clone(),
        new_cells: b.cells,
        new_nets,
        victim_net: victim.clone(),
        orig_net: orig.clone(),
        trigger_net: trig.clone(),
        payload_net: payload,
        splice_instance: splice,
        taps,
        secrets,
        trigger_nets: b.trigger_nets,
        payload_nets: b.payload_nets,
        trigger_depth,
        victim_path_depth,
        inactive_semantics: format!("{trig} = 0 implies {victim} == {orig}"),
    };
    assert_guardrails(&rw, ctx, p.fanout_growth_budget as usize);
    Ok(rw)
}

/// Longest path from `orig` to `payload` through the new cells.
fn payload_depth_from(cells: &[Cell], orig: &str, payload: &str) -> u32 {
    let mut d: HashMap<&str, u32> = HashMap::new();
    d.insert(orig, 0);
    for c in cells {
        let best = c.input_nets().filter_map(|n| d.get(n).copied()).max();
        if let Some(x) = best {
            d.insert(c.output.as_str(), x + 1);
        }
    }
    d.get(payload).copied().unwrap_or(0)
}

/// Structural guarantees every compiled rewrite must satisfy.
fn assert_guardrails(rw: &GraphRewrite, ctx: &CompileContext, fanout_budget: usize) {
    let created: BTreeSet<&str> = rw.new_nets.iter().map(String::as_str).collect();
    for c in &rw.new_cells {
        assert!(c.name.starts_with(RESERVED_PREFIX), "instance {}", c.name);
        assert!(
            c.output.starts_with(RESERVED_PREFIX) || c.output == rw.victim_net,
            "output {}",
            c.output
        );
        for n in c.input_nets().chain(std::iter::once(c.output.as_str())) {
            assert!(!ctx.forbidden.matches(n), "rewrite touches forbidden net {n}");
        }
    }
    assert!(created.iter().all(|n| n.starts_with(RESERVED_PREFIX)));
    for (net, loads) in rw.added_loads() {
        if rw.taps.iter().any(|t| t == net) {
            assert!(loads <= fanout_budget, "tap {net} gains {loads} loads");
        }
    }
}
