//! Guarded application of compiled rewrites, per-net labels and rollback.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::miner::ConeOfInfluence;
use crate::netlist::{Driver, Netlist, NetlistError};
use crate::patterns::NamePatterns;
use crate::templates::{GraphRewrite, RESERVED_PREFIX};

#[derive(Debug, Error)]
pub enum InsertError {
    #[error("guardrail failed: {}", .0.failures().join("; "))]
    Guardrail(GuardrailReport),
    #[error("plan was not applied to this netlist (missing instance `{0}`)")]
    NotApplied(String),
    #[error("insertion broke a netlist invariant: {0}")]
    Invariant(#[from] NetlistError),
}

/// Gate-count cap `max(32, 0.1% of cells)`.
pub fn default_budget(cell_count: usize) -> usize {
    32.max(cell_count / 1000)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Guardrail {
    Interface,
    Scan,
    Budget,
    OneDriver,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardrailCheck {
    pub guardrail: Guardrail,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardrailReport {
    pub checks: Vec<GuardrailCheck>,
}

impl GuardrailReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> Vec<Guardrail> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.guardrail)
            .collect()
    }

    fn failures(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{:?}: {}", c.guardrail, c.detail))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsertionPlan {
    pub cone_id: String,
    pub rewrite: GraphRewrite,
    /// Pre-existing cone members, labelled as context.
    pub cone_nets: Vec<String>,
    pub guardrail_report: GuardrailReport,
    pub gate_delta: usize,
}

/// Evaluates the static guardrails; fails unless all of them pass.
pub fn plan_insertion(
    n: &Netlist,
    cone_id: &str,
    coi: &ConeOfInfluence,
    rw: &GraphRewrite,
    budget: usize,
    scan: &NamePatterns,
) -> Result<InsertionPlan, InsertError> {
    let drivers = n.driver_map()?;
    let mut checks = Vec::new();
    let mut check = |guardrail, problems: Vec<String>| {
        checks.push(GuardrailCheck {
            guardrail,
            passed: problems.is_empty(),
            detail: if problems.is_empty() {
                "ok".into()
            } else {
                problems.join(", ")
            },
        })
    };

    let pis: BTreeSet<&str> = n.inputs.iter().map(String::as_str).collect();
    let mut iface = Vec::new();
    for c in &rw.new_cells {
        if pis.contains(c.output.as_str()) {
            iface.push(format!("drives primary input `{}`", c.output));
        }
    }
    if !coi.is_internal(&rw.victim_net) {
        iface.push(format!("victim `{}` is not internal to the cone", rw.victim_net));
    }
    check(Guardrail::Interface, iface);

    let mut scan_hits = BTreeSet::new();
    for c in &rw.new_cells {
        for net in c.input_nets().chain(std::iter::once(c.output.as_str())) {
            if scan.matches(net) {
                scan_hits.insert(format!("touches scan/test net `{net}`"));
            }
        }
    }
    if let Some(c) = n.cells.iter().find(|c| c.output == rw.victim_net) {
        if let Some(net) = c.input_nets().find(|x| scan.matches(x)) {
            scan_hits.insert(format!("victim driver `{}` reads scan/test net `{net}`", c.name));
        }
    }
    check(Guardrail::Scan, scan_hits.into_iter().collect());

    let delta = rw.gate_delta();
    check(
        Guardrail::Budget,
        if delta > budget {
            vec![format!("gate delta {delta} exceeds budget {budget}")]
        } else {
            vec![]
        },
    );

    let mut od = Vec::new();
    match drivers.get(rw.victim_net.as_str()) {
        Some(Driver::Cell(_)) => {}
        Some(Driver::Input) => od.push(format!("victim `{}` is a primary input", rw.victim_net)),
        None => od.push(format!("victim `{}` does not exist", rw.victim_net)),
    }
    for net in &rw.new_nets {
        if !net.starts_with(RESERVED_PREFIX) {
            od.push(format!("new net `{net}` lacks the reserved prefix"));
        }
        if drivers.contains_key(net.as_str()) {
            od.push(format!("new net `{net}` already exists"));
        }
    }
    let instances: BTreeSet<&str> = n.cells.iter().map(|c| c.name.as_str()).collect();
    for c in &rw.new_cells {
        if instances.contains(c.name.as_str()) {
            od.push(format!("instance `{}` already exists", c.name));
        }
        for net in c.input_nets() {
            if !drivers.contains_key(net) && !rw.new_nets.iter().any(|x| x == net) {
                od.push(format!("reads undriven net `{net}`"));
            }
        }
    }
    check(Guardrail::OneDriver, od);

    let report = GuardrailReport { checks };
    if !report.all_pass() {
        return Err(InsertError::Guardrail(report));
    }
    Ok(InsertionPlan {
        cone_id: cone_id.to_string(),
        rewrite: rw.clone(),
        cone_nets: coi.nodes.clone(),
        guardrail_report: report,
        gate_delta: delta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Clean,
    Trigger,
    Payload,
    CoiContext,
}

impl Label {
    pub fn name(self) -> &'static str {
        match self {
            Label::Clean => "clean",
            Label::Trigger => "trigger",
            Label::Payload => "payload",
            Label::CoiContext => "coi_context",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        Some(match s {
            "clean" => Label::Clean,
            "trigger" => Label::Trigger,
            "payload" => Label::Payload,
            "coi_context" => Label::CoiContext,
            _ => return None,
        })
    }

    pub fn is_positive(self) -> bool {
        matches!(self, Label::Trigger | Label::Payload)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetLabel {
    pub label: Label,
    pub cone_id: Option<String>,
}

/// One label per net of a netlist, plus each cone's member nets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub nets: BTreeMap<String, NetLabel>,
    pub cones: BTreeMap<String, Vec<String>>,
}

impl LabelSet {
    /// Labels every net of `n` given the plans applied to produce it.
    pub fn from_plans<'a>(n: &Netlist, plans: impl IntoIterator<Item = &'a InsertionPlan>) -> Self {
        let mut nets: BTreeMap<String, NetLabel> = n
            .nets()
            .into_iter()
            .map(|net| {
                (
                    net.to_string(),
                    NetLabel {
                        label: Label::Clean,
                        cone_id: None,
                    },
                )
            })
            .collect();
        let mut cones = BTreeMap::new();
        for p in plans {
            let rw = &p.rewrite;
            let mut set = |net: &String, label| {
                if let Some(e) = nets.get_mut(net) {
                    *e = NetLabel {
                        label,
                        cone_id: Some(p.cone_id.clone()),
                    };
                }
            };
            for net in &p.cone_nets {
                set(net, Label::CoiContext);
            }
            for net in &rw.trigger_nets {
                set(net, Label::Trigger);
            }
            for net in &rw.payload_nets {
                set(net, Label::Payload);
            }
            let mut members: BTreeSet<String> = p.cone_nets.iter().cloned().collect();
            members.extend(rw.new_nets.iter().cloned());
            cones.insert(p.cone_id.clone(), members.into_iter().collect());
        }
        LabelSet { nets, cones }
    }

    pub fn count(&self, label: Label) -> usize {
        self.nets.values().filter(|l| l.label == label).count()
    }

    pub fn positives(&self) -> usize {
        self.nets.values().filter(|l| l.label.is_positive()).count()
    }

    pub fn positive_fraction(&self) -> f64 {
        if self.nets.is_empty() {
            0.0
        } else {
            self.positives() as f64 / self.nets.len() as f64
        }
    }

    /// Writes `net,label,cone_id` sorted by net.
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["net", "label", "cone_id"])?;
        for (net, l) in &self.nets {
            w.write_record([net.as_str(), l.label.name(), l.cone_id.as_deref().unwrap_or("")])?;
        }
        w.flush()
    }

    pub fn read_csv<R: io::Read>(input: R) -> io::Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut set = LabelSet::default();
        let mut cones: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for rec in r.records() {
            let rec = rec?;
            let bad = || io::Error::new(io::ErrorKind::InvalidData, format!("bad label row {rec:?}"));
            let (net, label, cone) = (rec.get(0).ok_or_else(bad)?, rec.get(1).ok_or_else(bad)?, rec.get(2).unwrap_or(""));
            let label = Label::parse(label).ok_or_else(bad)?;
            let cone_id = (!cone.is_empty()).then(|| cone.to_string());
            if let Some(c) = &cone_id {
                cones.entry(c.clone()).or_default().insert(net.to_string());
            }
            set.nets.insert(net.to_string(), NetLabel { label, cone_id });
        }
        set.cones = cones
            .into_iter()
            .map(|(k, v)| (k, v.into_iter().collect()))
            .collect();
        Ok(set)
    }
}

/// Applies `plan` to a copy of `n`.
pub fn apply(n: &Netlist, plan: &InsertionPlan) -> Result<(Netlist, LabelSet), InsertError> {
    if !plan.guardrail_report.all_pass() {
        return Err(InsertError::Guardrail(plan.guardrail_report.clone()));
    }
    let rw = &plan.rewrite;
    let mut out = n.clone();
    let driver = out
        .cells
        .iter_mut()
        .find(|c| c.output == rw.victim_net)
        .ok_or_else(|| NetlistError::UndeclaredNet {
            net: rw.victim_net.clone(),
            line: None,
        })?;
    driver.output = rw.orig_net.clone();
    out.cells.extend(rw.new_cells.iter().cloned());
    out.validate()?;
    let labels = LabelSet::from_plans(&out, [plan]);
    Ok((out, labels))
}

/// Inverse of [`apply`]: removes the new cells and restores the victim driver.
pub fn rollback(n: &Netlist, plan: &InsertionPlan) -> Result<Netlist, InsertError> {
    let rw = &plan.rewrite;
    let present: BTreeSet<&str> = n.cells.iter().map(|c| c.name.as_str()).collect();
    if let Some(missing) = rw.new_cells.iter().find(|c| !present.contains(c.name.as_str())) {
        return Err(InsertError::NotApplied(missing.name.clone()));
    }
    let added: BTreeSet<&str> = rw.new_cells.iter().map(|c| c.name.as_str()).collect();
    let mut out = n.clone();
    out.cells.retain(|c| !added.contains(c.name.as_str()));
    let driver = out
        .cells
        .iter_mut()
        .find(|c| c.output == rw.orig_net)
        .ok_or_else(|| InsertError::NotApplied(rw.orig_net.clone()))?;
    driver.output = rw.victim_net.clone();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{annotate, build_graph, sequential_cut};
    use crate::miner::{extract_coi, ConeBounds};
    use crate::netlist::{parse_bench, Cell, CellKind};
    use crate::scoap::{compute_scoap, rarity};
    use crate::templates::{builtin_library, compile_template, ClockSource, CompileContext};

    fn setup(text: &str, anchor: &str, id: &str) -> (Netlist, ConeOfInfluence, GraphRewrite) {
        let n = parse_bench(text).unwrap();
        let cut = annotate(sequential_cut(build_graph(&n).unwrap()).unwrap(), 4);
        let rt = rarity(&compute_scoap(&cut), 1.0).unwrap();
        let coi = extract_coi(&cut, &rt, anchor, ConeBounds::default()).unwrap();
        let d = builtin_library().into_iter().find(|d| d.id == id).unwrap();
        let ctx = CompileContext {
            tag: "c0".into(),
            clock: ClockSource::None,
            forbidden: NamePatterns::scan_defaults(),
        };
        let rw = compile_template(&d, &coi, 7, &ctx).unwrap();
        (n, coi, rw)
    }

    fn c17() -> (Netlist, ConeOfInfluence, GraphRewrite) {
        setup(include_str!("../fixtures/c17.bench"), "22", "hamming-mux-4")
    }

    #[test]
    fn c17_apply_grows_by_delta() {
        let (n, coi, rw) = c17();
        let plan = plan_insertion(&n, "c0", &coi, &rw, 32, &NamePatterns::scan_defaults()).unwrap();
        assert!(plan.guardrail_report.all_pass());
        let (t, labels) = apply(&n, &plan).unwrap();
        assert_eq!(t.cells.len(), n.cells.len() + plan.gate_delta);
        assert_eq!(t.inputs, n.inputs);
        assert_eq!(t.outputs, n.outputs);
        assert_eq!(labels.nets.len(), t.nets().len());
        let total: usize = [Label::Clean, Label::Trigger, Label::Payload, Label::CoiContext]
            .iter()
            .map(|&l| labels.count(l))
            .sum();
        assert_eq!(total, t.nets().len());
        for (net, l) in &labels.nets {
            if l.label.is_positive() {
                assert!(net.starts_with(RESERVED_PREFIX));
            }
        }
    }

    #[test]
    fn apply_rollback_identity() {
        let (n, coi, rw) = c17();
        let plan = plan_insertion(&n, "c0", &coi, &rw, 32, &NamePatterns::scan_defaults()).unwrap();
        let (t, _) = apply(&n, &plan).unwrap();
        let back = rollback(&t, &plan).unwrap();
        assert_eq!(back, n);
        assert!(matches!(rollback(&back, &plan), Err(InsertError::NotApplied(_))));
    }

    #[test]
    fn budget_failure() {
        let (n, coi, mut rw) = c17();
        for i in 0..40 {
            rw.new_cells.push(Cell::gate(
                format!("ht__c0_pad{i}"),
                CellKind::Buf,
                [rw.orig_net.clone()],
                format!("ht__c0_padn{i}"),
            ));
            rw.new_nets.push(format!("ht__c0_padn{i}"));
        }
        match plan_insertion(&n, "c0", &coi, &rw, 32, &NamePatterns::scan_defaults()) {
            Err(InsertError::Guardrail(r)) => assert_eq!(r.failed(), vec![Guardrail::Budget]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn scan_driven_victim_refused() {
        let text = "INPUT(scan_en)\nINPUT(a)\nINPUT(b)\nINPUT(c)\nOUTPUT(y)\n\
                    x = AND(a, b)\nz = OR(c, x)\nw = NAND(z, b)\ny = AND(w, a, scan_en)";
        let (n, coi, mut rw) = setup(text, "y", "glitch-shadow-3");
        assert_ne!(rw.victim_net, "y");
        // retarget the splice onto the gate that reads scan_en
        rw.victim_net = "y".into();
        match plan_insertion(&n, "c0", &coi, &rw, 32, &NamePatterns::scan_defaults()) {
            Err(InsertError::Guardrail(r)) => assert!(r.failed().contains(&Guardrail::Scan)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn scan_tap_failure() {
        let text = "INPUT(scan_en)\nINPUT(a)\nINPUT(b)\nOUTPUT(y)\n\
                    x = AND(a, b)\nz = OR(b, x)\nw = OR(a, scan_en)\ny = AND(z, a, b, w)";
        let (n, coi, mut rw) = setup(text, "y", "hamming-mux-4");
        // force a tap onto scan_en
        let cell = rw
            .new_cells
            .iter_mut()
            .find(|c| c.input_nets().any(|x| x == rw.taps[0]))
            .unwrap();
        let tap = rw.taps[0].clone();
        for (_, net) in cell.inputs.iter_mut() {
            if *net == tap {
                *net = "scan_en".into();
            }
        }
        match plan_insertion(&n, "c0", &coi, &rw, 32, &NamePatterns::scan_defaults()) {
            Err(InsertError::Guardrail(r)) => assert_eq!(r.failed(), vec![Guardrail::Scan]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn default_budget_values() {
        assert_eq!(default_budget(100), 32);
        assert_eq!(default_budget(1_000_000), 1000);
    }

    #[test]
    fn labels_csv_round_trip() {
        let (n, coi, rw) = c17();
        let plan = plan_insertion(&n, "c0", &coi, &rw, 32, &NamePatterns::scan_defaults()).unwrap();
        let (_, labels) = apply(&n, &plan).unwrap();
        let mut buf = Vec::new();
        labels.write_csv(&mut buf).unwrap();
        let back = LabelSet::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.nets, labels.nets);
    }
}
