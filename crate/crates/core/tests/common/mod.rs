//! Helpers shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use htgen::policy::{FeatureVector, HistoryRecord, Outcome, PolicyNet, Sample, FEATURES, PARAM_COUNT};
use htgen::netlist::{parse_bench, parse_structural_verilog, Cell, CellKind, Netlist, Pin};
use htgen::synthetic::{generate, SynthParams};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn load_fixture(name: &str) -> Netlist {
    let text = std::fs::read_to_string(fixture(name)).unwrap();
    if name.ends_with(".bench") {
        parse_bench(&text).unwrap()
    } else {
        parse_structural_verilog(&text).unwrap()
    }
}

const CAP: u64 = i32::MAX as u64;

/// Textbook SCOAP recurrences evaluated by memoized recursion on net names.
/// MUX2 cells are first rewritten into INV/AND/OR so the oracle only knows
/// the primitive gate rules.
pub struct NaiveScoap {
    pub cc0: HashMap<String, u64>,
    pub cc1: HashMap<String, u64>,
    pub co: HashMap<String, u64>,
}

fn expand_muxes(n: &Netlist) -> Netlist {
    let mut out = Netlist::new(n.name.clone());
    out.inputs = n.inputs.clone();
    out.outputs = n.outputs.clone();
    for c in &n.cells {
        if c.kind != CellKind::Mux2 {
            out.cells.push(c.clone());
            continue;
        }
        let s = c.pin_net(Pin::Sel).unwrap().to_string();
        let a = c.pin_net(Pin::Data(0)).unwrap().to_string();
        let b = c.pin_net(Pin::Data(1)).unwrap().to_string();
        let p = format!("{}__oracle", c.name);
        out.cells.push(Cell::gate(format!("{p}_ns"), CellKind::Inv, [s.clone()], format!("{p}_ns")));
        out.cells.push(Cell::gate(format!("{p}_t1"), CellKind::And, [format!("{p}_ns"), a], format!("{p}_t1")));
        out.cells.push(Cell::gate(format!("{p}_t2"), CellKind::And, [s, b], format!("{p}_t2")));
        out.cells.push(Cell::gate(
            format!("{p}_y"),
            CellKind::Or,
            [format!("{p}_t1"), format!("{p}_t2")],
            c.output.clone(),
        ));
    }
    out
}

impl NaiveScoap {
    pub fn compute(original: &Netlist) -> Self {
        let n = expand_muxes(original);
        let drivers: HashMap<&str, &Cell> = n.cells.iter().map(|c| (c.output.as_str(), c)).collect();
        let mut s = NaiveScoap {
            cc0: HashMap::new(),
            cc1: HashMap::new(),
            co: HashMap::new(),
        };
        let nets: Vec<String> = n.nets().into_iter().map(str::to_string).collect();
        for net in &nets {
            s.cc(net, &drivers);
        }
        for net in &nets {
            s.obs(net, &n);
        }
        s
    }

    fn cc(&mut self, net: &str, drivers: &HashMap<&str, &Cell>) -> (u64, u64) {
        if let (Some(&a), Some(&b)) = (self.cc0.get(net), self.cc1.get(net)) {
            return (a, b);
        }
        let v = match drivers.get(net) {
            None => (1, 1),
            Some(c) if c.kind == CellKind::Dff => (1, 1),
            Some(c) => {
                let ins: Vec<(u64, u64)> = c.input_nets().map(|i| self.cc(i, drivers)).collect();
                let s0: u64 = ins.iter().map(|x| x.0).sum();
                let s1: u64 = ins.iter().map(|x| x.1).sum();
                let m0 = ins.iter().map(|x| x.0).min().unwrap();
                let m1 = ins.iter().map(|x| x.1).min().unwrap();
                let (z, o) = match c.kind {
                    CellKind::Buf => (ins[0].0, ins[0].1),
                    CellKind::Inv => (ins[0].1, ins[0].0),
                    CellKind::And => (m0, s1),
                    CellKind::Nand => (s1, m0),
                    CellKind::Or => (s0, m1),
                    CellKind::Nor => (m1, s0),
                    CellKind::Xor | CellKind::Xnor => {
                        let (a, b) = (ins[0], ins[1]);
                        let same = (a.0 + b.0).min(a.1 + b.1);
                        let diff = (a.0 + b.1).min(a.1 + b.0);
                        if c.kind == CellKind::Xor {
                            (same, diff)
                        } else {
                            (diff, same)
                        }
                    }
                    CellKind::Mux2 | CellKind::Dff => unreachable!(),
                };
                ((z + 1).min(CAP), (o + 1).min(CAP))
            }
        };
        self.cc0.insert(net.to_string(), v.0);
        self.cc1.insert(net.to_string(), v.1);
        v
    }

    fn obs(&mut self, net: &str, n: &Netlist) -> u64 {
        if let Some(&v) = self.co.get(net) {
            return v;
        }
        let observed = n.outputs.iter().any(|o| o == net)
            || n.cells
                .iter()
                .any(|c| c.kind == CellKind::Dff && c.inputs.iter().any(|(p, i)| *p != Pin::Clk && i == net));
        let v = if observed {
            0
        } else {
            let mut best = CAP;
            for c in n.cells.iter().filter(|c| c.kind != CellKind::Dff) {
                for (k, (_, i)) in c.inputs.iter().enumerate() {
                    if i != net {
                        continue;
                    }
                    let co_y = self.obs(&c.output, n);
                    let others = c.inputs.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, (_, x))| x.as_str());
                    let side: u64 = match c.kind {
                        CellKind::Inv | CellKind::Buf => 0,
                        CellKind::And | CellKind::Nand => others.map(|x| self.cc1[x]).sum(),
                        CellKind::Or | CellKind::Nor => others.map(|x| self.cc0[x]).sum(),
                        CellKind::Xor | CellKind::Xnor => others.map(|x| self.cc0[x].min(self.cc1[x])).sum(),
                        _ => unreachable!(),
                    };
                    best = best.min(co_y + side + 1);
                }
            }
            best.min(CAP)
        };
        self.co.insert(net.to_string(), v);
        v
    }
}

fn gate(n: &mut Netlist, kind: CellKind, ins: &[&str], out: &str) {
    n.cells.push(Cell::gate(format!("u_{out}"), kind, ins.iter().copied(), out));
}

/// Alternating INV/BUF/AND chain of `len` stages.
pub fn chain(len: usize) -> Netlist {
    let mut n = Netlist::new("chain");
    n.inputs = vec!["a".into(), "b".into()];
    let mut prev = "a".to_string();
    for i in 0..len {
        let out = format!("c{i}");
        match i % 3 {
            0 => gate(&mut n, CellKind::Inv, &[&prev], &out),
            1 => gate(&mut n, CellKind::Buf, &[&prev], &out),
            _ => gate(&mut n, CellKind::And, &[&prev, "b"], &out),
        }
        prev = out;
    }
    n.outputs = vec![prev];
    n
}

/// Balanced binary tree of `kind` gates over `2^depth` inputs.
pub fn tree(depth: u32, kind: CellKind) -> Netlist {
    let mut n = Netlist::new("tree");
    let mut level: Vec<String> = (0..1usize << depth).map(|i| format!("x{i}")).collect();
    n.inputs = level.clone();
    let mut k = 0;
    while level.len() > 1 {
        let mut next = Vec::new();
        for p in level.chunks(2) {
            let out = format!("t{k}");
            k += 1;
            gate(&mut n, kind, &[&p[0], &p[1]], &out);
            next.push(out);
        }
        level = next;
    }
    n.outputs = level;
    n
}

/// `count` stacked reconvergent diamonds, each fork re-joined by `join`.
pub fn diamonds(count: usize, join: CellKind) -> Netlist {
    let mut n = Netlist::new("diamond");
    n.inputs = vec!["a".into(), "s".into()];
    let mut prev = "a".to_string();
    for i in 0..count {
        let (l, r, j) = (format!("l{i}"), format!("r{i}"), format!("j{i}"));
        gate(&mut n, CellKind::Nand, &[&prev, "s"], &l);
        gate(&mut n, CellKind::Nor, &[&prev, "s"], &r);
        if join == CellKind::Mux2 {
            n.cells.push(Cell::new(
                format!("u_{j}"),
                CellKind::Mux2,
                vec![(Pin::Sel, prev.clone()), (Pin::Data(0), l), (Pin::Data(1), r)],
                j.clone(),
            ));
        } else {
            gate(&mut n, join, &[&l, &r], &j);
        }
        prev = j;
    }
    n.outputs = vec![prev, "l0".into()];
    n
}

/// The small-fixture corpus: named netlists of at most 50 nets.
pub fn small_corpus() -> Vec<(String, Netlist)> {
    let mut v: Vec<(String, Netlist)> = Vec::new();
    for f in ["c17.bench", "ring6.bench", "s27.bench", "counter2.v"] {
        v.push((f.into(), load_fixture(f)));
    }
    for len in [1, 4, 9, 20, 40] {
        v.push((format!("chain{len}"), chain(len)));
    }
    for (d, k) in [
        (2, CellKind::And),
        (3, CellKind::Or),
        (3, CellKind::Xor),
        (4, CellKind::Nand),
        (3, CellKind::Xnor),
        (4, CellKind::Nor),
    ] {
        v.push((format!("tree{d}_{}", k.name()), tree(d, k)));
    }
    for (c, k) in [
        (1, CellKind::And),
        (3, CellKind::Or),
        (5, CellKind::Xor),
        (4, CellKind::Mux2),
        (8, CellKind::Nand),
    ] {
        v.push((format!("diamond{c}_{}", k.name()), diamonds(c, k)));
    }
    for seed in 0..6 {
        let p = SynthParams {
            window: 8,
            ..SynthParams::combinational(4, 24, seed)
        };
        v.push((format!("synth_comb{seed}"), generate(&p)));
    }
    for seed in 0..4 {
        v.push((format!("synth_scan{seed}"), generate(&SynthParams::scan_chained(3, 20, 3, seed))));
    }
    v
}

pub fn random_fv(rng: &mut ChaCha8Rng) -> FeatureVector {
    FeatureVector((0..FEATURES).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn signs(p: &PolicyNet, batch: &[Sample]) -> Vec<bool> {
    batch.iter().flat_map(|s| p.preactivations(&s.x)).map(|z| z > 0.0).collect()
}

/// Twenty records separable on the sign of `w . x`.
pub fn separable_history(seed: u64) -> Vec<HistoryRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..FEATURES).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut out = Vec::new();
    while out.len() < 20 {
        let fv: Vec<f64> = (0..FEATURES).map(|_| rng.random_range(0.0..1.0)).collect();
        let m: f64 = fv.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() - w.iter().sum::<f64>() / 2.0;
        if m.abs() < 0.2 {
            continue;
        }
        let accepted = m > 0.0;
        // keep the classes balanced
        if out.iter().filter(|r: &&HistoryRecord| (r.outcome == Outcome::Accepted) == accepted).count() >= 10 {
            continue;
        }
        out.push(HistoryRecord {
            candidate: format!("r{}", out.len()),
            features: FeatureVector(fv),
            outcome: if accepted { Outcome::Accepted } else { Outcome::FailedEquivalence },
            stealth: if accepted { 0.8 } else { 0.2 },
        });
    }
    out
}

/// Plain batch gradient descent on a logistic model with bias.
pub fn logistic_oracle(h: &[HistoryRecord]) -> Vec<bool> {
    let mut w = vec![0.0; FEATURES + 1];
    for _ in 0..20_000 {
        let mut g = vec![0.0; FEATURES + 1];
        for r in h {
            let x = &r.features.0;
            let z = w[FEATURES] + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let y = if r.outcome == Outcome::Accepted { 1.0 } else { 0.0 };
            let d = 1.0 / (1.0 + (-z).exp()) - y;
            for i in 0..FEATURES {
                g[i] += d * x[i];
            }
            g[FEATURES] += d;
        }
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= 0.5 * gi / h.len() as f64;
        }
    }
    h.iter()
        .map(|r| w[FEATURES] + r.features.0.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() > 0.0)
        .collect()
}

/// Worst relative error over `probes` central-difference probes (step 1e-5)
/// that stay clear of ReLU kinks.
pub fn gradient_check(probes_wanted: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut probes = 0;
    let mut worst: f64 = 0.0;
    let mut attempts = 0;
    while probes < probes_wanted {
        attempts += 1;
        assert!(attempts < 5000, "too few usable probes");
        let p = PolicyNet::init(rng.random());
        let batch: Vec<Sample> = (0..4)
            .map(|_| Sample {
                x: random_fv(&mut rng),
                accepted: rng.random(),
                stealth: rng.random(),
            })
            .collect();
        let (_, g) = p.loss_and_grad(&batch);
        let k = rng.random_range(0..PARAM_COUNT);
        if g[k].abs() < 1e-6 {
            continue;
        }
        let mut plus = p.clone();
        plus.params[k] += h;
        let mut minus = p.clone();
        minus.params[k] -= h;
        // a ReLU changing state inside the interval invalidates the difference
        let s = signs(&p, &batch);
        if signs(&plus, &batch) != s || signs(&minus, &batch) != s {
            continue;
        }
        let fd = (plus.loss(&batch) - minus.loss(&batch)) / (2.0 * h);
        let rel = (fd - g[k]).abs() / fd.abs().max(g[k].abs());
        worst = worst.max(rel);
        probes += 1;
    }
    worst
}

