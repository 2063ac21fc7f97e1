//! Seeded random netlists for scaling runs and randomized pipeline tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::netlist::{Cell, CellKind, Netlist};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub inputs: usize,
    pub gates: usize,
    pub flops: usize,
    /// Thread every flop through a scan mux (`scan_en`, `scan_in`, `scan_out`).
    pub scan: bool,
    /// Inputs are drawn from the most recent `window` nets with probability
    /// `locality`, giving depth and reconvergence; otherwise uniformly.
    pub window: usize,
    pub locality: f64,
    pub seed: u64,
}

impl SynthParams {
    pub fn combinational(inputs: usize, gates: usize, seed: u64) -> Self {
        SynthParams {
            inputs,
            gates,
            flops: 0,
            scan: false,
            window: 48,
            locality: 0.8,
            seed,
        }
    }

    pub fn scan_chained(inputs: usize, gates: usize, flops: usize, seed: u64) -> Self {
        SynthParams {
            flops,
            scan: true,
            ..Self::combinational(inputs, gates, seed)
        }
    }
}

const KINDS: [(CellKind, usize, usize); 7] = [
    (CellKind::And, 2, 4),
    (CellKind::Nand, 2, 4),
    (CellKind::Or, 2, 3),
    (CellKind::Nor, 2, 3),
    (CellKind::Xor, 2, 2),
    (CellKind::Inv, 1, 1),
    (CellKind::Buf, 1, 1),
];
const WEIGHTS: [u32; 7] = [5, 5, 3, 3, 1, 2, 1];

/// Builds a netlist: primary inputs `pi*`, gates `g*`, flops `q*` clocked by
/// `clk`. Nets left without loads become primary outputs.
pub fn generate(p: &SynthParams) -> Netlist {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut n = Netlist::new(format!("synth_{}", p.seed));
    let mut pool: Vec<String> = (0..p.inputs.max(1)).map(|i| format!("pi{i}")).collect();
    n.inputs = pool.clone();
    let sequential = p.flops > 0;
    if sequential {
        n.inputs.push("clk".into());
    }
    if p.scan && sequential {
        n.inputs.push("scan_en".into());
        n.inputs.push("scan_in".into());
    }
    pool.extend((0..p.flops).map(|i| format!("q{i}")));

    let total_w: u32 = WEIGHTS.iter().sum();
    let mut loads = vec![0usize; pool.len() + p.gates];
    let pick = |pool: &Vec<String>, rng: &mut ChaCha8Rng, loads: &mut Vec<usize>| -> usize {
        let len = pool.len();
        let i = if rng.random_bool(p.locality) && len > 1 {
            len - 1 - rng.random_range(0..p.window.min(len))
        } else {
            rng.random_range(0..len)
        };
        loads[i] += 1;
        i
    };
    for g in 0..p.gates {
        let mut r = rng.random_range(0..total_w);
        let mut k = 0;
        while r >= WEIGHTS[k] {
            r -= WEIGHTS[k];
            k += 1;
        }
        let (kind, lo, hi) = KINDS[k];
        let arity = rng.random_range(lo..=hi).min(pool.len().max(1));
        let arity = arity.max(lo.min(pool.len()));
        let mut ins: Vec<usize> = Vec::with_capacity(arity);
        let mut tries = 0;
        while ins.len() < arity && tries < 16 * arity {
            let i = pick(&pool, &mut rng, &mut loads);
            if !ins.contains(&i) {
                ins.push(i);
            } else {
                loads[i] -= 1;
            }
            tries += 1;
        }
        let (kind, ins) = if ins.len() < lo { (CellKind::Buf, vec![ins[0]]) } else { (kind, ins) };
        let out = format!("g{g}");
        n.cells.push(Cell::gate(
            format!("u{g}"),
            kind,
            ins.iter().map(|&i| pool[i].clone()),
            out.clone(),
        ));
        pool.push(out);
    }

    let first_gate = pool.len() - p.gates;
    for f in 0..p.flops {
        let d_idx = if p.gates > 0 {
            first_gate + rng.random_range(0..p.gates)
        } else {
            rng.random_range(0..pool.len())
        };
        loads[d_idx] += 1;
        let mut d = pool[d_idx].clone();
        if p.scan {
            let prev = if f == 0 { "scan_in".to_string() } else { format!("q{}", f - 1) };
            let sd = format!("sd{f}");
            n.cells.push(Cell::gate(format!("smux{f}"), CellKind::Mux2, ["scan_en".to_string(), d, prev], sd.clone()));
            d = sd;
            if f > 0 {
                loads[p.inputs.max(1) + f - 1] += 1;
            }
        }
        n.cells.push(Cell::dff(format!("ff{f}"), d, Some("clk".into()), format!("q{f}")));
    }
    if p.scan && p.flops > 0 {
        loads[p.inputs.max(1) + p.flops - 1] += 1;
        n.cells.push(Cell::gate("sbuf", CellKind::Buf, [format!("q{}", p.flops - 1)], "scan_out"));
        n.outputs.push("scan_out".into());
    }
    for (i, net) in pool.iter().enumerate().skip(first_gate) {
        if loads[i] == 0 {
            n.outputs.push(net.clone());
        }
    }
    if n.outputs.is_empty() {
        n.outputs.push(pool.last().unwrap().clone());
    }
    n
}

/// Driver-to-load connections, counting every cell input pin.
pub fn edge_count(n: &Netlist) -> usize {
    n.cells.iter().map(|c| c.inputs.len()).sum()
}

/// Combinational netlist with roughly `edges` connections.
pub fn with_edges(edges: usize, seed: u64) -> Netlist {
    // mean arity of the weighted kind mix is about 2.3
    let gates = (edges as f64 / 2.3).ceil() as usize;
    let inputs = (gates / 50).clamp(8, 4096);
    generate(&SynthParams::combinational(inputs, gates, seed))
}
