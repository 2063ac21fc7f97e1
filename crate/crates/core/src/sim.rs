//! Two-valued, 64-way bit-parallel cycle simulation of a netlist.
//!
//! Each net holds one `u64`; lane `i` is an independent input vector. DFFs
//! sample `D & RN` at the end of every cycle and start at 0. Clocks are not
//! simulated: every register shares one implicit clock.

use std::collections::HashMap;

use thiserror::Error;

use crate::netlist::{CellKind, Netlist, Pin};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("net `{0}` is read but never driven")]
    Undriven(String),
    #[error("net `{0}` has more than one driver")]
    MultiplyDriven(String),
    #[error("combinational cycle through `{0}`")]
    CombinationalCycle(String),
    #[error("unknown net `{0}`")]
    UnknownNet(String),
}

#[derive(Debug, Clone)]
struct Gate {
    kind: CellKind,
    ins: Vec<u32>,
    out: u32,
}

#[derive(Debug, Clone)]
struct Reg {
    d: u32,
    rn: Option<u32>,
    q: u32,
}

#[derive(Debug, Clone)]
pub struct Simulator {
    names: Vec<String>,
    index: HashMap<String, u32>,
    inputs: Vec<u32>,
    outputs: Vec<u32>,
    gates: Vec<Gate>,
    regs: Vec<Reg>,
}

impl Simulator {
    /// Compiles `n`; its cells may reference only its inputs and cell outputs.
    pub fn compile(n: &Netlist) -> Result<Self, SimError> {
        let mut names: Vec<String> = Vec::new();
        let mut index: HashMap<String, u32> = HashMap::new();
        let mut id = |name: &str, names: &mut Vec<String>| -> u32 {
            if let Some(&i) = index.get(name) {
                return i;
            }
            let i = names.len() as u32;
            names.push(name.to_string());
            index.insert(name.to_string(), i);
            i
        };
        let inputs: Vec<u32> = n.inputs.iter().map(|x| id(x, &mut names)).collect();
        let mut driven = vec![false; 0];
        let mark = |driven: &mut Vec<bool>, i: u32, name: &str| -> Result<(), SimError> {
            if driven.len() <= i as usize {
                driven.resize(i as usize + 1, false);
            }
            if driven[i as usize] {
                return Err(SimError::MultiplyDriven(name.to_string()));
            }
            driven[i as usize] = true;
            Ok(())
        };
        for (&i, name) in inputs.iter().zip(&n.inputs) {
            mark(&mut driven, i, name)?;
        }
        let mut comb = Vec::new();
        let mut regs = Vec::new();
        for c in &n.cells {
            let out = id(&c.output, &mut names);
            mark(&mut driven, out, &c.output)?;
            if c.kind == CellKind::Dff {
                let d = id(c.pin_net(Pin::D).expect("DFF has D"), &mut names);
                let rn = c.pin_net(Pin::Rn).map(|x| id(x, &mut names));
                regs.push(Reg { d, rn, q: out });
            } else {
                let ins = c.input_nets().map(|x| id(x, &mut names)).collect();
                comb.push(Gate {
                    kind: c.kind,
                    ins,
                    out,
                });
            }
        }
        let outputs: Vec<u32> = n
            .outputs
            .iter()
            .map(|x| index.get(x).copied().ok_or_else(|| SimError::Undriven(x.clone())))
            .collect::<Result<_, _>>()?;
        driven.resize(names.len(), false);
        for (i, name) in names.iter().enumerate() {
            if !driven[i] {
                return Err(SimError::Undriven(name.clone()));
            }
        }

        // order combinational gates; register outputs and inputs are ready
        let mut ready = vec![false; names.len()];
        for &i in &inputs {
            ready[i as usize] = true;
        }
        for r in &regs {
            ready[r.q as usize] = true;
        }
        let mut users: Vec<Vec<usize>> = vec![Vec::new(); names.len()];
        let mut missing: Vec<usize> = vec![0; comb.len()];
        for (gi, g) in comb.iter().enumerate() {
            for &x in &g.ins {
                if !ready[x as usize] {
                    users[x as usize].push(gi);
                    missing[gi] += 1;
                }
            }
        }
        let mut queue: Vec<usize> = (0..comb.len()).filter(|&g| missing[g] == 0).collect();
        let mut head = 0;
        while head < queue.len() {
            let g = queue[head];
            head += 1;
            for &u in &users[comb[g].out as usize] {
                missing[u] -= 1;
                if missing[u] == 0 {
                    queue.push(u);
                }
            }
        }
        if queue.len() < comb.len() {
            let stuck = (0..comb.len()).find(|&g| missing[g] > 0).unwrap();
            return Err(SimError::CombinationalCycle(names[comb[stuck].out as usize].clone()));
        }
        let gates = queue.into_iter().map(|g| comb[g].clone()).collect();
        Ok(Simulator {
            names,
            index,
            inputs,
            outputs,
            gates,
            regs,
        })
    }

    pub fn net_count(&self) -> usize {
        self.names.len()
    }

    pub fn net(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn inputs(&self) -> &[u32] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[u32] {
        &self.outputs
    }

    pub fn register_count(&self) -> usize {
        self.regs.len()
    }

    pub fn new_values(&self) -> Vec<u64> {
        vec![0; self.names.len()]
    }

    pub fn new_state(&self) -> Vec<u64> {
        vec![0; self.regs.len()]
    }

    /// Settles one cycle. Input words must already be in `values`; `force`
    /// holds `(net, word)` overrides applied to inputs, registers and gates.
    pub fn eval(&self, values: &mut [u64], state: &[u64], force: &[(u32, u64)]) {
        for (r, &s) in self.regs.iter().zip(state) {
            values[r.q as usize] = s;
        }
        for &(n, w) in force {
            values[n as usize] = w;
        }
        let mut buf = [0u64; 16];
        for g in &self.gates {
            if !force.is_empty() {
                if let Some(&(_, w)) = force.iter().find(|&&(f, _)| f == g.out) {
                    values[g.out as usize] = w;
                    continue;
                }
            }
            for (slot, &i) in buf.iter_mut().zip(&g.ins) {
                *slot = values[i as usize];
            }
            values[g.out as usize] = g.kind.eval_words(&buf[..g.ins.len()]);
        }
    }

    /// Clocks every register from the settled `values`.
    pub fn clock(&self, values: &[u64], state: &mut [u64]) {
        for (r, s) in self.regs.iter().zip(state.iter_mut()) {
            let mut next = values[r.d as usize];
            if let Some(rn) = r.rn {
                next &= values[rn as usize];
            }
            *s = next;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{parse_bench, parse_structural_verilog};

    #[test]
    fn c17_truth_rows() {
        let n = parse_bench(include_str!("../fixtures/c17.bench")).unwrap();
        let sim = Simulator::compile(&n).unwrap();
        let mut v = sim.new_values();
        // lane i: input j = bit j of i
        for (j, &inp) in sim.inputs().iter().enumerate() {
            v[inp as usize] = (0..32u64).fold(0, |w, i| w | (((i >> j) & 1) << i));
        }
        sim.eval(&mut v, &[], &[]);
        let nand = |a: bool, b: bool| !(a && b);
        for i in 0..32u64 {
            let bit = |j: usize| (i >> j) & 1 == 1;
            let (n1, n2, n3, n6, n7) = (bit(0), bit(1), bit(2), bit(3), bit(4));
            let n10 = nand(n1, n3);
            let n11 = nand(n3, n6);
            let n16 = nand(n2, n11);
            let n19 = nand(n11, n7);
            let want = [nand(n10, n16), nand(n16, n19)];
            for (k, &o) in sim.outputs().iter().enumerate() {
                assert_eq!((v[o as usize] >> i) & 1 == 1, want[k]);
            }
        }
    }

    #[test]
    fn counter_counts() {
        let n = parse_structural_verilog(include_str!("../fixtures/counter2.v")).unwrap();
        let sim = Simulator::compile(&n).unwrap();
        let mut v = sim.new_values();
        let mut s = sim.new_state();
        let mut seen = Vec::new();
        for _ in 0..5 {
            sim.eval(&mut v, &s, &[]);
            let q0 = v[sim.net("q0").unwrap() as usize] & 1;
            let q1 = v[sim.net("q1").unwrap() as usize] & 1;
            seen.push(q1 * 2 + q0);
            sim.clock(&v, &mut s);
        }
        assert_eq!(seen, vec![0, 1, 2, 3, 0]);
    }

    #[test]
    fn forcing_internal_net() {
        let n = parse_bench("INPUT(a)\nOUTPUT(y)\nb = NOT(a)\ny = NOT(b)").unwrap();
        let sim = Simulator::compile(&n).unwrap();
        let mut v = sim.new_values();
        let b = sim.net("b").unwrap();
        sim.eval(&mut v, &[], &[(b, !0)]);
        assert_eq!(v[sim.net("y").unwrap() as usize], 0);
    }

    #[test]
    fn undriven_rejected() {
        let mut n = parse_bench("INPUT(a)\nOUTPUT(y)\ny = AND(a, b)\nb = NOT(a)").unwrap();
        n.cells.retain(|c| c.output != "b");
        assert_eq!(Simulator::compile(&n).unwrap_err(), SimError::Undriven("b".into()));
    }
}
