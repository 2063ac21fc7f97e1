//! Net-level connectivity graph.
//!
//! Nodes are nets; an edge `u -> v` exists for every cell input pin reading
//! `u` on a cell whose output is `v`. [`sequential_cut`] removes register
//! edges to obtain the combinational DAG the testability and mining passes
//! work on, and [`annotate`] attaches per-node structural attributes.

mod attrs;
mod cut;
mod dump;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::netlist::{CellKind, Netlist, NetlistError, Pin};

pub use attrs::{annotate, GateClass, NodeAttrs, ReconvSignature, DEFAULT_RECONV_RADIUS};
pub use cut::{sequential_cut, CutGraph, GraphError};
pub use dump::{write_edge_list, write_node_attrs_csv};

pub type NodeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub cell: u32,
    pub pin: Pin,
    /// Position of `pin` in the cell's input list.
    pub pin_index: u8,
}

#[derive(Debug, Clone)]
pub struct GraphCell {
    pub name: String,
    pub kind: CellKind,
    pub output: NodeId,
    /// First edge id of this cell; its inputs occupy `edge_start..edge_start + arity`.
    pub edge_start: u32,
    pub arity: u8,
}

#[derive(Debug, Clone)]
pub struct CircuitGraph {
    names: Vec<String>,
    index: HashMap<String, NodeId>,
    driver: Vec<Option<u32>>,
    cells: Vec<GraphCell>,
    edges: Vec<Edge>,
    fanout_offsets: Vec<u32>,
    fanout_edges: Vec<u32>,
    is_pi: Vec<bool>,
    is_po: Vec<bool>,
    inputs: Vec<NodeId>,
    outputs: Vec<NodeId>,
}

/// Builds the driver-to-load graph of `netlist`.
pub fn build_graph(netlist: &Netlist) -> Result<CircuitGraph, NetlistError> {
    netlist.validate()?;
    let node_count = netlist.inputs.len() + netlist.cells.len();
    let mut names = Vec::with_capacity(node_count);
    let mut index = HashMap::with_capacity(node_count);
    let mut driver = Vec::with_capacity(node_count);
    for pi in &netlist.inputs {
        index.insert(pi.clone(), names.len() as NodeId);
        names.push(pi.clone());
        driver.push(None);
    }
    for (ci, cell) in netlist.cells.iter().enumerate() {
        index.insert(cell.output.clone(), names.len() as NodeId);
        names.push(cell.output.clone());
        driver.push(Some(ci as u32));
    }

    let edge_count: usize = netlist.cells.iter().map(|c| c.inputs.len()).sum();
    let mut edges = Vec::with_capacity(edge_count);
    let mut cells = Vec::with_capacity(netlist.cells.len());
    let mut out_degree = vec![0u32; node_count];
    for (ci, cell) in netlist.cells.iter().enumerate() {
        let output = index[&cell.output];
        let edge_start = edges.len() as u32;
        for (pi, (pin, net)) in cell.inputs.iter().enumerate() {
            // validate() guarantees every referenced net has a driver
            let from = index[net];
            out_degree[from as usize] += 1;
            edges.push(Edge {
                from,
                to: output,
                cell: ci as u32,
                pin: *pin,
                pin_index: pi as u8,
            });
        }
        cells.push(GraphCell {
            name: cell.name.clone(),
            kind: cell.kind,
            output,
            edge_start,
            arity: cell.inputs.len() as u8,
        });
    }

    let mut fanout_offsets = Vec::with_capacity(node_count + 1);
    let mut acc = 0u32;
    fanout_offsets.push(0);
    for d in &out_degree {
        acc += d;
        fanout_offsets.push(acc);
    }
    let mut cursor: Vec<u32> = fanout_offsets[..node_count].to_vec();
    let mut fanout_edges = vec![0u32; edges.len()];
    for (ei, e) in edges.iter().enumerate() {
        let slot = &mut cursor[e.from as usize];
        fanout_edges[*slot as usize] = ei as u32;
        *slot += 1;
    }

    let mut is_pi = vec![false; node_count];
    let mut is_po = vec![false; node_count];
    let inputs: Vec<NodeId> = netlist.inputs.iter().map(|n| index[n]).collect();
    let outputs: Vec<NodeId> = netlist.outputs.iter().map(|n| index[n]).collect();
    for &i in &inputs {
        is_pi[i as usize] = true;
    }
    for &o in &outputs {
        is_po[o as usize] = true;
    }

    Ok(CircuitGraph {
        names,
        index,
        driver,
        cells,
        edges,
        fanout_offsets,
        fanout_edges,
        is_pi,
        is_po,
        inputs,
        outputs,
    })
}

impl CircuitGraph {
    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn name(&self, node: NodeId) -> &str {
        &self.names[node as usize]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn node(&self, name: &str) -> Option<NodeId> {
        self.index.get(name).copied()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, id: u32) -> &Edge {
        &self.edges[id as usize]
    }

    pub fn cells(&self) -> &[GraphCell] {
        &self.cells
    }

    pub fn cell(&self, id: u32) -> &GraphCell {
        &self.cells[id as usize]
    }

    /// Index of the cell driving `node`, or `None` for a primary input.
    pub fn driver(&self, node: NodeId) -> Option<u32> {
        self.driver[node as usize]
    }

    pub fn driver_kind(&self, node: NodeId) -> Option<CellKind> {
        self.driver(node).map(|c| self.cells[c as usize].kind)
    }

    /// Edge ids entering `node` (the driver cell's input pins).
    pub fn fanin_edges(&self, node: NodeId) -> std::ops::Range<u32> {
        match self.driver(node) {
            None => 0..0,
            Some(c) => {
                let cell = &self.cells[c as usize];
                cell.edge_start..cell.edge_start + cell.arity as u32
            }
        }
    }

    /// Edge ids leaving `node`.
    pub fn fanout_edges(&self, node: NodeId) -> &[u32] {
        let lo = self.fanout_offsets[node as usize] as usize;
        let hi = self.fanout_offsets[node as usize + 1] as usize;
        &self.fanout_edges[lo..hi]
    }

    pub fn fanin(&self, node: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.fanin_edges(node).map(|e| self.edges[e as usize].from)
    }

    pub fn fanout(&self, node: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.fanout_edges(node)
            .iter()
            .map(|&e| self.edges[e as usize].to)
    }

    pub fn is_pi(&self, node: NodeId) -> bool {
        self.is_pi[node as usize]
    }

    pub fn is_po(&self, node: NodeId) -> bool {
        self.is_po[node as usize]
    }

    pub fn inputs(&self) -> &[NodeId] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        0..self.names.len() as NodeId
    }
}
