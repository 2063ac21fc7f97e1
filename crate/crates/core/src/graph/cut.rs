use thiserror::Error;

use super::{CircuitGraph, NodeAttrs, NodeId};
use crate::netlist::{CellKind, Pin};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("combinational cycle through {}", .0.join(" -> "))]
    CombinationalCycle(Vec<String>),
    #[error("unknown net `{0}`")]
    UnknownNet(String),
}

/// Circuit graph with registers cut: DFF outputs act as pseudo primary
/// inputs and DFF data-side inputs as pseudo primary outputs.
#[derive(Debug, Clone)]
pub struct CutGraph {
    graph: CircuitGraph,
    pseudo_pi: Vec<bool>,
    pseudo_po: Vec<bool>,
    registers: Vec<u32>,
    topo: Vec<NodeId>,
    topo_pos: Vec<u32>,
    pub(super) attrs: Option<Vec<NodeAttrs>>,
}

/// Cuts `graph` at every DFF and orders the remaining combinational view.
pub fn sequential_cut(graph: CircuitGraph) -> Result<CutGraph, GraphError> {
    let n = graph.node_count();
    let mut pseudo_pi = vec![false; n];
    let mut pseudo_po = vec![false; n];
    let mut registers = Vec::new();
    for (ci, cell) in graph.cells().iter().enumerate() {
        if cell.kind != CellKind::Dff {
            continue;
        }
        registers.push(ci as u32);
        pseudo_pi[cell.output as usize] = true;
        for e in cell.edge_start..cell.edge_start + cell.arity as u32 {
            let edge = graph.edge(e);
            // D and RN are observation points; the clock is not.
            if edge.pin != Pin::Clk {
                pseudo_po[edge.from as usize] = true;
            }
        }
    }

    // Kahn over combinational edges only.
    let mut indegree = vec![0u32; n];
    for v in graph.nodes() {
        if !pseudo_pi[v as usize] {
            indegree[v as usize] = graph.fanin_edges(v).len() as u32;
        }
    }
    let mut topo: Vec<NodeId> = Vec::with_capacity(n);
    topo.extend(graph.nodes().filter(|&v| indegree[v as usize] == 0));
    let mut head = 0;
    while head < topo.len() {
        let u = topo[head];
        head += 1;
        for &e in graph.fanout_edges(u) {
            let edge = graph.edge(e);
            if graph.cell(edge.cell).kind == CellKind::Dff {
                continue;
            }
            let d = &mut indegree[edge.to as usize];
            *d -= 1;
            if *d == 0 {
                topo.push(edge.to);
            }
        }
    }
    if topo.len() < n {
        return Err(GraphError::CombinationalCycle(find_cycle(&graph, &indegree)));
    }
    let mut topo_pos = vec![0u32; n];
    for (i, &v) in topo.iter().enumerate() {
        topo_pos[v as usize] = i as u32;
    }
    Ok(CutGraph {
        graph,
        pseudo_pi,
        pseudo_po,
        registers,
        topo,
        topo_pos,
        attrs: None,
    })
}

/// Walks unresolved fan-in from any node left over by Kahn until a node repeats.
fn find_cycle(graph: &CircuitGraph, indegree: &[u32]) -> Vec<String> {
    let start = (0..indegree.len()).find(|&v| indegree[v] > 0).unwrap() as NodeId;
    let mut seen_at = std::collections::HashMap::new();
    let mut path = Vec::new();
    let mut v = start;
    loop {
        if let Some(&pos) = seen_at.get(&v) {
            let mut cycle: Vec<String> = path[pos..]
                .iter()
                .map(|&x: &NodeId| graph.name(x).to_string())
                .collect();
            cycle.reverse();
            return cycle;
        }
        seen_at.insert(v, path.len());
        path.push(v);
        v = graph
            .fanin(v)
            .find(|&u| indegree[u as usize] > 0)
            .expect("unresolved node has an unresolved predecessor");
    }
}

impl CutGraph {
    pub fn graph(&self) -> &CircuitGraph {
        &self.graph
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn name(&self, node: NodeId) -> &str {
        self.graph.name(node)
    }

    pub fn node(&self, name: &str) -> Option<NodeId> {
        self.graph.node(name)
    }

    pub fn is_pseudo_pi(&self, node: NodeId) -> bool {
        self.pseudo_pi[node as usize]
    }

    pub fn is_pseudo_po(&self, node: NodeId) -> bool {
        self.pseudo_po[node as usize]
    }

    /// Primary or pseudo primary input.
    pub fn is_source(&self, node: NodeId) -> bool {
        self.graph.is_pi(node) || self.pseudo_pi[node as usize]
    }

    /// Primary or pseudo primary output.
    pub fn is_sink(&self, node: NodeId) -> bool {
        self.graph.is_po(node) || self.pseudo_po[node as usize]
    }

    pub fn registers(&self) -> &[u32] {
        &self.registers
    }

    pub fn pseudo_pi_count(&self) -> usize {
        self.pseudo_pi.iter().filter(|&&b| b).count()
    }

    pub fn pseudo_po_count(&self) -> usize {
        self.pseudo_po.iter().filter(|&&b| b).count()
    }

    /// Nodes in combinational topological order.
    pub fn topo_order(&self) -> &[NodeId] {
        &self.topo
    }

    pub fn topo_position(&self, node: NodeId) -> u32 {
        self.topo_pos[node as usize]
    }

    /// Combinational in-edges of `node` (none for pseudo inputs).
    pub fn comb_fanin_edges(&self, node: NodeId) -> std::ops::Range<u32> {
        if self.pseudo_pi[node as usize] {
            0..0
        } else {
            self.graph.fanin_edges(node)
        }
    }

    pub fn comb_fanin(&self, node: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.comb_fanin_edges(node)
            .map(|e| self.graph.edge(e).from)
    }

    /// Combinational out-edges of `node` (edges into registers excluded).
    pub fn comb_fanout_edges(&self, node: NodeId) -> impl Iterator<Item = u32> + '_ {
        self.graph
            .fanout_edges(node)
            .iter()
            .copied()
            .filter(|&e| !self.pseudo_pi[self.graph.edge(e).to as usize])
    }

    pub fn comb_fanout(&self, node: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.comb_fanout_edges(node).map(|e| self.graph.edge(e).to)
    }

    /// Per-node attributes, present after [`super::annotate`].
    pub fn attrs(&self) -> Option<&[NodeAttrs]> {
        self.attrs.as_deref()
    }

    pub fn into_graph(self) -> CircuitGraph {
        self.graph
    }
}
