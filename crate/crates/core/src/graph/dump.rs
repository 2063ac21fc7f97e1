//! Plain-text graph dumps for external tooling.
//!
//! Edge list: one `driver load cell_instance pin_index` line per edge.
//! Node attributes: CSV with a header row.

use std::io::{self, Write};

use super::{CircuitGraph, CutGraph, GateClass};

pub fn write_edge_list<W: Write>(graph: &CircuitGraph, mut out: W) -> io::Result<()> {
    for e in graph.edges() {
        writeln!(
            out,
            "{} {} {} {}",
            graph.name(e.from),
            graph.name(e.to),
            graph.cell(e.cell).name,
            e.pin_index
        )?;
    }
    Ok(())
}

/// Writes `net,gate_class,fanin,fanout,depth,dist_to_po,dist_to_ff,overlap_max,overlap_mean,branch_disjointness`.
/// Unreachable distances are left empty. Requires an annotated graph.
pub fn write_node_attrs_csv<W: Write>(cut: &CutGraph, out: W) -> io::Result<()> {
    let attrs = cut
        .attrs()
        .ok_or_else(|| io::Error::other("graph is not annotated"))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "net",
        "gate_class",
        "fanin",
        "fanout",
        "depth",
        "dist_to_po",
        "dist_to_ff",
        "overlap_max",
        "overlap_mean",
        "branch_disjointness",
    ])?;
    let opt = |x: Option<u32>| x.map(|v| v.to_string()).unwrap_or_default();
    for (i, a) in attrs.iter().enumerate() {
        let class = match a.gate_class {
            GateClass::Input => "INPUT".to_string(),
            GateClass::Cell(k) => k.name().to_string(),
        };
        w.write_record([
            cut.name(i as u32).to_string(),
            class,
            a.fanin.to_string(),
            a.fanout.to_string(),
            a.depth.to_string(),
            opt(a.dist_to_po),
            opt(a.dist_to_ff),
            a.reconv.overlap_max.to_string(),
            a.reconv.overlap_mean.to_string(),
            a.reconv.branch_disjointness.to_string(),
        ])?;
    }
    w.flush()
}
