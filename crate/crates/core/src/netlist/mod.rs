//! Gate-level netlists over a fixed standard-cell vocabulary.
//!
//! A [`Netlist`] is a flat module: ordered primary inputs and outputs plus a
//! list of cell instances. Every net has exactly one driver, either a primary
//! input or the output pin of one cell. Two text formats are supported, ISCAS
//! `.bench` ([`parse_bench`]) and a structural-Verilog subset
//! ([`parse_structural_verilog`] / [`write_structural_verilog`]).

mod bench;
mod verilog;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bench::parse_bench;
pub use verilog::{parse_structural_verilog, write_structural_verilog};

/// Widest AND/NAND/OR/NOR accepted. ISCAS'85 circuits use up to 9 inputs.
pub const MAX_GATE_ARITY: usize = 16;

const DATA_PIN_NAMES: [&str; MAX_GATE_ARITY] = [
    "A", "B", "C", "D", "E", "F", "G", "H", "I", "J", "K", "L", "M", "N", "O", "P",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CellKind {
    Inv,
    Buf,
    And,
    Nand,
    Or,
    Nor,
    Xor,
    Xnor,
    Mux2,
    Dff,
}

impl CellKind {
    pub const ALL: [CellKind; 10] = [
        CellKind::Inv,
        CellKind::Buf,
        CellKind::And,
        CellKind::Nand,
        CellKind::Or,
        CellKind::Nor,
        CellKind::Xor,
        CellKind::Xnor,
        CellKind::Mux2,
        CellKind::Dff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Inv => "INV",
            CellKind::Buf => "BUF",
            CellKind::And => "AND",
            CellKind::Nand => "NAND",
            CellKind::Or => "OR",
            CellKind::Nor => "NOR",
            CellKind::Xor => "XOR",
            CellKind::Xnor => "XNOR",
            CellKind::Mux2 => "MUX2",
            CellKind::Dff => "DFF",
        }
    }

    /// Accepted input-pin counts. DFF counts D plus the optional CLK and RN.
    pub fn arity_bounds(self) -> (usize, usize) {
        match self {
            CellKind::Inv | CellKind::Buf => (1, 1),
            CellKind::And | CellKind::Nand | CellKind::Or | CellKind::Nor => (2, MAX_GATE_ARITY),
            CellKind::Xor | CellKind::Xnor => (2, 2),
            CellKind::Mux2 => (3, 3),
            CellKind::Dff => (1, 3),
        }
    }

    pub fn is_sequential(self) -> bool {
        self == CellKind::Dff
    }

    pub fn output_pin_name(self) -> &'static str {
        if self == CellKind::Dff {
            "Q"
        } else {
            "Y"
        }
    }

    /// Canonical pin sequence for a combinational cell of the given arity.
    pub fn data_pins(self, arity: usize) -> Vec<Pin> {
        match self {
            CellKind::Mux2 => vec![Pin::Sel, Pin::Data(0), Pin::Data(1)],
            CellKind::Dff => vec![Pin::D],
            _ => (0..arity).map(|i| Pin::Data(i as u8)).collect(),
        }
    }

    /// Evaluates the combinational function over 64 parallel patterns.
    /// Inputs follow the canonical pin order; MUX2 is `sel ? b : a`.
    pub fn eval_words(self, inputs: &[u64]) -> u64 {
        match self {
            CellKind::Inv => !inputs[0],
            CellKind::Buf => inputs[0],
            CellKind::And => inputs.iter().fold(!0, |acc, &x| acc & x),
            CellKind::Nand => !inputs.iter().fold(!0, |acc, &x| acc & x),
            CellKind::Or => inputs.iter().fold(0, |acc, &x| acc | x),
            CellKind::Nor => !inputs.iter().fold(0, |acc, &x| acc | x),
            CellKind::Xor => inputs[0] ^ inputs[1],
            CellKind::Xnor => !(inputs[0] ^ inputs[1]),
            CellKind::Mux2 => (!inputs[0] & inputs[1]) | (inputs[0] & inputs[2]),
            CellKind::Dff => panic!("DFF has no combinational function"),
        }
    }

    pub fn from_name(name: &str) -> Option<(CellKind, Option<usize>)> {
        let upper = name.to_ascii_uppercase();
        let (stem, digits) = match upper.find(|c: char| c.is_ascii_digit()) {
            Some(pos) => (&upper[..pos], Some(&upper[pos..])),
            None => (upper.as_str(), None),
        };
        let kind = match stem {
            "INV" | "NOT" => CellKind::Inv,
            "BUF" | "BUFF" => CellKind::Buf,
            "AND" => CellKind::And,
            "NAND" => CellKind::Nand,
            "OR" => CellKind::Or,
            "NOR" => CellKind::Nor,
            "XOR" => CellKind::Xor,
            "XNOR" => CellKind::Xnor,
            "MUX" => CellKind::Mux2,
            "DFF" | "DFFR" => CellKind::Dff,
            _ => return None,
        };
        let arity = match digits {
            None => None,
            Some(d) => match d.parse::<usize>() {
                Ok(n) => Some(n),
                Err(_) => return None,
            },
        };
        // MUX2 carries its data-input count in the name, not its arity.
        if kind == CellKind::Mux2 {
            return match arity {
                None | Some(2) => Some((kind, None)),
                _ => None,
            };
        }
        if kind == CellKind::Dff && arity.is_some() {
            return None;
        }
        Some((kind, arity))
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An input pin of a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pin {
    /// Positional data input of a logic gate (`A`, `B`, ...), or MUX2 data
    /// input `A` (0) / `B` (1).
    Data(u8),
    /// MUX2 select.
    Sel,
    /// Register data input.
    D,
    /// Register clock.
    Clk,
    /// Register active-low reset.
    Rn,
}

impl Pin {
    pub fn name(self) -> &'static str {
        match self {
            Pin::Data(i) => DATA_PIN_NAMES[i as usize],
            Pin::Sel => "S",
            Pin::D => "D",
            Pin::Clk => "CLK",
            Pin::Rn => "RN",
        }
    }

    /// Resolves a named-pin connection for `kind`.
    pub fn parse(kind: CellKind, name: &str) -> Option<Pin> {
        let upper = name.to_ascii_uppercase();
        match kind {
            CellKind::Dff => match upper.as_str() {
                "D" => Some(Pin::D),
                "CLK" | "CK" | "C" => Some(Pin::Clk),
                "RN" | "RST_N" | "RESET_N" => Some(Pin::Rn),
                _ => None,
            },
            CellKind::Mux2 => match upper.as_str() {
                "S" | "SEL" | "S0" => Some(Pin::Sel),
                "A" | "I0" | "A0" => Some(Pin::Data(0)),
                "B" | "I1" | "A1" => Some(Pin::Data(1)),
                _ => None,
            },
            _ => DATA_PIN_NAMES
                .iter()
                .position(|p| *p == upper)
                .map(|i| Pin::Data(i as u8)),
        }
    }

    fn order_key(self) -> u8 {
        match self {
            Pin::Sel => 0,
            Pin::Data(i) => 1 + i,
            Pin::D => 100,
            Pin::Clk => 101,
            Pin::Rn => 102,
        }
    }
}

/// One cell instance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub name: String,
    pub kind: CellKind,
    /// Input connections in canonical pin order.
    pub inputs: Vec<(Pin, String)>,
    pub output: String,
}

impl Cell {
    pub fn new(
        name: impl Into<String>,
        kind: CellKind,
        inputs: Vec<(Pin, String)>,
        output: impl Into<String>,
    ) -> Self {
        let mut cell = Cell {
            name: name.into(),
            kind,
            inputs,
            output: output.into(),
        };
        cell.inputs.sort_by_key(|(p, _)| p.order_key());
        cell
    }

    /// Builds a combinational gate whose inputs take the canonical pins in order.
    pub fn gate<S: Into<String>>(
        name: impl Into<String>,
        kind: CellKind,
        inputs: impl IntoIterator<Item = S>,
        output: impl Into<String>,
    ) -> Self {
        let nets: Vec<String> = inputs.into_iter().map(Into::into).collect();
        let pins = kind.data_pins(nets.len());
        Cell::new(name, kind, pins.into_iter().zip(nets).collect(), output)
    }

    pub fn dff(
        name: impl Into<String>,
        d: impl Into<String>,
        clk: Option<String>,
        q: impl Into<String>,
    ) -> Self {
        let mut inputs = vec![(Pin::D, d.into())];
        if let Some(c) = clk {
            inputs.push((Pin::Clk, c));
        }
        Cell::new(name, CellKind::Dff, inputs, q)
    }

    pub fn input_nets(&self) -> impl Iterator<Item = &str> {
        self.inputs.iter().map(|(_, n)| n.as_str())
    }

    pub fn pin_net(&self, pin: Pin) -> Option<&str> {
        self.inputs
            .iter()
            .find(|(p, _)| *p == pin)
            .map(|(_, n)| n.as_str())
    }

    /// Data-side inputs used by logic evaluation (everything except the clock).
    pub fn logic_inputs(&self) -> impl Iterator<Item = (Pin, &str)> {
        self.inputs
            .iter()
            .filter(|(p, _)| *p != Pin::Clk)
            .map(|(p, n)| (*p, n.as_str()))
    }

    fn check_pins(&self) -> Result<(), NetlistError> {
        let (lo, hi) = self.kind.arity_bounds();
        let n = self.inputs.len();
        let mismatch = || NetlistError::PinCountMismatch {
            instance: self.name.clone(),
            kind: self.kind,
            expected: if lo == hi {
                lo.to_string()
            } else {
                format!("{lo}..={hi}")
            },
            found: n,
        };
        if n < lo || n > hi {
            return Err(mismatch());
        }
        let mut seen = HashSet::new();
        for (pin, _) in &self.inputs {
            if !seen.insert(*pin) {
                return Err(NetlistError::DuplicatePin {
                    instance: self.name.clone(),
                    pin: pin.name().to_string(),
                });
            }
        }
        let expected: Vec<Pin> = match self.kind {
            CellKind::Dff => {
                if self.pin_net(Pin::D).is_none() {
                    return Err(mismatch());
                }
                return self
                    .inputs
                    .iter()
                    .all(|(p, _)| matches!(p, Pin::D | Pin::Clk | Pin::Rn))
                    .then_some(())
                    .ok_or_else(mismatch);
            }
            kind => kind.data_pins(n),
        };
        let actual: Vec<Pin> = self.inputs.iter().map(|(p, _)| *p).collect();
        if actual != expected {
            return Err(mismatch());
        }
        Ok(())
    }
}

/// Who drives a net.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Driver {
    Input,
    Cell(usize),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetlistError {
    #[error("line {line}: syntax error: {message}")]
    Syntax { line: usize, message: String },
    #[error("net `{net}` has more than one driver")]
    MultiplyDriven { net: String },
    #[error("reference to undeclared net `{net}`{}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    UndeclaredNet { net: String, line: Option<usize> },
    #[error("line {line}: unsupported gate function `{name}`")]
    UnsupportedGate { name: String, line: usize },
    #[error("line {line}: unsupported construct `{construct}`")]
    UnsupportedConstruct { construct: String, line: usize },
    #[error("instance `{instance}` of {kind}: expected {expected} input pins, found {found}")]
    PinCountMismatch {
        instance: String,
        kind: CellKind,
        expected: String,
        found: usize,
    },
    #[error("instance `{instance}`: unknown pin `{pin}`")]
    UnknownPin { instance: String, pin: String },
    #[error("instance `{instance}`: pin `{pin}` connected twice")]
    DuplicatePin { instance: String, pin: String },
    #[error("duplicate instance name `{0}`")]
    DuplicateInstance(String),
    #[error("duplicate port `{0}`")]
    DuplicatePort(String),
    #[error("instance `{instance}` reads its own output net `{net}`")]
    SelfLoop { instance: String, net: String },
}

/// A flat gate-level module.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Netlist {
    pub name: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub cells: Vec<Cell>,
}

impl Netlist {
    pub fn new(name: impl Into<String>) -> Self {
        Netlist {
            name: name.into(),
            ..Default::default()
        }
    }

    /// Checks every structural invariant: unique instances and ports, pin
    /// arity, one driver per net, no dangling references, no self loops.
    pub fn validate(&self) -> Result<(), NetlistError> {
        let mut instances = HashSet::with_capacity(self.cells.len());
        for cell in &self.cells {
            if !instances.insert(cell.name.as_str()) {
                return Err(NetlistError::DuplicateInstance(cell.name.clone()));
            }
            cell.check_pins()?;
            if cell.input_nets().any(|n| n == cell.output) {
                return Err(NetlistError::SelfLoop {
                    instance: cell.name.clone(),
                    net: cell.output.clone(),
                });
            }
        }
        let drivers = self.driver_map()?;
        let mut outs = HashSet::new();
        for po in &self.outputs {
            if !outs.insert(po.as_str()) {
                return Err(NetlistError::DuplicatePort(po.clone()));
            }
            if !drivers.contains_key(po.as_str()) {
                return Err(NetlistError::UndeclaredNet {
                    net: po.clone(),
                    line: None,
                });
            }
        }
        for cell in &self.cells {
            for net in cell.input_nets() {
                if !drivers.contains_key(net) {
                    return Err(NetlistError::UndeclaredNet {
                        net: net.to_string(),
                        line: None,
                    });
                }
            }
        }
        Ok(())
    }

    /// Maps each driven net to its driver, failing on a second driver.
    pub fn driver_map(&self) -> Result<HashMap<&str, Driver>, NetlistError> {
        let mut drivers: HashMap<&str, Driver> =
            HashMap::with_capacity(self.inputs.len() + self.cells.len());
        for pi in &self.inputs {
            if drivers.insert(pi.as_str(), Driver::Input).is_some() {
                return Err(NetlistError::MultiplyDriven { net: pi.clone() });
            }
        }
        for (i, cell) in self.cells.iter().enumerate() {
            if drivers.insert(cell.output.as_str(), Driver::Cell(i)).is_some() {
                return Err(NetlistError::MultiplyDriven {
                    net: cell.output.clone(),
                });
            }
        }
        Ok(drivers)
    }

    /// All net names, sorted.
    pub fn nets(&self) -> BTreeSet<&str> {
        let mut nets: BTreeSet<&str> = self.inputs.iter().map(String::as_str).collect();
        nets.extend(self.outputs.iter().map(String::as_str));
        for cell in &self.cells {
            nets.insert(cell.output.as_str());
            nets.extend(cell.input_nets());
        }
        nets
    }

    pub fn cell(&self, name: &str) -> Option<&Cell> {
        self.cells.iter().find(|c| c.name == name)
    }

    /// Cell-kind histogram keyed by (kind, input count).
    pub fn cell_multiset(&self) -> BTreeMap<(CellKind, usize), usize> {
        let mut counts = BTreeMap::new();
        for cell in &self.cells {
            *counts.entry((cell.kind, cell.inputs.len())).or_insert(0) += 1;
        }
        counts
    }

    /// Driver-to-load connections as `(driver net, load net, input pin)`,
    /// sorted. Independent of instance names.
    pub fn connection_set(&self) -> Vec<(String, String, CellKind, Pin)> {
        let mut edges: Vec<_> = self
            .cells
            .iter()
            .flat_map(|c| {
                c.inputs
                    .iter()
                    .map(move |(p, n)| (n.clone(), c.output.clone(), c.kind, *p))
            })
            .collect();
        edges.sort();
        edges
    }
}
