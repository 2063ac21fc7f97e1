//! Structural-Verilog subset: one module, scalar `input`/`output`/`wire`
//! declarations and cell instantiations with named or positional pins.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use super::{Cell, CellKind, Netlist, NetlistError, Pin};

const UNSUPPORTED_KEYWORDS: &[&str] = &[
    "always",
    "assign",
    "initial",
    "reg",
    "parameter",
    "localparam",
    "generate",
    "function",
    "task",
    "supply0",
    "supply1",
    "tri",
    "defparam",
    "specify",
    "inout",
    "integer",
];

const KEYWORDS: &[&str] = &[
    "module", "endmodule", "input", "output", "wire", "always", "assign", "initial", "reg",
    "parameter", "localparam", "generate", "function", "task", "supply0", "supply1", "tri",
    "defparam", "specify", "inout", "integer", "begin", "end", "if", "else", "case", "posedge",
    "negedge", "or", "and", "not", "buf", "nand", "nor", "xor", "xnor",
];

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Punct(char),
    Other(String),
}

struct Token {
    tok: Tok,
    line: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>, NetlistError> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    let mut line = 1;
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            line += 1;
            i += 1;
        } else if c.is_whitespace() {
            i += 1;
        } else if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
        } else if c == '/' && chars.get(i + 1) == Some(&'*') {
            let start = line;
            i += 2;
            loop {
                if i + 1 >= chars.len() {
                    return Err(NetlistError::Syntax {
                        line: start,
                        message: "unterminated block comment".into(),
                    });
                }
                if chars[i] == '*' && chars[i + 1] == '/' {
                    i += 2;
                    break;
                }
                if chars[i] == '\n' {
                    line += 1;
                }
                i += 1;
            }
        } else if c == '\\' {
            let start = i + 1;
            i += 1;
            while i < chars.len() && !chars[i].is_whitespace() {
                i += 1;
            }
            if i == start {
                return Err(NetlistError::Syntax {
                    line,
                    message: "empty escaped identifier".into(),
                });
            }
            tokens.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                line,
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len()
                && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '$')
            {
                i += 1;
            }
            tokens.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                line,
            });
        } else if matches!(c, '(' | ')' | ',' | ';' | '.') {
            tokens.push(Token {
                tok: Tok::Punct(c),
                line,
            });
            i += 1;
        } else {
            // Numbers, operators, brackets: only meaningful as unsupported constructs.
            let start = i;
            i += 1;
            if c.is_ascii_digit() || c == '\'' {
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '\'') {
                    i += 1;
                }
            }
            tokens.push(Token {
                tok: Tok::Other(chars[start..i].iter().collect()),
                line,
            });
        }
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn line(&self) -> usize {
        self.tokens
            .get(self.pos)
            .or_else(|| self.tokens.last())
            .map(|t| t.line)
            .unwrap_or(1)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.pos).map(|t| t.tok.clone());
        self.pos += 1;
        t
    }

    fn syntax(&self, message: impl Into<String>) -> NetlistError {
        NetlistError::Syntax {
            line: self.line(),
            message: message.into(),
        }
    }

    fn unsupported(&self, construct: impl Into<String>) -> NetlistError {
        NetlistError::UnsupportedConstruct {
            construct: construct.into(),
            line: self.line(),
        }
    }

    fn expect_punct(&mut self, c: char) -> Result<(), NetlistError> {
        match self.peek() {
            Some(Tok::Punct(p)) if *p == c => {
                self.pos += 1;
                Ok(())
            }
            Some(Tok::Other(o)) => Err(self.unsupported(o.clone())),
            _ => Err(self.syntax(format!("expected `{c}`"))),
        }
    }

    fn ident(&mut self) -> Result<String, NetlistError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            Some(Tok::Other(o)) => Err(self.unsupported(o.clone())),
            _ => Err(self.syntax("expected identifier")),
        }
    }

    /// `name (, name)* ;` for a declaration whose keyword was consumed.
    fn name_list(&mut self, terminator: char) -> Result<Vec<String>, NetlistError> {
        let mut names = vec![self.ident()?];
        loop {
            match self.peek() {
                Some(Tok::Punct(',')) => {
                    self.pos += 1;
                    names.push(self.ident()?);
                }
                Some(Tok::Punct(c)) if *c == terminator => {
                    self.pos += 1;
                    return Ok(names);
                }
                Some(Tok::Other(o)) => return Err(self.unsupported(o.clone())),
                _ => return Err(self.syntax(format!("expected `,` or `{terminator}`"))),
            }
        }
    }
}

#[derive(Default)]
struct Decls {
    inputs: Vec<String>,
    outputs: Vec<String>,
    wires: Vec<String>,
}

/// Parses a single-module structural netlist.
pub fn parse_structural_verilog(text: &str) -> Result<Netlist, NetlistError> {
    let mut p = Parser {
        tokens: tokenize(text)?,
        pos: 0,
    };
    match p.next() {
        Some(Tok::Ident(k)) if k == "module" => {}
        Some(Tok::Ident(k)) if UNSUPPORTED_KEYWORDS.contains(&k.as_str()) => {
            p.pos -= 1;
            return Err(p.unsupported(k));
        }
        _ => {
            p.pos = p.pos.saturating_sub(1);
            return Err(p.syntax("expected `module`"));
        }
    }
    let name = p.ident()?;
    let mut decls = Decls::default();
    if let Some(Tok::Other(o)) = p.peek() {
        if o == "#" {
            return Err(p.unsupported("module parameters"));
        }
    }
    p.expect_punct('(')?;
    // Port list: plain names, or ANSI-style `input a, output b`.
    let mut direction: Option<String> = None;
    if !matches!(p.peek(), Some(Tok::Punct(')'))) {
        loop {
            let id = p.ident()?;
            match id.as_str() {
                "input" | "output" => {
                    direction = Some(id);
                    let net = p.ident()?;
                    push_decl(&mut decls, direction.as_deref(), net);
                }
                "wire" => {
                    let net = p.ident()?;
                    push_decl(&mut decls, direction.as_deref(), net);
                }
                k if UNSUPPORTED_KEYWORDS.contains(&k) => {
                    p.pos -= 1;
                    return Err(p.unsupported(k));
                }
                _ => push_decl(&mut decls, direction.as_deref(), id),
            }
            match p.next() {
                Some(Tok::Punct(',')) => continue,
                Some(Tok::Punct(')')) => break,
                Some(Tok::Other(o)) => {
                    p.pos -= 1;
                    return Err(p.unsupported(o));
                }
                _ => {
                    p.pos -= 1;
                    return Err(p.syntax("malformed port list"));
                }
            }
        }
    } else {
        p.pos += 1;
    }
    p.expect_punct(';')?;

    let mut cells: Vec<(Cell, usize)> = Vec::new();
    loop {
        let line = p.line();
        let Some(tok) = p.next() else {
            return Err(p.syntax("missing `endmodule`"));
        };
        let word = match tok {
            Tok::Ident(w) => w,
            Tok::Other(o) => {
                p.pos -= 1;
                return Err(p.unsupported(o));
            }
            Tok::Punct(c) => {
                p.pos -= 1;
                return Err(p.syntax(format!("unexpected `{c}`")));
            }
        };
        match word.as_str() {
            "endmodule" => break,
            "input" => decls.inputs.extend(p.name_list(';')?),
            "output" => decls.outputs.extend(p.name_list(';')?),
            "wire" => decls.wires.extend(p.name_list(';')?),
            "module" => {
                p.pos -= 1;
                return Err(p.unsupported("multiple modules"));
            }
            k if UNSUPPORTED_KEYWORDS.contains(&k) => {
                p.pos -= 1;
                return Err(p.unsupported(k));
            }
            cell_type => {
                let cell = parse_instance(&mut p, cell_type, line)?;
                cells.push((cell, line));
            }
        }
    }
    if p.peek().is_some() {
        return Err(p.unsupported("content after endmodule"));
    }

    let mut declared: HashSet<&str> = HashSet::new();
    for net in decls.inputs.iter().chain(&decls.outputs).chain(&decls.wires) {
        declared.insert(net.as_str());
    }
    for (cell, line) in &cells {
        for net in cell.input_nets().chain(std::iter::once(cell.output.as_str())) {
            if !declared.contains(net) {
                return Err(NetlistError::UndeclaredNet {
                    net: net.to_string(),
                    line: Some(*line),
                });
            }
        }
    }
    let netlist = Netlist {
        name,
        inputs: decls.inputs,
        outputs: decls.outputs,
        cells: cells.into_iter().map(|(c, _)| c).collect(),
    };
    netlist.validate()?;
    Ok(netlist)
}

fn push_decl(decls: &mut Decls, direction: Option<&str>, net: String) {
    match direction {
        Some("input") => decls.inputs.push(net),
        Some("output") => decls.outputs.push(net),
        // Non-ANSI port names are declared again in the body.
        _ => {}
    }
}

fn parse_instance(p: &mut Parser, cell_type: &str, line: usize) -> Result<Cell, NetlistError> {
    let Some((kind, declared_arity)) = CellKind::from_name(cell_type) else {
        return Err(NetlistError::UnsupportedConstruct {
            construct: format!("cell type {cell_type}"),
            line,
        });
    };
    if let Some(Tok::Other(o)) = p.peek() {
        if o == "#" {
            return Err(p.unsupported("parameterized instance"));
        }
    }
    let instance = p.ident()?;
    p.expect_punct('(')?;

    let mut named: Vec<(String, Option<String>)> = Vec::new();
    let mut positional: Vec<String> = Vec::new();
    if matches!(p.peek(), Some(Tok::Punct(')'))) {
        p.pos += 1;
    } else {
        loop {
            match p.peek() {
                Some(Tok::Punct('.')) => {
                    p.pos += 1;
                    let pin = p.ident()?;
                    p.expect_punct('(')?;
                    let net = if matches!(p.peek(), Some(Tok::Punct(')'))) {
                        None
                    } else {
                        Some(p.ident()?)
                    };
                    p.expect_punct(')')?;
                    named.push((pin, net));
                }
                Some(Tok::Ident(_)) => positional.push(p.ident()?),
                Some(Tok::Other(o)) => {
                    let o = o.clone();
                    return Err(p.unsupported(if o.contains('\'') || o.starts_with(|c: char| c.is_ascii_digit()) {
                        format!("constant {o}")
                    } else {
                        o
                    }));
                }
                _ => return Err(p.syntax("malformed connection list")),
            }
            match p.next() {
                Some(Tok::Punct(',')) => continue,
                Some(Tok::Punct(')')) => break,
                Some(Tok::Other(o)) => {
                    p.pos -= 1;
                    return Err(p.unsupported(o));
                }
                _ => {
                    p.pos -= 1;
                    return Err(p.syntax("expected `,` or `)` in connection list"));
                }
            }
        }
    }
    p.expect_punct(';')?;
    if !named.is_empty() && !positional.is_empty() {
        return Err(NetlistError::Syntax {
            line,
            message: format!("instance `{instance}` mixes named and positional pins"),
        });
    }

    let mut output: Option<String> = None;
    let mut inputs: Vec<(Pin, String)> = Vec::new();
    if positional.is_empty() {
        for (pin_name, net) in named {
            let Some(net) = net else { continue };
            let upper = pin_name.to_ascii_uppercase();
            let is_output = if kind == CellKind::Dff {
                upper == "Q"
            } else {
                matches!(upper.as_str(), "Y" | "Z" | "OUT")
            };
            if is_output {
                if output.replace(net).is_some() {
                    return Err(NetlistError::DuplicatePin {
                        instance: instance.clone(),
                        pin: pin_name,
                    });
                }
                continue;
            }
            let pin = Pin::parse(kind, &pin_name).ok_or_else(|| NetlistError::UnknownPin {
                instance: instance.clone(),
                pin: pin_name.clone(),
            })?;
            inputs.push((pin, net));
        }
    } else {
        let mut it = positional.into_iter();
        output = it.next();
        let nets: Vec<String> = it.collect();
        let pins = match kind {
            CellKind::Dff => vec![Pin::D, Pin::Clk, Pin::Rn],
            _ => kind.data_pins(nets.len()),
        };
        if nets.len() > pins.len() {
            return Err(NetlistError::PinCountMismatch {
                instance,
                kind,
                expected: pins.len().to_string(),
                found: nets.len(),
            });
        }
        inputs = pins.into_iter().zip(nets).collect();
    }
    let Some(output) = output else {
        return Err(NetlistError::PinCountMismatch {
            instance,
            kind,
            expected: format!("an output pin ({})", kind.output_pin_name()),
            found: 0,
        });
    };
    if let Some(n) = declared_arity {
        if n != inputs.len() {
            return Err(NetlistError::PinCountMismatch {
                instance,
                kind,
                expected: n.to_string(),
                found: inputs.len(),
            });
        }
    }
    let cell = Cell::new(instance, kind, inputs, output);
    cell.check_pins()?;
    Ok(cell)
}

fn is_plain_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '$') && !KEYWORDS.contains(&s)
}

fn ident(s: &str) -> String {
    if is_plain_identifier(s) {
        s.to_string()
    } else {
        format!("\\{s} ")
    }
}

fn type_name(cell: &Cell) -> String {
    match cell.kind {
        CellKind::Inv | CellKind::Buf | CellKind::Mux2 | CellKind::Dff => cell.kind.name().into(),
        kind => format!("{}{}", kind.name(), cell.inputs.len()),
    }
}

/// Writes `netlist` as structural Verilog. Output is a pure function of the
/// netlist contents: ports in declaration order, wires and cells sorted.
pub fn write_structural_verilog(netlist: &Netlist) -> String {
    let mut out = String::new();
    let ports: Vec<String> = netlist
        .inputs
        .iter()
        .chain(netlist.outputs.iter().filter(|o| !netlist.inputs.contains(o)))
        .map(|n| ident(n))
        .collect();
    let _ = writeln!(out, "module {} ({});", ident(&netlist.name), ports.join(", "));
    for pi in &netlist.inputs {
        let _ = writeln!(out, "  input {};", ident(pi));
    }
    let pis: HashSet<&str> = netlist.inputs.iter().map(String::as_str).collect();
    for po in &netlist.outputs {
        if !pis.contains(po.as_str()) {
            let _ = writeln!(out, "  output {};", ident(po));
        }
    }
    let ports: HashSet<&str> = netlist
        .inputs
        .iter()
        .chain(&netlist.outputs)
        .map(String::as_str)
        .collect();
    let wires: BTreeSet<&str> = netlist
        .nets()
        .into_iter()
        .filter(|n| !ports.contains(n))
        .collect();
    for w in wires {
        let _ = writeln!(out, "  wire {};", ident(w));
    }
    let mut cells: Vec<&Cell> = netlist.cells.iter().collect();
    cells.sort_by(|a, b| a.name.cmp(&b.name));
    for cell in cells {
        let mut conns: Vec<String> = cell
            .inputs
            .iter()
            .map(|(pin, net)| format!(".{}({})", pin.name(), ident(net)))
            .collect();
        conns.push(format!(".{}({})", cell.kind.output_pin_name(), ident(&cell.output)));
        let _ = writeln!(
            out,
            "  {} {} ({});",
            type_name(cell),
            ident(&cell.name),
            conns.join(", ")
        );
    }
    out.push_str("endmodule\n");
    out
}
