//! ISCAS `.bench` reader.

use std::collections::HashMap;

use super::{Cell, CellKind, Netlist, NetlistError, Pin};

/// Parses ISCAS'85/'89 `.bench` text.
///
/// `DFF(d)` lines become clockless registers; all such registers share the
/// implicit global clock of the format.
pub fn parse_bench(text: &str) -> Result<Netlist, NetlistError> {
    let mut netlist = Netlist::new("bench");
    // net -> first line that references it, for error reporting
    let mut first_use: HashMap<String, usize> = HashMap::new();
    let mut po_lines: Vec<(String, usize)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let syntax = |message: &str| NetlistError::Syntax {
            line: line_no,
            message: message.to_string(),
        };

        if let Some(eq) = line.find('=') {
            let lhs = line[..eq].trim();
            let rhs = line[eq + 1..].trim();
            check_name(lhs).map_err(|_| syntax("invalid net name on left-hand side"))?;
            let (func, args) = split_call(rhs).ok_or_else(|| syntax("expected FUNC(args)"))?;
            let (kind, declared_arity) =
                CellKind::from_name(func).ok_or_else(|| NetlistError::UnsupportedGate {
                    name: func.to_string(),
                    line: line_no,
                })?;
            for a in &args {
                check_name(a).map_err(|_| syntax("invalid net name in argument list"))?;
                first_use.entry(a.to_string()).or_insert(line_no);
            }
            if let Some(n) = declared_arity {
                if n != args.len() {
                    return Err(NetlistError::PinCountMismatch {
                        instance: lhs.to_string(),
                        kind,
                        expected: n.to_string(),
                        found: args.len(),
                    });
                }
            }
            let name = format!("g_{lhs}");
            let cell = match kind {
                CellKind::Dff => {
                    let mut inputs = Vec::new();
                    for (pin, net) in [Pin::D, Pin::Clk, Pin::Rn].into_iter().zip(args.iter()) {
                        inputs.push((pin, net.to_string()));
                    }
                    if args.len() > 3 || args.is_empty() {
                        return Err(NetlistError::PinCountMismatch {
                            instance: name,
                            kind,
                            expected: "1..=3".into(),
                            found: args.len(),
                        });
                    }
                    Cell::new(name, kind, inputs, lhs)
                }
                _ => Cell::gate(name, kind, args.iter().copied(), lhs),
            };
            netlist.cells.push(cell);
        } else if let Some((func, args)) = split_call(line) {
            let port = match args.as_slice() {
                [one] => one.to_string(),
                _ => return Err(syntax("port declaration takes exactly one net")),
            };
            check_name(&port).map_err(|_| syntax("invalid port name"))?;
            match func.to_ascii_uppercase().as_str() {
                "INPUT" => netlist.inputs.push(port),
                "OUTPUT" => {
                    po_lines.push((port.clone(), line_no));
                    netlist.outputs.push(port);
                }
                other => return Err(syntax(&format!("unknown declaration `{other}`"))),
            }
        } else {
            return Err(syntax("unrecognized line"));
        }
    }

    // Surface undeclared references with their line before generic validation.
    let drivers = netlist.driver_map()?;
    let mut undeclared: Vec<(&String, &usize)> = first_use
        .iter()
        .filter(|(net, _)| !drivers.contains_key(net.as_str()))
        .collect();
    undeclared.sort_by_key(|(net, line)| (**line, (*net).clone()));
    if let Some((net, line)) = undeclared.first() {
        return Err(NetlistError::UndeclaredNet {
            net: (*net).clone(),
            line: Some(**line),
        });
    }
    for (po, line) in &po_lines {
        if !drivers.contains_key(po.as_str()) {
            return Err(NetlistError::UndeclaredNet {
                net: po.clone(),
                line: Some(*line),
            });
        }
    }
    netlist.validate()?;
    Ok(netlist)
}

fn split_call(s: &str) -> Option<(&str, Vec<&str>)> {
    let open = s.find('(')?;
    let close = s.rfind(')')?;
    if close < open || !s[close + 1..].trim().is_empty() {
        return None;
    }
    let func = s[..open].trim();
    if func.is_empty() {
        return None;
    }
    let inner = s[open + 1..close].trim();
    let args = if inner.is_empty() {
        Vec::new()
    } else {
        inner.split(',').map(str::trim).collect()
    };
    Some((func, args))
}

fn check_name(s: &str) -> Result<(), ()> {
    if s.is_empty()
        || s
            .chars()
            .any(|c| c.is_whitespace() || matches!(c, '(' | ')' | ',' | '=' | '#'))
    {
        Err(())
    } else {
        Ok(())
    }
}
