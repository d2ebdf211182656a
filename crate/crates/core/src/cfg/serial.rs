//! Line-oriented ACFG text format.
//!
//! ```text
//! ACFG <name> <blocks> <edges>
//! B <id> <TAG,TAG,...>
//! S <id> <statement> -- @0x<addr>
//! E <src> <dst>
//! ```
//!
//! `#` starts a comment line. A block with no statements is pattern-only.

use std::fmt::Write as _;

use super::{Acfg, BasicBlock};
use crate::mail::{parse_statement, PatternTag};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SerialError {
    #[error("line {line}: expected `ACFG <name> <blocks> <edges>` header")]
    Header { line: usize },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: edge {src} -> {dst} names a block that does not exist")]
    DanglingEdge { line: usize, src: usize, dst: usize },
    #[error("graph `{name}`: header declares {declared} {what}, found {found}")]
    Count {
        name: String,
        what: &'static str,
        declared: usize,
        found: usize,
    },
}

pub fn serialize(cfg: &Acfg) -> String {
    let mut out = String::new();
    let name: String = cfg
        .name
        .chars()
        .map(|c| if c.is_whitespace() { '_' } else { c })
        .collect();
    let name = if name.is_empty() {
        "-".to_string()
    } else {
        name
    };
    let _ = writeln!(out, "ACFG {name} {} {}", cfg.blocks.len(), cfg.edges.len());
    for b in &cfg.blocks {
        let tags: Vec<&str> = b.pattern_seq.iter().map(|p| p.name()).collect();
        if tags.is_empty() {
            let _ = writeln!(out, "B {}", b.id);
        } else {
            let _ = writeln!(out, "B {} {}", b.id, tags.join(","));
        }
        for (addr, s) in &b.statements {
            let _ = writeln!(out, "S {} {s} -- @0x{addr:x}", b.id);
        }
    }
    for (s, d) in &cfg.edges {
        let _ = writeln!(out, "E {s} {d}");
    }
    out
}

pub fn deserialize(text: &str) -> Result<Acfg, SerialError> {
    let mut all = deserialize_many(text)?;
    match all.len() {
        1 => Ok(all.remove(0)),
        _ => Err(SerialError::Header { line: 1 }),
    }
}

pub fn deserialize_many(text: &str) -> Result<Vec<Acfg>, SerialError> {
    let mut graphs = Vec::new();
    let mut current: Option<(Acfg, usize, usize)> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let malformed = |message: &str| SerialError::Malformed {
            line,
            message: message.to_string(),
        };
        let (kind, rest) = trimmed
            .split_once(char::is_whitespace)
            .unwrap_or((trimmed, ""));
        let rest = rest.trim_start();
        if kind == "ACFG" {
            if let Some(done) = current.take() {
                graphs.push(finish(done)?);
            }
            let f: Vec<&str> = rest.split_whitespace().collect();
            let [name, nb, ne] = f[..] else {
                return Err(SerialError::Header { line });
            };
            let (Ok(nb), Ok(ne)) = (nb.parse(), ne.parse()) else {
                return Err(SerialError::Header { line });
            };
            let name = if name == "-" { "" } else { name };
            current = Some((Acfg::new(name), nb, ne));
            continue;
        }
        let Some((g, _, _)) = current.as_mut() else {
            return Err(SerialError::Header { line });
        };
        match kind {
            "B" => {
                let (id, tags) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
                let id: usize = id.parse().map_err(|_| malformed("bad block id"))?;
                if id != g.blocks.len() {
                    return Err(malformed(&format!(
                        "expected block {}, found {id}",
                        g.blocks.len()
                    )));
                }
                let pattern_seq = tags
                    .trim()
                    .split(',')
                    .filter(|t| !t.is_empty())
                    .map(|t| t.trim().parse::<PatternTag>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| malformed(&e.to_string()))?;
                g.blocks.push(BasicBlock {
                    id,
                    statements: Vec::new(),
                    pattern_seq,
                });
            }
            "S" => {
                let (id, body) = rest
                    .split_once(char::is_whitespace)
                    .ok_or_else(|| malformed("empty statement"))?;
                let id: usize = id.parse().map_err(|_| malformed("bad block id"))?;
                let block = g
                    .blocks
                    .last_mut()
                    .filter(|b| b.id == id)
                    .ok_or_else(|| malformed("statement outside its block"))?;
                let (stmt, addr) = body
                    .rsplit_once("-- @")
                    .ok_or_else(|| malformed("missing address"))?;
                let addr = addr.trim();
                let addr = u64::from_str_radix(addr.trim_start_matches("0x"), 16)
                    .map_err(|_| malformed("bad address"))?;
                let mut stmt = parse_statement(stmt).map_err(|e| malformed(&e.to_string()))?;
                let k = block.statements.len();
                stmt.pattern = *block
                    .pattern_seq
                    .get(k)
                    .ok_or_else(|| malformed("more statements than tags"))?;
                block.statements.push((addr, stmt));
            }
            "E" => {
                let f: Vec<&str> = rest.split_whitespace().collect();
                let [s, d] = f[..] else {
                    return Err(malformed("expected `E <src> <dst>`"));
                };
                let (Ok(src), Ok(dst)) = (s.parse(), d.parse()) else {
                    return Err(malformed("bad edge"));
                };
                g.edges.push((src, dst));
                if let Some((_, nb, _)) = &current {
                    if src >= *nb || dst >= *nb {
                        return Err(SerialError::DanglingEdge { line, src, dst });
                    }
                }
            }
            other => return Err(malformed(&format!("unknown record `{other}`"))),
        }
    }
    if let Some(done) = current.take() {
        graphs.push(finish(done)?);
    }
    Ok(graphs)
}

fn finish((mut g, nb, ne): (Acfg, usize, usize)) -> Result<Acfg, SerialError> {
    let count = |what, declared, found| SerialError::Count {
        name: g.name.clone(),
        what,
        declared,
        found,
    };
    if g.blocks.len() != nb {
        return Err(count("blocks", nb, g.blocks.len()));
    }
    if g.edges.len() != ne {
        return Err(count("edges", ne, g.edges.len()));
    }
    for b in &g.blocks {
        if !b.statements.is_empty() && b.statements.len() != b.pattern_seq.len() {
            return Err(SerialError::Malformed {
                line: 0,
                message: format!(
                    "block {} has {} statements but {} tags",
                    b.id,
                    b.statements.len(),
                    b.pattern_seq.len()
                ),
            });
        }
    }
    g.edges.sort_unstable();
    g.edges.dedup();
    Ok(g)
}

/// Graphviz rendering with one box per block labelled by its pattern sequence.
pub fn to_dot(cfg: &Acfg) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph \"{}\" {{", cfg.name.replace('"', "\\\""));
    let _ = writeln!(out, "  node [shape=box, fontname=monospace];");
    for b in &cfg.blocks {
        let mut label = format!("B{}", b.id);
        if let Some(a) = b.start_addr() {
            let _ = write!(label, " @0x{a:x}");
        }
        for p in &b.pattern_seq {
            let _ = write!(label, "\\n{p}");
        }
        let _ = writeln!(out, "  b{} [label=\"{label}\"];", b.id);
    }
    for (s, d) in &cfg.edges {
        let _ = writeln!(out, "  b{s} -> b{d};");
    }
    out.push_str("}\n");
    out
}
