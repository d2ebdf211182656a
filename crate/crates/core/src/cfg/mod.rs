//! Basic blocks and annotated control flow graphs.

mod loops;
mod normalize;
mod serial;

pub use loops::{find_loops, Loop, LoopInfo};
pub use normalize::normalize;
pub use serial::{deserialize, deserialize_many, serialize, to_dot, SerialError};

use std::collections::HashMap;

use crate::mail::{FunctionSpan, MailProgram, MailStatement, PatternTag, StatementKind};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BasicBlock {
    pub id: usize,
    /// Statements with their source addresses; function markers excluded.
    pub statements: Vec<(u64, MailStatement)>,
    pub pattern_seq: Vec<PatternTag>,
}

impl BasicBlock {
    pub fn start_addr(&self) -> Option<u64> {
        self.statements.first().map(|(a, _)| *a)
    }

    pub fn end_addr(&self) -> Option<u64> {
        self.statements.last().map(|(a, _)| *a)
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty() && self.pattern_seq.is_empty()
    }

    /// Ends in a control statement (judged by pattern when there is no text).
    pub fn ends_in_control(&self) -> bool {
        match self.statements.last() {
            Some((_, s)) => matches!(s.kind, StatementKind::Control(_)),
            None => matches!(
                self.pattern_seq.last(),
                Some(PatternTag::Control | PatternTag::ControlConstant)
            ),
        }
    }
}

/// Annotated control flow graph of one function. Block 0 is the entry.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Acfg {
    pub name: String,
    pub blocks: Vec<BasicBlock>,
    /// Sorted, without duplicates.
    pub edges: Vec<(usize, usize)>,
}

impl Acfg {
    pub const ENTRY: usize = 0;

    pub fn new(name: impl Into<String>) -> Self {
        Acfg {
            name: name.into(),
            ..Default::default()
        }
    }

    /// Pattern-only graph, mostly for tests and synthetic corpora.
    pub fn from_patterns(
        name: impl Into<String>,
        blocks: Vec<Vec<PatternTag>>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        let blocks = blocks
            .into_iter()
            .enumerate()
            .map(|(id, pattern_seq)| BasicBlock {
                id,
                statements: Vec::new(),
                pattern_seq,
            })
            .collect();
        let mut g = Acfg {
            name: name.into(),
            blocks,
            edges: edges.into_iter().collect(),
        };
        g.edges.sort_unstable();
        g.edges.dedup();
        g
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn successors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.blocks.len()];
        for &(s, d) in &self.edges {
            out[s].push(d);
        }
        out
    }

    pub fn predecessors(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.blocks.len()];
        for &(s, d) in &self.edges {
            out[d].push(s);
        }
        out
    }

    pub fn has_edge(&self, s: usize, d: usize) -> bool {
        self.edges.binary_search(&(s, d)).is_ok()
    }

    /// Disjoint union, renumbering `other` after `self`; keeps `self`'s name.
    pub fn union(&self, other: &Acfg) -> Acfg {
        let offset = self.blocks.len();
        let mut g = self.clone();
        g.blocks.extend(other.blocks.iter().cloned().map(|mut b| {
            b.id += offset;
            b
        }));
        g.edges
            .extend(other.edges.iter().map(|&(s, d)| (s + offset, d + offset)));
        g
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Diagnostic {
    /// A branch target inside the function that is not an instruction start.
    OffBoundaryTarget { at: u64, target: u64 },
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Diagnostic::OffBoundaryTarget { at, target } => write!(
                f,
                "branch at {at:#x} targets {target:#x}, which is not an instruction boundary; treated as unknown"
            ),
        }
    }
}

/// How control leaves a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Exit {
    pub branch: Option<usize>,
    pub falls_through: bool,
}

/// Blocks of one function plus the resolved branch structure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub name: String,
    pub blocks: Vec<BasicBlock>,
    pub exits: Vec<Exit>,
    pub diagnostics: Vec<Diagnostic>,
    /// Every source address of the function with its block; instructions
    /// without statements belong to the block of the next statement.
    pub address_blocks: Vec<(u64, Option<usize>)>,
}

impl Partition {
    pub fn block_of(&self, addr: u64) -> Option<usize> {
        self.address_blocks
            .iter()
            .find(|(a, _)| *a == addr)
            .and_then(|(_, b)| *b)
    }
}

/// Splits one function into basic blocks.
///
/// Leaders are the first statement, the first statement at each direct
/// branch target inside the function, and the statement after every jump,
/// halt, or conditional jump. Calls and conditional assignments do not end
/// blocks.
pub fn partition_blocks(program: &MailProgram, function: &FunctionSpan) -> Partition {
    let lines = &program.lines[function.lines.clone()];
    let mut items: Vec<(usize, u64, &MailStatement)> = Vec::new();
    let mut first_item_at_line = vec![0usize; lines.len() + 1];
    for (l, line) in lines.iter().enumerate() {
        first_item_at_line[l] = items.len();
        items.extend(
            line.statements
                .iter()
                .filter(|s| !s.is_marker())
                .map(|s| (l, line.addr, s)),
        );
    }
    first_item_at_line[lines.len()] = items.len();

    let mut line_of_addr: HashMap<u64, usize> = HashMap::new();
    for (l, line) in lines.iter().enumerate() {
        line_of_addr.entry(line.addr).or_insert(l);
    }
    let (lo, hi) = (function.start, function.end);
    let mut diagnostics = Vec::new();
    // Ok(Some(item)) resolved, Ok(None) outside or past the last statement
    let mut resolve = |at: u64, target: u64| -> Option<usize> {
        if target < lo || target > hi {
            log::debug!("{}: branch at {at:#x} leaves the function", function.name);
            return None;
        }
        match line_of_addr.get(&target) {
            Some(&l) => Some(first_item_at_line[l]).filter(|&i| i < items.len()),
            None => {
                diagnostics.push(Diagnostic::OffBoundaryTarget { at, target });
                None
            }
        }
    };

    let mut leader = vec![false; items.len()];
    let mut branch_item: Vec<Option<usize>> = vec![None; items.len()];
    if !items.is_empty() {
        leader[0] = true;
    }
    for (i, &(_, addr, stmt)) in items.iter().enumerate() {
        if let Some(target) = stmt.branch_target() {
            branch_item[i] = resolve(addr, target);
            if let Some(j) = branch_item[i] {
                leader[j] = true;
            }
        }
        if stmt.ends_block() && i + 1 < items.len() {
            leader[i + 1] = true;
        }
    }

    let mut blocks: Vec<BasicBlock> = Vec::new();
    let mut block_of_item = vec![0usize; items.len()];
    for (i, &(_, addr, stmt)) in items.iter().enumerate() {
        if leader[i] {
            blocks.push(BasicBlock {
                id: blocks.len(),
                ..Default::default()
            });
        }
        let b = blocks.last_mut().expect("item 0 is a leader");
        b.statements.push((addr, stmt.clone()));
        b.pattern_seq.push(stmt.pattern);
        block_of_item[i] = b.id;
    }

    let mut exits = Vec::with_capacity(blocks.len());
    let mut last_item = 0usize;
    for b in &blocks {
        last_item += b.statements.len();
        let i = last_item - 1;
        let stmt = items[i].2;
        let has_next = b.id + 1 < blocks.len();
        exits.push(Exit {
            branch: branch_item[i].map(|j| block_of_item[j]),
            falls_through: has_next && !stmt.is_unconditional_exit(),
        });
    }

    let address_blocks = lines
        .iter()
        .enumerate()
        .map(|(l, line)| {
            let next = first_item_at_line[l];
            let block = if next < items.len() {
                Some(block_of_item[next])
            } else {
                items.len().checked_sub(1).map(|i| block_of_item[i])
            };
            (line.addr, block)
        })
        .collect();

    Partition {
        name: function.name.clone(),
        blocks,
        exits,
        diagnostics,
        address_blocks,
    }
}

/// Edges from fall-through and resolved branches.
pub fn build_cfg(partition: &Partition) -> Acfg {
    let mut edges = Vec::new();
    for (b, exit) in partition.exits.iter().enumerate() {
        if let Some(t) = exit.branch {
            edges.push((b, t));
        }
        if exit.falls_through {
            edges.push((b, b + 1));
        }
    }
    edges.sort_unstable();
    edges.dedup();
    Acfg {
        name: partition.name.clone(),
        blocks: partition.blocks.clone(),
        edges,
    }
}

/// Recomputes every block's pattern sequence from its statements. Blocks
/// carrying only a pattern sequence keep it.
pub fn annotate(mut cfg: Acfg) -> Acfg {
    for b in &mut cfg.blocks {
        if !b.statements.is_empty() {
            b.pattern_seq = b.statements.iter().map(|(_, s)| s.pattern).collect();
        }
    }
    cfg
}

/// One annotated ACFG per function, optionally normalized.
pub fn function_acfgs(program: &MailProgram, normalized: bool) -> Vec<Acfg> {
    program
        .functions
        .iter()
        .map(|f| {
            let partition = partition_blocks(program, f);
            for d in &partition.diagnostics {
                log::warn!("{}: {d}", f.name);
            }
            let g = annotate(build_cfg(&partition));
            if normalized {
                normalize(&g)
            } else {
                g
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mail::parse_mail;

    fn cfg_of(text: &str) -> (Partition, Acfg) {
        let p = parse_mail(text).unwrap();
        let part = partition_blocks(&p, &p.functions[0]);
        let g = annotate(build_cfg(&part));
        (part, g)
    }

    fn wrap(body: &str) -> String {
        let mut out = String::from("start_function_0; -- @0x0 f\n");
        for (i, line) in body.lines().enumerate() {
            out.push_str(&format!("{line} -- @0x{:x}\n", (i + 1) * 0x10));
        }
        out.push_str(&format!(
            "end_function_0; -- @0x{:x}\n",
            body.lines().count() * 0x10
        ));
        out
    }

    #[test]
    fn straight_line_is_one_block() {
        let (_, g) = cfg_of(&wrap("EAX = 0x1;\nEBX = EAX;\ncall 0x400;\nECX = EBX;"));
        assert_eq!(g.blocks.len(), 1);
        assert!(g.edges.is_empty());
        assert_eq!(g.blocks[0].pattern_seq.len(), 4);
    }

    #[test]
    fn unknown_jump_splits_without_edge() {
        let (_, g) = cfg_of(&wrap("EAX = 0x1;\njmp UNKNOWN;\nEBX = EAX;"));
        assert_eq!(g.blocks.len(), 2);
        assert!(g.edges.is_empty());
    }

    #[test]
    fn diamond_has_four_edges() {
        let body = "compare(EAX, 0x0);\nif (ZF == 1) jmp 0x50;\nEAX = 0x1;\njmp 0x60;\nEAX = 0x2;\nEBX = EAX;";
        let (_, g) = cfg_of(&wrap(body));
        assert_eq!(g.blocks.len(), 4);
        assert_eq!(g.edges, vec![(0, 1), (0, 2), (1, 3), (2, 3)]);
    }

    #[test]
    fn off_boundary_target_is_diagnosed() {
        let (part, g) = cfg_of(&wrap("if (ZF == 1) jmp 0x15;\nEAX = 0x1;"));
        assert_eq!(
            part.diagnostics,
            vec![Diagnostic::OffBoundaryTarget {
                at: 0x10,
                target: 0x15
            }]
        );
        assert_eq!(g.edges, vec![(0, 1)]);
    }

    #[test]
    fn target_on_statementless_address_resolves_forward() {
        let text = "start_function_0; -- @0x0 f\njmp 0x20; -- @0x10\n-- @0x20\nEAX = 0x1; -- @0x30\nend_function_0; -- @0x30\n";
        let (part, g) = cfg_of(text);
        assert_eq!(g.edges, vec![(0, 1)]);
        assert_eq!(part.block_of(0x20), Some(1));
    }

    #[test]
    fn annotate_block_21_triple() {
        let (_, g) = cfg_of(&wrap(
            "EAX = EAX + -0x1;\ncompare(EAX, 0x0);\nif (ZF == 1) jmp 0x401267;",
        ));
        assert_eq!(
            g.blocks[0].pattern_seq,
            vec![
                PatternTag::AssignConstant,
                PatternTag::LibCallConstant,
                PatternTag::ControlConstant
            ]
        );
        assert_eq!(annotate(g.clone()), g);
    }

    #[test]
    fn empty_function_has_no_blocks() {
        let (_, g) = cfg_of("start_function_0;\nend_function_0;");
        assert!(g.blocks.is_empty() && g.edges.is_empty());
    }
}
