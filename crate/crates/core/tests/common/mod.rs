//! Shared generators and fixture helpers for the integration tests.

#![allow(dead_code)]

use std::path::PathBuf;

use mailkit::cfg::Acfg;
use mailkit::mail::*;
use proptest::prelude::*;
use proptest::sample::select;

pub fn fixture(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

const NAMES: [&str; 10] = [
    "EAX", "RBX", "R9D", "ECX", "LR", "R0", "XMM1", "ST0", "AL", "R12",
];

pub fn register() -> BoxedStrategy<Register> {
    prop_oneof![
        6 => select(&NAMES[..]).prop_map(Register::named),
        1 => select(&Flag::ALL[..]).prop_map(Register::Flag),
        1 => Just(Register::Eflags),
        1 => Just(Register::Sp),
        1 => (0u32..16).prop_map(Register::Gr),
        1 => (0u32..16).prop_map(Register::Fr),
        1 => Just(Register::Pair("FS".into(), "RAX".into())),
    ]
    .boxed()
}

fn hex_digits(v: u64) -> u8 {
    format!("{v:x}").len() as u8
}

/// Hex constants are either unpadded or padded with at least one leading zero.
pub fn constant() -> impl Strategy<Value = Constant> {
    prop_oneof![
        3 => (-0xffffi64..0x1_0000_0000, 0u8..3).prop_map(|(value, pad)| {
            let width = if pad == 0 { 1 } else { hex_digits(value.unsigned_abs()) + pad };
            Constant { value, format: NumFormat::Hex { width } }
        }),
        1 => (-1000i64..1000).prop_map(Constant::decimal),
    ]
}

fn arith_op() -> impl Strategy<Value = MathOp> {
    select(
        &[
            MathOp::Add,
            MathOp::Sub,
            MathOp::Mul,
            MathOp::Div,
            MathOp::Rem,
        ][..],
    )
}

pub fn address() -> BoxedStrategy<Address> {
    let term = prop_oneof![
        register().prop_map(AddrTerm::Reg),
        (0u64..0x1000).prop_map(AddrTerm::Const)
    ];
    prop_oneof![
        (0u64..0x100_0000).prop_map(Address::Const),
        (register(), prop::collection::vec((arith_op(), term), 0..3))
            .prop_map(|(base, terms)| Address::Reg { base, terms }),
        (1u64..0x40).prop_map(Address::push),
        (1u64..0x40).prop_map(Address::pop),
        Just(Address::Unknown),
    ]
    .boxed()
}

pub fn operand() -> BoxedStrategy<Operand> {
    prop_oneof![
        3 => register().prop_map(Operand::Reg),
        2 => address().prop_map(Operand::Mem),
        2 => constant().prop_map(Operand::Const),
    ]
    .boxed()
}

pub fn libcall() -> BoxedStrategy<LibCall> {
    select(&LIBRARY[..])
        .prop_flat_map(|f| {
            let name = f.name.to_string();
            prop::collection::vec(operand(), f.arity.clone()).prop_map(move |args| LibCall {
                name: name.clone(),
                args,
            })
        })
        .boxed()
}

fn expr() -> BoxedStrategy<Expr> {
    let binary_op = select(&MathOp::ALL[..]).prop_filter("binary", |&o| o != MathOp::Not);
    prop_oneof![
        3 => operand().prop_map(Expr::Value),
        1 => (select(&MathOp::ALL[..]), operand()).prop_map(|(op, a)| Expr::Unary(op, a)),
        3 => (operand(), binary_op, operand()).prop_map(|(a, op, b)| Expr::Binary(a, op, b)),
        1 => libcall().prop_map(Expr::Call),
    ]
    .boxed()
}

fn lvalue() -> impl Strategy<Value = Lvalue> {
    prop_oneof![
        register().prop_map(Lvalue::Reg),
        address().prop_map(Lvalue::Mem)
    ]
}

fn assignment() -> BoxedStrategy<Assignment> {
    (lvalue(), expr())
        .prop_map(|(dest, value)| Assignment { dest, value })
        .boxed()
}

fn comparison() -> impl Strategy<Value = Comparison> {
    (operand(), select(&RelOp::ALL[..]), operand()).prop_map(|(l, op, r)| Comparison::new(l, op, r))
}

fn condition() -> BoxedStrategy<Condition> {
    let bool_op = select(&[BoolOp::And, BoolOp::Or][..]);
    (
        comparison(),
        prop::collection::vec((bool_op, comparison()), 0..3),
    )
        .prop_map(|(first, rest)| Condition { first, rest })
        .boxed()
}

fn target() -> BoxedStrategy<Target> {
    prop_oneof![
        (0u64..0x100_0000).prop_map(Target::Direct),
        register().prop_map(Target::Reg),
        address().prop_map(Target::Mem),
    ]
    .boxed()
}

fn branch() -> BoxedStrategy<Branch> {
    prop_oneof![
        target().prop_map(Branch::Jump),
        assignment().prop_map(Branch::Assign),
        target().prop_map(Branch::Call),
        libcall().prop_map(Branch::LibCall),
    ]
    .boxed()
}

/// Any statement kind other than the function markers.
pub fn statement_kind() -> BoxedStrategy<StatementKind> {
    prop_oneof![
        6 => assignment().prop_map(StatementKind::Assign),
        2 => (condition(), branch(), prop::option::of(branch()))
            .prop_map(|(cond, then, otherwise)| StatementKind::Control(Control { cond, then, otherwise })),
        1 => condition().prop_map(StatementKind::Condition),
        2 => target().prop_map(StatementKind::Jump),
        1 => libcall().prop_map(StatementKind::LibCall),
        1 => target().prop_map(StatementKind::Call),
        1 => (operand(), operand()).prop_map(|(lhs, rhs)| StatementKind::Test(Test { lhs, rhs })),
        1 => Just(StatementKind::Halt),
        1 => Just(StatementKind::Lock),
        1 => Just(StatementKind::Unknown),
    ]
    .boxed()
}

fn stmt(kind: StatementKind) -> MailStatement {
    MailStatement::classified(kind, ClassifyOptions::default())
}

/// A well-formed program: 1 to 3 functions over strictly increasing
/// addresses, optional stray lines between them, tagged with the default
/// classifier.
pub fn program() -> impl Strategy<Value = MailProgram> {
    let line = || prop::collection::vec(statement_kind(), 0..3);
    let function = (
        "[a-z_][a-z0-9_.:]{0,12}",
        prop::collection::vec(line(), 1..6),
        prop::collection::vec(1u64..16, 6),
    );
    let stray = prop::collection::vec(line(), 0..2);
    (
        0x1000u64..0x80_0000,
        prop::collection::vec((stray, function), 1..4),
    )
        .prop_map(|(base, parts)| {
            let mut program = MailProgram::default();
            let mut addr = base;
            for (index, (stray, (name, mut lines, gaps))) in parts.into_iter().enumerate() {
                let index = index as u32;
                for kinds in stray {
                    program.lines.push(SourceLine {
                        addr,
                        statements: kinds.into_iter().map(stmt).collect(),
                    });
                    addr += 3;
                }
                let first = program.lines.len();
                let n = lines.len();
                lines[0].insert(0, StatementKind::FunctionStart(index));
                lines[n - 1].push(StatementKind::FunctionEnd(index));
                let start = addr;
                for (k, kinds) in lines.into_iter().enumerate() {
                    program.lines.push(SourceLine {
                        addr,
                        statements: kinds.into_iter().map(stmt).collect(),
                    });
                    if k + 1 < n {
                        addr += gaps[k];
                    }
                }
                program.functions.push(FunctionSpan {
                    index,
                    name,
                    start,
                    end: addr,
                    lines: first..first + n,
                });
                addr += 5;
            }
            program
        })
}

/// A random graph with `1..=max_nodes` blocks, each labelled with one or two
/// tags drawn from `alphabet`, and any subset of directed edges.
pub fn acfg(
    max_nodes: usize,
    alphabet: &'static [PatternTag],
    edge_percent: u32,
) -> impl Strategy<Value = Acfg> {
    (1..=max_nodes).prop_flat_map(move |n| {
        let labels = prop::collection::vec(prop::collection::vec(select(alphabet), 1..=2), n);
        let edges = prop::collection::vec(0u32..100, n * n);
        (labels, edges).prop_map(move |(labels, coins)| {
            let edges: Vec<_> = (0..n * n)
                .filter(|&k| coins[k] < edge_percent)
                .map(|k| (k / n, k % n))
                .collect();
            Acfg::from_patterns("g", labels, edges)
        })
    })
}

/// A random graph in which every block is reachable from block 0. Blocks
/// carry zero to two tags, so empty blocks occur.
pub fn connected_acfg(
    max_nodes: usize,
    alphabet: &'static [PatternTag],
) -> impl Strategy<Value = Acfg> {
    (1..=max_nodes).prop_flat_map(move |n| {
        let labels = prop::collection::vec(prop::collection::vec(select(alphabet), 0..=2), n);
        let parents = prop::collection::vec(any::<prop::sample::Index>(), n);
        let extra = prop::collection::vec((0..n, 0..n), 0..=2 * n);
        (labels, parents, extra).prop_map(move |(labels, parents, extra)| {
            let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (parents[v].index(v), v)).collect();
            edges.extend(extra);
            Acfg::from_patterns("g", labels, edges)
        })
    })
}

/// Splits a disassembly listing into one text per `FUNC` section.
pub fn split_functions(text: &str) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("FUNC ") {
            let name = rest.split_whitespace().next().unwrap_or("").to_string();
            out.push((name, String::new()));
        }
        if let Some((_, body)) = out.last_mut() {
            body.push_str(line);
            body.push('\n');
        }
    }
    out
}

/// Instruction address to the label given by the preceding `# block N` comment.
pub fn reference_labels(text: &str) -> Vec<(u64, usize)> {
    let mut label = None;
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if let Some(n) = line.strip_prefix("# block ") {
            label = Some(n.trim().parse().unwrap());
        } else if !line.is_empty() && !line.starts_with('#') && !line.starts_with("FUNC") {
            let addr = u64::from_str_radix(line.split_whitespace().next().unwrap(), 16).unwrap();
            out.push((addr, label.expect("label before first instruction")));
        }
    }
    out
}
