//! Program mutations and synthetic corpora for evaluation.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cfg::{normalize, Acfg};
use crate::detector::{LabeledSample, SampleGraphs};
use crate::disasm::Arch;
use crate::mail::{
    Assignment, ClassifyOptions, Expr, Lvalue, MailStatement, MathOp, Operand, PatternTag,
    Register, StatementKind,
};

/// x86 register families; a family is renamed as a unit.
const X86_LEGACY: [[&str; 5]; 4] = [
    ["RAX", "EAX", "AX", "AL", "AH"],
    ["RBX", "EBX", "BX", "BL", "BH"],
    ["RCX", "ECX", "CX", "CL", "CH"],
    ["RDX", "EDX", "DX", "DL", "DH"],
];

fn x86_extended() -> Vec<[String; 4]> {
    let mut v = vec![
        ["RSI", "ESI", "SI", "SIL"].map(String::from),
        ["RDI", "EDI", "DI", "DIL"].map(String::from),
    ];
    for n in 8..16 {
        v.push([
            format!("R{n}"),
            format!("R{n}D"),
            format!("R{n}W"),
            format!("R{n}B"),
        ]);
    }
    v
}

const PREFIXES: [&str; 6] = ["LOCK", "REP", "REPE", "REPZ", "REPNE", "REPNZ"];

/// Name map for a seeded, consistent permutation of general registers.
/// Stack and frame registers keep their names.
pub fn register_permutation(arch: Arch, seed: u64) -> HashMap<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = HashMap::new();
    match arch {
        Arch::X86 => {
            let mut p: Vec<usize> = (0..X86_LEGACY.len()).collect();
            p.shuffle(&mut rng);
            for (i, &j) in p.iter().enumerate() {
                for (from, to) in X86_LEGACY[i].iter().zip(X86_LEGACY[j]) {
                    map.insert(from.to_string(), to.to_string());
                }
            }
            let ext = x86_extended();
            let mut p: Vec<usize> = (0..ext.len()).collect();
            p.shuffle(&mut rng);
            for (i, &j) in p.iter().enumerate() {
                for (from, to) in ext[i].iter().zip(&ext[j]) {
                    map.insert(from.clone(), to.clone());
                }
            }
        }
        Arch::Arm => {
            let mut p: Vec<usize> = (0..=10).collect();
            p.shuffle(&mut rng);
            for (i, &j) in p.iter().enumerate() {
                map.insert(format!("R{i}"), format!("R{j}"));
            }
        }
    }
    map
}

/// Expands `Ra-Rb` ranges inside ARM register lists.
fn expand_ranges(ops: &str) -> String {
    let (Some(open), Some(close)) = (ops.find('{'), ops.find('}')) else {
        return ops.to_string();
    };
    let items: Vec<String> = ops[open + 1..close]
        .split(',')
        .flat_map(|item| {
            let item = item.trim();
            let range = item.split_once('-').and_then(|(a, b)| {
                let num = |s: &str| s.trim().strip_prefix(['R', 'r'])?.parse::<u32>().ok();
                Some((num(a)?, num(b)?))
            });
            match range {
                Some((a, b)) if a <= b => (a..=b).map(|n| format!("R{n}")).collect(),
                _ => vec![item.to_string()],
            }
        })
        .collect();
    format!(
        "{}{{{}}}{}",
        &ops[..open],
        items.join(", "),
        &ops[close + 1..]
    )
}

fn rename_tokens(ops: &str, map: &HashMap<String, String>) -> String {
    let mut out = String::with_capacity(ops.len());
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut String| {
        if let Some(to) = map.get(&word.to_ascii_uppercase()) {
            let lower = word.chars().any(|c| c.is_ascii_lowercase());
            out.push_str(&if lower {
                to.to_ascii_lowercase()
            } else {
                to.clone()
            });
        } else {
            out.push_str(word);
        }
        word.clear();
    };
    for c in ops.chars() {
        if c.is_ascii_alphanumeric() || c == '_' {
            word.push(c);
        } else {
            flush(&mut word, &mut out);
            out.push(c);
        }
    }
    flush(&mut word, &mut out);
    out
}

/// Consistently renames general registers in a disassembly listing.
/// Encodings no longer match the text, so byte columns become `-`.
pub fn rename_registers(text: &str, arch: Arch, seed: u64) -> String {
    let map = register_permutation(arch, seed);
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        let trimmed = line.trim_start();
        let first = trimmed.split_whitespace().next().unwrap_or("");
        let is_insn = !first.is_empty()
            && first.chars().all(|c| c.is_ascii_hexdigit())
            && !trimmed.starts_with(['#', ';']);
        if !is_insn {
            out.push_str(line);
            out.push('\n');
            continue;
        }
        let mut words = trimmed.split_whitespace().peekable();
        let addr = words.next().unwrap_or_default();
        let mut head = vec![addr.to_string()];
        if words.peek().is_some_and(|w| {
            *w == "-"
                || (w.len().is_multiple_of(2)
                    && w.chars()
                        .all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()))
        }) {
            words.next();
        }
        head.push("-".to_string());
        for w in words.by_ref() {
            head.push(w.to_string());
            if !PREFIXES.contains(&w.to_ascii_uppercase().as_str()) {
                break;
            }
        }
        let ops: Vec<&str> = words.collect();
        let ops = ops.join(" ");
        let ops = if arch == Arch::Arm {
            expand_ranges(&ops)
        } else {
            ops
        };
        out.push_str(&head.join(" "));
        if !ops.is_empty() {
            out.push(' ');
            out.push_str(&rename_tokens(&ops, &map));
        }
        out.push('\n');
    }
    out
}

/// `reg = reg + 0x0;`
pub fn dead_statement(reg: &str) -> MailStatement {
    let r = Register::from_name(reg);
    let value = Expr::Binary(Operand::Reg(r.clone()), MathOp::Add, Operand::hex(0));
    MailStatement::classified(
        StatementKind::Assign(Assignment::new(Lvalue::Reg(r), value)),
        ClassifyOptions::default(),
    )
}

/// Prepends a no-op assignment to every block.
pub fn insert_dead_code(g: &Acfg, reg: &str) -> Acfg {
    let mut out = g.clone();
    for b in &mut out.blocks {
        let stmt = dead_statement(reg);
        if let Some(addr) = b.start_addr() {
            b.statements.insert(0, (addr, stmt.clone()));
        }
        b.pattern_seq.insert(0, stmt.pattern);
    }
    out
}

/// Random graph connected from block 0: block `i` gets an edge from some
/// earlier block, plus `extra` random edges. Blocks hold 1 to 3 tags.
pub fn random_acfg(
    rng: &mut impl Rng,
    name: &str,
    nodes: usize,
    extra: usize,
    alphabet: &[PatternTag],
) -> Acfg {
    let blocks = (0..nodes)
        .map(|_| {
            (0..rng.gen_range(1..=3))
                .map(|_| *alphabet.choose(rng).expect("non-empty alphabet"))
                .collect()
        })
        .collect();
    let mut edges: Vec<(usize, usize)> = (1..nodes).map(|i| (rng.gen_range(0..i), i)).collect();
    for _ in 0..extra {
        edges.push((rng.gen_range(0..nodes), rng.gen_range(0..nodes)));
    }
    Acfg::from_patterns(name, blocks, edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusConfig {
    pub families: usize,
    pub members: usize,
    /// Functions shared across a family.
    pub core_functions: usize,
    pub benign: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            families: 6,
            members: 5,
            core_functions: 4,
            benign: 30,
            seed: 42,
        }
    }
}

fn random_function(rng: &mut ChaCha8Rng, name: String) -> Acfg {
    let nodes = rng.gen_range(4..=8);
    let extra = rng.gen_range(1..=3);
    let mut g = normalize(&random_acfg(rng, &name, nodes, extra, &PatternTag::ALL));
    g.name = name;
    g
}

/// Malware families whose members share a random subset of the family's
/// core functions plus a few of their own, and unrelated benign programs.
pub fn synthetic_corpus(config: CorpusConfig) -> Vec<LabeledSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::new();
    for f in 0..config.families {
        let core: Vec<Acfg> = (0..config.core_functions)
            .map(|k| random_function(&mut rng, format!("fam{f}_core{k}")))
            .collect();
        for m in 0..config.members {
            let mut acfgs: Vec<Acfg> = core
                .iter()
                .filter(|_| rng.gen_bool(0.75))
                .cloned()
                .collect();
            if acfgs.is_empty() {
                acfgs.push(core[rng.gen_range(0..core.len())].clone());
            }
            for k in 0..rng.gen_range(0..=2) {
                acfgs.push(random_function(&mut rng, format!("fam{f}_m{m}_own{k}")));
            }
            acfgs.shuffle(&mut rng);
            out.push(LabeledSample {
                graphs: SampleGraphs {
                    name: format!("malware_{f:02}_{m:02}"),
                    acfgs,
                },
                malware: true,
            });
        }
    }
    for b in 0..config.benign {
        let acfgs = (0..rng.gen_range(2..=6))
            .map(|k| random_function(&mut rng, format!("benign{b}_f{k}")))
            .collect();
        out.push(LabeledSample {
            graphs: SampleGraphs {
                name: format!("benign_{b:03}"),
                acfgs,
            },
            malware: false,
        });
    }
    out
}

/// Three-block templates whose shapes are planted in benign graphs with
/// different pattern sequences, plus true positives carrying the real ones.
#[derive(Debug, Clone)]
pub struct FpBenchmark {
    pub templates: Vec<Acfg>,
    pub benign: Vec<Acfg>,
    pub planted: Vec<Acfg>,
}

const TEMPLATE_TAGS: [PatternTag; 4] = [
    PatternTag::LibCallConstant,
    PatternTag::ControlConstant,
    PatternTag::Stack,
    PatternTag::Test,
];
const BENIGN_TAGS: [PatternTag; 4] = [
    PatternTag::Assign,
    PatternTag::AssignConstant,
    PatternTag::Call,
    PatternTag::JumpConstant,
];

const SHAPES: [&[(usize, usize)]; 4] = [
    &[(0, 1), (1, 2)],
    &[(0, 1), (0, 2), (1, 2)],
    &[(0, 1), (1, 2), (2, 1)],
    &[(0, 1), (1, 0), (1, 2)],
];

/// Places `template` on blocks `at..at+3` of `host`, optionally copying its
/// pattern sequences.
fn plant(host: &mut Acfg, template: &Acfg, at: usize, copy_patterns: bool) {
    for &(s, d) in &template.edges {
        host.edges.push((at + s, at + d));
    }
    if copy_patterns {
        for (i, b) in template.blocks.iter().enumerate() {
            host.blocks[at + i].pattern_seq = b.pattern_seq.clone();
        }
    }
    host.edges.sort_unstable();
    host.edges.dedup();
}

pub fn fp_benchmark(templates: usize, benign: usize, seed: u64) -> FpBenchmark {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let templates: Vec<Acfg> = (0..templates)
        .map(|i| {
            let mut t = random_acfg(&mut rng, &format!("t{i}"), 3, 0, &TEMPLATE_TAGS);
            t.edges = SHAPES[rng.gen_range(0..SHAPES.len())].to_vec();
            t
        })
        .collect();
    let host = |rng: &mut ChaCha8Rng, name: String| {
        let n = rng.gen_range(6..=10);
        let extra = rng.gen_range(1..=3);
        random_acfg(rng, &name, n, extra, &BENIGN_TAGS)
    };
    let benign_graphs = (0..benign)
        .map(|i| {
            let mut g = host(&mut rng, format!("benign{i}"));
            if i % 4 != 3 {
                let t = &templates[i % templates.len()];
                let at = rng.gen_range(0..=g.len() - 3);
                plant(&mut g, t, at, false);
            }
            g
        })
        .collect();
    let planted = templates
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut g = host(&mut rng, format!("planted{i}"));
            let at = rng.gen_range(0..=g.len() - 3);
            plant(&mut g, t, at, true);
            g
        })
        .collect();
    FpBenchmark {
        templates,
        benign: benign_graphs,
        planted,
    }
}
