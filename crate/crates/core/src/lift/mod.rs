//! Lifting of disassembled instructions into MAIL statements.
//!
//! Each architecture has a table (shipped under `data/`) mapping mnemonics
//! to rule ids; the rules themselves live in [`x86`] and [`arm`].

pub mod arm;
pub mod x86;

use std::collections::HashMap;

use crate::disasm::{Arch, AsmInstruction, AsmOperand, DisasmSpan, MemRef, MemTerm, Sign};
use crate::mail::Register;
use crate::mail::{
    AddrTerm, Address, Branch, ClassifyOptions, Comparison, Condition, Control, Flag, FunctionSpan,
    MailProgram, MailStatement, MathOp, Operand, RelOp, SourceLine, StatementKind, Target,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{arch} table line {line}: {message}")]
pub struct TableError {
    pub arch: Arch,
    pub line: usize,
    pub message: String,
}

/// A lifting rule: rule id plus optional argument.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub id: String,
    pub arg: Option<String>,
}

/// Mnemonic to rule map for one architecture.
#[derive(Debug, Clone)]
pub struct LiftTable {
    arch: Arch,
    rules: HashMap<String, Rule>,
}

impl LiftTable {
    pub fn parse(arch: Arch, text: &str) -> Result<Self, TableError> {
        let mut rules = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| TableError {
                arch,
                line: i + 1,
                message,
            };
            let mut words = line.split_whitespace();
            let (Some(mnemonic), Some(id)) = (words.next(), words.next()) else {
                return Err(err("expected `<MNEMONIC> <rule> [arg]`".into()));
            };
            let arg = words.next().map(str::to_string);
            if words.next().is_some() {
                return Err(err("too many fields".into()));
            }
            let rule = Rule {
                id: id.to_string(),
                arg,
            };
            if rules.insert(mnemonic.to_ascii_uppercase(), rule).is_some() {
                return Err(err(format!("duplicate mnemonic `{mnemonic}`")));
            }
        }
        Ok(LiftTable { arch, rules })
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn get(&self, mnemonic: &str) -> Option<&Rule> {
        self.rules.get(mnemonic)
    }

    pub fn contains(&self, mnemonic: &str) -> bool {
        self.rules.contains_key(mnemonic)
    }

    /// Mnemonics whose rule id is `id`, sorted.
    pub fn mnemonics_with(&self, id: &str) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .rules
            .iter()
            .filter(|(_, r)| r.id == id)
            .map(|(m, _)| m.as_str())
            .collect();
        out.sort_unstable();
        out
    }
}

/// Lifted statements of one instruction.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftResult<'a> {
    pub statements: Vec<MailStatement>,
    pub consumed: &'a AsmInstruction,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LiftOptions {
    pub classify: ClassifyOptions,
}

/// Per-function lifting state.
#[derive(Debug, Default)]
pub struct LiftContext {
    next_gr: u32,
}

impl LiftContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        self.next_gr = 0;
    }

    pub(crate) fn temp(&mut self) -> Register {
        let r = Register::Gr(self.next_gr);
        self.next_gr += 1;
        r
    }
}

/// Lifts one instruction with a fresh context.
pub fn lift_instruction(insn: &AsmInstruction) -> LiftResult<'_> {
    lift_with(insn, &mut LiftContext::new(), LiftOptions::default())
}

pub fn lift_with<'a>(
    insn: &'a AsmInstruction,
    ctx: &mut LiftContext,
    opts: LiftOptions,
) -> LiftResult<'a> {
    let kinds = match insn.arch {
        Arch::X86 => x86::lift_kinds(insn, ctx),
        Arch::Arm => arm::lift_kinds(insn, ctx),
    };
    let statements = kinds
        .into_iter()
        .map(|k| MailStatement::classified(k, opts.classify))
        .collect();
    LiftResult {
        statements,
        consumed: insn,
    }
}

/// Lifts parsed spans into one program. Each span becomes
/// `start_function_N` ... `end_function_N` with `N` its position.
pub fn lift_program(spans: &[DisasmSpan], opts: LiftOptions) -> MailProgram {
    let mut program = MailProgram::default();
    let mut ctx = LiftContext::new();
    for (n, span) in spans.iter().enumerate() {
        let index = n as u32;
        ctx.reset();
        let first = program.lines.len();
        let marker = |kind| MailStatement::classified(kind, opts.classify);
        let start_addr = span.instructions.first().map_or(span.start, |i| i.address);
        let end_addr = span.instructions.last().map_or(start_addr, |i| i.address);
        if span.instructions.is_empty() {
            program.lines.push(SourceLine {
                addr: start_addr,
                statements: vec![
                    marker(StatementKind::FunctionStart(index)),
                    marker(StatementKind::FunctionEnd(index)),
                ],
            });
        } else {
            for (i, insn) in span.instructions.iter().enumerate() {
                let mut statements = Vec::new();
                if i == 0 {
                    statements.push(marker(StatementKind::FunctionStart(index)));
                }
                statements.extend(lift_with(insn, &mut ctx, opts).statements);
                if i + 1 == span.instructions.len() {
                    statements.push(marker(StatementKind::FunctionEnd(index)));
                }
                program.lines.push(SourceLine {
                    addr: insn.address,
                    statements,
                });
            }
        }
        program.functions.push(FunctionSpan {
            index,
            name: span.name.clone(),
            start: start_addr,
            end: end_addr,
            lines: first..program.lines.len(),
        });
    }
    program
}

/// Same as [`lift_program`]; the architecture comes from each span.
pub fn lift_program_arm(spans: &[DisasmSpan], opts: LiftOptions) -> MailProgram {
    lift_program(spans, opts)
}

// Shared helpers for the architecture modules.

pub(crate) fn reg(name: &str) -> Register {
    Register::from_name(name)
}

pub(crate) fn mem_address(mem: &MemRef) -> Address {
    let mut regs = mem
        .terms
        .iter()
        .filter(|(_, t)| !matches!(t, MemTerm::Disp(_)));
    let Some((_, base_term)) = regs.next() else {
        let sum = mem
            .terms
            .iter()
            .fold(0u64, |acc, (sign, t)| match (sign, t) {
                (Sign::Plus, MemTerm::Disp(d)) => acc.wrapping_add(*d),
                (Sign::Minus, MemTerm::Disp(d)) => acc.wrapping_sub(*d),
                _ => acc,
            });
        return match &mem.segment {
            Some(seg) => Address::Reg {
                base: reg(seg),
                terms: vec![(MathOp::Add, AddrTerm::Const(sum))],
            },
            None => Address::Const(sum),
        };
    };
    let mut terms = Vec::new();
    let base_name = match base_term {
        MemTerm::Reg(r) => r.clone(),
        MemTerm::Scaled(r, s) => {
            terms.push((MathOp::Mul, AddrTerm::Const(*s)));
            r.clone()
        }
        MemTerm::Disp(_) => unreachable!("filtered above"),
    };
    let base = match &mem.segment {
        Some(seg) => Register::Pair(seg.clone(), base_name),
        None => reg(&base_name),
    };
    let mut seen_base = false;
    for (sign, term) in &mem.terms {
        let op = match sign {
            Sign::Plus => MathOp::Add,
            Sign::Minus => MathOp::Sub,
        };
        match term {
            t if !seen_base && std::ptr::eq(t, base_term) => seen_base = true,
            MemTerm::Reg(r) => terms.push((op, AddrTerm::Reg(reg(r)))),
            MemTerm::Scaled(r, s) => {
                terms.push((op, AddrTerm::Reg(reg(r))));
                terms.push((MathOp::Mul, AddrTerm::Const(*s)));
            }
            MemTerm::Disp(d) => terms.push((op, AddrTerm::Const(*d))),
        }
    }
    Address::Reg { base, terms }
}

/// Converts a plain operand; register lists and shifts have no MAIL form.
pub(crate) fn operand(op: &AsmOperand) -> Option<Operand> {
    match op {
        AsmOperand::Reg(r) => Some(Operand::Reg(reg(r))),
        AsmOperand::Imm(v) => Some(Operand::hex(*v)),
        AsmOperand::Mem(m) => Some(Operand::Mem(mem_address(m))),
        AsmOperand::RegList(_) | AsmOperand::Shift { .. } => None,
    }
}

/// Branch target: constants are direct, everything else is `UNKNOWN`.
pub(crate) fn target(op: &AsmOperand) -> Target {
    match op {
        AsmOperand::Imm(v) => Target::Direct(*v as u64),
        _ => Target::UNKNOWN,
    }
}

/// The return idiom: `jmp [SP=SP-0x8];`.
pub(crate) fn ret() -> StatementKind {
    StatementKind::Jump(Target::Mem(Address::pop(8)))
}

/// Flag predicate for a condition code. Names are the x86 suffixes; ARM
/// codes are mapped onto them by the ARM module.
pub(crate) fn predicate(cc: &str) -> Option<Condition> {
    use Flag::*;
    let is = Comparison::flag_is;
    let same = |a, b| Comparison::flags(a, RelOp::Eq, b);
    let differ = |a, b| Comparison::flags(a, RelOp::Ne, b);
    Some(match cc {
        "Z" => Condition::single(is(ZF, 1)),
        "NZ" => Condition::single(is(ZF, 0)),
        "L" => Condition::single(differ(SF, OF)),
        "LE" => Condition::or(is(ZF, 1), differ(SF, OF)),
        "G" => Condition::and(is(ZF, 0), same(SF, OF)),
        "GE" => Condition::single(same(SF, OF)),
        "B" => Condition::single(is(CF, 1)),
        "BE" => Condition::or(is(CF, 1), is(ZF, 1)),
        "A" => Condition::and(is(CF, 0), is(ZF, 0)),
        "AE" => Condition::single(is(CF, 0)),
        "S" => Condition::single(is(SF, 1)),
        "NS" => Condition::single(is(SF, 0)),
        "O" => Condition::single(is(OF, 1)),
        "NO" => Condition::single(is(OF, 0)),
        "P" => Condition::single(is(PF, 1)),
        "NP" => Condition::single(is(PF, 0)),
        // ARM unsigned higher / lower-or-same use the inverted carry.
        "HI" => Condition::and(is(CF, 1), is(ZF, 0)),
        "LS" => Condition::or(is(CF, 0), is(ZF, 1)),
        _ => return None,
    })
}

/// Wraps a statement in `if (cond) ...;` when it has a branch form.
pub(crate) fn guard(cond: &Condition, kind: StatementKind) -> StatementKind {
    let then = match kind {
        StatementKind::Jump(t) => Branch::Jump(t),
        StatementKind::Call(t) => Branch::Call(t),
        StatementKind::Assign(a) => Branch::Assign(a),
        StatementKind::LibCall(c) => Branch::LibCall(c),
        other => return other,
    };
    StatementKind::Control(Control {
        cond: cond.clone(),
        then,
        otherwise: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disasm::parse_disasm;
    use crate::mail::{emit_mail, parse_mail, PatternTag};

    #[test]
    fn table_rejects_duplicates_and_garbage() {
        assert!(LiftTable::parse(Arch::X86, "MOV move\nMOV move").is_err());
        assert!(LiftTable::parse(Arch::X86, "MOV").is_err());
        assert!(LiftTable::parse(Arch::X86, "MOV move a b").is_err());
        let t = LiftTable::parse(Arch::X86, "# c\nmov move # trailing\n").unwrap();
        assert_eq!(
            t.get("MOV"),
            Some(&Rule {
                id: "move".into(),
                arg: None
            })
        );
    }

    #[test]
    fn single_ret_function() {
        let spans = parse_disasm("FUNC f 10 11\n10 c3 RET").unwrap();
        let p = lift_program(&spans, LiftOptions::default());
        let text: Vec<String> = p.statements().map(|(_, s)| s.to_string()).collect();
        assert_eq!(
            text,
            ["start_function_0;", "jmp [SP=SP-0x8];", "end_function_0;"]
        );
        assert_eq!(p.functions[0].name, "f");
    }

    #[test]
    fn empty_span_has_markers_only() {
        let spans = parse_disasm("FUNC f 10 20 ARCH arm").unwrap();
        let p = lift_program_arm(&spans, LiftOptions::default());
        assert_eq!(p.statement_count(), 2);
        assert!(p.statements().all(|(_, s)| s.is_marker()));
    }

    #[test]
    fn lifted_programs_survive_text_round_trip() {
        let text =
            "FUNC f 10 40\n10 - PUSH RBP\n11 - XCHG EAX, EBX\n12 - LEA RAX, FS:[RDX+RAX*4-8]\n\
                    13 - LEAVE\n14 - SETG AL\n15 - JNZ 0x10\n16 - RET\n";
        let p = lift_program(&parse_disasm(text).unwrap(), LiftOptions::default());
        assert_eq!(parse_mail(&emit_mail(&p)).unwrap(), p);
        let tags: Vec<_> = p.statements().map(|(_, s)| s.pattern).collect();
        assert_eq!(tags[1], PatternTag::Stack);
    }
}
