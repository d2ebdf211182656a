//! ARM (A32) rules.

use std::sync::LazyLock;

use super::x86::{assign, libcall, math_op};
use super::{
    guard, mem_address, operand, predicate, reg, ret, target, LiftContext, LiftTable, Rule,
};
use crate::disasm::{Arch, AsmInstruction, AsmOperand, MemRef};
use crate::mail::{
    AddrTerm, Address, Constant, Expr, MathOp, Operand, Register, StatementKind, Target, Test,
};

pub static TABLE: LazyLock<LiftTable> = LazyLock::new(|| {
    LiftTable::parse(Arch::Arm, include_str!("../../data/arm.table")).expect("bundled ARM table")
});

/// Condition codes in the order they are tried when stripping suffixes.
const CONDITIONS: [(&str, Option<&str>); 17] = [
    ("EQ", Some("Z")),
    ("NE", Some("NZ")),
    ("CS", Some("B")),
    ("HS", Some("B")),
    ("CC", Some("AE")),
    ("LO", Some("AE")),
    ("MI", Some("S")),
    ("PL", Some("NS")),
    ("VS", Some("O")),
    ("VC", Some("NO")),
    ("HI", Some("HI")),
    ("LS", Some("LS")),
    ("GE", Some("GE")),
    ("LT", Some("L")),
    ("GT", Some("G")),
    ("LE", Some("LE")),
    ("AL", None),
];

/// A mnemonic split into its table rule and condition code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded<'t> {
    pub stem: String,
    pub rule: &'t Rule,
    /// Condition code suffix, `None` for unconditional (or `AL`).
    pub cond: Option<&'static str>,
    pub sets_flags: bool,
}

/// `Some(None)` for `AL`, `Some(Some(code))` for other condition codes.
fn condition(suffix: &str) -> Option<Option<&'static str>> {
    CONDITIONS
        .iter()
        .find(|(c, _)| *c == suffix)
        .map(|(c, key)| key.map(|_| *c))
}

/// Flag predicate key shared with the x86 table.
fn predicate_key(code: &str) -> Option<&'static str> {
    CONDITIONS
        .iter()
        .find(|(c, _)| *c == code)
        .and_then(|(_, key)| *key)
}

/// Splits `MOVWNE`, `SUBS`, `ADDSNE`, `ADDNES`, `VADD.F32` against the table.
pub fn decode(mnemonic: &str) -> Option<Decoded<'static>> {
    let base = mnemonic.split('.').next().unwrap_or(mnemonic);
    let table = &*TABLE;
    let found = |stem: &str, cond: Option<&'static str>, sets_flags: bool| {
        table.get(stem).map(|rule| Decoded {
            stem: stem.to_string(),
            rule,
            cond,
            sets_flags,
        })
    };
    if let Some(d) = found(base, None, false) {
        return Some(d);
    }
    let strip_cond = |m: &str| -> Option<(String, Option<&'static str>)> {
        let (stem, suffix) = m.split_at(m.len().checked_sub(2)?);
        Some((stem.to_string(), condition(suffix)?))
    };
    if let Some((stem, cond)) = strip_cond(base) {
        if let Some(d) = found(&stem, cond, false) {
            return Some(d);
        }
        if let Some(d) = stem.strip_suffix('S').and_then(|s| found(s, cond, true)) {
            return Some(d);
        }
    }
    if let Some(stem) = base.strip_suffix('S') {
        if let Some(d) = found(stem, None, true) {
            return Some(d);
        }
        if let Some((inner, cond)) = strip_cond(stem) {
            return found(&inner, cond, true);
        }
    }
    None
}

type Kinds = Vec<StatementKind>;

pub(crate) fn lift_kinds(insn: &AsmInstruction, ctx: &mut LiftContext) -> Kinds {
    let Some(decoded) = decode(&insn.mnemonic) else {
        return vec![StatementKind::Unknown];
    };
    let Some(body) = lift_body(&decoded, insn, ctx) else {
        return vec![StatementKind::Unknown];
    };
    match decoded.cond.and_then(predicate_key).and_then(predicate) {
        Some(cond) => body.into_iter().map(|k| guard(&cond, k)).collect(),
        None => body,
    }
}

fn named(name: &str) -> Operand {
    Operand::Reg(reg(name))
}

fn is_pc(op: &AsmOperand) -> bool {
    matches!(op, AsmOperand::Reg(r) if r == "PC" || r == "R15")
}

fn is_sp(name: &str) -> bool {
    name == "SP" || name == "R13"
}

/// Operand `i`, applying a following shift modifier through a temporary.
fn shifted(
    ops: &[AsmOperand],
    i: usize,
    ctx: &mut LiftContext,
    out: &mut Kinds,
) -> Option<Operand> {
    let value = operand(ops.get(i)?)?;
    match ops.get(i + 1) {
        Some(AsmOperand::Shift { op, amount }) => {
            let math = if op == "LSL" {
                MathOp::Shl
            } else {
                MathOp::Shr
            };
            let tmp = Operand::Reg(ctx.temp());
            out.push(assign(
                tmp.clone(),
                Expr::Binary(value, math, operand(amount)?),
            )?);
            Some(tmp)
        }
        _ => Some(value),
    }
}

/// Base register update for `[Rn, #off]!` and `[Rn], #off`.
fn writeback(mem: &MemRef, post: Option<&AsmOperand>) -> Option<StatementKind> {
    let Address::Reg { base, terms } = mem_address(mem) else {
        return None;
    };
    let base_op = Operand::Reg(base);
    match post {
        Some(off) => {
            let off = operand(off)?;
            match off {
                Operand::Const(c) if c.value < 0 => assign(
                    base_op.clone(),
                    Expr::Binary(base_op, MathOp::Sub, Operand::hex(c.value.wrapping_neg())),
                ),
                off => assign(base_op.clone(), Expr::Binary(base_op, MathOp::Add, off)),
            }
        }
        None if mem.writeback => {
            let [(op, term)] = terms.as_slice() else {
                return None;
            };
            let rhs = match term {
                AddrTerm::Reg(r) => Operand::Reg(r.clone()),
                AddrTerm::Const(c) => Operand::hex(*c as i64),
            };
            assign(base_op.clone(), Expr::Binary(base_op, *op, rhs))
        }
        None => None,
    }
}

fn offset(mem: &MemRef, bytes: u64) -> Address {
    match mem_address(mem) {
        Address::Reg { base, mut terms } => {
            terms.push((MathOp::Add, AddrTerm::Const(bytes)));
            Address::Reg { base, terms }
        }
        Address::Const(c) => Address::Const(c + bytes),
        other => other,
    }
}

fn push_regs(regs: &[String]) -> Option<Kinds> {
    regs.iter()
        .map(|r| assign(Operand::Mem(Address::push(1)), named(r)))
        .collect()
}

fn pop_regs(regs: &[String]) -> Option<Kinds> {
    regs.iter()
        .map(|r| {
            if r == "PC" || r == "R15" {
                Some(ret())
            } else {
                assign(named(r), Operand::Mem(Address::pop(1)))
            }
        })
        .collect()
}

fn lift_body(d: &Decoded<'_>, insn: &AsmInstruction, ctx: &mut LiftContext) -> Option<Kinds> {
    let ops = insn.parsed.as_slice();
    let op = |i: usize| ops.get(i).and_then(operand);
    let arg = d.rule.arg.as_deref().unwrap_or_default();
    let mut out = Vec::new();

    match d.rule.id.as_str() {
        "nop" | "ignore" => {}
        "move" | "mvn" => {
            if ops.len() < 2 {
                return None;
            }
            if is_pc(&ops[0]) {
                let lr = matches!(&ops[1], AsmOperand::Reg(r) if r == "LR" || r == "R14");
                out.push(if lr {
                    ret()
                } else {
                    StatementKind::Jump(Target::UNKNOWN)
                });
                return Some(out);
            }
            let src = shifted(ops, 1, ctx, &mut out)?;
            let value = if d.rule.id == "mvn" {
                Expr::Unary(MathOp::Not, src)
            } else {
                src.into()
            };
            out.push(assign(op(0)?, value)?);
        }
        "fn" => {
            let [dst, src, ..] = ops else { return None };
            out.push(assign(
                operand(dst)?,
                Expr::Call(libcall(arg, vec![operand(src)?])?),
            )?);
        }
        "adr" => out.push(assign(op(0)?, op(1)?)?),
        "load" | "store" => {
            let pair = matches!(d.stem.as_str(), "LDRD" | "STRD");
            let (regs, mem_at) = if pair { (2, 2) } else { (1, 1) };
            let Some(AsmOperand::Mem(mem)) = ops.get(mem_at) else {
                return None;
            };
            for (i, reg) in ops.iter().enumerate().take(regs) {
                let slot = Operand::Mem(if i == 0 {
                    mem_address(mem)
                } else {
                    offset(mem, 4)
                });
                if d.rule.id == "load" {
                    if is_pc(reg) {
                        let from_stack = matches!(mem.terms.first(),
                            Some((_, crate::disasm::MemTerm::Reg(r))) if is_sp(r));
                        out.push(if from_stack {
                            ret()
                        } else {
                            StatementKind::Jump(Target::UNKNOWN)
                        });
                        continue;
                    }
                    out.push(assign(op(i)?, slot)?);
                } else {
                    out.push(assign(slot, op(i)?)?);
                }
            }
            if let Some(update) = writeback(mem, ops.get(mem_at + 1)) {
                // a return through PC is the last statement
                let at = out.iter().position(|k| *k == ret()).unwrap_or(out.len());
                out.insert(at, update);
            }
        }
        "loadm" | "storem" => {
            let [AsmOperand::Reg(base), AsmOperand::RegList(regs)] = ops else {
                return None;
            };
            if is_sp(base) {
                out = if d.rule.id == "loadm" {
                    pop_regs(regs)?
                } else {
                    push_regs(regs)?
                };
            } else {
                for (i, r) in regs.iter().enumerate() {
                    let slot = Operand::Mem(Address::Reg {
                        base: reg(base),
                        terms: vec![(MathOp::Add, AddrTerm::Const(4 * i as u64))],
                    });
                    if d.rule.id == "loadm" {
                        out.push(if r == "PC" {
                            StatementKind::Jump(Target::UNKNOWN)
                        } else {
                            assign(named(r), slot)?
                        });
                    } else {
                        out.push(assign(slot, named(r))?);
                    }
                }
            }
        }
        "push" => match ops {
            [AsmOperand::RegList(regs)] => out = push_regs(regs)?,
            _ => return None,
        },
        "pop" => match ops {
            [AsmOperand::RegList(regs)] => out = pop_regs(regs)?,
            _ => return None,
        },
        "binop" | "rsb" | "bic" => {
            let (dst, a, b) = match ops.len() {
                2 => (op(0)?, op(0)?, op(1)?),
                3.. if !matches!(ops[2], AsmOperand::Shift { .. }) => {
                    (op(0)?, op(1)?, shifted(ops, 2, ctx, &mut out)?)
                }
                3 => (op(0)?, op(0)?, shifted(ops, 1, ctx, &mut out)?),
                _ => return None,
            };
            if is_pc(&ops[0]) {
                return Some(vec![StatementKind::Jump(Target::UNKNOWN)]);
            }
            match d.rule.id.as_str() {
                "rsb" => out.push(assign(dst, Expr::Binary(b, MathOp::Sub, a))?),
                "bic" => {
                    let tmp = Operand::Reg(ctx.temp());
                    out.push(assign(tmp.clone(), Expr::Unary(MathOp::Not, b))?);
                    out.push(assign(dst, Expr::Binary(a, MathOp::And, tmp))?);
                }
                _ => {
                    let math = math_op(arg)?;
                    let zero = matches!(b, Operand::Const(Constant { value: 0, .. }));
                    let value = if a == b && matches!(math, MathOp::Xor | MathOp::Sub) {
                        Operand::hex(0).into()
                    } else if zero
                        && matches!(
                            math,
                            MathOp::Add
                                | MathOp::Sub
                                | MathOp::Or
                                | MathOp::Xor
                                | MathOp::Shl
                                | MathOp::Shr
                        )
                    {
                        a.into()
                    } else {
                        Expr::Binary(a, math, b)
                    };
                    out.push(assign(dst, value)?);
                }
            }
        }
        "mla" | "mls" => {
            let [_, _, _, _] = ops else { return None };
            let tmp = Operand::Reg(ctx.temp());
            out.push(assign(
                tmp.clone(),
                Expr::Binary(op(1)?, MathOp::Mul, op(2)?),
            )?);
            let value = if d.rule.id == "mla" {
                Expr::Binary(tmp, MathOp::Add, op(3)?)
            } else {
                Expr::Binary(op(3)?, MathOp::Sub, tmp)
            };
            out.push(assign(op(0)?, value)?);
        }
        "cmp" => {
            if ops.len() < 2 {
                return None;
            }
            let b = shifted(ops, 1, ctx, &mut out)?;
            out.push(StatementKind::LibCall(libcall("compare", vec![op(0)?, b])?));
        }
        "test" => {
            if ops.len() < 2 {
                return None;
            }
            let rhs = shifted(ops, 1, ctx, &mut out)?;
            out.push(StatementKind::Test(Test { lhs: op(0)?, rhs }));
        }
        "b" => match ops {
            [t] => out.push(StatementKind::Jump(target(t))),
            _ => return None,
        },
        "bl" => match ops {
            [t] => out.push(StatementKind::Call(target(t))),
            _ => return None,
        },
        "bx" => match ops {
            [AsmOperand::Reg(r)] if r == "LR" || r == "R14" => out.push(ret()),
            [_] => out.push(StatementKind::Jump(Target::UNKNOWN)),
            _ => return None,
        },
        "mrs" => out.push(assign(op(0)?, Operand::Reg(Register::Eflags))?),
        "msr" => out.push(assign(Operand::Reg(Register::Eflags), op(1)?)?),
        _ => return None,
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disasm::parse_disasm;
    use crate::mail::PatternTag;

    fn lift_tags(line: &str) -> Vec<(String, PatternTag)> {
        let spans = parse_disasm(&format!("ARCH arm\n10 - {line}")).unwrap();
        super::super::lift_instruction(&spans[0].instructions[0])
            .statements
            .into_iter()
            .map(|s| (s.to_string(), s.pattern))
            .collect()
    }

    fn lift(line: &str) -> Vec<String> {
        lift_tags(line).into_iter().map(|(s, _)| s).collect()
    }

    #[test]
    fn decodes_suffixes() {
        let stem = |m: &str| decode(m).map(|d| (d.stem, d.cond, d.sets_flags));
        assert_eq!(stem("MOVLE"), Some(("MOV".into(), Some("LE"), false)));
        assert_eq!(stem("MOVWNE"), Some(("MOVW".into(), Some("NE"), false)));
        assert_eq!(stem("BLE"), Some(("B".into(), Some("LE"), false)));
        assert_eq!(stem("BLS"), Some(("B".into(), Some("LS"), false)));
        assert_eq!(stem("BL"), Some(("BL".into(), None, false)));
        assert_eq!(stem("BLEQ"), Some(("BL".into(), Some("EQ"), false)));
        assert_eq!(stem("TEQ"), Some(("TEQ".into(), None, false)));
        assert_eq!(stem("BICS"), Some(("BIC".into(), None, true)));
        assert_eq!(stem("SUBS"), Some(("SUB".into(), None, true)));
        assert_eq!(stem("LSLS"), Some(("LSL".into(), None, true)));
        assert_eq!(stem("ADDSNE"), Some(("ADD".into(), Some("NE"), true)));
        assert_eq!(stem("ADDNES"), Some(("ADD".into(), Some("NE"), true)));
        assert_eq!(stem("MOVAL"), Some(("MOV".into(), None, false)));
        assert_eq!(stem("VADD.F32"), Some(("VADD".into(), None, false)));
        assert_eq!(stem("FROB"), None);
    }

    #[test]
    fn reference_forms() {
        assert_eq!(
            lift_tags("CMP R0, R1"),
            [("compare(R0, R1);".into(), PatternTag::LibCall)]
        );
        assert_eq!(
            lift_tags("MOVLE R0, #0x1"),
            [(
                "if (ZF == 1 or SF != OF) R0 = 0x1;".into(),
                PatternTag::ControlConstant
            )]
        );
        assert!(lift("NOP").is_empty());
        assert_eq!(
            lift_tags("B 0x8000"),
            [("jmp 0x8000;".into(), PatternTag::JumpConstant)]
        );
        assert_eq!(
            lift_tags("BX R3"),
            [("jmp UNKNOWN;".into(), PatternTag::Jump)]
        );
        assert_eq!(
            lift_tags("BX LR"),
            [("jmp [SP=SP-0x8];".into(), PatternTag::JumpStack)]
        );
        assert_eq!(
            lift_tags("BL 0x10384"),
            [("call 0x10384;".into(), PatternTag::CallConstant)]
        );
        assert_eq!(lift("BGE 0x10698"), ["if (SF == OF) jmp 0x10698;"]);
        assert_eq!(lift("BHI 0x10"), ["if (CF == 1 and ZF == 0) jmp 0x10;"]);
    }

    #[test]
    fn data_processing() {
        assert_eq!(lift("SUB R1, R1, R2"), ["R1 = R1 - R2;"]);
        assert_eq!(lift("ADD R0, #1"), ["R0 = R0 + 0x1;"]);
        assert_eq!(
            lift("ADD R1, R1, R12, LSL #2"),
            ["gr_0 = R12 << 0x2;", "R1 = R1 + gr_0;"]
        );
        assert_eq!(lift("LSL R0, R0, #2"), ["R0 = R0 << 0x2;"]);
        assert_eq!(lift("RSB R0, R1, #0"), ["R0 = 0x0 - R1;"]);
        assert_eq!(
            lift("BIC R1, R0, #3"),
            ["gr_0 = not 0x3;", "R1 = R0 and gr_0;"]
        );
        assert_eq!(
            lift("MLA R0, R1, R2, R3"),
            ["gr_0 = R1 * R2;", "R0 = gr_0 + R3;"]
        );
        assert_eq!(lift("EOR R0, R0, R0"), ["R0 = 0x0;"]);
        assert_eq!(lift("MVN R1, #0"), ["R1 = not 0x0;"]);
        assert_eq!(lift("TST R2, #1"), ["R2 and 0x1;"]);
        assert_eq!(lift("UXTB R0, R1"), ["R0 = convert(R1);"]);
    }

    #[test]
    fn memory_and_stack() {
        assert_eq!(lift("LDR R0, [R11, #-4]"), ["R0 = [R11-0x4];"]);
        assert_eq!(lift("STR R0, [SP, #16]"), ["[SP+0x10] = R0;"]);
        assert_eq!(lift("STR LR, [SP]"), ["[SP] = LR;"]);
        assert_eq!(lift("LDR R0, [R0, R2, LSL #2]"), ["R0 = [R0+R2*0x4];"]);
        assert_eq!(lift("LDR R0, [R1], #4"), ["R0 = [R1];", "R1 = R1 + 0x4;"]);
        assert_eq!(
            lift("STR R0, [R1, #-8]!"),
            ["[R1-0x8] = R0;", "R1 = R1 - 0x8;"]
        );
        assert_eq!(
            lift("PUSH {R11, LR}"),
            ["[SP=SP+0x1] = R11;", "[SP=SP+0x1] = LR;"]
        );
        assert_eq!(
            lift("POP {R11, PC}"),
            ["R11 = [SP=SP-0x1];", "jmp [SP=SP-0x8];"]
        );
        assert_eq!(
            lift("LDMFD SP!, {R4, PC}"),
            ["R4 = [SP=SP-0x1];", "jmp [SP=SP-0x8];"]
        );
        assert_eq!(
            lift("LDR PC, [SP], #4"),
            ["SP = SP + 0x4;", "jmp [SP=SP-0x8];"]
        );
        assert_eq!(lift("MOV PC, LR"), ["jmp [SP=SP-0x8];"]);
        assert_eq!(lift("MRS R0, APSR"), ["R0 = EFLAGS;"]);
    }

    #[test]
    fn conditional_bodies() {
        assert_eq!(lift("MOVWNE R2, #1"), ["if (ZF == 0) R2 = 0x1;"]);
        assert_eq!(lift("CMPNE R0, R1"), ["if (ZF == 0) compare(R0, R1);"]);
        assert_eq!(lift("BLNE 0x10"), ["if (ZF == 0) call 0x10;"]);
        assert_eq!(lift("BXEQ LR"), ["if (ZF == 1) jmp [SP=SP-0x8];"]);
        assert_eq!(lift("TSTNE R0, R1"), ["R0 and R1;"]);
    }

    #[test]
    fn ignored_and_unknown() {
        for m in ["DMB", "SVC #0", "CLZ R0, R1", "PLD [R0]", "VLD1"] {
            assert!(lift(m).is_empty(), "{m}");
        }
        assert_eq!(
            lift_tags("WIBBLE R0"),
            [("UNKNOWN;".into(), PatternTag::Unknown)]
        );
    }
}
