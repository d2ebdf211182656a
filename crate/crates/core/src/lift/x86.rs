//! x86-64 rules.

use std::sync::LazyLock;

use super::{guard, operand, predicate, reg, ret, target, LiftContext, LiftTable};
use crate::disasm::{Arch, AsmInstruction, AsmOperand, MemTerm, Sign};
use crate::mail::{
    validate_libcall, Address, Assignment, Branch, Comparison, Condition, Constant, Control, Expr,
    Flag, LibCall, Lvalue, MathOp, Operand, Register, RelOp, StatementKind, Test,
};

pub static TABLE: LazyLock<LiftTable> = LazyLock::new(|| {
    LiftTable::parse(Arch::X86, include_str!("../../data/x86.table")).expect("bundled x86 table")
});

type Kinds = Vec<StatementKind>;

pub(crate) fn lift_kinds(insn: &AsmInstruction, ctx: &mut LiftContext) -> Kinds {
    let mut out = Vec::new();
    if insn.prefixes.iter().any(|p| p == "LOCK") {
        out.push(StatementKind::Lock);
    }
    match lift_body(insn, ctx) {
        Some(kinds) => out.extend(kinds),
        None => out.push(StatementKind::Unknown),
    }
    out
}

pub(crate) fn assign(dest: Operand, value: impl Into<Expr>) -> Option<StatementKind> {
    let dest = match dest {
        Operand::Reg(r) => Lvalue::Reg(r),
        Operand::Mem(a) => Lvalue::Mem(a),
        Operand::Const(_) => return None,
    };
    Some(StatementKind::Assign(Assignment::new(dest, value)))
}

pub(crate) fn libcall(name: &str, args: Vec<Operand>) -> Option<LibCall> {
    validate_libcall(name, args.len()).then(|| LibCall::new(name, args))
}

pub(crate) fn math_op(symbol: &str) -> Option<MathOp> {
    Some(match symbol {
        "+" => MathOp::Add,
        "-" => MathOp::Sub,
        "*" => MathOp::Mul,
        "/" => MathOp::Div,
        "%" => MathOp::Rem,
        "and" => MathOp::And,
        "or" => MathOp::Or,
        "xor" => MathOp::Xor,
        "not" => MathOp::Not,
        "<<" => MathOp::Shl,
        ">>" => MathOp::Shr,
        _ => return None,
    })
}

fn named(name: &str) -> Operand {
    Operand::Reg(reg(name))
}

fn accumulator(mnemonic: &str) -> &'static str {
    match mnemonic.as_bytes().last() {
        Some(b'B') => "AL",
        Some(b'W') => "AX",
        Some(b'D') => "EAX",
        _ => "RAX",
    }
}

fn lift_body(insn: &AsmInstruction, ctx: &mut LiftContext) -> Option<Kinds> {
    let rule = TABLE.get(&insn.mnemonic)?;
    let ops = &insn.parsed;
    let op = |i: usize| ops.get(i).and_then(operand);
    let arg = rule.arg.as_deref().unwrap_or_default();
    let one = |k: Option<StatementKind>| k.map(|k| vec![k]);

    match rule.id.as_str() {
        "nop" | "ignore" => Some(Vec::new()),
        "move" => match ops.len() {
            2 => one(assign(op(0)?, op(1)?)),
            _ => None,
        },
        "convert" => {
            let call = |src: Operand| libcall("convert", vec![src]).map(Expr::Call);
            match arg.split_once('=') {
                Some((d, "")) => one(assign(named(d), call(op(0).unwrap_or(named("ST0")))?)),
                Some((d, s)) if ops.is_empty() => one(assign(named(d), call(named(s))?)),
                _ => match ops.len() {
                    1 => one(assign(op(0)?, call(op(0)?)?)),
                    2 => one(assign(op(0)?, call(op(1)?)?)),
                    _ => None,
                },
            }
        }
        "lea" => match ops.as_slice() {
            [_, AsmOperand::Mem(m)] => lea(op(0)?, m, ctx),
            _ => None,
        },
        "binop" => binop(insn, math_op(arg)?),
        "muldiv" => match ops.len() {
            1 => one(assign(
                named("RAX"),
                Expr::Binary(named("RAX"), math_op(arg)?, op(0)?),
            )),
            _ => binop(insn, math_op(arg)?),
        },
        "unop" => match ops.len() {
            1 => one(assign(op(0)?, Expr::Unary(math_op(arg)?, op(0)?))),
            _ => None,
        },
        "inc" | "dec" => {
            let step = if rule.id == "inc" { 1 } else { -1 };
            match ops.len() {
                1 => one(assign(
                    op(0)?,
                    Expr::Binary(op(0)?, MathOp::Add, Operand::hex(step)),
                )),
                _ => None,
            }
        }
        "push" => match ops.len() {
            1 => one(assign(Operand::Mem(Address::push(1)), op(0)?)),
            _ => None,
        },
        "pop" => match ops.len() {
            1 => one(assign(op(0)?, Operand::Mem(Address::pop(1)))),
            _ => None,
        },
        "pushf" => one(assign(
            Operand::Mem(Address::push(1)),
            Operand::Reg(Register::Eflags),
        )),
        "popf" => one(assign(
            Operand::Reg(Register::Eflags),
            Operand::Mem(Address::pop(1)),
        )),
        "call" => match ops.as_slice() {
            [t] => Some(vec![StatementKind::Call(target(t))]),
            _ => None,
        },
        "ret" => Some(vec![ret()]),
        "jmp" => match ops.as_slice() {
            [t] => Some(vec![StatementKind::Jump(target(t))]),
            _ => None,
        },
        "jcc" => match ops.as_slice() {
            [t] => Some(vec![guard(
                &predicate(arg)?,
                StatementKind::Jump(target(t)),
            )]),
            _ => None,
        },
        "setcc" => {
            let dest = match op(0)? {
                Operand::Reg(r) => Lvalue::Reg(r),
                Operand::Mem(a) => Lvalue::Mem(a),
                Operand::Const(_) => return None,
            };
            let set = |v| Branch::Assign(Assignment::new(dest.clone(), Operand::hex(v)));
            Some(vec![StatementKind::Control(Control {
                cond: predicate(arg)?,
                then: set(1),
                otherwise: Some(set(0)),
            })])
        }
        "loop" => {
            let [t] = ops.as_slice() else { return None };
            let rcx = named("RCX");
            let nonzero = Comparison::new(rcx.clone(), RelOp::Ne, Operand::hex(0));
            let cond = match predicate(arg) {
                Some(p) => Condition::and(nonzero, p.first),
                None => Condition::single(nonzero),
            };
            Some(vec![
                assign(
                    rcx.clone(),
                    Expr::Binary(rcx, MathOp::Add, Operand::hex(-1)),
                )?,
                guard(&cond, StatementKind::Jump(target(t))),
            ])
        }
        "jcxz" => {
            let [t] = ops.as_slice() else { return None };
            let cond = Condition::single(Comparison::new(named(arg), RelOp::Eq, Operand::hex(0)));
            Some(vec![guard(&cond, StatementKind::Jump(target(t)))])
        }
        "cmp" => match ops.len() {
            2 => Some(vec![StatementKind::LibCall(libcall(
                "compare",
                vec![op(0)?, op(1)?],
            )?)]),
            1 => Some(vec![StatementKind::LibCall(libcall(
                "compare",
                vec![named("ST0"), op(0)?],
            )?)]),
            _ => None,
        },
        "test" => match ops.len() {
            2 => Some(vec![StatementKind::Test(Test {
                lhs: op(0)?,
                rhs: op(1)?,
            })]),
            _ => None,
        },
        "xchg" => {
            let (a, b) = (op(0)?, op(1)?);
            if ops.len() != 2 {
                return None;
            }
            if a == b {
                return Some(Vec::new());
            }
            let tmp = Operand::Reg(ctx.temp());
            Some(vec![
                assign(tmp.clone(), a.clone())?,
                assign(a, b.clone())?,
                assign(b, tmp)?,
            ])
        }
        "flag" => {
            let (name, value) = arg.split_once('=')?;
            let flag = Flag::from_name(name)?;
            let value: i64 = value.parse().ok()?;
            one(assign(
                Operand::Reg(Register::Flag(flag)),
                Operand::hex(value),
            ))
        }
        "eflags-load" => one(assign(Operand::Reg(Register::Eflags), named("AH"))),
        "eflags-store" => one(assign(named("AH"), Operand::Reg(Register::Eflags))),
        "fn" => {
            let (dst, src) = match ops.len() {
                0 => (named("ST0"), named("ST0")),
                1 => (op(0)?, op(0)?),
                2 => (op(0)?, op(1)?),
                _ => return None,
            };
            one(assign(dst, Expr::Call(libcall(arg, vec![src])?)))
        }
        "fn2" => {
            let (dst, a, b) = match ops.len() {
                2 => (op(0)?, op(0)?, op(1)?),
                3 => (op(0)?, op(1)?, op(2)?),
                _ => return None,
            };
            one(assign(dst, Expr::Call(libcall(arg, vec![a, b])?)))
        }
        "scan" => match ops.len() {
            2 => Some(vec![StatementKind::LibCall(libcall(
                arg,
                vec![op(1)?, op(0)?],
            )?)]),
            _ => None,
        },
        "bits" => match ops.len() {
            2 => Some(vec![StatementKind::LibCall(libcall(
                arg,
                vec![op(0)?, op(1)?, Operand::hex(1)],
            )?)]),
            _ => None,
        },
        "bit2" => match ops.len() {
            2 => Some(vec![StatementKind::LibCall(libcall(
                arg,
                vec![op(0)?, op(1)?],
            )?)]),
            _ => None,
        },
        "swap" => match ops.len() {
            1 => Some(vec![StatementKind::LibCall(libcall("swap", vec![op(0)?])?)]),
            _ => None,
        },
        "string" => string_op(insn, arg),
        "halt" => Some(vec![StatementKind::Halt]),
        "lock" => Some(vec![StatementKind::Lock]),
        "int" => match ops.as_slice() {
            [AsmOperand::Imm(3)] => Some(Vec::new()),
            _ => None,
        },
        _ => None,
    }
}

/// `dst = dst op src`, with the zeroing and identity idioms folded.
fn binop(insn: &AsmInstruction, op: MathOp) -> Option<Kinds> {
    let ops: Vec<Operand> = insn.parsed.iter().map(operand).collect::<Option<_>>()?;
    let carry = matches!(insn.mnemonic.as_str(), "ADC" | "SBB");
    let fpu = insn.mnemonic.starts_with('F');
    let shift = matches!(op, MathOp::Shl | MathOp::Shr);
    let (dst, a, b) = match ops.as_slice() {
        [] if fpu => (named("ST0"), named("ST0"), named("ST1")),
        [src] if fpu => (named("ST0"), named("ST0"), src.clone()),
        [d] if shift => (d.clone(), d.clone(), Operand::hex(1)),
        [d, s] => (d.clone(), d.clone(), s.clone()),
        [d, x, y] => (d.clone(), x.clone(), y.clone()),
        _ => return None,
    };
    if !carry && a == b && matches!(op, MathOp::Xor | MathOp::Sub) {
        return Some(vec![assign(dst, Operand::hex(0))?]);
    }
    if !carry && a == b && matches!(op, MathOp::And | MathOp::Or) {
        return Some(vec![assign(dst, a)?]);
    }
    let zero = matches!(b, Operand::Const(Constant { value: 0, .. }));
    if !carry && zero && matches!(op, MathOp::Add | MathOp::Sub | MathOp::Or | MathOp::Xor)
        || zero && shift
    {
        return Some(vec![assign(dst, a)?]);
    }
    Some(vec![assign(dst, Expr::Binary(a, op, b))?])
}

/// Address arithmetic as expressions; scaled indexes and chains of more
/// than two terms go through gr temporaries.
fn lea(dst: Operand, mem: &crate::disasm::MemRef, ctx: &mut LiftContext) -> Option<Kinds> {
    let mut out = Vec::new();
    let mut terms: Vec<(MathOp, Operand)> = Vec::new();
    for (sign, term) in &mem.terms {
        let op = match sign {
            Sign::Plus => MathOp::Add,
            Sign::Minus => MathOp::Sub,
        };
        let value = match term {
            MemTerm::Reg(r) => named(r),
            MemTerm::Disp(d) => Operand::hex(*d as i64),
            MemTerm::Scaled(r, s) => {
                let tmp = Operand::Reg(ctx.temp());
                out.push(assign(
                    tmp.clone(),
                    Expr::Binary(named(r), MathOp::Mul, Operand::hex(*s as i64)),
                )?);
                tmp
            }
        };
        terms.push((op, value));
    }
    let mut iter = terms.into_iter();
    let (first_op, mut acc) = iter.next()?;
    if first_op == MathOp::Sub {
        acc = match acc {
            Operand::Const(c) => Operand::hex(c.value.wrapping_neg()),
            other => {
                let tmp = Operand::Reg(ctx.temp());
                out.push(assign(tmp.clone(), Expr::Unary(MathOp::Sub, other))?);
                tmp
            }
        };
    }
    let rest: Vec<_> = iter.collect();
    if rest.is_empty() {
        out.push(assign(dst, acc)?);
        return Some(out);
    }
    let last = rest.len() - 1;
    for (i, (op, value)) in rest.into_iter().enumerate() {
        if i == last {
            out.push(assign(dst.clone(), Expr::Binary(acc.clone(), op, value))?);
        } else {
            let tmp = Operand::Reg(ctx.temp());
            out.push(assign(tmp.clone(), Expr::Binary(acc, op, value))?);
            acc = tmp;
        }
    }
    Some(out)
}

fn string_op(insn: &AsmInstruction, kind: &str) -> Option<Kinds> {
    let ops: Vec<Operand> = insn.parsed.iter().map(operand).collect::<Option<_>>()?;
    // SSE scalar MOVSD shares the mnemonic with the string move
    if insn.parsed.iter().any(|o| matches!(o, AsmOperand::Reg(_))) && kind == "MOVS" {
        return match ops.as_slice() {
            [d, s] => Some(vec![assign(d.clone(), s.clone())?]),
            _ => None,
        };
    }
    let src = || Operand::Mem(Address::reg(reg("RSI")));
    let dst = || Operand::Mem(Address::reg(reg("RDI")));
    let acc = || named(accumulator(&insn.mnemonic));
    let pick = |i: usize, default: Operand| ops.get(i).cloned().unwrap_or(default);
    let kind = match kind {
        "MOVS" => assign(pick(0, dst()), pick(1, src()))?,
        "LODS" => match ops.as_slice() {
            [s] => assign(acc(), s.clone())?,
            _ => assign(pick(0, acc()), pick(1, src()))?,
        },
        "STOS" => match ops.as_slice() {
            [d] => assign(d.clone(), acc())?,
            _ => assign(pick(0, dst()), pick(1, acc()))?,
        },
        "CMPS" => StatementKind::LibCall(libcall("compare", vec![pick(0, src()), pick(1, dst())])?),
        "SCAS" => match ops.as_slice() {
            [d] => StatementKind::LibCall(libcall("compare", vec![acc(), d.clone()])?),
            _ => StatementKind::LibCall(libcall("compare", vec![pick(0, acc()), pick(1, dst())])?),
        },
        _ => return None,
    };
    Some(vec![kind])
}
