//! Canonical MAIL text rendering.
//!
//! One statement per line, terminated by `;`. When a whole program is
//! emitted, every line carries a trailing `-- @0x<addr>` comment naming the
//! source address, and `start_function_N` lines also carry the function name.
//! Instructions that produced no statement appear as comment-only lines.

use std::collections::HashMap;
use std::fmt::{self, Write};

use super::ast::*;

/// Column at which address annotations start.
const ANNOTATION_COLUMN: usize = 40;

impl fmt::Display for Register {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Register::Named(n) => f.write_str(n),
            Register::Pair(a, b) => write!(f, "{a}:{b}"),
            Register::Flag(flag) => f.write_str(flag.name()),
            Register::Eflags => f.write_str("EFLAGS"),
            Register::Sp => f.write_str("SP"),
            Register::Gr(n) => write!(f, "gr_{n}"),
            Register::Fr(n) => write!(f, "fr_{n}"),
        }
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Address::Const(a) => write!(f, "[0x{a:x}]"),
            Address::Reg { base, terms } => {
                write!(f, "[{base}")?;
                for (op, term) in terms {
                    f.write_str(op.symbol())?;
                    match term {
                        AddrTerm::Reg(r) => write!(f, "{r}")?,
                        AddrTerm::Const(c) => write!(f, "0x{c:x}")?,
                    }
                }
                f.write_char(']')
            }
            Address::Stack(s) => {
                let sign = match s.op {
                    StackOp::Push => '+',
                    StackOp::Pop => '-',
                };
                write!(f, "[SP=SP{sign}0x{:x}]", s.amount)
            }
            Address::Unknown => f.write_str("UNKNOWN"),
        }
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => r.fmt(f),
            Operand::Mem(a) => a.fmt(f),
            Operand::Const(c) => c.fmt(f),
        }
    }
}

impl fmt::Display for LibCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.name)?;
        for (i, arg) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            arg.fmt(f)?;
        }
        f.write_char(')')
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Value(a) => a.fmt(f),
            Expr::Unary(op, a) => write!(f, "{} {a}", op.symbol()),
            Expr::Binary(a, op, b) => write!(f, "{a} {} {b}", op.symbol()),
            Expr::Call(c) => c.fmt(f),
        }
    }
}

impl fmt::Display for Lvalue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lvalue::Reg(r) => r.fmt(f),
            Lvalue::Mem(a) => a.fmt(f),
        }
    }
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}", self.dest, self.value)
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.lhs, self.op.symbol(), self.rhs)
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.first.fmt(f)?;
        for (op, c) in &self.rest {
            write!(f, " {} {c}", op.keyword())?;
        }
        Ok(())
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Direct(a) => write!(f, "0x{a:x}"),
            Target::Reg(r) => r.fmt(f),
            Target::Mem(a) => a.fmt(f),
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Branch::Jump(t) => write!(f, "jmp {t}"),
            Branch::Assign(a) => a.fmt(f),
            Branch::Call(t) => write!(f, "call {t}"),
            Branch::LibCall(c) => c.fmt(f),
        }
    }
}

impl fmt::Display for StatementKind {
    /// Renders the statement including its terminating `;`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatementKind::Assign(a) => write!(f, "{a};"),
            StatementKind::Control(c) => {
                write!(f, "if ({}) {};", c.cond, c.then)?;
                if let Some(other) = &c.otherwise {
                    write!(f, " else {other};")?;
                }
                Ok(())
            }
            StatementKind::Condition(c) => write!(f, "{c};"),
            StatementKind::FunctionStart(n) => write!(f, "start_function_{n};"),
            StatementKind::FunctionEnd(n) => write!(f, "end_function_{n};"),
            StatementKind::Jump(t) => write!(f, "jmp {t};"),
            StatementKind::LibCall(c) => write!(f, "{c};"),
            StatementKind::Call(t) => write!(f, "call {t};"),
            StatementKind::Test(t) => write!(f, "{} and {};", t.lhs, t.rhs),
            StatementKind::Halt => f.write_str("halt;"),
            StatementKind::Lock => f.write_str("lock;"),
            StatementKind::Unknown => f.write_str("UNKNOWN;"),
        }
    }
}

impl fmt::Display for MailStatement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.kind.fmt(f)
    }
}

pub fn emit_statement(stmt: &MailStatement) -> String {
    stmt.to_string()
}

pub fn emit_mail(program: &MailProgram) -> String {
    let names: HashMap<u32, &str> = program
        .functions
        .iter()
        .map(|f| (f.index, f.name.as_str()))
        .collect();
    let mut out = String::new();
    for line in &program.lines {
        if line.statements.is_empty() {
            let _ = writeln!(out, "{:w$}-- @0x{:x}", "", line.addr, w = ANNOTATION_COLUMN);
            continue;
        }
        for stmt in &line.statements {
            let text = stmt.to_string();
            let _ = write!(
                out,
                "{text:<w$} -- @0x{:x}",
                line.addr,
                w = ANNOTATION_COLUMN - 1
            );
            if let StatementKind::FunctionStart(n) = stmt.kind {
                if let Some(name) = names.get(&n) {
                    let _ = write!(out, " {name}");
                }
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assign(dest: &str, value: Expr) -> MailStatement {
        MailStatement::new(StatementKind::Assign(Assignment::new(
            Lvalue::Reg(Register::named(dest)),
            value,
        )))
    }

    #[test]
    fn emits_reference_forms() {
        let s = assign(
            "EAX",
            Expr::Binary(
                Operand::reg("EAX"),
                MathOp::Add,
                Operand::Const(Constant {
                    value: 1,
                    format: NumFormat::Hex { width: 2 },
                }),
            ),
        );
        assert_eq!(emit_statement(&s), "EAX = EAX + 0x01;");
        assert_eq!(
            emit_statement(&MailStatement::new(StatementKind::Halt)),
            "halt;"
        );
        let cmp = MailStatement::new(StatementKind::LibCall(LibCall::new(
            "compare",
            vec![Operand::reg("EAX"), Operand::hex(0)],
        )));
        assert_eq!(emit_statement(&cmp), "compare(EAX, 0x0);");
    }

    #[test]
    fn negative_constants_render_as_added_negatives() {
        let s = assign(
            "EAX",
            Expr::Binary(Operand::reg("EAX"), MathOp::Add, Operand::hex(-1)),
        );
        assert_eq!(emit_statement(&s), "EAX = EAX + -0x1;");
    }

    #[test]
    fn control_with_else() {
        let set = |v| {
            Branch::Assign(Assignment::new(
                Lvalue::Reg(Register::named("AL")),
                Operand::hex(v),
            ))
        };
        let s = MailStatement::new(StatementKind::Control(Control {
            cond: Condition::and(
                Comparison::flag_is(Flag::ZF, 0),
                Comparison::flags(Flag::SF, RelOp::Eq, Flag::OF),
            ),
            then: set(1),
            otherwise: Some(set(0)),
        }));
        assert_eq!(
            emit_statement(&s),
            "if (ZF == 0 and SF == OF) AL = 0x1; else AL = 0x0;"
        );
    }

    #[test]
    fn stack_and_address_forms() {
        let push = MailStatement::new(StatementKind::Assign(Assignment::new(
            Lvalue::Mem(Address::push(1)),
            Operand::reg("RBP"),
        )));
        assert_eq!(emit_statement(&push), "[SP=SP+0x1] = RBP;");
        let ret = MailStatement::new(StatementKind::Jump(Target::Mem(Address::pop(8))));
        assert_eq!(emit_statement(&ret), "jmp [SP=SP-0x8];");
        let load = assign(
            "EAX",
            Operand::Mem(Address::Reg {
                base: Register::named("RBP"),
                terms: vec![(MathOp::Sub, AddrTerm::Const(0x44))],
            })
            .into(),
        );
        assert_eq!(emit_statement(&load), "EAX = [RBP-0x44];");
        let j = MailStatement::new(StatementKind::Jump(Target::UNKNOWN));
        assert_eq!(emit_statement(&j), "jmp UNKNOWN;");
    }
}
