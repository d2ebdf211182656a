//! Recursive descent parser for MAIL text.
//!
//! Accepts the canonical output of [`emit_mail`](super::emit_mail) and the
//! looser hand-written forms: keywords are case-insensitive, decimal literals
//! are accepted, and comments start with `--`. A comment of the form
//! `-- @0x<addr> [name]` following a statement on the same line gives that
//! statement its source address; on a line of its own it records an address
//! that produced no statement.

use super::ast::*;
use super::library::{is_library_function, validate_libcall};
use super::pattern::ClassifyOptions;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("{line}:{column}: expected {}, found {found}", expected.join(" or "))]
    Syntax {
        line: usize,
        column: usize,
        expected: Vec<String>,
        found: String,
    },
    #[error("{line}:{column}: unknown library function `{name}`")]
    UnknownFunction {
        line: usize,
        column: usize,
        name: String,
    },
    #[error("{line}:{column}: `{name}` does not take {argc} argument(s)")]
    Arity {
        line: usize,
        column: usize,
        name: String,
        argc: usize,
    },
    #[error("{line}:{column}: {message}")]
    Structure {
        line: usize,
        column: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num { value: u64, format: NumFormat },
    Punct(&'static str),
    Annotation { addr: u64, name: Option<String> },
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
    /// Whitespace or a comment precedes this token.
    spaced: bool,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Num { value, .. } => format!("number {value:#x}"),
            Tok::Punct(p) => format!("`{p}`"),
            Tok::Annotation { .. } => "address annotation".to_string(),
            Tok::Eof => "end of input".to_string(),
        }
    }
}

const PUNCT: [&str; 21] = [
    "==", "!=", "<=", ">=", "<<", ">>", "=", "<", ">", "+", "-", "*", "/", "%", "!", "(", ")", "[",
    "]", ",", ";",
];

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let mut tokens = Vec::new();
    for (lineno, text) in src.lines().enumerate() {
        let line = lineno + 1;
        let bytes = text.as_bytes();
        let mut i = 0;
        let mut spaced = true;
        while i < bytes.len() {
            let c = bytes[i];
            let column = i + 1;
            if c.is_ascii_whitespace() {
                spaced = true;
                i += 1;
                continue;
            }
            if text[i..].starts_with("--") {
                if let Some(tok) = annotation(&text[i + 2..]) {
                    tokens.push(Token {
                        tok,
                        line,
                        column,
                        spaced,
                    });
                }
                break;
            }
            let tok = if c.is_ascii_alphabetic() || c == b'_' {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                Tok::Ident(text[start..i].to_string())
            } else if c.is_ascii_digit() {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_alphanumeric() {
                    i += 1;
                }
                number(&text[start..i]).ok_or_else(|| ParseError::Syntax {
                    line,
                    column,
                    expected: vec!["number".into()],
                    found: format!("`{}`", &text[start..i]),
                })?
            } else if c == b':' {
                i += 1;
                Tok::Punct(":")
            } else if let Some(p) = PUNCT.iter().find(|p| text[i..].starts_with(**p)) {
                i += p.len();
                Tok::Punct(p)
            } else {
                return Err(ParseError::Syntax {
                    line,
                    column,
                    expected: vec!["token".into()],
                    found: format!("`{}`", c as char),
                });
            };
            tokens.push(Token {
                tok,
                line,
                column,
                spaced,
            });
            spaced = false;
        }
    }
    let line = src.lines().count() + 1;
    tokens.push(Token {
        tok: Tok::Eof,
        line,
        column: 1,
        spaced: true,
    });
    Ok(tokens)
}

fn number(text: &str) -> Option<Tok> {
    if let Some(hex) = text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")) {
        let value = u64::from_str_radix(hex, 16).ok()?;
        // Width only records zero padding, so `0x48` and `0x8` both read as width 1.
        let width = if hex.len() > 1 && hex.starts_with('0') {
            hex.len().min(u8::MAX as usize) as u8
        } else {
            1
        };
        Some(Tok::Num {
            value,
            format: NumFormat::Hex { width },
        })
    } else {
        let value = text.parse().ok()?;
        Some(Tok::Num {
            value,
            format: NumFormat::Decimal,
        })
    }
}

fn annotation(comment: &str) -> Option<Tok> {
    let rest = comment.trim_start().strip_prefix('@')?;
    let mut parts = rest.split_whitespace();
    let addr = parts.next()?;
    let addr = u64::from_str_radix(addr.strip_prefix("0x")?, 16).ok()?;
    let name = parts.next().map(str::to_string);
    Some(Tok::Annotation { addr, name })
}

fn keyword(tok: &Tok, kw: &str) -> bool {
    matches!(tok, Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
}

fn marker(ident: &str) -> Option<StatementKind> {
    let lower = ident.to_ascii_lowercase();
    if let Some(n) = lower.strip_prefix("start_function_") {
        return n.parse().ok().map(StatementKind::FunctionStart);
    }
    if let Some(n) = lower.strip_prefix("end_function_") {
        return n.parse().ok().map(StatementKind::FunctionEnd);
    }
    None
}

const RESERVED: [&str; 10] = [
    "if", "else", "jmp", "call", "halt", "lock", "and", "or", "xor", "not",
];

fn register_from_ident(ident: &str) -> Option<Register> {
    if RESERVED.iter().any(|k| k.eq_ignore_ascii_case(ident)) || ident == "UNKNOWN" {
        return None;
    }
    Some(Register::from_name(ident))
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn peek_at(&self, n: usize) -> &Token {
        &self.tokens[(self.pos + n).min(self.tokens.len() - 1)]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, expected: &[&str]) -> Result<T, ParseError> {
        let t = self.peek();
        Err(ParseError::Syntax {
            line: t.line,
            column: t.column,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: t.tok.describe(),
        })
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek().tok, Tok::Punct(q) if q == p)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> Result<Token, ParseError> {
        if self.is_punct(p) {
            Ok(self.bump())
        } else {
            self.error(&[&format!("`{p}`")])
        }
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if keyword(&self.peek().tok, kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn number(&mut self) -> Result<(u64, NumFormat), ParseError> {
        match self.peek().tok {
            Tok::Num { value, format } => {
                self.bump();
                Ok((value, format))
            }
            _ => self.error(&["number"]),
        }
    }

    /// `-` immediately followed by a number, in operand position.
    fn at_negative_literal(&self) -> bool {
        self.is_punct("-")
            && matches!(self.peek_at(1).tok, Tok::Num { .. })
            && !self.peek_at(1).spaced
            && self.peek_at(1).line == self.peek().line
    }

    fn register(&mut self) -> Result<Register, ParseError> {
        let Tok::Ident(name) = self.peek().tok.clone() else {
            return self.error(&["register"]);
        };
        let Some(reg) = register_from_ident(&name) else {
            return self.error(&["register"]);
        };
        self.bump();
        if let Register::Named(first) = &reg {
            if self.is_punct(":") {
                self.bump();
                let Tok::Ident(second) = self.peek().tok.clone() else {
                    return self.error(&["register"]);
                };
                self.bump();
                return Ok(Register::Pair(first.clone(), second));
            }
        }
        Ok(reg)
    }

    fn arith_op(&self) -> Option<MathOp> {
        match self.peek().tok {
            Tok::Punct("+") => Some(MathOp::Add),
            Tok::Punct("-") => Some(MathOp::Sub),
            Tok::Punct("*") => Some(MathOp::Mul),
            Tok::Punct("/") => Some(MathOp::Div),
            Tok::Punct("%") => Some(MathOp::Rem),
            _ => None,
        }
    }

    fn math_op(&self) -> Option<MathOp> {
        if let Some(op) = self.arith_op() {
            return Some(op);
        }
        match &self.peek().tok {
            Tok::Punct("<<") => Some(MathOp::Shl),
            Tok::Punct(">>") => Some(MathOp::Shr),
            Tok::Punct("!") => Some(MathOp::Not),
            Tok::Ident(s) => match s.to_ascii_lowercase().as_str() {
                "and" => Some(MathOp::And),
                "or" => Some(MathOp::Or),
                "xor" => Some(MathOp::Xor),
                "not" => Some(MathOp::Not),
                _ => None,
            },
            _ => None,
        }
    }

    fn rel_op(&self) -> Option<RelOp> {
        match self.peek().tok {
            Tok::Punct("<") => Some(RelOp::Lt),
            Tok::Punct(">") => Some(RelOp::Gt),
            Tok::Punct("<=") => Some(RelOp::Le),
            Tok::Punct(">=") => Some(RelOp::Ge),
            Tok::Punct("==") => Some(RelOp::Eq),
            Tok::Punct("!=") => Some(RelOp::Ne),
            _ => None,
        }
    }

    fn address(&mut self) -> Result<Address, ParseError> {
        self.expect_punct("[")?;
        if let Tok::Num { value, .. } = self.peek().tok {
            self.bump();
            self.expect_punct("]")?;
            return Ok(Address::Const(value));
        }
        let is_sp = keyword(&self.peek().tok, "sp");
        if is_sp && matches!(self.peek_at(1).tok, Tok::Punct("=")) {
            self.bump();
            self.bump();
            if !self.eat_keyword("sp") {
                return self.error(&["`SP`"]);
            }
            let op = if self.eat_punct("+") {
                StackOp::Push
            } else if self.eat_punct("-") {
                StackOp::Pop
            } else {
                return self.error(&["`+`", "`-`"]);
            };
            let at = self.peek().clone();
            let (amount, _) = self.number()?;
            if amount == 0 {
                return Err(ParseError::Structure {
                    line: at.line,
                    column: at.column,
                    message: "stack offsets must be positive".into(),
                });
            }
            self.expect_punct("]")?;
            return Ok(Address::Stack(StackExpr { op, amount }));
        }
        let base = self.register()?;
        let mut terms = Vec::new();
        while let Some(op) = self.arith_op() {
            self.bump();
            let term = match self.peek().tok {
                Tok::Num { value, .. } => {
                    self.bump();
                    AddrTerm::Const(value)
                }
                Tok::Ident(_) => AddrTerm::Reg(self.register()?),
                _ => return self.error(&["register", "number"]),
            };
            terms.push((op, term));
        }
        if !self.is_punct("]") {
            return self.error(&["`]`", "arithmetic operator"]);
        }
        self.bump();
        Ok(Address::Reg { base, terms })
    }

    fn operand(&mut self) -> Result<Operand, ParseError> {
        if self.at_negative_literal() {
            self.bump();
            let (value, format) = self.number()?;
            return Ok(Operand::Const(Constant {
                value: (value as i64).wrapping_neg(),
                format,
            }));
        }
        match &self.peek().tok {
            Tok::Num { value, format } => {
                let c = Constant {
                    value: *value as i64,
                    format: *format,
                };
                self.bump();
                Ok(Operand::Const(c))
            }
            Tok::Punct("[") => Ok(Operand::Mem(self.address()?)),
            Tok::Ident(s) if s == "UNKNOWN" => {
                self.bump();
                Ok(Operand::Mem(Address::Unknown))
            }
            Tok::Ident(_) => Ok(Operand::Reg(self.register()?)),
            _ => self.error(&["register", "address", "number"]),
        }
    }

    fn target(&mut self) -> Result<Target, ParseError> {
        match self.operand()? {
            Operand::Const(c) => Ok(Target::Direct(c.value as u64)),
            Operand::Reg(r) => Ok(Target::Reg(r)),
            Operand::Mem(a) => Ok(Target::Mem(a)),
        }
    }

    fn at_libcall(&self) -> bool {
        matches!(self.peek().tok, Tok::Ident(_)) && matches!(self.peek_at(1).tok, Tok::Punct("("))
    }

    fn libcall(&mut self) -> Result<LibCall, ParseError> {
        let at = self.bump();
        let Tok::Ident(name) = at.tok else {
            unreachable!("checked by at_libcall")
        };
        if !is_library_function(&name) {
            return Err(ParseError::UnknownFunction {
                line: at.line,
                column: at.column,
                name,
            });
        }
        self.expect_punct("(")?;
        let mut args = vec![self.operand()?];
        while self.eat_punct(",") {
            args.push(self.operand()?);
        }
        self.expect_punct(")")?;
        if !validate_libcall(&name, args.len()) {
            return Err(ParseError::Arity {
                line: at.line,
                column: at.column,
                name,
                argc: args.len(),
            });
        }
        Ok(LibCall { name, args })
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        if self.at_libcall() {
            return Ok(Expr::Call(self.libcall()?));
        }
        if !self.at_negative_literal() {
            if let Some(op) = self.math_op() {
                if !matches!(self.peek().tok, Tok::Ident(_))
                    || !matches!(self.peek_at(1).tok, Tok::Punct(";" | "=") | Tok::Eof)
                {
                    self.bump();
                    return Ok(Expr::Unary(op, self.operand()?));
                }
            }
        }
        let lhs = self.operand()?;
        match self.math_op() {
            Some(MathOp::Not) => self.error(&["binary operator", "`;`"]),
            Some(op) => {
                self.bump();
                Ok(Expr::Binary(lhs, op, self.operand()?))
            }
            None => Ok(Expr::Value(lhs)),
        }
    }

    fn lvalue(&mut self, op: Operand) -> Result<Lvalue, ParseError> {
        match op {
            Operand::Reg(r) => Ok(Lvalue::Reg(r)),
            Operand::Mem(a) => Ok(Lvalue::Mem(a)),
            Operand::Const(_) => self.error(&["register or address on the left of `=`"]),
        }
    }

    fn assignment_after(&mut self, dest: Operand) -> Result<Assignment, ParseError> {
        let dest = self.lvalue(dest)?;
        self.expect_punct("=")?;
        Ok(Assignment {
            dest,
            value: self.expr()?,
        })
    }

    fn comparison(&mut self) -> Result<Comparison, ParseError> {
        let lhs = self.operand()?;
        self.comparison_after(lhs)
    }

    fn comparison_after(&mut self, lhs: Operand) -> Result<Comparison, ParseError> {
        let Some(op) = self.rel_op() else {
            return self.error(&["relational operator"]);
        };
        self.bump();
        Ok(Comparison {
            lhs,
            op,
            rhs: self.operand()?,
        })
    }

    fn condition_after(&mut self, first: Comparison) -> Result<Condition, ParseError> {
        let mut rest = Vec::new();
        loop {
            let op = if keyword(&self.peek().tok, "and") {
                BoolOp::And
            } else if keyword(&self.peek().tok, "or") {
                BoolOp::Or
            } else {
                break;
            };
            self.bump();
            rest.push((op, self.comparison()?));
        }
        Ok(Condition { first, rest })
    }

    fn branch(&mut self) -> Result<Branch, ParseError> {
        if self.eat_keyword("jmp") {
            return Ok(Branch::Jump(self.target()?));
        }
        if self.eat_keyword("call") {
            return Ok(Branch::Call(self.target()?));
        }
        if self.at_libcall() {
            return Ok(Branch::LibCall(self.libcall()?));
        }
        let dest = self.operand()?;
        Ok(Branch::Assign(self.assignment_after(dest)?))
    }

    /// Parses one statement including its terminating `;`.
    fn statement(&mut self) -> Result<StatementKind, ParseError> {
        let start = self.peek().clone();
        if let Tok::Ident(word) = &start.tok {
            if let Some(kind) = marker(word) {
                self.bump();
                self.eat_punct(";");
                return Ok(kind);
            }
        }
        let kind = if self.eat_keyword("if") {
            self.expect_punct("(")?;
            let first = self.comparison()?;
            let cond = self.condition_after(first)?;
            self.expect_punct(")")?;
            let then = self.branch()?;
            self.expect_punct(";")?;
            let otherwise = if self.eat_keyword("else") {
                let b = self.branch()?;
                self.expect_punct(";")?;
                Some(b)
            } else {
                None
            };
            return Ok(StatementKind::Control(Control {
                cond,
                then,
                otherwise,
            }));
        } else if self.eat_keyword("jmp") {
            StatementKind::Jump(self.target()?)
        } else if self.eat_keyword("call") {
            StatementKind::Call(self.target()?)
        } else if keyword(&start.tok, "halt") && !matches!(self.peek_at(1).tok, Tok::Punct("=")) {
            self.bump();
            StatementKind::Halt
        } else if keyword(&start.tok, "lock") && !matches!(self.peek_at(1).tok, Tok::Punct("=")) {
            self.bump();
            StatementKind::Lock
        } else if matches!(&start.tok, Tok::Ident(s) if s == "UNKNOWN")
            && matches!(self.peek_at(1).tok, Tok::Punct(";"))
        {
            self.bump();
            StatementKind::Unknown
        } else if self.at_libcall() {
            StatementKind::LibCall(self.libcall()?)
        } else {
            let lhs = self.operand()?;
            if self.is_punct("=") {
                StatementKind::Assign(self.assignment_after(lhs)?)
            } else if self.rel_op().is_some() {
                let first = self.comparison_after(lhs)?;
                StatementKind::Condition(self.condition_after(first)?)
            } else if self.eat_keyword("and") {
                StatementKind::Test(Test {
                    lhs,
                    rhs: self.operand()?,
                })
            } else {
                return self.error(&["`=`", "relational operator", "`and`"]);
            }
        };
        self.expect_punct(";")?;
        Ok(kind)
    }
}

pub fn parse_mail(text: &str) -> Result<MailProgram, ParseError> {
    parse_mail_with(text, ClassifyOptions::default())
}

/// Parses a program and pattern-tags every statement with `opts`.
pub fn parse_mail_with(text: &str, opts: ClassifyOptions) -> Result<MailProgram, ParseError> {
    let mut p = Parser {
        tokens: lex(text)?,
        pos: 0,
    };
    let mut program = MailProgram::default();
    // (index, name, start line index, start token position)
    let mut open: Vec<(u32, Option<String>, usize, Token)> = Vec::new();
    let mut next_addr = 0u64;
    let mut last_annotated: Option<u64> = None;

    loop {
        let here = p.peek().clone();
        match &here.tok {
            Tok::Eof => break,
            Tok::Annotation { addr, .. } => {
                p.bump();
                if program.lines.last().map(|l| l.addr) != Some(*addr) {
                    program.lines.push(SourceLine {
                        addr: *addr,
                        statements: Vec::new(),
                    });
                }
                next_addr = addr + 1;
                last_annotated = Some(*addr);
                continue;
            }
            _ => {}
        }
        let kind = p.statement()?;
        let end_line = p.tokens[p.pos.saturating_sub(1)].line;
        let (addr, name) = match p.peek().tok.clone() {
            Tok::Annotation { addr, name } if p.peek().line == end_line => {
                p.bump();
                (Some(addr), name)
            }
            _ => (None, None),
        };
        let stmt = MailStatement::classified(kind, opts);
        let line_index = match addr {
            Some(a)
                if last_annotated == Some(a) && program.lines.last().map(|l| l.addr) == Some(a) =>
            {
                program.lines.len() - 1
            }
            Some(a) => {
                program.lines.push(SourceLine {
                    addr: a,
                    statements: Vec::new(),
                });
                program.lines.len() - 1
            }
            None => {
                program.lines.push(SourceLine {
                    addr: next_addr,
                    statements: Vec::new(),
                });
                program.lines.len() - 1
            }
        };
        let addr = program.lines[line_index].addr;
        next_addr = addr + 1;
        last_annotated = Some(addr);

        match stmt.kind {
            StatementKind::FunctionStart(n) => open.push((n, name, line_index, here.clone())),
            StatementKind::FunctionEnd(n) => {
                let Some((index, name, first, _)) = open.pop() else {
                    return Err(ParseError::Structure {
                        line: here.line,
                        column: here.column,
                        message: format!("end_function_{n} without matching start"),
                    });
                };
                if index != n {
                    return Err(ParseError::Structure {
                        line: here.line,
                        column: here.column,
                        message: format!("end_function_{n} closes start_function_{index}"),
                    });
                }
                program.functions.push(FunctionSpan {
                    index,
                    name: name.unwrap_or_else(|| format!("function_{index}")),
                    start: program.lines[first].addr,
                    end: addr,
                    lines: first..line_index + 1,
                });
            }
            _ => {}
        }
        program.lines[line_index].statements.push(stmt);
    }
    if let Some((index, _, _, at)) = open.pop() {
        return Err(ParseError::Structure {
            line: at.line,
            column: at.column,
            message: format!("start_function_{index} is never closed"),
        });
    }
    program.functions.sort_by_key(|f| f.lines.start);
    Ok(program)
}

/// Parses exactly one statement (trailing `;` optional).
pub fn parse_statement(text: &str) -> Result<MailStatement, ParseError> {
    let trimmed = text.trim_end();
    let owned;
    let src = if trimmed.ends_with(';') {
        trimmed
    } else {
        owned = format!("{trimmed};");
        &owned
    };
    let program = parse_mail(src)?;
    let mut stmts = program.lines.into_iter().flat_map(|l| l.statements);
    match (stmts.next(), stmts.next()) {
        (Some(s), None) => Ok(s),
        _ => Err(ParseError::Structure {
            line: 1,
            column: 1,
            message: "expected exactly one statement".into(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mail::{emit_mail, PatternTag};

    #[test]
    fn empty_input_is_an_empty_program() {
        let p = parse_mail("").unwrap();
        assert!(p.lines.is_empty());
        assert!(p.functions.is_empty());
        assert!(parse_mail("-- only a comment\n\n")
            .unwrap()
            .lines
            .is_empty());
    }

    #[test]
    fn parses_binary_assignment() {
        let s = parse_statement("EAX = EAX + ECX;").unwrap();
        assert_eq!(
            s.kind,
            StatementKind::Assign(Assignment {
                dest: Lvalue::Reg(Register::named("EAX")),
                value: Expr::Binary(Operand::reg("EAX"), MathOp::Add, Operand::reg("ECX")),
            })
        );
        assert_eq!(s.pattern, PatternTag::Assign);
    }

    #[test]
    fn parses_conditional_jump() {
        let s = parse_statement("if (ZF == 1) jmp 0x401267;").unwrap();
        let StatementKind::Control(c) = &s.kind else {
            panic!("{s:?}")
        };
        assert_eq!(c.cond, Condition::single(Comparison::flag_is(Flag::ZF, 1)));
        assert_eq!(c.then, Branch::Jump(Target::Direct(0x401267)));
        assert!(c.otherwise.is_none());
        assert_eq!(s.to_string(), "if (ZF == 1) jmp 0x401267;");
    }

    #[test]
    fn negative_literal_versus_operators() {
        let s = parse_statement("EAX = EAX + -0x1;").unwrap();
        assert_eq!(
            s.kind,
            StatementKind::Assign(Assignment {
                dest: Lvalue::Reg(Register::named("EAX")),
                value: Expr::Binary(Operand::reg("EAX"), MathOp::Add, Operand::hex(-1)),
            })
        );
        let s = parse_statement("EAX = - 0x1;").unwrap();
        assert!(matches!(
            s.kind,
            StatementKind::Assign(Assignment {
                value: Expr::Unary(MathOp::Sub, _),
                ..
            })
        ));
        let s = parse_statement("EAX = EAX - -0x1;").unwrap();
        assert_eq!(s.to_string(), "EAX = EAX - -0x1;");
        let s = parse_statement("EAX = not EAX;").unwrap();
        assert_eq!(s.to_string(), "EAX = not EAX;");
    }

    #[test]
    fn rejects_unknown_library_function_with_position() {
        let err = parse_mail("EAX = 0x1;\n  frobnicate(EAX);").unwrap_err();
        assert_eq!(
            err,
            ParseError::UnknownFunction {
                line: 2,
                column: 3,
                name: "frobnicate".into()
            }
        );
        assert!(matches!(
            parse_mail("compare(EAX);"),
            Err(ParseError::Arity { argc: 1, .. })
        ));
    }

    #[test]
    fn syntax_errors_carry_position_and_expectations() {
        let err = parse_mail("EAX = EAX +;").unwrap_err();
        let ParseError::Syntax {
            line,
            column,
            expected,
            ..
        } = err
        else {
            panic!()
        };
        assert_eq!((line, column), (1, 12));
        assert!(expected.contains(&"register".to_string()));
        assert!(parse_mail("EAX = 0x1").is_err());
        assert!(parse_mail("0x1 = EAX;").is_err());
        assert!(parse_mail("EAX = EAX not ECX;").is_err());
        assert!(parse_mail("[SP=SP+0x0] = EAX;").is_err());
    }

    #[test]
    fn function_markers_must_nest() {
        assert!(parse_mail("start_function_0;\nhalt;\nend_function_1;").is_err());
        assert!(parse_mail("start_function_0;\nhalt;").is_err());
        assert!(parse_mail("end_function_0;").is_err());
        let p = parse_mail("start_function_3;\nhalt;\nend_function_3;").unwrap();
        assert_eq!(p.functions.len(), 1);
        assert_eq!(p.functions[0].name, "function_3");
        assert_eq!(p.functions[0].lines, 0..3);
    }

    #[test]
    fn annotations_group_statements_by_address() {
        let text = "start_function_0; -- @0x100 main\n\
                    gr_0 = EAX; -- @0x104\n\
                    EAX = EBX; -- @0x104\n\
                    -- @0x106\n\
                    jmp [SP=SP-0x8]; -- @0x108\n\
                    end_function_0; -- @0x108\n";
        let p = parse_mail(text).unwrap();
        let addrs: Vec<_> = p
            .lines
            .iter()
            .map(|l| (l.addr, l.statements.len()))
            .collect();
        assert_eq!(addrs, vec![(0x100, 1), (0x104, 2), (0x106, 0), (0x108, 2)]);
        assert_eq!(p.functions[0].name, "main");
        assert_eq!((p.functions[0].start, p.functions[0].end), (0x100, 0x108));
        assert_eq!(parse_mail(&emit_mail(&p)).unwrap(), p);
    }

    #[test]
    fn keywords_are_case_insensitive() {
        assert_eq!(
            parse_statement("JMP 0x680376").unwrap().pattern,
            PatternTag::JumpConstant
        );
        assert_eq!(parse_statement("HALT;").unwrap().kind, StatementKind::Halt);
        assert_eq!(
            parse_statement("CALL EBX;").unwrap().pattern,
            PatternTag::Call
        );
    }

    #[test]
    fn segment_register_pairs_are_inert() {
        let s = parse_statement("EAX = [FS:EBX];").unwrap();
        assert_eq!(s.to_string(), "EAX = [FS:EBX];");
    }
}
