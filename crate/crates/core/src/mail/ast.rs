//! Abstract syntax of MAIL programs.

use std::fmt;

use super::pattern::PatternTag;

/// Flag registers admitted by the language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Flag {
    ZF,
    CF,
    PF,
    SF,
    OF,
    DF,
}

impl Flag {
    pub const ALL: [Flag; 6] = [Flag::ZF, Flag::CF, Flag::PF, Flag::SF, Flag::OF, Flag::DF];

    pub fn name(self) -> &'static str {
        match self {
            Flag::ZF => "ZF",
            Flag::CF => "CF",
            Flag::PF => "PF",
            Flag::SF => "SF",
            Flag::OF => "OF",
            Flag::DF => "DF",
        }
    }

    pub fn from_name(name: &str) -> Option<Flag> {
        Flag::ALL.into_iter().find(|f| f.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Register {
    /// An architecture register reused as-is (`EAX`, `R9D`, `LR`).
    Named(String),
    /// `segment:register` form. Parsed and printed, otherwise inert.
    Pair(String, String),
    Flag(Flag),
    Eflags,
    /// The stack pointer used by stack expressions.
    Sp,
    /// Synthetic general purpose register `gr_<n>`.
    Gr(u32),
    /// Synthetic floating point register `fr_<n>`.
    Fr(u32),
}

impl Register {
    pub fn named(name: impl Into<String>) -> Self {
        Register::Named(name.into())
    }

    /// Canonical register for an identifier, as the parser reads it back:
    /// flag names, `EFLAGS`, `SP`, `gr_N` and `fr_N` are recognized
    /// case-insensitively; anything else is a named register.
    pub fn from_name(ident: &str) -> Self {
        if ident.eq_ignore_ascii_case("eflags") {
            return Register::Eflags;
        }
        if ident.eq_ignore_ascii_case("sp") {
            return Register::Sp;
        }
        if let Some(flag) = Flag::from_name(&ident.to_ascii_uppercase()) {
            return Register::Flag(flag);
        }
        let lower = ident.to_ascii_lowercase();
        if let Some(n) = lower.strip_prefix("gr_").and_then(|n| n.parse().ok()) {
            return Register::Gr(n);
        }
        if let Some(n) = lower.strip_prefix("fr_").and_then(|n| n.parse().ok()) {
            return Register::Fr(n);
        }
        Register::Named(ident.to_string())
    }

    pub fn is_flag(&self) -> bool {
        matches!(self, Register::Flag(_) | Register::Eflags)
    }
}

/// How an integer literal is spelled. Kept so printing reproduces the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NumFormat {
    /// `0x` prefixed, zero padded to at least `width` digits.
    Hex {
        width: u8,
    },
    Decimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Constant {
    pub value: i64,
    pub format: NumFormat,
}

impl Constant {
    pub fn hex(value: i64) -> Self {
        Constant {
            value,
            format: NumFormat::Hex { width: 1 },
        }
    }

    pub fn decimal(value: i64) -> Self {
        Constant {
            value,
            format: NumFormat::Decimal,
        }
    }
}

impl fmt::Display for Constant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.value < 0 { "-" } else { "" };
        let magnitude = self.value.unsigned_abs();
        match self.format {
            NumFormat::Hex { width } => {
                write!(f, "{sign}0x{magnitude:0width$x}", width = width as usize)
            }
            NumFormat::Decimal => write!(f, "{sign}{magnitude}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MathOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    And,
    Or,
    Xor,
    Not,
    Shl,
    Shr,
}

impl MathOp {
    pub const ALL: [MathOp; 11] = [
        MathOp::Add,
        MathOp::Sub,
        MathOp::Mul,
        MathOp::Div,
        MathOp::Rem,
        MathOp::And,
        MathOp::Or,
        MathOp::Xor,
        MathOp::Not,
        MathOp::Shl,
        MathOp::Shr,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            MathOp::Add => "+",
            MathOp::Sub => "-",
            MathOp::Mul => "*",
            MathOp::Div => "/",
            MathOp::Rem => "%",
            MathOp::And => "and",
            MathOp::Or => "or",
            MathOp::Xor => "xor",
            MathOp::Not => "not",
            MathOp::Shl => "<<",
            MathOp::Shr => ">>",
        }
    }

    /// Operators allowed inside a register address expression.
    pub fn is_arith(self) -> bool {
        matches!(
            self,
            MathOp::Add | MathOp::Sub | MathOp::Mul | MathOp::Div | MathOp::Rem
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RelOp {
    Lt,
    Gt,
    Le,
    Ge,
    Eq,
    Ne,
}

impl RelOp {
    pub const ALL: [RelOp; 6] = [
        RelOp::Lt,
        RelOp::Gt,
        RelOp::Le,
        RelOp::Ge,
        RelOp::Eq,
        RelOp::Ne,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            RelOp::Lt => "<",
            RelOp::Gt => ">",
            RelOp::Le => "<=",
            RelOp::Ge => ">=",
            RelOp::Eq => "==",
            RelOp::Ne => "!=",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StackOp {
    Push,
    Pop,
}

/// `[SP=SP+n]` (push) or `[SP=SP-n]` (pop); `n` is positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StackExpr {
    pub op: StackOp,
    pub amount: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AddrTerm {
    Reg(Register),
    Const(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Address {
    /// `[0x601040]`
    Const(u64),
    /// `[RBP-0x44]`, `[RDX+RAX]`, `[RAX]`
    Reg {
        base: Register,
        terms: Vec<(MathOp, AddrTerm)>,
    },
    Stack(StackExpr),
    Unknown,
}

impl Address {
    pub fn reg(base: Register) -> Self {
        Address::Reg {
            base,
            terms: Vec::new(),
        }
    }

    pub fn push(amount: u64) -> Self {
        Address::Stack(StackExpr {
            op: StackOp::Push,
            amount,
        })
    }

    pub fn pop(amount: u64) -> Self {
        Address::Stack(StackExpr {
            op: StackOp::Pop,
            amount,
        })
    }

    pub fn is_stack(&self) -> bool {
        matches!(self, Address::Stack(_))
    }

    fn registers<'a>(&'a self, out: &mut Vec<&'a Register>) {
        if let Address::Reg { base, terms } = self {
            out.push(base);
            for (_, term) in terms {
                if let AddrTerm::Reg(r) = term {
                    out.push(r);
                }
            }
        }
    }
}

/// A leaf value: `register | address | digit+`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Operand {
    Reg(Register),
    Mem(Address),
    Const(Constant),
}

impl Operand {
    pub fn reg(name: impl Into<String>) -> Self {
        Operand::Reg(Register::Named(name.into()))
    }

    pub fn hex(value: i64) -> Self {
        Operand::Const(Constant::hex(value))
    }

    pub fn is_const(&self) -> bool {
        matches!(self, Operand::Const(_))
    }

    pub fn is_stack(&self) -> bool {
        matches!(self, Operand::Mem(a) if a.is_stack())
    }

    pub fn is_flag(&self) -> bool {
        matches!(self, Operand::Reg(r) if r.is_flag())
    }
}

impl From<Register> for Operand {
    fn from(r: Register) -> Self {
        Operand::Reg(r)
    }
}

impl From<Address> for Operand {
    fn from(a: Address) -> Self {
        Operand::Mem(a)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LibCall {
    pub name: String,
    pub args: Vec<Operand>,
}

impl LibCall {
    pub fn new(name: impl Into<String>, args: Vec<Operand>) -> Self {
        LibCall {
            name: name.into(),
            args,
        }
    }
}

/// Right-hand side of an assignment.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Expr {
    Value(Operand),
    Unary(MathOp, Operand),
    Binary(Operand, MathOp, Operand),
    Call(LibCall),
}

impl Expr {
    pub fn operands(&self) -> Vec<&Operand> {
        match self {
            Expr::Value(a) | Expr::Unary(_, a) => vec![a],
            Expr::Binary(a, _, b) => vec![a, b],
            Expr::Call(c) => c.args.iter().collect(),
        }
    }
}

impl From<Operand> for Expr {
    fn from(op: Operand) -> Self {
        Expr::Value(op)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Lvalue {
    Reg(Register),
    Mem(Address),
}

impl Lvalue {
    pub fn as_operand(&self) -> Operand {
        match self {
            Lvalue::Reg(r) => Operand::Reg(r.clone()),
            Lvalue::Mem(a) => Operand::Mem(a.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Assignment {
    pub dest: Lvalue,
    pub value: Expr,
}

impl Assignment {
    pub fn new(dest: Lvalue, value: impl Into<Expr>) -> Self {
        Assignment {
            dest,
            value: value.into(),
        }
    }

    /// All leaf operands, destination first.
    pub fn operands(&self) -> Vec<Operand> {
        let mut out = vec![self.dest.as_operand()];
        out.extend(self.value.operands().into_iter().cloned());
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoolOp {
    And,
    Or,
}

impl BoolOp {
    pub fn keyword(self) -> &'static str {
        match self {
            BoolOp::And => "and",
            BoolOp::Or => "or",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Comparison {
    pub lhs: Operand,
    pub op: RelOp,
    pub rhs: Operand,
}

impl Comparison {
    pub fn new(lhs: Operand, op: RelOp, rhs: Operand) -> Self {
        Comparison { lhs, op, rhs }
    }

    /// `<flag> == <value>` with a decimal literal, as flag tests are written.
    pub fn flag_is(flag: Flag, value: i64) -> Self {
        Comparison::new(
            Operand::Reg(Register::Flag(flag)),
            RelOp::Eq,
            Operand::Const(Constant::decimal(value)),
        )
    }

    pub fn flags(lhs: Flag, op: RelOp, rhs: Flag) -> Self {
        Comparison::new(
            Operand::Reg(Register::Flag(lhs)),
            op,
            Operand::Reg(Register::Flag(rhs)),
        )
    }
}

/// One or more comparisons chained with `and`/`or`, evaluated left to right.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Condition {
    pub first: Comparison,
    pub rest: Vec<(BoolOp, Comparison)>,
}

impl Condition {
    pub fn single(c: Comparison) -> Self {
        Condition {
            first: c,
            rest: Vec::new(),
        }
    }

    pub fn and(a: Comparison, b: Comparison) -> Self {
        Condition {
            first: a,
            rest: vec![(BoolOp::And, b)],
        }
    }

    pub fn or(a: Comparison, b: Comparison) -> Self {
        Condition {
            first: a,
            rest: vec![(BoolOp::Or, b)],
        }
    }

    pub fn comparisons(&self) -> impl Iterator<Item = &Comparison> {
        std::iter::once(&self.first).chain(self.rest.iter().map(|(_, c)| c))
    }
}

/// Target of a jump or direct call.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    /// A code address known statically: `jmp 0x401267`.
    Direct(u64),
    Reg(Register),
    /// Memory, stack (`[SP=SP-0x8]`), or `UNKNOWN`.
    Mem(Address),
}

impl Target {
    pub const UNKNOWN: Target = Target::Mem(Address::Unknown);

    pub fn is_direct(&self) -> bool {
        matches!(self, Target::Direct(_))
    }

    pub fn direct(&self) -> Option<u64> {
        match self {
            Target::Direct(a) => Some(*a),
            _ => None,
        }
    }
}

/// Consequent or alternative of a control statement.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Branch {
    Jump(Target),
    Assign(Assignment),
    Call(Target),
    LibCall(LibCall),
}

impl Branch {
    fn has_constant(&self) -> bool {
        match self {
            Branch::Jump(t) | Branch::Call(t) => t.is_direct(),
            Branch::Assign(a) => a.operands().iter().any(Operand::is_const),
            Branch::LibCall(c) => c.args.iter().any(Operand::is_const),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Control {
    pub cond: Condition,
    pub then: Branch,
    pub otherwise: Option<Branch>,
}

impl Control {
    /// Constant jump target, or a constant operand in an assignment body.
    pub fn has_constant(&self) -> bool {
        self.then.has_constant()
    }

    /// Jump target when the consequent is a jump.
    pub fn jump_target(&self) -> Option<&Target> {
        match &self.then {
            Branch::Jump(t) => Some(t),
            _ => None,
        }
    }
}

/// `a and b;`: a flag-setting test without a destination.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Test {
    pub lhs: Operand,
    pub rhs: Operand,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[allow(clippy::large_enum_variant)]
pub enum StatementKind {
    Assign(Assignment),
    Control(Control),
    Condition(Condition),
    FunctionStart(u32),
    FunctionEnd(u32),
    Jump(Target),
    LibCall(LibCall),
    Call(Target),
    Test(Test),
    Halt,
    Lock,
    /// Placeholder for an instruction that could not be translated.
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MailStatement {
    pub kind: StatementKind,
    pub pattern: PatternTag,
}

impl MailStatement {
    /// A fresh statement carries the default `NOTDEFINED` pattern.
    pub fn new(kind: StatementKind) -> Self {
        MailStatement {
            kind,
            pattern: PatternTag::NotDefined,
        }
    }

    pub fn is_marker(&self) -> bool {
        matches!(
            self.kind,
            StatementKind::FunctionStart(_) | StatementKind::FunctionEnd(_)
        )
    }

    /// Does this statement end a basic block?
    ///
    /// Jumps, halts, and controls whose consequent is a jump do. Calls return,
    /// and conditional assignments do not transfer control.
    pub fn ends_block(&self) -> bool {
        match &self.kind {
            StatementKind::Jump(_) | StatementKind::Halt => true,
            StatementKind::Control(c) => c.jump_target().is_some(),
            _ => false,
        }
    }

    /// No fall-through successor.
    pub fn is_unconditional_exit(&self) -> bool {
        matches!(self.kind, StatementKind::Jump(_) | StatementKind::Halt)
    }

    /// Direct branch target (jump or conditional jump), if any.
    pub fn branch_target(&self) -> Option<u64> {
        match &self.kind {
            StatementKind::Jump(t) => t.direct(),
            StatementKind::Control(c) => c.jump_target().and_then(Target::direct),
            _ => None,
        }
    }

    /// Every register mentioned anywhere in the statement.
    pub fn registers(&self) -> Vec<&Register> {
        let mut out = Vec::new();
        fn operand<'a>(op: &'a Operand, out: &mut Vec<&'a Register>) {
            match op {
                Operand::Reg(r) => out.push(r),
                Operand::Mem(a) => a.registers(out),
                Operand::Const(_) => {}
            }
        }
        fn target<'a>(t: &'a Target, out: &mut Vec<&'a Register>) {
            match t {
                Target::Reg(r) => out.push(r),
                Target::Mem(a) => a.registers(out),
                Target::Direct(_) => {}
            }
        }
        fn assignment<'a>(a: &'a Assignment, out: &mut Vec<&'a Register>) {
            match &a.dest {
                Lvalue::Reg(r) => out.push(r),
                Lvalue::Mem(m) => m.registers(out),
            }
            for op in a.value.operands() {
                operand(op, out);
            }
        }
        fn branch<'a>(b: &'a Branch, out: &mut Vec<&'a Register>) {
            match b {
                Branch::Jump(t) | Branch::Call(t) => target(t, out),
                Branch::Assign(a) => assignment(a, out),
                Branch::LibCall(c) => c.args.iter().for_each(|a| operand(a, out)),
            }
        }
        fn condition<'a>(c: &'a Condition, out: &mut Vec<&'a Register>) {
            for cmp in c.comparisons() {
                operand(&cmp.lhs, out);
                operand(&cmp.rhs, out);
            }
        }
        match &self.kind {
            StatementKind::Assign(a) => assignment(a, &mut out),
            StatementKind::Control(c) => {
                condition(&c.cond, &mut out);
                branch(&c.then, &mut out);
                if let Some(b) = &c.otherwise {
                    branch(b, &mut out);
                }
            }
            StatementKind::Condition(c) => condition(c, &mut out),
            StatementKind::Jump(t) | StatementKind::Call(t) => target(t, &mut out),
            StatementKind::LibCall(c) => c.args.iter().for_each(|a| operand(a, &mut out)),
            StatementKind::Test(t) => {
                operand(&t.lhs, &mut out);
                operand(&t.rhs, &mut out);
            }
            _ => {}
        }
        out
    }
}

impl From<StatementKind> for MailStatement {
    fn from(kind: StatementKind) -> Self {
        MailStatement::new(kind)
    }
}

/// All statements produced for one source address, in order.
///
/// Instructions that translate to nothing keep an empty entry so that branch
/// targets pointing at them still resolve.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceLine {
    pub addr: u64,
    pub statements: Vec<MailStatement>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionSpan {
    pub index: u32,
    pub name: String,
    pub start: u64,
    pub end: u64,
    /// Indices into [`MailProgram::lines`] covered by the span, markers included.
    pub lines: std::ops::Range<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MailProgram {
    pub lines: Vec<SourceLine>,
    pub functions: Vec<FunctionSpan>,
}

impl MailProgram {
    pub fn statements(&self) -> impl Iterator<Item = (u64, &MailStatement)> {
        self.lines
            .iter()
            .flat_map(|l| l.statements.iter().map(move |s| (l.addr, s)))
    }

    pub fn statement_count(&self) -> usize {
        self.lines.iter().map(|l| l.statements.len()).sum()
    }

    pub fn function(&self, index: u32) -> Option<&FunctionSpan> {
        self.functions.iter().find(|f| f.index == index)
    }
}
