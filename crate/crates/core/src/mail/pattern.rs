//! Statement patterns used to annotate control flow graphs.

use std::fmt;
use std::str::FromStr;

use super::ast::{MailStatement, Operand, StatementKind, Target};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PatternTag {
    Assign,
    AssignConstant,
    Control,
    ControlConstant,
    Call,
    CallConstant,
    Flag,
    FlagStack,
    Halt,
    Jump,
    JumpConstant,
    JumpStack,
    LibCall,
    LibCallConstant,
    Lock,
    Stack,
    StackConstant,
    Test,
    TestConstant,
    Unknown,
    NotDefined,
}

impl PatternTag {
    pub const ALL: [PatternTag; 21] = [
        PatternTag::Assign,
        PatternTag::AssignConstant,
        PatternTag::Control,
        PatternTag::ControlConstant,
        PatternTag::Call,
        PatternTag::CallConstant,
        PatternTag::Flag,
        PatternTag::FlagStack,
        PatternTag::Halt,
        PatternTag::Jump,
        PatternTag::JumpConstant,
        PatternTag::JumpStack,
        PatternTag::LibCall,
        PatternTag::LibCallConstant,
        PatternTag::Lock,
        PatternTag::Stack,
        PatternTag::StackConstant,
        PatternTag::Test,
        PatternTag::TestConstant,
        PatternTag::Unknown,
        PatternTag::NotDefined,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PatternTag::Assign => "ASSIGN",
            PatternTag::AssignConstant => "ASSIGN_CONSTANT",
            PatternTag::Control => "CONTROL",
            PatternTag::ControlConstant => "CONTROL_CONSTANT",
            PatternTag::Call => "CALL",
            PatternTag::CallConstant => "CALL_CONSTANT",
            PatternTag::Flag => "FLAG",
            PatternTag::FlagStack => "FLAG_STACK",
            PatternTag::Halt => "HALT",
            PatternTag::Jump => "JUMP",
            PatternTag::JumpConstant => "JUMP_CONSTANT",
            PatternTag::JumpStack => "JUMP_STACK",
            PatternTag::LibCall => "LIBCALL",
            PatternTag::LibCallConstant => "LIBCALL_CONSTANT",
            PatternTag::Lock => "LOCK",
            PatternTag::Stack => "STACK",
            PatternTag::StackConstant => "STACK_CONSTANT",
            PatternTag::Test => "TEST",
            PatternTag::TestConstant => "TEST_CONSTANT",
            PatternTag::Unknown => "UNKNOWN",
            PatternTag::NotDefined => "NOTDEFINED",
        }
    }
}

impl fmt::Display for PatternTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown pattern tag `{0}`")]
pub struct UnknownPattern(pub String);

impl FromStr for PatternTag {
    type Err = UnknownPattern;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PatternTag::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| UnknownPattern(s.to_string()))
    }
}

/// Tagging knobs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassifyOptions {
    /// Tag library calls as `CALL`/`CALL_CONSTANT` instead of
    /// `LIBCALL`/`LIBCALL_CONSTANT`, so `compare(EAX, 0x0)` becomes `CALL_CONSTANT`.
    pub libcall_as_call: bool,
}

impl ClassifyOptions {
    pub const COMPAT: ClassifyOptions = ClassifyOptions {
        libcall_as_call: true,
    };
}

pub fn classify_pattern(stmt: &MailStatement) -> PatternTag {
    classify_pattern_with(stmt, ClassifyOptions::default())
}

pub fn classify_pattern_with(stmt: &MailStatement, opts: ClassifyOptions) -> PatternTag {
    classify_kind(&stmt.kind, opts)
}

fn classify_kind(kind: &StatementKind, opts: ClassifyOptions) -> PatternTag {
    match kind {
        StatementKind::Assign(a) => {
            let ops = a.operands();
            let flag = ops.iter().any(Operand::is_flag);
            let stack = ops.iter().any(Operand::is_stack);
            // constants only count on the right-hand side
            let constant = a.value.operands().into_iter().any(Operand::is_const);
            match (flag, stack, constant) {
                (true, true, _) => PatternTag::FlagStack,
                (true, false, _) => PatternTag::Flag,
                (false, true, true) => PatternTag::StackConstant,
                (false, true, false) => PatternTag::Stack,
                (false, false, true) => PatternTag::AssignConstant,
                (false, false, false) => PatternTag::Assign,
            }
        }
        StatementKind::Control(c) => {
            if c.has_constant() {
                PatternTag::ControlConstant
            } else {
                PatternTag::Control
            }
        }
        StatementKind::Jump(t) => match t {
            Target::Direct(_) => PatternTag::JumpConstant,
            Target::Mem(m) if m.is_stack() => PatternTag::JumpStack,
            _ => PatternTag::Jump,
        },
        StatementKind::Call(t) => {
            if t.is_direct() {
                PatternTag::CallConstant
            } else {
                PatternTag::Call
            }
        }
        StatementKind::LibCall(c) => {
            let constant = c.args.iter().any(Operand::is_const);
            match (opts.libcall_as_call, constant) {
                (false, true) => PatternTag::LibCallConstant,
                (false, false) => PatternTag::LibCall,
                (true, true) => PatternTag::CallConstant,
                (true, false) => PatternTag::Call,
            }
        }
        StatementKind::Test(t) => {
            if t.lhs.is_const() || t.rhs.is_const() {
                PatternTag::TestConstant
            } else {
                PatternTag::Test
            }
        }
        StatementKind::Halt => PatternTag::Halt,
        StatementKind::Lock => PatternTag::Lock,
        StatementKind::Unknown => PatternTag::Unknown,
        StatementKind::Condition(_)
        | StatementKind::FunctionStart(_)
        | StatementKind::FunctionEnd(_) => PatternTag::NotDefined,
    }
}

impl MailStatement {
    /// Build a statement and tag it in one step.
    pub fn classified(kind: StatementKind, opts: ClassifyOptions) -> Self {
        let pattern = classify_kind(&kind, opts);
        MailStatement { kind, pattern }
    }

    pub fn classify(&mut self, opts: ClassifyOptions) {
        self.pattern = classify_kind(&self.kind, opts);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mail::ast::*;

    #[test]
    fn exactly_twenty_one_tags_with_unique_names() {
        let mut names: Vec<_> = PatternTag::ALL.iter().map(|p| p.name()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 21);
        for p in PatternTag::ALL {
            assert_eq!(p.name().parse::<PatternTag>().unwrap(), p);
        }
        assert!("ASSIGNED".parse::<PatternTag>().is_err());
    }

    #[test]
    fn new_statements_default_to_notdefined() {
        assert_eq!(
            MailStatement::new(StatementKind::Halt).pattern,
            PatternTag::NotDefined
        );
    }

    #[test]
    fn markers_and_bare_conditions_stay_notdefined() {
        let cond = Condition::single(Comparison::flag_is(Flag::ZF, 1));
        for kind in [
            StatementKind::FunctionStart(0),
            StatementKind::FunctionEnd(0),
            StatementKind::Condition(cond),
        ] {
            assert_eq!(
                classify_pattern(&MailStatement::new(kind)),
                PatternTag::NotDefined
            );
        }
    }

    #[test]
    fn compat_mode_only_touches_library_calls() {
        let call = MailStatement::new(StatementKind::LibCall(LibCall::new(
            "compare",
            vec![Operand::reg("EAX"), Operand::hex(0)],
        )));
        assert_eq!(classify_pattern(&call), PatternTag::LibCallConstant);
        assert_eq!(
            classify_pattern_with(&call, ClassifyOptions::COMPAT),
            PatternTag::CallConstant
        );
        let halt = MailStatement::new(StatementKind::Halt);
        assert_eq!(
            classify_pattern_with(&halt, ClassifyOptions::COMPAT),
            PatternTag::Halt
        );
    }
}
