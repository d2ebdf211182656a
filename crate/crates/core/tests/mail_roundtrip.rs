mod common;

use mailkit::disasm::{parse_disasm_with, Arch};
use mailkit::lift::{lift_program, LiftOptions};
use mailkit::mail::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn parse_inverts_emit(p in common::program()) {
        let text = emit_mail(&p);
        let back = parse_mail(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(back, p, "{}", text);
    }

    #[test]
    fn every_statement_gets_one_defined_tag(kind in common::statement_kind()) {
        let tag = classify_pattern(&MailStatement::new(kind.clone()));
        let parsed = parse_statement(&kind.to_string()).unwrap();
        prop_assert_eq!(parsed.kind, kind.clone());
        prop_assert_eq!(parsed.pattern, tag);
        if !matches!(kind, StatementKind::Condition(_)) {
            prop_assert_ne!(tag, PatternTag::NotDefined);
        }
    }
}

#[test]
fn lifted_fixtures_round_trip() {
    for (file, arch) in [
        ("merge_sort_x86.asm", Arch::X86),
        ("merge_sort_arm.asm", Arch::Arm),
        ("functions_x86.asm", Arch::X86),
    ] {
        let spans = parse_disasm_with(&common::fixture(file), arch).unwrap();
        let program = lift_program(&spans, LiftOptions::default());
        let text = emit_mail(&program);
        assert_eq!(parse_mail(&text).unwrap(), program, "{file}");
    }
}
