//! Reader for the line-oriented disassembly format.
//!
//! ```text
//! # comment
//! ARCH arm                          (optional; default architecture)
//! FUNC <name> <hex-start> <hex-end> [ARCH x86|arm]
//! <hex-addr> <hex-bytes|-> [PREFIX...] <MNEMONIC> [op, op, ...]
//! ```
//!
//! The bytes column is optional. The end address of a `FUNC` line is
//! exclusive. Instructions outside every declared span are collected into
//! one implicit span, placed last.

use std::fmt;
use std::str::FromStr;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    #[default]
    X86,
    Arm,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::X86 => "x86",
            Arch::Arm => "arm",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "x86" | "x86-64" | "x86_64" | "x64" | "amd64" => Ok(Arch::X86),
            "arm" | "a32" | "armv7" => Ok(Arch::Arm),
            other => Err(format!("unknown architecture `{other}`")),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum DisasmError {
    #[error("line {line}: malformed address `{text}`")]
    Address { line: usize, text: String },
    #[error("line {line}: malformed FUNC directive: {message}")]
    Func { line: usize, message: String },
    #[error("line {line}: missing mnemonic")]
    Mnemonic { line: usize },
    #[error("line {line}: operand syntax error in `{text}`: {message}")]
    Operand {
        line: usize,
        text: String,
        message: String,
    },
    #[error("line {line}: duplicate address {addr:#x} in function `{function}`")]
    Duplicate {
        line: usize,
        addr: u64,
        function: String,
    },
    #[error("line {line}: {message}")]
    Directive { line: usize, message: String },
}

/// A parsed operand. x86 and ARM share the representation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AsmOperand {
    Reg(String),
    Imm(i64),
    Mem(MemRef),
    /// ARM register list, e.g. `{R4-R6, LR}` expanded.
    RegList(Vec<String>),
    /// ARM shift modifier, e.g. `LSL #2` or `ASR R3`.
    Shift {
        op: String,
        amount: Box<AsmOperand>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MemTerm {
    Reg(String),
    /// `index * scale` (x86) or `index, LSL #n` (ARM, stored as scale 2^n).
    Scaled(String, u64),
    Disp(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemRef {
    pub segment: Option<String>,
    pub terms: Vec<(Sign, MemTerm)>,
    /// ARM pre-indexed writeback (`!`).
    pub writeback: bool,
}

impl AsmOperand {
    pub fn reg(&self) -> Option<&str> {
        match self {
            AsmOperand::Reg(r) => Some(r),
            _ => None,
        }
    }

    pub fn imm(&self) -> Option<i64> {
        match self {
            AsmOperand::Imm(v) => Some(*v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AsmInstruction {
    pub address: u64,
    /// Lowercase hex machine code; empty when the listing omits it.
    pub bytes: String,
    /// Instruction prefixes such as `LOCK` or `REP`, uppercase.
    pub prefixes: Vec<String>,
    pub mnemonic: String,
    /// Operand texts, destination first, with size keywords removed.
    pub operands: Vec<String>,
    pub parsed: Vec<AsmOperand>,
    pub arch: Arch,
    /// 1-based source line.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DisasmSpan {
    pub name: String,
    pub start: u64,
    /// Exclusive end address.
    pub end: u64,
    pub arch: Arch,
    pub instructions: Vec<AsmInstruction>,
    /// True for the span collecting instructions outside any `FUNC`.
    pub implicit: bool,
}

const PREFIXES: [&str; 6] = ["LOCK", "REP", "REPE", "REPZ", "REPNE", "REPNZ"];

const SIZE_WORDS: [&str; 14] = [
    "BYTE", "WORD", "DWORD", "QWORD", "TBYTE", "TWORD", "OWORD", "XMMWORD", "YMMWORD", "ZMMWORD",
    "FWORD", "PTR", "SHORT", "NEAR",
];

pub fn parse_disasm(text: &str) -> Result<Vec<DisasmSpan>, DisasmError> {
    parse_disasm_with(text, Arch::X86)
}

/// Parses a listing; `default_arch` applies where no `ARCH` directive does.
pub fn parse_disasm_with(text: &str, default_arch: Arch) -> Result<Vec<DisasmSpan>, DisasmError> {
    let mut arch = default_arch;
    let mut spans: Vec<DisasmSpan> = Vec::new();
    let mut loose: Vec<(usize, &str)> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') || content.starts_with(';') {
            continue;
        }
        let mut words = content.split_whitespace();
        let head = words.next().unwrap_or_default();
        if head.eq_ignore_ascii_case("ARCH") {
            let value = words.next().ok_or(DisasmError::Directive {
                line,
                message: "ARCH needs a value".into(),
            })?;
            arch = value
                .parse()
                .map_err(|message| DisasmError::Directive { line, message })?;
            continue;
        }
        if head.eq_ignore_ascii_case("FUNC") {
            spans.push(parse_func(line, words.collect(), arch)?);
            continue;
        }
        loose.push((line, content));
    }

    let mut implicit = DisasmSpan {
        name: "<implicit>".into(),
        start: 0,
        end: 0,
        arch,
        instructions: Vec::new(),
        implicit: true,
    };
    for (line, content) in loose {
        let address = parse_address(line, content.split_whitespace().next().unwrap_or_default())?;
        let owner = spans
            .iter_mut()
            .find(|s| (s.start..s.end).contains(&address));
        let span = match owner {
            Some(s) => s,
            None => &mut implicit,
        };
        span.instructions
            .push(parse_instruction(line, content, span.arch)?);
    }
    for span in spans.iter_mut().chain(std::iter::once(&mut implicit)) {
        span.instructions.sort_by_key(|x| x.address);
        if let Some(w) = span
            .instructions
            .windows(2)
            .find(|w| w[0].address == w[1].address)
        {
            return Err(DisasmError::Duplicate {
                line: w[0].line.max(w[1].line),
                addr: w[0].address,
                function: span.name.clone(),
            });
        }
    }
    if !implicit.instructions.is_empty() {
        implicit.start = implicit.instructions[0].address;
        implicit.end = implicit.instructions.last().map_or(0, |x| x.address + 1);
        spans.push(implicit);
    }
    Ok(spans)
}

fn parse_func(line: usize, words: Vec<&str>, arch: Arch) -> Result<DisasmSpan, DisasmError> {
    let err = |message: &str| DisasmError::Func {
        line,
        message: message.into(),
    };
    let [name, start, end, rest @ ..] = words.as_slice() else {
        return Err(err("expected FUNC <name> <start> <end>"));
    };
    let start = parse_hex(start).ok_or_else(|| err("bad start address"))?;
    let end = parse_hex(end).ok_or_else(|| err("bad end address"))?;
    if end < start {
        return Err(err("end precedes start"));
    }
    let arch = match rest {
        [] => arch,
        [kw, value] if kw.eq_ignore_ascii_case("ARCH") => {
            value.parse().map_err(|m: String| err(&m))?
        }
        _ => return Err(err("trailing tokens; expected ARCH <arch>")),
    };
    Ok(DisasmSpan {
        name: name.to_string(),
        start,
        end,
        arch,
        instructions: Vec::new(),
        implicit: false,
    })
}

fn parse_hex(text: &str) -> Option<u64> {
    let t = text
        .strip_prefix("0x")
        .unwrap_or(text)
        .trim_end_matches(':');
    if t.is_empty() {
        return None;
    }
    u64::from_str_radix(t, 16).ok()
}

fn parse_address(line: usize, text: &str) -> Result<u64, DisasmError> {
    parse_hex(text).ok_or_else(|| DisasmError::Address {
        line,
        text: text.to_string(),
    })
}

fn is_byte_string(token: &str) -> bool {
    token == "-"
        || (token.len().is_multiple_of(2)
            && token
                .bytes()
                .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)))
}

fn parse_instruction(
    line: usize,
    content: &str,
    arch: Arch,
) -> Result<AsmInstruction, DisasmError> {
    let (addr_text, rest) = split_word(content);
    let address = parse_address(line, addr_text)?;
    let (mut word, mut rest) = split_word(rest);
    let mut bytes = String::new();
    if is_byte_string(word) {
        if word != "-" {
            bytes = word.to_string();
        }
        (word, rest) = split_word(rest);
    }
    let mut prefixes = Vec::new();
    while arch == Arch::X86 && PREFIXES.iter().any(|p| p.eq_ignore_ascii_case(word)) {
        let (next, after) = split_word(rest);
        if next.is_empty() {
            break;
        }
        prefixes.push(word.to_ascii_uppercase());
        (word, rest) = (next, after);
    }
    if word.is_empty() {
        return Err(DisasmError::Mnemonic { line });
    }
    let mnemonic = word.to_ascii_uppercase();
    let mut operands = Vec::new();
    let mut parsed = Vec::new();
    let branch = is_branch_mnemonic(&mnemonic, arch);
    for text in split_operands(strip_symbols(rest)) {
        let mut text = clean_operand(&text);
        // objdump prints branch targets as bare hex
        if branch && !text.is_empty() && text.bytes().all(|b| b.is_ascii_hexdigit()) {
            text = format!("0x{}", text.to_ascii_lowercase());
        }
        let op = match arch {
            Arch::X86 => parse_x86_operand(&text),
            Arch::Arm => parse_arm_operand(&text),
        }
        .map_err(|message| DisasmError::Operand {
            line,
            text: text.clone(),
            message,
        })?;
        operands.push(text);
        parsed.push(op);
    }
    Ok(AsmInstruction {
        address,
        bytes,
        prefixes,
        mnemonic,
        operands,
        parsed,
        arch,
        line,
    })
}

fn is_branch_mnemonic(m: &str, arch: Arch) -> bool {
    match arch {
        Arch::X86 => m.starts_with('J') || m == "CALL" || m.starts_with("LOOP"),
        Arch::Arm => m.starts_with('B') && !m.starts_with("BIC") && !m.starts_with("BKPT"),
    }
}

fn split_word(s: &str) -> (&str, &str) {
    let s = s.trim_start();
    match s.find(char::is_whitespace) {
        Some(i) => (&s[..i], s[i..].trim_start()),
        None => (s, ""),
    }
}

/// Drops `<symbol+off>` annotations and trailing `;` comments.
fn strip_symbols(s: &str) -> String {
    let s = s.split(';').next().unwrap_or_default();
    let mut out = String::with_capacity(s.len());
    let mut depth = 0usize;
    for c in s.chars() {
        match c {
            '<' => depth += 1,
            '>' if depth > 0 => depth -= 1,
            _ if depth == 0 => out.push(c),
            _ => {}
        }
    }
    out
}

fn split_operands(s: String) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '[' | '{' => depth += 1,
            ']' | '}' => depth -= 1,
            ',' if depth == 0 => {
                out.push(std::mem::take(&mut cur));
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    if !cur.trim().is_empty() || !out.is_empty() {
        out.push(cur);
    }
    out.into_iter().map(|s| s.trim().to_string()).collect()
}

/// Removes size keywords (`DWORD PTR`) and normalizes whitespace.
fn clean_operand(text: &str) -> String {
    let words: Vec<&str> = text
        .split_whitespace()
        .filter(|w| !SIZE_WORDS.iter().any(|k| k.eq_ignore_ascii_case(w)))
        .collect();
    words.join(" ")
}

/// Parses `0x1f`, `1fh`, `-0x8`, `12`.
pub fn parse_number(text: &str) -> Option<i64> {
    let (neg, t) = match text.strip_prefix('-') {
        Some(t) => (true, t),
        None => (false, text.strip_prefix('+').unwrap_or(text)),
    };
    let value = if let Some(h) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        u64::from_str_radix(h, 16).ok()?
    } else if let Some(h) = t.strip_suffix('h').or_else(|| t.strip_suffix('H')) {
        if !h.starts_with(|c: char| c.is_ascii_digit()) {
            return None;
        }
        u64::from_str_radix(h, 16).ok()?
    } else {
        t.parse::<u64>().ok()?
    };
    let value = value as i64;
    Some(if neg { value.wrapping_neg() } else { value })
}

fn is_ident(s: &str) -> bool {
    s.starts_with(|c: char| c.is_ascii_alphabetic() || c == '_')
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn parse_x86_operand(text: &str) -> Result<AsmOperand, String> {
    if text.is_empty() {
        return Err("empty operand".into());
    }
    let (segment, body) = match text.split_once(':') {
        Some((seg, body)) if is_ident(seg) && body.starts_with('[') => {
            (Some(seg.to_ascii_uppercase()), body)
        }
        _ => (None, text),
    };
    if let Some(inner) = body.strip_prefix('[') {
        let inner = inner.strip_suffix(']').ok_or("unterminated `[`")?;
        let mut mem = parse_mem_terms(inner, true)?;
        mem.segment = segment.or(mem.segment);
        return Ok(AsmOperand::Mem(mem));
    }
    if segment.is_some() || text.contains(['[', ']']) {
        return Err("misplaced brackets".into());
    }
    if let Some(v) = parse_number(text) {
        return Ok(AsmOperand::Imm(v));
    }
    if is_ident(text) {
        return Ok(AsmOperand::Reg(text.to_ascii_uppercase()));
    }
    // `ST(0)` style x87 registers
    if let Some(inner) = text.strip_prefix("ST(").and_then(|t| t.strip_suffix(')')) {
        if inner.chars().all(|c| c.is_ascii_digit()) {
            return Ok(AsmOperand::Reg(format!("ST{inner}")));
        }
    }
    Err("expected register, immediate or memory operand".into())
}

/// Parses `base + index*scale - disp` (x86) bodies.
fn parse_mem_terms(inner: &str, x86: bool) -> Result<MemRef, String> {
    let mut terms = Vec::new();
    let mut segment = None;
    let mut inner = inner.trim();
    if let Some((seg, rest)) = inner.split_once(':') {
        if is_ident(seg.trim()) {
            segment = Some(seg.trim().to_ascii_uppercase());
            inner = rest.trim();
        }
    }
    if inner.is_empty() {
        return Err("empty memory reference".into());
    }
    let mut sign = Sign::Plus;
    let mut cur = String::new();
    let flush = |cur: &mut String, sign: Sign, terms: &mut Vec<(Sign, MemTerm)>| {
        let t = cur.trim().to_string();
        cur.clear();
        if t.is_empty() {
            return Err("missing term".to_string());
        }
        terms.push((sign, mem_term(&t, x86)?));
        Ok(())
    };
    for (i, c) in inner.char_indices() {
        if (c == '+' || c == '-') && i > 0 {
            flush(&mut cur, sign, &mut terms)?;
            sign = if c == '+' { Sign::Plus } else { Sign::Minus };
        } else if c == '-' && i == 0 {
            sign = Sign::Minus;
        } else {
            cur.push(c);
        }
    }
    flush(&mut cur, sign, &mut terms)?;
    Ok(MemRef {
        segment,
        terms,
        writeback: false,
    })
}

fn mem_term(t: &str, x86: bool) -> Result<MemTerm, String> {
    if let Some((a, b)) = t.split_once('*') {
        let (a, b) = (a.trim(), b.trim());
        let (reg, scale) = if is_ident(a) { (a, b) } else { (b, a) };
        let scale = parse_number(scale).ok_or_else(|| format!("bad scale `{scale}`"))?;
        if !is_ident(reg) {
            return Err(format!("bad index register `{reg}`"));
        }
        return Ok(MemTerm::Scaled(reg.to_ascii_uppercase(), scale as u64));
    }
    let num = if x86 {
        parse_number(t)
    } else {
        t.strip_prefix('#').and_then(parse_number)
    };
    if let Some(v) = num {
        return Ok(MemTerm::Disp(v as u64));
    }
    if is_ident(t) {
        return Ok(MemTerm::Reg(t.to_ascii_uppercase()));
    }
    Err(format!("bad memory term `{t}`"))
}

const ARM_SHIFTS: [&str; 5] = ["LSL", "LSR", "ASR", "ROR", "RRX"];

fn parse_arm_operand(text: &str) -> Result<AsmOperand, String> {
    if text.is_empty() {
        return Err("empty operand".into());
    }
    if let Some(imm) = text.strip_prefix('#') {
        return parse_number(imm.trim())
            .map(AsmOperand::Imm)
            .ok_or_else(|| "bad immediate".into());
    }
    if let Some(inner) = text.strip_prefix('{') {
        let inner = inner.strip_suffix('}').ok_or("unterminated `{`")?;
        let mut regs = Vec::new();
        for part in inner.split(',') {
            let part = part.trim();
            match part.split_once('-') {
                Some((a, b)) => regs.extend(expand_range(a.trim(), b.trim())?),
                None if is_ident(part) => regs.push(part.to_ascii_uppercase()),
                None => return Err(format!("bad register `{part}` in list")),
            }
        }
        return Ok(AsmOperand::RegList(regs));
    }
    if let Some(inner) = text.strip_prefix('[') {
        let (inner, writeback) = match inner.strip_suffix("]!") {
            Some(i) => (i, true),
            None => (inner.strip_suffix(']').ok_or("unterminated `[`")?, false),
        };
        return parse_arm_mem(inner, writeback).map(AsmOperand::Mem);
    }
    let upper = text.to_ascii_uppercase();
    if let Some((op, amount)) = upper.split_once(char::is_whitespace) {
        if ARM_SHIFTS.contains(&op) {
            let amount = parse_arm_operand(amount.trim())?;
            return Ok(AsmOperand::Shift {
                op: op.to_string(),
                amount: Box::new(amount),
            });
        }
        return Err(format!("unexpected `{text}`"));
    }
    if upper == "RRX" {
        return Ok(AsmOperand::Shift {
            op: upper,
            amount: Box::new(AsmOperand::Imm(1)),
        });
    }
    if let Some(v) = parse_number(text) {
        return Ok(AsmOperand::Imm(v));
    }
    let reg = upper.strip_suffix('!').unwrap_or(&upper);
    if is_ident(reg) {
        return Ok(AsmOperand::Reg(reg.to_string()));
    }
    Err("expected register, immediate, memory operand or register list".into())
}

fn expand_range(a: &str, b: &str) -> Result<Vec<String>, String> {
    let split = |r: &str| -> Option<(String, u32)> {
        let r = r.to_ascii_uppercase();
        let idx = r.find(|c: char| c.is_ascii_digit())?;
        Some((r[..idx].to_string(), r[idx..].parse().ok()?))
    };
    match (split(a), split(b)) {
        (Some((pa, x)), Some((pb, y))) if pa == pb && x <= y => {
            Ok((x..=y).map(|n| format!("{pa}{n}")).collect())
        }
        _ => Err(format!("bad register range `{a}-{b}`")),
    }
}

fn parse_arm_mem(inner: &str, writeback: bool) -> Result<MemRef, String> {
    let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
    let base = parts.first().copied().unwrap_or_default();
    if !is_ident(base) {
        return Err(format!("bad base register `{base}`"));
    }
    let mut terms = vec![(Sign::Plus, MemTerm::Reg(base.to_ascii_uppercase()))];
    match &parts[1..] {
        [] => {}
        [offset] => terms.push(arm_offset(offset)?),
        [index, shift] => {
            let (sign, term) = arm_offset(index)?;
            let MemTerm::Reg(reg) = term else {
                return Err("shift applied to an immediate offset".into());
            };
            let shift = shift.to_ascii_uppercase();
            let amount = shift
                .strip_prefix("LSL")
                .map(str::trim)
                .and_then(|a| a.strip_prefix('#'))
                .and_then(parse_number)
                .filter(|n| (0..64).contains(n))
                .ok_or_else(|| format!("unsupported index shift `{shift}`"))?;
            terms.push((sign, MemTerm::Scaled(reg, 1u64 << amount)));
        }
        _ => return Err("too many memory operand parts".into()),
    }
    Ok(MemRef {
        segment: None,
        terms,
        writeback,
    })
}

fn arm_offset(text: &str) -> Result<(Sign, MemTerm), String> {
    if let Some(imm) = text.strip_prefix('#') {
        let v = parse_number(imm.trim()).ok_or_else(|| format!("bad offset `{text}`"))?;
        return Ok(if v < 0 {
            (Sign::Minus, MemTerm::Disp(v.unsigned_abs()))
        } else {
            (Sign::Plus, MemTerm::Disp(v as u64))
        });
    }
    let (sign, reg) = match text.strip_prefix('-') {
        Some(r) => (Sign::Minus, r),
        None => (Sign::Plus, text.strip_prefix('+').unwrap_or(text)),
    };
    if is_ident(reg) {
        Ok((sign, MemTerm::Reg(reg.to_ascii_uppercase())))
    } else {
        Err(format!("bad offset `{text}`"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(text: &str) -> AsmInstruction {
        let spans = parse_disasm(text).unwrap();
        assert_eq!(spans.len(), 1);
        spans[0].instructions[0].clone()
    }

    #[test]
    fn parses_memory_load() {
        let insn = one("4010a2 8b45bc MOV EAX, [RBP-0x44]");
        assert_eq!(insn.address, 0x4010a2);
        assert_eq!(insn.bytes, "8b45bc");
        assert_eq!(insn.mnemonic, "MOV");
        assert_eq!(insn.operands, vec!["EAX", "[RBP-0x44]"]);
        assert_eq!(
            insn.parsed[1],
            AsmOperand::Mem(MemRef {
                segment: None,
                terms: vec![
                    (Sign::Plus, MemTerm::Reg("RBP".into())),
                    (Sign::Minus, MemTerm::Disp(0x44))
                ],
                writeback: false,
            })
        );
    }

    #[test]
    fn empty_listing_has_no_spans() {
        assert!(parse_disasm("").unwrap().is_empty());
        assert!(parse_disasm("# nothing\n\n").unwrap().is_empty());
    }

    #[test]
    fn branch_target_is_a_constant() {
        let insn = one("4011c0 0f85fdfeffff JNZ 0x4010c3");
        assert_eq!(insn.parsed, vec![AsmOperand::Imm(0x4010c3)]);
    }

    #[test]
    fn spans_and_implicit_span() {
        let text = "FUNC f 10 20\n10 c3 RET\n30 90 NOP\n18 - HLT\n";
        let spans = parse_disasm(text).unwrap();
        assert_eq!(spans.len(), 2);
        assert_eq!(spans[0].name, "f");
        assert_eq!(spans[0].instructions.len(), 2);
        assert!(spans[1].implicit);
        assert_eq!(spans[1].instructions[0].address, 0x30);
        assert_eq!(spans[0].instructions[1].bytes, "");
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(
            parse_disasm("# c\nzz 90 NOP").unwrap_err(),
            DisasmError::Address {
                line: 2,
                text: "zz".into()
            }
        );
        assert!(matches!(
            parse_disasm("10 8b45bc MOV EAX, [RBP-0x44"),
            Err(DisasmError::Operand { line: 1, .. })
        ));
        assert!(matches!(
            parse_disasm("10 90"),
            Err(DisasmError::Mnemonic { line: 1 })
        ));
        assert!(matches!(
            parse_disasm("10 90 NOP\n10 90 NOP"),
            Err(DisasmError::Duplicate { line: 2, .. })
        ));
        assert!(matches!(
            parse_disasm("FUNC f 20 10"),
            Err(DisasmError::Func { .. })
        ));
    }

    #[test]
    fn bytes_column_is_optional_and_prefixes_split() {
        let insn = one("10 LOCK ADD DWORD PTR [RAX], 0x1");
        assert_eq!(insn.bytes, "");
        assert_eq!(insn.prefixes, vec!["LOCK"]);
        assert_eq!(insn.mnemonic, "ADD");
        assert_eq!(insn.operands, vec!["[RAX]", "0x1"]);
        let insn = one("10 f3a4 rep movsb");
        assert_eq!(
            (insn.prefixes.as_slice(), insn.mnemonic.as_str()),
            (&["REP".to_string()][..], "MOVSB")
        );
    }

    #[test]
    fn x86_operand_forms() {
        let insn = one("10 - LEA RAX, FS:[RDX+RAX*4-8]");
        let AsmOperand::Mem(m) = &insn.parsed[1] else {
            panic!()
        };
        assert_eq!(m.segment.as_deref(), Some("FS"));
        assert_eq!(m.terms[1], (Sign::Plus, MemTerm::Scaled("RAX".into(), 4)));
        assert_eq!(m.terms[2], (Sign::Minus, MemTerm::Disp(8)));
        let insn = one("10 - CALL 400a9c <malloc@plt>");
        assert_eq!(insn.parsed, vec![AsmOperand::Imm(0x400a9c)]);
        assert_eq!(insn.operands, vec!["0x400a9c"]);
        let insn = one("10 - CALL 0x400a9c <malloc@plt>");
        assert_eq!(insn.parsed, vec![AsmOperand::Imm(0x400a9c)]);
        assert_eq!(one("10 - MOV AL, 0ffh").parsed[1], AsmOperand::Imm(0xff));
    }

    #[test]
    fn arm_operand_forms() {
        let text = "ARCH arm\n10 - ADD R1, R1, R12, LSL #2\n14 - PUSH {R4-R6, LR}\n18 - LDR R0, [R0, R2, LSL #2]\n1c - STR R0, [R11, #-16]!\n";
        let spans = parse_disasm(text).unwrap();
        let insns = &spans[0].instructions;
        assert_eq!(insns[0].arch, Arch::Arm);
        assert_eq!(
            insns[0].parsed[3],
            AsmOperand::Shift {
                op: "LSL".into(),
                amount: Box::new(AsmOperand::Imm(2))
            }
        );
        assert_eq!(
            insns[1].parsed[0],
            AsmOperand::RegList(vec!["R4".into(), "R5".into(), "R6".into(), "LR".into()])
        );
        let AsmOperand::Mem(m) = &insns[2].parsed[1] else {
            panic!()
        };
        assert_eq!(m.terms[1], (Sign::Plus, MemTerm::Scaled("R2".into(), 4)));
        let AsmOperand::Mem(m) = &insns[3].parsed[1] else {
            panic!()
        };
        assert!(m.writeback);
        assert_eq!(m.terms[1], (Sign::Minus, MemTerm::Disp(16)));
    }

    #[test]
    fn func_line_selects_arch() {
        let spans = parse_disasm("FUNC a 0 8 ARCH arm\n0 - BX LR\nFUNC b 8 10\n8 - RET").unwrap();
        assert_eq!(spans[0].arch, Arch::Arm);
        assert_eq!(spans[1].arch, Arch::X86);
    }
}
