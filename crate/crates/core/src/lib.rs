//! Lift disassembly to MAIL, build annotated control flow graphs, and match
//! them against malware templates.

pub mod cfg;
pub mod cli;
pub mod detector;
pub mod disasm;
pub mod lift;
pub mod mail;
pub mod matcher;
pub mod synth;
