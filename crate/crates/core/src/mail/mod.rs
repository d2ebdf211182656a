//! The MAIL intermediate language: syntax tree, patterns, text form.

pub mod ast;
pub mod library;
pub mod parser;
pub mod pattern;
pub mod printer;

pub use ast::*;
pub use library::{is_library_function, validate_libcall, LibFunction, LIBRARY};
pub use parser::{parse_mail, parse_mail_with, parse_statement, ParseError};
pub use pattern::{classify_pattern, classify_pattern_with, ClassifyOptions, PatternTag};
pub use printer::{emit_mail, emit_statement};
