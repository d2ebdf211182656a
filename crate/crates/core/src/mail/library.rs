//! Registry of MAIL library functions.
//!
//! The functions are symbolic: they name what an instruction does so the
//! structure of a program survives translation. There is no evaluator.

use std::ops::RangeInclusive;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LibFunction {
    pub name: &'static str,
    pub arity: RangeInclusive<usize>,
    pub description: &'static str,
}

const fn f(name: &'static str, lo: usize, hi: usize, description: &'static str) -> LibFunction {
    LibFunction {
        name,
        arity: lo..=hi,
        description,
    }
}

/// 27 rows; `swap` appears once per accepted arity.
pub static LIBRARY: [LibFunction; 27] = [
    f("abs", 1, 1, "absolute value of op"),
    f("aes", 2, 2, "AES encryption (mode 0) or decryption of op"),
    f("allocate", 1, 1, "allocate n bytes from the heap"),
    f("atan", 1, 1, "arc tangent of op"),
    f("avg", 2, 2, "average of op1 and op2"),
    f("bit", 3, 3, "select len bits of op starting at index"),
    f("clear", 3, 3, "clear len bits of op starting at index"),
    f(
        "compare",
        2,
        2,
        "compare op1 with op2 and set the flag registers",
    ),
    f("complement", 2, 2, "complement the bit of op at index"),
    f("convert", 1, 1, "convert value to int or float"),
    f("cos", 1, 1, "cosine of op"),
    f("count", 1, 1, "number of one bits in op"),
    f("len", 1, 1, "length of obj"),
    f("log", 1, 1, "logarithm of op"),
    f("max", 2, 2, "maximum of op1 and op2"),
    f("min", 2, 2, "minimum of op1 and op2"),
    f("rev", 1, 1, "reverse the bit order of op"),
    f("round", 1, 1, "round op"),
    f(
        "scanf",
        2,
        2,
        "index of the first one bit of op1, stored in op2",
    ),
    f(
        "scanr",
        2,
        2,
        "index of the last one bit of op1, stored in op2",
    ),
    f("set", 3, 3, "set len bits of op starting at index"),
    f("sin", 1, 1, "sine of op"),
    f("sqrt", 1, 1, "square root of op"),
    f("substr", 3, 3, "substring of value from offset up to len"),
    f("swap", 2, 2, "swap the bits of op2 and write them to op1"),
    f("swap", 1, 1, "swap the bits of op"),
    f("tan", 1, 1, "tangent of op"),
];

pub fn lookup(name: &str) -> impl Iterator<Item = &'static LibFunction> + '_ {
    LIBRARY.iter().filter(move |func| func.name == name)
}

pub fn is_library_function(name: &str) -> bool {
    lookup(name).next().is_some()
}

/// True iff `name` is registered and accepts `argc` arguments.
pub fn validate_libcall(name: &str, argc: usize) -> bool {
    lookup(name).any(|func| func.arity.contains(&argc))
}
