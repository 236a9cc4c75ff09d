//! Concrete syntax for semantics files and terms: lexer, sort-directed
//! mixfix parser, and a printer whose output parses back to the same term.

pub mod lexer;
pub mod parser;
pub mod printer;

pub use parser::{
    parse_module, parse_pattern, parse_template, parse_term, ParseError, TermParser, TermScope,
};
pub use printer::Printer;

use crate::module::SemanticsModule;
use crate::term::Term;

/// Print a term in the module's concrete syntax.
pub fn print_term(m: &SemanticsModule, t: &Term) -> String {
    Printer::new(&m.sig, m.meta.numerals.as_ref()).print(t)
}
