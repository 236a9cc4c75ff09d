//! Bundled semantics definitions.
//!
//! Two languages ship with the crate: `whilefun`, a structured imperative
//! language with function calls over an environment stack, and `mips-mini`,
//! a small assembly language with a return-address stack. Both are ordinary
//! semantics files; nothing in the pipeline is specific to them.

use crate::module::{Diagnostic, SemanticsModule, Severity};
use crate::syntax::{parse_module, ParseError};
use thiserror::Error;

pub const WHILEFUN: &str = include_str!("../assets/whilefun.sem");
pub const MIPS_MINI: &str = include_str!("../assets/mips-mini.sem");

pub const BUILTIN_NAMES: [&str; 2] = ["whilefun", "mips-mini"];

#[derive(Debug, Error)]
pub enum AssetError {
    #[error("unknown builtin semantics `{0}` (available: whilefun, mips-mini)")]
    Unknown(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// Source text of a bundled semantics.
pub fn builtin_source(name: &str) -> Option<&'static str> {
    match name {
        "whilefun" => Some(WHILEFUN),
        "mips-mini" => Some(MIPS_MINI),
        _ => None,
    }
}

/// Parse a bundled semantics by name.
pub fn load_builtin(name: &str) -> Result<(SemanticsModule, Vec<Diagnostic>), AssetError> {
    let src = builtin_source(name).ok_or_else(|| AssetError::Unknown(name.to_string()))?;
    let (m, diags) = parse_module(src, name)?;
    Ok((m, diags))
}

/// Load a bundled semantics and panic on any error-severity diagnostic.
/// Intended for tests and examples where the assets are trusted.
pub fn load_builtin_strict(name: &str) -> SemanticsModule {
    let (m, mut diags) = load_builtin(name).expect("builtin parses");
    diags.extend(crate::module::validate(&m));
    let errors: Vec<_> = diags.iter().filter(|d| d.severity == Severity::Error).collect();
    assert!(errors.is_empty(), "builtin `{name}` has errors: {errors:?}");
    m
}
