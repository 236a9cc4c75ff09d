//! Language-agnostic program slicing driven by rewriting-logic semantics.
//!
//! Point this crate at an executable operational semantics (a small Maude-like
//! module file) and it will, without any language-specific code:
//!
//! 1. infer which operators implement memory reads, writes, and stacks
//!    ([`policies`]),
//! 2. synthesize the set of instructions that may update the execution
//!    context, by static analysis of the rules' condition structure
//!    ([`hypertree`]),
//! 3. refine that set into sequential / intra-function / function-call
//!    behavior by running generated programs on the semantics itself
//!    ([`engine`], [`refine`]), and
//! 4. slice programs written in the object language against a variable
//!    criterion, with an executable deletion oracle to validate the result
//!    ([`slicer`]).
//!
//! Two semantics ship embedded for demonstration and testing: a While
//! language with function calls and read/write buffers, and a miniature
//! MIPS-style assembly ([`assets`]). Everything is deterministic: matching
//! enumeration order, rule application order, and report field order are all
//! pinned, so identical inputs produce identical bytes.
//!
//! The `semslice` binary exposes the same pipeline as subcommands; see the
//! crate examples for library-level walkthroughs of each stage.

pub mod sig;
pub mod term;
pub mod matching;
pub mod syntax;
pub mod module;
pub mod policies;
pub mod hypertree;
pub mod engine;
pub mod refine;
pub mod slicer;
pub mod report;
pub mod assets;

pub use sig::{OpId, Signature, SortId};
pub use term::{Subst, Term, Var};
