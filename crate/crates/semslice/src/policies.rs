//! Memory usage policies inferred from the shape of a semantics.
//!
//! Nothing in here executes a program. Every inference reads declarations
//! and rule syntax only: which operators look like stack constructors,
//! which look like reads and writes of a store, and which rules push or
//! pop context implicitly through their rewrite conditions. The results
//! feed the hypertree synthesis and, ultimately, decide which statements
//! a slicer must treat as context updates.

use std::collections::BTreeSet;

use crate::module::{Condition, SemanticsModule};
use crate::sig::{OpId, Signature, SortId};
use crate::term::Term;

/// Stack structure discovered in a signature.
#[derive(Debug, Clone)]
pub struct StackPolicy {
    /// Sorts built by some stack operator, anywhere in the signature.
    pub stack_sorts: BTreeSet<SortId>,
    /// Stack operators declared inside the designated memory module.
    pub stack_ops: BTreeSet<OpId>,
    /// Every stack operator, regardless of module.
    pub all_stack_ops: BTreeSet<OpId>,
}

/// A stack operator builds a sort out of itself plus one layer of content.
///
/// The shape test: binary, not commutative, no identity element, coarity S
/// with one argument exactly S (the stack side) and the other at or below S
/// (the element side). The element side must be able to carry something
/// strictly smaller than S, and the operator must either be associative or
/// take its element from a strict subsort; otherwise it is list glue over a
/// flat sort. On top of the shape test, any equation or rule headed by the
/// operator must change its occurrence count by at most one, the usual
/// push/pop discipline.
pub fn is_stack_op(sig: &Signature, op: OpId) -> bool {
    let d = sig.op(op);
    if d.arity() != 2 || d.attrs.comm || d.attrs.id_elem.is_some() {
        return false;
    }
    let s = d.coarity;
    let elem = if d.args[0] == s {
        d.args[1]
    } else if d.args[1] == s {
        d.args[0]
    } else {
        return false;
    };
    if !sig.is_subsort(elem, s) {
        return false;
    }
    if elem == s {
        // Both sides are the stack sort itself; only layered sorts qualify,
        // and only when associativity lets elements chain.
        sig.has_proper_subsort(s) && d.attrs.assoc
    } else {
        true
    }
}

/// Occurrence-count discipline for a candidate stack operator: every
/// equation or rule headed by it may grow or shrink the count by at most
/// one. Flattened associative spines count as a single application, which
/// is what a single push or pop produces after normalization.
fn respects_discipline(m: &SemanticsModule, op: OpId) -> bool {
    m.eqs.iter().chain(m.rules.iter()).all(|r| {
        if r.lhs.head() != Some(op) {
            return true;
        }
        let delta = count_op(&r.rhs, op) as i64 - count_op(&r.lhs, op) as i64;
        (-1..=1).contains(&delta)
    })
}

pub(crate) fn count_op(t: &Term, op: OpId) -> usize {
    match t {
        Term::Var(_) => 0,
        Term::Marked(_, inner) => count_op(inner, op),
        Term::App(o, args) => {
            usize::from(*o == op) + args.iter().map(|a| count_op(a, op)).sum::<usize>()
        }
    }
}

fn op_apps(t: &Term, out: &mut BTreeSet<OpId>) {
    match t {
        Term::Var(_) => {}
        Term::Marked(_, inner) => op_apps(inner, out),
        Term::App(op, args) => {
            out.insert(*op);
            for a in args {
                op_apps(a, out);
            }
        }
    }
}

/// Infer the stack structure of a semantics: all stack sorts in the
/// signature, plus the stack operators scoped to the memory module.
pub fn infer_stack_policy(m: &SemanticsModule) -> StackPolicy {
    let mut all = BTreeSet::new();
    for (id, _) in m.sig.ops() {
        if is_stack_op(&m.sig, id) && respects_discipline(m, id) {
            all.insert(id);
        }
    }
    let stack_sorts = all.iter().map(|&op| m.sig.op(op).coarity).collect();
    let scoped = match m.meta.memory_module.as_deref() {
        Some(mem) => all
            .iter()
            .copied()
            .filter(|&op| m.sig.op(op).module == mem)
            .collect(),
        None => all.clone(),
    };
    StackPolicy {
        stack_sorts,
        stack_ops: scoped,
        all_stack_ops: all,
    }
}

fn memory_sorts(m: &SemanticsModule) -> Option<BTreeSet<SortId>> {
    let mem = m.meta.memory_module.as_deref()?;
    Some(m.sig.sorts_in_module(mem))
}

/// Operators of the memory module that read a value out of the store:
/// they take a memory argument and a variable argument and return a value.
pub fn infer_read_ops(m: &SemanticsModule) -> BTreeSet<OpId> {
    let (Some(mem), Some(mem_sorts)) = (m.meta.memory_module.as_deref(), memory_sorts(m)) else {
        return BTreeSet::new();
    };
    let (Some(var_sort), Some(val_sort)) = (m.meta.variable_sort, m.meta.value_sort) else {
        return BTreeSet::new();
    };
    m.sig
        .ops_in_module(mem)
        .filter(|(_, d)| {
            d.arity() >= 2
                && d.args.iter().any(|a| mem_sorts.contains(a))
                && d.args.iter().any(|&a| m.sig.comparable(a, var_sort))
                && m.sig.is_subsort(d.coarity, val_sort)
        })
        .map(|(id, _)| id)
        .collect()
}

/// Operators of the memory module that produce an updated store: memory in,
/// memory out, a variable argument, and at least one defining equation whose
/// result differs from the incoming memory. Constructors and pure-identity
/// helpers do not qualify.
pub fn infer_write_ops(m: &SemanticsModule) -> BTreeSet<OpId> {
    let (Some(mem), Some(mem_sorts)) = (m.meta.memory_module.as_deref(), memory_sorts(m)) else {
        return BTreeSet::new();
    };
    let Some(var_sort) = m.meta.variable_sort else {
        return BTreeSet::new();
    };
    m.sig
        .ops_in_module(mem)
        .filter(|(id, d)| {
            d.args.iter().any(|a| mem_sorts.contains(a))
                && d.args.iter().any(|&a| m.sig.comparable(a, var_sort))
                && mem_sorts.contains(&d.coarity)
                && mutates_memory(m, *id, &mem_sorts)
        })
        .map(|(id, _)| id)
        .collect()
}

/// True if some defining equation of `op` yields a term other than the
/// memory it was handed. Recursive results count as mutation; only an
/// equation returning the memory argument verbatim does not.
fn mutates_memory(m: &SemanticsModule, op: OpId, mem_sorts: &BTreeSet<SortId>) -> bool {
    let d = m.sig.op(op);
    let Some(mem_pos) = d.args.iter().position(|a| mem_sorts.contains(a)) else {
        return false;
    };
    m.eqs.iter().any(|e| {
        if e.lhs.head() != Some(op) {
            return false;
        }
        match e.lhs.unmarked() {
            Term::App(_, args) if args.len() > mem_pos => {
                !crate::term::equal_unmarked(&args[mem_pos], &e.rhs)
            }
            _ => false,
        }
    })
}

/// Stack sorts a program can actually push to: the stack operator must
/// appear applied in the right-hand side or in a condition of some rule
/// that consumes an instruction. Left-hand sides do not count; matching a
/// stack is observation, not update.
pub fn context_update_sorts(m: &SemanticsModule) -> BTreeSet<SortId> {
    let policy = infer_stack_policy(m);
    let mut out = BTreeSet::new();
    for r in m.root_rules() {
        let mut apps = BTreeSet::new();
        op_apps(&r.rhs, &mut apps);
        for c in &r.conds {
            match c {
                Condition::Equal { lhs, rhs } => {
                    op_apps(lhs, &mut apps);
                    op_apps(rhs, &mut apps);
                }
                Condition::Match { pattern, subject } => {
                    op_apps(pattern, &mut apps);
                    op_apps(subject, &mut apps);
                }
                Condition::Rewrite { subject, pattern } => {
                    op_apps(subject, &mut apps);
                    op_apps(pattern, &mut apps);
                }
                Condition::Membership { term, .. } => op_apps(term, &mut apps),
            }
        }
        for op in apps {
            if policy.all_stack_ops.contains(&op) {
                out.insert(m.sig.op(op).coarity);
            }
        }
    }
    out
}

/// Rules that push context without naming a stack: their rewrite conditions
/// run an instruction-sorted subject to completion, which suspends the
/// outer instruction exactly like an explicit call stack would.
pub fn infer_implicit_stack_rules(m: &SemanticsModule) -> Vec<String> {
    m.rules
        .iter()
        .filter(|r| {
            r.conds.iter().any(|c| {
                matches!(c, Condition::Rewrite { subject, .. }
                    if m.has_instruction_subterm(subject))
            })
        })
        .map(|r| r.label.clone())
        .collect()
}

/// Sort names, alphabetical, space separated.
pub fn format_sorts(sig: &Signature, sorts: &BTreeSet<SortId>) -> String {
    let mut names: Vec<&str> = sorts.iter().map(|&s| sig.sort_name(s)).collect();
    names.sort_unstable();
    names.join(" ")
}

/// Operator names, alphabetical, space separated. Overloads collapse to
/// one entry per name.
pub fn format_ops(sig: &Signature, ops: &BTreeSet<OpId>) -> String {
    let mut names: Vec<&str> = ops.iter().map(|&o| sig.op(o).name.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    names.join(" ")
}
