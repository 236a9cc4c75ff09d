//! The semantics-module data model: rules, equations, conditions, metadata,
//! and whole-file validation.
//!
//! A [`SemanticsModule`] is the parsed form of one semantics file. The file
//! may contain several `fmod`/`mod` blocks chained by `pr` imports; they are
//! flattened into one signature and one rule base, with every declaration
//! remembering which block it came from (the policy analyses scope some
//! scans to the designated memory module).

use crate::sig::{OpId, Signature, SortId};
use crate::term::{least_sort, Term, Var};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};

/// One rule or equation condition, in declaration order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Condition {
    /// `t1 = t2`: both sides evaluate to the same normal form.
    Equal { lhs: Term, rhs: Term },
    /// `p := t`: the normal form of `t` must match pattern `p`,
    /// binding `p`'s new variables.
    Match { pattern: Term, subject: Term },
    /// `t : S`: the least sort of `t`'s normal form is below `S`.
    Membership { term: Term, sort: SortId },
    /// `t => p`: some reachable term from `t` matches pattern `p`.
    Rewrite { subject: Term, pattern: Term },
}

impl Condition {
    /// Variables this condition requires to be bound before it runs.
    pub fn needs(&self) -> BTreeSet<Var> {
        match self {
            Condition::Equal { lhs, rhs } => {
                let mut v = lhs.vars();
                v.extend(rhs.vars());
                v
            }
            Condition::Match { subject, .. } => subject.vars(),
            Condition::Membership { term, .. } => term.vars(),
            Condition::Rewrite { subject, .. } => subject.vars(),
        }
    }

    /// Variables this condition binds for the rest of the rule.
    pub fn binds(&self) -> BTreeSet<Var> {
        match self {
            Condition::Match { pattern, .. } => pattern.vars(),
            Condition::Rewrite { pattern, .. } => pattern.vars(),
            _ => BTreeSet::new(),
        }
    }
}

/// A rewrite rule (`rl`/`crl`) or equation (`eq`/`ceq`).
#[derive(Clone, Debug, Serialize)]
pub struct RuleDecl {
    pub label: String,
    pub lhs: Term,
    pub rhs: Term,
    pub conds: Vec<Condition>,
    /// True for `rl`/`crl`; false for `eq`/`ceq`.
    pub is_rule: bool,
    /// Declaring module block.
    pub module: String,
    /// Declaration order within its kind (equations and rules separately).
    pub index: usize,
}

/// One `fmod`/`mod` block of the source file.
#[derive(Clone, Debug, Serialize)]
pub struct ModuleInfo {
    pub name: String,
    /// True for `mod ... endm` (may declare rules).
    pub is_system: bool,
    pub imports: Vec<String>,
}

/// Numeral sugar: decimal literals expand to a successor tower.
#[derive(Clone, Debug, Serialize)]
pub struct Numerals {
    pub sort: SortId,
    pub zero: OpId,
    pub succ: OpId,
}

/// Directives read from `--- @key value` comment lines.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Metadata {
    pub instruction_sort: Option<SortId>,
    pub memory_module: Option<String>,
    pub function_decl_ops: Vec<OpId>,
    pub program_entry: Option<String>,
    pub sequencing_ops: Vec<OpId>,
    pub variable_sort: Option<SortId>,
    pub value_sort: Option<SortId>,
    pub numerals: Option<Numerals>,
    /// Initial configuration with `$PROGRAM` / `$INPUTS` / `$V1..$Vn` holes.
    pub config_template: Option<Term>,
    /// Input stream encoding for the `$INPUTS` hole.
    pub input_nil: Option<Term>,
    pub input_cons: Option<OpId>,
    /// Item wrapper with a `$V` hole.
    pub input_item: Option<Term>,
    /// Observation term with `$CONFIG` / `$VAR` holes.
    pub observe: Option<Term>,
    /// Which program generator template fits this semantics.
    pub generator: Option<String>,
    /// Neutral instruction used to fill emptied statement slots.
    pub noop: Option<OpId>,
}

/// A parsed semantics file, flattened.
#[derive(Clone, Debug, Serialize)]
pub struct SemanticsModule {
    /// File stem or builtin asset name.
    pub source_name: String,
    pub sig: Signature,
    /// Variable declarations; one sort per name, file-wide.
    pub vars: BTreeMap<String, SortId>,
    pub eqs: Vec<RuleDecl>,
    pub rules: Vec<RuleDecl>,
    pub modules: Vec<ModuleInfo>,
    pub meta: Metadata,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Severity {
    Error,
    Warning,
}

/// One validation finding.
#[derive(Clone, Debug, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub context: String,
    pub message: String,
}

impl Diagnostic {
    pub fn error(context: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic { severity: Severity::Error, context: context.into(), message: message.into() }
    }

    pub fn warning(context: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic { severity: Severity::Warning, context: context.into(), message: message.into() }
    }
}

impl SemanticsModule {
    /// Rules first, then equations; labels are not required to be unique,
    /// the first declaration wins.
    pub fn by_label(&self, label: &str) -> Option<&RuleDecl> {
        self.rules
            .iter()
            .find(|r| r.label == label)
            .or_else(|| self.eqs.iter().find(|e| e.label == label))
    }

    pub fn instruction_sort(&self) -> Option<SortId> {
        self.meta.instruction_sort
    }

    /// True if the term or any subterm has an instruction sort. Variables
    /// count only when their declared sort is at or below the instruction
    /// sort; a variable of a supersort might never hold an instruction.
    pub fn has_instruction_subterm(&self, t: &Term) -> bool {
        let Some(instr) = self.meta.instruction_sort else {
            return false;
        };
        !crate::term::preorder_subterms(&self.sig, t, Some(instr)).is_empty()
    }

    /// Rules whose left-hand side mentions an instruction-sorted subterm.
    /// These are the rules that consume program statements; everything the
    /// analysis derives about instructions starts from this set.
    pub fn root_rules(&self) -> Vec<&RuleDecl> {
        self.rules
            .iter()
            .filter(|r| self.has_instruction_subterm(&r.lhs))
            .collect()
    }

    /// Instruction-sorted operators occurring in the term (not variables).
    pub fn instruction_ops_in(&self, t: &Term) -> BTreeSet<OpId> {
        let mut out = BTreeSet::new();
        let Some(instr) = self.meta.instruction_sort else {
            return out;
        };
        for (_, sub) in crate::term::preorder_subterms(&self.sig, t, Some(instr)) {
            if let Some(op) = sub.head() {
                if self.sig.is_subsort(self.sig.op(op).coarity, instr)
                    || self
                        .sig
                        .is_subsort(least_sort(&self.sig, sub), instr)
                {
                    out.insert(op);
                }
            }
        }
        // Sequencing operators are list glue, not instructions.
        for op in &self.meta.sequencing_ops {
            out.remove(op);
        }
        out
    }
}

/// Validate a parsed module: binding discipline of conditions, sort
/// compatibility of rule sides, identity sanity, metadata references.
pub fn validate(m: &SemanticsModule) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let sig = &m.sig;

    for (op, decl) in sig.ops() {
        if let Some(id) = decl.attrs.id_elem {
            let id_decl = sig.op(id);
            if !id_decl.args.is_empty() {
                out.push(Diagnostic::error(
                    format!("op {}", decl.name),
                    format!("identity `{}` is not a constant", id_decl.name),
                ));
            } else if decl.args.len() == 2
                && !decl
                    .args
                    .iter()
                    .any(|&a| sig.is_subsort(id_decl.coarity, a))
            {
                out.push(Diagnostic::error(
                    format!("op {}", decl.name),
                    format!("identity `{}` does not fit the argument sorts", id_decl.name),
                ));
            }
        }
        let _ = op;
    }

    let all = m.rules.iter().chain(m.eqs.iter());
    for rd in all {
        let kind = if rd.is_rule { "rule" } else { "equation" };
        let ctx = format!("{} {}", kind, rd.label);
        // Sides must live in comparable sorts.
        let ls = least_sort(sig, &rd.lhs);
        let rs = least_sort(sig, &rd.rhs);
        if !sig.comparable(ls, rs) {
            out.push(Diagnostic::error(
                ctx.clone(),
                format!(
                    "sides have incomparable sorts {} and {}",
                    sig.sort_name(ls),
                    sig.sort_name(rs)
                ),
            ));
        }
        // Left-to-right binding discipline over the conditions.
        let mut bound: BTreeSet<Var> = rd.lhs.vars();
        for (i, c) in rd.conds.iter().enumerate() {
            for v in c.needs() {
                if !bound.contains(&v) {
                    out.push(Diagnostic::error(
                        ctx.clone(),
                        format!("condition {} uses unbound variable `{}`", i + 1, v.name),
                    ));
                }
            }
            bound.extend(c.binds());
        }
        for v in rd.rhs.vars() {
            if !bound.contains(&v) {
                out.push(Diagnostic::error(
                    ctx.clone(),
                    format!("right-hand side uses unbound variable `{}`", v.name),
                ));
            }
        }
        // Rules inside functional modules are suspicious.
        if rd.is_rule {
            if let Some(info) = m.modules.iter().find(|mi| mi.name == rd.module) {
                if !info.is_system {
                    out.push(Diagnostic::warning(
                        ctx,
                        "rewrite rule declared in a functional module".to_string(),
                    ));
                }
            }
        }
    }

    // Imports must name modules of this file.
    let names: BTreeSet<&str> = m.modules.iter().map(|mi| mi.name.as_str()).collect();
    for mi in &m.modules {
        for imp in &mi.imports {
            if !names.contains(imp.as_str()) {
                out.push(Diagnostic::error(
                    format!("module {}", mi.name),
                    format!("imports unknown module `{imp}`"),
                ));
            }
        }
    }

    // Metadata cross-references.
    if let Some(mem) = &m.meta.memory_module {
        if !names.contains(mem.as_str()) {
            out.push(Diagnostic::error(
                "metadata",
                format!("@memory-module names unknown module `{mem}`"),
            ));
        }
    }
    if m.meta.instruction_sort.is_none() {
        out.push(Diagnostic::warning(
            "metadata",
            "no @instruction-sort; synthesis and slicing are unavailable".to_string(),
        ));
    }

    out
}
