//! Deterministic execution of a semantics module.
//!
//! The engine runs ground configurations by interleaving two phases:
//! equations reduce terms to normal form (leftmost-innermost, declaration
//! order breaks ties), and rules perform observable steps (outermost-leftmost
//! position, first rule in declaration order whose conditions solve). Rule
//! conditions may demand nested runs, which recurse into the same machinery
//! under a shared budget.
//!
//! Programs are instrumented before execution: every instruction-sorted
//! application gets a numbered mark. Matching peels marks transparently and
//! reports them, so each committed rule step knows which program point it
//! consumed. The resulting event list is the raw material for trace
//! abstraction and slicing.

use crate::matching::match_term;
use crate::module::{Condition, RuleDecl, SemanticsModule};
use crate::sig::{OpId, Signature};
use crate::term::{self, apply, Subst, Term};
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

/// Default number of rule applications an execution may perform,
/// including nested runs spawned by rewrite conditions.
pub const DEFAULT_STEP_BUDGET: u64 = 10_000;
/// Default number of equation applications before a run is cut off.
pub const DEFAULT_EQ_BUDGET: u64 = 5_000_000;
/// Default nesting depth for rewrite conditions.
pub const DEFAULT_DEPTH: u32 = 32;

/// Step budget used when the caller does not pass one explicitly.
/// `SEMSLICE_STEP_BUDGET` overrides the built-in default.
pub fn default_step_budget() -> u64 {
    std::env::var("SEMSLICE_STEP_BUDGET")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(DEFAULT_STEP_BUDGET)
}

/// Remaining work an execution is allowed to do. Shared by the top-level
/// run and every nested run its conditions spawn.
#[derive(Clone, Copy, Debug)]
pub struct Budget {
    pub steps: u64,
    pub eq_apps: u64,
    pub depth: u32,
}

impl Budget {
    pub fn with_steps(steps: u64) -> Self {
        Budget { steps, eq_apps: DEFAULT_EQ_BUDGET, depth: DEFAULT_DEPTH }
    }
}

impl Default for Budget {
    fn default() -> Self {
        Budget::with_steps(default_step_budget())
    }
}

/// One committed rule application. `id` is the mark the rule peeled off
/// the consumed program point, if its left-hand side reached one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Event {
    pub label: String,
    pub id: Option<u32>,
}

/// How a run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RunStatus {
    /// No rule applies and the final term is built from constructors only.
    Completed,
    /// The step or equation budget ran out.
    StepLimit,
    /// No rule applies but a defined operator survives in the final term.
    Stuck,
}

/// Full record of one execution.
#[derive(Clone, Debug, Serialize)]
pub struct Trace {
    pub events: Vec<Event>,
    pub status: RunStatus,
    pub final_term: Term,
    /// Rule applications consumed, nested runs included.
    pub steps: u64,
}

impl Trace {
    /// Program-point ids in event order; events without a mark are dropped.
    pub fn ids(&self) -> Vec<u32> {
        self.events.iter().filter_map(|e| e.id).collect()
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("semantics module lacks the `{0}` directive")]
    MissingDirective(&'static str),
    #[error("template placeholder `{0}` is not understood")]
    UnknownPlaceholder(String),
    #[error("`{0}` is not a declared constant")]
    UnknownConstant(String),
}

/// Declarations grouped by the head operator of their left-hand side, so
/// matching is attempted only where it can succeed. A declaration whose
/// left-hand side root is a variable or carries an identity element can
/// match any head; those stay in the open lists and are merged back in
/// declaration order.
struct DeclIndex {
    eqs_by_head: BTreeMap<OpId, Vec<usize>>,
    eqs_open: Vec<usize>,
    rules_by_head: BTreeMap<OpId, Vec<usize>>,
    rules_open: Vec<usize>,
}

fn group_by_head(sig: &Signature, decls: &[RuleDecl]) -> (BTreeMap<OpId, Vec<usize>>, Vec<usize>) {
    let mut by_head: BTreeMap<OpId, Vec<usize>> = BTreeMap::new();
    let mut open = Vec::new();
    for (i, d) in decls.iter().enumerate() {
        match d.lhs.head() {
            Some(h) if sig.op(h).attrs.id_elem.is_none() => {
                by_head.entry(h).or_default().push(i)
            }
            _ => open.push(i),
        }
    }
    (by_head, open)
}

fn merge_candidates(indexed: &[usize], open: &[usize]) -> Vec<usize> {
    if open.is_empty() {
        return indexed.to_vec();
    }
    let mut all: Vec<usize> = indexed.iter().chain(open).copied().collect();
    all.sort_unstable();
    all
}

/// Per-run context: the module, its declaration index, and a cache of
/// terms already known to be in equational normal form. The cache is what
/// keeps repeated renormalization of unchanged subterms (program code, a
/// register file) from dominating every step.
struct EngineCtx<'m> {
    m: &'m SemanticsModule,
    idx: DeclIndex,
    normal: std::cell::RefCell<std::collections::HashSet<Term>>,
}

impl<'m> EngineCtx<'m> {
    fn new(m: &'m SemanticsModule) -> Self {
        EngineCtx {
            m,
            idx: DeclIndex::new(m),
            normal: std::cell::RefCell::new(std::collections::HashSet::new()),
        }
    }
}

impl DeclIndex {
    fn new(m: &SemanticsModule) -> Self {
        let (eqs_by_head, eqs_open) = group_by_head(&m.sig, &m.eqs);
        let (rules_by_head, rules_open) = group_by_head(&m.sig, &m.rules);
        DeclIndex { eqs_by_head, eqs_open, rules_by_head, rules_open }
    }

    /// Equation indices worth trying on a subject with this head,
    /// in declaration order.
    fn eq_candidates(&self, head: Option<OpId>) -> Vec<usize> {
        let indexed = head
            .and_then(|h| self.eqs_by_head.get(&h))
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        merge_candidates(indexed, &self.eqs_open)
    }

    /// Rule indices worth trying on a subject with this head,
    /// in declaration order.
    fn rule_candidates(&self, head: Option<OpId>) -> Vec<usize> {
        let indexed = head
            .and_then(|h| self.rules_by_head.get(&h))
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        merge_candidates(indexed, &self.rules_open)
    }
}

/// Reduce `t` to equational normal form: normalize arguments first, then
/// retry equations at the root until none applies. Equations are silent;
/// any trace events their conditions generate are discarded.
pub fn normalize_eqs(m: &SemanticsModule, t: &Term, budget: &mut Budget) -> Term {
    let cx = EngineCtx::new(m);
    normalize_in(&cx, t, budget)
}

fn normalize_in(cx: &EngineCtx, t: &Term, budget: &mut Budget) -> Term {
    norm_rec(cx, t, budget)
}

fn norm_rec(cx: &EngineCtx, t: &Term, budget: &mut Budget) -> Term {
    if cx.normal.borrow().contains(t) {
        return t.clone();
    }
    let rebuilt = match t {
        Term::Var(_) => t.clone(),
        Term::Marked(id, inner) => Term::Marked(*id, Box::new(norm_rec(cx, inner, budget))),
        Term::App(op, args) => {
            let args: Vec<Term> = args.iter().map(|a| norm_rec(cx, a, budget)).collect();
            term::normalize_root(&cx.m.sig, *op, args)
        }
    };
    let out = reduce_root(cx, rebuilt, budget);
    // A cut-off reduction may not have reached normal form; never cache it.
    if budget.eq_apps > 0 {
        cx.normal.borrow_mut().insert(out.clone());
    }
    out
}

fn reduce_root(cx: &EngineCtx, mut cur: Term, budget: &mut Budget) -> Term {
    'retry: loop {
        if budget.eq_apps == 0 {
            return cur;
        }
        for ei in cx.idx.eq_candidates(cur.head()) {
            let eq = &cx.m.eqs[ei];
            let sols = match_term(&cx.m.sig, &eq.lhs, &cur);
            for sol in sols.outcomes {
                let mut scratch = Vec::new();
                if let Some(sigma) = solve_from(cx, &eq.conds, 0, sol.subst, budget, &mut scratch)
                {
                    budget.eq_apps = budget.eq_apps.saturating_sub(1);
                    cur = norm_rec(cx, &apply(&sigma, &eq.rhs), budget);
                    continue 'retry;
                }
            }
        }
        return cur;
    }
}

/// Extend `base` with the bindings of `extra`, failing on disagreement.
fn merge_subst(base: &mut Subst, extra: &Subst) -> bool {
    extra.0.iter().all(|(v, t)| base.bind_consistent(v.clone(), t.clone()))
}

/// Solve a rule's conditions left to right under substitution `seed`,
/// backtracking across match and rewrite alternatives. Returns the extended
/// substitution on success. Events from nested runs are appended to
/// `events`; failed alternatives are rolled back.
pub fn solve_conditions(
    m: &SemanticsModule,
    conds: &[Condition],
    seed: &Subst,
    budget: &mut Budget,
    events: &mut Vec<Event>,
) -> Option<Subst> {
    let cx = EngineCtx::new(m);
    solve_from(&cx, conds, 0, seed.clone(), budget, events)
}

fn solve_from(
    cx: &EngineCtx,
    conds: &[Condition],
    i: usize,
    sigma: Subst,
    budget: &mut Budget,
    events: &mut Vec<Event>,
) -> Option<Subst> {
    let Some(cond) = conds.get(i) else { return Some(sigma) };
    let mark = events.len();
    match cond {
        Condition::Equal { lhs, rhs } => {
            let a = normalize_in(cx, &apply(&sigma, lhs), budget);
            let b = normalize_in(cx, &apply(&sigma, rhs), budget);
            if term::equal_unmarked(&a, &b) {
                solve_from(cx, conds, i + 1, sigma, budget, events)
            } else {
                None
            }
        }
        Condition::Membership { term: t, sort } => {
            let v = normalize_in(cx, &apply(&sigma, t), budget);
            if cx.m.sig.is_subsort(term::least_sort(&cx.m.sig, &v), *sort) {
                solve_from(cx, conds, i + 1, sigma, budget, events)
            } else {
                None
            }
        }
        Condition::Match { pattern, subject } => {
            let subj = normalize_in(cx, &apply(&sigma, subject), budget);
            let pat = apply(&sigma, pattern);
            let sols = match_term(&cx.m.sig, &pat, &subj);
            for sol in sols.outcomes {
                let mut merged = sigma.clone();
                if !merge_subst(&mut merged, &sol.subst) {
                    continue;
                }
                if let Some(out) = solve_from(cx, conds, i + 1, merged, budget, events) {
                    return Some(out);
                }
                events.truncate(mark);
            }
            None
        }
        Condition::Rewrite { subject, pattern } => {
            let subj = normalize_in(cx, &apply(&sigma, subject), budget);
            let pat = apply(&sigma, pattern);
            if budget.depth == 0 {
                return None;
            }
            budget.depth -= 1;
            let out = solve_rewrite(cx, subj, &pat, conds, i, &sigma, budget, events);
            budget.depth += 1;
            out
        }
    }
}

/// Run the subject of a rewrite condition, testing the goal pattern on the
/// start term and after every step. The first state whose match lets the
/// remaining conditions solve wins.
fn solve_rewrite(
    cx: &EngineCtx,
    mut cur: Term,
    pat: &Term,
    conds: &[Condition],
    i: usize,
    sigma: &Subst,
    budget: &mut Budget,
    events: &mut Vec<Event>,
) -> Option<Subst> {
    loop {
        let mark = events.len();
        let sols = match_term(&cx.m.sig, pat, &cur);
        for sol in sols.outcomes {
            let mut merged = sigma.clone();
            if !merge_subst(&mut merged, &sol.subst) {
                continue;
            }
            if let Some(out) = solve_from(cx, conds, i + 1, merged, budget, events) {
                return Some(out);
            }
            events.truncate(mark);
        }
        if budget.steps == 0 {
            return None;
        }
        // Steps taken while searching for the goal stay in the event list;
        // if the condition ultimately fails the caller rolls back the whole
        // attempt.
        match step_in(cx, &cur, budget, events) {
            Some(next) => cur = next,
            None => return None,
        }
    }
}

/// Perform one rule application on `t`, or return None if no rule applies.
/// Positions are tried outermost-leftmost; rules in declaration order; for
/// each match solution the conditions are solved with backtracking. The
/// result is renormalized. Committed events append to `events` with the
/// outer rule's event first, then events from its nested runs.
pub fn rewrite_step(
    m: &SemanticsModule,
    t: &Term,
    budget: &mut Budget,
    events: &mut Vec<Event>,
) -> Option<Term> {
    let cx = EngineCtx::new(m);
    step_in(&cx, t, budget, events)
}

fn step_in(
    cx: &EngineCtx,
    t: &Term,
    budget: &mut Budget,
    events: &mut Vec<Event>,
) -> Option<Term> {
    for (pos, sub) in term::preorder_subterms(&cx.m.sig, t, None) {
        if sub.head().is_none() {
            continue;
        }
        for ri in cx.idx.rule_candidates(sub.head()) {
            let rule = &cx.m.rules[ri];
            let sols = match_term(&cx.m.sig, &rule.lhs, sub);
            for sol in sols.outcomes {
                let mut attempt = vec![Event {
                    label: rule.label.clone(),
                    id: sol.peels.first().copied(),
                }];
                if let Some(sigma) = solve_from(cx, &rule.conds, 0, sol.subst, budget, &mut attempt)
                {
                    if budget.steps == 0 {
                        return None;
                    }
                    budget.steps -= 1;
                    let replaced = term::replace_at(t, &pos, apply(&sigma, &rule.rhs));
                    let next = normalize_in(cx, &replaced, budget);
                    events.extend(attempt);
                    return Some(next);
                }
            }
        }
    }
    None
}

/// Run `initial` to quiescence or exhaustion and report what happened.
pub fn execute(m: &SemanticsModule, initial: &Term, max_steps: u64) -> Trace {
    let cx = EngineCtx::new(m);
    let mut budget = Budget::with_steps(max_steps);
    let start = budget.steps;
    let mut events = Vec::new();
    let mut cur = normalize_in(&cx, initial, &mut budget);
    loop {
        if budget.steps == 0 || budget.eq_apps == 0 {
            let steps = start - budget.steps;
            return Trace { events, status: RunStatus::StepLimit, final_term: cur, steps };
        }
        match step_in(&cx, &cur, &mut budget, &mut events) {
            Some(next) => cur = next,
            None => {
                let steps = start - budget.steps;
                let status = if budget.steps == 0 || budget.eq_apps == 0 {
                    RunStatus::StepLimit
                } else if all_ctor(&m.sig, &cur) {
                    RunStatus::Completed
                } else {
                    RunStatus::Stuck
                };
                return Trace { events, status, final_term: cur, steps };
            }
        }
    }
}

/// A term is final data when every application uses a constructor.
/// Marks are transparent.
fn all_ctor(sig: &Signature, t: &Term) -> bool {
    match t {
        Term::Var(_) => true,
        Term::Marked(_, inner) => all_ctor(sig, inner),
        Term::App(op, args) => sig.op(*op).attrs.ctor && args.iter().all(|a| all_ctor(sig, a)),
    }
}

pub(crate) fn is_instruction_op(m: &SemanticsModule, op: crate::sig::OpId) -> bool {
    match m.meta.instruction_sort {
        Some(s) => m.sig.is_subsort(m.sig.op(op).coarity, s),
        None => false,
    }
}

/// Wrap every instruction-sorted application in a numbered mark, container
/// before children, left to right. Sequencing operators stay bare so that
/// list structure never shadows its elements.
pub fn instrument(m: &SemanticsModule, program: &Term) -> Term {
    let mut next = 0u32;
    mark_rec(m, program, &mut next)
}

fn mark_rec(m: &SemanticsModule, t: &Term, next: &mut u32) -> Term {
    match t {
        Term::Var(v) => Term::Var(v.clone()),
        Term::Marked(id, inner) => Term::Marked(*id, Box::new(mark_rec(m, inner, next))),
        Term::App(op, args) => {
            let mark_this = is_instruction_op(m, *op) && !m.meta.sequencing_ops.contains(op);
            let id = if mark_this {
                let i = *next;
                *next += 1;
                Some(i)
            } else {
                None
            };
            let args: Vec<Term> = args.iter().map(|a| mark_rec(m, a, next)).collect();
            let rebuilt = Term::App(*op, args);
            match id {
                Some(i) => Term::Marked(i, Box::new(rebuilt)),
                None => rebuilt,
            }
        }
    }
}

/// The program points of `program` in mark order: one clean clone per
/// instruction-sorted application, container before children.
pub fn program_points(m: &SemanticsModule, program: &Term) -> Vec<Term> {
    let mut out = Vec::new();
    points_rec(m, program, &mut out);
    out
}

fn points_rec(m: &SemanticsModule, t: &Term, out: &mut Vec<Term>) {
    match t {
        Term::Var(_) => {}
        Term::Marked(_, inner) => points_rec(m, inner, out),
        Term::App(op, args) => {
            if is_instruction_op(m, *op) && !m.meta.sequencing_ops.contains(op) {
                out.push(term::strip_marks(t));
            }
            for a in args {
                points_rec(m, a, out);
            }
        }
    }
}

/// Build the successor-tower numeral for `n`.
pub fn numeral(m: &SemanticsModule, n: u64) -> Result<Term, EngineError> {
    let nums = m.meta.numerals.as_ref().ok_or(EngineError::MissingDirective("numerals"))?;
    let mut t = Term::App(nums.zero, vec![]);
    for _ in 0..n {
        t = Term::App(nums.succ, vec![t]);
    }
    Ok(t)
}

/// Read back a numeral; None if the term is not a successor tower.
pub fn numeral_value(m: &SemanticsModule, t: &Term) -> Option<u64> {
    let nums = m.meta.numerals.as_ref()?;
    let mut cur = t.unmarked();
    let mut n = 0u64;
    loop {
        match cur {
            Term::App(op, args) if *op == nums.succ => {
                n += 1;
                cur = args[0].unmarked();
            }
            Term::App(op, _) if *op == nums.zero => return Some(n),
            _ => return None,
        }
    }
}

/// Instantiate the configuration template with an (already instrumented)
/// program and numeric inputs. `$PROGRAM` takes the program, `$INPUTS`
/// takes the input buffer, `$V1`, `$V2`, ... take positional numerals
/// (missing positions read as zero).
pub fn build_config(
    m: &SemanticsModule,
    program: &Term,
    inputs: &[u64],
) -> Result<Term, EngineError> {
    let tpl = m
        .meta
        .config_template
        .as_ref()
        .ok_or(EngineError::MissingDirective("config-template"))?;
    let mut subst = Subst::new();
    for v in tpl.vars() {
        let repl = match v.name.as_str() {
            "$PROGRAM" => program.clone(),
            "$INPUTS" => inputs_term(m, inputs)?,
            name => match name.strip_prefix("$V").and_then(|k| k.parse::<usize>().ok()) {
                Some(k) if k >= 1 => numeral(m, inputs.get(k - 1).copied().unwrap_or(0))?,
                _ => return Err(EngineError::UnknownPlaceholder(name.to_string())),
            },
        };
        subst.insert(v, repl);
    }
    Ok(term::normalize(&m.sig, &apply(&subst, tpl)))
}

/// Encode `inputs` as the template's buffer: items for each value, joined
/// right-to-left with the input constructor, ending in the nil marker.
fn inputs_term(m: &SemanticsModule, inputs: &[u64]) -> Result<Term, EngineError> {
    let nil = m
        .meta
        .input_nil
        .clone()
        .ok_or(EngineError::MissingDirective("input-nil"))?;
    let item_tpl = m
        .meta
        .input_item
        .as_ref()
        .ok_or(EngineError::MissingDirective("input-item"))?;
    let cons = m.meta.input_cons.ok_or(EngineError::MissingDirective("input-cons"))?;
    let mut out = nil;
    for v in inputs.iter().rev() {
        let value = numeral(m, *v)?;
        let mut subst = Subst::new();
        for var in item_tpl.vars() {
            subst.insert(var, value.clone());
        }
        let item = apply(&subst, item_tpl);
        out = Term::App(cons, vec![item, out]);
    }
    Ok(term::normalize(&m.sig, &out))
}

/// Evaluate the observation template against a final configuration: the
/// `$CONFIG` placeholder takes the configuration, any other placeholder
/// takes the named constant (a program variable or register).
pub fn observe(m: &SemanticsModule, config: &Term, var: &str) -> Result<Term, EngineError> {
    let tpl = m.meta.observe.as_ref().ok_or(EngineError::MissingDirective("observe"))?;
    let var_term = constant_named(m, var)?;
    let mut subst = Subst::new();
    for v in tpl.vars() {
        let repl = if v.name == "$CONFIG" { config.clone() } else { var_term.clone() };
        subst.insert(v, repl);
    }
    let mut budget = Budget::default();
    Ok(normalize_eqs(m, &apply(&subst, tpl), &mut budget))
}

/// Resolve a nullary constant by name.
pub fn constant_named(m: &SemanticsModule, name: &str) -> Result<Term, EngineError> {
    for &op in m.sig.ops_named(name) {
        if m.sig.op(op).arity() == 0 {
            return Ok(Term::App(op, vec![]));
        }
    }
    Err(EngineError::UnknownConstant(name.to_string()))
}

/// Instrument a program, build its initial configuration, and run it.
pub fn run_program(
    m: &SemanticsModule,
    program: &Term,
    inputs: &[u64],
    max_steps: u64,
) -> Result<Trace, EngineError> {
    let marked = instrument(m, program);
    let config = build_config(m, &marked, inputs)?;
    Ok(execute(m, &config, max_steps))
}
