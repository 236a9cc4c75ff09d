//! Static slicing by repeated traversal of the program term, plus a
//! statement-deletion oracle used to test it.
//!
//! The slicer works on program points: the instruction-sorted
//! applications of a program in container-first order, the same numbering
//! the engine stamps onto trace events. A criterion seeds a set of
//! variable names; every round walks the reachable points and keeps each
//! instruction that writes a name in the set, pulling the names it reads
//! in after it. Calls redirect the walk into the callee's declaration,
//! jumps keep the control skeleton of any span that still matters, and
//! enclosing conditionals of kept instructions are kept with their guard
//! variables. The walk repeats until neither the name set nor the kept
//! set moves.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::engine::{self, EngineError, RunStatus};
use crate::hypertree::{self, SideEffectFact};
use crate::module::SemanticsModule;
use crate::policies;
use crate::refine::{self, ContextUpdatePartition};
use crate::sig::{OpId, SortId};
use crate::syntax::print_term;
use crate::term::{self, Term};

#[derive(Debug, Error)]
pub enum SliceError {
    #[error("criterion names no variables")]
    EmptyCriterion,
    #[error("criterion point {0} is not a program point; the program has {1}")]
    UnknownPoint(u32, usize),
    #[error("call construct `{0}` resolves to no declaration")]
    UnresolvedTarget(String),
    #[error("reconstruction emptied a statement slot and the semantics names no @noop")]
    NoNeutralInstruction,
    #[error("deletion oracle needs a completed baseline run: {0}")]
    OracleInapplicable(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// What to preserve: variable names, at an optional program point.
/// Without a point the slice is backward from the end of the program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Criterion {
    pub variables: BTreeSet<String>,
    pub point: Option<u32>,
}

impl Criterion {
    pub fn vars<S: AsRef<str>>(names: &[S]) -> Self {
        Criterion {
            variables: names.iter().map(|s| s.as_ref().to_string()).collect(),
            point: None,
        }
    }

    pub fn at_point(mut self, point: u32) -> Self {
        self.point = Some(point);
        self
    }
}

/// A computed slice: which points survive and what the criterion grew to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slice {
    pub kept: BTreeSet<u32>,
    pub final_criterion: BTreeSet<String>,
    pub rounds: usize,
}

/// Reduction delivered by a slice, as a percentage of dropped points.
pub fn reduction_percent(kept: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    100.0 * (1.0 - kept as f64 / total as f64)
}

/// Variables a criterion can name: nullary constants of the semantics'
/// variable sort occurring in the program.
pub fn program_variables(m: &SemanticsModule, program: &Term) -> BTreeSet<String> {
    object_vars(m, program)
}

/// Object-program variables in a term: nullary constants of the
/// semantics' variable sort.
fn object_vars(m: &SemanticsModule, t: &Term) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let Some(var_sort) = m.meta.variable_sort else {
        return out;
    };
    for (_, sub) in term::preorder_subterms(&m.sig, t, None) {
        if let Term::App(op, args) = sub.unmarked() {
            let d = m.sig.op(*op);
            if args.is_empty() && m.sig.is_subsort(d.coarity, var_sort) {
                out.insert(d.name.clone());
            }
        }
    }
    out
}

/// Instruction operators whose rules destructure configuration state
/// outside the program slot, split by what that state is. Structure of a
/// context-update sort (a call stack) makes the instruction part of the
/// control skeleton; anything else (an input or output buffer) makes it
/// position-sensitive data.
fn aux_state_ops(m: &SemanticsModule) -> (BTreeSet<OpId>, BTreeSet<OpId>) {
    let cu_sorts = policies::context_update_sorts(m);
    let mut ctx = BTreeSet::new();
    let mut io = BTreeSet::new();
    for root in m.root_rules() {
        let apps = hypertree::instruction_apps(m, &root.lhs);
        if apps.is_empty() {
            continue;
        }
        let outside = structure_outside(m, &root.lhs, &apps);
        if outside.is_empty() {
            continue;
        }
        let is_ctx = outside.iter().any(|t| {
            let sort = term::least_sort(&m.sig, t);
            cu_sorts.iter().any(|&cu| m.sig.comparable(sort, cu))
        });
        for app in apps {
            if let Term::App(op, _) = app.unmarked() {
                if is_ctx {
                    ctx.insert(*op);
                } else {
                    io.insert(*op);
                }
            }
        }
    }
    (ctx, io)
}

/// Topmost non-variable applications in `lhs` outside the listed
/// instruction subterms and outside sequencing glue.
fn structure_outside<'a>(
    m: &SemanticsModule,
    lhs: &'a Term,
    apps: &[&Term],
) -> Vec<&'a Term> {
    fn go<'a>(
        m: &SemanticsModule,
        t: &'a Term,
        apps: &[&Term],
        at_root: bool,
        out: &mut Vec<&'a Term>,
    ) {
        let t = t.unmarked();
        if apps.iter().any(|a| std::ptr::eq(a.unmarked(), t)) {
            return;
        }
        match t {
            Term::Var(_) => {}
            Term::App(op, args) => {
                if !(at_root || m.meta.sequencing_ops.contains(op)) {
                    out.push(t);
                    return;
                }
                for a in args {
                    go(m, a, apps, false, out);
                }
            }
            Term::Marked(..) => unreachable!("patterns carry no marks"),
        }
    }
    let mut out = Vec::new();
    go(m, lhs, apps, true, &mut out);
    out
}

/// Instruction operators that abandon the rest of the program: some rule
/// binds a program-sorted variable outside the instruction and never
/// mentions it again on the right.
fn terminal_ops(m: &SemanticsModule) -> BTreeSet<OpId> {
    let mut out = BTreeSet::new();
    let Some(prog_sort) = program_sort(m) else {
        return out;
    };
    for root in m.root_rules() {
        let apps = hypertree::instruction_apps(m, &root.lhs);
        if apps.is_empty() {
            continue;
        }
        let inside: BTreeSet<_> = apps.iter().flat_map(|a| a.vars()).collect();
        let rhs_vars = root.rhs.vars();
        let drops_program = root.lhs.vars().iter().any(|v| {
            v.sort == prog_sort && !inside.contains(v) && !rhs_vars.contains(v)
        });
        if drops_program {
            for app in apps {
                if let Term::App(op, _) = app.unmarked() {
                    out.insert(*op);
                }
            }
        }
    }
    out
}

/// The sort of the configuration template's program slot.
fn program_sort(m: &SemanticsModule) -> Option<SortId> {
    let tpl = m.meta.config_template.as_ref()?;
    for v in tpl.vars() {
        if v.name == "$PROGRAM" {
            return Some(v.sort);
        }
    }
    None
}

/// Loop constructs unfold into themselves: some rule for the operator has
/// the operator again on the right-hand side.
fn loop_ops(m: &SemanticsModule) -> BTreeSet<OpId> {
    let mut out = BTreeSet::new();
    for root in m.root_rules() {
        for app in hypertree::instruction_apps(m, &root.lhs) {
            let Term::App(op, _) = app.unmarked() else {
                continue;
            };
            let recurs = term::preorder_subterms(&m.sig, &root.rhs, None)
                .iter()
                .any(|(_, sub)| sub.head() == Some(*op));
            if recurs {
                out.insert(*op);
            }
        }
    }
    out
}

/// Everything `slice` precomputes about one program.
struct Walk<'m> {
    m: &'m SemanticsModule,
    points: Vec<Term>,
    heads: Vec<OpId>,
    /// Exclusive end of each point's structural subtree in point ids.
    ends: Vec<usize>,
    owner: Vec<Option<usize>>,
    decls: Vec<usize>,
    /// Point ids per function span, in order.
    body: Vec<Vec<u32>>,
    /// Formal parameter names per declaration.
    formals: Vec<BTreeSet<String>>,
    /// Resolved callee span per call point.
    target: BTreeMap<u32, usize>,
    /// Walk-reachable points, in order.
    reach: Vec<u32>,
    o_g: BTreeSet<OpId>,
    ctx_aux: BTreeSet<OpId>,
    io_aux: BTreeSet<OpId>,
    terminal: BTreeSet<OpId>,
}

impl<'m> Walk<'m> {
    fn fact<'f>(
        &self,
        facts: &'f BTreeMap<OpId, SideEffectFact>,
        id: u32,
    ) -> Option<&'f SideEffectFact> {
        facts.get(&self.heads[id as usize])
    }

    /// Names in the listed argument positions of a point.
    fn arg_vars(&self, id: u32, positions: &BTreeSet<usize>) -> BTreeSet<String> {
        let Term::App(_, args) = self.points[id as usize].unmarked() else {
            return BTreeSet::new();
        };
        let mut out = BTreeSet::new();
        for &i in positions {
            if let Some(a) = args.get(i) {
                out.extend(object_vars(self.m, a));
            }
        }
        out
    }

    /// Span is alive once its declaration point has been kept; the
    /// top-level span is always alive.
    fn span_alive(&self, owner: Option<usize>, kept: &BTreeSet<u32>) -> bool {
        match owner {
            None => true,
            Some(k) => kept.contains(&(self.decls[k] as u32)),
        }
    }
}

fn build_walk<'m>(
    m: &'m SemanticsModule,
    program: &Term,
    crit: &Criterion,
    part: &ContextUpdatePartition,
) -> Result<Walk<'m>, SliceError> {
    if crit.variables.is_empty() {
        return Err(SliceError::EmptyCriterion);
    }
    let points = engine::program_points(m, program);
    let n = points.len();
    if let Some(p) = crit.point {
        if p as usize >= n {
            return Err(SliceError::UnknownPoint(p, n));
        }
    }
    let heads: Vec<OpId> = points
        .iter()
        .map(|p| p.head().expect("instruction points are applications"))
        .collect();
    let ends: Vec<usize> = (0..n)
        .map(|i| i + engine::program_points(m, &points[i]).len())
        .collect();
    let spans = refine::function_spans(m, program);
    let mut body: Vec<Vec<u32>> = vec![Vec::new(); spans.decls.len()];
    for (i, o) in spans.owner.iter().enumerate() {
        if let Some(k) = o {
            body[*k].push(i as u32);
        }
    }

    let mut o_f = part.function_ops.clone();
    o_f.extend(part.conflicting.iter().copied());
    let o_g = part.goto_ops.clone();

    // Formals: names in the declaration outside its instruction-sorted
    // arguments. Those are parameter binders, not reads.
    let instr_sort = m.meta.instruction_sort;
    let formals: Vec<BTreeSet<String>> = spans
        .decls
        .iter()
        .map(|&d| {
            let Term::App(op, args) = points[d].unmarked() else {
                return BTreeSet::new();
            };
            let decl = m.sig.op(*op);
            let mut names = BTreeSet::new();
            for (i, a) in args.iter().enumerate() {
                let is_code = instr_sort
                    .map(|s| m.sig.comparable(decl.args[i], s))
                    .unwrap_or(false);
                if !is_code {
                    names.extend(object_vars(m, a));
                }
            }
            names
        })
        .collect();

    // Resolve each call's target declaration through the function-name
    // sort: the call argument of that sort must reappear in a declaration.
    let fname_sort = m
        .meta
        .function_decl_ops
        .first()
        .and_then(|&op| m.sig.op(op).args.first().copied());
    let mut target = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        if !o_f.contains(&heads[i]) {
            continue;
        }
        let Term::App(op, args) = p.unmarked() else {
            continue;
        };
        let mut resolved = None;
        if let Some(fs) = fname_sort {
            let d = m.sig.op(*op);
            for (j, a) in args.iter().enumerate() {
                if !m.sig.comparable(d.args[j], fs) {
                    continue;
                }
                resolved = spans.decls.iter().position(|&dp| {
                    let Term::App(_, dargs) = points[dp].unmarked() else {
                        return false;
                    };
                    dargs.first().map(|fa| term::equal_unmarked(fa, a)).unwrap_or(false)
                });
                if resolved.is_some() {
                    break;
                }
            }
        }
        match resolved {
            Some(k) => {
                target.insert(i as u32, k);
            }
            None if part.function_ops.contains(&heads[i]) => {
                return Err(SliceError::UnresolvedTarget(print_term(m, p)));
            }
            // A conflicting construct without a resolvable callee is
            // treated as an opaque instruction, not an error.
            None => {}
        }
    }

    // Point eligibility: everything at or before the criterion point,
    // everything in other spans (reached only by call redirection), and
    // everything sharing a loop with the point.
    let loops = loop_ops(m);
    let eligible: Vec<bool> = match crit.point {
        None => vec![true; n],
        Some(p) => {
            let p = p as usize;
            let shared_loop: Vec<bool> = (0..n)
                .map(|i| {
                    (0..n).any(|c| {
                        loops.contains(&heads[c]) && c < i.min(p) + 1 && ends[c] > i.max(p)
                    })
                })
                .collect();
            (0..n)
                .map(|i| i <= p || spans.owner[i] != spans.owner[p] || shared_loop[i])
                .collect()
        }
    };

    // Reachability: the top-level span, plus every span a reachable call
    // redirects into, to a fixpoint.
    let mut in_spans: BTreeSet<Option<usize>> = BTreeSet::from([None]);
    loop {
        let mut grew = false;
        for (i, _) in points.iter().enumerate() {
            if !eligible[i] || !in_spans.contains(&spans.owner[i]) {
                continue;
            }
            if let Some(&k) = target.get(&(i as u32)) {
                grew |= in_spans.insert(Some(k));
            }
        }
        if !grew {
            break;
        }
    }
    let reach: Vec<u32> = (0..n)
        .filter(|&i| eligible[i] && in_spans.contains(&spans.owner[i]))
        .map(|i| i as u32)
        .collect();

    let (ctx_aux, io_aux) = aux_state_ops(m);
    Ok(Walk {
        m,
        points,
        heads,
        ends,
        owner: spans.owner,
        decls: spans.decls,
        body,
        formals,
        target,
        reach,
        o_g,
        ctx_aux,
        io_aux,
        terminal: terminal_ops(m),
    })
}

/// Compute the backward slice of `program` for `crit`, consuming the
/// side-effect facts and the refined context-update partition.
pub fn slice(
    m: &SemanticsModule,
    program: &Term,
    crit: &Criterion,
    facts: &BTreeMap<OpId, SideEffectFact>,
    part: &ContextUpdatePartition,
) -> Result<Slice, SliceError> {
    let w = build_walk(m, program, crit, part)?;
    let mut s: BTreeSet<String> = crit.variables.clone();
    let mut kept: BTreeSet<u32> = BTreeSet::new();
    let mut rounds = 0usize;

    loop {
        rounds += 1;
        let before = (s.len(), kept.len());

        for &id in &w.reach {
            let op = w.heads[id as usize];
            if let Some(&k) = w.target.get(&id) {
                // Call: kept when the callee body already matters or a
                // formal name is demanded; actuals then feed the set.
                let body_live = w.body[k].iter().any(|b| kept.contains(b));
                if body_live || !w.formals[k].is_disjoint(&s) {
                    kept.insert(id);
                    kept.insert(w.decls[k] as u32);
                    if let Some(f) = w.fact(facts, id) {
                        s.extend(w.arg_vars(id, &f.src));
                    }
                }
            } else if w.o_g.contains(&op) {
                // Jump: part of the control skeleton of any span that
                // matters; its sources steer control, so they count.
                if w.span_alive(w.owner[id as usize], &kept) {
                    kept.insert(id);
                    if let Some(f) = w.fact(facts, id) {
                        s.extend(w.arg_vars(id, &f.src));
                    }
                    keep_jump_anchors(&w, id, &mut kept);
                }
            } else if w.terminal.contains(&op) {
                if w.span_alive(w.owner[id as usize], &kept) {
                    kept.insert(id);
                }
            } else if w.fact(facts, id).is_some_and(|f| f.dest_unresolved) {
                // Writes we cannot attribute: keep once the span runs.
                if w.span_alive(w.owner[id as usize], &kept) {
                    kept.insert(id);
                    let f = w.fact(facts, id).expect("fact checked");
                    s.extend(w.arg_vars(id, &f.src));
                }
            } else if w.fact(facts, id).is_some_and(|f| !f.dest.is_empty()) {
                let f = w.fact(facts, id).expect("fact checked");
                if !w.arg_vars(id, &f.dest).is_disjoint(&s) {
                    kept.insert(id);
                    s.extend(w.arg_vars(id, &f.src));
                }
            } else if w.ctx_aux.contains(&op) {
                // Context-stack instructions (returns) run whenever their
                // span does.
                if w.span_alive(w.owner[id as usize], &kept) {
                    kept.insert(id);
                }
            }
        }

        // Buffer alignment: an instruction that both touches buffer state
        // and writes the store (a read) is position-sensitive, so one
        // kept member keeps the whole family.
        let io_writer = |id: &u32| {
            w.io_aux.contains(&w.heads[*id as usize])
                && w.fact(facts, *id).map(|f| !f.dest.is_empty()).unwrap_or(false)
        };
        if w.reach.iter().any(|id| kept.contains(id) && io_writer(id)) {
            for &id in &w.reach {
                if w.io_aux.contains(&w.heads[id as usize]) {
                    kept.insert(id);
                }
            }
        }

        // Control closure: a container with a kept descendant is kept and
        // its guard variables join the set. Declarations are containers
        // too, but their parameter lists are binders, not guards.
        for &id in &w.reach {
            let i = id as usize;
            if w.ends[i] <= i + 1 || kept.contains(&id) {
                continue;
            }
            let inner_kept = (i + 1..w.ends[i]).any(|d| kept.contains(&(d as u32)));
            if !inner_kept {
                continue;
            }
            kept.insert(id);
            if !m.meta.function_decl_ops.contains(&w.heads[i]) {
                s.extend(guard_vars(&w, id, facts));
            }
        }

        if (s.len(), kept.len()) == before {
            break;
        }
    }

    Ok(Slice { kept, final_criterion: s, rounds })
}

/// Keep the in-span instructions a jump lands on: non-jump points with an
/// argument equal to one of the jump's non-variable-sorted arguments.
fn keep_jump_anchors(w: &Walk, id: u32, kept: &mut BTreeSet<u32>) {
    let Term::App(op, args) = w.points[id as usize].unmarked() else {
        return;
    };
    let d = w.m.sig.op(*op);
    let var_sort = w.m.meta.variable_sort;
    for (i, a) in args.iter().enumerate() {
        let is_var =
            var_sort.map(|vs| w.m.sig.comparable(d.args[i], vs)).unwrap_or(false);
        if is_var || engine::numeral_value(w.m, a).is_some() {
            continue;
        }
        for &cand in &w.reach {
            if w.owner[cand as usize] != w.owner[id as usize]
                || w.o_g.contains(&w.heads[cand as usize])
            {
                continue;
            }
            let Term::App(_, cargs) = w.points[cand as usize].unmarked() else {
                continue;
            };
            if cargs.iter().any(|c| term::equal_unmarked(c, a)) {
                kept.insert(cand);
            }
        }
    }
}

/// Variables a container's guard reads: the source argument positions of
/// its side-effect fact when known, otherwise every non-instruction
/// argument.
fn guard_vars(
    w: &Walk,
    id: u32,
    facts: &BTreeMap<OpId, SideEffectFact>,
) -> BTreeSet<String> {
    if let Some(f) = w.fact(facts, id) {
        if !f.src.is_empty() {
            return w.arg_vars(id, &f.src);
        }
    }
    let Term::App(op, args) = w.points[id as usize].unmarked() else {
        return BTreeSet::new();
    };
    let d = w.m.sig.op(*op);
    let mut out = BTreeSet::new();
    for (i, a) in args.iter().enumerate() {
        let is_code = w
            .m
            .meta
            .instruction_sort
            .map(|s| w.m.sig.comparable(d.args[i], s))
            .unwrap_or(false);
        if !is_code {
            out.extend(object_vars(w.m, a));
        }
    }
    out
}

/// Rebuild the program keeping only the listed points. Emptied statement
/// slots become the semantics' neutral instruction.
pub fn reconstruct(
    m: &SemanticsModule,
    program: &Term,
    kept: &BTreeSet<u32>,
) -> Result<Term, SliceError> {
    let mut next = 0u32;
    let rebuilt = rebuild_slot(m, program, kept, &mut next)?;
    let t = match rebuilt {
        Some(t) => t,
        None => noop_term(m)?,
    };
    Ok(term::normalize(&m.sig, &t))
}

fn noop_term(m: &SemanticsModule) -> Result<Term, SliceError> {
    m.meta
        .noop
        .map(|op| Term::App(op, vec![]))
        .ok_or(SliceError::NoNeutralInstruction)
}

/// Rebuild one argument slot, advancing the point counter in the same
/// container-first order the instrumenter uses. `None` means the slot
/// held a single dropped instruction.
fn rebuild_slot(
    m: &SemanticsModule,
    t: &Term,
    kept: &BTreeSet<u32>,
    next: &mut u32,
) -> Result<Option<Term>, SliceError> {
    match t.unmarked() {
        Term::Var(v) => Ok(Some(Term::Var(v.clone()))),
        Term::App(op, args) => {
            let is_point =
                engine::is_instruction_op(m, *op) && !m.meta.sequencing_ops.contains(op);
            if is_point {
                let id = *next;
                *next += 1;
                let mut new_args = Vec::with_capacity(args.len());
                for a in args {
                    let slot = rebuild_slot(m, a, kept, next)?;
                    new_args.push(match slot {
                        Some(t) => t,
                        None => noop_term(m)?,
                    });
                }
                if kept.contains(&id) {
                    Ok(Some(Term::App(*op, new_args)))
                } else {
                    Ok(None)
                }
            } else if m.meta.sequencing_ops.contains(op) {
                let mut survivors = Vec::new();
                for a in args {
                    if let Some(t) = rebuild_slot(m, a, kept, next)? {
                        survivors.push(t);
                    }
                }
                match survivors.len() {
                    0 => Ok(None),
                    1 => Ok(Some(survivors.pop().expect("one survivor"))),
                    _ => Ok(Some(Term::App(*op, survivors))),
                }
            } else {
                let mut new_args = Vec::with_capacity(args.len());
                for a in args {
                    let slot = rebuild_slot(m, a, kept, next)?;
                    new_args.push(match slot {
                        Some(t) => t,
                        None => noop_term(m)?,
                    });
                }
                Ok(Some(Term::App(*op, new_args)))
            }
        }
        Term::Marked(..) => unreachable!("unmarked() strips marks"),
    }
}

/// Observed criterion values after running `program` on `inputs`.
fn observations(
    m: &SemanticsModule,
    program: &Term,
    crit: &Criterion,
    inputs: &[Vec<u64>],
    max_steps: u64,
) -> Result<(Vec<Vec<Term>>, u64), SliceError> {
    let mut all = Vec::with_capacity(inputs.len());
    let mut steps = 0;
    for input in inputs {
        let trace = engine::run_program(m, program, input, max_steps)?;
        steps = steps.max(trace.steps);
        let mut row = Vec::new();
        for v in &crit.variables {
            row.push(engine::observe(m, &trace.final_term, v)?);
        }
        all.push(row);
    }
    Ok((all, steps))
}

/// Greedy statement-deletion slicing in the style of delta debugging:
/// first try to drop large contiguous windows of points, then single
/// subtrees in reverse order, and repeat until no deletion survives the
/// check. A deletion is kept only if every input still observes the
/// original criterion values. Coarse windows come first so that a dead
/// region falls out whole; removing it piecemeal can leave behind a
/// stray end marker that later deletions must route through.
pub fn dynamic_slice_oracle(
    m: &SemanticsModule,
    program: &Term,
    crit: &Criterion,
    inputs: &[Vec<u64>],
    max_steps: u64,
) -> Result<BTreeSet<u32>, SliceError> {
    if crit.variables.is_empty() {
        return Err(SliceError::EmptyCriterion);
    }
    if crit.point.is_some() {
        return Err(SliceError::OracleInapplicable(
            "the deletion oracle only observes end-of-program criteria".into(),
        ));
    }
    let points = engine::program_points(m, program);
    let n = points.len();
    let ends: Vec<usize> =
        (0..n).map(|i| i + engine::program_points(m, &points[i]).len()).collect();

    // Baseline: the original must complete on every input.
    for input in inputs {
        let trace = engine::run_program(m, program, input, max_steps)?;
        if trace.status != RunStatus::Completed {
            return Err(SliceError::OracleInapplicable(format!(
                "original run ended {:?} after {} steps",
                trace.status, trace.steps
            )));
        }
    }
    let (baseline, base_steps) = observations(m, program, crit, inputs, max_steps)?;
    // Deletions that break the program tend to run away; a small multiple
    // of the original step count unmasks them quickly.
    let probe_steps = (base_steps * 4 + 64).min(max_steps);

    let mut kept: BTreeSet<u32> = (0..n as u32).collect();
    let accept = |kept: &mut BTreeSet<u32>, ids: &[u32]| -> Result<bool, SliceError> {
        let mut cand = kept.clone();
        for &id in ids {
            // Dropping a container drops its descendants with it; keep
            // the point set honest about that.
            for d in id..ends[id as usize] as u32 {
                cand.remove(&d);
            }
        }
        if cand.len() == kept.len() {
            return Ok(false);
        }
        let reduced = reconstruct(m, program, &cand)?;
        let (obs, _) = observations(m, &reduced, crit, inputs, probe_steps)?;
        if obs == baseline {
            *kept = cand;
            return Ok(true);
        }
        Ok(false)
    };
    loop {
        let before = kept.len();
        let mut w = usize::max(n, 2).next_power_of_two();
        while w >= 2 {
            for start in (0..n).step_by(w).rev() {
                let window: Vec<u32> = kept
                    .range(start as u32..(start + w).min(n) as u32)
                    .copied()
                    .collect();
                accept(&mut kept, &window)?;
            }
            w /= 2;
        }
        for id in (0..n as u32).rev() {
            if kept.contains(&id) {
                accept(&mut kept, &[id])?;
            }
        }
        if kept.len() == before {
            return Ok(kept);
        }
    }
}

/// True if executing the sliced program preserves the criterion values of
/// the original on every given input.
pub fn criterion_preserved(
    m: &SemanticsModule,
    program: &Term,
    sliced: &Term,
    crit: &Criterion,
    inputs: &[Vec<u64>],
    max_steps: u64,
) -> Result<bool, SliceError> {
    let (orig, _) = observations(m, program, crit, inputs, max_steps)?;
    let (cut, _) = observations(m, sliced, crit, inputs, max_steps)?;
    Ok(orig == cut)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets::load_builtin_strict;
    use crate::hypertree::synthesize;
    use crate::refine;
    use crate::syntax::parse_term;

    struct Lab {
        m: SemanticsModule,
        facts: BTreeMap<OpId, SideEffectFact>,
        part: ContextUpdatePartition,
    }

    /// The analyses are pure functions of the semantics; compute them
    /// once per asset and share across tests.
    fn lab(name: &str) -> &'static Lab {
        use std::sync::OnceLock;
        static WF: OnceLock<Lab> = OnceLock::new();
        static MIPS: OnceLock<Lab> = OnceLock::new();
        let cell = if name == "whilefun" { &WF } else { &MIPS };
        cell.get_or_init(|| {
            let m = load_builtin_strict(name);
            let synth = synthesize(&m);
            let outcome = refine::refine(&m, 1, 12, engine::default_step_budget())
                .expect("refinement runs");
            Lab { m, facts: synth.side_effects, part: outcome.partition }
        })
    }

    fn slice_of(lab: &Lab, src: &str, vars: &[&str]) -> Slice {
        let program = parse_term(&lab.m, src).expect("program parses");
        slice(&lab.m, &program, &Criterion::vars(vars), &lab.facts, &lab.part)
            .expect("slice computes")
    }

    fn kept_ids(s: &Slice) -> Vec<u32> {
        s.kept.iter().copied().collect()
    }

    #[test]
    fn three_line_example_drops_the_independent_assignment() {
        let lab = lab("whilefun");
        let s = slice_of(&lab, "x := 1 ; y := 2 ; z := x", &["z"]);
        assert_eq!(kept_ids(&s), vec![0, 2]);
        let red = reduction_percent(s.kept.len(), 3);
        assert!((red - 33.3).abs() < 0.1, "red was {red}");
    }

    #[test]
    fn call_through_global_keeps_the_whole_chain() {
        let lab = lab("whilefun");
        let s = slice_of(
            &lab,
            "fn f () { a := g } ; g := 1 ; Call f () ; out := a",
            &["out"],
        );
        // Declaration, body, the global it reads, the call, the criterion.
        assert_eq!(kept_ids(&s), vec![0, 1, 2, 3, 4]);
        assert!(s.final_criterion.contains("a"));
        assert!(s.final_criterion.contains("g"));
    }

    #[test]
    fn saturation_keeps_every_reachable_side_effect() {
        let lab = lab("whilefun");
        let every = ["a", "b", "g", "out", "x", "y", "z"];
        let s = slice_of(&lab, "x := 1 ; y := x + 1 ; z := y - 1 ; out := z", &every);
        assert_eq!(kept_ids(&s), vec![0, 1, 2, 3]);
    }

    #[test]
    fn uncalled_function_is_dropped_even_under_saturation() {
        let lab = lab("whilefun");
        let every = ["a", "b", "g", "out", "x", "y", "z"];
        let s = slice_of(&lab, "fn f () { x := 1 } ; x := 2 ; out := x", &every);
        assert_eq!(kept_ids(&s), vec![2, 3]);
    }

    #[test]
    fn unassigned_criterion_keeps_nothing() {
        let lab = lab("whilefun");
        let s = slice_of(&lab, "x := 1 ; y := 2 ; z := 3", &["out"]);
        assert!(s.kept.is_empty());
        assert_eq!(s.rounds, 1);
    }

    #[test]
    fn guarded_assignment_keeps_the_conditional_and_its_guard_chain() {
        let lab = lab("whilefun");
        let s = slice_of(
            &lab,
            "x := 1 ; if x lt 2 then y := 3 else skip fi ; out := y",
            &["out"],
        );
        // x := 1 (guard feed), if, y := 3, out := y. The skip arm drops.
        let names: Vec<String> = s
            .kept
            .iter()
            .map(|&id| {
                let program =
                    parse_term(&lab.m, "x := 1 ; if x lt 2 then y := 3 else skip fi ; out := y")
                        .unwrap();
                print_term(&lab.m, &engine::program_points(&lab.m, &program)[id as usize])
            })
            .collect();
        assert!(names.iter().any(|t| t.starts_with("if")), "kept {names:?}");
        assert!(s.final_criterion.contains("x"));
        assert!(!names.iter().any(|t| t == "skip"), "kept {names:?}");
    }

    #[test]
    fn irrelevant_conditional_is_dropped() {
        let lab = lab("whilefun");
        let s = slice_of(
            &lab,
            "x := 1 ; if x lt 2 then y := 3 else skip fi ; z := 5 ; out := z",
            &["out"],
        );
        assert_eq!(kept_ids(&s), vec![4, 5]);
    }

    #[test]
    fn loop_counter_survives_with_the_loop() {
        let lab = lab("whilefun");
        let src = "w := 0 ; x := 0 ; while w lt 3 do x := x + 1 ; w ++ od ; out := x";
        let s = slice_of(&lab, src, &["out"]);
        // Everything matters: the counter drives the loop that feeds x.
        assert_eq!(kept_ids(&s), vec![0, 1, 2, 3, 4, 5]);
        assert!(s.final_criterion.contains("w"));
    }

    #[test]
    fn parameter_flow_keeps_the_actuals_chain() {
        let lab = lab("whilefun");
        let s = slice_of(
            &lab,
            "fn f (a) { x := a } ; y := 2 ; Call f (y + 3) ; out := x",
            &["out"],
        );
        assert_eq!(kept_ids(&s), vec![0, 1, 2, 3, 4]);
        assert!(s.final_criterion.contains("y"), "actuals join the set");
    }

    #[test]
    fn kept_read_keeps_every_read_for_buffer_alignment() {
        let lab = lab("whilefun");
        let s = slice_of(&lab, "read x ; read y ; z := 1 ; out := y", &["out"]);
        assert_eq!(kept_ids(&s), vec![0, 1, 3]);
    }

    #[test]
    fn writes_drop_when_no_read_is_kept() {
        let lab = lab("whilefun");
        let s = slice_of(&lab, "x := 1 ; write x ; out := x", &["out"]);
        assert_eq!(kept_ids(&s), vec![0, 2]);
    }

    #[test]
    fn unresolvable_call_is_an_error() {
        let lab = lab("whilefun");
        let program = parse_term(&lab.m, "Call f0 () ; out := x").unwrap();
        let err = slice(&lab.m, &program, &Criterion::vars(&["out"]), &lab.facts, &lab.part)
            .unwrap_err();
        assert!(matches!(err, SliceError::UnresolvedTarget(_)), "{err}");
    }

    #[test]
    fn criterion_point_cuts_later_instructions() {
        let lab = lab("whilefun");
        let program = parse_term(&lab.m, "x := 1 ; y := x ; x := 9 ; z := x").unwrap();
        let crit = Criterion::vars(&["y"]).at_point(1);
        let s = slice(&lab.m, &program, &crit, &lab.facts, &lab.part).unwrap();
        assert_eq!(kept_ids(&s), vec![0, 1], "the later x := 9 must not matter");
    }

    #[test]
    fn criterion_is_monotone() {
        let lab = lab("whilefun");
        let src = "x := 1 ; y := x + 1 ; z := 4 ; g := z ; out := y";
        let small = slice_of(&lab, src, &["out"]);
        let large = slice_of(&lab, src, &["out", "g"]);
        assert!(small.kept.is_subset(&large.kept));
        assert!(small.final_criterion.is_subset(&large.final_criterion));
    }

    #[test]
    fn reconstruction_parses_prints_and_preserves() {
        let lab = lab("whilefun");
        let src = "x := 1 ; if x lt 2 then y := 3 else skip fi ; w := 9 ; out := y";
        let program = parse_term(&lab.m, src).unwrap();
        let crit = Criterion::vars(&["out"]);
        let s = slice(&lab.m, &program, &crit, &lab.facts, &lab.part).unwrap();
        let cut = reconstruct(&lab.m, &program, &s.kept).unwrap();
        let printed = print_term(&lab.m, &cut);
        let reparsed = parse_term(&lab.m, &printed).expect("slice parses");
        assert_eq!(reparsed, cut, "printed slice round-trips");
        assert!(!printed.contains("w := 9"), "dropped statement stays out: {printed}");
        let ok = criterion_preserved(&lab.m, &program, &cut, &crit, &[vec![]], 10_000).unwrap();
        assert!(ok, "slice {printed} must preserve out");
    }

    #[test]
    fn mips_irrelevant_arithmetic_drops() {
        let lab = lab("mips-mini");
        let s = slice_of(
            &lab,
            "li r1, 1 ; li r2, 9 ; add r3, r1, r1 ; halt",
            &["r3"],
        );
        assert_eq!(kept_ids(&s), vec![0, 2, 3], "li r2 is dead, halt stays");
        let red = reduction_percent(s.kept.len(), 4);
        assert!((red - 25.0).abs() < 0.1);
    }

    #[test]
    fn mips_branch_skeleton_survives() {
        let lab = lab("mips-mini");
        let src = "li r1, 1 ; li r2, 1 ; li r5, 8 ; beq r1, r2, l0, l1 ; nop ; \
                   label l0 : ; li r3, 5 ; j l2 ; nop ; label l1 : ; li r3, 6 ; label l2 : ; halt";
        let s = slice_of(&lab, src, &["r3"]);
        let points = {
            let program = parse_term(&lab.m, src).unwrap();
            engine::program_points(&lab.m, &program)
        };
        let kept_srcs: Vec<String> =
            s.kept.iter().map(|&id| print_term(&lab.m, &points[id as usize])).collect();
        assert!(kept_srcs.iter().any(|t| t.starts_with("beq")));
        assert!(kept_srcs.iter().filter(|t| t.starts_with("label")).count() >= 3);
        assert!(!kept_srcs.iter().any(|t| t == &"li r5, 8".to_string()), "{kept_srcs:?}");
        assert!(!kept_srcs.iter().any(|t| t == &"nop".to_string()), "{kept_srcs:?}");
        assert!(s.final_criterion.contains("r1") && s.final_criterion.contains("r2"));
    }

    #[test]
    fn mips_uncalled_function_drops_whole_span() {
        let lab = lab("mips-mini");
        let src = "jal f0 ; jal f1 ; halt ; \
                   func f0 : ; li r1, 7 ; endf ; func f1 : ; li r2, 9 ; endf";
        let s = slice_of(&lab, src, &["r1"]);
        assert_eq!(kept_ids(&s), vec![0, 2, 3, 4, 5], "f1 and its jal drop");
    }

    #[test]
    fn mips_slice_runs_like_the_original() {
        let lab = lab("mips-mini");
        let src = "li r1, 3 ; li r5, 9 ; jal f0 ; move r4, r6 ; halt ; \
                   func f0 : ; add r6, r1, r1 ; endf";
        let program = parse_term(&lab.m, src).unwrap();
        let crit = Criterion::vars(&["r4"]);
        let s = slice(&lab.m, &program, &crit, &lab.facts, &lab.part).unwrap();
        let cut = reconstruct(&lab.m, &program, &s.kept).unwrap();
        let printed = print_term(&lab.m, &cut);
        assert!(!printed.contains("li r5"), "dead load dropped: {printed}");
        let ok =
            criterion_preserved(&lab.m, &program, &cut, &crit, &[vec![0, 0, 0]], 10_000).unwrap();
        assert!(ok, "sliced program {printed} preserves r4");
    }

    #[test]
    fn oracle_matches_hand_slice_on_the_three_line_example() {
        let lab = lab("whilefun");
        let program = parse_term(&lab.m, "x := 1 ; y := 2 ; z := x").unwrap();
        let kept = dynamic_slice_oracle(
            &lab.m,
            &program,
            &Criterion::vars(&["z"]),
            &[vec![]],
            10_000,
        )
        .unwrap();
        assert_eq!(kept, BTreeSet::from([0, 2]));
    }

    #[test]
    fn oracle_returns_empty_for_an_unassigned_criterion() {
        let lab = lab("whilefun");
        let program = parse_term(&lab.m, "x := 1 ; y := 2").unwrap();
        let kept =
            dynamic_slice_oracle(&lab.m, &program, &Criterion::vars(&["out"]), &[vec![]], 10_000)
                .unwrap();
        assert!(kept.is_empty());
    }

    #[test]
    fn oracle_rejects_a_diverging_baseline() {
        let lab = lab("whilefun");
        let program = parse_term(&lab.m, "x := 1 ; while 0 lt 1 do x ++ od").unwrap();
        let err =
            dynamic_slice_oracle(&lab.m, &program, &Criterion::vars(&["x"]), &[vec![]], 400)
                .unwrap_err();
        assert!(matches!(err, SliceError::OracleInapplicable(_)), "{err}");
    }

    #[test]
    fn oracle_is_contained_in_the_static_slice() {
        let lab = lab("whilefun");
        for (src, vars, inputs) in [
            ("x := 1 ; y := 2 ; z := x", vec!["z"], vec![vec![]]),
            (
                "fn f () { a := g } ; g := 1 ; Call f () ; out := a",
                vec!["out"],
                vec![vec![]],
            ),
            ("read x ; read y ; out := y", vec!["out"], vec![vec![4, 7], vec![1, 2]]),
        ] {
            let program = parse_term(&lab.m, src).unwrap();
            let crit = Criterion::vars(&vars);
            let s = slice(&lab.m, &program, &crit, &lab.facts, &lab.part).unwrap();
            let oracle =
                dynamic_slice_oracle(&lab.m, &program, &crit, &inputs, 10_000).unwrap();
            assert!(
                oracle.is_subset(&s.kept),
                "{src}: oracle {oracle:?} vs static {:?}",
                s.kept
            );
        }
    }

    #[test]
    fn rounds_stay_within_the_variable_budget() {
        let lab = lab("whilefun");
        let src = "fn f0 () { x := 1 } ; fn f1 () { Call f0 () } ; Call f1 () ; out := x";
        let s = slice_of(&lab, src, &["out"]);
        let program = parse_term(&lab.m, src).unwrap();
        let vars = object_vars(&lab.m, &program).len();
        let decls = lab.m.meta.function_decl_ops.len().max(1) * 2;
        assert!(
            s.rounds <= vars + decls + 2,
            "rounds {} for {} variables",
            s.rounds,
            vars
        );
        assert_eq!(kept_ids(&s), vec![0, 1, 2, 3, 4, 5]);
    }
}
