//! Matching and unification modulo structural axioms (associativity,
//! commutativity, identity), with deterministic, bounded enumeration.
//!
//! Both procedures return complete solution sets up to a fixed cap, in a
//! pinned order: associative block partitions are enumerated smallest-first
//! for the leftmost pattern element, commutative alignments try the declared
//! order first, and multiset assignments walk subject elements left to right.
//! Downstream phases rely on that order; the first solution of
//! `fetch(I ; P, s(N))` against a flattened program must bind `I` to the
//! first element, or list-walking equations would stop making progress.
//!
//! Subjects may carry instruction marks. Pattern structure peels them: each
//! mark the pattern walks through is recorded, in peel order, and the first
//! peel is what the engine later reports as the instruction of an event.
//! Variables capture marked subterms unchanged, so marks flow through rule
//! right-hand sides into the next configuration.

use crate::sig::{OpId, Signature};
use crate::term::{apply, apply_norm, least_sort, normalize, Subst, Term, Var};
use std::collections::BTreeSet;

/// Hard cap on enumerated solutions per query. Queries that hit the cap set
/// the `truncated` flag so callers can surface a diagnostic.
pub const ENUM_CAP: usize = 64;

/// One matching solution: the substitution plus the marks peeled by pattern
/// structure, in the order the match walked through them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchOutcome {
    pub subst: Subst,
    pub peels: Vec<u32>,
}

/// All solutions of a matching or unification query.
#[derive(Clone, Debug, Default)]
pub struct SolutionSet {
    pub outcomes: Vec<MatchOutcome>,
    pub truncated: bool,
}

impl SolutionSet {
    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn first(&self) -> Option<&MatchOutcome> {
        self.outcomes.first()
    }
}

#[derive(Clone, Debug)]
struct State {
    subst: Subst,
    peels: Vec<u32>,
}

struct Ctx<'a> {
    sig: &'a Signature,
    /// True for unification: variables may appear on the subject side too.
    two_way: bool,
    truncated: bool,
}

impl<'a> Ctx<'a> {
    fn solve(&mut self, pattern: &Term, subject: &Term, st: State, cap: usize) -> Vec<State> {
        let mut out = Vec::new();
        self.step(pattern, subject, st, cap, &mut out);
        out
    }

    fn push(&mut self, out: &mut Vec<State>, st: State, cap: usize) {
        if out.len() < cap {
            out.push(st);
        } else {
            self.truncated = true;
        }
    }

    fn step(&mut self, pattern: &Term, subject: &Term, st: State, cap: usize, out: &mut Vec<State>) {
        if out.len() >= cap {
            self.truncated = true;
            return;
        }
        match (pattern, subject) {
            // Resolve bound variables first so nonlinear patterns and
            // unification chains see current knowledge.
            (Term::Var(v), _) if st.subst.get(v).is_some() => {
                let bound = st.subst.get(v).cloned().expect("checked");
                self.step(&bound, subject, st, cap, out);
            }
            (_, Term::Var(w)) if self.two_way && st.subst.get(w).is_some() => {
                let bound = st.subst.get(w).cloned().expect("checked");
                self.step(pattern, &bound, st, cap, out);
            }
            (Term::Var(v), _) => {
                self.bind(v, subject, st, cap, out);
            }
            (_, Term::Var(w)) if self.two_way => {
                self.bind(w, pattern, st, cap, out);
            }
            (_, Term::Var(_)) => {} // one-way matching against a variable subject: no
            (_, Term::Marked(id, inner)) => {
                let mut st = st;
                st.peels.push(*id);
                self.step(pattern, inner, st, cap, out);
            }
            (Term::Marked(_, inner), _) => {
                // Patterns are normally mark-free; look through defensively.
                self.step(inner, subject, st, cap, out);
            }
            (Term::App(po, pargs), Term::App(so, sargs)) => {
                let pd = self.sig.op(*po);
                let sd = self.sig.op(*so);
                if pd.name == sd.name {
                    if pd.attrs.assoc {
                        self.assoc_align(*po, pargs, sargs, st, cap, out);
                    } else if pd.attrs.comm {
                        self.comm_align(pd.attrs.id_elem, pargs, sargs, st, cap, out);
                    } else if pargs.len() == sargs.len() {
                        self.seq_align(pargs, sargs, st, cap, out);
                    }
                } else if pd.attrs.id_elem.is_some() {
                    // Identity extension: an f-pattern can match a non-f
                    // subject as a one-element list, absent elements taking
                    // the identity.
                    let elems = [subject.clone()];
                    if pd.attrs.assoc {
                        self.assoc_align(*po, pargs, &elems, st, cap, out);
                    } else if pd.attrs.comm {
                        self.comm_align(pd.attrs.id_elem, pargs, &elems, st, cap, out);
                    }
                }
            }
        }
    }

    fn bind(&mut self, v: &Var, t: &Term, mut st: State, cap: usize, out: &mut Vec<State>) {
        let resolved = if self.two_way { apply(&st.subst, t) } else { t.clone() };
        if self.two_way && resolved.contains_var(v) {
            // Occurs check; `X = f(X)` has no finite solution.
            if let Term::Var(w) = &resolved {
                if w == v {
                    self.push(out, st, cap);
                }
            }
            return;
        }
        let t_sort = least_sort(self.sig, &resolved);
        if self.sig.is_subsort(t_sort, v.sort) {
            if st.subst.bind_consistent(v.clone(), resolved) {
                self.push(out, st, cap);
            }
        } else if self.two_way {
            // The other side is a more general variable: bind it instead.
            if let Term::Var(w) = &resolved {
                if self.sig.is_subsort(v.sort, w.sort) {
                    let mut st2 = st.clone();
                    if st2.subst.bind_consistent(w.clone(), Term::Var(v.clone())) {
                        self.push(out, st2, cap);
                    }
                }
            }
        }
    }

    /// Pairwise alignment for free operators.
    fn seq_align(&mut self, ps: &[Term], ss: &[Term], st: State, cap: usize, out: &mut Vec<State>) {
        let mut states = vec![st];
        for (p, s) in ps.iter().zip(ss) {
            let mut next = Vec::new();
            for stt in states {
                next.extend(self.solve(p, s, stt, cap));
            }
            if next.is_empty() {
                return;
            }
            states = next;
        }
        for stt in states {
            self.push(out, stt, cap);
        }
    }

    /// Binary commutative alignment: declared order first, then swapped.
    /// A one-element subject list (identity extension) aligns the element
    /// with either pattern argument and the identity with the other.
    fn comm_align(
        &mut self,
        id_elem: Option<OpId>,
        ps: &[Term],
        ss: &[Term],
        st: State,
        cap: usize,
        out: &mut Vec<State>,
    ) {
        if ps.len() != 2 {
            return;
        }
        let subjects: Vec<[Term; 2]> = match (ss.len(), id_elem) {
            (2, _) => vec![
                [ss[0].clone(), ss[1].clone()],
                [ss[1].clone(), ss[0].clone()],
            ],
            (1, Some(id)) => vec![
                [ss[0].clone(), Term::constant(id)],
                [Term::constant(id), ss[0].clone()],
            ],
            _ => return,
        };
        let mut seen: BTreeSet<Subst> = BTreeSet::new();
        for pair in subjects {
            let mut states = vec![st.clone()];
            for (p, s) in ps.iter().zip(&pair) {
                let mut next = Vec::new();
                for stt in states {
                    next.extend(self.solve(p, s, stt, cap));
                }
                states = next;
                if states.is_empty() {
                    break;
                }
            }
            for stt in states {
                if seen.insert(stt.subst.clone()) {
                    self.push(out, stt, cap);
                }
            }
        }
    }

    /// Alignment for associative (possibly commutative, possibly identity)
    /// operators over flattened element lists.
    fn assoc_align(
        &mut self,
        op: OpId,
        ps: &[Term],
        ss: &[Term],
        st: State,
        cap: usize,
        out: &mut Vec<State>,
    ) {
        let decl = self.sig.op(op);
        if decl.attrs.comm {
            let remaining: Vec<usize> = (0..ss.len()).collect();
            self.ac_assign(op, ps, ss, &remaining, st, cap, out);
        } else {
            self.block_partition(op, ps, ss, st, cap, out);
        }
    }

    /// Rebuild a block of elements as a term of the operator's family.
    fn block_term(&self, op: OpId, block: &[Term]) -> Option<Term> {
        let decl = self.sig.op(op);
        match block.len() {
            0 => decl.attrs.id_elem.map(Term::constant),
            1 => Some(block[0].clone()),
            _ => Some(Term::App(op, block.to_vec())),
        }
    }

    /// Consecutive-block partitions for associative non-commutative
    /// operators, smallest leading block first.
    fn block_partition(
        &mut self,
        op: OpId,
        ps: &[Term],
        ss: &[Term],
        st: State,
        cap: usize,
        out: &mut Vec<State>,
    ) {
        if out.len() >= cap {
            self.truncated = true;
            return;
        }
        let has_id = self.sig.op(op).attrs.id_elem.is_some();
        let Some((p0, rest)) = ps.split_first() else {
            if ss.is_empty() {
                self.push(out, st, cap);
            }
            return;
        };
        if rest.is_empty() {
            // Last pattern element takes everything left.
            if ss.is_empty() && !has_id {
                return;
            }
            if let Some(block) = self.block_term(op, ss) {
                for stt in self.solve(p0, &block, st, cap) {
                    self.push(out, stt, cap);
                }
            }
            return;
        }
        // A non-variable element cannot itself be a list of this family
        // (patterns are flattened), so it takes at most one element.
        let absorbing = matches!(p0.unmarked(), Term::Var(_));
        let lo = if has_id { 0 } else { 1 };
        let max_take = ss.len().saturating_sub(if has_id { 0 } else { rest.len() });
        let hi = if absorbing { max_take } else { max_take.min(1) };
        let mut size = lo;
        while size <= hi {
            // A variable whose sort cannot hold a flattened list of this
            // family never matches a block of two or more elements, and
            // larger blocks have the same sort: stop enumerating.
            if size >= 2 {
                if let Term::Var(v) = p0.unmarked() {
                    if !self.sig.is_subsort(self.sig.op(op).coarity, v.sort) {
                        break;
                    }
                }
            }
            if let Some(block) = self.block_term(op, &ss[..size]) {
                for stt in self.solve(p0, &block, st.clone(), cap) {
                    self.block_partition(op, rest, &ss[size..], stt, cap, out);
                }
            }
            if out.len() >= cap {
                self.truncated = true;
                return;
            }
            size += 1;
        }
    }

    /// Multiset assignment for associative-commutative operators: rigid
    /// pattern elements claim distinct subject elements (left to right), the
    /// final variable absorbs the rest, and intermediate variables enumerate
    /// sub-multisets.
    fn ac_assign(
        &mut self,
        op: OpId,
        ps: &[Term],
        ss: &[Term],
        remaining: &[usize],
        st: State,
        cap: usize,
        out: &mut Vec<State>,
    ) {
        if out.len() >= cap {
            self.truncated = true;
            return;
        }
        let has_id = self.sig.op(op).attrs.id_elem.is_some();
        // Process rigid elements first; their placement prunes hardest.
        if let Some(ri) = ps.iter().position(|p| !matches!(p.unmarked(), Term::Var(_))) {
            let p0 = &ps[ri];
            let rest: Vec<Term> = ps
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != ri)
                .map(|(_, p)| p.clone())
                .collect();
            for (k, &idx) in remaining.iter().enumerate() {
                for stt in self.solve(p0, &ss[idx], st.clone(), cap) {
                    let rem: Vec<usize> = remaining
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != k)
                        .map(|(_, &x)| x)
                        .collect();
                    self.ac_assign(op, &rest, ss, &rem, stt, cap, out);
                }
                if out.len() >= cap {
                    self.truncated = true;
                    return;
                }
            }
            return;
        }
        // Only variables left.
        match ps.len() {
            0 => {
                if remaining.is_empty() {
                    self.push(out, st, cap);
                }
            }
            1 => {
                if remaining.is_empty() && !has_id {
                    return;
                }
                let block: Vec<Term> = remaining.iter().map(|&i| ss[i].clone()).collect();
                if let Some(t) = self.block_term(op, &block) {
                    for stt in self.solve(&ps[0], &t, st, cap) {
                        self.push(out, stt, cap);
                    }
                }
            }
            _ => {
                // Enumerate the first variable's sub-multiset by bitmask,
                // ascending, so the empty set (identity) comes first.
                let n = remaining.len();
                if n > 16 {
                    // Degenerate patterns over huge multisets: fall back to
                    // "first variable takes nothing" and flag truncation.
                    self.truncated = true;
                    let lo = if has_id { Some(Vec::new()) } else { None };
                    if let Some(empty) = lo {
                        if let Some(t) = self.block_term(op, &empty) {
                            for stt in self.solve(&ps[0], &t, st, cap) {
                                self.ac_assign(op, &ps[1..], ss, remaining, stt, cap, out);
                            }
                        }
                    }
                    return;
                }
                for mask in 0u32..(1u32 << n) {
                    if mask == 0 && !has_id {
                        continue;
                    }
                    let picked: Vec<usize> = (0..n)
                        .filter(|b| mask & (1 << b) != 0)
                        .map(|b| remaining[b])
                        .collect();
                    let rem: Vec<usize> = (0..n)
                        .filter(|b| mask & (1 << b) == 0)
                        .map(|b| remaining[b])
                        .collect();
                    let block: Vec<Term> = picked.iter().map(|&i| ss[i].clone()).collect();
                    if let Some(t) = self.block_term(op, &block) {
                        for stt in self.solve(&ps[0], &t, st.clone(), cap) {
                            self.ac_assign(op, &ps[1..], ss, &rem, stt, cap, out);
                        }
                    }
                    if out.len() >= cap {
                        self.truncated = true;
                        return;
                    }
                }
            }
        }
    }
}

/// Match a pattern against a ground (possibly marked) subject. Solutions are
/// complete up to [`ENUM_CAP`] and come in the pinned deterministic order.
pub fn match_term(sig: &Signature, pattern: &Term, subject: &Term) -> SolutionSet {
    let mut ctx = Ctx { sig, two_way: false, truncated: false };
    let states = ctx.solve(
        pattern,
        subject,
        State { subst: Subst::new(), peels: Vec::new() },
        ENUM_CAP,
    );
    let mut seen: BTreeSet<Subst> = BTreeSet::new();
    let outcomes = states
        .into_iter()
        .filter(|st| seen.insert(st.subst.clone()))
        .map(|st| MatchOutcome { subst: st.subst, peels: st.peels })
        .collect();
    SolutionSet { outcomes, truncated: ctx.truncated }
}

/// Unify two terms, fresh-renaming the first so its variables cannot collide
/// with the second's. Returns the solutions (substitutions cover both the
/// renamed first term and the second) and the bumped rename counter.
pub fn unify(sig: &Signature, t1: &Term, t2: &Term, counter: u64) -> (SolutionSet, u64) {
    let t1s = crate::term::strip_marks(t1);
    let t2s = crate::term::strip_marks(t2);
    let (t1r, next) = crate::term::fresh_rename(&t1s, counter);
    let mut ctx = Ctx { sig, two_way: true, truncated: false };
    let states = ctx.solve(
        &t1r,
        &t2s,
        State { subst: Subst::new(), peels: Vec::new() },
        ENUM_CAP,
    );
    let mut seen: BTreeSet<Subst> = BTreeSet::new();
    let mut outcomes = Vec::new();
    for st in states {
        // Re-apply until stable so chained bindings read out fully resolved.
        let mut subst = Subst::new();
        for (v, t) in &st.subst.0 {
            let mut cur = t.clone();
            for _ in 0..st.subst.0.len() {
                let nxt = apply(&st.subst, &cur);
                if nxt == cur {
                    break;
                }
                cur = nxt;
            }
            subst.insert(v.clone(), normalize(sig, &cur));
        }
        if seen.insert(subst.clone()) {
            outcomes.push(MatchOutcome { subst, peels: Vec::new() });
        }
    }
    (SolutionSet { outcomes, truncated: ctx.truncated }, next)
}

/// Convenience: do the two terms unify at all?
pub fn unifiable(sig: &Signature, t1: &Term, t2: &Term, counter: u64) -> (bool, u64) {
    let (sols, next) = unify(sig, t1, t2, counter);
    (!sols.is_empty(), next)
}

/// Soundness helper used by tests and the audit: check that a claimed
/// matching solution reproduces the subject. Variables capture marked
/// subterms mark and all, so marks are stripped after substitution.
pub fn check_match(sig: &Signature, pattern: &Term, subject: &Term, subst: &Subst) -> bool {
    let lhs = normalize(sig, &crate::term::strip_marks(&apply(subst, pattern)));
    let rhs = normalize(sig, &crate::term::strip_marks(subject));
    lhs == rhs
}
