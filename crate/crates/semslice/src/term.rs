//! Terms over an order-sorted signature: variables, flattened applications,
//! and instruction marks.
//!
//! Associative operators are kept flattened (an application may carry more
//! than two arguments) and commutative arguments are kept canonically sorted;
//! [`normalize`] establishes and maintains that form. Marks are transparent
//! wrappers used by the execution engine to track instruction occurrences
//! through a run: every analysis that cares about structure looks through
//! them, and [`strip_marks`] removes them for comparisons and output.

use crate::sig::{OpId, Signature, SortId};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// A sorted variable. Identity is the (name, sort) pair: two variables with
/// the same name but different sorts are distinct.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize)]
pub struct Var {
    pub name: String,
    pub sort: SortId,
}

/// A term: variable, operator application, or marked subterm.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize)]
pub enum Term {
    Var(Var),
    /// Application. For associative operators the argument list is the
    /// flattened element list and may be longer than the declared arity.
    App(OpId, Vec<Term>),
    /// Instruction mark: `id` is a position id in the flattened program.
    Marked(u32, Box<Term>),
}

impl Term {
    pub fn var(name: &str, sort: SortId) -> Self {
        Term::Var(Var { name: name.to_string(), sort })
    }

    pub fn constant(op: OpId) -> Self {
        Term::App(op, Vec::new())
    }

    pub fn is_var(&self) -> bool {
        matches!(self, Term::Var(_))
    }

    /// The term under any number of marks.
    pub fn unmarked(&self) -> &Term {
        let mut t = self;
        while let Term::Marked(_, inner) = t {
            t = inner;
        }
        t
    }

    /// Head operator, looking through marks.
    pub fn head(&self) -> Option<OpId> {
        match self.unmarked() {
            Term::App(op, _) => Some(*op),
            _ => None,
        }
    }

    pub fn is_ground(&self) -> bool {
        match self {
            Term::Var(_) => false,
            Term::App(_, args) => args.iter().all(Term::is_ground),
            Term::Marked(_, inner) => inner.is_ground(),
        }
    }

    /// All variables occurring in the term.
    pub fn vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<Var>) {
        match self {
            Term::Var(v) => {
                out.insert(v.clone());
            }
            Term::App(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
            Term::Marked(_, inner) => inner.collect_vars(out),
        }
    }

    pub fn contains_var(&self, v: &Var) -> bool {
        match self {
            Term::Var(w) => w == v,
            Term::App(_, args) => args.iter().any(|a| a.contains_var(v)),
            Term::Marked(_, inner) => inner.contains_var(v),
        }
    }

    /// Number of nodes, marks not counted.
    pub fn size(&self) -> usize {
        match self {
            Term::Var(_) => 1,
            Term::App(_, args) => 1 + args.iter().map(Term::size).sum::<usize>(),
            Term::Marked(_, inner) => inner.size(),
        }
    }
}

/// Remove every mark in the term.
pub fn strip_marks(t: &Term) -> Term {
    match t {
        Term::Var(_) => t.clone(),
        Term::App(op, args) => Term::App(*op, args.iter().map(strip_marks).collect()),
        Term::Marked(_, inner) => strip_marks(inner),
    }
}

/// Structural equality ignoring marks.
pub fn equal_unmarked(a: &Term, b: &Term) -> bool {
    match (a, b) {
        (Term::Marked(_, x), _) => equal_unmarked(x, b),
        (_, Term::Marked(_, y)) => equal_unmarked(a, y),
        (Term::Var(v), Term::Var(w)) => v == w,
        (Term::App(f, xs), Term::App(g, ys)) => {
            f == g && xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| equal_unmarked(x, y))
        }
        _ => false,
    }
}

/// Total order ignoring marks; used to canonicalize commutative arguments so
/// that marked and unmarked copies of a term normalize the same way.
pub fn cmp_unmarked(a: &Term, b: &Term) -> std::cmp::Ordering {
    use std::cmp::Ordering;
    match (a.unmarked(), b.unmarked()) {
        (Term::Var(v), Term::Var(w)) => v.cmp(w),
        (Term::Var(_), Term::App(..)) => Ordering::Less,
        (Term::App(..), Term::Var(_)) => Ordering::Greater,
        (Term::App(f, xs), Term::App(g, ys)) => f.cmp(g).then_with(|| {
            xs.len().cmp(&ys.len()).then_with(|| {
                for (x, y) in xs.iter().zip(ys) {
                    let c = cmp_unmarked(x, y);
                    if c != Ordering::Equal {
                        return c;
                    }
                }
                Ordering::Equal
            })
        }),
        // Unreachable after unmarked(), but keep a total answer.
        _ => Ordering::Equal,
    }
}

/// Least sort of a term: variables report their declared sort, applications
/// re-resolve their operator family against the argument sorts (pairwise for
/// flattened associative applications). Falls back to the declared coarity
/// when no tighter overload fits.
pub fn least_sort(sig: &Signature, t: &Term) -> SortId {
    match t {
        Term::Var(v) => v.sort,
        Term::Marked(_, inner) => least_sort(sig, inner),
        Term::App(op, args) => {
            let decl = sig.op(*op);
            // Ops with a unique declaration cannot be refined, so the
            // argument sorts are irrelevant.
            if args.is_empty() || sig.overload_count(*op) == 1 {
                return decl.coarity;
            }
            let arg_sorts: Vec<SortId> = args.iter().map(|a| least_sort(sig, a)).collect();
            if decl.attrs.assoc && args.len() > 2 {
                // Fold the flattened list left to right.
                let mut acc = arg_sorts[0];
                for &next in &arg_sorts[1..] {
                    match sig.resolve_op(&decl.name, &[acc, next]) {
                        Ok(Some(o)) => acc = sig.op(o).coarity,
                        _ => return decl.coarity,
                    }
                }
                acc
            } else {
                match sig.resolve_op(&decl.name, &arg_sorts) {
                    Ok(Some(o)) => sig.op(o).coarity,
                    _ => decl.coarity,
                }
            }
        }
    }
}

/// Put a term into normal form: arguments normalized, associative spines
/// flattened, identity elements dropped, commutative arguments canonically
/// ordered. Single-element associative applications collapse to the element;
/// empty ones collapse to the identity constant.
pub fn normalize(sig: &Signature, t: &Term) -> Term {
    match t {
        Term::Var(_) => t.clone(),
        Term::Marked(id, inner) => {
            let n = normalize(sig, inner);
            Term::Marked(*id, Box::new(n))
        }
        Term::App(op, args) => {
            let norm: Vec<Term> = args.iter().map(|a| normalize(sig, a)).collect();
            normalize_root(sig, *op, norm)
        }
    }
}

/// The root step of [`normalize`]: flatten, drop identities, order
/// commutative arguments. Arguments must already be normal.
pub fn normalize_root(sig: &Signature, op: OpId, args: Vec<Term>) -> Term {
    let decl = sig.op(op);
    let mut norm = args;
    if decl.attrs.assoc {
        // Flatten nested applications of the same operator family.
        let mut flat = Vec::with_capacity(norm.len());
        for a in norm {
            let same_family = match a.unmarked() {
                Term::App(inner_op, _) => {
                    *inner_op == op
                        || (sig.op(*inner_op).name == decl.name && sig.op(*inner_op).attrs.assoc)
                }
                _ => false,
            };
            // A marked list must keep its mark, so only unmarked
            // spines are flattened into the parent.
            if same_family && matches!(a, Term::App(..)) {
                if let Term::App(_, inner_args) = a {
                    flat.extend(inner_args);
                }
            } else {
                flat.push(a);
            }
        }
        norm = flat;
    }
    if let Some(id_op) = decl.attrs.id_elem {
        let id_term = Term::constant(id_op);
        norm.retain(|a| !equal_unmarked(a, &id_term));
        if norm.is_empty() {
            return id_term;
        }
        if norm.len() == 1 && (decl.attrs.assoc || decl.attrs.comm) {
            return norm.pop().expect("length checked");
        }
    }
    if decl.attrs.comm {
        norm.sort_by(cmp_unmarked);
    }
    Term::App(op, norm)
}

/// A substitution: finite map from variables to terms. Bindings are kept in
/// variable order so iteration is deterministic.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug, Default, Serialize)]
pub struct Subst(pub BTreeMap<Var, Term>);

impl Subst {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, v: &Var) -> Option<&Term> {
        self.0.get(v)
    }

    pub fn insert(&mut self, v: Var, t: Term) {
        self.0.insert(v, t);
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Try to add a binding; an existing binding must agree up to marks.
    pub fn bind_consistent(&mut self, v: Var, t: Term) -> bool {
        match self.0.get(&v) {
            Some(prev) => equal_unmarked(prev, &t),
            None => {
                self.0.insert(v, t);
                true
            }
        }
    }
}

/// Capture-free instantiation. The result is not normalized; callers that
/// need normal form compose with [`normalize`].
pub fn apply(subst: &Subst, t: &Term) -> Term {
    match t {
        Term::Var(v) => subst.get(v).cloned().unwrap_or_else(|| t.clone()),
        Term::App(op, args) => Term::App(*op, args.iter().map(|a| apply(subst, a)).collect()),
        Term::Marked(id, inner) => Term::Marked(*id, Box::new(apply(subst, inner))),
    }
}

/// Instantiate and normalize in one step.
pub fn apply_norm(sig: &Signature, subst: &Subst, t: &Term) -> Term {
    normalize(sig, &apply(subst, t))
}

/// Rename every variable `x` of the term to `x#k`, where `k` is the current
/// counter value; returns the renamed term and the bumped counter. Distinct
/// variables stay distinct, and repeated calls never collide as long as
/// source variable names contain no `#`.
pub fn fresh_rename(t: &Term, counter: u64) -> (Term, u64) {
    fn go(t: &Term, k: u64) -> Term {
        match t {
            Term::Var(v) => Term::Var(Var { name: format!("{}#{}", v.name, k), sort: v.sort }),
            Term::App(op, args) => Term::App(*op, args.iter().map(|a| go(a, k)).collect()),
            Term::Marked(id, inner) => Term::Marked(*id, Box::new(go(inner, k))),
        }
    }
    (go(t, counter), counter + 1)
}

/// A path from the root of a term to a subterm. Marks are addressed as
/// single-child nodes (step 0 descends through a mark).
pub type Position = Vec<usize>;

/// Preorder traversal of all subterms (parents before children, children left
/// to right), optionally keeping only subterms whose least sort is below
/// `sort_filter`. Marked nodes are reported once, at the marked wrapper, and
/// the traversal continues inside.
pub fn preorder_subterms<'a>(
    sig: &Signature,
    t: &'a Term,
    sort_filter: Option<SortId>,
) -> Vec<(Position, &'a Term)> {
    let mut out = Vec::new();
    let mut stack: Vec<(Position, &Term)> = vec![(Vec::new(), t)];
    while let Some((pos, term)) = stack.pop() {
        let keep = match sort_filter {
            Some(s) => sig.is_subsort(least_sort(sig, term), s),
            None => true,
        };
        if keep {
            out.push((pos.clone(), term));
        }
        match term {
            Term::Var(_) => {}
            Term::Marked(_, inner) => {
                let mut p = pos;
                p.push(0);
                // Skip the duplicate report for the inner term when the
                // wrapper was already reported with the same sort.
                stack.push((p, inner));
            }
            Term::App(_, args) => {
                for (i, a) in args.iter().enumerate().rev() {
                    let mut p = pos.clone();
                    p.push(i);
                    stack.push((p, a));
                }
            }
        }
    }
    // The stack discipline above yields preorder already; marked wrappers and
    // their inner term both satisfy the filter, so collapse those duplicates.
    let mut dedup: Vec<(Position, &Term)> = Vec::with_capacity(out.len());
    for (pos, term) in out {
        if let Some((prev_pos, prev_term)) = dedup.last() {
            if matches!(prev_term, Term::Marked(..))
                && pos.len() == prev_pos.len() + 1
                && pos.starts_with(prev_pos)
                && pos.ends_with(&[0])
            {
                // Inner node of a mark we just reported: replace the wrapper
                // report so each subterm appears exactly once.
                let _ = dedup.pop();
            }
        }
        dedup.push((pos, term));
    }
    dedup
}

/// Subterm at a position, if the path is valid.
pub fn subterm_at<'a>(t: &'a Term, pos: &[usize]) -> Option<&'a Term> {
    let mut cur = t;
    for &step in pos {
        cur = match cur {
            Term::App(_, args) => args.get(step)?,
            Term::Marked(_, inner) if step == 0 => inner,
            _ => return None,
        };
    }
    Some(cur)
}

/// Replace the subterm at a position, returning the new term.
pub fn replace_at(t: &Term, pos: &[usize], replacement: Term) -> Term {
    if pos.is_empty() {
        return replacement;
    }
    match t {
        Term::App(op, args) => {
            let mut new_args = args.clone();
            let i = pos[0];
            new_args[i] = replace_at(&args[i], &pos[1..], replacement);
            Term::App(*op, new_args)
        }
        Term::Marked(id, inner) if pos[0] == 0 => {
            Term::Marked(*id, Box::new(replace_at(inner, &pos[1..], replacement)))
        }
        _ => t.clone(),
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sig::OpAttrs;

    // Signature mirroring the bundled memory module: environments are
    // multisets of bindings under an ACU operator, stores are `_|_` lists.
    fn memsig() -> (Signature, TestOps) {
        let mut sig = Signature::new();
        let variable = sig.add_sort("Variable", "S").unwrap();
        let num = sig.add_sort("Num", "S").unwrap();
        let value = sig.add_sort("Value", "S").unwrap();
        let env = sig.add_sort("Env", "M").unwrap();
        let est = sig.add_sort("ESt", "M").unwrap();
        sig.add_subsort(num, value);
        sig.add_subsort(env, est);
        sig.close_subsorts();
        let ctor = OpAttrs { ctor: true, ..OpAttrs::default() };
        let x = sig.add_op("x", vec![], variable, ctor.clone(), "S").unwrap();
        let y = sig.add_op("y", vec![], variable, ctor.clone(), "S").unwrap();
        let zero = sig.add_op("0", vec![], num, ctor.clone(), "S").unwrap();
        let s = sig.add_op("s", vec![num], num, ctor.clone(), "S").unwrap();
        let mt = sig.add_op("mt", vec![], env, ctor.clone(), "M").unwrap();
        let bind = sig
            .add_op("_=_", vec![variable, value], env, ctor.clone(), "M")
            .unwrap();
        let cat = sig
            .add_op(
                "__",
                vec![env, env],
                env,
                OpAttrs { ctor: true, assoc: true, comm: true, id_elem: Some(mt) },
                "M",
            )
            .unwrap();
        let pile = sig
            .add_op(
                "_|_",
                vec![est, est],
                est,
                OpAttrs { ctor: true, assoc: true, comm: false, id_elem: None },
                "M",
            )
            .unwrap();
        (
            sig,
            TestOps { variable, num, value, env, est, x, y, zero, s, mt, bind, cat, pile },
        )
    }

    struct TestOps {
        variable: SortId,
        num: SortId,
        value: SortId,
        env: SortId,
        est: SortId,
        x: OpId,
        y: OpId,
        zero: OpId,
        s: OpId,
        mt: OpId,
        bind: OpId,
        cat: OpId,
        pile: OpId,
    }

    fn num(ops: &TestOps, n: u32) -> Term {
        let mut t = Term::constant(ops.zero);
        for _ in 0..n {
            t = Term::App(ops.s, vec![t]);
        }
        t
    }

    fn bind(ops: &TestOps, v: OpId, n: u32) -> Term {
        Term::App(ops.bind, vec![Term::constant(v), num(ops, n)])
    }

    #[test]
    fn identity_elements_are_dropped() {
        let (sig, ops) = memsig();
        let t = Term::App(
            ops.cat,
            vec![Term::constant(ops.mt), bind(&ops, ops.x, 1)],
        );
        let n = normalize(&sig, &t);
        assert_eq!(n, bind(&ops, ops.x, 1));
    }

    #[test]
    fn empty_after_identity_drop_collapses_to_identity() {
        let (sig, ops) = memsig();
        let t = Term::App(ops.cat, vec![Term::constant(ops.mt), Term::constant(ops.mt)]);
        assert_eq!(normalize(&sig, &t), Term::constant(ops.mt));
    }

    #[test]
    fn associative_spines_flatten() {
        let (sig, ops) = memsig();
        let e1 = bind(&ops, ops.x, 1);
        let e2 = bind(&ops, ops.x, 2);
        let e3 = bind(&ops, ops.y, 3);
        let nested = Term::App(
            ops.pile,
            vec![Term::App(ops.pile, vec![e1.clone(), e2.clone()]), e3.clone()],
        );
        let n = normalize(&sig, &nested);
        match &n {
            Term::App(op, args) => {
                assert_eq!(*op, ops.pile);
                assert_eq!(args.len(), 3);
                assert_eq!(args[0], e1);
                assert_eq!(args[1], e2);
                assert_eq!(args[2], e3);
            }
            other => panic!("expected flattened pile, got {other:?}"),
        }
    }

    #[test]
    fn commutative_arguments_sort_canonically_mark_blind() {
        let (sig, ops) = memsig();
        let a = bind(&ops, ops.x, 1);
        let b = bind(&ops, ops.y, 2);
        let plain = normalize(&sig, &Term::App(ops.cat, vec![b.clone(), a.clone()]));
        let marked = normalize(
            &sig,
            &Term::App(ops.cat, vec![Term::Marked(7, Box::new(b)), a]),
        );
        assert!(equal_unmarked(&plain, &marked));
    }

    #[test]
    fn normalize_is_idempotent_on_samples() {
        let (sig, ops) = memsig();
        let samples = vec![
            Term::App(
                ops.cat,
                vec![bind(&ops, ops.y, 2), bind(&ops, ops.x, 1), Term::constant(ops.mt)],
            ),
            Term::App(
                ops.pile,
                vec![
                    Term::App(ops.pile, vec![bind(&ops, ops.x, 1), Term::constant(ops.mt)]),
                    bind(&ops, ops.y, 0),
                ],
            ),
        ];
        for t in samples {
            let once = normalize(&sig, &t);
            let twice = normalize(&sig, &once);
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn least_sort_specializes_through_subsorts() {
        let (sig, ops) = memsig();
        // A binding is an Env even though `_=_` could sit anywhere below.
        let t = bind(&ops, ops.x, 1);
        assert_eq!(least_sort(&sig, &t), ops.env);
        // A flattened pile of Envs folds to Env-compatible ESt.
        let pile = Term::App(ops.pile, vec![bind(&ops, ops.x, 1), bind(&ops, ops.y, 2)]);
        assert_eq!(least_sort(&sig, &pile), ops.est);
        assert_eq!(least_sort(&sig, &num(&ops, 2)), ops.num);
        assert!(sig.is_subsort(least_sort(&sig, &num(&ops, 2)), ops.value));
    }

    #[test]
    fn fresh_rename_suffixes_all_variables() {
        let (_, ops) = memsig();
        let t = Term::App(
            ops.bind,
            vec![Term::var("X", ops.variable), Term::var("V", ops.value)],
        );
        let (renamed, next) = fresh_rename(&t, 3);
        assert_eq!(next, 4);
        let names: Vec<String> = renamed.vars().into_iter().map(|v| v.name).collect();
        assert_eq!(names, vec!["V#3", "X#3"]);
    }

    #[test]
    fn preorder_visits_parents_first_and_skips_mark_duplicates() {
        let (sig, ops) = memsig();
        let inner = bind(&ops, ops.x, 0);
        let t = Term::App(
            ops.pile,
            vec![Term::Marked(5, Box::new(inner.clone())), bind(&ops, ops.y, 1)],
        );
        let all = preorder_subterms(&sig, &t, None);
        // Root first.
        assert_eq!(all[0].0, Vec::<usize>::new());
        // The marked binding is reported once, not once for the wrapper and
        // once for the wrapped term.
        let marked_hits = all
            .iter()
            .filter(|(_, st)| equal_unmarked(st, &inner))
            .count();
        assert_eq!(marked_hits, 1);
        // Parents precede children.
        for window in all.windows(2) {
            assert!(window[0].0.len() <= window[1].0.len() || !window[1].0.starts_with(&window[0].0));
        }
    }

    #[test]
    fn preorder_sort_filter_keeps_only_fitting_subterms() {
        let (sig, ops) = memsig();
        let t = Term::App(ops.pile, vec![bind(&ops, ops.x, 1), bind(&ops, ops.y, 2)]);
        let envs = preorder_subterms(&sig, &t, Some(ops.env));
        // The two bindings qualify; the pile itself is ESt, not Env.
        assert_eq!(envs.len(), 2);
        assert!(envs.iter().all(|(_, st)| least_sort(&sig, st) == ops.env));
    }

    #[test]
    fn replace_and_lookup_positions_roundtrip() {
        let (sig, ops) = memsig();
        let t = Term::App(ops.pile, vec![bind(&ops, ops.x, 1), bind(&ops, ops.y, 2)]);
        let all = preorder_subterms(&sig, &t, None);
        for (pos, st) in &all {
            assert_eq!(subterm_at(&t, pos), Some(*st));
        }
        let swapped = replace_at(&t, &[0], bind(&ops, ops.y, 9));
        assert_eq!(subterm_at(&swapped, &[0]), Some(&bind(&ops, ops.y, 9)));
    }

    #[test]
    fn apply_instantiates_without_normalizing() {
        let (sig, ops) = memsig();
        let mut subst = Subst::new();
        subst.insert(
            Var { name: "RO".into(), sort: ops.env },
            Term::constant(ops.mt),
        );
        let pattern = Term::App(
            ops.cat,
            vec![Term::var("RO", ops.env), bind(&ops, ops.x, 1)],
        );
        let raw = apply(&subst, &pattern);
        assert!(matches!(&raw, Term::App(op, args) if *op == ops.cat && args.len() == 2));
        let cooked = apply_norm(&sig, &subst, &pattern);
        assert_eq!(cooked, bind(&ops, ops.x, 1));
    }

    #[test]
    fn binding_consistency_is_mark_blind() {
        let (_, ops) = memsig();
        let v = Var { name: "V".into(), sort: ops.value };
        let mut s = Subst::new();
        assert!(s.bind_consistent(v.clone(), Term::Marked(1, Box::new(num(&ops, 2)))));
        assert!(s.bind_consistent(v.clone(), num(&ops, 2)));
        assert!(!s.bind_consistent(v, num(&ops, 3)));
    }
}
