//! Randomized property checks shared by the property and acceptance test
//! targets. Each check returns Err with a counterexample description so
//! the acceptance run can report pass/fail lines without panicking.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use semslice::matching::{check_match, match_term, unify};
use semslice::module::SemanticsModule;
use semslice::sig::{OpId, Signature, SortId};
use semslice::term::{self, fresh_rename, least_sort, normalize, preorder_subterms, strip_marks};
use semslice::{Subst, Term, Var};

/// Signature-driven random ground term builder. Operators are ranked by
/// the height of their shortest derivation so generation always bottoms
/// out, whatever the sort graph looks like.
pub struct TermGen<'a> {
    sig: &'a Signature,
    /// Shortest ground-term height per sort, where buildable.
    sort_depth: BTreeMap<SortId, usize>,
    /// Shortest height per operator, where buildable.
    op_depth: BTreeMap<OpId, usize>,
}

impl<'a> TermGen<'a> {
    pub fn new(sig: &'a Signature) -> Self {
        let mut sort_depth: BTreeMap<SortId, usize> = BTreeMap::new();
        let mut op_depth: BTreeMap<OpId, usize> = BTreeMap::new();
        // Fixpoint: an operator is buildable once each argument sort has a
        // buildable sort at or below it.
        loop {
            let mut changed = false;
            for (op, decl) in sig.ops() {
                let mut height = 0usize;
                let mut ok = true;
                for &arg in &decl.args {
                    let best = sig
                        .sorts()
                        .filter(|&s| sig.is_subsort(s, arg))
                        .filter_map(|s| sort_depth.get(&s).copied())
                        .min();
                    match best {
                        Some(d) => height = height.max(d + 1),
                        None => {
                            ok = false;
                            break;
                        }
                    }
                }
                if !ok {
                    continue;
                }
                if op_depth.get(&op).map_or(true, |&d| height < d) {
                    op_depth.insert(op, height);
                    changed = true;
                }
                let c = decl.coarity;
                if sort_depth.get(&c).map_or(true, |&d| height < d) {
                    sort_depth.insert(c, height);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        TermGen { sig, sort_depth, op_depth }
    }

    fn candidates(&self, sort: SortId, budget: usize) -> Vec<OpId> {
        self.sig
            .ops()
            .filter(|(op, decl)| {
                self.sig.is_subsort(decl.coarity, sort)
                    && self.op_depth.get(op).is_some_and(|&d| d <= budget)
            })
            .map(|(op, _)| op)
            .collect()
    }

    /// Shortest ground-term height for the sort, if any term exists.
    pub fn min_depth(&self, sort: SortId) -> Option<usize> {
        self.sig
            .sorts()
            .filter(|&s| self.sig.is_subsort(s, sort))
            .filter_map(|s| self.sort_depth.get(&s).copied())
            .min()
    }

    /// A random ground term of (a subsort of) `sort` within the height
    /// budget; None when the budget cannot reach a ground term.
    pub fn ground(&self, sort: SortId, budget: usize, rng: &mut ChaCha8Rng) -> Option<Term> {
        let opts = self.candidates(sort, budget);
        let &op = opts.choose(rng)?;
        let decl = self.sig.op(op);
        let mut args = Vec::with_capacity(decl.args.len());
        for &arg in &decl.args {
            let inner = budget.saturating_sub(1);
            args.push(self.ground(arg, inner, rng)?);
        }
        Some(Term::App(op, args))
    }

    /// A random ground term, sized a small random amount above the sort's
    /// minimal derivation so generation cannot stall on deep sorts.
    pub fn sample(&self, sort: SortId, rng: &mut ChaCha8Rng) -> Option<Term> {
        let floor = self.min_depth(sort)?;
        self.ground(sort, floor + rng.gen_range(0..4), rng)
    }

    /// Sorts that can ground a term at all.
    pub fn buildable_sorts(&self) -> Vec<SortId> {
        self.sort_depth.keys().copied().collect()
    }
}

/// Replace random subterms with fresh sorted variables; `prob` is per
/// subterm in a preorder walk, skipping the root so patterns keep a head.
pub fn abstract_term(sig: &Signature, t: &Term, prob: f64, rng: &mut ChaCha8Rng) -> Term {
    fn go(
        sig: &Signature,
        t: &Term,
        prob: f64,
        rng: &mut ChaCha8Rng,
        counter: &mut usize,
        root: bool,
    ) -> Term {
        if !root && rng.gen_bool(prob) {
            let sort = least_sort(sig, t);
            *counter += 1;
            return Term::Var(Var { name: format!("G{counter}"), sort });
        }
        match t {
            Term::App(op, args) => Term::App(
                *op,
                args.iter().map(|a| go(sig, a, prob, rng, counter, false)).collect(),
            ),
            other => other.clone(),
        }
    }
    let mut counter = 0;
    go(sig, t, prob, rng, &mut counter, true)
}

/// Wrap random subterms in marks. Marks must be invisible to matching.
pub fn sprinkle_marks(t: &Term, prob: f64, rng: &mut ChaCha8Rng) -> Term {
    fn go(t: &Term, prob: f64, rng: &mut ChaCha8Rng, next: &mut u32) -> Term {
        let rebuilt = match t {
            Term::App(op, args) => Term::App(
                *op,
                args.iter().map(|a| go(a, prob, rng, next)).collect(),
            ),
            other => other.clone(),
        };
        if rng.gen_bool(prob) {
            *next += 1;
            Term::Marked(*next, Box::new(rebuilt))
        } else {
            rebuilt
        }
    }
    let mut next = 0;
    go(t, prob, rng, &mut next)
}

fn describe(m: &SemanticsModule, t: &Term) -> String {
    semslice::syntax::print_term(m, t)
}

/// Matching soundness: every solution reproduces the subject, and a
/// pattern cut from the subject itself always matches, marks or not.
pub fn check_match_soundness(m: &SemanticsModule, cases: usize, seed: u64) -> Result<(), String> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gen = TermGen::new(&m.sig);
    let sorts = gen.buildable_sorts();
    let mut checked = 0usize;
    while checked < cases {
        let &sort = sorts.choose(&mut rng).expect("buildable sorts");
        let Some(raw) = gen.sample(sort, &mut rng) else {
            continue;
        };
        let subject_plain = normalize(&m.sig, &raw);
        let pattern = abstract_term(&m.sig, &subject_plain, 0.35, &mut rng);
        let subject = sprinkle_marks(&subject_plain, 0.10, &mut rng);
        let sols = match_term(&m.sig, &pattern, &subject);
        if sols.is_empty() && !sols.truncated {
            return Err(format!(
                "pattern cut from its own subject failed to match: pattern `{}` subject `{}`",
                describe(m, &pattern),
                describe(m, &subject)
            ));
        }
        for sol in &sols.outcomes {
            if !check_match(&m.sig, &pattern, &subject, &sol.subst) {
                return Err(format!(
                    "unsound match: pattern `{}` subject `{}` subst {:?}",
                    describe(m, &pattern),
                    describe(m, &subject),
                    sol.subst
                ));
            }
        }
        checked += 1;
    }
    Ok(())
}

/// Unification soundness: every unifier equalizes the two sides after
/// normalization. Pairs are cut from a shared ground term so most of them
/// actually unify; the renaming counter is replayed to rebuild the side
/// the engine renamed.
pub fn check_unify_soundness(m: &SemanticsModule, cases: usize, seed: u64) -> Result<(), String> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gen = TermGen::new(&m.sig);
    let sorts = gen.buildable_sorts();
    let mut checked = 0usize;
    let mut counter = 0u64;
    let mut nontrivial = 0usize;
    while checked < cases {
        let &sort = sorts.choose(&mut rng).expect("buildable sorts");
        let Some(raw) = gen.sample(sort, &mut rng) else {
            continue;
        };
        let base = normalize(&m.sig, &raw);
        let t1 = abstract_term(&m.sig, &base, 0.30, &mut rng);
        let t2 = abstract_term(&m.sig, &base, 0.30, &mut rng);
        let (sols, next) = unify(&m.sig, &t1, &t2, counter);
        let (t1r, _) = fresh_rename(&strip_marks(&t1), counter);
        counter = next;
        if !sols.is_empty() {
            nontrivial += 1;
        }
        for sol in &sols.outcomes {
            let a = term::apply_norm(&m.sig, &sol.subst, &t1r);
            let b = term::apply_norm(&m.sig, &sol.subst, &strip_marks(&t2));
            if a != b {
                return Err(format!(
                    "unsound unifier for `{}` =? `{}`: applies to `{}` vs `{}`",
                    describe(m, &t1),
                    describe(m, &t2),
                    describe(m, &a),
                    describe(m, &b)
                ));
            }
        }
        checked += 1;
    }
    if nontrivial < cases / 4 {
        return Err(format!(
            "unification generator degenerated: only {nontrivial}/{cases} pairs unified"
        ));
    }
    Ok(())
}

/// normalize is idempotent on random raw terms.
pub fn check_normalize_idempotent(
    m: &SemanticsModule,
    cases: usize,
    seed: u64,
) -> Result<(), String> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gen = TermGen::new(&m.sig);
    let sorts = gen.buildable_sorts();
    let mut checked = 0usize;
    while checked < cases {
        let &sort = sorts.choose(&mut rng).expect("buildable sorts");
        let Some(raw) = gen.sample(sort, &mut rng) else {
            continue;
        };
        let once = normalize(&m.sig, &raw);
        let twice = normalize(&m.sig, &once);
        if once != twice {
            return Err(format!(
                "normalize not idempotent on `{}`: `{}` then `{}`",
                describe(m, &raw),
                describe(m, &once),
                describe(m, &twice)
            ));
        }
        checked += 1;
    }
    Ok(())
}

/// Orange/olive classification must be a function of the semantics, not
/// of hypertree traversal order, and the two sets must never overlap.
pub fn check_classification_order_invariance(
    m: &SemanticsModule,
    permutations: usize,
    seed: u64,
) -> Result<(), String> {
    use rand::SeedableRng;
    let baseline = semslice::hypertree::synthesize(m);
    let n = baseline.tree.roots.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for round in 0..permutations {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let tree = semslice::hypertree::build_hypertree_ordered(m, &order);
        let mut orange = Vec::new();
        let mut olive = Vec::new();
        for (i, root) in tree.roots.iter().enumerate() {
            let hit = root.seeded
                || tree.reachable(i).iter().any(|&id| tree.nodes[id].witness);
            if hit {
                orange.push(root.label.clone());
            } else {
                olive.push(root.label.clone());
            }
        }
        if orange != baseline.orange || olive != baseline.olive {
            return Err(format!(
                "classification drifted under permutation {round}: orange {orange:?} vs {:?}",
                baseline.orange
            ));
        }
        if orange.iter().any(|l| olive.contains(l)) {
            return Err(format!("orange and olive overlap under permutation {round}"));
        }
    }
    Ok(())
}

/// The refinement partition must not depend on the order runs are fed in.
pub fn check_partition_run_order_invariance(
    m: &SemanticsModule,
    programs: usize,
    permutations: usize,
    seed: u64,
) -> Result<(), String> {
    use rand::SeedableRng;
    let tests = semslice::refine::generate_tests(m, seed, programs, 3)
        .map_err(|e| format!("generate_tests failed: {e}"))?;
    let mut runs = Vec::new();
    for tc in tests {
        let trace = semslice::engine::run_program(m, &tc.program, &tc.inputs, 10_000)
            .map_err(|e| format!("run failed: {e}"))?;
        runs.push((tc.program, trace));
    }
    let cands = semslice::hypertree::synthesize(m).candidates;
    let base = semslice::refine::classify(m, &cands, &runs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for round in 0..permutations {
        runs.shuffle(&mut rng);
        let again = semslice::refine::classify(m, &cands, &runs);
        if again != base {
            return Err(format!("partition drifted under run permutation {round}"));
        }
    }
    Ok(())
}

/// Criterion-extension monotonicity of the static slicer on a corpus
/// entry, used as a spot check by the acceptance run.
pub fn check_slice_monotone(
    lab: &super::Lab,
    program: &Term,
    crit_small: &[String],
    crit_big: &[String],
) -> Result<(), String> {
    use semslice::slicer::{slice, Criterion};
    let small = slice(&lab.m, program, &Criterion::vars(crit_small), &lab.facts, &lab.part)
        .map_err(|e| e.to_string())?;
    let big = slice(&lab.m, program, &Criterion::vars(crit_big), &lab.facts, &lab.part)
        .map_err(|e| e.to_string())?;
    if !small.kept.is_subset(&big.kept) {
        return Err(format!(
            "slice not monotone: {:?} vs {:?}",
            small.kept, big.kept
        ));
    }
    Ok(())
}

/// Substitutions pretty-print in debug output; keep the helper close by.
pub fn subst_len(s: &Subst) -> usize {
    s.0.len()
}

/// Marks never change the preorder skeleton seen through unmarked eyes.
pub fn check_mark_transparency(m: &SemanticsModule, cases: usize, seed: u64) -> Result<(), String> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gen = TermGen::new(&m.sig);
    let sorts = gen.buildable_sorts();
    let mut checked = 0usize;
    while checked < cases {
        let &sort = sorts.choose(&mut rng).expect("buildable sorts");
        let Some(raw) = gen.sample(sort, &mut rng) else {
            continue;
        };
        let plain = normalize(&m.sig, &raw);
        let marked = sprinkle_marks(&plain, 0.25, &mut rng);
        if strip_marks(&marked) != plain {
            return Err(format!("strip_marks lost structure on `{}`", describe(m, &plain)));
        }
        let a = preorder_subterms(&m.sig, &plain, None).len();
        let b = preorder_subterms(&m.sig, &marked, None).len();
        if a != b {
            return Err(format!(
                "marks changed the preorder length on `{}`: {a} vs {b}",
                describe(m, &plain)
            ));
        }
        checked += 1;
    }
    Ok(())
}
