//! Hypertree synthesis: which instructions can update execution context.
//!
//! Starting from the rules that consume instructions, the hypertree chases
//! every term a rule forces to be evaluated: both sides of its conditions,
//! and for equations their right-hand sides as well. Rule right-hand sides
//! are never chased (they are the result, not work performed), and
//! left-hand sides are never chased (matching observes, it does not
//! compute). Each chased term becomes a node holding every equation or rule
//! whose left-hand side unifies with it; a term nothing defines becomes an
//! operator leaf. Expansion happens once per node, which closes cycles.
//!
//! A root is a context-update candidate (orange) when its subtree contains
//! a witness: a stack-operator leaf, an equation that changes a stack
//! operator count, or a member rule that runs a nested instruction in its
//! condition. Roots without a witness are plain sequential steps (olive).

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::module::{Condition, RuleDecl, SemanticsModule};
use crate::policies::{self, StackPolicy};
use crate::sig::OpId;
use crate::term::{self, Term};

/// Reference to one equation or rule in a node's member set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct MemberRef {
    pub is_rule: bool,
    pub index: usize,
}

impl MemberRef {
    pub fn decl<'a>(&self, m: &'a SemanticsModule) -> &'a RuleDecl {
        if self.is_rule {
            &m.rules[self.index]
        } else {
            &m.eqs[self.index]
        }
    }
}

#[derive(Debug, Clone)]
pub enum NodeKind {
    /// All equations and rules whose left-hand side unifies with the
    /// chased term. Equations first, then rules, in declaration order.
    Interior(Vec<MemberRef>),
    /// A term nothing defines; identified by its head operator.
    Leaf(OpId),
}

#[derive(Debug, Clone)]
pub struct HNode {
    pub kind: NodeKind,
    /// Child node ids in chase order.
    pub children: Vec<usize>,
    /// True when this node alone proves a context update.
    pub witness: bool,
}

#[derive(Debug, Clone)]
pub struct RootEntry {
    pub label: String,
    pub rule_index: usize,
    /// Root runs a nested instruction in a condition (implicit stack push).
    pub seeded: bool,
    pub children: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum NodeKey {
    Members(Vec<MemberRef>),
    Leaf(OpId),
}

#[derive(Debug, Clone, Default)]
pub struct Hypertree {
    pub nodes: Vec<HNode>,
    pub roots: Vec<RootEntry>,
    keys: BTreeMap<NodeKey, usize>,
}

/// Where a chased term hangs: under a root or under an interior node.
#[derive(Debug, Clone, Copy)]
enum Parent {
    Root(usize),
    Node(usize),
}

impl Hypertree {
    fn attach(&mut self, parent: Parent, child: usize) {
        let children = match parent {
            Parent::Root(i) => &mut self.roots[i].children,
            Parent::Node(i) => &mut self.nodes[i].children,
        };
        children.push(child);
    }

    /// Render a node the way audits print it: member label sets in braces,
    /// leaves as bare operator names.
    pub fn node_label(&self, m: &SemanticsModule, id: usize) -> String {
        match &self.nodes[id].kind {
            NodeKind::Leaf(op) => m.sig.op(*op).name.clone(),
            NodeKind::Interior(members) => {
                let labels: Vec<&str> =
                    members.iter().map(|mr| mr.decl(m).label.as_str()).collect();
                format!("{{{}}}", labels.join(" "))
            }
        }
    }

    /// Node ids reachable from a root, in breadth-first order.
    pub fn reachable(&self, root: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<usize> = self.roots[root].children.iter().copied().collect();
        while let Some(id) = queue.pop_front() {
            if seen.insert(id) {
                queue.extend(self.nodes[id].children.iter().copied());
            }
        }
        seen
    }
}

/// The rules the hypertree grows from. Delegates to the module so every
/// analysis agrees on what a root is.
pub fn collect_root_rules(m: &SemanticsModule) -> Vec<&RuleDecl> {
    m.root_rules()
}

/// The terms a condition forces the engine to evaluate, in source order.
pub fn traverse_cond(c: &Condition) -> Vec<&Term> {
    match c {
        Condition::Equal { lhs, rhs } => vec![lhs, rhs],
        Condition::Match { pattern, subject } => vec![pattern, subject],
        Condition::Membership { term, .. } => vec![term],
        Condition::Rewrite { subject, pattern } => vec![subject, pattern],
    }
}

/// Everything a member makes the engine chase: condition sides always,
/// plus the right-hand side for equations.
fn member_terms<'a>(decl: &'a RuleDecl) -> Vec<&'a Term> {
    let mut out: Vec<&Term> = Vec::new();
    for c in &decl.conds {
        out.extend(traverse_cond(c));
    }
    if !decl.is_rule {
        out.push(&decl.rhs);
    }
    out
}

/// Application subterms of `t` in preorder; variables are skipped.
fn app_subterms<'a>(m: &SemanticsModule, t: &'a Term) -> Vec<&'a Term> {
    term::preorder_subterms(&m.sig, t, None)
        .into_iter()
        .map(|(_, sub)| sub)
        .filter(|sub| matches!(sub.unmarked(), Term::App(..)))
        .collect()
}

fn unifying_members(m: &SemanticsModule, t: &Term, counter: &mut u64) -> Vec<MemberRef> {
    let mut out = Vec::new();
    for (index, e) in m.eqs.iter().enumerate() {
        let (ok, c) = crate::matching::unifiable(&m.sig, &e.lhs, t, *counter);
        *counter = c;
        if ok {
            out.push(MemberRef { is_rule: false, index });
        }
    }
    for (index, r) in m.rules.iter().enumerate() {
        let (ok, c) = crate::matching::unifiable(&m.sig, &r.lhs, t, *counter);
        *counter = c;
        if ok {
            out.push(MemberRef { is_rule: true, index });
        }
    }
    out
}

/// An equation is hot when applying it changes how many stack constructor
/// applications the term holds: it pushed or popped something.
fn hot_eq(decl: &RuleDecl, stack_ops: &BTreeSet<OpId>) -> bool {
    stack_ops.iter().any(|&op| {
        policies::count_op(&decl.rhs, op) != policies::count_op(&decl.lhs, op)
    })
}

fn node_witness(
    m: &SemanticsModule,
    members: &[MemberRef],
    implicit: &BTreeSet<String>,
    stack_ops: &BTreeSet<OpId>,
) -> bool {
    members.iter().any(|mr| {
        let decl = mr.decl(m);
        if mr.is_rule {
            implicit.contains(&decl.label)
        } else {
            hot_eq(decl, stack_ops)
        }
    })
}

/// Grow the hypertree from the pending work. Four cases drive the loop:
/// no work left; a member waiting to contribute its terms; a term some
/// declarations define (an interior node, expanded on first sight); and a
/// term nothing defines (an operator leaf).
fn traverse_hypertree(
    m: &SemanticsModule,
    labels: &mut VecDeque<(usize, MemberRef)>,
    terms: &mut VecDeque<(Parent, Term)>,
    cu: &TraversalContext,
    acc: &mut Hypertree,
) {
    let mut counter: u64 = 1;
    loop {
        if let Some((node, member)) = labels.pop_front() {
            let decl = member.decl(m);
            for src in member_terms(decl) {
                for sub in app_subterms(m, src) {
                    terms.push_back((Parent::Node(node), sub.clone()));
                }
            }
            continue;
        }
        let Some((parent, t)) = terms.pop_front() else {
            return;
        };
        let members = unifying_members(m, &t, &mut counter);
        if members.is_empty() {
            let op = t.head().expect("chased terms are applications");
            let key = NodeKey::Leaf(op);
            let id = *acc.keys.entry(key).or_insert_with(|| {
                acc.nodes.push(HNode {
                    kind: NodeKind::Leaf(op),
                    children: Vec::new(),
                    witness: cu.stack_ops.contains(&op),
                });
                acc.nodes.len() - 1
            });
            acc.attach(parent, id);
        } else {
            let key = NodeKey::Members(members.clone());
            match acc.keys.get(&key) {
                Some(&id) => acc.attach(parent, id),
                None => {
                    let witness = node_witness(m, &members, &cu.implicit, &cu.stack_ops);
                    acc.nodes.push(HNode {
                        kind: NodeKind::Interior(members.clone()),
                        children: Vec::new(),
                        witness,
                    });
                    let id = acc.nodes.len() - 1;
                    acc.keys.insert(key, id);
                    acc.attach(parent, id);
                    for member in members {
                        labels.push_back((id, member));
                    }
                }
            }
        }
    }
}

struct TraversalContext {
    stack_ops: BTreeSet<OpId>,
    implicit: BTreeSet<String>,
}

fn traversal_context(m: &SemanticsModule) -> TraversalContext {
    let policy: StackPolicy = policies::infer_stack_policy(m);
    TraversalContext {
        stack_ops: policy.all_stack_ops,
        implicit: policies::infer_implicit_stack_rules(m).into_iter().collect(),
    }
}

/// Build the hypertree with roots in declaration order.
pub fn build_hypertree(m: &SemanticsModule) -> Hypertree {
    let order: Vec<usize> = (0..m.root_rules().len()).collect();
    build_hypertree_ordered(m, &order)
}

/// Build the hypertree processing roots in the given order (indices into
/// the declaration-ordered root list). The root list of the result is
/// always in declaration order; only expansion order varies. Used to check
/// that classification does not depend on traversal order.
pub fn build_hypertree_ordered(m: &SemanticsModule, order: &[usize]) -> Hypertree {
    let roots = m.root_rules();
    let cu = traversal_context(m);
    let mut acc = Hypertree {
        roots: roots
            .iter()
            .map(|r| RootEntry {
                label: r.label.clone(),
                rule_index: r.index,
                seeded: cu.implicit.contains(&r.label),
                children: Vec::new(),
            })
            .collect(),
        ..Hypertree::default()
    };
    let mut labels = VecDeque::new();
    let mut terms = VecDeque::new();
    for &i in order {
        for src in roots[i].conds.iter().flat_map(traverse_cond) {
            for sub in app_subterms(m, src) {
                terms.push_back((Parent::Root(i), sub.clone()));
            }
        }
        traverse_hypertree(m, &mut labels, &mut terms, &cu, &mut acc);
    }
    acc
}

/// Side effect of one instruction operator on memory, as argument
/// positions of the operator.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SideEffectFact {
    /// Arguments naming a variable the instruction writes.
    pub dest: BTreeSet<usize>,
    /// Arguments whose variables or expressions the instruction reads.
    pub src: BTreeSet<usize>,
    /// The instruction writes variables its arguments do not name
    /// (parameter binding in a call, for example).
    pub dest_unresolved: bool,
}

/// The instruction applications a root's left-hand side consumes, skipping
/// through sequencing glue. Only the topmost instruction application
/// counts; its arguments belong to it.
pub(crate) fn instruction_apps<'a>(m: &SemanticsModule, t: &'a Term) -> Vec<&'a Term> {
    let Some(instr) = m.meta.instruction_sort else {
        return Vec::new();
    };
    fn go<'a>(
        m: &SemanticsModule,
        t: &'a Term,
        instr: crate::sig::SortId,
        out: &mut Vec<&'a Term>,
    ) {
        match t.unmarked() {
            Term::Var(_) => {}
            Term::App(op, args) => {
                let is_instr = m.sig.is_subsort(m.sig.op(*op).coarity, instr);
                if is_instr && !m.meta.sequencing_ops.contains(op) {
                    out.push(t);
                    return;
                }
                for a in args {
                    go(m, a, instr, out);
                }
            }
            Term::Marked(..) => unreachable!(),
        }
    }
    let mut out = Vec::new();
    go(m, t, instr, &mut out);
    out
}

/// Variable-argument position of a read or write operator.
fn var_arg_positions(m: &SemanticsModule, op: OpId) -> Vec<usize> {
    let Some(var_sort) = m.meta.variable_sort else {
        return Vec::new();
    };
    let d = m.sig.op(op);
    (0..d.arity())
        .filter(|&i| m.sig.comparable(d.args[i], var_sort))
        .collect()
}

/// Infer per-operator side effect facts from the root rules. Reads are
/// variables handed to a read operator or mentioned in an evaluated
/// (non-instruction) rewrite subject; writes are variables handed to a
/// write operator. Facts from several roots for the same operator merge.
pub fn infer_side_effects(m: &SemanticsModule) -> BTreeMap<OpId, SideEffectFact> {
    let reads = policies::infer_read_ops(m);
    let writes = policies::infer_write_ops(m);
    let mem_sorts = m
        .meta
        .memory_module
        .as_deref()
        .map(|mm| m.sig.sorts_in_module(mm))
        .unwrap_or_default();
    let mut out: BTreeMap<OpId, SideEffectFact> = BTreeMap::new();
    for root in m.root_rules() {
        // Terms the rule computes with: condition sides plus the result.
        let mut computed: Vec<&Term> = vec![&root.rhs];
        let mut eval_subjects: Vec<&Term> = Vec::new();
        for c in &root.conds {
            computed.extend(traverse_cond(c));
            if let Condition::Rewrite { subject, .. } = c {
                if !m.has_instruction_subterm(subject) {
                    eval_subjects.push(subject);
                }
            }
        }
        let mut src_vars: BTreeSet<String> = BTreeSet::new();
        let mut dest_vars: BTreeSet<String> = BTreeSet::new();
        let mut unresolved = false;
        for subj in &eval_subjects {
            for v in subj.vars() {
                src_vars.insert(v.name.clone());
            }
        }
        for t in &computed {
            for (_, sub) in term::preorder_subterms(&m.sig, t, None) {
                let Term::App(op, args) = sub.unmarked() else {
                    continue;
                };
                let var_positions = var_arg_positions(m, *op);
                if reads.contains(op) {
                    for &i in &var_positions {
                        if let Term::Var(v) = args[i].unmarked() {
                            src_vars.insert(v.name.clone());
                        }
                    }
                }
                if writes.contains(op) {
                    let d = m.sig.op(*op);
                    for (i, a) in args.iter().enumerate() {
                        let is_var_pos = var_positions.contains(&i);
                        let is_mem_pos = i < d.arity() && mem_sorts.contains(&d.args[i]);
                        match a.unmarked() {
                            Term::Var(v) if is_var_pos => {
                                dest_vars.insert(v.name.clone());
                            }
                            _ if is_var_pos => unresolved = true,
                            Term::Var(v) if !is_mem_pos => {
                                src_vars.insert(v.name.clone());
                            }
                            _ => {}
                        }
                    }
                }
            }
        }
        for app in instruction_apps(m, &root.lhs) {
            let Term::App(op, args) = app.unmarked() else {
                continue;
            };
            let fact = out.entry(*op).or_default();
            for (i, a) in args.iter().enumerate() {
                let names: BTreeSet<String> =
                    a.vars().iter().map(|v| v.name.clone()).collect();
                if names.iter().any(|n| src_vars.contains(n)) {
                    fact.src.insert(i);
                }
                if names.iter().any(|n| dest_vars.contains(n)) {
                    fact.dest.insert(i);
                }
            }
            // A write to a variable no argument names cannot be attributed.
            let arg_names: BTreeSet<String> = args
                .iter()
                .flat_map(|a| a.vars())
                .map(|v| v.name.clone())
                .collect();
            if unresolved || dest_vars.iter().any(|d| !arg_names.contains(d)) {
                fact.dest_unresolved = true;
            }
        }
    }
    out
}

/// Everything synthesis produces for one semantics.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub tree: Hypertree,
    /// Labels of roots that can update context, declaration order.
    pub orange: Vec<String>,
    /// Labels of roots that cannot, declaration order.
    pub olive: Vec<String>,
    /// Instruction operators consumed by orange roots (sequencing removed).
    pub candidates: BTreeSet<OpId>,
    /// One witness line per orange root, declaration order.
    pub audits: Vec<(String, String)>,
    pub side_effects: BTreeMap<OpId, SideEffectFact>,
}

/// Depth-first search for the nearest witness, children in chase order.
/// Returns the node path from just below the root to the witness.
fn witness_path(tree: &Hypertree, start: &[usize]) -> Option<Vec<usize>> {
    fn go(tree: &Hypertree, id: usize, seen: &mut BTreeSet<usize>, path: &mut Vec<usize>) -> bool {
        if !seen.insert(id) {
            return false;
        }
        path.push(id);
        if tree.nodes[id].witness {
            return true;
        }
        for &c in &tree.nodes[id].children {
            if go(tree, c, seen, path) {
                return true;
            }
        }
        path.pop();
        false
    }
    let mut seen = BTreeSet::new();
    let mut path = Vec::new();
    for &c in start {
        if go(tree, c, &mut seen, &mut path) {
            return Some(path);
        }
    }
    None
}

/// Classify every root and assemble candidates, audits, and side effects.
pub fn synthesize(m: &SemanticsModule) -> Synthesis {
    let tree = build_hypertree(m);
    let mut orange = Vec::new();
    let mut olive = Vec::new();
    let mut audits = Vec::new();
    let mut candidates = BTreeSet::new();
    for root in tree.roots.iter() {
        let path = witness_path(&tree, &root.children);
        let is_orange = root.seeded || path.is_some();
        if is_orange {
            orange.push(root.label.clone());
            candidates.extend(m.instruction_ops_in(&m.rules[root.rule_index].lhs));
            let rendered = match &path {
                Some(p) => {
                    let mut parts = vec![root.label.clone()];
                    parts.extend(p.iter().map(|&id| tree.node_label(m, id)));
                    parts.join(" -> ")
                }
                None => format!("{} (nested instruction run in condition)", root.label),
            };
            audits.push((root.label.clone(), rendered));
        } else {
            olive.push(root.label.clone());
        }
    }
    Synthesis {
        tree,
        orange,
        olive,
        candidates,
        audits,
        side_effects: infer_side_effects(m),
    }
}

/// Instruction operators that may update context: the orange candidates.
pub fn infer_context_update_candidates(m: &SemanticsModule) -> BTreeSet<OpId> {
    synthesize(m).candidates
}
