//! Order-sorted signatures: sorts, the subsort relation, and operator
//! declarations with structural attributes.
//!
//! A [`Signature`] is assembled incrementally by the semantics-file parser and
//! then used read-only by every later phase: least-sort computation,
//! normalization, matching, and the policy analyses all consult the same
//! tables. Sorts and operators are referred to by dense ids so that terms stay
//! small and comparisons stay cheap.

use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Index of a sort in its [`Signature`].
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize)]
pub struct SortId(pub u32);

/// Index of an operator declaration in its [`Signature`].
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize)]
pub struct OpId(pub u32);

/// Structural attributes of an operator declaration.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct OpAttrs {
    /// Declared with `ctor`: part of data, not defined away by equations.
    pub ctor: bool,
    /// Associative; such terms are kept flattened (>= 2 arguments).
    pub assoc: bool,
    /// Commutative; arguments are kept in a canonical order.
    pub comm: bool,
    /// Identity element, restricted to a declared nullary constant.
    pub id_elem: Option<OpId>,
}

/// One operator declaration. Overloaded names share `name` but get
/// distinct ids; `mixfix` is derived from underscores in the name.
#[derive(Clone, Debug, Serialize)]
pub struct OpDecl {
    pub name: String,
    pub args: Vec<SortId>,
    pub coarity: SortId,
    pub attrs: OpAttrs,
    /// Name of the module that declared this operator.
    pub module: String,
}

impl OpDecl {
    pub fn arity(&self) -> usize {
        self.args.len()
    }

    pub fn is_mixfix(&self) -> bool {
        self.name.contains('_')
    }

    /// Literal token chunks of a mixfix name, e.g. `<_,_>` -> ["<", ",", ">"].
    /// Leading/trailing empties mark argument positions at the edges.
    pub fn chunks(&self) -> Vec<String> {
        self.name.split('_').map(str::to_string).collect()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SigError {
    #[error("duplicate sort `{0}`")]
    DuplicateSort(String),
    #[error("unknown sort `{0}`")]
    UnknownSort(String),
    #[error("identity of `{op}` must be a declared constant, got `{id}`")]
    BadIdentity { op: String, id: String },
    #[error("operator `{op}`: associative operators must be binary")]
    AssocArity { op: String },
    #[error("no least sort for `{op}` applied to ({args}); overloads are incomparable")]
    NoLeastSort { op: String, args: String },
}

/// Immutable signature tables shared by all analyses.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Signature {
    sorts: Vec<String>,
    sort_ids: BTreeMap<String, SortId>,
    /// Declared module of each sort, parallel to `sorts`.
    sort_module: Vec<String>,
    /// leq[a][b] == true iff sort a <= sort b (reflexive-transitive).
    leq: Vec<Vec<bool>>,
    /// Direct subsort edges as declared, before closure.
    subsort_edges: Vec<(SortId, SortId)>,
    ops: Vec<OpDecl>,
    /// All op ids sharing a name, in declaration order.
    by_name: BTreeMap<String, Vec<OpId>>,
    /// How many declarations share each op's name, parallel to `ops`.
    family_size: Vec<u32>,
}

impl Signature {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_sort(&mut self, name: &str, module: &str) -> Result<SortId, SigError> {
        if self.sort_ids.contains_key(name) {
            return Err(SigError::DuplicateSort(name.to_string()));
        }
        let id = SortId(self.sorts.len() as u32);
        self.sorts.push(name.to_string());
        self.sort_module.push(module.to_string());
        self.sort_ids.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn sort_id(&self, name: &str) -> Option<SortId> {
        self.sort_ids.get(name).copied()
    }

    pub fn sort_name(&self, s: SortId) -> &str {
        &self.sorts[s.0 as usize]
    }

    pub fn sort_module(&self, s: SortId) -> &str {
        &self.sort_module[s.0 as usize]
    }

    pub fn sort_count(&self) -> usize {
        self.sorts.len()
    }

    pub fn sorts(&self) -> impl Iterator<Item = SortId> {
        (0..self.sorts.len() as u32).map(SortId)
    }

    pub fn add_subsort(&mut self, sub: SortId, sup: SortId) {
        self.subsort_edges.push((sub, sup));
    }

    /// Recompute the reflexive-transitive closure of the subsort edges.
    /// Called after each batch of declarations; idempotent.
    pub fn close_subsorts(&mut self) {
        let n = self.sorts.len();
        let mut leq = vec![vec![false; n]; n];
        for (i, row) in leq.iter_mut().enumerate() {
            row[i] = true;
        }
        for &(a, b) in &self.subsort_edges {
            leq[a.0 as usize][b.0 as usize] = true;
        }
        // Floyd-Warshall over a boolean matrix; sort counts are tiny.
        for k in 0..n {
            for i in 0..n {
                if leq[i][k] {
                    for j in 0..n {
                        if leq[k][j] {
                            leq[i][j] = true;
                        }
                    }
                }
            }
        }
        self.leq = leq;
    }

    /// s1 <= s2 in the subsort order.
    pub fn is_subsort(&self, s1: SortId, s2: SortId) -> bool {
        self.leq[s1.0 as usize][s2.0 as usize]
    }

    /// Strictly below: s1 <= s2 and s1 != s2.
    pub fn is_proper_subsort(&self, s1: SortId, s2: SortId) -> bool {
        s1 != s2 && self.is_subsort(s1, s2)
    }

    /// True if the sorts are related in either direction.
    pub fn comparable(&self, s1: SortId, s2: SortId) -> bool {
        self.is_subsort(s1, s2) || self.is_subsort(s2, s1)
    }

    pub fn has_proper_subsort(&self, s: SortId) -> bool {
        self.sorts().any(|t| self.is_proper_subsort(t, s))
    }

    pub fn add_op(
        &mut self,
        name: &str,
        args: Vec<SortId>,
        coarity: SortId,
        attrs: OpAttrs,
        module: &str,
    ) -> Result<OpId, SigError> {
        if attrs.assoc && args.len() != 2 {
            return Err(SigError::AssocArity { op: name.to_string() });
        }
        let id = OpId(self.ops.len() as u32);
        self.ops.push(OpDecl {
            name: name.to_string(),
            args,
            coarity,
            attrs,
            module: module.to_string(),
        });
        self.family_size.push(0);
        let family = self.by_name.entry(name.to_string()).or_default();
        family.push(id);
        let n = family.len() as u32;
        for &o in family.iter() {
            self.family_size[o.0 as usize] = n;
        }
        Ok(id)
    }

    /// Number of declarations sharing this op's name.
    pub fn overload_count(&self, id: OpId) -> usize {
        self.family_size[id.0 as usize] as usize
    }

    pub fn op(&self, id: OpId) -> &OpDecl {
        &self.ops[id.0 as usize]
    }

    pub fn op_count(&self) -> usize {
        self.ops.len()
    }

    pub fn ops(&self) -> impl Iterator<Item = (OpId, &OpDecl)> {
        self.ops.iter().enumerate().map(|(i, d)| (OpId(i as u32), d))
    }

    pub fn ops_named(&self, name: &str) -> &[OpId] {
        self.by_name.get(name).map(Vec::as_slice).unwrap_or(&[])
    }

    /// All nullary constants whose coarity fits below `sort`.
    pub fn constants_below(&self, sort: SortId) -> Vec<OpId> {
        self.ops()
            .filter(|(_, d)| d.args.is_empty() && self.is_subsort(d.coarity, sort))
            .map(|(id, _)| id)
            .collect()
    }

    /// Pick the declaration of `name` with the least coarity whose argument
    /// sorts accept `arg_sorts`. Errors if several fit with incomparable
    /// coarities (the signature is then not preregular at this application).
    pub fn resolve_op(&self, name: &str, arg_sorts: &[SortId]) -> Result<Option<OpId>, SigError> {
        let mut fitting: Vec<OpId> = Vec::new();
        for &id in self.ops_named(name) {
            let d = self.op(id);
            if d.args.len() == arg_sorts.len()
                && d.args
                    .iter()
                    .zip(arg_sorts)
                    .all(|(&want, &got)| self.is_subsort(got, want))
            {
                fitting.push(id);
            }
        }
        if fitting.is_empty() {
            return Ok(None);
        }
        // Keep the declarations whose coarity is minimal.
        let mut minimal: Vec<OpId> = Vec::new();
        'outer: for &c in &fitting {
            for &o in &fitting {
                if o != c && self.is_proper_subsort(self.op(o).coarity, self.op(c).coarity) {
                    continue 'outer;
                }
            }
            minimal.push(c);
        }
        let first = minimal[0];
        if minimal
            .iter()
            .any(|&m| self.op(m).coarity != self.op(first).coarity)
        {
            return Err(SigError::NoLeastSort {
                op: name.to_string(),
                args: arg_sorts
                    .iter()
                    .map(|&s| self.sort_name(s))
                    .collect::<Vec<_>>()
                    .join(" "),
            });
        }
        Ok(Some(first))
    }

    /// Operators declared in a given module, in declaration order.
    pub fn ops_in_module<'a>(&'a self, module: &'a str) -> impl Iterator<Item = (OpId, &'a OpDecl)> {
        self.ops().filter(move |(_, d)| d.module == module)
    }

    /// Sorts declared in a given module.
    pub fn sorts_in_module(&self, module: &str) -> BTreeSet<SortId> {
        self.sorts()
            .filter(|&s| self.sort_module(s) == module)
            .collect()
    }
}
