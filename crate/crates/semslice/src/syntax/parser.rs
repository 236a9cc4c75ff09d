//! Parsing: mixfix terms, declarations, whole semantics files.
//!
//! Term parsing is sort-directed and exhaustive: every way to read a token
//! range as a term is computed (memoized per range and expected sort), and a
//! query must end with exactly one candidate after normalization. Anything
//! else is reported as an error asking for parentheses, never resolved by a
//! hidden precedence table.
//!
//! Declarations are statement-oriented: a statement runs to the first `.`
//! token at bracket depth zero. Rule bodies are split on `=>`, `if`, and
//! condition connectives by trying each plausible split point until both
//! sides parse, which keeps keywords usable inside object-language syntax
//! (an `if_then_else_fi` operator does not confuse the `crl ... if ...`
//! condition marker).

use super::lexer::{depths, lex, Lexed, Tok};
use crate::module::{
    Condition, Diagnostic, Metadata, ModuleInfo, Numerals, RuleDecl, SemanticsModule,
};
use crate::sig::{OpAttrs, OpId, Signature, SortId};
use crate::term::{least_sort, normalize, Term};
use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::rc::Rc;
use thiserror::Error;

#[derive(Debug, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: u32,
    pub message: String,
}

impl ParseError {
    fn new(line: u32, message: impl Into<String>) -> Self {
        ParseError { line, message: message.into() }
    }
}

/// What identifiers may resolve to while parsing a term.
#[derive(Clone, Copy)]
pub struct TermScope<'a> {
    pub sig: &'a Signature,
    /// Rule variables in scope; `None` for ground (program) terms.
    pub vars: Option<&'a BTreeMap<String, SortId>>,
    pub numerals: Option<&'a Numerals>,
    /// Allow `$NAME` placeholders (metadata templates).
    pub placeholders: bool,
}

struct Mixfix {
    op: OpId,
    /// Literal chunks, each lexed to a token sequence.
    chunks: Vec<Vec<Tok>>,
    leading: bool,
    trailing: bool,
}

/// Memoizing parser over one token slice.
pub struct TermParser<'a> {
    scope: TermScope<'a>,
    mixfix: Vec<Mixfix>,
    juxt: Vec<OpId>,
    toks: &'a [Tok],
    depth: Vec<i32>,
    memo: RefCell<HashMap<(usize, usize, Option<SortId>), Rc<Vec<Term>>>>,
}

impl<'a> TermParser<'a> {
    pub fn new(scope: TermScope<'a>, toks: &'a [Tok]) -> Self {
        let mut mixfix = Vec::new();
        let mut juxt = Vec::new();
        for (op, decl) in scope.sig.ops() {
            if decl.name == "__" {
                juxt.push(op);
                continue;
            }
            if !decl.is_mixfix() {
                continue;
            }
            // Adjacent underscores other than pure juxtaposition are not
            // supported; validation flags them, the parser skips them.
            if decl.name.contains("__") {
                continue;
            }
            let pieces: Vec<&str> = decl.name.split('_').collect();
            let leading = decl.name.starts_with('_');
            let trailing = decl.name.ends_with('_');
            let chunks: Vec<Vec<Tok>> = pieces
                .iter()
                .filter(|p| !p.is_empty())
                .map(|p| lex(p).toks)
                .collect();
            if chunks.is_empty() {
                continue;
            }
            let slots = (chunks.len() - 1) + usize::from(leading) + usize::from(trailing);
            if slots != decl.arity() {
                continue; // malformed name, reported by validate
            }
            mixfix.push(Mixfix { op, chunks, leading, trailing });
        }
        let depth = depths(toks);
        TermParser { scope, mixfix, juxt, toks, depth, memo: RefCell::new(HashMap::new()) }
    }

    fn fits(&self, t: &Term, want: Option<SortId>) -> bool {
        match want {
            None => true,
            Some(w) => self.scope.sig.is_subsort(least_sort(self.scope.sig, t), w),
        }
    }

    /// Matching closer of the opener at `i`, if the range is bracketed.
    fn close_of(&self, i: usize, limit: usize) -> Option<usize> {
        let open = &self.toks[i];
        let (inc, dec) = match open {
            Tok::LParen => (Tok::LParen, Tok::RParen),
            Tok::LBrace => (Tok::LBrace, Tok::RBrace),
            Tok::LBracket => (Tok::LBracket, Tok::RBracket),
            _ => return None,
        };
        let mut level = 0i32;
        for p in i..limit {
            if self.toks[p] == inc {
                level += 1;
            } else if self.toks[p] == dec {
                level -= 1;
                if level == 0 {
                    return Some(p);
                }
            }
        }
        None
    }

    /// All identity constants usable to fill an empty slot of sort `want`.
    fn identity_fills(&self, want: SortId) -> Vec<Term> {
        let sig = self.scope.sig;
        let mut out = BTreeSet::new();
        for (_, decl) in sig.ops() {
            if let Some(id) = decl.attrs.id_elem {
                if sig.is_subsort(sig.op(id).coarity, want) {
                    out.insert(Term::constant(id));
                }
            }
        }
        out.into_iter().collect()
    }

    /// All readings of `toks[i..j]` as a term fitting `want`.
    pub fn candidates(&self, i: usize, j: usize, want: Option<SortId>) -> Rc<Vec<Term>> {
        if let Some(hit) = self.memo.borrow().get(&(i, j, want)) {
            return Rc::clone(hit);
        }
        let mut out: BTreeSet<Term> = BTreeSet::new();
        if i < j {
            self.single_token(i, j, want, &mut out);
            self.parenthesized(i, j, want, &mut out);
            self.functional(i, j, want, &mut out);
            self.mixfix_all(i, j, want, &mut out);
            self.juxtaposed(i, j, want, &mut out);
        }
        let rc = Rc::new(out.into_iter().collect::<Vec<_>>());
        self.memo.borrow_mut().insert((i, j, want), Rc::clone(&rc));
        rc
    }

    fn push(&self, t: Term, want: Option<SortId>, out: &mut BTreeSet<Term>) {
        if self.fits(&t, want) {
            out.insert(t);
        }
    }

    fn single_token(&self, i: usize, j: usize, want: Option<SortId>, out: &mut BTreeSet<Term>) {
        if j - i != 1 {
            return;
        }
        let sig = self.scope.sig;
        match &self.toks[i] {
            Tok::Int(n) => {
                if let Some(num) = self.scope.numerals {
                    let mut t = Term::constant(num.zero);
                    for _ in 0..*n {
                        t = Term::App(num.succ, vec![t]);
                    }
                    self.push(t, want, out);
                }
                for &op in sig.ops_named(&n.to_string()) {
                    if sig.op(op).args.is_empty() {
                        self.push(Term::constant(op), want, out);
                    }
                }
            }
            Tok::Ident(name) => {
                if self.scope.placeholders && name.starts_with('$') {
                    if let Some(w) = want {
                        out.insert(Term::var(name, w));
                    }
                    return;
                }
                if let Some(vars) = self.scope.vars {
                    if let Some(&vs) = vars.get(name) {
                        self.push(Term::var(name, vs), want, out);
                        return; // variables shadow constants
                    }
                }
                for &op in sig.ops_named(name) {
                    if sig.op(op).args.is_empty() {
                        self.push(Term::constant(op), want, out);
                    }
                }
            }
            Tok::Punct(p) => {
                for &op in sig.ops_named(p) {
                    if sig.op(op).args.is_empty() {
                        self.push(Term::constant(op), want, out);
                    }
                }
            }
            _ => {}
        }
    }

    fn parenthesized(&self, i: usize, j: usize, want: Option<SortId>, out: &mut BTreeSet<Term>) {
        if self.toks[i] == Tok::LParen && self.close_of(i, j) == Some(j - 1) && j - i > 2 {
            for t in self.candidates(i + 1, j - 1, want).iter() {
                out.insert(t.clone());
            }
        }
    }

    fn functional(&self, i: usize, j: usize, want: Option<SortId>, out: &mut BTreeSet<Term>) {
        if j - i < 4 {
            return;
        }
        let Tok::Ident(name) = &self.toks[i] else { return };
        if self.toks[i + 1] != Tok::LParen || self.close_of(i + 1, j) != Some(j - 1) {
            return;
        }
        // Comma positions at argument depth. Commas inside `<_,_>`-style
        // mixfix arguments sit at the same bracket depth, so an n-ary call
        // may have more commas than argument separators; every way to pick
        // the separators is tried, slot-validated as it goes.
        let base = self.depth[i + 2];
        let commas: Vec<usize> = (i + 2..j - 1)
            .filter(|&p| self.toks[p] == Tok::Comma && self.depth[p] == base)
            .collect();
        let sig = self.scope.sig;
        for &op in sig.ops_named(name) {
            let decl = sig.op(op);
            if decl.is_mixfix() || decl.arity() == 0 || decl.arity() > commas.len() + 1 {
                continue;
            }
            let mut slot_lists: Vec<Rc<Vec<Term>>> = Vec::new();
            self.pick_args(op, &commas, 0, i + 2, j - 1, &mut slot_lists, want, out);
        }
    }

    /// Recursively choose which commas separate arguments of a call,
    /// validating each slot before committing to it.
    #[allow(clippy::too_many_arguments)]
    fn pick_args(
        &self,
        op: OpId,
        commas: &[usize],
        next_comma: usize,
        cursor: usize,
        close: usize,
        slot_lists: &mut Vec<Rc<Vec<Term>>>,
        want: Option<SortId>,
        out: &mut BTreeSet<Term>,
    ) {
        let decl = self.scope.sig.op(op);
        let k = slot_lists.len();
        if k + 1 == decl.arity() {
            // Last slot runs to the closing paren.
            if cursor >= close {
                return;
            }
            let list = self.candidates(cursor, close, Some(decl.args[k]));
            if !list.is_empty() {
                slot_lists.push(list);
                self.combine(op, slot_lists, want, out);
                slot_lists.pop();
            }
            return;
        }
        for (ci, &p) in commas.iter().enumerate().skip(next_comma) {
            if p <= cursor {
                continue;
            }
            let list = self.candidates(cursor, p, Some(decl.args[k]));
            if list.is_empty() {
                continue;
            }
            slot_lists.push(list);
            self.pick_args(op, commas, ci + 1, p + 1, close, slot_lists, want, out);
            slot_lists.pop();
        }
    }

    fn mixfix_all(&self, i: usize, j: usize, want: Option<SortId>, out: &mut BTreeSet<Term>) {
        for m in &self.mixfix {
            // Cheap prune: the first chunk's first token must occur in range.
            let probe = &m.chunks[0][0];
            if !self.toks[i..j].iter().any(|t| t == probe) {
                continue;
            }
            let mut placements = Vec::new();
            self.place(m, 0, i, i, j, self.depth[i], &mut Vec::new(), &mut placements);
            let decl = self.scope.sig.op(m.op);
            for slots in placements {
                let mut slot_lists: Vec<Rc<Vec<Term>>> = Vec::with_capacity(slots.len());
                let mut ok = true;
                for (k, &(a, b)) in slots.iter().enumerate() {
                    let w = decl.args[k];
                    let list = if a == b {
                        Rc::new(self.identity_fills(w))
                    } else {
                        self.candidates(a, b, Some(w))
                    };
                    if list.is_empty() {
                        ok = false;
                        break;
                    }
                    slot_lists.push(list);
                }
                if ok {
                    self.combine(m.op, &slot_lists, want, out);
                }
            }
        }
    }

    /// Enumerate chunk placements for a mixfix operator. `expected` is the
    /// bracket depth the next chunk must start at (chunks containing brackets
    /// shift it as they are placed).
    #[allow(clippy::too_many_arguments)]
    fn place(
        &self,
        m: &Mixfix,
        chunk_idx: usize,
        range_start: usize,
        cursor: usize,
        j: usize,
        expected: i32,
        slots: &mut Vec<(usize, usize)>,
        out: &mut Vec<Vec<(usize, usize)>>,
    ) {
        if chunk_idx == m.chunks.len() {
            if m.trailing {
                slots.push((cursor, j));
                out.push(slots.clone());
                slots.pop();
            } else if cursor == j {
                out.push(slots.clone());
            }
            return;
        }
        let chunk = &m.chunks[chunk_idx];
        let clen = chunk.len();
        let has_pre_slot = chunk_idx > 0 || m.leading;
        let last_start = if j >= clen { j - clen } else { return };
        if !has_pre_slot {
            // The chunk must sit exactly at the cursor.
            if cursor + clen <= j
                && self.depth[cursor] == expected
                && self.toks[cursor..cursor + clen] == chunk[..]
            {
                let next_expected = expected + net_depth(chunk);
                self.place(m, chunk_idx + 1, range_start, cursor + clen, j, next_expected, slots, out);
            }
            return;
        }
        let want = self.scope.sig.op(m.op).args[slots.len()];
        for p in cursor..=last_start {
            if self.depth[p] != expected || self.toks[p..p + clen] != chunk[..] {
                continue;
            }
            // Validate the slot before recursing; placements whose slot
            // cannot parse at the declared sort are dead ends.
            let viable = if p == cursor {
                !self.identity_fills(want).is_empty()
            } else {
                !self.candidates(cursor, p, Some(want)).is_empty()
            };
            if !viable {
                continue;
            }
            slots.push((cursor, p));
            let next_expected = expected + net_depth(chunk);
            self.place(m, chunk_idx + 1, range_start, p + clen, j, next_expected, slots, out);
            slots.pop();
        }
    }

    fn juxtaposed(&self, i: usize, j: usize, want: Option<SortId>, out: &mut BTreeSet<Term>) {
        if j - i < 2 {
            return;
        }
        let sig = self.scope.sig;
        for &op in &self.juxt {
            let decl = sig.op(op);
            let base = self.depth[i];
            for p in i + 1..j {
                if self.depth[p] != base {
                    continue;
                }
                let left = self.candidates(i, p, Some(decl.args[0]));
                if left.is_empty() {
                    continue;
                }
                let right = self.candidates(p, j, Some(decl.args[1]));
                if right.is_empty() {
                    continue;
                }
                self.combine(op, &[left, right], want, out);
            }
        }
    }

    /// Cartesian product of slot candidates, overload-resolved and
    /// normalized. Bounded; ambiguity beyond the cap is reported upstream
    /// because the final candidate count is what matters.
    fn combine(
        &self,
        op: OpId,
        slot_lists: &[Rc<Vec<Term>>],
        want: Option<SortId>,
        out: &mut BTreeSet<Term>,
    ) {
        const PRODUCT_CAP: usize = 64;
        let sig = self.scope.sig;
        let name = sig.op(op).name.clone();
        let mut picks = vec![0usize; slot_lists.len()];
        let mut produced = 0usize;
        loop {
            let args: Vec<Term> = picks
                .iter()
                .zip(slot_lists)
                .map(|(&k, list)| list[k].clone())
                .collect();
            let arg_sorts: Vec<SortId> = args.iter().map(|a| least_sort(sig, a)).collect();
            if let Ok(Some(best)) = sig.resolve_op(&name, &arg_sorts) {
                let t = normalize(sig, &Term::App(best, args));
                if self.fits(&t, want) {
                    out.insert(t);
                }
            }
            produced += 1;
            if produced >= PRODUCT_CAP {
                return;
            }
            // Odometer.
            let mut k = 0;
            loop {
                if k == picks.len() {
                    return;
                }
                picks[k] += 1;
                if picks[k] < slot_lists[k].len() {
                    break;
                }
                picks[k] = 0;
                k += 1;
            }
        }
    }
}

fn net_depth(chunk: &[Tok]) -> i32 {
    let mut d = 0;
    for t in chunk {
        match t {
            Tok::LParen | Tok::LBrace | Tok::LBracket => d += 1,
            Tok::RParen | Tok::RBrace | Tok::RBracket => d -= 1,
            _ => {}
        }
    }
    d
}

/// Parse a token range to exactly one term; `None` on zero or several.
fn try_unique(parser: &TermParser<'_>, i: usize, j: usize) -> Option<Term> {
    let cands = parser.candidates(i, j, None);
    if cands.len() == 1 {
        Some(cands[0].clone())
    } else {
        None
    }
}

fn render(toks: &[Tok]) -> String {
    toks.iter().map(Tok::text).collect::<Vec<_>>().join(" ")
}

/// Parse a standalone term string against a module (ground: rule variables
/// are not in scope, `$` placeholders are rejected).
pub fn parse_term(m: &SemanticsModule, text: &str) -> Result<Term, ParseError> {
    parse_with(m, text, false, false)
}

/// Parse a pattern string: rule variables are in scope.
pub fn parse_pattern(m: &SemanticsModule, text: &str) -> Result<Term, ParseError> {
    parse_with(m, text, true, false)
}

/// Parse a metadata template: placeholders allowed, variables not.
pub fn parse_template(m: &SemanticsModule, text: &str) -> Result<Term, ParseError> {
    parse_with(m, text, false, true)
}

fn parse_with(
    m: &SemanticsModule,
    text: &str,
    with_vars: bool,
    placeholders: bool,
) -> Result<Term, ParseError> {
    let lexed = lex(text);
    if lexed.toks.is_empty() {
        return Err(ParseError::new(1, "empty term"));
    }
    let scope = TermScope {
        sig: &m.sig,
        vars: if with_vars { Some(&m.vars) } else { None },
        numerals: m.meta.numerals.as_ref(),
        placeholders,
    };
    let parser = TermParser::new(scope, &lexed.toks);
    let cands = parser.candidates(0, lexed.toks.len(), None);
    match cands.len() {
        0 => Err(ParseError::new(1, format!("cannot parse `{}` as a term", render(&lexed.toks)))),
        1 => Ok(cands[0].clone()),
        n => Err(ParseError::new(
            1,
            format!(
                "`{}` is ambiguous ({n} readings); add parentheses",
                render(&lexed.toks)
            ),
        )),
    }
}

// ---------------------------------------------------------------------------
// Declaration and file parsing
// ---------------------------------------------------------------------------

struct FileParser {
    sig: Signature,
    vars: BTreeMap<String, SortId>,
    eqs: Vec<RuleDecl>,
    rules: Vec<RuleDecl>,
    modules: Vec<ModuleInfo>,
    diags: Vec<Diagnostic>,
    numerals: Option<Numerals>,
    auto_label: usize,
}

impl FileParser {
    fn scope(&self) -> TermScope<'_> {
        TermScope {
            sig: &self.sig,
            vars: Some(&self.vars),
            numerals: self.numerals.as_ref(),
            placeholders: false,
        }
    }

    fn sort(&self, name: &str, line: u32) -> Result<SortId, ParseError> {
        self.sig
            .sort_id(name)
            .ok_or_else(|| ParseError::new(line, format!("unknown sort `{name}`")))
    }
}

/// Split cleaned source into metadata lines and comment-free text.
fn strip_comments(text: &str) -> (String, Vec<String>) {
    let mut cleaned = String::with_capacity(text.len());
    let mut meta = Vec::new();
    for line in text.lines() {
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed.strip_prefix("--- @") {
            meta.push(rest.trim().to_string());
            cleaned.push('\n');
            continue;
        }
        let cut = match (line.find("---"), line.find("***")) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (Some(a), None) => Some(a),
            (None, Some(b)) => Some(b),
            (None, None) => None,
        };
        match cut {
            Some(p) => cleaned.push_str(&line[..p]),
            None => cleaned.push_str(line),
        }
        cleaned.push('\n');
    }
    (cleaned, meta)
}

/// Parse a whole semantics file (one or more `fmod`/`mod` blocks plus
/// metadata comment lines) into a flattened module.
pub fn parse_module(
    text: &str,
    source_name: &str,
) -> Result<(SemanticsModule, Vec<Diagnostic>), ParseError> {
    let (cleaned, meta_lines) = strip_comments(text);
    let lexed = lex(&cleaned);
    let toks = &lexed.toks;
    let mut fp = FileParser {
        sig: Signature::new(),
        vars: BTreeMap::new(),
        eqs: Vec::new(),
        rules: Vec::new(),
        modules: Vec::new(),
        diags: Vec::new(),
        numerals: None,
        auto_label: 0,
    };

    // Pre-scan for @numerals so rule bodies can use decimal literals.
    let numerals_line = meta_lines
        .iter()
        .find(|l| l.starts_with("numerals"))
        .cloned();

    let mut i = 0;
    while i < toks.len() {
        let line = lexed.line_of(i);
        let (is_system, end_kw) = match &toks[i] {
            Tok::Ident(k) if k == "fmod" => (false, "endfm"),
            Tok::Ident(k) if k == "mod" => (true, "endm"),
            other => {
                return Err(ParseError::new(
                    line,
                    format!("expected `fmod` or `mod`, found `{other}`"),
                ))
            }
        };
        // Module name: tokens up to `is`.
        let mut p = i + 1;
        let mut name = String::new();
        while p < toks.len() && !toks[p].is_ident("is") {
            name.push_str(&toks[p].text());
            p += 1;
        }
        if p == toks.len() {
            return Err(ParseError::new(line, "module header missing `is`"));
        }
        p += 1; // skip `is`
        let mut info = ModuleInfo { name: name.clone(), is_system, imports: Vec::new() };
        // Statements until the end keyword.
        loop {
            if p >= toks.len() {
                return Err(ParseError::new(line, format!("missing `{end_kw}`")));
            }
            if toks[p].is_ident(end_kw) {
                p += 1;
                break;
            }
            let stmt_start = p;
            let d = depths(&toks[stmt_start..]); // local depths for the tail
            let mut q = stmt_start;
            let mut end = None;
            while q < toks.len() {
                if toks[q].is_punct(".") && d[q - stmt_start] == 0 {
                    end = Some(q);
                    break;
                }
                if toks[q].is_ident(end_kw) && d[q - stmt_start] == 0 {
                    break;
                }
                q += 1;
            }
            let Some(end) = end else {
                return Err(ParseError::new(
                    lexed.line_of(stmt_start),
                    "statement missing terminating `.`",
                ));
            };
            parse_statement(&mut fp, &mut info, &lexed, stmt_start, end, &numerals_line)?;
            p = end + 1;
        }
        fp.modules.push(info);
        i = p;
    }

    let mut m = SemanticsModule {
        source_name: source_name.to_string(),
        sig: fp.sig,
        vars: fp.vars,
        eqs: fp.eqs,
        rules: fp.rules,
        modules: fp.modules,
        meta: Metadata::default(),
    };
    m.meta.numerals = fp.numerals;
    let mut diags = fp.diags;
    apply_metadata(&mut m, &meta_lines, &mut diags)?;
    Ok((m, diags))
}

fn parse_statement(
    fp: &mut FileParser,
    info: &mut ModuleInfo,
    lexed: &Lexed,
    start: usize,
    end: usize,
    numerals_line: &Option<String>,
) -> Result<(), ParseError> {
    let toks = &lexed.toks[start..end];
    let line = lexed.line_of(start);
    let Some(Tok::Ident(kw)) = toks.first() else {
        return Err(ParseError::new(line, "expected a declaration keyword"));
    };
    match kw.as_str() {
        "pr" | "protecting" | "inc" | "including" => {
            let name: String = toks[1..].iter().map(Tok::text).collect();
            info.imports.push(name);
        }
        "sort" | "sorts" => {
            for t in &toks[1..] {
                let Tok::Ident(s) = t else {
                    return Err(ParseError::new(line, format!("bad sort name `{t}`")));
                };
                fp.sig
                    .add_sort(s, &info.name)
                    .map_err(|e| ParseError::new(line, e.to_string()))?;
            }
            fp.sig.close_subsorts();
            // Late numerals resolution once the sort exists.
            try_resolve_numerals(fp, numerals_line);
        }
        "subsort" | "subsorts" => {
            let mut groups: Vec<Vec<SortId>> = vec![Vec::new()];
            for t in &toks[1..] {
                if t.is_punct("<") {
                    groups.push(Vec::new());
                } else if let Tok::Ident(s) = t {
                    let id = fp.sort(s, line)?;
                    groups.last_mut().expect("nonempty").push(id);
                } else {
                    return Err(ParseError::new(line, format!("bad subsort token `{t}`")));
                }
            }
            for w in groups.windows(2) {
                for &a in &w[0] {
                    for &b in &w[1] {
                        fp.sig.add_subsort(a, b);
                    }
                }
            }
            fp.sig.close_subsorts();
        }
        "op" | "ops" => parse_op(fp, info, toks, line, kw == "ops")?,
        "var" | "vars" => {
            let colon = toks
                .iter()
                .position(|t| t.is_punct(":"))
                .ok_or_else(|| ParseError::new(line, "variable declaration missing `:`"))?;
            let Some(Tok::Ident(sort_name)) = toks.get(colon + 1) else {
                return Err(ParseError::new(line, "variable declaration missing sort"));
            };
            let sort = fp.sort(sort_name, line)?;
            for t in &toks[1..colon] {
                let Tok::Ident(v) = t else {
                    return Err(ParseError::new(line, format!("bad variable name `{t}`")));
                };
                if let Some(&prev) = fp.vars.get(v) {
                    if prev != sort {
                        fp.diags.push(Diagnostic::error(
                            format!("var {v}"),
                            "redeclared with a different sort; first declaration wins".to_string(),
                        ));
                        continue;
                    }
                }
                fp.vars.insert(v.clone(), sort);
            }
        }
        "eq" | "ceq" | "rl" | "crl" => parse_rule(fp, info, lexed, start, end)?,
        other => {
            fp.diags.push(Diagnostic::error(
                format!("line {line}"),
                format!("unknown declaration keyword `{other}`"),
            ));
        }
    }
    Ok(())
}

fn try_resolve_numerals(fp: &mut FileParser, numerals_line: &Option<String>) {
    if fp.numerals.is_some() {
        return;
    }
    let Some(lineval) = numerals_line else { return };
    let parts: Vec<&str> = lineval.split_whitespace().collect();
    // "numerals <Sort> <zero> <succ>"
    if parts.len() != 4 {
        return;
    }
    let Some(sort) = fp.sig.sort_id(parts[1]) else { return };
    let zero = fp
        .sig
        .ops_named(parts[2])
        .iter()
        .copied()
        .find(|&o| fp.sig.op(o).args.is_empty());
    let succ = fp
        .sig
        .ops_named(parts[3])
        .iter()
        .copied()
        .find(|&o| fp.sig.op(o).arity() == 1);
    if let (Some(zero), Some(succ)) = (zero, succ) {
        fp.numerals = Some(Numerals { sort, zero, succ });
    }
}

fn parse_op(
    fp: &mut FileParser,
    info: &ModuleInfo,
    toks: &[Tok],
    line: u32,
    multi: bool,
) -> Result<(), ParseError> {
    // op <name...> : <arg sorts> -> <coarity> [attrs]?
    let arrow = toks
        .iter()
        .position(|t| t.is_punct("->"))
        .ok_or_else(|| ParseError::new(line, "operator declaration missing `->`"))?;
    // Walk back over the argument sorts to the separating `:`.
    let mut colon = arrow;
    while colon > 0 && matches!(toks[colon - 1], Tok::Ident(_)) {
        colon -= 1;
    }
    if colon == 0 || !toks[colon - 1].is_punct(":") {
        return Err(ParseError::new(line, "operator declaration missing ` : `"));
    }
    // `ops a b c : ...` declares several names of the same rank; since the
    // lexer drops whitespace, that form is limited to single-token names.
    let names: Vec<String> = if multi {
        toks[1..colon - 1].iter().map(Tok::text).collect()
    } else {
        vec![toks[1..colon - 1].iter().map(Tok::text).collect()]
    };
    if names.is_empty() || names.iter().any(String::is_empty) {
        return Err(ParseError::new(line, "operator declaration missing name"));
    }
    let mut args = Vec::new();
    for t in &toks[colon..arrow] {
        let Tok::Ident(s) = t else { unreachable!("idents by construction") };
        args.push(fp.sort(s, line)?);
    }
    let Some(Tok::Ident(coname)) = toks.get(arrow + 1) else {
        return Err(ParseError::new(line, "operator declaration missing coarity"));
    };
    let coarity = fp.sort(coname, line)?;
    let mut attrs = OpAttrs::default();
    let mut p = arrow + 2;
    if toks.get(p) == Some(&Tok::LBracket) {
        p += 1;
        while p < toks.len() && toks[p] != Tok::RBracket {
            match &toks[p] {
                Tok::Ident(a) if a == "ctor" => attrs.ctor = true,
                Tok::Ident(a) if a == "assoc" => attrs.assoc = true,
                Tok::Ident(a) if a == "comm" => attrs.comm = true,
                Tok::Ident(a) if a == "id" => {
                    // `id: <constant>`
                    if toks.get(p + 1).map(|t| t.is_punct(":")) == Some(true) {
                        let Some(Tok::Ident(cname)) = toks.get(p + 2) else {
                            return Err(ParseError::new(line, "id: expects a constant name"));
                        };
                        let found = fp
                            .sig
                            .ops_named(cname)
                            .iter()
                            .copied()
                            .find(|&o| fp.sig.op(o).args.is_empty());
                        match found {
                            Some(c) => attrs.id_elem = Some(c),
                            None => {
                                return Err(ParseError::new(
                                    line,
                                    format!("identity `{cname}` is not a declared constant"),
                                ))
                            }
                        }
                        p += 2;
                    }
                }
                other => {
                    fp.diags.push(Diagnostic::warning(
                        format!("op {}", names.join(" ")),
                        format!("ignoring unknown attribute `{other}`"),
                    ));
                }
            }
            p += 1;
        }
    }
    for name in &names {
        if name.contains("__") && name != "__" {
            fp.diags.push(Diagnostic::error(
                format!("op {name}"),
                "adjacent underscores are only supported as plain juxtaposition `__`".to_string(),
            ));
        }
        fp.sig
            .add_op(name, args.clone(), coarity, attrs.clone(), &info.name)
            .map_err(|e| ParseError::new(line, e.to_string()))?;
    }
    Ok(())
}

fn parse_rule(
    fp: &mut FileParser,
    info: &ModuleInfo,
    lexed: &Lexed,
    start: usize,
    end: usize,
) -> Result<(), ParseError> {
    let toks = &lexed.toks[start..end];
    let line = lexed.line_of(start);
    let kw = toks[0].text();
    let (is_rule, conditional) = match kw.as_str() {
        "eq" => (false, false),
        "ceq" => (false, true),
        "rl" => (true, false),
        "crl" => (true, true),
        _ => unreachable!("dispatched on keyword"),
    };
    let mut p = 1;
    let label = if toks.get(p) == Some(&Tok::LBracket) {
        let close = toks[p..]
            .iter()
            .position(|t| *t == Tok::RBracket)
            .map(|o| p + o)
            .ok_or_else(|| ParseError::new(line, "unclosed rule label"))?;
        let lbl: String = toks[p + 1..close].iter().map(Tok::text).collect();
        p = close + 1;
        if toks.get(p).map(|t| t.is_punct(":")) != Some(true) {
            return Err(ParseError::new(line, "expected `:` after rule label"));
        }
        p += 1;
        lbl
    } else {
        fp.auto_label += 1;
        format!("{kw}{}", fp.auto_label)
    };
    let body = &toks[p..];
    let d = depths(body);
    let scope = fp.scope();
    let parser_toks = body;
    let parser = TermParser::new(scope, parser_toks);

    // Locate the condition marker for conditional statements: the first
    // depth-0 `if` where everything before and after parses.
    let split_kw = if is_rule { "=>" } else { "=" };
    let head_range;
    let cond_range;
    if conditional {
        let mut found = None;
        for q in 1..body.len() {
            if d[q] == 0 && body[q].is_ident("if") {
                if let Some((l, r)) = split_two(&parser, body, &d, 0, q, split_kw) {
                    if parse_conditions(&parser, body, &d, q + 1, body.len()).is_some() {
                        found = Some((q, l, r));
                        break;
                    }
                }
            }
        }
        let Some((q, l, r)) = found else {
            return Err(ParseError::new(
                line,
                format!("cannot split conditional {kw} `{}`", render(body)),
            ));
        };
        head_range = (l, r);
        cond_range = Some((q + 1, body.len()));
    } else {
        let Some((l, r)) = split_two(&parser, body, &d, 0, body.len(), split_kw) else {
            return Err(ParseError::new(
                line,
                format!("cannot split {kw} `{}` at `{split_kw}`", render(body)),
            ));
        };
        head_range = (l, r);
        cond_range = None;
    }
    let lhs = try_unique(&parser, head_range.0 .0, head_range.0 .1)
        .ok_or_else(|| ParseError::new(line, format!("cannot parse lhs of {label}")))?;
    let rhs = try_unique(&parser, head_range.1 .0, head_range.1 .1)
        .ok_or_else(|| ParseError::new(line, format!("cannot parse rhs of {label}")))?;
    let conds = match cond_range {
        Some((a, b)) => parse_conditions(&parser, body, &d, a, b)
            .ok_or_else(|| ParseError::new(line, format!("cannot parse conditions of {label}")))?,
        None => Vec::new(),
    };
    let decl = RuleDecl {
        label,
        lhs,
        rhs,
        conds,
        is_rule,
        module: info.name.clone(),
        index: if is_rule { fp.rules.len() } else { fp.eqs.len() },
    };
    if is_rule {
        fp.rules.push(decl);
    } else {
        fp.eqs.push(decl);
    }
    Ok(())
}

type Range2 = ((usize, usize), (usize, usize));

/// Split `body[a..b]` at a depth-0 occurrence of the separator such that both
/// sides parse; tries occurrences left to right.
fn split_two(
    parser: &TermParser<'_>,
    body: &[Tok],
    d: &[i32],
    a: usize,
    b: usize,
    sep: &str,
) -> Option<Range2> {
    for q in a + 1..b {
        if d[q] == 0 && body[q].is_punct(sep) {
            if try_unique(parser, a, q).is_some() && try_unique(parser, q + 1, b).is_some() {
                return Some(((a, q), (q + 1, b)));
            }
        }
    }
    None
}

/// Parse a `/\`-separated condition list.
fn parse_conditions(
    parser: &TermParser<'_>,
    body: &[Tok],
    d: &[i32],
    a: usize,
    b: usize,
) -> Option<Vec<Condition>> {
    let mut pieces = Vec::new();
    let mut start = a;
    for q in a..b {
        if d[q] == 0 && body[q].is_punct("/\\") {
            pieces.push((start, q));
            start = q + 1;
        }
    }
    pieces.push((start, b));
    let mut out = Vec::new();
    for (x, y) in pieces {
        if x >= y {
            return None;
        }
        out.push(parse_condition(parser, body, d, x, y)?);
    }
    Some(out)
}

fn parse_condition(
    parser: &TermParser<'_>,
    body: &[Tok],
    d: &[i32],
    a: usize,
    b: usize,
) -> Option<Condition> {
    // Rewrite: subject => pattern.
    for q in a + 1..b {
        if d[q] == 0 && body[q].is_punct("=>") {
            if let (Some(subject), Some(pattern)) =
                (try_unique(parser, a, q), try_unique(parser, q + 1, b))
            {
                return Some(Condition::Rewrite { subject, pattern });
            }
        }
    }
    // Match: pattern := subject.
    for q in a + 1..b {
        if d[q] == 0 && body[q].is_punct(":=") {
            if let (Some(pattern), Some(subject)) =
                (try_unique(parser, a, q), try_unique(parser, q + 1, b))
            {
                return Some(Condition::Match { pattern, subject });
            }
        }
    }
    // Membership: term : Sort (sort is a single trailing identifier).
    if b - a >= 3 && body[b - 2].is_punct(":") && d[b - 2] == 0 {
        if let Tok::Ident(sort_name) = &body[b - 1] {
            if let Some(sort) = parser.scope.sig.sort_id(sort_name) {
                if let Some(term) = try_unique(parser, a, b - 2) {
                    return Some(Condition::Membership { term, sort });
                }
            }
        }
    }
    // Equality.
    for q in a + 1..b {
        if d[q] == 0 && body[q].is_punct("=") {
            if let (Some(lhs), Some(rhs)) = (try_unique(parser, a, q), try_unique(parser, q + 1, b))
            {
                return Some(Condition::Equal { lhs, rhs });
            }
        }
    }
    None
}

/// Interpret `--- @key value` lines against the finished module.
fn apply_metadata(
    m: &mut SemanticsModule,
    lines: &[String],
    diags: &mut Vec<Diagnostic>,
) -> Result<(), ParseError> {
    fn need_sort(
        m: &SemanticsModule,
        key: &str,
        v: &str,
        diags: &mut Vec<Diagnostic>,
    ) -> Option<SortId> {
        let found = m.sig.sort_id(v);
        if found.is_none() {
            diags.push(Diagnostic::error(format!("@{key}"), format!("unknown sort `{v}`")));
        }
        found
    }
    for raw in lines {
        let (key, value) = match raw.split_once(char::is_whitespace) {
            Some((k, v)) => (k.trim(), v.trim()),
            None => (raw.trim(), ""),
        };
        match key {
            "instruction-sort" => m.meta.instruction_sort = need_sort(m, key, value, diags),
            "variable-sort" => m.meta.variable_sort = need_sort(m, key, value, diags),
            "value-sort" => m.meta.value_sort = need_sort(m, key, value, diags),
            "memory-module" => m.meta.memory_module = Some(value.to_string()),
            "entry" => m.meta.program_entry = Some(value.to_string()),
            "generator" => m.meta.generator = Some(value.to_string()),
            "function-decl" => {
                let ids = m.sig.ops_named(value).to_vec();
                if ids.is_empty() {
                    diags.push(Diagnostic::error(
                        "@function-decl",
                        format!("unknown operator `{value}`"),
                    ));
                }
                m.meta.function_decl_ops.extend(ids);
            }
            "sequencing" => {
                let ids = m.sig.ops_named(value).to_vec();
                if ids.is_empty() {
                    diags.push(Diagnostic::error(
                        "@sequencing",
                        format!("unknown operator `{value}`"),
                    ));
                }
                m.meta.sequencing_ops.extend(ids);
            }
            "numerals" => {
                if m.meta.numerals.is_none() {
                    diags.push(Diagnostic::error(
                        "@numerals",
                        format!("could not resolve `{value}` (expects: Sort zero succ)"),
                    ));
                }
            }
            "config-template" => match parse_template(m, value) {
                Ok(t) => m.meta.config_template = Some(t),
                Err(e) => diags.push(Diagnostic::error("@config-template", e.to_string())),
            },
            "input-nil" => match parse_term(m, value) {
                Ok(t) => m.meta.input_nil = Some(t),
                Err(e) => diags.push(Diagnostic::error("@input-nil", e.to_string())),
            },
            "input-item" => match parse_template(m, value) {
                Ok(t) => m.meta.input_item = Some(t),
                Err(e) => diags.push(Diagnostic::error("@input-item", e.to_string())),
            },
            "input-cons" => {
                let found = m
                    .sig
                    .ops_named(value)
                    .iter()
                    .copied()
                    .find(|&o| m.sig.op(o).arity() == 2);
                match found {
                    Some(op) => m.meta.input_cons = Some(op),
                    None => diags.push(Diagnostic::error(
                        "@input-cons",
                        format!("unknown binary operator `{value}`"),
                    )),
                }
            }
            "observe" => match parse_template(m, value) {
                Ok(t) => m.meta.observe = Some(t),
                Err(e) => diags.push(Diagnostic::error("@observe", e.to_string())),
            },
            "noop" => {
                let found =
                    m.sig.ops_named(value).iter().copied().find(|&o| m.sig.op(o).arity() == 0);
                match found {
                    Some(op) => m.meta.noop = Some(op),
                    None => diags.push(Diagnostic::error(
                        "@noop",
                        format!("unknown constant `{value}`"),
                    )),
                }
            }
            other => diags.push(Diagnostic::warning(
                "metadata",
                format!("unknown directive `@{other}`"),
            )),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::print_term;

    const TOY: &str = r#"
fmod TOY-SYNTAX is
  sorts Num Value Variable Exp ExpL Stmt FName .
  subsort Num < Value .
  subsort Value < Exp .
  subsort Variable < Exp .
  subsort Exp < ExpL .
  op 0 : -> Num [ctor] .
  op s : Num -> Num [ctor] .
  op nv : -> ExpL [ctor] .
  op _,_ : ExpL ExpL -> ExpL [ctor assoc id: nv] .
  ops x y z : -> Variable [ctor] .
  op f : -> FName [ctor] .
  op _:=_ : Variable Exp -> Stmt [ctor] .
  op _;_ : Stmt Stmt -> Stmt [ctor assoc] .
  op skip : -> Stmt [ctor] .
  op if_then_else_fi : Exp Stmt Stmt -> Stmt [ctor] .
  op Call_(_) : FName ExpL -> Stmt [ctor] .
endfm
fmod MEMORY is
  pr TOY-SYNTAX .
  sorts Env ESt .
  subsort Env < ESt .
  op mt : -> Env [ctor] .
  op _=_ : Variable Value -> Env [ctor] .
  op __ : Env Env -> Env [ctor comm assoc id: mt] .
  op _|_ : ESt ESt -> ESt [ctor assoc] .
  op lkp : ESt Variable -> Value .
  op upd : ESt Variable Value -> ESt .
endfm
mod TOY-SEMANTICS is
  pr MEMORY .
  sort Conf .
  op <_,_> : Stmt ESt -> Conf [ctor] .
  vars S C : Stmt .
  var X : Variable .
  var V : Value .
  var E : Exp .
  var ST : ESt .
  eq [upd1] : upd(mt, X, V) = X = V .
  rl [AsR] : < X := E, ST > => < skip, ST > .
  crl [IfR1] : < if E then S else C fi, ST > => < S, ST > if lkp(ST, X) = s(0) .
  crl [SeqR] : < S ; C, ST > => < C, ST > if V := lkp(ST, X) /\ < S, ST > => < skip, ST > .
endm
--- a plain comment line, ignored
--- @instruction-sort Stmt
--- @numerals Num 0 s
--- @memory-module MEMORY
--- @sequencing _;_
--- @config-template < $PROGRAM, mt >
"#;

    fn toy() -> SemanticsModule {
        let (m, diags) = parse_module(TOY, "toy").expect("parses");
        assert!(
            diags.iter().all(|d| d.severity == crate::module::Severity::Warning),
            "unexpected errors: {diags:?}"
        );
        m
    }

    #[test]
    fn memory_module_shape() {
        let m = toy();
        let env = m.sig.sort_id("Env").unwrap();
        let est = m.sig.sort_id("ESt").unwrap();
        assert!(m.sig.is_proper_subsort(env, est));
        let bar = m.sig.ops_named("_|_")[0];
        let d = m.sig.op(bar);
        assert!(d.attrs.assoc && !d.attrs.comm && d.attrs.id_elem.is_none());
        assert_eq!(d.module, "MEMORY");
        let jux = m.sig.op(m.sig.ops_named("__")[0]);
        assert!(jux.attrs.comm && jux.attrs.assoc);
        assert_eq!(m.sig.op(jux.attrs.id_elem.unwrap()).name, "mt");
    }

    #[test]
    fn rules_and_conditions() {
        let m = toy();
        assert_eq!(m.eqs.len(), 1);
        assert_eq!(m.rules.len(), 3);
        let seqr = m.rules.iter().find(|r| r.label == "SeqR").unwrap();
        assert_eq!(seqr.conds.len(), 2);
        assert!(matches!(seqr.conds[0], Condition::Match { .. }));
        assert!(matches!(seqr.conds[1], Condition::Rewrite { .. }));
        // The object-language `if` inside IfR1's lhs does not confuse the
        // condition-marker search.
        let ifr = m.rules.iter().find(|r| r.label == "IfR1").unwrap();
        assert_eq!(ifr.conds.len(), 1);
        assert!(matches!(ifr.conds[0], Condition::Equal { .. }));
    }

    #[test]
    fn metadata_applied() {
        let m = toy();
        assert_eq!(m.meta.instruction_sort, m.sig.sort_id("Stmt"));
        assert_eq!(m.meta.memory_module.as_deref(), Some("MEMORY"));
        assert_eq!(m.meta.sequencing_ops.len(), 1);
        let num = m.meta.numerals.as_ref().unwrap();
        assert_eq!(m.sig.op(num.succ).name, "s");
        let tpl = m.meta.config_template.as_ref().unwrap();
        assert!(tpl.vars().iter().any(|v| v.name == "$PROGRAM"));
    }

    #[test]
    fn ground_terms_parse() {
        let m = toy();
        let t = parse_term(&m, "x = 3").unwrap();
        assert_eq!(m.sig.op(t.head().unwrap()).name, "_=_");
        let seq = parse_term(&m, "x := 0 ; y := s(0) ; skip").unwrap();
        let d = m.sig.op(seq.head().unwrap());
        assert_eq!(d.name, "_;_");
        if let Term::App(_, args) = &seq {
            assert_eq!(args.len(), 3); // flattened
        }
        // Empty call argument slot fills with the `_,_` identity.
        let call = parse_term(&m, "Call f()").unwrap();
        if let Term::App(_, args) = &call {
            assert_eq!(m.sig.op(args[1].head().unwrap()).name, "nv");
        }
    }

    #[test]
    fn variables_shadow_constants() {
        let m = toy();
        // `x` is both a Variable constant and, in patterns, never a rule
        // variable (not declared); `X` is a rule variable.
        let pat = parse_pattern(&m, "X := 0").unwrap();
        assert!(matches!(pat, Term::App(_, ref a) if a[0].is_var()));
        let ground = parse_term(&m, "x := 0").unwrap();
        assert!(matches!(ground, Term::App(_, ref a) if !a[0].is_var()));
        // Rule variables are out of scope for ground terms.
        assert!(parse_term(&m, "X := 0").is_err());
    }

    #[test]
    fn ambiguity_is_reported() {
        let m = toy();
        // `x = 3 y = 0` could attach juxtaposition under either `=`? It
        // cannot: Env juxtaposition needs Env arguments, so this is unique.
        assert!(parse_term(&m, "(x = 3) (y = 0)").is_ok());
        // A genuinely unreadable string errors out.
        let err = parse_term(&m, "if x then").unwrap_err();
        assert!(err.to_string().contains("cannot parse"));
    }

    #[test]
    fn example_memory_listing_verbatim() {
        let text = r#"
fmod WHILE-SYNTAX is
  sorts Variable Value .
endfm
fmod MEMORY is
  pr WHILE-SYNTAX .
  sorts Env ESt .
  subsort Env < ESt .
  op mt : -> Env [ctor] .
  op _=_ : Variable Value -> Env [ctor] .
  op __ : Env Env -> Env [ctor comm assoc id: mt] .
  op _|_ : ESt ESt -> ESt [ctor assoc] .
endfm
"#;
        let (m, _) = parse_module(text, "mem").expect("parses");
        assert_eq!(m.sig.sorts_in_module("MEMORY").len(), 2);
        assert_eq!(m.sig.ops_in_module("MEMORY").count(), 4);
    }

    #[test]
    fn print_parse_roundtrip() {
        let m = toy();
        for text in [
            "x := 0 ; Call f() ; y := 2",
            "if x then skip else (y := 1 ; z := 2) fi",
            "Call f(1, 2, 3)",
            "(x = 1) (y = 2) | mt | (z = 0)",
            "upd(mt | (x = 1), y, s(0))",
        ] {
            let t = parse_term(&m, text).expect(text);
            let printed = print_term(&m, &t);
            let back = parse_term(&m, &printed)
                .unwrap_or_else(|e| panic!("reparse of `{printed}` failed: {e}"));
            assert_eq!(t, back, "roundtrip failed for `{text}` -> `{printed}`");
        }
    }

    #[test]
    fn config_template_instantiates() {
        let m = toy();
        let t = parse_template(&m, "< $PROGRAM, mt >").unwrap();
        let vars = t.vars();
        assert_eq!(vars.len(), 1);
        let v = vars.iter().next().unwrap();
        assert_eq!(m.sig.sort_name(v.sort), "Stmt");
    }
}
