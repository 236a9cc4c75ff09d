//! Term printing.
//!
//! Output is chosen so that `parse_term` reads it back to the same term:
//! mixfix arguments are parenthesized unless they are self-delimiting, and
//! identity constants sitting directly between an opening and a closing
//! bracket chunk are omitted (so an empty argument list prints as `f()`).
//! Peano towers built from the declared numeral operators print as decimals.

use crate::module::Numerals;
use crate::sig::{OpId, Signature};
use crate::term::Term;

/// How the surrounding context encloses an argument slot.
#[derive(Clone, Copy, PartialEq)]
enum Slot {
    /// Top level or inside explicit parentheses: nothing can extend the term.
    Free,
    /// Argument of a functional call or a comma slot: commas delimit.
    Delimited,
    /// Argument of a mixfix or juxtaposition operator: anything may extend.
    Open,
}

pub struct Printer<'a> {
    sig: &'a Signature,
    numerals: Option<&'a Numerals>,
}

impl<'a> Printer<'a> {
    pub fn new(sig: &'a Signature, numerals: Option<&'a Numerals>) -> Self {
        Printer { sig, numerals }
    }

    pub fn print(&self, t: &Term) -> String {
        let mut out = String::new();
        self.pr(t, Slot::Free, &mut out);
        tidy(&out)
    }

    fn numeral_of(&self, t: &Term) -> Option<u64> {
        let num = self.numerals?;
        let mut n = 0u64;
        let mut cur = t;
        loop {
            match cur.unmarked() {
                Term::App(op, args) if *op == num.succ && args.len() == 1 => {
                    n += 1;
                    cur = &args[0];
                }
                Term::App(op, args) if *op == num.zero && args.is_empty() => return Some(n),
                _ => return None,
            }
        }
    }

    /// Does this term print as a single self-delimiting unit?
    fn atomic(&self, t: &Term) -> bool {
        if self.numeral_of(t).is_some() {
            return true;
        }
        match t.unmarked() {
            Term::Var(_) => true,
            Term::Marked(..) => unreachable!("unmarked"),
            Term::App(op, args) => {
                let decl = self.sig.op(*op);
                if args.is_empty() {
                    return true;
                }
                if !decl.is_mixfix() {
                    return true; // functional notation f(...)
                }
                self_bracketing(&decl.name)
            }
        }
    }

    fn pr(&self, t: &Term, slot: Slot, out: &mut String) {
        if let Some(n) = self.numeral_of(t) {
            out.push_str(&n.to_string());
            return;
        }
        match t.unmarked() {
            Term::Var(v) => out.push_str(&v.name),
            Term::Marked(..) => unreachable!("unmarked"),
            Term::App(op, args) => self.pr_app(*op, args, slot, out),
        }
    }

    fn pr_app(&self, op: OpId, args: &[Term], slot: Slot, out: &mut String) {
        let decl = self.sig.op(op);
        if args.is_empty() {
            out.push_str(&decl.name);
            return;
        }
        if !decl.is_mixfix() {
            out.push_str(&decl.name);
            out.push('(');
            for (k, a) in args.iter().enumerate() {
                if k > 0 {
                    out.push_str(", ");
                }
                self.pr(a, Slot::Delimited, out);
            }
            out.push(')');
            return;
        }
        let needs_parens = match slot {
            Slot::Free => false,
            Slot::Delimited => contains_comma_chunk(&decl.name) && !self_bracketing(&decl.name),
            Slot::Open => !self_bracketing(&decl.name),
        };
        if needs_parens {
            out.push('(');
        }
        if decl.name == "__" {
            // Flattened juxtaposition chain.
            for (k, a) in args.iter().enumerate() {
                if k > 0 {
                    out.push(' ');
                }
                self.pr_arg(a, Slot::Open, out);
            }
        } else if decl.attrs.assoc && args.len() > 2 {
            // Flattened chain of a binary mixfix op: interleave with the
            // single interior chunk.
            let sep = decl.name.trim_matches('_');
            for (k, a) in args.iter().enumerate() {
                if k > 0 {
                    out.push(' ');
                    out.push_str(sep);
                    out.push(' ');
                }
                self.pr_arg(a, Slot::Open, out);
            }
        } else {
            self.pr_mixfix(decl.name.clone(), args, out);
        }
        if needs_parens {
            out.push(')');
        }
    }

    fn pr_mixfix(&self, name: String, args: &[Term], out: &mut String) {
        let leading = name.starts_with('_');
        let chunks: Vec<&str> = name.split('_').filter(|c| !c.is_empty()).collect();
        let mut arg_iter = args.iter();
        let mut emit_arg = |out: &mut String, before: Option<&str>, after: Option<&str>| {
            let a = arg_iter.next().expect("arity checked at construction");
            // Identity constants vanish between a bracket-open and a
            // bracket-close chunk: `Call f()` rather than `Call f(nv)`.
            if self.is_identity_constant(a) && bracket_gap(before, after) {
                return;
            }
            let slot = if bracketed(before, after) { Slot::Delimited } else { Slot::Open };
            self.pr_arg(a, slot, out);
        };
        if leading {
            emit_arg(out, None, chunks.first().copied());
            out.push(' ');
        }
        for (k, chunk) in chunks.iter().enumerate() {
            if k > 0 {
                out.push(' ');
            }
            out.push_str(chunk);
            let next = chunks.get(k + 1).copied();
            let is_last = k + 1 == chunks.len();
            let trailing = name.ends_with('_');
            if !is_last || trailing {
                out.push(' ');
                emit_arg(out, Some(chunk), if is_last { None } else { next });
            }
        }
    }

    fn pr_arg(&self, a: &Term, slot: Slot, out: &mut String) {
        if self.atomic(a) {
            self.pr(a, Slot::Free, out);
        } else {
            self.pr(a, slot, out);
        }
    }

    fn is_identity_constant(&self, t: &Term) -> bool {
        match t.unmarked() {
            Term::App(op, args) if args.is_empty() => self
                .sig
                .ops()
                .any(|(_, d)| d.attrs.id_elem == Some(*op)),
            _ => false,
        }
    }
}

/// `<_,_>`, `[_]`, `{_}` style names enclose all their slots.
fn self_bracketing(name: &str) -> bool {
    let open = name.chars().next();
    let close = name.chars().last();
    matches!(
        (open, close),
        (Some('<'), Some('>')) | (Some('('), Some(')')) | (Some('['), Some(']')) | (Some('{'), Some('}'))
    )
}

fn contains_comma_chunk(name: &str) -> bool {
    name.split('_').any(|c| c.contains(','))
}

fn bracket_gap(before: Option<&str>, after: Option<&str>) -> bool {
    let opens = before.map(|c| c.ends_with(['(', '[', '{'])) == Some(true);
    let closes = after.map(|c| c.starts_with([')', ']', '}'])) == Some(true);
    opens && closes
}

fn bracketed(before: Option<&str>, after: Option<&str>) -> bool {
    let opens = before.map(|c| c.ends_with(['(', '[', '{', ','])) == Some(true);
    let closes = after.map(|c| c.starts_with([')', ']', '}', ','])) == Some(true);
    opens && closes
}

/// Collapse the space just inside brackets and before commas so the output
/// reads like the hand-written corpus: `f( x , y )` -> `f(x, y)`.
fn tidy(out: &str) -> String {
    out.replace("( ", "(")
        .replace(" )", ")")
        .replace("[ ", "[")
        .replace(" ]", "]")
        .replace(" ,", ",")
        .replace("  ", " ")
}
