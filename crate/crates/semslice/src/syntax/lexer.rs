//! Token stream for semantics files and object-language terms.
//!
//! The lexer is shared by the declaration parser and the term parser. It
//! knows nothing about operators: mixfix names are matched later by lexing
//! the name's literal chunks with this same lexer and comparing token
//! sequences, so the two can never disagree on boundaries.

use std::fmt;

/// One token. Brackets, commas and semicolons always stand alone; identifier
/// characters (letters, digits, `_`, `'`, `$`) and punctuation characters
/// each clump into maximal runs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    /// A run of decimal digits.
    Int(u64),
    /// A run of punctuation, e.g. `:=`, `=>`, `<-`, `|`, `.`.
    Punct(String),
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Semi,
}

impl Tok {
    /// The literal spelling, used to reassemble operator names.
    pub fn text(&self) -> String {
        match self {
            Tok::Ident(s) => s.clone(),
            Tok::Int(n) => n.to_string(),
            Tok::Punct(s) => s.clone(),
            Tok::LParen => "(".into(),
            Tok::RParen => ")".into(),
            Tok::LBrace => "{".into(),
            Tok::RBrace => "}".into(),
            Tok::LBracket => "[".into(),
            Tok::RBracket => "]".into(),
            Tok::Comma => ",".into(),
            Tok::Semi => ";".into(),
        }
    }

    pub fn is_ident(&self, s: &str) -> bool {
        matches!(self, Tok::Ident(t) if t == s)
    }

    pub fn is_punct(&self, s: &str) -> bool {
        matches!(self, Tok::Punct(t) if t == s)
    }
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.text())
    }
}

/// Tokens plus the 1-based source line each one started on.
#[derive(Clone, Debug, Default)]
pub struct Lexed {
    pub toks: Vec<Tok>,
    pub lines: Vec<u32>,
}

impl Lexed {
    pub fn line_of(&self, idx: usize) -> u32 {
        self.lines.get(idx).copied().unwrap_or_else(|| {
            self.lines.last().copied().unwrap_or(1)
        })
    }
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '\'' | '$')
}

fn is_solo(c: char) -> Option<Tok> {
    Some(match c {
        '(' => Tok::LParen,
        ')' => Tok::RParen,
        '{' => Tok::LBrace,
        '}' => Tok::RBrace,
        '[' => Tok::LBracket,
        ']' => Tok::RBracket,
        ',' => Tok::Comma,
        ';' => Tok::Semi,
        _ => return None,
    })
}

/// Lex a cleaned source string (comments already removed).
pub fn lex(text: &str) -> Lexed {
    let mut out = Lexed::default();
    let mut line: u32 = 1;
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            line += 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if let Some(tok) = is_solo(c) {
            out.toks.push(tok);
            out.lines.push(line);
            i += 1;
            continue;
        }
        let start = i;
        if is_ident_char(c) {
            while i < chars.len() && is_ident_char(chars[i]) {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            let tok = if s.chars().all(|ch| ch.is_ascii_digit()) {
                match s.parse::<u64>() {
                    Ok(n) => Tok::Int(n),
                    Err(_) => Tok::Ident(s),
                }
            } else {
                Tok::Ident(s)
            };
            out.toks.push(tok);
            out.lines.push(line);
        } else {
            while i < chars.len() {
                let d = chars[i];
                if d.is_whitespace() || is_ident_char(d) || is_solo(d).is_some() {
                    break;
                }
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            out.toks.push(Tok::Punct(s));
            out.lines.push(line);
        }
    }
    out
}

/// Bracket depth before each token, counting `()`, `[]`, `{}`.
pub fn depths(toks: &[Tok]) -> Vec<i32> {
    let mut out = Vec::with_capacity(toks.len());
    let mut d = 0;
    for t in toks {
        out.push(d);
        match t {
            Tok::LParen | Tok::LBrace | Tok::LBracket => d += 1,
            Tok::RParen | Tok::RBrace | Tok::RBracket => d -= 1,
            _ => {}
        }
    }
    out
}
