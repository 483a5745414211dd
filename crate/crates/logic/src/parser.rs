//! Surface syntax.
//!
//! ```text
//! % comment
//! mayCause/2. dis/1.
//! dis(idd).
//! cause(A,B,C) :- dis(A), mayCause(A,C) ; mayCause(B,C).
//! ```
//!
//! `;` binds looser than `,`, and a body containing disjunction expands to
//! one clause per disjunct of its disjunctive normal form.

use std::fmt;

use thiserror::Error;

use crate::term::{Clause, Literal, Name, Term};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("syntax error at offset {offset} (line {line}, column {column}): {message}")]
pub struct ParseError {
    pub offset: usize,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

/// Clauses plus any `name/arity.` declarations, in source order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParsedProgram {
    pub clauses: Vec<Clause>,
    pub declarations: Vec<(Name, usize)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Name(String),
    Var(String),
    Int(usize),
    LParen,
    RParen,
    Comma,
    Semi,
    Dot,
    Neck,
    Slash,
    Not,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Name(n) | Tok::Var(n) => write!(f, "`{n}`"),
            Tok::Int(i) => write!(f, "`{i}`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Semi => f.write_str("`;`"),
            Tok::Dot => f.write_str("`.`"),
            Tok::Neck => f.write_str("`:-`"),
            Tok::Slash => f.write_str("`/`"),
            Tok::Not => f.write_str("`\\+`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

struct Lexer {
    toks: Vec<(Tok, usize)>,
}

impl Lexer {
    fn run(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
        let mut lx = Lexer { toks: Vec::new() };
        let bytes = src.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i] as char;
            match c {
                c if c.is_whitespace() => i += 1,
                '%' => {
                    while i < bytes.len() && bytes[i] != b'\n' {
                        i += 1;
                    }
                }
                '(' => lx.push(Tok::LParen, &mut i, 1),
                ')' => lx.push(Tok::RParen, &mut i, 1),
                ',' => lx.push(Tok::Comma, &mut i, 1),
                ';' => lx.push(Tok::Semi, &mut i, 1),
                '.' => lx.push(Tok::Dot, &mut i, 1),
                '/' => lx.push(Tok::Slash, &mut i, 1),
                ':' if bytes.get(i + 1) == Some(&b'-') => lx.push(Tok::Neck, &mut i, 2),
                '\\' if bytes.get(i + 1) == Some(&b'+') => lx.push(Tok::Not, &mut i, 2),
                c if c.is_ascii_alphanumeric() || c == '_' => {
                    let start = i;
                    while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                        i += 1;
                    }
                    let word = &src[start..i];
                    let tok = if c.is_ascii_digit() {
                        match word.parse::<usize>() {
                            Ok(n) if word.bytes().all(|b| b.is_ascii_digit()) => Tok::Int(n),
                            _ => return Err(error_at(src, start, format!("malformed number `{word}`"))),
                        }
                    } else if c.is_ascii_uppercase() || c == '_' {
                        Tok::Var(word.to_string())
                    } else {
                        Tok::Name(word.to_string())
                    };
                    lx.toks.push((tok, start));
                }
                other => return Err(error_at(src, i, format!("unexpected character `{other}`"))),
            }
        }
        lx.toks.push((Tok::Eof, src.len()));
        Ok(lx.toks)
    }

    fn push(&mut self, tok: Tok, i: &mut usize, width: usize) {
        self.toks.push((tok, *i));
        *i += width;
    }
}

fn error_at(src: &str, offset: usize, message: String) -> ParseError {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = offset - before.rfind('\n').map(|p| p + 1).unwrap_or(0) + 1;
    ParseError { offset, line, column, message }
}

/// Body formula before DNF expansion.
enum Formula {
    Lit(Literal),
    And(Vec<Formula>),
    Or(Vec<Formula>),
}

impl Formula {
    fn dnf(self) -> Vec<Vec<Literal>> {
        match self {
            Formula::Lit(l) => vec![vec![l]],
            Formula::Or(parts) => parts.into_iter().flat_map(Formula::dnf).collect(),
            Formula::And(parts) => {
                let mut acc: Vec<Vec<Literal>> = vec![Vec::new()];
                for part in parts {
                    let alts = part.dnf();
                    let mut next = Vec::with_capacity(acc.len() * alts.len());
                    for prefix in &acc {
                        for alt in &alts {
                            let mut conj = prefix.clone();
                            conj.extend(alt.iter().cloned());
                            next.push(conj);
                        }
                    }
                    acc = next;
                }
                acc
            }
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Self, ParseError> {
        Ok(Parser { src, toks: Lexer::run(src)?, pos: 0 })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, message: String) -> Result<T, ParseError> {
        Err(error_at(self.src, self.offset(), message))
    }

    fn expect(&mut self, want: Tok, context: &str) -> Result<(), ParseError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected {want} {context}, found {}", self.peek()))
        }
    }

    fn term(&mut self) -> Result<Term, ParseError> {
        let at = self.offset();
        match self.bump() {
            Tok::Var(v) => Ok(Term::var(&v)),
            Tok::Int(n) => Ok(Term::constant(&n.to_string())),
            Tok::Name(name) => {
                if *self.peek() != Tok::LParen {
                    return Ok(Term::constant(&name));
                }
                let open = self.offset();
                self.bump();
                let mut args = vec![self.term_in_parens(open)?];
                loop {
                    match self.peek() {
                        Tok::Comma => {
                            self.bump();
                            args.push(self.term_in_parens(open)?);
                        }
                        Tok::RParen => {
                            self.bump();
                            break;
                        }
                        Tok::Eof => {
                            return Err(error_at(self.src, open, "unclosed `(`".to_string()));
                        }
                        other => {
                            let msg = format!("expected `,` or `)` in argument list, found {other}");
                            return self.err(msg);
                        }
                    }
                }
                Ok(Term::compound(&name, args))
            }
            other => Err(error_at(self.src, at, format!("expected a term, found {other}"))),
        }
    }

    fn term_in_parens(&mut self, open: usize) -> Result<Term, ParseError> {
        if *self.peek() == Tok::Eof {
            return Err(error_at(self.src, open, "unclosed `(`".to_string()));
        }
        self.term()
    }

    fn atom(&mut self) -> Result<Term, ParseError> {
        let at = self.offset();
        let t = self.term()?;
        if t.is_var() {
            return Err(error_at(self.src, at, format!("variable `{t}` used as an atom")));
        }
        Ok(t)
    }

    fn unit(&mut self) -> Result<Formula, ParseError> {
        match self.peek() {
            Tok::Not => {
                self.bump();
                if *self.peek() == Tok::LParen {
                    return self.err("negation of a compound formula is not supported".into());
                }
                Ok(Formula::Lit(Literal::neg(self.atom()?)))
            }
            Tok::LParen => {
                let open = self.offset();
                self.bump();
                let f = self.disjunction()?;
                if *self.peek() == Tok::Eof {
                    return Err(error_at(self.src, open, "unclosed `(`".to_string()));
                }
                self.expect(Tok::RParen, "to close the group")?;
                Ok(f)
            }
            _ => {
                let atom = self.atom()?;
                match atom {
                    Term::Compound(ref f, ref args) if &**f == "not" && args.len() == 1 => {
                        let inner = args[0].clone();
                        if inner.is_var() {
                            return self.err("negated variable".into());
                        }
                        Ok(Formula::Lit(Literal::neg(inner)))
                    }
                    _ => Ok(Formula::Lit(Literal::pos(atom))),
                }
            }
        }
    }

    fn conjunction(&mut self) -> Result<Formula, ParseError> {
        let mut parts = vec![self.unit()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            parts.push(self.unit()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Formula::And(parts) })
    }

    fn disjunction(&mut self) -> Result<Formula, ParseError> {
        let mut parts = vec![self.conjunction()?];
        while *self.peek() == Tok::Semi {
            self.bump();
            parts.push(self.conjunction()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Formula::Or(parts) })
    }

    fn program(&mut self) -> Result<ParsedProgram, ParseError> {
        let mut out = ParsedProgram::default();
        while *self.peek() != Tok::Eof {
            let head_at = self.offset();
            let head = self.atom()?;
            match self.peek() {
                Tok::Slash => {
                    self.bump();
                    let Term::Const(name) = head else {
                        return Err(error_at(self.src, head_at, "declaration needs a bare name".into()));
                    };
                    let arity = match self.peek().clone() {
                        Tok::Int(n) => {
                            self.bump();
                            n
                        }
                        other => return self.err(format!("expected arity after `/`, found {other}")),
                    };
                    self.expect(Tok::Dot, "after declaration")?;
                    out.declarations.push((name, arity));
                }
                Tok::Neck => {
                    self.bump();
                    let body = self.disjunction()?;
                    self.expect(Tok::Dot, "at end of clause")?;
                    for conj in body.dnf() {
                        out.clauses.push(Clause::rule(head.clone(), conj));
                    }
                }
                Tok::Dot => {
                    self.bump();
                    out.clauses.push(Clause::fact(head));
                }
                other => {
                    let msg = format!("expected `:-` or `.` after clause head, found {other}");
                    return self.err(msg);
                }
            }
        }
        Ok(out)
    }
}

/// Parses a whole program. `;` bodies are expanded into several clauses.
pub fn parse_program(text: &str) -> Result<ParsedProgram, ParseError> {
    Parser::new(text)?.program()
}

/// Parses one term (trailing `.` allowed).
pub fn parse_term(text: &str) -> Result<Term, ParseError> {
    let mut p = Parser::new(text)?;
    let t = p.term()?;
    if *p.peek() == Tok::Dot {
        p.bump();
    }
    if *p.peek() != Tok::Eof {
        return p.err(format!("unexpected {} after term", p.peek()));
    }
    Ok(t)
}

/// Parses a conjunctive query such as `sep(A,B,C), \+ adj(A,C).`
pub fn parse_query(text: &str) -> Result<Vec<Literal>, ParseError> {
    let mut p = Parser::new(text)?;
    let f = p.disjunction()?;
    if *p.peek() == Tok::Dot {
        p.bump();
    }
    if *p.peek() != Tok::Eof {
        return p.err(format!("unexpected {} after query", p.peek()));
    }
    let mut alts = f.dnf();
    if alts.len() != 1 {
        return Err(error_at(text, 0, "queries must be conjunctive".into()));
    }
    Ok(alts.pop().unwrap())
}
