//! Recursive-descent parser for the formula grammar.

use std::fmt;

use thiserror::Error;

use super::{DepAtom, Formula, IncAtom, IndAtom, Literal, TeamAtom, Var};

/// A parse failure with the byte offset of the offending token.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("parse error at byte {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    LParen,
    RParen,
    Semi,
    Amp,
    Pipe,
    Dot,
    Bang,
    Eq,
    Neq,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::LParen => write!(f, "`(`"),
            Tok::RParen => write!(f, "`)`"),
            Tok::Semi => write!(f, "`;`"),
            Tok::Amp => write!(f, "`&`"),
            Tok::Pipe => write!(f, "`|`"),
            Tok::Dot => write!(f, "`.`"),
            Tok::Bang => write!(f, "`!`"),
            Tok::Eq => write!(f, "`=`"),
            Tok::Neq => write!(f, "`!=`"),
        }
    }
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\r' | b'\n' => i += 1,
            b'(' => {
                toks.push((i, Tok::LParen));
                i += 1;
            }
            b')' => {
                toks.push((i, Tok::RParen));
                i += 1;
            }
            b';' => {
                toks.push((i, Tok::Semi));
                i += 1;
            }
            b'&' => {
                toks.push((i, Tok::Amp));
                i += 1;
            }
            b'|' => {
                toks.push((i, Tok::Pipe));
                i += 1;
            }
            b'.' => {
                toks.push((i, Tok::Dot));
                i += 1;
            }
            b'=' => {
                toks.push((i, Tok::Eq));
                i += 1;
            }
            b'!' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    toks.push((i, Tok::Neq));
                    i += 2;
                } else {
                    toks.push((i, Tok::Bang));
                    i += 1;
                }
            }
            c if c.is_ascii_alphabetic() => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                toks.push((start, Tok::Ident(text[start..i].to_string())));
            }
            other => {
                return Err(ParseError {
                    position: i,
                    message: format!("unexpected character `{}`", other as char),
                })
            }
        }
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn peek_at(&self, offset: usize) -> Option<&Tok> {
        self.toks.get(self.pos + offset).map(|(_, t)| t)
    }

    fn position(&self) -> usize {
        self.toks.get(self.pos).map_or(self.len, |(p, _)| *p)
    }

    fn bump(&mut self) -> Option<Tok> {
        let tok = self.toks.get(self.pos).map(|(_, t)| t.clone());
        if tok.is_some() {
            self.pos += 1;
        }
        tok
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError { position: self.position(), message: message.into() }
    }

    fn expect(&mut self, want: Tok) -> Result<(), ParseError> {
        match self.peek() {
            Some(t) if *t == want => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(self.error(format!("expected {want}, found {t}"))),
            None => Err(self.error(format!("expected {want}, found end of input"))),
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Ident(_)) => match self.bump() {
                Some(Tok::Ident(s)) => Ok(s),
                _ => unreachable!(),
            },
            Some(t) => Err(self.error(format!("expected an identifier, found {t}"))),
            None => Err(self.error("expected an identifier, found end of input")),
        }
    }

    // varlist := var (" " var)* — consecutive identifiers.
    fn varlist(&mut self) -> Result<Vec<Var>, ParseError> {
        let mut vars = vec![Var::new(self.ident()?)];
        while let Some(Tok::Ident(_)) = self.peek() {
            vars.push(Var::new(self.ident()?));
        }
        Ok(vars)
    }

    // A possibly empty varlist, ending at the given delimiter.
    fn varlist_opt(&mut self) -> Vec<Var> {
        let mut vars = Vec::new();
        while let Some(Tok::Ident(_)) = self.peek() {
            match self.bump() {
                Some(Tok::Ident(s)) => vars.push(Var::new(s)),
                _ => unreachable!(),
            }
        }
        vars
    }

    fn disj(&mut self) -> Result<Formula, ParseError> {
        let mut phi = self.conj()?;
        while self.peek() == Some(&Tok::Pipe) {
            self.pos += 1;
            let rhs = self.conj()?;
            phi = Formula::Disj(Box::new(phi), Box::new(rhs));
        }
        Ok(phi)
    }

    fn conj(&mut self) -> Result<Formula, ParseError> {
        let mut phi = self.quant()?;
        while self.peek() == Some(&Tok::Amp) {
            self.pos += 1;
            let rhs = self.quant()?;
            phi = Formula::Conj(Box::new(phi), Box::new(rhs));
        }
        Ok(phi)
    }

    fn quant(&mut self) -> Result<Formula, ParseError> {
        // `A`/`E` start a quantifier only in the form `A var .`; otherwise
        // they read as ordinary identifiers.
        if let Some(Tok::Ident(head)) = self.peek() {
            let is_quant = (head == "A" || head == "E")
                && matches!(self.peek_at(1), Some(Tok::Ident(_)))
                && self.peek_at(2) == Some(&Tok::Dot);
            if is_quant {
                let universal = head == "A";
                self.pos += 1;
                let v = Var::new(self.ident()?);
                self.expect(Tok::Dot)?;
                let body = self.quant()?;
                return Ok(if universal {
                    Formula::Forall(v, Box::new(body))
                } else {
                    Formula::Exists(v, Box::new(body))
                });
            }
        }
        self.unit()
    }

    fn unit(&mut self) -> Result<Formula, ParseError> {
        match self.peek() {
            Some(Tok::LParen) => {
                self.pos += 1;
                let phi = self.disj()?;
                self.expect(Tok::RParen)?;
                Ok(phi)
            }
            Some(Tok::Bang) => {
                self.pos += 1;
                let name = self.ident()?;
                self.expect(Tok::LParen)?;
                let args = self.varlist()?;
                self.expect(Tok::RParen)?;
                Ok(Formula::Literal(Literal::Pred { positive: false, name, args }))
            }
            Some(Tok::Ident(name)) if matches!(name.as_str(), "dep" | "ind" | "inc")
                && self.peek_at(1) == Some(&Tok::LParen) =>
            {
                let kind = name.clone();
                self.pos += 2;
                self.atom(&kind)
            }
            Some(Tok::Ident(_)) => {
                let name = self.ident()?;
                match self.peek() {
                    Some(Tok::LParen) => {
                        self.pos += 1;
                        let args = self.varlist()?;
                        self.expect(Tok::RParen)?;
                        Ok(Formula::Literal(Literal::Pred { positive: true, name, args }))
                    }
                    Some(Tok::Eq) => {
                        self.pos += 1;
                        let right = Var::new(self.ident()?);
                        Ok(Formula::Literal(Literal::Eq {
                            positive: true,
                            left: Var::new(name),
                            right,
                        }))
                    }
                    Some(Tok::Neq) => {
                        self.pos += 1;
                        let right = Var::new(self.ident()?);
                        Ok(Formula::Literal(Literal::Eq {
                            positive: false,
                            left: Var::new(name),
                            right,
                        }))
                    }
                    Some(t) => {
                        let t = t.clone();
                        Err(self.error(format!("expected `(`, `=` or `!=` after identifier, found {t}")))
                    }
                    None => Err(self.error("expected `(`, `=` or `!=` after identifier")),
                }
            }
            Some(t) => {
                let t = t.clone();
                Err(self.error(format!("expected a formula, found {t}")))
            }
            None => Err(self.error("expected a formula, found end of input")),
        }
    }

    // Called after `dep(`, `ind(` or `inc(` has been consumed.
    fn atom(&mut self, kind: &str) -> Result<Formula, ParseError> {
        let atom = match kind {
            "dep" => {
                let condition = self.varlist_opt();
                self.expect(Tok::Semi)?;
                let value = Var::new(self.ident()?);
                TeamAtom::Dep(DepAtom { condition, value })
            }
            "ind" => {
                let condition = self.varlist_opt();
                self.expect(Tok::Semi)?;
                let left = self.varlist()?;
                self.expect(Tok::Semi)?;
                let right = self.varlist()?;
                TeamAtom::Ind(IndAtom { condition, left, right })
            }
            "inc" => {
                let left = self.varlist()?;
                self.expect(Tok::Semi)?;
                let right = self.varlist()?;
                if left.len() != right.len() {
                    return Err(self.error(format!(
                        "inclusion atom sides have widths {} and {}",
                        left.len(),
                        right.len()
                    )));
                }
                TeamAtom::Inc(IncAtom { left, right })
            }
            _ => unreachable!("caller checks the atom keyword"),
        };
        self.expect(Tok::RParen)?;
        Ok(Formula::Atom(atom))
    }
}

/// Parses a formula from the concrete grammar.
pub fn parse_formula(text: &str) -> Result<Formula, ParseError> {
    let toks = tokenize(text)?;
    let mut parser = Parser { toks, pos: 0, len: text.len() };
    let phi = parser.disj()?;
    if let Some(t) = parser.peek() {
        let t = t.clone();
        return Err(parser.error(format!("unexpected {t} after the formula")));
    }
    Ok(phi)
}
