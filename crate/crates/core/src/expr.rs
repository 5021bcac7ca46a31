//! Tiny expression grammar for function-valued configuration fields.
//!
//! Supported: numeric constants, the variables `t` and `s`, `+ - * /`,
//! powers `base^p` with a numeric exponent, and the functions `exp(...)`
//! and `sin(...)`. This covers every kernel, shift and payoff modifier the
//! library exercises without embedding an interpreter.
//!
//! Univariate fields (a separable `f`, fractional factors `f1`/`f2`, shift
//! densities) may be written in either `t` or `s`; both names bind to the
//! single argument there.

use crate::scalar::Scalar;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    T,
    S,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, f64),
    Exp(Box<Expr>),
    Sin(Box<Expr>),
}

#[derive(Debug, Clone)]
pub struct ExprError {
    pub position: usize,
    pub message: String,
}

impl fmt::Display for ExprError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at byte {}: {}", self.position, self.message)
    }
}

impl std::error::Error for ExprError {}

impl Expr {
    pub fn parse(text: &str) -> Result<Expr, ExprError> {
        let mut p = Parser {
            tokens: lex(text)?,
            pos: 0,
        };
        let e = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(ExprError {
                position: p.tokens[p.pos].1,
                message: format!("unexpected trailing token {:?}", p.tokens[p.pos].0),
            });
        }
        Ok(e)
    }

    /// Evaluate with both variables bound.
    pub fn eval<T: Scalar>(&self, t: T, s: T) -> T {
        match self {
            Expr::Const(c) => T::of(*c),
            Expr::T => t,
            Expr::S => s,
            Expr::Neg(a) => -a.eval(t, s),
            Expr::Add(a, b) => a.eval(t, s) + b.eval(t, s),
            Expr::Sub(a, b) => a.eval(t, s) - b.eval(t, s),
            Expr::Mul(a, b) => a.eval(t, s) * b.eval(t, s),
            Expr::Div(a, b) => a.eval(t, s) / b.eval(t, s),
            Expr::Pow(a, p) => a.eval(t, s).powf(T::of(*p)),
            Expr::Exp(a) => a.eval(t, s).exp(),
            Expr::Sin(a) => a.eval(t, s).sin(),
        }
    }

    /// Evaluate as a function of one variable (`t` and `s` both bind to `x`).
    pub fn eval1<T: Scalar>(&self, x: T) -> T {
        self.eval(x, x)
    }

    /// Constant-fold; `Some(c)` when the expression does not depend on
    /// either variable.
    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            Expr::T | Expr::S => None,
            Expr::Neg(a) => a.as_const().map(|x| -x),
            Expr::Add(a, b) => Some(a.as_const()? + b.as_const()?),
            Expr::Sub(a, b) => Some(a.as_const()? - b.as_const()?),
            Expr::Mul(a, b) => Some(a.as_const()? * b.as_const()?),
            Expr::Div(a, b) => Some(a.as_const()? / b.as_const()?),
            Expr::Pow(a, p) => Some(a.as_const()?.powf(*p)),
            Expr::Exp(a) => Some(a.as_const()?.exp()),
            Expr::Sin(a) => Some(a.as_const()?.sin()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' => i += 1,
            '+' => {
                out.push((Tok::Plus, i));
                i += 1;
            }
            '-' => {
                out.push((Tok::Minus, i));
                i += 1;
            }
            '*' => {
                out.push((Tok::Star, i));
                i += 1;
            }
            '/' => {
                out.push((Tok::Slash, i));
                i += 1;
            }
            '^' => {
                out.push((Tok::Caret, i));
                i += 1;
            }
            '(' => {
                out.push((Tok::LParen, i));
                i += 1;
            }
            ')' => {
                out.push((Tok::RParen, i));
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_digit()
                        || bytes[i] == b'.'
                        || bytes[i] == b'e'
                        || bytes[i] == b'E'
                        || ((bytes[i] == b'+' || bytes[i] == b'-')
                            && i > start
                            && (bytes[i - 1] == b'e' || bytes[i - 1] == b'E')))
                {
                    i += 1;
                }
                let s = &text[start..i];
                let v: f64 = s.parse().map_err(|_| ExprError {
                    position: start,
                    message: format!("invalid number {s:?}"),
                })?;
                out.push((Tok::Num(v), start));
            }
            'a'..='z' | 'A'..='Z' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_alphanumeric() {
                    i += 1;
                }
                out.push((Tok::Ident(text[start..i].to_string()), start));
            }
            _ => {
                return Err(ExprError {
                    position: i,
                    message: format!("unexpected character {c:?}"),
                })
            }
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn err_here(&self, message: String) -> ExprError {
        let position = self
            .tokens
            .get(self.pos)
            .map(|(_, p)| *p)
            .unwrap_or_else(|| self.tokens.last().map(|(_, p)| p + 1).unwrap_or(0));
        ExprError { position, message }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    acc = Expr::Add(Box::new(acc), Box::new(self.term()?));
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    acc = Expr::Sub(Box::new(acc), Box::new(self.term()?));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut acc = self.factor()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.pos += 1;
                    acc = Expr::Mul(Box::new(acc), Box::new(self.factor()?));
                }
                Some(Tok::Slash) => {
                    self.pos += 1;
                    acc = Expr::Div(Box::new(acc), Box::new(self.factor()?));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if let Some(Tok::Caret) = self.peek() {
            self.pos += 1;
            let neg = if let Some(Tok::Minus) = self.peek() {
                self.pos += 1;
                true
            } else {
                false
            };
            match self.peek().cloned() {
                Some(Tok::Num(p)) => {
                    self.pos += 1;
                    return Ok(Expr::Pow(Box::new(base), if neg { -p } else { p }));
                }
                _ => return Err(self.err_here("exponent must be a numeric literal".into())),
            }
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.peek().cloned() {
            Some(Tok::Minus) => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.factor()?)))
            }
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Const(v))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                match name.as_str() {
                    "t" => Ok(Expr::T),
                    "s" => Ok(Expr::S),
                    "exp" | "sin" => {
                        if self.peek() != Some(&Tok::LParen) {
                            return Err(self.err_here(format!("{name} requires parentheses")));
                        }
                        self.pos += 1;
                        let inner = self.expr()?;
                        if self.peek() != Some(&Tok::RParen) {
                            return Err(self.err_here("missing closing parenthesis".into()));
                        }
                        self.pos += 1;
                        Ok(match name.as_str() {
                            "exp" => Expr::Exp(Box::new(inner)),
                            _ => Expr::Sin(Box::new(inner)),
                        })
                    }
                    other => Err(self.err_here(format!("unknown identifier {other:?}"))),
                }
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(&Tok::RParen) {
                    return Err(self.err_here("missing closing parenthesis".into()));
                }
                self.pos += 1;
                Ok(inner)
            }
            _ => Err(self.err_here("expected a value".into())),
        }
    }
}
