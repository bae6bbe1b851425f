//! Scalar arithmetic expressions over the parameter variables `mu1 … mud`.
//!
//! Grammar (whitespace insensitive):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' ['-'|'+'] integer)?
//! primary := number | variable | '(' expr ')'
//! variable:= 'mu' digits | 'mu_' digits | 'μ' digits
//! ```
//!
//! Variables are 1-based in the text (`mu1` is the first parameter).

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExprError {
    #[error("unexpected character {found:?} at offset {offset}")]
    UnexpectedChar { found: char, offset: usize },
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("unexpected token at offset {offset}: expected {expected}")]
    Unexpected { offset: usize, expected: &'static str },
    #[error("invalid number literal {0:?}")]
    BadNumber(String),
    #[error("variable index must be at least 1, got mu{0}")]
    ZeroVariable(usize),
    #[error("variable mu{index} is out of range for a {dim}-dimensional parameter")]
    VariableOutOfRange { index: usize, dim: usize },
    #[error("division by zero")]
    DivisionByZero,
    #[error("non-finite result")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    /// Zero-based parameter index.
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
}

impl Expr {
    pub fn parse(text: &str) -> Result<Self, ExprError> {
        let tokens = tokenize(text)?;
        let mut parser = Parser { tokens: &tokens, pos: 0 };
        let expr = parser.expr()?;
        match parser.peek() {
            None => Ok(expr),
            Some(t) => Err(ExprError::Unexpected { offset: t.offset, expected: "end of expression" }),
        }
    }

    pub fn constant(value: f64) -> Self {
        Expr::Num(value)
    }

    /// Largest zero-based variable index referenced, if any.
    pub fn max_variable(&self) -> Option<usize> {
        match self {
            Expr::Num(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Neg(e) | Expr::Pow(e, _) => e.max_variable(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                match (a.max_variable(), b.max_variable()) {
                    (Some(x), Some(y)) => Some(x.max(y)),
                    (x, y) => x.or(y),
                }
            }
        }
    }

    pub fn check_dim(&self, dim: usize) -> Result<(), ExprError> {
        match self.max_variable() {
            Some(i) if i >= dim => Err(ExprError::VariableOutOfRange { index: i + 1, dim }),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, mu: &[f64]) -> Result<f64, ExprError> {
        let v = match self {
            Expr::Num(x) => *x,
            Expr::Var(i) => *mu
                .get(*i)
                .ok_or(ExprError::VariableOutOfRange { index: i + 1, dim: mu.len() })?,
            Expr::Neg(e) => -e.eval(mu)?,
            Expr::Add(a, b) => a.eval(mu)? + b.eval(mu)?,
            Expr::Sub(a, b) => a.eval(mu)? - b.eval(mu)?,
            Expr::Mul(a, b) => a.eval(mu)? * b.eval(mu)?,
            Expr::Div(a, b) => {
                let den = b.eval(mu)?;
                if den == 0.0 {
                    return Err(ExprError::DivisionByZero);
                }
                a.eval(mu)? / den
            }
            Expr::Pow(e, k) => {
                let base = e.eval(mu)?;
                if base == 0.0 && *k < 0 {
                    return Err(ExprError::DivisionByZero);
                }
                base.powi(*k)
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ExprError::NonFinite)
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(x) => write!(f, "{x:?}"),
            Expr::Var(i) => write!(f, "mu{}", i + 1),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(e, k) => write!(f, "({e}^{k})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Var(usize),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    offset: usize,
    /// Raw text for integer exponents.
    text: String,
}

fn tokenize(text: &str) -> Result<Vec<Token>, ExprError> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (offset, c) = chars[i];
        let single = match c {
            ' ' | '\t' | '\n' | '\r' => {
                i += 1;
                continue;
            }
            '+' => Some(Tok::Plus),
            '-' | '−' => Some(Tok::Minus),
            '*' | '×' => Some(Tok::Star),
            '/' | '÷' => Some(Tok::Slash),
            '^' => Some(Tok::Caret),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(tok) = single {
            out.push(Token { tok, offset, text: c.to_string() });
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].1.is_ascii_digit() || chars[i].1 == '.') {
                i += 1;
            }
            // exponent part: 1e-3, 2.5E+4
            if i < chars.len() && (chars[i].1 == 'e' || chars[i].1 == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j].1 == '+' || chars[j].1 == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].1.is_ascii_digit() {
                    while j < chars.len() && chars[j].1.is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let s: String = chars[start..i].iter().map(|(_, c)| *c).collect();
            let v: f64 = s.parse().map_err(|_| ExprError::BadNumber(s.clone()))?;
            out.push(Token { tok: Tok::Num(v), offset, text: s });
            continue;
        }
        let rest: String = chars[i..].iter().map(|(_, c)| *c).collect();
        let prefix_len = if rest.starts_with("mu_") {
            Some(3)
        } else if rest.starts_with("mu") {
            Some(2)
        } else if rest.starts_with('μ') {
            Some(1)
        } else {
            None
        };
        if let Some(skip) = prefix_len {
            let mut j = i + skip;
            let start = j;
            while j < chars.len() && chars[j].1.is_ascii_digit() {
                j += 1;
            }
            if j == start {
                return Err(ExprError::Unexpected { offset, expected: "variable index after mu" });
            }
            let digits: String = chars[start..j].iter().map(|(_, c)| *c).collect();
            let idx: usize = digits.parse().map_err(|_| ExprError::BadNumber(digits.clone()))?;
            if idx == 0 {
                return Err(ExprError::ZeroVariable(idx));
            }
            out.push(Token { tok: Tok::Var(idx - 1), offset, text: digits });
            i = j;
            continue;
        }
        return Err(ExprError::UnexpectedChar { found: c, offset });
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Result<&Token, ExprError> {
        let t = self.tokens.get(self.pos).ok_or(ExprError::UnexpectedEnd)?;
        self.pos += 1;
        Ok(t)
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek().map(|t| &t.tok == tok).unwrap_or(false) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(&Tok::Plus) {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(&Tok::Minus) {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(&Tok::Star) {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(&Tok::Slash) {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.eat(&Tok::Minus) {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if !self.eat(&Tok::Caret) {
            return Ok(base);
        }
        let negative = if self.eat(&Tok::Minus) {
            true
        } else {
            self.eat(&Tok::Plus);
            false
        };
        let t = self.next()?;
        let offset = t.offset;
        let k: i32 = match t.tok {
            Tok::Num(_) => t
                .text
                .parse()
                .map_err(|_| ExprError::Unexpected { offset, expected: "integer exponent" })?,
            _ => return Err(ExprError::Unexpected { offset, expected: "integer exponent" }),
        };
        Ok(Expr::Pow(Box::new(base), if negative { -k } else { k }))
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        let t = self.next()?.clone();
        match t.tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::Var(i) => Ok(Expr::Var(i)),
            Tok::LParen => {
                let e = self.expr()?;
                let close = self.next()?;
                if close.tok != Tok::RParen {
                    return Err(ExprError::Unexpected { offset: close.offset, expected: "')'" });
                }
                Ok(e)
            }
            _ => Err(ExprError::Unexpected { offset: t.offset, expected: "number, variable or '('" }),
        }
    }
}
