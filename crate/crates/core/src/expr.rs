//! A small arithmetic expression language for user-supplied coefficient,
//! source and boundary functions of `(x1, x2)`.
//!
//! Supports `+ - * / ^`, parentheses, numeric literals, the constants `pi`
//! and `e`, the variables `x1`, `x2` (aliases `x`, `y`), and the functions
//! `sin`, `cos`, `exp`, `sqrt`, `log`. `^` binds tighter than unary minus and
//! is right-associative.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Log,
}

impl Func {
    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Exp => v.exp(),
            Func::Sqrt => v.sqrt(),
            Func::Log => v.ln(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    X1,
    X2,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

impl Node {
    fn eval(&self, x1: f64, x2: f64) -> f64 {
        match self {
            Node::Num(v) => *v,
            Node::X1 => x1,
            Node::X2 => x2,
            Node::Neg(a) => -a.eval(x1, x2),
            Node::Add(a, b) => a.eval(x1, x2) + b.eval(x1, x2),
            Node::Sub(a, b) => a.eval(x1, x2) - b.eval(x1, x2),
            Node::Mul(a, b) => a.eval(x1, x2) * b.eval(x1, x2),
            Node::Div(a, b) => a.eval(x1, x2) / b.eval(x1, x2),
            Node::Pow(a, b) => {
                let base = a.eval(x1, x2);
                let e = b.eval(x1, x2);
                if e.fract() == 0.0 && e.abs() < 64.0 {
                    base.powi(e as i32)
                } else {
                    base.powf(e)
                }
            }
            Node::Call(f, a) => f.apply(a.eval(x1, x2)),
        }
    }
}

/// A parsed expression in the variables `x1`, `x2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self> {
        let tokens = lex(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let root = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Expr(format!(
                "unexpected trailing input in '{src}' at token {:?}",
                p.tokens[p.pos]
            )));
        }
        Ok(Self {
            source: src.to_string(),
            root,
        })
    }

    #[inline]
    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        self.root.eval(x1, x2)
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

impl FromStr for Expr {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Expr::parse(s)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn lex(src: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut k = 0;
    while k < chars.len() {
        let c = chars[k];
        if c.is_whitespace() {
            k += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = k;
            while k < chars.len() && (chars[k].is_ascii_digit() || chars[k] == '.') {
                k += 1;
            }
            // exponent part, e.g. 1e-3
            if k < chars.len() && (chars[k] == 'e' || chars[k] == 'E') {
                let save = k;
                k += 1;
                if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                    k += 1;
                }
                if k < chars.len() && chars[k].is_ascii_digit() {
                    while k < chars.len() && chars[k].is_ascii_digit() {
                        k += 1;
                    }
                } else {
                    k = save;
                }
            }
            let s: String = chars[start..k].iter().collect();
            let v = s
                .parse::<f64>()
                .map_err(|_| Error::Expr(format!("bad number '{s}'")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = k;
            while k < chars.len() && (chars[k].is_ascii_alphanumeric() || chars[k] == '_') {
                k += 1;
            }
            out.push(Tok::Ident(chars[start..k].iter().collect()));
        } else if "+-*/^".contains(c) {
            out.push(Tok::Op(c));
            k += 1;
        } else if c == '(' {
            out.push(Tok::LParen);
            k += 1;
        } else if c == ')' {
            out.push(Tok::RParen);
            k += 1;
        } else {
            return Err(Error::Expr(format!("unexpected character '{c}' in '{src}'")));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if c == '+' {
                Node::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if c == '*' {
                Node::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(Tok::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.next() {
            Some(Tok::Num(v)) => Ok(Node::Num(v)),
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                match self.next() {
                    Some(Tok::RParen) => Ok(inner),
                    _ => Err(Error::Expr("missing ')'".into())),
                }
            }
            Some(Tok::Ident(name)) => {
                let func = match name.as_str() {
                    "sin" => Some(Func::Sin),
                    "cos" => Some(Func::Cos),
                    "exp" => Some(Func::Exp),
                    "sqrt" => Some(Func::Sqrt),
                    "log" | "ln" => Some(Func::Log),
                    _ => None,
                };
                if let Some(f) = func {
                    if self.next() != Some(Tok::LParen) {
                        return Err(Error::Expr(format!("'{name}' must be followed by '('")));
                    }
                    let arg = self.expr()?;
                    if self.next() != Some(Tok::RParen) {
                        return Err(Error::Expr(format!("missing ')' after {name}(...")));
                    }
                    return Ok(Node::Call(f, Box::new(arg)));
                }
                match name.as_str() {
                    "x1" | "x" => Ok(Node::X1),
                    "x2" | "y" => Ok(Node::X2),
                    "pi" => Ok(Node::Num(std::f64::consts::PI)),
                    "e" => Ok(Node::Num(std::f64::consts::E)),
                    _ => Err(Error::Expr(format!("unknown identifier '{name}'"))),
                }
            }
            Some(t) => Err(Error::Expr(format!("unexpected token {t:?}"))),
            None => Err(Error::Expr("unexpected end of expression".into())),
        }
    }
}
