//! Tiny closed-form expression trees in the domain coordinates, evaluable
//! at complex arguments. This is the analytic-continuation mechanism:
//! fields given in this form extend to a complex strip by evaluating the
//! same expression at complex coordinates.
//!
//! Text format is prefix notation: `(mul (cos v) (const 1.5))`,
//! `(pow (add (const 1) (mul u u)) -1)`. Coordinates are `u` and `v`;
//! bare numbers are real constants.

use std::fmt;

use crate::error::{Error, Result};
use crate::matrix::{c, cr, C64};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(C64),
    /// Coordinate index: 0 = u, 1 = v.
    Coord(usize),
    Add(Vec<Expr>),
    Mul(Vec<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Exp(Box<Expr>),
    Pow(Box<Expr>, i32),
}

impl Expr {
    pub fn eval(&self, args: &[C64]) -> C64 {
        match self {
            Expr::Const(z) => *z,
            Expr::Coord(i) => args.get(*i).copied().unwrap_or(cr(0.0)),
            Expr::Add(xs) => xs.iter().map(|x| x.eval(args)).sum(),
            Expr::Mul(xs) => xs.iter().map(|x| x.eval(args)).product(),
            Expr::Sub(a, b) => a.eval(args) - b.eval(args),
            Expr::Neg(a) => -a.eval(args),
            Expr::Sin(a) => a.eval(args).sin(),
            Expr::Cos(a) => a.eval(args).cos(),
            Expr::Exp(a) => a.eval(args).exp(),
            Expr::Pow(a, k) => a.eval(args).powi(*k),
        }
    }

    pub fn zero() -> Expr {
        Expr::Const(cr(0.0))
    }

    pub fn real(x: f64) -> Expr {
        Expr::Const(cr(x))
    }
}

fn fmt_num(x: f64) -> String {
    // shortest representation that round-trips
    format!("{x}")
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(z) => {
                if z.im == 0.0 {
                    write!(f, "(const {})", fmt_num(z.re))
                } else {
                    write!(f, "(const {} {})", fmt_num(z.re), fmt_num(z.im))
                }
            }
            Expr::Coord(0) => write!(f, "u"),
            Expr::Coord(1) => write!(f, "v"),
            Expr::Coord(i) => write!(f, "x{i}"),
            Expr::Add(xs) => write_list(f, "add", xs),
            Expr::Mul(xs) => write_list(f, "mul", xs),
            Expr::Sub(a, b) => write!(f, "(sub {a} {b})"),
            Expr::Neg(a) => write!(f, "(neg {a})"),
            Expr::Sin(a) => write!(f, "(sin {a})"),
            Expr::Cos(a) => write!(f, "(cos {a})"),
            Expr::Exp(a) => write!(f, "(exp {a})"),
            Expr::Pow(a, k) => write!(f, "(pow {a} {k})"),
        }
    }
}

fn write_list(f: &mut fmt::Formatter<'_>, op: &str, xs: &[Expr]) -> fmt::Result {
    write!(f, "({op}")?;
    for x in xs {
        write!(f, " {x}")?;
    }
    write!(f, ")")
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Open,
    Close,
    Sym(String),
    Num(f64),
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let mut chars = src.chars().peekable();
    while let Some(&ch) = chars.peek() {
        match ch {
            '(' => {
                chars.next();
                out.push(Token::Open);
            }
            ')' => {
                chars.next();
                out.push(Token::Close);
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            _ => {
                let mut word = String::new();
                while let Some(&c2) = chars.peek() {
                    if c2 == '(' || c2 == ')' || c2.is_whitespace() {
                        break;
                    }
                    word.push(c2);
                    chars.next();
                }
                if let Ok(n) = word.parse::<f64>() {
                    out.push(Token::Num(n));
                } else {
                    out.push(Token::Sym(word));
                }
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: &'a [Token],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Result<&Token> {
        let t = self
            .toks
            .get(self.pos)
            .ok_or_else(|| Error::Parse("unexpected end of expression".into()))?;
        self.pos += 1;
        Ok(t)
    }

    fn expr(&mut self) -> Result<Expr> {
        match self.next()?.clone() {
            Token::Num(n) => Ok(Expr::real(n)),
            Token::Sym(s) => coord(&s),
            Token::Open => {
                let head = match self.next()?.clone() {
                    Token::Sym(s) => s,
                    t => return Err(Error::Parse(format!("expected operator, got {t:?}"))),
                };
                let e = match head.as_str() {
                    "const" => {
                        let re = self.num()?;
                        let im = if matches!(self.peek(), Some(Token::Num(_))) {
                            self.num()?
                        } else {
                            0.0
                        };
                        Expr::Const(c(re, im))
                    }
                    "add" => Expr::Add(self.rest()?),
                    "mul" => Expr::Mul(self.rest()?),
                    "sub" => {
                        let a = self.expr()?;
                        let b = self.expr()?;
                        Expr::Sub(Box::new(a), Box::new(b))
                    }
                    "neg" => Expr::Neg(Box::new(self.expr()?)),
                    "sin" => Expr::Sin(Box::new(self.expr()?)),
                    "cos" => Expr::Cos(Box::new(self.expr()?)),
                    "exp" => Expr::Exp(Box::new(self.expr()?)),
                    "pow" => {
                        let a = self.expr()?;
                        let k = self.num()?;
                        if k.fract() != 0.0 {
                            return Err(Error::Parse("pow exponent must be an integer".into()));
                        }
                        Expr::Pow(Box::new(a), k as i32)
                    }
                    other => return Err(Error::Parse(format!("unknown operator `{other}`"))),
                };
                if head != "add" && head != "mul" {
                    match self.next()? {
                        Token::Close => {}
                        t => return Err(Error::Parse(format!("expected `)`, got {t:?}"))),
                    }
                }
                Ok(e)
            }
            Token::Close => Err(Error::Parse("unexpected `)`".into())),
        }
    }

    /// Remaining expressions up to and including the closing paren.
    fn rest(&mut self) -> Result<Vec<Expr>> {
        let mut out = Vec::new();
        loop {
            if matches!(self.peek(), Some(Token::Close)) {
                self.pos += 1;
                return Ok(out);
            }
            out.push(self.expr()?);
        }
    }

    fn num(&mut self) -> Result<f64> {
        match self.next()? {
            Token::Num(n) => Ok(*n),
            t => Err(Error::Parse(format!("expected number, got {t:?}"))),
        }
    }
}

fn coord(name: &str) -> Result<Expr> {
    match name {
        "u" | "x0" => Ok(Expr::Coord(0)),
        "v" | "x1" => Ok(Expr::Coord(1)),
        other => {
            if let Some(num) = other.strip_prefix('x') {
                if let Ok(i) = num.parse::<usize>() {
                    return Ok(Expr::Coord(i));
                }
            }
            Err(Error::Parse(format!("unknown symbol `{other}`")))
        }
    }
}

pub fn parse(src: &str) -> Result<Expr> {
    let toks = tokenize(src)?;
    let mut p = Parser {
        toks: &toks,
        pos: 0,
    };
    let e = p.expr()?;
    if p.pos != toks.len() {
        return Err(Error::Parse("trailing tokens after expression".into()));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_eval() {
        let e = parse("(mul (cos v) (const 1.5))").unwrap();
        let got = e.eval(&[cr(0.0), cr(0.4)]);
        assert!((got - cr(1.5 * 0.4_f64.cos())).norm() < 1e-15);
    }

    #[test]
    fn bare_numbers_and_coords() {
        let e = parse("(add u (mul 2 v) -0.5)").unwrap();
        let got = e.eval(&[cr(1.0), cr(3.0)]);
        assert!((got - cr(6.5)).norm() < 1e-15);
    }

    #[test]
    fn complex_const_and_pow() {
        let e = parse("(pow (add (const 1) (mul u u)) -1)").unwrap();
        let got = e.eval(&[cr(2.0)]);
        assert!((got - cr(0.2)).norm() < 1e-15);
        // pole at u = i
        let at_pole = e.eval(&[c(0.0, 1.0)]);
        assert!(!at_pole.re.is_finite() || at_pole.norm() > 1e12);
    }

    #[test]
    fn complex_argument_evaluation() {
        let e = parse("(sin u)").unwrap();
        let z = c(0.3, 0.2);
        assert!((e.eval(&[z]) - z.sin()).norm() < 1e-15);
    }

    #[test]
    fn display_roundtrip() {
        for src in [
            "(mul (cos v) (const 1.5))",
            "(sub (sin u) (neg v))",
            "(pow (exp u) 3)",
            "(const 0.25 -1)",
            "(add)",
        ] {
            let e = parse(src).unwrap();
            let printed = e.to_string();
            let e2 = parse(&printed).unwrap();
            assert_eq!(e, e2, "{src} -> {printed}");
        }
    }

    #[test]
    fn parse_errors() {
        assert!(parse("(frob u)").is_err());
        assert!(parse("(sin u) extra").is_err());
        assert!(parse("(pow u 0.5)").is_err());
        assert!(parse("(sin").is_err());
    }
}
