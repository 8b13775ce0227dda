//! Coefficient expressions in the single variable `x`.
//!
//! Grammar (recursive descent, `^` right-associative):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := unary ('^' factor)?
//! unary  := '-'? atom
//! atom   := number | 'x' | func '(' expr ')' | '(' expr ')'
//! func   := sin | cos | exp | sqrt
//! ```

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
        }
    }

    fn lookup(name: &str) -> Option<Func> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "sqrt" => Some(Func::Sqrt),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expression {
    Const(f64),
    X,
    Neg(Box<Expression>),
    Func(Func, Box<Expression>),
    Binary(BinOp, Box<Expression>, Box<Expression>),
}

impl Expression {
    pub fn constant(c: f64) -> Self {
        Expression::Const(c)
    }

    /// True when the tree contains no `x`.
    pub fn is_constant(&self) -> bool {
        match self {
            Expression::Const(_) => true,
            Expression::X => false,
            Expression::Neg(a) | Expression::Func(_, a) => a.is_constant(),
            Expression::Binary(_, a, b) => a.is_constant() && b.is_constant(),
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let v = self.eval_inner(x)?;
        if !v.is_finite() {
            return Err(self.fail(x, "non-finite result"));
        }
        Ok(v)
    }

    fn fail(&self, x: f64, reason: &str) -> Error {
        Error::Eval { expr: self.to_string(), x, reason: reason.to_string() }
    }

    fn eval_inner(&self, x: f64) -> Result<f64> {
        Ok(match self {
            Expression::Const(c) => *c,
            Expression::X => x,
            Expression::Neg(a) => -a.eval_inner(x)?,
            Expression::Func(f, a) => {
                let v = a.eval_inner(x)?;
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                    Func::Sqrt => {
                        if v < 0.0 {
                            return Err(self.fail(x, "square root of a negative number"));
                        }
                        v.sqrt()
                    }
                }
            }
            Expression::Binary(op, a, b) => {
                let u = a.eval_inner(x)?;
                let v = b.eval_inner(x)?;
                match op {
                    BinOp::Add => u + v,
                    BinOp::Sub => u - v,
                    BinOp::Mul => u * v,
                    BinOp::Div => {
                        if v == 0.0 {
                            return Err(self.fail(x, "division by zero"));
                        }
                        u / v
                    }
                    BinOp::Pow => {
                        let r = u.powf(v);
                        if r.is_nan() && !u.is_nan() && !v.is_nan() {
                            return Err(self.fail(x, "fractional power of a negative number"));
                        }
                        r
                    }
                }
            }
        })
    }
}

/// Fully parenthesized; re-parses to an equivalent tree.
impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expression::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => {
                write!(f, "(-{})", -c)
            }
            Expression::Const(c) => write!(f, "{c}"),
            Expression::X => f.write_str("x"),
            Expression::Neg(a) => write!(f, "(-{a})"),
            Expression::Func(func, a) => write!(f, "{}({a})", func.name()),
            Expression::Binary(op, a, b) => write!(f, "({a}{}{b})", op.symbol()),
        }
    }
}

impl FromStr for Expression {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_expression(s)
    }
}

pub fn parse_expression(text: &str) -> Result<Expression> {
    let mut p = Parser { src: text.as_bytes(), pos: 0 };
    p.skip_ws();
    if p.at_end() {
        return Err(p.expected(&["expression"]));
    }
    let e = p.expr()?;
    p.skip_ws();
    if !p.at_end() {
        return Err(p.expected(&["operator", "end of input"]));
    }
    Ok(e)
}

pub fn eval_expression(e: &Expression, x: f64) -> Result<f64> {
    e.eval(x)
}

const ATOM_START: &[&str] = &["number", "'x'", "sin", "cos", "exp", "sqrt", "'('"];

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn expected(&self, what: &[&str]) -> Error {
        Error::Parse { offset: self.pos, expected: what.iter().map(|s| s.to_string()).collect() }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expression> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat(b'+') {
                BinOp::Add
            } else if self.eat(b'-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Expression::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expression> {
        let mut lhs = self.factor()?;
        loop {
            let op = if self.eat(b'*') {
                BinOp::Mul
            } else if self.eat(b'/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.factor()?;
            lhs = Expression::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn factor(&mut self) -> Result<Expression> {
        let base = self.unary()?;
        if self.eat(b'^') {
            let exp = self.factor()?;
            return Ok(Expression::Binary(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<Expression> {
        if self.eat(b'-') {
            return Ok(Expression::Neg(Box::new(self.atom()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expression> {
        self.skip_ws();
        let start = self.pos;
        match self.peek() {
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.skip_ws();
                if !self.eat(b')') {
                    return Err(self.expected(&["')'", "operator"]));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_alphabetic() => {
                while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
                if name == "x" {
                    return Ok(Expression::X);
                }
                let Some(func) = Func::lookup(name) else {
                    self.pos = start;
                    return Err(self.expected(&["'x'", "sin", "cos", "exp", "sqrt"]));
                };
                if !self.eat(b'(') {
                    return Err(self.expected(&["'('"]));
                }
                let arg = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.expected(&["')'", "operator"]));
                }
                Ok(Expression::Func(func, Box::new(arg)))
            }
            _ => Err(self.expected(ATOM_START)),
        }
    }

    fn number(&mut self) -> Result<Expression> {
        let start = self.pos;
        let mut digits = 0;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
            digits += 1;
        }
        if self.peek() == Some(b'.') {
            self.pos += 1;
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.pos += 1;
                digits += 1;
            }
        }
        if digits == 0 {
            self.pos = start;
            return Err(self.expected(&["digit"]));
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        text.parse::<f64>()
            .map(Expression::Const)
            .map_err(|_| Error::Parse { offset: start, expected: vec!["number".into()] })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, x: f64) -> f64 {
        parse_expression(s).unwrap().eval(x).unwrap()
    }

    #[test]
    fn example_one_alpha0_at_zero() {
        assert!((ev(".2*cos(10*x) - .5*cos(x/10)", 0.0) + 0.3).abs() < 1e-15);
    }

    #[test]
    fn simple_values() {
        assert_eq!(ev("x", 0.25), 0.25);
        assert_eq!(ev("2*sin(5*x)", 0.0), 0.0);
        assert_eq!(ev("5*x*(1-x)", 0.5), 1.25);
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("2^3^2", 0.0), 512.0);
        assert_eq!(ev("1-2-3", 0.0), -4.0);
        assert_eq!(ev("8/2/2", 0.0), 2.0);
        assert_eq!(ev("1+2*3", 0.0), 7.0);
        // unary binds tighter than '^' in this grammar
        assert_eq!(ev("-x^2", 3.0), 9.0);
        assert_eq!(ev("2^-1", 0.0), 0.5);
        assert_eq!(ev("sqrt(4) + exp(0)", 0.0), 3.0);
        assert_eq!(ev("  ( x )  ", 2.0), 2.0);
        assert_eq!(ev("3.", 0.0), 3.0);
    }

    #[test]
    fn syntax_errors_carry_offset() {
        match parse_expression("sin(") {
            Err(Error::Parse { offset, expected }) => {
                assert_eq!(offset, 4);
                assert!(expected.iter().any(|e| e == "number"));
            }
            other => panic!("unexpected {other:?}"),
        }
        for (text, off) in [("", 0), ("1+", 2), ("foo(x)", 0), ("(1", 2), ("x x", 2), ("sin x", 4), (".", 0), ("--x", 1)] {
            match parse_expression(text) {
                Err(Error::Parse { offset, .. }) => assert_eq!(offset, off, "{text}"),
                other => panic!("{text}: unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn evaluation_errors() {
        assert!(matches!(parse_expression("1/x").unwrap().eval(0.0), Err(Error::Eval { .. })));
        assert!(matches!(parse_expression("sqrt(x-1)").unwrap().eval(0.0), Err(Error::Eval { .. })));
        assert!(matches!(parse_expression("(x-1)^.5").unwrap().eval(0.0), Err(Error::Eval { .. })));
        assert!(matches!(parse_expression("exp(1000)").unwrap().eval(0.0), Err(Error::Eval { .. })));
    }

    #[test]
    fn display_round_trip() {
        for s in ["-x^2", "2^3^2", "1-(2-3)", ".2*cos(10*x) - .5*cos(x/10)", "-(x+1)/3", "sqrt(x)^-2"] {
            let e = parse_expression(s).unwrap();
            let back = parse_expression(&e.to_string()).unwrap();
            assert_eq!(e, back, "{s}");
        }
        let neg = Expression::Binary(BinOp::Mul, Box::new(Expression::Const(-1.5)), Box::new(Expression::X));
        assert_eq!(parse_expression(&neg.to_string()).unwrap().eval(2.0).unwrap(), -3.0);
    }
}
