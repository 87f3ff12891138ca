//! Closed-form coordinate expressions for exponent and weight fields.
//!
//! Grammar (usual precedence, `^` binds tightest and is right associative):
//!
//! ```text
//! expr  := term (("+" | "-") term)*
//! term  := unary (("*" | "/") unary)*
//! unary := "-" unary | power
//! power := atom ("^" unary)?
//! atom  := number | "x1".."xN" | "r" | "pi" | func "(" expr ")" | "(" expr ")" | "|" expr "|"
//! func  := sin | cos | exp | sqrt | abs
//! ```
//!
//! `|x|` and `r` both denote the Euclidean norm of the point; `|e|` is the absolute
//! value of any other expression.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Const(f64),
    Coord(usize),
    Radius,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
}

/// A parsed expression over the coordinates of an `N`-dimensional point.
#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

impl Expr {
    pub fn parse(source: &str, dim: usize) -> Result<Self> {
        let mut p = Parser {
            src: source,
            bytes: source.as_bytes(),
            pos: 0,
            dim,
        };
        let root = p.expr()?;
        p.skip_ws();
        if p.pos < p.bytes.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(Expr {
            source: source.to_string(),
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        eval(&self.root, x)
    }

    /// The value if the expression does not depend on the point.
    pub fn as_constant(&self) -> Option<f64> {
        fn is_const(n: &Node) -> bool {
            match n {
                Node::Const(_) => true,
                Node::Coord(_) | Node::Radius => false,
                Node::Neg(a) | Node::Call(_, a) => is_const(a),
                Node::Add(a, b)
                | Node::Sub(a, b)
                | Node::Mul(a, b)
                | Node::Div(a, b)
                | Node::Pow(a, b) => is_const(a) && is_const(b),
            }
        }
        is_const(&self.root).then(|| eval(&self.root, &[]))
    }
}

fn eval(n: &Node, x: &[f64]) -> f64 {
    match n {
        Node::Const(c) => *c,
        Node::Coord(i) => x[*i],
        Node::Radius => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
        Node::Neg(a) => -eval(a, x),
        Node::Add(a, b) => eval(a, x) + eval(b, x),
        Node::Sub(a, b) => eval(a, x) - eval(b, x),
        Node::Mul(a, b) => eval(a, x) * eval(b, x),
        Node::Div(a, b) => eval(a, x) / eval(b, x),
        Node::Pow(a, b) => eval(a, x).powf(eval(b, x)),
        Node::Call(f, a) => {
            let v = eval(a, x);
            match f {
                Func::Sin => v.sin(),
                Func::Cos => v.cos(),
                Func::Exp => v.exp(),
                Func::Sqrt => v.sqrt(),
                Func::Abs => v.abs(),
            }
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    dim: usize,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> Error {
        Error::Expression {
            expr: self.src.to_string(),
            column: self.pos + 1,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        let base = self.atom()?;
        if self.eat(b'^') {
            return Ok(Node::Pow(Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.peek() {
            None => Err(self.error("unexpected end of expression")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected `)`"));
                }
                Ok(inner)
            }
            Some(b'|') => {
                self.pos += 1;
                let start = self.pos;
                if self.ident_at_point() == Some("x") {
                    self.pos += 1;
                    if self.eat(b'|') {
                        return Ok(Node::Radius);
                    }
                    self.pos = start;
                }
                let inner = self.expr()?;
                if !self.eat(b'|') {
                    return Err(self.error("expected closing `|`"));
                }
                Ok(Node::Call(Func::Abs, Box::new(inner)))
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.identifier(),
            Some(_) => Err(self.error("unexpected character")),
        }
    }

    fn ident_at_point(&mut self) -> Option<&str> {
        self.skip_ws();
        let start = self.pos;
        let end = self.bytes[start..]
            .iter()
            .position(|c| !c.is_ascii_alphanumeric())
            .map_or(self.bytes.len(), |e| start + e);
        (end > start).then(|| &self.src[start..end])
    }

    fn number(&mut self) -> Result<Node> {
        let start = self.pos;
        let mut end = start;
        let b = self.bytes;
        while end < b.len() && (b[end].is_ascii_digit() || b[end] == b'.') {
            end += 1;
        }
        if end < b.len() && (b[end] == b'e' || b[end] == b'E') {
            let mut j = end + 1;
            if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
                j += 1;
            }
            if j < b.len() && b[j].is_ascii_digit() {
                while j < b.len() && b[j].is_ascii_digit() {
                    j += 1;
                }
                end = j;
            }
        }
        let text = &self.src[start..end];
        let value: f64 = text.parse().map_err(|_| self.error("malformed number"))?;
        self.pos = end;
        Ok(Node::Const(value))
    }

    fn identifier(&mut self) -> Result<Node> {
        let start = self.pos;
        let name = self.ident_at_point().unwrap_or_default().to_string();
        self.pos = start + name.len();
        let func = match name.as_str() {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "sqrt" => Some(Func::Sqrt),
            "abs" => Some(Func::Abs),
            _ => None,
        };
        if let Some(f) = func {
            if !self.eat(b'(') {
                return Err(self.error("expected `(` after function name"));
            }
            let arg = self.expr()?;
            if !self.eat(b')') {
                return Err(self.error("expected `)`"));
            }
            return Ok(Node::Call(f, Box::new(arg)));
        }
        match name.as_str() {
            "r" => Ok(Node::Radius),
            "pi" => Ok(Node::Const(std::f64::consts::PI)),
            "x" => {
                self.pos = start;
                Err(self.error("bare `x` is only valid inside `|x|`; use x1..xN"))
            }
            _ => {
                let axis = name
                    .strip_prefix('x')
                    .and_then(|d| d.parse::<usize>().ok())
                    .filter(|&i| i >= 1 && i <= self.dim);
                match axis {
                    Some(i) => Ok(Node::Coord(i - 1)),
                    None => {
                        self.pos = start;
                        Err(self.error(&format!("unknown identifier `{name}`")))
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, x: &[f64]) -> f64 {
        Expr::parse(src, x.len()).unwrap().eval(x)
    }

    #[test]
    fn arithmetic_and_precedence() {
        assert_eq!(ev("1 + 2 * 3", &[0.0, 0.0]), 7.0);
        assert_eq!(ev("(1 + 2) * 3", &[0.0, 0.0]), 9.0);
        assert_eq!(ev("-2^2", &[0.0, 0.0]), -4.0);
        assert_eq!(ev("2^3^2", &[0.0, 0.0]), 512.0);
        assert_eq!(ev("1.5e1 / 3", &[0.0, 0.0]), 5.0);
    }

    #[test]
    fn coordinates_and_norm() {
        let x = [3.0, -4.0];
        assert_eq!(ev("x1 - x2", &x), 7.0);
        assert_eq!(ev("|x|", &x), 5.0);
        assert_eq!(ev("r", &x), 5.0);
        assert_eq!(ev("|x2|", &x), 4.0);
        assert_eq!(ev("|x1 - |x2||", &x), 1.0);
        assert!((ev("1.5 + 0.1*sin(pi*x1)", &[0.5, 0.0]) - 1.6).abs() < 1e-15);
        assert!((ev("exp(0) + sqrt(4) + cos(0) + abs(-1)", &x) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn constants_are_detected() {
        assert_eq!(Expr::parse("1.5", 3).unwrap().as_constant(), Some(1.5));
        assert_eq!(Expr::parse("2*exp(0)", 3).unwrap().as_constant(), Some(2.0));
        assert_eq!(Expr::parse("1 + x1", 3).unwrap().as_constant(), None);
    }

    #[test]
    fn errors_carry_column() {
        match Expr::parse("1 + x4", 3) {
            Err(Error::Expression { column, message, .. }) => {
                assert_eq!(column, 5);
                assert!(message.contains("x4"));
            }
            other => panic!("{other:?}"),
        }
        assert!(Expr::parse("x + 1", 3).is_err());
        assert!(Expr::parse("(1 + 2", 3).is_err());
        assert!(Expr::parse("1 2", 3).is_err());
        assert!(Expr::parse("sin 1", 3).is_err());
        assert!(Expr::parse("", 3).is_err());
    }
}
