//! Arithmetic expressions for model coefficients.
//!
//! Grammar (whitespace, including newlines, is insignificant):
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = unary { ("*" | "/") unary } ;
//! unary   = ("-" | "+") unary | power ;
//! power   = atom [ "^" unary ] ;
//! atom    = number | variable | constant | call | "(" expr ")" ;
//! call    = function "(" expr { "," expr } ")" ;
//! number  = digits [ "." digits ] [ ("e" | "E") [ "+" | "-" ] digits ] ;
//! variable = "x" index | "y" | "z" index | "u" index ;   (bare x, z, u mean index 1)
//! constant = "pi" ;
//! function = "sin" | "cos" | "exp" | "tanh" | "abs" | "sqrt" | "log"
//!          | "min" | "max" | "clamp" ;
//! ```
//!
//! `^` binds tighter than unary minus, so `-x^2` is `-(x^2)`, and is right
//! associative.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown variable `{name}`")]
    UnknownVariable { name: String },
    #[error("unknown function `{name}`")]
    UnknownFunction { name: String },
    #[error("`{name}` takes {expected} argument(s), got {got}")]
    Arity {
        name: &'static str,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("non-finite result in `{0}`")]
    NonFinite(String),
    #[error("variable `{0}` not bound")]
    Unbound(String),
}

/// A variable slot. Indices are zero-based internally and printed one-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X(usize),
    Y,
    Z(usize),
    U(usize),
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::X(i) => write!(f, "x{}", i + 1),
            Var::Y => write!(f, "y"),
            Var::Z(i) => write!(f, "z{}", i + 1),
            Var::U(i) => write!(f, "u{}", i + 1),
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

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Tanh,
    Abs,
    Sqrt,
    Log,
    Min,
    Max,
    Clamp,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "tanh" => Func::Tanh,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            "log" => Func::Log,
            "min" => Func::Min,
            "max" => Func::Max,
            "clamp" => Func::Clamp,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Tanh => "tanh",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Log => "log",
            Func::Min => "min",
            Func::Max => "max",
            Func::Clamp => "clamp",
        }
    }

    /// Exact argument count, or `None` for variadic (at least two).
    fn arity(self) -> Option<usize> {
        match self {
            Func::Min | Func::Max => None,
            Func::Clamp => Some(3),
            _ => Some(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// Values bound to the variables of an expression.
#[derive(Debug, Clone, Copy, Default)]
pub struct Vars<'a> {
    pub x: &'a [f64],
    pub y: f64,
    pub z: &'a [f64],
    pub u: &'a [f64],
}

impl<'a> Vars<'a> {
    pub fn x(x: &'a [f64]) -> Self {
        Vars {
            x,
            ..Default::default()
        }
    }

    pub fn xyz(x: &'a [f64], y: f64, z: &'a [f64]) -> Self {
        Vars { x, y, z, u: &[] }
    }

    pub fn xu(x: &'a [f64], u: &'a [f64]) -> Self {
        Vars {
            x,
            u,
            ..Default::default()
        }
    }
}

/// Which variables an expression may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Scope {
    pub n: usize,
    pub y: bool,
    pub d: usize,
    pub m: usize,
}

/// A parsed coefficient expression.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Node,
}

impl Expression {
    pub fn parse(text: &str) -> Result<Self, ExprError> {
        let tokens = tokenize(text)?;
        let mut p = Parser { tokens, pos: 0 };
        let root = p.expr()?;
        if let Some(tok) = p.tokens.get(p.pos) {
            return Err(tok.error("unexpected trailing input"));
        }
        Ok(Self { root })
    }

    /// Parse and check that every variable lies in `scope`.
    pub fn parse_in(text: &str, scope: Scope) -> Result<Self, ExprError> {
        let e = Self::parse(text)?;
        e.check_scope(scope)?;
        Ok(e)
    }

    pub fn constant(c: f64) -> Self {
        Self { root: Node::Num(c) }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn check_scope(&self, scope: Scope) -> Result<(), ExprError> {
        let mut bad = None;
        self.visit_vars(&mut |v| {
            let ok = match v {
                Var::X(i) => i < scope.n,
                Var::Y => scope.y,
                Var::Z(i) => i < scope.d,
                Var::U(i) => i < scope.m,
            };
            if !ok && bad.is_none() {
                bad = Some(v);
            }
        });
        match bad {
            Some(v) => Err(ExprError::UnknownVariable {
                name: v.to_string(),
            }),
            None => Ok(()),
        }
    }

    fn visit_vars(&self, f: &mut impl FnMut(Var)) {
        fn walk(n: &Node, f: &mut impl FnMut(Var)) {
            match n {
                Node::Num(_) => {}
                Node::Var(v) => f(*v),
                Node::Neg(a) => walk(a, f),
                Node::Bin(_, a, b) => {
                    walk(a, f);
                    walk(b, f);
                }
                Node::Call(_, args) => args.iter().for_each(|a| walk(a, f)),
            }
        }
        walk(&self.root, f)
    }

    pub fn uses(&self, pred: impl Fn(Var) -> bool) -> bool {
        let mut hit = false;
        self.visit_vars(&mut |v| hit |= pred(v));
        hit
    }

    pub fn uses_y(&self) -> bool {
        self.uses(|v| v == Var::Y)
    }

    pub fn uses_z(&self) -> bool {
        self.uses(|v| matches!(v, Var::Z(_)))
    }

    pub fn uses_x(&self) -> bool {
        self.uses(|v| matches!(v, Var::X(_)))
    }

    pub fn is_constant(&self) -> bool {
        !self.uses(|_| true)
    }

    pub fn eval(&self, vars: &Vars<'_>) -> Result<f64, EvalError> {
        let v = eval_node(&self.root, vars)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite(self.to_string()))
        }
    }
}

impl std::str::FromStr for Expression {
    type Err = ExprError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

fn eval_node(n: &Node, vars: &Vars<'_>) -> Result<f64, EvalError> {
    Ok(match n {
        Node::Num(c) => *c,
        Node::Var(v) => {
            let slot = match *v {
                Var::X(i) => vars.x.get(i),
                Var::Y => return Ok(vars.y),
                Var::Z(i) => vars.z.get(i),
                Var::U(i) => vars.u.get(i),
            };
            *slot.ok_or_else(|| EvalError::Unbound(v.to_string()))?
        }
        Node::Neg(a) => -eval_node(a, vars)?,
        Node::Bin(op, a, b) => {
            let a = eval_node(a, vars)?;
            let b = eval_node(b, vars)?;
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => {
                    if b == 0.0 {
                        return Err(EvalError::DivisionByZero);
                    }
                    a / b
                }
                BinOp::Pow => {
                    // Small integer powers are exact products.
                    if b == 2.0 {
                        a * a
                    } else if b.fract() == 0.0 && b.abs() <= 64.0 {
                        a.powi(b as i32)
                    } else {
                        a.powf(b)
                    }
                }
            }
        }
        Node::Call(func, args) => {
            let mut vals = [0.0f64; 3];
            let first = eval_node(&args[0], vars)?;
            match func {
                Func::Sin => first.sin(),
                Func::Cos => first.cos(),
                Func::Exp => first.exp(),
                Func::Tanh => first.tanh(),
                Func::Abs => first.abs(),
                Func::Sqrt => first.sqrt(),
                Func::Log => first.ln(),
                Func::Min | Func::Max => {
                    let mut acc = first;
                    for a in &args[1..] {
                        let v = eval_node(a, vars)?;
                        acc = if *func == Func::Min { acc.min(v) } else { acc.max(v) };
                    }
                    acc
                }
                Func::Clamp => {
                    vals[0] = first;
                    vals[1] = eval_node(&args[1], vars)?;
                    vals[2] = eval_node(&args[2], vars)?;
                    vals[0].max(vals[1]).min(vals[2])
                }
            }
        }
    })
}

// Printing -------------------------------------------------------------------

const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_UNARY: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

fn prec(n: &Node) -> u8 {
    match n {
        Node::Num(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => PREC_UNARY,
        Node::Num(_) | Node::Var(_) | Node::Call(..) => PREC_ATOM,
        Node::Neg(_) => PREC_UNARY,
        Node::Bin(BinOp::Add | BinOp::Sub, ..) => PREC_ADD,
        Node::Bin(BinOp::Mul | BinOp::Div, ..) => PREC_MUL,
        Node::Bin(BinOp::Pow, ..) => PREC_POW,
    }
}

fn write_node(f: &mut fmt::Formatter<'_>, n: &Node, min_prec: u8) -> fmt::Result {
    let paren = prec(n) < min_prec;
    if paren {
        f.write_str("(")?;
    }
    match n {
        Node::Num(c) => write!(f, "{c}")?,
        Node::Var(v) => write!(f, "{v}")?,
        Node::Neg(a) => {
            f.write_str("-")?;
            write_node(f, a, PREC_UNARY)?;
        }
        Node::Bin(op, a, b) => {
            let (sym, p) = match op {
                BinOp::Add => ("+", PREC_ADD),
                BinOp::Sub => ("-", PREC_ADD),
                BinOp::Mul => ("*", PREC_MUL),
                BinOp::Div => ("/", PREC_MUL),
                BinOp::Pow => ("^", PREC_POW),
            };
            if *op == BinOp::Pow {
                write_node(f, a, PREC_ATOM)?;
                f.write_str(sym)?;
                write_node(f, b, PREC_UNARY)?;
            } else {
                write_node(f, a, p)?;
                f.write_str(sym)?;
                write_node(f, b, p + 1)?;
            }
        }
        Node::Call(func, args) => {
            write!(f, "{}(", func.name())?;
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write_node(f, a, 0)?;
            }
            f.write_str(")")?;
        }
    }
    if paren {
        f.write_str(")")?;
    }
    Ok(())
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(f, &self.root, 0)
    }
}

// Lexing and parsing -----------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

impl Token {
    fn error(&self, message: &str) -> ExprError {
        ExprError::Syntax {
            line: self.line,
            column: self.column,
            message: message.to_string(),
        }
    }
}

fn tokenize(text: &str) -> Result<Vec<Token>, ExprError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut line, mut col) = (1usize, 1usize);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        if c == '\n' {
            line += 1;
            col = 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        let start = i;
        let tok = if c.is_ascii_digit() || c == '.' {
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v: f64 = s.parse().map_err(|_| ExprError::Syntax {
                line: tl,
                column: tc,
                message: format!("malformed number `{s}`"),
            })?;
            Tok::Num(v)
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            Tok::Ident(chars[start..i].iter().collect())
        } else {
            i += 1;
            match c {
                '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                ',' => Tok::Comma,
                _ => {
                    return Err(ExprError::Syntax {
                        line: tl,
                        column: tc,
                        message: format!("unexpected character `{c}`"),
                    })
                }
            }
        };
        col += i - start;
        out.push(Token {
            tok,
            line: tl,
            column: tc,
        });
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn eof_error(&self, message: &str) -> ExprError {
        let (line, column) = self
            .tokens
            .last()
            .map(|t| (t.line, t.column + 1))
            .unwrap_or((1, 1));
        ExprError::Syntax {
            line,
            column,
            message: message.to_string(),
        }
    }

    fn next(&mut self, what: &str) -> Result<Token, ExprError> {
        let t = self
            .tokens
            .get(self.pos)
            .cloned()
            .ok_or_else(|| self.eof_error(&format!("unexpected end of input, expected {what}")))?;
        self.pos += 1;
        Ok(t)
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek() {
            let op = if *c == '+' { BinOp::Add } else { BinOp::Sub };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek() {
            let op = if *c == '*' { BinOp::Mul } else { BinOp::Div };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
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

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let t = self.next("a number, variable, function or `(`")?;
        match t.tok {
            Tok::Num(v) => Ok(Node::Num(v)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if let Some(Tok::LParen) = self.peek() {
                    self.pos += 1;
                    let func = Func::lookup(&name).ok_or(ExprError::UnknownFunction { name })?;
                    let mut args = vec![self.expr()?];
                    while let Some(Tok::Comma) = self.peek() {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    self.expect_rparen()?;
                    match func.arity() {
                        Some(k) if k != args.len() => {
                            return Err(ExprError::Arity {
                                name: func.name(),
                                expected: k,
                                got: args.len(),
                            })
                        }
                        None if args.len() < 2 => {
                            return Err(ExprError::Arity {
                                name: func.name(),
                                expected: 2,
                                got: args.len(),
                            })
                        }
                        _ => {}
                    }
                    Ok(Node::Call(func, args))
                } else if name == "pi" {
                    Ok(Node::Num(std::f64::consts::PI))
                } else {
                    parse_var(&name)
                        .map(Node::Var)
                        .ok_or(ExprError::UnknownVariable { name })
                }
            }
            _ => Err(t.error("expected a number, variable, function or `(`")),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        let t = self.next("`)`")?;
        if t.tok == Tok::RParen {
            Ok(())
        } else {
            Err(t.error("expected `)`"))
        }
    }
}

fn parse_var(name: &str) -> Option<Var> {
    if name == "y" {
        return Some(Var::Y);
    }
    let (head, idx) = name.split_at(1);
    let index = if idx.is_empty() {
        0
    } else {
        let k: usize = idx.parse().ok()?;
        if k == 0 || idx.starts_with('0') {
            return None;
        }
        k - 1
    };
    match head {
        "x" => Some(Var::X(index)),
        "z" => Some(Var::Z(index)),
        "u" => Some(Var::U(index)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(s: &str, x: f64) -> f64 {
        Expression::parse(s).unwrap().eval(&Vars::x(&[x])).unwrap()
    }

    #[test]
    fn precedence_and_functions() {
        assert_eq!(ev("1 + 2*3", 0.0), 7.0);
        assert_eq!(ev("-x^2", 3.0), -9.0);
        assert_eq!(ev("2^3^2", 0.0), 512.0);
        assert_eq!(ev("2^-1", 0.0), 0.5);
        assert_eq!(ev("1/(1+x1^2)", 1.0), 0.5);
        assert_eq!(ev("clamp(x, -1, 1)", 5.0), 1.0);
        assert_eq!(ev("min(3, x, 7)", 1.5), 1.5);
        assert_eq!(ev("max(abs(x), 2)", -4.0), 4.0);
        assert!((ev("tanh(0) + cos(0) + exp(0) + sin(pi/2)", 0.0) - 3.0).abs() < 1e-15);
        assert_eq!(ev("1.5e2", 0.0), 150.0);
    }

    #[test]
    fn syntax_errors_carry_position() {
        match Expression::parse("1 +\n  * 2") {
            Err(ExprError::Syntax { line, column, .. }) => {
                assert_eq!((line, column), (2, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            Expression::parse("(1 + 2"),
            Err(ExprError::Syntax { .. })
        ));
        assert!(matches!(
            Expression::parse("foo(1)"),
            Err(ExprError::UnknownFunction { .. })
        ));
        assert!(matches!(
            Expression::parse("clamp(1, 2)"),
            Err(ExprError::Arity { .. })
        ));
        assert!(matches!(
            Expression::parse("w + 1"),
            Err(ExprError::UnknownVariable { .. })
        ));
    }

    #[test]
    fn scope_rejects_out_of_range_variables() {
        let scope = Scope { n: 1, y: true, d: 1, m: 0 };
        let err = Expression::parse_in("z7", scope).unwrap_err();
        assert_eq!(err, ExprError::UnknownVariable { name: "z7".into() });
        assert!(Expression::parse_in("x2", scope).is_err());
        assert!(Expression::parse_in("u", scope).is_err());
        assert!(Expression::parse_in("x1*y + z", scope).is_ok());
    }

    #[test]
    fn division_by_zero_is_an_error() {
        let e = Expression::parse("1/x").unwrap();
        assert_eq!(e.eval(&Vars::x(&[0.0])), Err(EvalError::DivisionByZero));
        let e = Expression::parse("log(x)").unwrap();
        assert!(matches!(e.eval(&Vars::x(&[-1.0])), Err(EvalError::NonFinite(_))));
    }

    #[test]
    fn dependency_flags() {
        let e = Expression::parse("-2*y + z1*x").unwrap();
        assert!(e.uses_y() && e.uses_z() && e.uses_x());
        assert!(Expression::parse("3*pi").unwrap().is_constant());
    }

    #[test]
    fn printing_is_canonical() {
        let e = Expression::parse("-(x*y) - (1 - z) + (-x)^2").unwrap();
        assert_eq!(e.to_string(), "-(x1*y)-(1-z1)+(-x1)^2");
    }

    fn arb_node() -> impl Strategy<Value = Node> {
        let leaf = prop_oneof![
            (0.0f64..100.0).prop_map(Node::Num),
            (-100.0f64..0.0).prop_map(Node::Num),
            Just(Node::Var(Var::X(0))),
            Just(Node::Var(Var::Y)),
            Just(Node::Var(Var::Z(0))),
        ];
        leaf.prop_recursive(5, 48, 3, |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| Node::Neg(Box::new(a))),
                (
                    prop_oneof![
                        Just(BinOp::Add),
                        Just(BinOp::Sub),
                        Just(BinOp::Mul),
                        Just(BinOp::Div),
                        Just(BinOp::Pow)
                    ],
                    inner.clone(),
                    inner.clone()
                )
                    .prop_map(|(op, a, b)| Node::Bin(op, Box::new(a), Box::new(b))),
                inner.clone().prop_map(|a| Node::Call(Func::Tanh, vec![a])),
                (inner.clone(), inner.clone(), inner)
                    .prop_map(|(a, b, c)| Node::Call(Func::Clamp, vec![a, b, c])),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_is_a_fixed_point(root in arb_node()) {
            let printed = Expression { root }.to_string();
            let reparsed = Expression::parse(&printed).unwrap();
            let again = reparsed.to_string();
            prop_assert_eq!(&printed, &again);
            prop_assert_eq!(Expression::parse(&again).unwrap(), reparsed);
        }
    }
}
