//! Arithmetic expressions over the coordinates `x` and `y`.
//!
//! Used for the terminal payoff on the Dirichlet boundary and for the
//! region predicates that split the boundary into Dirichlet and Neumann
//! parts. The grammar is deliberately tiny:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | 'x' | 'y' | func '(' args ')' | '(' expr ')'
//! func    := abs | sqrt | min | max
//! ```
//!
//! `^` binds tighter than unary minus and is right associative, so
//! `-2^2 = -4` and `2^3^2 = 512`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::geometry::Point;

/// Byte range of a node in the source text. Ignored by equality.
#[derive(Debug, Clone, Copy, Default)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
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
    Abs,
    Sqrt,
    Min,
    Max,
}

impl Func {
    fn arity(self) -> usize {
        match self {
            Func::Abs | Func::Sqrt => 1,
            Func::Min | Func::Max => 2,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Min => "min",
            Func::Max => "max",
        }
    }
}

#[derive(Debug, Clone)]
pub enum ExprKind {
    Lit(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// A parsed expression. Equality is structural and ignores source spans.
#[derive(Debug, Clone)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        match (&self.kind, &other.kind) {
            (ExprKind::Lit(a), ExprKind::Lit(b)) => a.to_bits() == b.to_bits(),
            (ExprKind::Var(a), ExprKind::Var(b)) => a == b,
            (ExprKind::Neg(a), ExprKind::Neg(b)) => a == b,
            (ExprKind::Bin(o1, l1, r1), ExprKind::Bin(o2, l2, r2)) => o1 == o2 && l1 == l2 && r1 == r2,
            (ExprKind::Call(f1, a1), ExprKind::Call(f2, a2)) => f1 == f2 && a1 == a2,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("syntax error at byte {offset}: expected {}, found {found}", expected.join(" | "))]
pub struct SyntaxError {
    pub offset: usize,
    pub expected: Vec<&'static str>,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero in `{expr}` (bytes {}..{})", span.start, span.end)]
    DivByZero { expr: String, span: SpanBytes },
    #[error("square root of negative value in `{expr}` (bytes {}..{})", span.start, span.end)]
    NegativeSqrt { expr: String, span: SpanBytes },
    #[error("power `{expr}` is not a finite real number (bytes {}..{})", span.start, span.end)]
    InvalidPower { expr: String, span: SpanBytes },
}

/// Plain copyable span used in error values (compares by value).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpanBytes {
    pub start: usize,
    pub end: usize,
}

impl From<Span> for SpanBytes {
    fn from(s: Span) -> Self {
        SpanBytes { start: s.start, end: s.end }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LipschitzError {
    #[error("need at least two nodes to estimate a Lipschitz constant, got {0}")]
    TooFewNodes(usize),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl Expr {
    fn new(kind: ExprKind, span: Span) -> Self {
        Expr { kind, span }
    }

    pub fn lit(v: f64) -> Self {
        Expr::new(ExprKind::Lit(v), Span::default())
    }

    pub fn var(v: Var) -> Self {
        Expr::new(ExprKind::Var(v), Span::default())
    }

    pub fn neg(e: Expr) -> Self {
        Expr::new(ExprKind::Neg(Box::new(e)), Span::default())
    }

    pub fn bin(op: BinOp, l: Expr, r: Expr) -> Self {
        Expr::new(ExprKind::Bin(op, Box::new(l), Box::new(r)), Span::default())
    }

    pub fn call(f: Func, args: Vec<Expr>) -> Self {
        assert_eq!(args.len(), f.arity(), "wrong number of arguments for {}", f.name());
        Expr::new(ExprKind::Call(f, args), Span::default())
    }

    /// True when the expression does not mention `x` or `y`.
    pub fn is_constant(&self) -> bool {
        match &self.kind {
            ExprKind::Lit(_) => true,
            ExprKind::Var(_) => false,
            ExprKind::Neg(e) => e.is_constant(),
            ExprKind::Bin(_, l, r) => l.is_constant() && r.is_constant(),
            ExprKind::Call(_, args) => args.iter().all(Expr::is_constant),
        }
    }

    /// Evaluates at `p = (x, y)` in IEEE double precision.
    pub fn eval(&self, p: Point) -> Result<f64, EvalError> {
        match &self.kind {
            ExprKind::Lit(v) => Ok(*v),
            ExprKind::Var(Var::X) => Ok(p[0]),
            ExprKind::Var(Var::Y) => Ok(p[1]),
            ExprKind::Neg(e) => Ok(-e.eval(p)?),
            ExprKind::Bin(op, l, r) => {
                let a = l.eval(p)?;
                let b = r.eval(p)?;
                match op {
                    BinOp::Add => Ok(a + b),
                    BinOp::Sub => Ok(a - b),
                    BinOp::Mul => Ok(a * b),
                    BinOp::Div => {
                        if b == 0.0 {
                            Err(EvalError::DivByZero { expr: self.to_string(), span: self.span.into() })
                        } else {
                            Ok(a / b)
                        }
                    }
                    BinOp::Pow => {
                        let v = a.powf(b);
                        if !v.is_finite() && a.is_finite() && b.is_finite() {
                            Err(EvalError::InvalidPower { expr: self.to_string(), span: self.span.into() })
                        } else {
                            Ok(v)
                        }
                    }
                }
            }
            ExprKind::Call(f, args) => match f {
                Func::Abs => Ok(args[0].eval(p)?.abs()),
                Func::Sqrt => {
                    let v = args[0].eval(p)?;
                    if v < 0.0 {
                        Err(EvalError::NegativeSqrt { expr: self.to_string(), span: self.span.into() })
                    } else {
                        Ok(v.sqrt())
                    }
                }
                Func::Min => {
                    let (a, b) = (args[0].eval(p)?, args[1].eval(p)?);
                    Ok(if b < a { b } else { a })
                }
                Func::Max => {
                    let (a, b) = (args[0].eval(p)?, args[1].eval(p)?);
                    Ok(if b > a { b } else { a })
                }
            },
        }
    }

    /// Discrete Lipschitz constant: max of `|F(p) - F(q)| / |p - q|` over
    /// all pairs of distinct points.
    pub fn lipschitz_on(&self, nodes: &[Point]) -> Result<f64, LipschitzError> {
        if nodes.len() < 2 {
            return Err(LipschitzError::TooFewNodes(nodes.len()));
        }
        let vals = nodes.iter().map(|&p| self.eval(p)).collect::<Result<Vec<_>, _>>()?;
        let mut best = 0.0f64;
        for i in 0..nodes.len() {
            for j in (i + 1)..nodes.len() {
                let d = crate::geometry::dist(nodes[i], nodes[j]);
                if d > 0.0 {
                    best = best.max((vals[i] - vals[j]).abs() / d);
                }
            }
        }
        Ok(best)
    }

    fn write_prec(&self, f: &mut fmt::Formatter<'_>, ctx: u8) -> fmt::Result {
        let (prec, body): (u8, Box<dyn Fn(&mut fmt::Formatter<'_>) -> fmt::Result + '_>) = match &self.kind {
            ExprKind::Lit(v) => (5, Box::new(move |f| write!(f, "{v}"))),
            ExprKind::Var(Var::X) => (5, Box::new(|f| f.write_str("x"))),
            ExprKind::Var(Var::Y) => (5, Box::new(|f| f.write_str("y"))),
            ExprKind::Call(func, args) => (
                5,
                Box::new(move |f| {
                    write!(f, "{}(", func.name())?;
                    for (i, a) in args.iter().enumerate() {
                        if i > 0 {
                            f.write_str(", ")?;
                        }
                        a.write_prec(f, 0)?;
                    }
                    f.write_str(")")
                }),
            ),
            ExprKind::Neg(e) => (
                3,
                Box::new(move |f| {
                    f.write_str("-")?;
                    e.write_prec(f, 3)
                }),
            ),
            ExprKind::Bin(op, l, r) => {
                let (prec, lp, rp, sym) = match op {
                    BinOp::Add => (1, 1, 2, " + "),
                    BinOp::Sub => (1, 1, 2, " - "),
                    BinOp::Mul => (2, 2, 3, " * "),
                    BinOp::Div => (2, 2, 3, " / "),
                    BinOp::Pow => (4, 5, 3, "^"),
                };
                (
                    prec,
                    Box::new(move |f| {
                        l.write_prec(f, lp)?;
                        f.write_str(sym)?;
                        r.write_prec(f, rp)
                    }),
                )
            }
        };
        if prec < ctx {
            f.write_str("(")?;
            body(f)?;
            f.write_str(")")
        } else {
            body(f)
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_prec(f, 0)
    }
}

impl FromStr for Expr {
    type Err = SyntaxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Sym(c) => format!("`{c}`"),
            Tok::Eof => "end of input".to_string(),
        }
    }
}

fn tokenize(src: &str) -> Result<Vec<(Tok, Span)>, SyntaxError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == b'.' {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'.' {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            let v: f64 = text.parse().map_err(|_| SyntaxError {
                offset: start,
                expected: vec!["number"],
                found: format!("`{text}`"),
            })?;
            out.push((Tok::Num(v), Span { start, end: i }));
        } else if c.is_ascii_alphabetic() {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), Span { start, end: i }));
        } else if b"+-*/^(),".contains(&c) {
            i += 1;
            out.push((Tok::Sym(c as char), Span { start, end: i }));
        } else {
            let ch = src[start..].chars().next().unwrap_or('?');
            return Err(SyntaxError {
                offset: start,
                expected: vec!["number", "identifier", "operator", "`(`"],
                found: format!("`{ch}`"),
            });
        }
    }
    out.push((Tok::Eof, Span { start: src.len(), end: src.len() }));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
}

const PRIMARY_START: &[&str] = &["number", "x", "y", "abs", "sqrt", "min", "max", "`(`", "`-`"];

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn span(&self) -> Span {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, Span) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, expected: &[&'static str]) -> SyntaxError {
        SyntaxError { offset: self.span().start, expected: expected.to_vec(), found: self.peek().describe() }
    }

    fn expect_sym(&mut self, c: char, expected: &'static str) -> Result<Span, SyntaxError> {
        if *self.peek() == Tok::Sym(c) {
            Ok(self.bump().1)
        } else {
            Err(self.err(&[expected]))
        }
    }

    fn expr(&mut self) -> Result<Expr, SyntaxError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Sym('+') => BinOp::Add,
                Tok::Sym('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            let span = Span { start: lhs.span.start, end: rhs.span.end };
            lhs = Expr::new(ExprKind::Bin(op, Box::new(lhs), Box::new(rhs)), span);
        }
    }

    fn term(&mut self) -> Result<Expr, SyntaxError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Sym('*') => BinOp::Mul,
                Tok::Sym('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            let span = Span { start: lhs.span.start, end: rhs.span.end };
            lhs = Expr::new(ExprKind::Bin(op, Box::new(lhs), Box::new(rhs)), span);
        }
    }

    fn unary(&mut self) -> Result<Expr, SyntaxError> {
        if *self.peek() == Tok::Sym('-') {
            let start = self.bump().1.start;
            let inner = self.unary()?;
            let span = Span { start, end: inner.span.end };
            return Ok(Expr::new(ExprKind::Neg(Box::new(inner)), span));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, SyntaxError> {
        let base = self.primary()?;
        if *self.peek() == Tok::Sym('^') {
            self.bump();
            let exp = self.unary()?;
            let span = Span { start: base.span.start, end: exp.span.end };
            return Ok(Expr::new(ExprKind::Bin(BinOp::Pow, Box::new(base), Box::new(exp)), span));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, SyntaxError> {
        let (tok, span) = self.toks[self.pos].clone();
        match tok {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::new(ExprKind::Lit(v), span))
            }
            Tok::Sym('(') => {
                self.bump();
                let mut inner = self.expr()?;
                let close = self.expect_sym(')', "`)`")?;
                inner.span = Span { start: span.start, end: close.end };
                Ok(inner)
            }
            Tok::Ident(name) => {
                let func = match name.as_str() {
                    "x" => {
                        self.bump();
                        return Ok(Expr::new(ExprKind::Var(Var::X), span));
                    }
                    "y" => {
                        self.bump();
                        return Ok(Expr::new(ExprKind::Var(Var::Y), span));
                    }
                    "abs" => Func::Abs,
                    "sqrt" => Func::Sqrt,
                    "min" => Func::Min,
                    "max" => Func::Max,
                    _ => return Err(self.err(PRIMARY_START)),
                };
                self.bump();
                self.expect_sym('(', "`(`")?;
                let mut args = vec![self.expr()?];
                while args.len() < func.arity() {
                    self.expect_sym(',', "`,`")?;
                    args.push(self.expr()?);
                }
                let close = self.expect_sym(')', "`)`")?;
                Ok(Expr::new(ExprKind::Call(func, args), Span { start: span.start, end: close.end }))
            }
            _ => Err(self.err(PRIMARY_START)),
        }
    }
}

/// Parses an expression. Whitespace is insignificant; unknown identifiers
/// are rejected.
pub fn parse(src: &str) -> Result<Expr, SyntaxError> {
    let toks = tokenize(src)?;
    let mut p = Parser { toks, pos: 0 };
    if *p.peek() == Tok::Eof {
        return Err(p.err(PRIMARY_START));
    }
    let e = p.expr()?;
    if *p.peek() != Tok::Eof {
        return Err(p.err(&["operator", "end of input"]));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(src: &str, p: Point) -> f64 {
        parse(src).unwrap().eval(p).unwrap()
    }

    #[test]
    fn single_variable() {
        assert_eq!(parse("x").unwrap(), Expr::var(Var::X));
    }

    #[test]
    fn nested_calls_follow_the_grammar() {
        let got = parse("max(0, 1 - abs(y - 0.5))").unwrap();
        let want = Expr::call(
            Func::Max,
            vec![
                Expr::lit(0.0),
                Expr::bin(
                    BinOp::Sub,
                    Expr::lit(1.0),
                    Expr::call(Func::Abs, vec![Expr::bin(BinOp::Sub, Expr::var(Var::Y), Expr::lit(0.5))]),
                ),
            ],
        );
        assert_eq!(got, want);
    }

    #[test]
    fn power_is_right_associative() {
        // (2^3)^2 = 64, 2^(3^2) = 512
        assert_eq!(2f64.powf(3f64.powf(2.0)), 512.0);
        assert_eq!(2f64.powf(3.0).powf(2.0), 64.0);
        assert_eq!(ev("2^3^2", [0.0, 0.0]), 512.0);
    }

    #[test]
    fn precedence() {
        assert_eq!(ev("-2^2", [0.0, 0.0]), -4.0);
        assert_eq!(ev("1 - 2 - 3", [0.0, 0.0]), -4.0);
        assert_eq!(ev("8 / 4 / 2", [0.0, 0.0]), 1.0);
        assert_eq!(ev("1 + 2 * 3", [0.0, 0.0]), 7.0);
        assert_eq!(ev("2^-1", [0.0, 0.0]), 0.5);
    }

    #[test]
    fn evaluation_examples() {
        assert_eq!(ev("x", [0.25, 0.9]), 0.25);
        assert_eq!(ev("abs(x) + abs(y)", [-1.0, 2.0]), 3.0);
        assert_eq!(ev("min(x, y) * 4", [0.5, 0.25]), 1.0);
        assert_eq!(ev("sqrt(x*x + y*y)", [3.0, 4.0]), 5.0);
    }

    #[test]
    fn syntax_error_offsets() {
        let e = parse("x +").unwrap_err();
        assert_eq!(e.offset, 3);
        let e = parse("x + foo").unwrap_err();
        assert_eq!(e.offset, 4);
        assert!(e.expected.contains(&"x"));
        assert!(parse("").is_err());
        assert!(parse("max(1)").is_err());
        assert!(parse("(x").is_err());
        assert!(parse("x y").is_err());
        assert!(parse("x # 2").is_err());
    }

    #[test]
    fn eval_errors_carry_location() {
        let e = parse("1 + x / (y - y)").unwrap().eval([1.0, 2.0]).unwrap_err();
        match e {
            EvalError::DivByZero { span, .. } => assert_eq!(span, SpanBytes { start: 4, end: 15 }),
            other => panic!("unexpected {other:?}"),
        }
        let e = parse("sqrt(x)").unwrap().eval([-1.0, 0.0]).unwrap_err();
        assert!(matches!(e, EvalError::NegativeSqrt { .. }));
        let e = parse("x^0.5").unwrap().eval([-1.0, 0.0]).unwrap_err();
        assert!(matches!(e, EvalError::InvalidPower { .. }));
    }

    #[test]
    fn lipschitz_examples() {
        let pts: Vec<Point> = (0..5).map(|k| [0.0, k as f64 * 0.25]).collect();
        // pairwise by hand: |0.5-0.25|/0.25 = 1, |0.5-0|/0.5 = 1, |0.25-0.25|/0.5 = 0, ...
        assert_eq!(parse("abs(y-0.5)").unwrap().lipschitz_on(&pts).unwrap(), 1.0);
        assert_eq!(parse("0").unwrap().lipschitz_on(&pts).unwrap(), 0.0);
        let row: Vec<Point> = (0..4).map(|k| [k as f64 * 0.3, 0.7]).collect();
        assert_eq!(parse("x").unwrap().lipschitz_on(&row).unwrap(), 1.0);
        assert!(matches!(
            parse("x").unwrap().lipschitz_on(&pts[..1]),
            Err(LipschitzError::TooFewNodes(1))
        ));
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0u32..1000, 0u32..4).prop_map(|(m, d)| Expr::lit(m as f64 / 10f64.powi(d as i32))),
            Just(Expr::var(Var::X)),
            Just(Expr::var(Var::Y)),
        ];
        leaf.prop_recursive(5, 40, 3, |inner| {
            prop_oneof![
                inner.clone().prop_map(Expr::neg),
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
                    .prop_map(|(op, l, r)| Expr::bin(op, l, r)),
                inner.clone().prop_map(|e| Expr::call(Func::Abs, vec![e])),
                inner.clone().prop_map(|e| Expr::call(Func::Sqrt, vec![e])),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::call(Func::Min, vec![a, b])),
                (inner.clone(), inner).prop_map(|(a, b)| Expr::call(Func::Max, vec![a, b])),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_then_parse_is_identity(e in arb_expr()) {
            let printed = e.to_string();
            let back = parse(&printed).unwrap();
            prop_assert_eq!(back, e);
        }

        #[test]
        fn eval_is_bitwise_deterministic(e in arb_expr(), x in -3.0f64..3.0, y in -3.0f64..3.0) {
            let a = e.eval([x, y]).map(f64::to_bits);
            let b = e.eval([x, y]).map(f64::to_bits);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn lipschitz_is_permutation_invariant_and_monotone(
            pts in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 3..12),
            shift in 0usize..11,
        ) {
            let e = parse("abs(x - 0.3) + max(y, 0) * 2 - min(x, y)").unwrap();
            let pts: Vec<Point> = pts.into_iter().map(|(x, y)| [x, y]).collect();
            let full = e.lipschitz_on(&pts).unwrap();
            let mut rotated = pts.clone();
            rotated.rotate_left(shift % pts.len());
            rotated.reverse();
            prop_assert_eq!(full.to_bits(), e.lipschitz_on(&rotated).unwrap().to_bits());
            let sub = e.lipschitz_on(&pts[..2]).unwrap();
            prop_assert!(sub <= full);
        }
    }
}
