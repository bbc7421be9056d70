//! The expression grammar of problem files.
//!
//! ```text
//! expr   := ['-'] term (('+' | '-') term)*
//! term   := factor ('*' factor)*
//! factor := primary ['^' NUMBER]
//! primary:= NUMBER | xK | abs(expr) | exp(expr) | '(' expr ')'
//! ```
//!
//! Parsing is followed by a convexity check that only admits non-negative
//! combinations of `(affine)^2`, `abs(affine)` and `exp(xK)` plus an affine
//! part. The result is canonical: parsing the `Display` form of a parsed
//! expression reproduces it exactly.

use std::fmt;

use crate::convex::ConvexExpr;

#[derive(Clone, Debug, PartialEq)]
pub struct ExprError {
    /// 1-based character column inside the expression string.
    pub column: usize,
    pub message: String,
}

impl fmt::Display for ExprError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "column {}: {}", self.column, self.message)
    }
}

impl std::error::Error for ExprError {}

type PResult<T> = std::result::Result<T, ExprError>;

fn err<T>(column: usize, message: impl Into<String>) -> PResult<T> {
    Err(ExprError {
        column,
        message: message.into(),
    })
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Var(usize),
    Func(Func),
    Plus,
    Minus,
    Star,
    Caret,
    LParen,
    RParen,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Func {
    Abs,
    Exp,
}

fn tokenize(src: &str) -> PResult<Vec<(Tok, usize)>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        match c {
            ' ' | '\t' | '\n' | '\r' => {
                i += 1;
                continue;
            }
            '+' => out.push((Tok::Plus, col)),
            '-' => out.push((Tok::Minus, col)),
            '*' => out.push((Tok::Star, col)),
            '^' => out.push((Tok::Caret, col)),
            '(' => out.push((Tok::LParen, col)),
            ')' => out.push((Tok::RParen, col)),
            '0'..='9' | '.' => {
                let start = i;
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
                let text: String = chars[start..i].iter().collect();
                let v: f64 = text.parse().map_err(|_| ExprError {
                    column: col,
                    message: format!("malformed number `{text}`"),
                })?;
                out.push((Tok::Num(v), col));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                let tok = match word.as_str() {
                    "abs" => Tok::Func(Func::Abs),
                    "exp" => Tok::Func(Func::Exp),
                    w if w.len() > 1
                        && w.starts_with('x')
                        && w[1..].bytes().all(|b| b.is_ascii_digit()) =>
                    {
                        let k: usize = w[1..].parse().map_err(|_| ExprError {
                            column: col,
                            message: format!("bad variable `{w}`"),
                        })?;
                        if k == 0 {
                            return err(col, "variables are numbered from x1");
                        }
                        Tok::Var(k - 1)
                    }
                    w => {
                        return err(
                            col,
                            format!("unknown name `{w}`; expected x1, x2, ..., abs or exp"),
                        )
                    }
                };
                out.push((tok, col));
                continue;
            }
            c => return err(col, format!("unexpected character `{c}`")),
        }
        i += 1;
    }
    Ok(out)
}

#[derive(Clone, Debug)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>, usize),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>, usize),
    Mul(Box<Node>, Box<Node>, usize),
    Pow(Box<Node>, f64, usize),
    Call(Func, Box<Node>, usize),
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(_, c)| *c)
    }

    fn expect(&mut self, t: Tok, what: &str) -> PResult<()> {
        if self.peek() == Some(&t) {
            self.pos += 1;
            Ok(())
        } else {
            err(self.col(), format!("expected {what}"))
        }
    }

    fn expr(&mut self) -> PResult<Node> {
        let mut lhs = if self.peek() == Some(&Tok::Minus) {
            let col = self.col();
            self.pos += 1;
            Node::Neg(Box::new(self.term()?), col)
        } else {
            self.term()?
        };
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Tok::Minus) => {
                    let col = self.col();
                    self.pos += 1;
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?), col);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> PResult<Node> {
        let mut lhs = self.factor()?;
        while self.peek() == Some(&Tok::Star) {
            let col = self.col();
            self.pos += 1;
            lhs = Node::Mul(Box::new(lhs), Box::new(self.factor()?), col);
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> PResult<Node> {
        let base = self.primary()?;
        if self.peek() == Some(&Tok::Caret) {
            let col = self.col();
            self.pos += 1;
            match self.peek() {
                Some(&Tok::Num(p)) => {
                    self.pos += 1;
                    return Ok(Node::Pow(Box::new(base), p, col));
                }
                _ => return err(self.col(), "expected a numeric exponent after `^`"),
            }
        }
        Ok(base)
    }

    fn primary(&mut self) -> PResult<Node> {
        let col = self.col();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Node::Num(v))
            }
            Some(Tok::Var(k)) => {
                self.pos += 1;
                Ok(Node::Var(k))
            }
            Some(Tok::Func(f)) => {
                self.pos += 1;
                self.expect(Tok::LParen, "`(` after function name")?;
                let arg = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(Node::Call(f, Box::new(arg), col))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Some(Tok::Minus) => err(
                col,
                "unary minus is only allowed at the start of an expression or group",
            ),
            Some(_) => err(col, "expected a number, variable, function or `(`"),
            None => err(col, "unexpected end of expression"),
        }
    }
}

/// `Σ w_k atom_k + Σ c_j x_j + c`, atoms being non-affine.
#[derive(Clone, Debug, Default)]
struct Canon {
    atoms: Vec<(f64, ConvexExpr)>,
    lin: Vec<(usize, f64)>,
    constant: f64,
}

impl Canon {
    fn constant(c: f64) -> Self {
        Canon {
            constant: c,
            ..Default::default()
        }
    }

    fn is_affine(&self) -> bool {
        self.atoms.is_empty()
    }

    fn as_constant(&self) -> Option<f64> {
        (self.atoms.is_empty() && self.lin.iter().all(|(_, c)| *c == 0.0)).then_some(self.constant)
    }

    fn add(mut self, other: Canon) -> Canon {
        self.atoms.extend(other.atoms);
        for (k, c) in other.lin {
            match self.lin.iter_mut().find(|(j, _)| *j == k) {
                Some((_, acc)) => *acc += c,
                None => self.lin.push((k, c)),
            }
        }
        self.constant += other.constant;
        self
    }

    fn scale(mut self, s: f64, col: usize) -> PResult<Canon> {
        if s < 0.0 && !self.atoms.is_empty() {
            return err(col, "negative multiple of a non-affine atom is not convex");
        }
        if s == 0.0 {
            return Ok(Canon::default());
        }
        for (w, _) in &mut self.atoms {
            *w *= s;
        }
        for (_, c) in &mut self.lin {
            *c *= s;
        }
        self.constant *= s;
        Ok(self)
    }

    /// `c1 * x_k + c0` with at most one variable.
    fn univariate(&self) -> Option<(Option<(usize, f64)>, f64)> {
        if !self.atoms.is_empty() {
            return None;
        }
        let vars: Vec<_> = self.lin.iter().filter(|(_, c)| *c != 0.0).collect();
        match vars.as_slice() {
            [] => Some((None, self.constant)),
            [&(k, c)] => Some((Some((k, c)), self.constant)),
            _ => None,
        }
    }
}

fn zero_sign(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

fn lower(n: &Node) -> PResult<Canon> {
    match n {
        Node::Num(v) => Ok(Canon::constant(*v)),
        Node::Var(k) => Ok(Canon {
            lin: vec![(*k, 1.0)],
            ..Default::default()
        }),
        Node::Neg(a, col) => {
            let a = lower(a)?;
            if !a.is_affine() {
                return err(*col, "negating a non-affine atom is not convex");
            }
            a.scale(-1.0, *col)
        }
        Node::Add(a, b) => Ok(lower(a)?.add(lower(b)?)),
        Node::Sub(a, b, col) => {
            let b = lower(b)?;
            if !b.is_affine() {
                return err(*col, "subtracting a non-affine atom is not convex");
            }
            Ok(lower(a)?.add(b.scale(-1.0, *col)?))
        }
        Node::Mul(a, b, col) => {
            let (a, b) = (lower(a)?, lower(b)?);
            match (a.as_constant(), b.as_constant()) {
                (Some(c), _) => b.scale(c, *col),
                (_, Some(c)) => a.scale(c, *col),
                _ => err(*col, "product of non-constant terms is not supported"),
            }
        }
        Node::Pow(base, p, col) => {
            if *p != 2.0 {
                return err(
                    *col,
                    format!("non-convex atom: power `^{p}` (only `^2` is allowed)"),
                );
            }
            let b = lower(base)?;
            match b.univariate() {
                Some((None, c)) => Ok(Canon::constant(c * c)),
                Some((Some((k, c1)), c0)) => Ok(Canon {
                    atoms: vec![(
                        1.0,
                        ConvexExpr::Quadratic {
                            var: k,
                            shift: zero_sign(-c0 / c1),
                            coef: c1 * c1,
                        },
                    )],
                    ..Default::default()
                }),
                None => err(
                    *col,
                    "non-convex atom: `^2` needs an affine function of one variable",
                ),
            }
        }
        Node::Call(Func::Abs, arg, col) => {
            let a = lower(arg)?;
            match a.univariate() {
                Some((None, c)) => Ok(Canon::constant(c.abs())),
                Some((Some((k, c1)), c0)) => Ok(Canon {
                    atoms: vec![(c1.abs(), ConvexExpr::abs(k, zero_sign(-c0 / c1)))],
                    ..Default::default()
                }),
                None => err(
                    *col,
                    "non-convex atom: abs() needs an affine function of one variable",
                ),
            }
        }
        Node::Call(Func::Exp, arg, col) => {
            let a = lower(arg)?;
            match a.univariate() {
                Some((Some((k, c1)), c0)) if c1 == 1.0 && c0 == 0.0 => Ok(Canon {
                    atoms: vec![(1.0, ConvexExpr::exp(k, 0.0))],
                    ..Default::default()
                }),
                _ => err(*col, "exp() takes a single variable, e.g. exp(x2)"),
            }
        }
    }
}

fn finish(c: Canon) -> ConvexExpr {
    let affine = ConvexExpr::affine(c.lin, zero_sign(c.constant));
    let affine_is_zero = matches!(&affine, ConvexExpr::Affine { coeffs, constant } if coeffs.is_empty() && *constant == 0.0);
    let atoms: Vec<(f64, ConvexExpr)> = c
        .atoms
        .into_iter()
        .filter(|(w, _)| *w != 0.0)
        .map(|(w, a)| match a {
            ConvexExpr::Quadratic { var, shift, coef } => (
                1.0,
                ConvexExpr::Quadratic {
                    var,
                    shift,
                    coef: coef * w,
                },
            ),
            a => (w, a),
        })
        .collect();
    if atoms.is_empty() {
        return affine;
    }
    if atoms.len() == 1 && atoms[0].0 == 1.0 {
        let atom = &atoms[0].1;
        if affine_is_zero {
            return atom.clone();
        }
        if let (ConvexExpr::Exp { var, .. }, ConvexExpr::Affine { coeffs, constant }) =
            (atom, &affine)
        {
            if coeffs.is_empty() {
                return ConvexExpr::exp(*var, zero_sign(-constant));
            }
        }
    }
    let mut terms = atoms;
    if !affine_is_zero {
        terms.push((1.0, affine));
    }
    ConvexExpr::Sum(terms)
}

/// Parses one expression over variables `x1..x{dim}`.
pub fn parse_expr(src: &str, dim: usize) -> Result<ConvexExpr, ExprError> {
    let toks = tokenize(src)?;
    let end = src.chars().count() + 1;
    if toks.is_empty() {
        return err(1, "empty expression");
    }
    let mut p = Parser { toks, pos: 0, end };
    let node = p.expr()?;
    if p.pos < p.toks.len() {
        return err(p.col(), "unexpected trailing input");
    }
    let e = finish(lower(&node)?);
    if e.arity() > dim {
        let col = src.find(&format!("x{}", e.arity())).map_or(1, |i| i + 1);
        return err(
            col,
            format!("variable x{} exceeds the agent dimension {dim}", e.arity()),
        );
    }
    if let Err(e) = e.validate() {
        return err(1, e.to_string());
    }
    Ok(e)
}
