//! Scalar fields: user expressions over `z1..zn` and `x`, or built-in families.
//!
//! Expressions are parsed once into an [`Expr`] tree and evaluated over any
//! [`Scalar`], which is how exact derivatives of user-supplied `f`, `h`, `η`
//! and `ρ` are obtained. The tree is evaluated directly rather than through an
//! off-the-shelf evaluator because those only evaluate over `f64`.

use crate::error::{Error, Result};
use crate::scalar::{HyperDual, Scalar};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    /// `z{k+1}` (stored zero-based).
    Z(usize),
    X,
    Neg(Box<Expr>),
    Call(Func, Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let e = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Input(format!(
                "unexpected trailing input in expression '{src}'"
            )));
        }
        Ok(e)
    }

    /// Largest `z` index used (one-based count), 0 if none.
    pub fn z_arity(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::X => 0,
            Expr::Z(k) => k + 1,
            Expr::Neg(a) | Expr::Call(_, a) => a.z_arity(),
            Expr::Bin(_, a, b) => a.z_arity().max(b.z_arity()),
        }
    }

    pub fn uses_x(&self) -> bool {
        match self {
            Expr::X => true,
            Expr::Num(_) | Expr::Z(_) => false,
            Expr::Neg(a) | Expr::Call(_, a) => a.uses_x(),
            Expr::Bin(_, a, b) => a.uses_x() || b.uses_x(),
        }
    }

    fn is_constant(&self) -> bool {
        match self {
            Expr::Num(_) => true,
            Expr::Z(_) | Expr::X => false,
            Expr::Neg(a) | Expr::Call(_, a) => a.is_constant(),
            Expr::Bin(_, a, b) => a.is_constant() && b.is_constant(),
        }
    }

    pub fn eval<T: Scalar>(&self, z: &[T], x: T) -> T {
        match self {
            Expr::Num(v) => T::cst(*v),
            Expr::Z(k) => z[*k],
            Expr::X => x,
            Expr::Neg(a) => -a.eval(z, x),
            Expr::Call(f, a) => {
                let v = a.eval(z, x);
                match f {
                    Func::Exp => v.exp(),
                    Func::Log => v.ln(),
                    Func::Sqrt => v.sqrt(),
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                }
            }
            Expr::Bin(op, a, b) => {
                let l = a.eval(z, x);
                match op {
                    BinOp::Add => l + b.eval(z, x),
                    BinOp::Sub => l - b.eval(z, x),
                    BinOp::Mul => l * b.eval(z, x),
                    BinOp::Div => l / b.eval(z, x),
                    BinOp::Pow => {
                        if b.is_constant() {
                            l.powf(b.eval::<f64>(&[], 0.0))
                        } else {
                            (b.eval(z, x) * l.ln()).exp()
                        }
                    }
                }
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => {
                if *v < 0.0 {
                    write!(f, "(-{:?})", -v)
                } else {
                    write!(f, "{v:?}")
                }
            }
            Expr::Z(k) => write!(f, "z{}", k + 1),
            Expr::X => write!(f, "x"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
            Expr::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
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
            let v: f64 = text
                .parse()
                .map_err(|_| Error::Input(format!("bad numeric literal '{text}'")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else if c == '(' {
            out.push(Tok::LParen);
            i += 1;
        } else if c == ')' {
            out.push(Tok::RParen);
            i += 1;
        } else {
            return Err(Error::Input(format!("unexpected character '{c}' in expression")));
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

    fn expect_rparen(&mut self) -> Result<()> {
        match self.next() {
            Some(Tok::RParen) => Ok(()),
            _ => Err(Error::Input("expected ')'".into())),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(c)) = self.peek() {
            let op = match c {
                '+' => BinOp::Add,
                '-' => BinOp::Sub,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c)) = self.peek() {
            let op = match c {
                '*' => BinOp::Mul,
                '/' => BinOp::Div,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(Tok::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.next() {
            Some(Tok::Num(v)) => Ok(Expr::Num(v)),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                if name == "x" {
                    return Ok(Expr::X);
                }
                if let Some(f) = Func::from_name(&name) {
                    match self.next() {
                        Some(Tok::LParen) => {}
                        _ => return Err(Error::Input(format!("expected '(' after {name}"))),
                    }
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    return Ok(Expr::Call(f, Box::new(arg)));
                }
                if let Some(rest) = name.strip_prefix('z') {
                    if let Ok(k) = rest.parse::<usize>() {
                        if (1..=8).contains(&k) {
                            return Ok(Expr::Z(k - 1));
                        }
                    }
                }
                Err(Error::Input(format!("unknown identifier '{name}'")))
            }
            Some(t) => Err(Error::Input(format!("unexpected token {t:?}"))),
            None => Err(Error::Input("unexpected end of expression".into())),
        }
    }
}

/// Built-in parametric fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BuiltinField {
    Zero,
    Constant { value: f64 },
    /// `amplitude · exp(1 − 1/(1 − u²))`, `u = (x − center)/radius`, zero for |u| ≥ 1.
    /// Normalized so the peak equals `amplitude`.
    Bump { center: f64, radius: f64, amplitude: f64 },
    /// Gaussian in `x` with total integral `mass`.
    Gaussian { center: f64, sigma: f64, mass: f64 },
    /// `½ Σ_j q_j z_j²`.
    DiagonalQuadratic { weights: Vec<f64> },
}

impl BuiltinField {
    fn eval<T: Scalar>(&self, z: &[T], x: T) -> T {
        match self {
            BuiltinField::Zero => T::cst(0.0),
            BuiltinField::Constant { value } => T::cst(*value),
            BuiltinField::Bump { center, radius, amplitude } => {
                let u = (x - T::cst(*center)) / T::cst(*radius);
                let u2 = u * u;
                if u2.re() >= 1.0 {
                    T::cst(0.0)
                } else {
                    T::cst(*amplitude) * (T::cst(1.0) - T::cst(1.0) / (T::cst(1.0) - u2)).exp()
                }
            }
            BuiltinField::Gaussian { center, sigma, mass } => {
                let u = (x - T::cst(*center)) / T::cst(*sigma);
                T::cst(mass / (sigma * (2.0 * std::f64::consts::PI).sqrt()))
                    * (T::cst(-0.5) * u * u).exp()
            }
            BuiltinField::DiagonalQuadratic { weights } => {
                let mut acc = T::cst(0.0);
                for (w, zj) in weights.iter().zip(z) {
                    acc = acc + T::cst(0.5 * w) * *zj * *zj;
                }
                acc
            }
        }
    }
}

/// A scalar field: parsed expression or built-in family.
#[derive(Clone, Debug, PartialEq)]
pub enum ScalarField {
    Expr(Expr),
    Builtin(BuiltinField),
}

impl ScalarField {
    pub fn parse(src: &str) -> Result<Self> {
        Ok(ScalarField::Expr(Expr::parse(src)?))
    }

    pub fn zero() -> Self {
        ScalarField::Builtin(BuiltinField::Zero)
    }

    pub fn eval<T: Scalar>(&self, z: &[T], x: T) -> T {
        match self {
            ScalarField::Expr(e) => e.eval(z, x),
            ScalarField::Builtin(b) => b.eval(z, x),
        }
    }

    pub fn value(&self, z: &[f64], x: f64) -> f64 {
        self.eval(z, x)
    }

    /// Value of a field of `x` only.
    pub fn at_x(&self, x: f64) -> f64 {
        self.eval::<f64>(&[], x)
    }

    /// Derivative in `x` of a field of `x` only.
    pub fn dx(&self, x: f64) -> f64 {
        let xv = HyperDual::variable(x, &[1.0]);
        self.eval::<HyperDual>(&[], xv).part(1)
    }

    /// Value, gradient and Hessian in `z` at fixed `x`.
    pub fn grad_hess(&self, z: &[f64], x: f64) -> (f64, Vec<f64>, Vec<f64>) {
        let n = z.len();
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n * n];
        let mut val = 0.0;
        for i in 0..n {
            for j in i..n {
                let zz: Vec<HyperDual> = (0..n)
                    .map(|k| {
                        let a = if k == i { 1.0 } else { 0.0 };
                        let b = if k == j { 1.0 } else { 0.0 };
                        HyperDual::variable(z[k], &[a, b])
                    })
                    .collect();
                let r = self.eval(&zz, HyperDual::constant(x));
                val = r.re();
                g[i] = r.part(1);
                g[j] = r.part(2);
                h[i * n + j] = r.part(3);
                h[j * n + i] = r.part(3);
            }
        }
        if n == 0 {
            val = self.eval::<f64>(&[], x);
        }
        (val, g, h)
    }

    pub fn z_arity(&self) -> usize {
        match self {
            ScalarField::Expr(e) => e.z_arity(),
            ScalarField::Builtin(BuiltinField::DiagonalQuadratic { weights }) => weights.len(),
            ScalarField::Builtin(_) => 0,
        }
    }

    pub fn uses_x(&self) -> bool {
        match self {
            ScalarField::Expr(e) => e.uses_x(),
            ScalarField::Builtin(b) => matches!(
                b,
                BuiltinField::Bump { .. } | BuiltinField::Gaussian { .. }
            ),
        }
    }
}

impl fmt::Display for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarField::Expr(e) => write!(f, "{e}"),
            ScalarField::Builtin(b) => write!(f, "{b:?}"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum FieldRepr {
    Text(String),
    Builtin(BuiltinField),
}

impl Serialize for ScalarField {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ScalarField::Expr(e) => FieldRepr::Text(e.to_string()).serialize(s),
            ScalarField::Builtin(b) => FieldRepr::Builtin(b.clone()).serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for ScalarField {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match FieldRepr::deserialize(d)? {
            FieldRepr::Text(t) => ScalarField::parse(&t).map_err(serde::de::Error::custom),
            FieldRepr::Builtin(b) => Ok(ScalarField::Builtin(b)),
        }
    }
}
