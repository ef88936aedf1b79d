//! Expression grammar for corpus and problem files.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | '+' unary | power
//! power   := atom ('^' unary)?
//! atom    := number | ident | ident '(' expr ')' | '(' expr ')'
//! number  := digits ('.' digits)? (('e' | 'E') ('+' | '-')? digits)?
//! ident   := (letter | '_') (letter | digit | '_')*
//! ```
//!
//! Exponents must evaluate to integers. `u`, `x1`, `x2` and `t` are
//! ordinary identifiers here; their meaning depends on the evaluator.
//! Functions: `exp`, `sin`, `cos` (spatial members and numeric values) and
//! `sqrt` (numeric values, or exact when the radicand is a rational square).

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

use crate::funcalg::{q_to_f64, Axis, CanonicalTerm, KPoly, Monomial, OscKind, RateForm, SymExpr, Var, Q};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("unknown symbol `{0}`")]
    Unknown(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("exponent must be an integer constant")]
    Exponent,
    #[error("`{0}` is not allowed here")]
    NotAllowed(String),
    #[error("sqrt of {0} is not rational")]
    Irrational(String),
    #[error("square root of a negative number")]
    NegativeSqrt,
    #[error("{0}")]
    Shape(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(Q),
    Sym(String),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(String, Box<Expr>),
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Sym(s) => write!(f, "{s}"),
            Expr::Neg(a) => write!(f, "-({a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "{a}*{b}"),
            Expr::Div(a, b) => write!(f, "{a}/({b})"),
            Expr::Pow(a, b) => write!(f, "({a})^({b})"),
            Expr::Call(n, a) => write!(f, "{n}({a})"),
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, msg: &str) -> Result<T, ExprError> {
        Err(ExprError::Parse { pos: self.pos, msg: msg.to_string() })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.eat(b'-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            return Ok(Expr::Pow(Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return self.err("expected `)`");
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' || c >= 0x80 => {
                let start = self.pos;
                while self.pos < self.src.len() {
                    let c = self.src[self.pos];
                    if c.is_ascii_alphanumeric() || c == b'_' || c >= 0x80 {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string();
                if self.eat(b'(') {
                    let arg = self.expr()?;
                    if !self.eat(b')') {
                        return self.err("expected `)` after function argument");
                    }
                    if !matches!(name.as_str(), "exp" | "sin" | "cos" | "sqrt") {
                        return self.err(&format!("unknown function `{name}`"));
                    }
                    return Ok(Expr::Call(name, Box::new(arg)));
                }
                Ok(Expr::Sym(name))
            }
            Some(_) => self.err("unexpected character"),
            None => self.err("unexpected end of input"),
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            p.pos - s
        };
        let int_len = digits(self);
        let mut frac = String::new();
        if self.pos < self.src.len() && self.src[self.pos] == b'.' {
            self.pos += 1;
            let s = self.pos;
            digits(self);
            frac = std::str::from_utf8(&self.src[s..self.pos]).unwrap().to_string();
        }
        if int_len == 0 && frac.is_empty() {
            return self.err("malformed number");
        }
        let int_part = std::str::from_utf8(&self.src[start..start + int_len]).unwrap();
        let mut exp10: i64 = -(frac.len() as i64);
        if self.pos < self.src.len() && (self.src[self.pos] == b'e' || self.src[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            let mut sign = 1;
            if self.pos < self.src.len() && (self.src[self.pos] == b'+' || self.src[self.pos] == b'-') {
                if self.src[self.pos] == b'-' {
                    sign = -1;
                }
                self.pos += 1;
            }
            let s = self.pos;
            if digits(self) == 0 {
                self.pos = save;
            } else {
                let e: i64 = std::str::from_utf8(&self.src[s..self.pos])
                    .unwrap()
                    .parse()
                    .map_err(|_| ExprError::Parse { pos: s, msg: "exponent too large".into() })?;
                exp10 += sign * e;
            }
        }
        let mantissa: BigInt =
            format!("{int_part}{frac}").trim_start_matches('0').parse().unwrap_or_else(|_| BigInt::zero());
        let ten = BigInt::from(10);
        let v = if exp10 >= 0 {
            Q::from_integer(mantissa * num_traits::pow(ten, exp10 as usize))
        } else {
            Q::new(mantissa, num_traits::pow(ten, (-exp10) as usize))
        };
        Ok(Expr::Num(v))
    }
}

pub fn parse(src: &str) -> Result<Expr, ExprError> {
    let mut p = Parser { src: src.as_bytes(), pos: 0 };
    let e = p.expr()?;
    if p.peek().is_some() {
        return p.err("trailing input");
    }
    Ok(e)
}

fn int_exponent(e: &Expr) -> Result<i64, ExprError> {
    let v = e.eval_q(&BTreeMap::new()).map_err(|_| ExprError::Exponent)?;
    if !v.is_integer() {
        return Err(ExprError::Exponent);
    }
    v.to_integer().to_i64().ok_or(ExprError::Exponent)
}

fn rational_sqrt(v: &Q) -> Result<Q, ExprError> {
    if v.is_negative() {
        return Err(ExprError::NegativeSqrt);
    }
    let (n, d) = (v.numer().sqrt(), v.denom().sqrt());
    if &(&n * &n) == v.numer() && &(&d * &d) == v.denom() {
        Ok(Q::new(n, d))
    } else {
        Err(ExprError::Irrational(v.to_string()))
    }
}

impl Expr {
    pub fn symbols(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_symbols(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_symbols(&self, out: &mut Vec<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Sym(s) => out.push(s.clone()),
            Expr::Neg(a) | Expr::Call(_, a) => a.collect_symbols(out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.collect_symbols(out);
                b.collect_symbols(out);
            }
        }
    }

    /// Exact value; every symbol must be bound.
    pub fn eval_q(&self, env: &BTreeMap<String, Q>) -> Result<Q, ExprError> {
        Ok(match self {
            Expr::Num(v) => v.clone(),
            Expr::Sym(s) => env.get(s).cloned().ok_or_else(|| ExprError::Unknown(s.clone()))?,
            Expr::Neg(a) => -a.eval_q(env)?,
            Expr::Add(a, b) => a.eval_q(env)? + b.eval_q(env)?,
            Expr::Sub(a, b) => a.eval_q(env)? - b.eval_q(env)?,
            Expr::Mul(a, b) => a.eval_q(env)? * b.eval_q(env)?,
            Expr::Div(a, b) => {
                let d = b.eval_q(env)?;
                if d.is_zero() {
                    return Err(ExprError::DivisionByZero);
                }
                a.eval_q(env)? / d
            }
            Expr::Pow(a, b) => {
                let base = a.eval_q(env)?;
                let e = int_exponent(b)?;
                if e < 0 && base.is_zero() {
                    return Err(ExprError::DivisionByZero);
                }
                num_traits::pow::Pow::pow(&base, e as i32)
            }
            Expr::Call(name, a) => match name.as_str() {
                "sqrt" => rational_sqrt(&a.eval_q(env)?)?,
                _ => {
                    let v = a.eval_q(env)?;
                    if v.is_zero() {
                        match name.as_str() {
                            "exp" | "cos" => Q::one(),
                            _ => Q::zero(),
                        }
                    } else {
                        return Err(ExprError::Irrational(format!("{name}({v})")));
                    }
                }
            },
        })
    }

    pub fn eval_f64(&self, env: &dyn Fn(&str) -> Option<f64>) -> Result<f64, ExprError> {
        Ok(match self {
            Expr::Num(v) => q_to_f64(v),
            Expr::Sym(s) => env(s).ok_or_else(|| ExprError::Unknown(s.clone()))?,
            Expr::Neg(a) => -a.eval_f64(env)?,
            Expr::Add(a, b) => a.eval_f64(env)? + b.eval_f64(env)?,
            Expr::Sub(a, b) => a.eval_f64(env)? - b.eval_f64(env)?,
            Expr::Mul(a, b) => a.eval_f64(env)? * b.eval_f64(env)?,
            Expr::Div(a, b) => {
                let d = b.eval_f64(env)?;
                if d == 0.0 {
                    return Err(ExprError::DivisionByZero);
                }
                a.eval_f64(env)? / d
            }
            Expr::Pow(a, b) => a.eval_f64(env)?.powi(int_exponent(b)? as i32),
            Expr::Call(name, a) => {
                let v = a.eval_f64(env)?;
                match name.as_str() {
                    "exp" => v.exp(),
                    "sin" => v.sin(),
                    "cos" => v.cos(),
                    _ => {
                        if v < 0.0 {
                            return Err(ExprError::NegativeSqrt);
                        }
                        v.sqrt()
                    }
                }
            }
        })
    }

    /// Polynomial in the unbound symbols, with bound symbols replaced by
    /// their exact values. Division only by constants.
    pub fn to_kpoly(&self, env: &BTreeMap<String, Q>) -> Result<KPoly, ExprError> {
        Ok(match self {
            Expr::Num(v) => KPoly::constant(v.clone()),
            Expr::Sym(s) => match env.get(s) {
                Some(v) => KPoly::constant(v.clone()),
                None => KPoly::sym(s),
            },
            Expr::Neg(a) => -&a.to_kpoly(env)?,
            Expr::Add(a, b) => &a.to_kpoly(env)? + &b.to_kpoly(env)?,
            Expr::Sub(a, b) => &a.to_kpoly(env)? - &b.to_kpoly(env)?,
            Expr::Mul(a, b) => &a.to_kpoly(env)? * &b.to_kpoly(env)?,
            Expr::Div(a, b) => {
                let d = b.to_kpoly(env)?;
                let d = d.as_constant().ok_or_else(|| ExprError::NotAllowed(format!("division by `{b}`")))?;
                if d.is_zero() {
                    return Err(ExprError::DivisionByZero);
                }
                a.to_kpoly(env)?.scale(&d.recip())
            }
            Expr::Pow(a, b) => {
                let e = int_exponent(b)?;
                let base = a.to_kpoly(env)?;
                if e >= 0 {
                    base.pow(e as u32)
                } else {
                    let c = base.as_constant().ok_or(ExprError::Exponent)?;
                    if c.is_zero() {
                        return Err(ExprError::DivisionByZero);
                    }
                    KPoly::constant(num_traits::pow::Pow::pow(&c, e as i32))
                }
            }
            Expr::Call(..) => KPoly::constant(self.eval_q(env)?),
        })
    }

    /// Coefficients of a polynomial in `var`, each a polynomial in the
    /// remaining unbound symbols.
    pub fn to_poly_in(&self, var: &str, env: &BTreeMap<String, Q>) -> Result<Vec<KPoly>, ExprError> {
        let p = self.to_kpoly(env)?;
        let v = Var::sym(var);
        let mut out: Vec<KPoly> = Vec::new();
        for (m, c) in p.terms() {
            let e = m.exponent(&v) as usize;
            let rest = Monomial::from_powers(m.powers().iter().filter(|(w, _)| *w != v).cloned().collect());
            if out.len() <= e {
                out.resize(e + 1, KPoly::zero());
            }
            out[e].add_term(rest, c.clone());
        }
        Ok(out)
    }

    /// Spatial function in `x1`, `x2`. Exponents and trig arguments must be
    /// linear in `x1`/`x2` with rates that are linear forms in symbols.
    pub fn to_symexpr(&self, env: &BTreeMap<String, Q>) -> Result<SymExpr, ExprError> {
        Ok(match self {
            Expr::Num(v) => SymExpr::constant(KPoly::constant(v.clone())),
            Expr::Sym(s) if s == "x1" => SymExpr::term(CanonicalTerm::power(Axis::X1, 1)),
            Expr::Sym(s) if s == "x2" => SymExpr::term(CanonicalTerm::power(Axis::X2, 1)),
            Expr::Sym(_) => SymExpr::constant(self.to_kpoly(env)?),
            Expr::Neg(a) => a.to_symexpr(env)?.scale_q(&-Q::one()),
            Expr::Add(a, b) => a.to_symexpr(env)?.add(&b.to_symexpr(env)?),
            Expr::Sub(a, b) => a.to_symexpr(env)?.sub(&b.to_symexpr(env)?),
            Expr::Mul(a, b) => a.to_symexpr(env)?.mul(&b.to_symexpr(env)?),
            Expr::Div(a, b) => {
                let d = b
                    .to_kpoly(env)?
                    .as_constant()
                    .ok_or_else(|| ExprError::NotAllowed(format!("division by `{b}`")))?;
                if d.is_zero() {
                    return Err(ExprError::DivisionByZero);
                }
                a.to_symexpr(env)?.scale_q(&d.recip())
            }
            Expr::Pow(a, b) => {
                let e = int_exponent(b)?;
                if e < 0 {
                    return Err(ExprError::Exponent);
                }
                let base = a.to_symexpr(env)?;
                let mut out = SymExpr::one();
                for _ in 0..e {
                    out = out.mul(&base);
                }
                out
            }
            Expr::Call(name, _) if name == "sqrt" => SymExpr::constant(KPoly::constant(self.eval_q(env)?)),
            Expr::Call(name, a) => {
                let arg = a.to_symexpr(env)?;
                let (r1, r2) = linear_rates(&arg)?;
                match name.as_str() {
                    "exp" => {
                        let mut t = CanonicalTerm::one();
                        t.r1 = r1;
                        t.r2 = r2;
                        SymExpr::term(t)
                    }
                    _ => {
                        let kind = if name == "sin" { OscKind::Sin } else { OscKind::Cos };
                        let (axis, w) = match (r1.is_zero(), r2.is_zero()) {
                            (_, true) => (Axis::X1, r1),
                            (true, false) => (Axis::X2, r2),
                            _ => return Err(ExprError::Shape(format!("{name} argument mixes x1 and x2"))),
                        };
                        let (s, t) = CanonicalTerm::osc(axis, kind, w);
                        SymExpr::from_term(t, KPoly::int(s))
                    }
                }
            }
        })
    }
}

fn kpoly_to_rate(p: &KPoly) -> Result<RateForm, ExprError> {
    let mut r = RateForm::zero();
    for (m, c) in p.terms() {
        match m.powers() {
            [] => r = r.add(&RateForm::constant(c.clone())),
            [(Var::Sym(s), 1)] => r = r.add(&RateForm::symbol(s, c.clone())),
            _ => return Err(ExprError::Shape(format!("rate `{p}` is not linear in the symbols"))),
        }
    }
    Ok(r)
}

/// `c1 x1 + c2 x2` → (c1, c2); anything else is rejected.
fn linear_rates(arg: &SymExpr) -> Result<(RateForm, RateForm), ExprError> {
    let mut r1 = RateForm::zero();
    let mut r2 = RateForm::zero();
    for (t, c) in arg.terms() {
        let plain =
            t.r1.is_zero() && t.r2.is_zero() && t.osc1.kind() == OscKind::None && t.osc2.kind() == OscKind::None;
        match (plain, t.p1, t.p2) {
            (true, 1, 0) => r1 = r1.add(&kpoly_to_rate(c)?),
            (true, 0, 1) => r2 = r2.add(&kpoly_to_rate(c)?),
            _ => return Err(ExprError::Shape(format!("argument term `{t}` is not linear in x1, x2"))),
        }
    }
    Ok((r1, r2))
}

/// Parse then bind in one go, for convenience in tests and data loading.
pub fn kpoly(src: &str) -> Result<KPoly, ExprError> {
    parse(src)?.to_kpoly(&BTreeMap::new())
}

pub fn symexpr(src: &str) -> Result<SymExpr, ExprError> {
    parse(src)?.to_symexpr(&BTreeMap::new())
}

/// Polynomial in `u` with coefficients bound from `env`, as an operator part.
pub fn upoly(src: &str, env: &BTreeMap<String, Q>) -> Result<crate::crdop::UPoly, ExprError> {
    let coeffs = parse(src)?.to_poly_in("u", env)?;
    crate::crdop::UPoly::new(coeffs).map_err(|e| ExprError::Shape(e.to_string()))
}

/// Exact value of a closed expression.
pub fn rational(src: &str) -> Result<Q, ExprError> {
    parse(src)?.eval_q(&BTreeMap::new())
}
