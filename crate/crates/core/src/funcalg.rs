//! Exact algebra of closed-class spatial functions.
//!
//! A [`SymExpr`] is a finite sum of [`CanonicalTerm`]s
//! `x1^p1 x2^p2 e^(r1 x1 + r2 x2) osc1(x1) osc2(x2)`, each carrying a
//! [`KPoly`] coefficient: a multivariate polynomial with exact rational
//! coefficients in the amplitudes κ1..κn and named symbols.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

/// Exact rational scalar.
pub type Q = BigRational;

/// Largest total degree in the κ indeterminates that products may reach.
pub const KAPPA_DEGREE_CAP: u32 = 8;

pub fn q(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

pub fn qr(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

/// Lossy conversion used for numeric evaluation.
pub fn q_to_f64(v: &Q) -> f64 {
    match (v.numer().to_f64(), v.denom().to_f64()) {
        (Some(n), Some(d)) if n.is_finite() && d.is_finite() => n / d,
        _ => {
            // huge numerators/denominators: scale down through the bit lengths
            let shift = v.numer().bits().max(v.denom().bits()).saturating_sub(1000) as usize;
            let n = (v.numer() >> shift).to_f64().unwrap_or(f64::NAN);
            let d = (v.denom() >> shift).to_f64().unwrap_or(f64::NAN);
            n / d
        }
    }
}

/// Best rational approximation with bounded denominator is not needed; this
/// converts the exact binary value of a finite float.
pub fn f64_to_q(x: f64) -> Option<Q> {
    Q::from_float(x)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlgebraError {
    #[error("unbound symbol `{0}`")]
    Unbound(String),
    #[error("basis members are linearly dependent (witness {witness:?})")]
    Dependent { witness: Vec<Q> },
    #[error("basis member {0} has a coefficient that is not a rational constant")]
    SymbolicBasis(usize),
    #[error("kappa degree {0} exceeds the cap of {KAPPA_DEGREE_CAP}")]
    DegreeCap(u32),
}

/// Indeterminate of a [`KPoly`].
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Var {
    /// Amplitude κ_m (1-based).
    Kappa(u32),
    /// Jet variable ∂^(i+j) u / ∂x1^i ∂x2^j.
    Jet(u32, u32),
    /// Named operator or rate symbol.
    Sym(Arc<str>),
}

impl Var {
    pub fn sym(name: &str) -> Var {
        Var::Sym(Arc::from(name))
    }

    pub fn is_kappa(&self) -> bool {
        matches!(self, Var::Kappa(_))
    }

    pub fn is_jet(&self) -> bool {
        matches!(self, Var::Jet(..))
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::Kappa(i) => write!(f, "κ{i}"),
            Var::Jet(i, j) => write!(f, "u_{i}{j}"),
            Var::Sym(s) => write!(f, "{s}"),
        }
    }
}

/// Numeric values for indeterminates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Bindings {
    map: BTreeMap<Var, f64>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_sym(mut self, name: &str, v: f64) -> Self {
        self.set(Var::sym(name), v);
        self
    }

    pub fn set(&mut self, var: Var, v: f64) {
        self.map.insert(var, v);
    }

    pub fn set_sym(&mut self, name: &str, v: f64) {
        self.set(Var::sym(name), v);
    }

    pub fn set_kappas(&mut self, values: &[f64]) {
        for (i, v) in values.iter().enumerate() {
            self.set(Var::Kappa(i as u32 + 1), *v);
        }
    }

    pub fn get(&self, var: &Var) -> Option<f64> {
        self.map.get(var).copied()
    }

    pub fn extend(&mut self, other: &Bindings) {
        for (k, v) in &other.map {
            self.map.insert(k.clone(), *v);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Var, &f64)> {
        self.map.iter()
    }
}

/// Power product of indeterminates, sorted by variable, no zero exponents.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct Monomial(Vec<(Var, u32)>);

impl Monomial {
    pub fn one() -> Self {
        Monomial(Vec::new())
    }

    pub fn var(v: Var) -> Self {
        Monomial(vec![(v, 1)])
    }

    pub fn from_powers(mut powers: Vec<(Var, u32)>) -> Self {
        powers.retain(|(_, e)| *e > 0);
        powers.sort();
        let mut out: Vec<(Var, u32)> = Vec::with_capacity(powers.len());
        for (v, e) in powers {
            match out.last_mut() {
                Some((w, f)) if *w == v => *f += e,
                _ => out.push((v, e)),
            }
        }
        Monomial(out)
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn powers(&self) -> &[(Var, u32)] {
        &self.0
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|(_, e)| e).sum()
    }

    pub fn degree_where(&self, pred: impl Fn(&Var) -> bool) -> u32 {
        self.0.iter().filter(|(v, _)| pred(v)).map(|(_, e)| e).sum()
    }

    pub fn exponent(&self, var: &Var) -> u32 {
        self.0.iter().find(|(v, _)| v == var).map(|(_, e)| *e).unwrap_or(0)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut out = Vec::with_capacity(self.0.len() + other.0.len());
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < other.0.len() {
            let (a, b) = (&self.0[i], &other.0[j]);
            match a.0.cmp(&b.0) {
                std::cmp::Ordering::Less => {
                    out.push(a.clone());
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b.clone());
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push((a.0.clone(), a.1 + b.1));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&self.0[i..]);
        out.extend_from_slice(&other.0[j..]);
        Monomial(out)
    }

    /// Split into the part whose variables satisfy `pred` and the rest.
    pub fn split(&self, pred: impl Fn(&Var) -> bool) -> (Monomial, Monomial) {
        let (a, b): (Vec<_>, Vec<_>) = self.0.iter().cloned().partition(|(v, _)| pred(v));
        (Monomial(a), Monomial(b))
    }

    fn without(&self, var: &Var) -> (u32, Monomial) {
        let mut e = 0;
        let rest = self
            .0
            .iter()
            .filter(|(v, x)| {
                if v == var {
                    e = *x;
                    false
                } else {
                    true
                }
            })
            .cloned()
            .collect();
        (e, Monomial(rest))
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "1");
        }
        for (k, (v, e)) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, "*")?;
            }
            if *e == 1 {
                write!(f, "{v}")?;
            } else {
                write!(f, "{v}^{e}")?;
            }
        }
        Ok(())
    }
}

/// Sparse polynomial with exact rational coefficients.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct KPoly {
    terms: BTreeMap<Monomial, Q>,
}

impl KPoly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn one() -> Self {
        Self::constant(Q::one())
    }

    pub fn constant(c: Q) -> Self {
        let mut p = Self::zero();
        p.add_term(Monomial::one(), c);
        p
    }

    pub fn int(n: i64) -> Self {
        Self::constant(q(n))
    }

    pub fn var(v: Var) -> Self {
        let mut p = Self::zero();
        p.add_term(Monomial::var(v), Q::one());
        p
    }

    pub fn sym(name: &str) -> Self {
        Self::var(Var::sym(name))
    }

    pub fn kappa(i: u32) -> Self {
        Self::var(Var::Kappa(i))
    }

    pub fn from_terms(terms: impl IntoIterator<Item = (Monomial, Q)>) -> Self {
        let mut p = Self::zero();
        for (m, c) in terms {
            p.add_term(m, c);
        }
        p
    }

    pub fn add_term(&mut self, m: Monomial, c: Q) {
        if c.is_zero() {
            return;
        }
        match self.terms.get_mut(&m) {
            Some(v) => {
                *v += c;
                if v.is_zero() {
                    self.terms.remove(&m);
                }
            }
            None => {
                self.terms.insert(m, c);
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// The value if this is a constant polynomial.
    pub fn as_constant(&self) -> Option<Q> {
        match self.terms.len() {
            0 => Some(Q::zero()),
            1 => self.terms.get(&Monomial::one()).cloned(),
            _ => None,
        }
    }

    pub fn terms(&self) -> impl DoubleEndedIterator<Item = (&Monomial, &Q)> {
        self.terms.iter()
    }

    pub fn coeff(&self, m: &Monomial) -> Q {
        self.terms.get(m).cloned().unwrap_or_else(Q::zero)
    }

    pub fn scale(&self, c: &Q) -> KPoly {
        if c.is_zero() {
            return KPoly::zero();
        }
        KPoly { terms: self.terms.iter().map(|(m, v)| (m.clone(), v * c)).collect() }
    }

    pub fn mul_monomial(&self, m: &Monomial, c: &Q) -> KPoly {
        if c.is_zero() {
            return KPoly::zero();
        }
        KPoly { terms: self.terms.iter().map(|(n, v)| (n.mul(m), v * c)).collect() }
    }

    pub fn pow(&self, e: u32) -> KPoly {
        let mut out = KPoly::one();
        for _ in 0..e {
            out = &out * self;
        }
        out
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn kappa_degree(&self) -> u32 {
        self.terms.keys().map(|m| m.degree_where(Var::is_kappa)).max().unwrap_or(0)
    }

    pub fn vars(&self) -> BTreeSet<Var> {
        self.terms.keys().flat_map(|m| m.0.iter().map(|(v, _)| v.clone())).collect()
    }

    pub fn eval(&self, b: &Bindings) -> Result<f64, AlgebraError> {
        let mut acc = 0.0;
        for (m, c) in &self.terms {
            let mut t = q_to_f64(c);
            for (v, e) in &m.0 {
                let x = b.get(v).ok_or_else(|| AlgebraError::Unbound(v.to_string()))?;
                t *= x.powi(*e as i32);
            }
            acc += t;
        }
        Ok(acc)
    }

    /// Sum of absolute term values; the natural scale for zero tests.
    pub fn eval_abs(&self, b: &Bindings) -> Result<f64, AlgebraError> {
        let mut acc = 0.0;
        for (m, c) in &self.terms {
            let mut t = q_to_f64(c).abs();
            for (v, e) in &m.0 {
                let x = b.get(v).ok_or_else(|| AlgebraError::Unbound(v.to_string()))?;
                t *= x.abs().powi(*e as i32);
            }
            acc += t;
        }
        Ok(acc)
    }

    /// Replace variables by polynomials; unmapped variables stay.
    pub fn substitute(&self, f: &dyn Fn(&Var) -> Option<KPoly>) -> KPoly {
        let mut cache: BTreeMap<(Var, u32), KPoly> = BTreeMap::new();
        let mut out = KPoly::zero();
        for (m, c) in &self.terms {
            let mut term = KPoly::constant(c.clone());
            let mut keep = Vec::new();
            for (v, e) in &m.0 {
                match f(v) {
                    Some(p) => {
                        let key = (v.clone(), *e);
                        let pe = cache.entry(key).or_insert_with(|| p.pow(*e)).clone();
                        term = &term * &pe;
                    }
                    None => keep.push((v.clone(), *e)),
                }
            }
            let keep = Monomial(keep);
            for (n, d) in term.terms {
                out.add_term(n.mul(&keep), d);
            }
        }
        out
    }

    /// Substitute exact values for named symbols.
    pub fn bind_rational(&self, values: &BTreeMap<String, Q>) -> KPoly {
        self.substitute(&|v| match v {
            Var::Sym(s) => values.get(s.as_ref()).map(|x| KPoly::constant(x.clone())),
            _ => None,
        })
    }

    pub fn derivative(&self, var: &Var) -> KPoly {
        let mut out = KPoly::zero();
        for (m, c) in &self.terms {
            let (e, rest) = m.without(var);
            if e == 0 {
                continue;
            }
            let mut powers = rest.0;
            if e > 1 {
                powers.push((var.clone(), e - 1));
            }
            out.add_term(Monomial::from_powers(powers), c * q(e as i64));
        }
        out
    }

    /// Group by the part of each monomial whose variables satisfy `pred`.
    pub fn split_by(&self, pred: impl Fn(&Var) -> bool) -> BTreeMap<Monomial, KPoly> {
        let mut out: BTreeMap<Monomial, KPoly> = BTreeMap::new();
        for (m, c) in &self.terms {
            let (key, rest) = m.split(&pred);
            out.entry(key).or_default().add_term(rest, c.clone());
        }
        out
    }

    /// Leading term in the display order (largest monomial).
    pub fn leading(&self) -> Option<(&Monomial, &Q)> {
        self.terms.iter().next_back()
    }

    /// Divide out the rational content and make the leading coefficient
    /// positive. Zero stays zero.
    pub fn primitive(&self) -> KPoly {
        if self.is_zero() {
            return KPoly::zero();
        }
        let mut g = BigInt::zero();
        let mut l = BigInt::one();
        for c in self.terms.values() {
            g = g.gcd(c.numer());
            l = l.lcm(c.denom());
        }
        let mut factor = Q::new(l, g);
        if self.leading().map(|(_, c)| c.is_negative()).unwrap_or(false) {
            factor = -factor;
        }
        self.scale(&factor)
    }
}

impl fmt::Display for KPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, (m, c)) in self.terms.iter().rev().enumerate() {
            let neg = c.is_negative();
            let a = c.abs();
            if k == 0 {
                if neg {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {} ", if neg { "-" } else { "+" })?;
            }
            if m.is_one() {
                write!(f, "{a}")?;
            } else if a.is_one() {
                write!(f, "{m}")?;
            } else {
                write!(f, "{a}*{m}")?;
            }
        }
        Ok(())
    }
}

impl<'a> std::ops::Add<&'a KPoly> for &'a KPoly {
    type Output = KPoly;
    fn add(self, rhs: &KPoly) -> KPoly {
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }
}

impl<'a> std::ops::Sub<&'a KPoly> for &'a KPoly {
    type Output = KPoly;
    fn sub(self, rhs: &KPoly) -> KPoly {
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), -c.clone());
        }
        out
    }
}

impl<'a> std::ops::Mul<&'a KPoly> for &'a KPoly {
    type Output = KPoly;
    fn mul(self, rhs: &KPoly) -> KPoly {
        let mut out = KPoly::zero();
        for (m, c) in &self.terms {
            for (n, d) in &rhs.terms {
                out.add_term(m.mul(n), c * d);
            }
        }
        out
    }
}

impl std::ops::Neg for &KPoly {
    type Output = KPoly;
    fn neg(self) -> KPoly {
        self.scale(&-Q::one())
    }
}

impl std::ops::AddAssign<&KPoly> for KPoly {
    fn add_assign(&mut self, rhs: &KPoly) {
        for (m, c) in &rhs.terms {
            self.add_term(m.clone(), c.clone());
        }
    }
}

/// Linear form `constant + Σ c_s s` over named symbols, used for exponential
/// rates and oscillation frequencies.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct RateForm {
    symbolic: BTreeMap<Arc<str>, Q>,
    constant: Q,
}

impl RateForm {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: Q) -> Self {
        RateForm { symbolic: BTreeMap::new(), constant: c }
    }

    pub fn symbol(name: &str, coeff: Q) -> Self {
        let mut r = Self::zero();
        if !coeff.is_zero() {
            r.symbolic.insert(Arc::from(name), coeff);
        }
        r
    }

    pub fn constant_part(&self) -> &Q {
        &self.constant
    }

    pub fn symbolic_part(&self) -> &BTreeMap<Arc<str>, Q> {
        &self.symbolic
    }

    pub fn is_zero(&self) -> bool {
        self.constant.is_zero() && self.symbolic.is_empty()
    }

    pub fn add(&self, other: &RateForm) -> RateForm {
        let mut out = self.clone();
        out.constant += &other.constant;
        for (s, c) in &other.symbolic {
            let e = out.symbolic.entry(s.clone()).or_insert_with(Q::zero);
            *e += c;
            if e.is_zero() {
                out.symbolic.remove(s);
            }
        }
        out
    }

    pub fn neg(&self) -> RateForm {
        self.scale(&-Q::one())
    }

    pub fn sub(&self, other: &RateForm) -> RateForm {
        self.add(&other.neg())
    }

    pub fn scale(&self, c: &Q) -> RateForm {
        if c.is_zero() {
            return RateForm::zero();
        }
        RateForm {
            symbolic: self.symbolic.iter().map(|(s, v)| (s.clone(), v * c)).collect(),
            constant: &self.constant * c,
        }
    }

    /// Sign convention for canonical frequencies: the first symbolic
    /// coefficient, or the constant when there are no symbols.
    pub fn leading_negative(&self) -> bool {
        match self.symbolic.values().next() {
            Some(c) => c.is_negative(),
            None => self.constant.is_negative(),
        }
    }

    pub fn to_kpoly(&self) -> KPoly {
        let mut p = KPoly::constant(self.constant.clone());
        for (s, c) in &self.symbolic {
            p.add_term(Monomial::var(Var::Sym(s.clone())), c.clone());
        }
        p
    }

    pub fn eval(&self, b: &Bindings) -> Result<f64, AlgebraError> {
        let mut acc = q_to_f64(&self.constant);
        for (s, c) in &self.symbolic {
            let v = b.get(&Var::Sym(s.clone())).ok_or_else(|| AlgebraError::Unbound(s.to_string()))?;
            acc += q_to_f64(c) * v;
        }
        Ok(acc)
    }

    pub fn bind_rational(&self, values: &BTreeMap<String, Q>) -> RateForm {
        let mut out = RateForm::constant(self.constant.clone());
        for (s, c) in &self.symbolic {
            match values.get(s.as_ref()) {
                Some(v) => out.constant += c * v,
                None => {
                    out.symbolic.insert(s.clone(), c.clone());
                }
            }
        }
        out
    }

    pub fn symbols(&self) -> impl Iterator<Item = &str> {
        self.symbolic.keys().map(|s| s.as_ref())
    }
}

impl fmt::Display for RateForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (s, c) in &self.symbolic {
            let neg = c.is_negative();
            let a = c.abs();
            if first {
                if neg {
                    write!(f, "-")?;
                }
            } else {
                write!(f, "{}", if neg { "-" } else { "+" })?;
            }
            if a.is_one() {
                write!(f, "{s}")?;
            } else {
                write!(f, "{a}*{s}")?;
            }
            first = false;
        }
        if !self.constant.is_zero() || first {
            if !first && !self.constant.is_negative() {
                write!(f, "+")?;
            }
            write!(f, "{}", self.constant)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum OscKind {
    None,
    Sin,
    Cos,
}

/// Oscillation factor along one axis.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Osc {
    freq: RateForm,
    kind: OscKind,
}

impl Osc {
    pub fn none() -> Self {
        Osc { freq: RateForm::zero(), kind: OscKind::None }
    }

    /// Canonical oscillation with its sign factor: sin of a negative
    /// frequency flips sign, a zero frequency collapses.
    pub fn canonical(kind: OscKind, freq: RateForm) -> (i64, Osc) {
        if kind == OscKind::None || freq.is_zero() {
            return match kind {
                OscKind::Sin => (0, Osc::none()),
                _ => (1, Osc::none()),
            };
        }
        if freq.leading_negative() {
            let s = if kind == OscKind::Sin { -1 } else { 1 };
            (s, Osc { freq: freq.neg(), kind })
        } else {
            (1, Osc { freq, kind })
        }
    }

    pub fn kind(&self) -> OscKind {
        self.kind
    }

    pub fn freq(&self) -> &RateForm {
        &self.freq
    }

    fn eval(&self, x: f64, b: &Bindings) -> Result<f64, AlgebraError> {
        Ok(match self.kind {
            OscKind::None => 1.0,
            OscKind::Sin => (self.freq.eval(b)? * x).sin(),
            OscKind::Cos => (self.freq.eval(b)? * x).cos(),
        })
    }

    /// Product of two oscillations on the same axis as a signed sum.
    fn mul(&self, other: &Osc) -> Vec<(Q, Osc)> {
        use OscKind::*;
        let half = qr(1, 2);
        let (a, b) = (&self.freq, &other.freq);
        let raw: Vec<(Q, OscKind, RateForm)> = match (self.kind, other.kind) {
            (None, _) => vec![(Q::one(), other.kind, other.freq.clone())],
            (_, None) => vec![(Q::one(), self.kind, self.freq.clone())],
            (Sin, Sin) => vec![(half.clone(), Cos, a.sub(b)), (-half, Cos, a.add(b))],
            (Cos, Cos) => vec![(half.clone(), Cos, a.sub(b)), (half, Cos, a.add(b))],
            (Sin, Cos) => vec![(half.clone(), Sin, a.add(b)), (half, Sin, a.sub(b))],
            (Cos, Sin) => vec![(half.clone(), Sin, a.add(b)), (-half, Sin, a.sub(b))],
        };
        let mut out: Vec<(Q, Osc)> = Vec::new();
        for (c, k, f) in raw {
            let (s, o) = Osc::canonical(k, f);
            if s == 0 {
                continue;
            }
            let c = c * q(s);
            match out.iter_mut().find(|(_, p)| *p == o) {
                Some(e) => e.0 += c,
                _ => out.push((c, o)),
            }
        }
        out.retain(|(c, _)| !c.is_zero());
        out
    }

    fn bind_rational(&self, values: &BTreeMap<String, Q>) -> (i64, Osc) {
        Osc::canonical(self.kind, self.freq.bind_rational(values))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Axis {
    X1,
    X2,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Axis::X1 => write!(f, "x1"),
            Axis::X2 => write!(f, "x2"),
        }
    }
}

/// `x1^p1 x2^p2 e^(r1 x1 + r2 x2) osc1(x1) osc2(x2)`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct CanonicalTerm {
    pub p1: u32,
    pub p2: u32,
    pub r1: RateForm,
    pub r2: RateForm,
    pub osc1: Osc,
    pub osc2: Osc,
}

impl CanonicalTerm {
    pub fn one() -> Self {
        CanonicalTerm { p1: 0, p2: 0, r1: RateForm::zero(), r2: RateForm::zero(), osc1: Osc::none(), osc2: Osc::none() }
    }

    pub fn power(axis: Axis, p: u32) -> Self {
        let mut t = Self::one();
        match axis {
            Axis::X1 => t.p1 = p,
            Axis::X2 => t.p2 = p,
        }
        t
    }

    pub fn exp(axis: Axis, rate: RateForm) -> Self {
        let mut t = Self::one();
        match axis {
            Axis::X1 => t.r1 = rate,
            Axis::X2 => t.r2 = rate,
        }
        t
    }

    /// Oscillation along `axis`; returns the sign picked up by
    /// canonicalization (0 for sin of a zero frequency).
    pub fn osc(axis: Axis, kind: OscKind, freq: RateForm) -> (i64, Self) {
        let (s, o) = Osc::canonical(kind, freq);
        let mut t = Self::one();
        match axis {
            Axis::X1 => t.osc1 = o,
            Axis::X2 => t.osc2 = o,
        }
        (s, t)
    }

    pub fn power_of(&self, axis: Axis) -> u32 {
        match axis {
            Axis::X1 => self.p1,
            Axis::X2 => self.p2,
        }
    }

    pub fn rate(&self, axis: Axis) -> &RateForm {
        match axis {
            Axis::X1 => &self.r1,
            Axis::X2 => &self.r2,
        }
    }

    pub fn oscillation(&self, axis: Axis) -> &Osc {
        match axis {
            Axis::X1 => &self.osc1,
            Axis::X2 => &self.osc2,
        }
    }

    pub fn eval(&self, x1: f64, x2: f64, b: &Bindings) -> Result<f64, AlgebraError> {
        let e = self.r1.eval(b)? * x1 + self.r2.eval(b)? * x2;
        Ok(x1.powi(self.p1 as i32)
            * x2.powi(self.p2 as i32)
            * e.exp()
            * self.osc1.eval(x1, b)?
            * self.osc2.eval(x2, b)?)
    }

    fn with_axis(&self, axis: Axis, p: u32, r: RateForm, o: Osc) -> Self {
        let mut t = self.clone();
        match axis {
            Axis::X1 => {
                t.p1 = p;
                t.r1 = r;
                t.osc1 = o;
            }
            Axis::X2 => {
                t.p2 = p;
                t.r2 = r;
                t.osc2 = o;
            }
        }
        t
    }

    fn symbols(&self) -> BTreeSet<String> {
        let mut s: BTreeSet<String> = BTreeSet::new();
        for r in [&self.r1, &self.r2, &self.osc1.freq, &self.osc2.freq] {
            s.extend(r.symbols().map(str::to_string));
        }
        s
    }
}

impl fmt::Display for CanonicalTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<String> = Vec::new();
        for (name, p) in [("x1", self.p1), ("x2", self.p2)] {
            match p {
                0 => {}
                1 => parts.push(name.to_string()),
                _ => parts.push(format!("{name}^{p}")),
            }
        }
        let mut ex: Vec<String> = Vec::new();
        for (name, r) in [("x1", &self.r1), ("x2", &self.r2)] {
            if !r.is_zero() {
                ex.push(format!("({r})*{name}"));
            }
        }
        if !ex.is_empty() {
            parts.push(format!("exp({})", ex.join(" + ")));
        }
        for (name, o) in [("x1", &self.osc1), ("x2", &self.osc2)] {
            match o.kind {
                OscKind::None => {}
                OscKind::Sin => parts.push(format!("sin(({})*{name})", o.freq)),
                OscKind::Cos => parts.push(format!("cos(({})*{name})", o.freq)),
            }
        }
        if parts.is_empty() {
            write!(f, "1")
        } else {
            write!(f, "{}", parts.join("*"))
        }
    }
}

/// Exact product of two terms, linearizing trig products.
pub fn term_mul(t1: &CanonicalTerm, t2: &CanonicalTerm) -> SymExpr {
    let o1 = t1.osc1.mul(&t2.osc1);
    let o2 = t1.osc2.mul(&t2.osc2);
    let base = CanonicalTerm {
        p1: t1.p1 + t2.p1,
        p2: t1.p2 + t2.p2,
        r1: t1.r1.add(&t2.r1),
        r2: t1.r2.add(&t2.r2),
        osc1: Osc::none(),
        osc2: Osc::none(),
    };
    let mut out = SymExpr::zero();
    for (c1, a) in &o1 {
        for (c2, b) in &o2 {
            let mut t = base.clone();
            t.osc1 = a.clone();
            t.osc2 = b.clone();
            out.add_term(t, KPoly::constant(c1 * c2));
        }
    }
    out
}

/// Finite sum of canonical terms with polynomial coefficients.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct SymExpr {
    terms: BTreeMap<CanonicalTerm, KPoly>,
}

impl SymExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn one() -> Self {
        Self::constant(KPoly::one())
    }

    pub fn constant(c: KPoly) -> Self {
        Self::from_term(CanonicalTerm::one(), c)
    }

    pub fn from_term(t: CanonicalTerm, c: KPoly) -> Self {
        let mut e = Self::zero();
        e.add_term(t, c);
        e
    }

    pub fn term(t: CanonicalTerm) -> Self {
        Self::from_term(t, KPoly::one())
    }

    pub fn add_term(&mut self, t: CanonicalTerm, c: KPoly) {
        if c.is_zero() {
            return;
        }
        match self.terms.get_mut(&t) {
            Some(v) => {
                *v += &c;
                if v.is_zero() {
                    self.terms.remove(&t);
                }
            }
            None => {
                self.terms.insert(t, c);
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&CanonicalTerm, &KPoly)> {
        self.terms.iter()
    }

    pub fn coeff(&self, t: &CanonicalTerm) -> KPoly {
        self.terms.get(t).cloned().unwrap_or_default()
    }

    pub fn add(&self, other: &SymExpr) -> SymExpr {
        let mut out = self.clone();
        for (t, c) in &other.terms {
            out.add_term(t.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &SymExpr) -> SymExpr {
        let mut out = self.clone();
        for (t, c) in &other.terms {
            out.add_term(t.clone(), -c);
        }
        out
    }

    pub fn scale(&self, c: &KPoly) -> SymExpr {
        let mut out = SymExpr::zero();
        if c.is_zero() {
            return out;
        }
        for (t, v) in &self.terms {
            out.add_term(t.clone(), v * c);
        }
        out
    }

    pub fn scale_q(&self, c: &Q) -> SymExpr {
        self.scale(&KPoly::constant(c.clone()))
    }

    pub fn mul(&self, other: &SymExpr) -> SymExpr {
        expr_mul(self, other)
    }

    pub fn kappa_degree(&self) -> u32 {
        self.terms.values().map(KPoly::kappa_degree).max().unwrap_or(0)
    }

    pub fn diff(&self, axis: Axis) -> SymExpr {
        diff(self, axis)
    }

    pub fn eval(&self, x1: f64, x2: f64, b: &Bindings) -> Result<f64, AlgebraError> {
        eval(self, (x1, x2), b)
    }

    /// Map every coefficient, dropping those that become zero.
    pub fn map_coeffs(&self, f: impl Fn(&KPoly) -> KPoly) -> SymExpr {
        let mut out = SymExpr::zero();
        for (t, c) in &self.terms {
            out.add_term(t.clone(), f(c));
        }
        out
    }

    /// Substitute exact values for named symbols in rates and coefficients.
    pub fn bind_rational(&self, values: &BTreeMap<String, Q>) -> SymExpr {
        let mut out = SymExpr::zero();
        for (t, c) in &self.terms {
            let (s1, o1) = t.osc1.bind_rational(values);
            let (s2, o2) = t.osc2.bind_rational(values);
            if s1 * s2 == 0 {
                continue;
            }
            let nt = CanonicalTerm {
                p1: t.p1,
                p2: t.p2,
                r1: t.r1.bind_rational(values),
                r2: t.r2.bind_rational(values),
                osc1: o1,
                osc2: o2,
            };
            out.add_term(nt, c.bind_rational(values).scale(&q(s1 * s2)));
        }
        out
    }

    /// Every named symbol in rates, frequencies and coefficients.
    pub fn symbols(&self) -> BTreeSet<String> {
        let mut s = BTreeSet::new();
        for (t, c) in &self.terms {
            s.extend(t.symbols());
            for v in c.vars() {
                if let Var::Sym(n) = v {
                    s.insert(n.to_string());
                }
            }
        }
        s
    }
}

impl fmt::Display for SymExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, (t, c)) in self.terms.iter().enumerate() {
            if k > 0 {
                write!(f, " + ")?;
            }
            let one = *t == CanonicalTerm::one();
            match (c.as_constant(), one) {
                (_, true) => write!(f, "({c})")?,
                (Some(v), false) if v.is_one() => write!(f, "{t}")?,
                _ => write!(f, "({c})*{t}")?,
            }
        }
        Ok(())
    }
}

pub fn expr_mul(e1: &SymExpr, e2: &SymExpr) -> SymExpr {
    let mut out = SymExpr::zero();
    for (t1, c1) in &e1.terms {
        for (t2, c2) in &e2.terms {
            let c = c1 * c2;
            if c.is_zero() {
                continue;
            }
            for (t, k) in term_mul(t1, t2).terms {
                out.add_term(t, &c * &k);
            }
        }
    }
    out
}

/// Like [`expr_mul`] but refusing results beyond the κ-degree cap.
pub fn expr_mul_capped(e1: &SymExpr, e2: &SymExpr) -> Result<SymExpr, AlgebraError> {
    let d = e1.kappa_degree() + e2.kappa_degree();
    if d > KAPPA_DEGREE_CAP {
        return Err(AlgebraError::DegreeCap(d));
    }
    Ok(expr_mul(e1, e2))
}

/// Partial derivative along `axis`.
pub fn diff(e: &SymExpr, axis: Axis) -> SymExpr {
    let mut out = SymExpr::zero();
    for (t, c) in &e.terms {
        let p = t.power_of(axis);
        let r = t.rate(axis).clone();
        let o = t.oscillation(axis).clone();
        if p > 0 {
            let nt = t.with_axis(axis, p - 1, r.clone(), o.clone());
            out.add_term(nt, c.scale(&q(p as i64)));
        }
        if !r.is_zero() {
            out.add_term(t.clone(), c * &r.to_kpoly());
        }
        match o.kind {
            OscKind::None => {}
            OscKind::Sin => {
                let nt = t.with_axis(axis, p, r.clone(), Osc { freq: o.freq.clone(), kind: OscKind::Cos });
                out.add_term(nt, c * &o.freq.to_kpoly());
            }
            OscKind::Cos => {
                let nt = t.with_axis(axis, p, r.clone(), Osc { freq: o.freq.clone(), kind: OscKind::Sin });
                out.add_term(nt, -&(c * &o.freq.to_kpoly()));
            }
        }
    }
    out
}

pub fn eval(e: &SymExpr, point: (f64, f64), b: &Bindings) -> Result<f64, AlgebraError> {
    let mut acc = 0.0;
    for (t, c) in &e.terms {
        acc += c.eval(b)? * t.eval(point.0, point.1, b)?;
    }
    Ok(acc)
}

/// Row-reduced form of a basis, reusable for many projections.
#[derive(Clone, Debug)]
pub struct SpanSolver {
    n: usize,
    pivots: Vec<CanonicalTerm>,
    rows: Vec<BTreeMap<CanonicalTerm, Q>>,
    // rows[k] = Σ_i trans[k][i] · members[i]
    trans: Vec<Vec<Q>>,
    members: Vec<SymExpr>,
}

impl SpanSolver {
    pub fn new(members: &[SymExpr]) -> Result<Self, AlgebraError> {
        let n = members.len();
        let mut pivots: Vec<CanonicalTerm> = Vec::new();
        let mut rows: Vec<BTreeMap<CanonicalTerm, Q>> = Vec::new();
        let mut trans: Vec<Vec<Q>> = Vec::new();
        for (i, m) in members.iter().enumerate() {
            let mut row: BTreeMap<CanonicalTerm, Q> = BTreeMap::new();
            for (t, c) in m.terms() {
                let v = c.as_constant().ok_or(AlgebraError::SymbolicBasis(i))?;
                row.insert(t.clone(), v);
            }
            let mut tr = vec![Q::zero(); n];
            tr[i] = Q::one();
            for (k, p) in pivots.iter().enumerate() {
                if let Some(c) = row.get(p).cloned() {
                    axpy(&mut row, &-c.clone(), &rows[k]);
                    for (a, b) in tr.iter_mut().zip(&trans[k]) {
                        *a -= &c * b;
                    }
                }
            }
            let Some((pt, pc)) = row.iter().next().map(|(t, c)| (t.clone(), c.clone())) else {
                return Err(AlgebraError::Dependent { witness: tr });
            };
            let inv = pc.recip();
            for v in row.values_mut() {
                *v *= &inv;
            }
            for v in tr.iter_mut() {
                *v *= &inv;
            }
            for k in 0..rows.len() {
                if let Some(c) = rows[k].get(&pt).cloned() {
                    let (row_k, tr_k) = (&mut rows[k], &mut trans[k]);
                    axpy(row_k, &-c.clone(), &row);
                    for (a, b) in tr_k.iter_mut().zip(&tr) {
                        *a -= &c * b;
                    }
                }
            }
            pivots.push(pt);
            rows.push(row);
            trans.push(tr);
        }
        Ok(SpanSolver { n, pivots, rows, trans, members: members.to_vec() })
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn members(&self) -> &[SymExpr] {
        &self.members
    }

    /// Coordinates in the original members and the part of `e` outside the span.
    pub fn project(&self, e: &SymExpr) -> (Vec<KPoly>, SymExpr) {
        let red: Vec<KPoly> = self.pivots.iter().map(|p| e.coeff(p)).collect();
        let mut coords = vec![KPoly::zero(); self.n];
        for (k, c) in red.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            for (i, t) in self.trans[k].iter().enumerate() {
                if !t.is_zero() {
                    coords[i] += &c.scale(t);
                }
            }
        }
        let mut residual = e.clone();
        for (k, c) in red.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            for (t, v) in &self.rows[k] {
                residual.add_term(t.clone(), -&c.scale(v));
            }
        }
        (coords, residual)
    }
}

fn axpy(row: &mut BTreeMap<CanonicalTerm, Q>, a: &Q, other: &BTreeMap<CanonicalTerm, Q>) {
    for (t, v) in other {
        let e = row.entry(t.clone()).or_insert_with(Q::zero);
        *e += a * v;
        if e.is_zero() {
            row.remove(t);
        }
    }
}

/// Coordinates of `e` in the span of `members` plus the residual outside it.
pub fn coordinates_in_span(e: &SymExpr, members: &[SymExpr]) -> Result<(Vec<KPoly>, SymExpr), AlgebraError> {
    Ok(SpanSolver::new(members)?.project(e))
}

/// Re-assemble `Σ coords_i · members_i`.
pub fn assemble(coords: &[KPoly], members: &[SymExpr]) -> SymExpr {
    let mut out = SymExpr::zero();
    for (c, m) in coords.iter().zip(members) {
        out = out.add(&m.scale(c));
    }
    out
}
