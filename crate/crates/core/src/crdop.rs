//! The convection-reaction-diffusion operator
//! `K[u] = Σ_i ∂_i(A_i(u) ∂_i u) + Σ_i B_i(u) ∂_i u + C(u)`.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::funcalg::{AlgebraError, Axis, Bindings, KPoly, SymExpr, KAPPA_DEGREE_CAP, Q};

pub const MAX_UPOLY_DEGREE: usize = 4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OperatorError {
    #[error("coefficient polynomial of degree {0} exceeds the supported degree {MAX_UPOLY_DEGREE}")]
    Degree(usize),
    #[error("coefficient of u^{0} depends on the amplitudes")]
    KappaCoefficient(usize),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

/// Polynomial in `u` with coefficients polynomial in named symbols.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct UPoly {
    coeffs: Vec<KPoly>,
}

impl UPoly {
    pub fn new(mut coeffs: Vec<KPoly>) -> Result<Self, OperatorError> {
        while coeffs.last().is_some_and(KPoly::is_zero) {
            coeffs.pop();
        }
        if coeffs.len() > MAX_UPOLY_DEGREE + 1 {
            return Err(OperatorError::Degree(coeffs.len() - 1));
        }
        if let Some(k) = coeffs.iter().position(|c| c.kappa_degree() > 0) {
            return Err(OperatorError::KappaCoefficient(k));
        }
        Ok(UPoly { coeffs })
    }

    pub fn zero() -> Self {
        UPoly::default()
    }

    pub fn constant(c: KPoly) -> Self {
        UPoly::new(vec![c]).unwrap()
    }

    /// `Σ name_k u^k` for k = 0..=degree, e.g. `symbolic("c", 2)` = c2 u² + c1 u + c0.
    pub fn symbolic(prefix: &str, degree: usize) -> Self {
        UPoly::new((0..=degree).map(|k| KPoly::sym(&format!("{prefix}{k}"))).collect()).unwrap()
    }

    pub fn rational(coeffs: &[Q]) -> Self {
        UPoly::new(coeffs.iter().cloned().map(KPoly::constant).collect()).unwrap()
    }

    pub fn coeffs(&self) -> &[KPoly] {
        &self.coeffs
    }

    pub fn coeff(&self, k: usize) -> KPoly {
        self.coeffs.get(k).cloned().unwrap_or_default()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Degree after trimming; the zero polynomial reports 0.
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn derivative(&self) -> UPoly {
        let coeffs =
            self.coeffs.iter().enumerate().skip(1).map(|(k, c)| c.scale(&crate::funcalg::q(k as i64))).collect();
        UPoly::new(coeffs).unwrap()
    }

    pub fn add(&self, other: &UPoly) -> UPoly {
        let n = self.coeffs.len().max(other.coeffs.len());
        UPoly::new((0..n).map(|k| &self.coeff(k) + &other.coeff(k)).collect()).unwrap()
    }

    pub fn bind_rational(&self, values: &BTreeMap<String, Q>) -> UPoly {
        UPoly::new(self.coeffs.iter().map(|c| c.bind_rational(values)).collect()).unwrap()
    }

    pub fn eval(&self, u: f64, b: &Bindings) -> Result<f64, AlgebraError> {
        let mut acc = 0.0;
        for c in self.coeffs.iter().rev() {
            acc = acc * u + c.eval(b)?;
        }
        Ok(acc)
    }
}

impl fmt::Display for UPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .coeffs
            .iter()
            .enumerate()
            .rev()
            .filter(|(_, c)| !c.is_zero())
            .map(|(k, c)| match k {
                0 => format!("({c})"),
                1 => format!("({c})*u"),
                _ => format!("({c})*u^{k}"),
            })
            .collect();
        if parts.is_empty() {
            write!(f, "0")
        } else {
            write!(f, "{}", parts.join(" + "))
        }
    }
}

/// Powers of one expression, shared between compositions.
struct Powers<'a> {
    u: &'a SymExpr,
    pows: Vec<SymExpr>,
}

impl<'a> Powers<'a> {
    fn new(u: &'a SymExpr) -> Self {
        Powers { u, pows: vec![SymExpr::one()] }
    }

    fn get(&mut self, k: usize) -> Result<&SymExpr, OperatorError> {
        let d = self.u.kappa_degree() * k as u32;
        if d > KAPPA_DEGREE_CAP {
            return Err(AlgebraError::DegreeCap(d).into());
        }
        while self.pows.len() <= k {
            let next = self.pows.last().unwrap().mul(self.u);
            self.pows.push(next);
        }
        Ok(&self.pows[k])
    }

    fn compose(&mut self, p: &UPoly) -> Result<SymExpr, OperatorError> {
        let mut out = SymExpr::zero();
        for (k, c) in p.coeffs.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            out = out.add(&self.get(k)?.scale(c));
        }
        Ok(out)
    }
}

/// `p(u)` expanded as a SymExpr.
pub fn compose(p: &UPoly, u: &SymExpr) -> Result<SymExpr, OperatorError> {
    Powers::new(u).compose(p)
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct CRDOperator {
    pub a1: UPoly,
    pub a2: UPoly,
    pub b1: UPoly,
    pub b2: UPoly,
    pub c: UPoly,
}

impl CRDOperator {
    pub fn new(a1: UPoly, a2: UPoly, b1: UPoly, b2: UPoly, c: UPoly) -> Self {
        CRDOperator { a1, a2, b1, b2, c }
    }

    pub fn parts(&self) -> [(&'static str, &UPoly); 5] {
        [("A1", &self.a1), ("A2", &self.a2), ("B1", &self.b1), ("B2", &self.b2), ("C", &self.c)]
    }

    /// Constant diffusion and convection with linear reaction.
    pub fn is_linear(&self) -> bool {
        self.a1.degree() == 0
            && self.a2.degree() == 0
            && self.b1.degree() == 0
            && self.b2.degree() == 0
            && self.c.degree() <= 1
    }

    pub fn bind_rational(&self, values: &BTreeMap<String, Q>) -> CRDOperator {
        CRDOperator {
            a1: self.a1.bind_rational(values),
            a2: self.a2.bind_rational(values),
            b1: self.b1.bind_rational(values),
            b2: self.b2.bind_rational(values),
            c: self.c.bind_rational(values),
        }
    }

    /// Pointwise value from the jet `(u, u_1, u_11, u_2, u_22)`.
    pub fn eval_pointwise(&self, jet: [f64; 5], b: &Bindings) -> Result<f64, AlgebraError> {
        let [u, u1, u11, u2, u22] = jet;
        let da1 = self.a1.derivative();
        let da2 = self.a2.derivative();
        Ok(self.a1.eval(u, b)? * u11
            + da1.eval(u, b)? * u1 * u1
            + self.a2.eval(u, b)? * u22
            + da2.eval(u, b)? * u2 * u2
            + self.b1.eval(u, b)? * u1
            + self.b2.eval(u, b)? * u2
            + self.c.eval(u, b)?)
    }
}

impl fmt::Display for CRDOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.parts().iter().map(|(n, p)| format!("{n} = {p}")).collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// `K[u]` expanded as `A_i u_ii + A_i'(u) u_i² + B_i u_i + C`.
pub fn apply_operator(op: &CRDOperator, u: &SymExpr) -> Result<SymExpr, OperatorError> {
    let mut pw = Powers::new(u);
    let mut out = pw.compose(&op.c)?;
    for (axis, a, b) in [(Axis::X1, &op.a1, &op.b1), (Axis::X2, &op.a2, &op.b2)] {
        let ui = u.diff(axis);
        if ui.is_zero() {
            continue;
        }
        let uii = ui.diff(axis);
        let da = a.derivative();
        if !a.is_zero() && !uii.is_zero() {
            out = out.add(&pw.compose(a)?.mul(&uii));
        }
        if !da.is_zero() {
            let sq = crate::funcalg::expr_mul_capped(&ui, &ui)?;
            out = out.add(&crate::funcalg::expr_mul_capped(&pw.compose(&da)?, &sq)?);
        }
        if !b.is_zero() {
            out = out.add(&pw.compose(b)?.mul(&ui));
        }
    }
    let d = out.kappa_degree();
    if d > KAPPA_DEGREE_CAP {
        return Err(AlgebraError::DegreeCap(d).into());
    }
    Ok(out)
}
