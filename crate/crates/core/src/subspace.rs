//! Candidate invariant subspaces built from two constant-coefficient linear
//! ODEs, one per spatial axis.

use std::fmt;

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

use crate::funcalg::{
    q, q_to_f64, AlgebraError, Axis, Bindings, CanonicalTerm, OscKind, RateForm, SpanSolver, SymExpr, Q,
};

/// Repeated numeric roots closer than this are merged.
pub const ROOT_CLUSTER_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SubspaceError {
    #[error("ODE order must be between 1 and 4, got {0}")]
    Order(usize),
    #[error("ODE for {expected} was given on axis {got}")]
    Axis { expected: Axis, got: Axis },
    #[error("type II subspaces need a_0=b_0=0 (constant solutions on both axes)")]
    TypeTwoRequirement,
    #[error("symbolic ODE coefficients {0} are outside the supported patterns; bind them to numbers")]
    SymbolicPattern(String),
    #[error("root finding failed: {0}")]
    Roots(String),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

/// `D^n y + a_{n-1} D^{n-1} y + ... + a_0 y = 0` along one axis.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearODE {
    pub axis: Axis,
    /// a_0 .. a_{n-1}; the leading coefficient is 1.
    pub coeffs: Vec<RateForm>,
}

impl LinearODE {
    pub fn new(axis: Axis, coeffs: Vec<RateForm>) -> Result<Self, SubspaceError> {
        if coeffs.is_empty() || coeffs.len() > 4 {
            return Err(SubspaceError::Order(coeffs.len()));
        }
        Ok(LinearODE { axis, coeffs })
    }

    pub fn rational(axis: Axis, coeffs: &[Q]) -> Result<Self, SubspaceError> {
        Self::new(axis, coeffs.iter().cloned().map(RateForm::constant).collect())
    }

    pub fn order(&self) -> usize {
        self.coeffs.len()
    }

    fn rational_coeffs(&self) -> Option<Vec<Q>> {
        self.coeffs
            .iter()
            .map(|c| if c.symbolic_part().is_empty() { Some(c.constant_part().clone()) } else { None })
            .collect()
    }
}

impl fmt::Display for LinearODE {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.order();
        write!(f, "D{}^{n}", self.axis)?;
        for (k, c) in self.coeffs.iter().enumerate().rev() {
            if !c.is_zero() {
                write!(f, " + ({c})D{}^{k}", self.axis)?;
            }
        }
        Ok(())
    }
}

/// Solutions of one ODE plus the numeric values of any fresh symbols.
#[derive(Clone, Debug, Default)]
pub struct OdeBasis {
    pub members: Vec<SymExpr>,
    pub bindings: Bindings,
    /// Algebraic relations such as `w_x2^2 = b0`, informational.
    pub relations: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisKind {
    TypeI,
    TypeII,
    Custom,
}

impl fmt::Display for BasisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisKind::TypeI => write!(f, "type1"),
            BasisKind::TypeII => write!(f, "type2"),
            BasisKind::Custom => write!(f, "custom"),
        }
    }
}

/// Candidate subspace with linearly independent members.
#[derive(Clone, Debug)]
pub struct SubspaceBasis {
    members: Vec<SymExpr>,
    pub kind: BasisKind,
    pub source: Option<(LinearODE, LinearODE)>,
    pub bindings: Bindings,
    pub relations: Vec<String>,
    solver: SpanSolver,
}

impl SubspaceBasis {
    pub fn custom(members: Vec<SymExpr>) -> Result<Self, SubspaceError> {
        Self::assemble(members, BasisKind::Custom, None, Bindings::new(), Vec::new())
    }

    fn assemble(
        members: Vec<SymExpr>,
        kind: BasisKind,
        source: Option<(LinearODE, LinearODE)>,
        bindings: Bindings,
        relations: Vec<String>,
    ) -> Result<Self, SubspaceError> {
        if members.iter().any(|m| m.kappa_degree() > 0) {
            return Err(SubspaceError::Algebra(AlgebraError::SymbolicBasis(0)));
        }
        let solver = SpanSolver::new(&members)?;
        Ok(SubspaceBasis { members, kind, source, bindings, relations, solver })
    }

    pub fn members(&self) -> &[SymExpr] {
        &self.members
    }

    pub fn dimension(&self) -> usize {
        self.members.len()
    }

    pub fn solver(&self) -> &SpanSolver {
        &self.solver
    }

    /// `Σ κ_m ξ_m`.
    pub fn generic_element(&self) -> SymExpr {
        let mut u = SymExpr::zero();
        for (m, xi) in self.members.iter().enumerate() {
            u = u.add(&xi.scale(&crate::funcalg::KPoly::kappa(m as u32 + 1)));
        }
        u
    }

    pub fn with_extra_bindings(mut self, b: &Bindings) -> Self {
        self.bindings.extend(b);
        self
    }
}

impl fmt::Display for SubspaceBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.members.iter().map(|m| m.to_string()).collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

fn factorial(j: u32) -> Q {
    (1..=j as i64).fold(Q::one(), |acc, k| acc * q(k))
}

/// Generators for one root (rate, optional frequency) with multiplicity.
fn push_generators(out: &mut Vec<SymExpr>, axis: Axis, rate: &RateForm, freq: Option<&RateForm>, mult: u32) {
    for j in 0..mult {
        let scale = factorial(j).recip();
        let base = term_on(axis, j, rate);
        match freq {
            None => out.push(SymExpr::from_term(base, crate::funcalg::KPoly::constant(scale))),
            Some(w) => {
                for kind in [OscKind::Sin, OscKind::Cos] {
                    let (s, o) = CanonicalTerm::osc(axis, kind, w.clone());
                    let mut t = base.clone();
                    match axis {
                        Axis::X1 => t.osc1 = o.osc1,
                        Axis::X2 => t.osc2 = o.osc2,
                    }
                    out.push(SymExpr::from_term(t, crate::funcalg::KPoly::constant(&scale * q(s))));
                }
            }
        }
    }
}

fn term_on(axis: Axis, p: u32, rate: &RateForm) -> CanonicalTerm {
    let mut t = CanonicalTerm::exp(axis, rate.clone());
    match axis {
        Axis::X1 => t.p1 = p,
        Axis::X2 => t.p2 = p,
    }
    t
}

/// n linearly independent solutions of the ODE.
pub fn ode_basis(ode: &LinearODE) -> Result<OdeBasis, SubspaceError> {
    if ode.order() == 0 || ode.order() > 4 {
        return Err(SubspaceError::Order(ode.order()));
    }
    match ode.rational_coeffs() {
        Some(c) => rational_basis(ode.axis, &c),
        None => symbolic_basis(ode),
    }
}

fn symbolic_basis(ode: &LinearODE) -> Result<OdeBasis, SubspaceError> {
    let n = ode.order();
    let axis = ode.axis;
    let k = ode.coeffs.iter().take_while(|c| c.is_zero()).count();
    let rest = &ode.coeffs[k..];
    let mut out = OdeBasis::default();
    let zero = RateForm::zero();
    let fail = || SubspaceError::SymbolicPattern(ode.to_string());
    match n - k {
        // D^k (D + s)
        1 => {
            push_generators(&mut out.members, axis, &zero, None, k as u32);
            push_generators(&mut out.members, axis, &rest[0].neg(), None, 1);
        }
        // D^k (D^2 + s)
        2 if rest[1].is_zero() => {
            let s = &rest[0];
            let w = match (s.symbolic_part().len(), s.constant_part().is_zero()) {
                (1, true) => {
                    let (name, c) = s.symbolic_part().iter().next().unwrap();
                    if c.is_one() {
                        format!("w_{name}")
                    } else {
                        format!("w_{axis}")
                    }
                }
                _ => format!("w_{axis}"),
            };
            push_generators(&mut out.members, axis, &zero, None, k as u32);
            push_generators(&mut out.members, axis, &zero, Some(&RateForm::symbol(&w, Q::one())), 1);
            out.relations.push(format!("{w}^2 = {s}"));
        }
        _ => return Err(fail()),
    }
    Ok(out)
}

/// Exact polynomial helpers, coefficients low to high.
fn poly_eval(p: &[Q], x: &Q) -> Q {
    p.iter().rev().fold(Q::zero(), |acc, c| acc * x + c)
}

fn deflate(p: &[Q], r: &Q) -> Vec<Q> {
    // p(x) = (x - r) s(x)
    let n = p.len() - 1;
    let mut s = vec![Q::zero(); n];
    let mut carry = Q::zero();
    for k in (0..n).rev() {
        carry = &p[k + 1] + &carry * r;
        s[k] = carry.clone();
    }
    s
}

fn divisors(n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut d = 1;
    while d * d <= n {
        if n % d == 0 {
            out.push(d);
            if d * d != n {
                out.push(n / d);
            }
        }
        d += 1;
    }
    out
}

/// Rational roots with multiplicity, leaving the cofactor without
/// rational roots. `None` if the coefficients are too large to factor.
fn rational_roots(mut p: Vec<Q>) -> Option<(Vec<(Q, u32)>, Vec<Q>)> {
    let mut roots: Vec<(Q, u32)> = Vec::new();
    let push = |r: Q, roots: &mut Vec<(Q, u32)>| match roots.iter_mut().find(|(x, _)| *x == r) {
        Some(e) => e.1 += 1,
        None => roots.push((r, 1)),
    };
    while p.len() > 1 && p[0].is_zero() {
        p.remove(0);
        push(Q::zero(), &mut roots);
    }
    loop {
        if p.len() <= 1 {
            break;
        }
        let l = p.iter().fold(BigInt::one(), |acc, c| acc.lcm(c.denom()));
        let ints: Vec<BigInt> = p.iter().map(|c| (c * Q::from_integer(l.clone())).to_integer()).collect();
        let a0 = ints[0].abs().to_u64().filter(|v| *v < 1_000_000_000_000)?;
        let an = ints[ints.len() - 1].abs().to_u64().filter(|v| *v < 1_000_000_000_000)?;
        let mut found = None;
        'outer: for num in divisors(a0) {
            for den in divisors(an) {
                for s in [1i64, -1] {
                    let r = Q::new(BigInt::from(num) * s, BigInt::from(den));
                    if poly_eval(&p, &r).is_zero() {
                        found = Some(r);
                        break 'outer;
                    }
                }
            }
        }
        match found {
            Some(r) => {
                p = deflate(&p, &r);
                push(r, &mut roots);
            }
            None => break,
        }
    }
    Some((roots, p))
}

fn rational_sqrt(v: &Q) -> Option<Q> {
    if v.is_negative() {
        return None;
    }
    let n = v.numer().sqrt();
    let d = v.denom().sqrt();
    if &(&n * &n) == v.numer() && &(&d * &d) == v.denom() {
        Some(Q::new(n, d))
    } else {
        None
    }
}

fn rational_basis(axis: Axis, coeffs: &[Q]) -> Result<OdeBasis, SubspaceError> {
    let mut p: Vec<Q> = coeffs.to_vec();
    p.push(Q::one());
    let mut out = OdeBasis::default();
    let (mut roots, rest) = match rational_roots(p.clone()) {
        Some(v) => v,
        None => (Vec::new(), p),
    };
    // zero root first, then descending
    roots.sort_by(|a, b| (!a.0.is_zero()).cmp(&!b.0.is_zero()).then(b.0.cmp(&a.0)));
    for (r, m) in &roots {
        push_generators(&mut out.members, axis, &RateForm::constant(r.clone()), None, *m);
    }
    match rest.len() - 1 {
        0 => {}
        2 => {
            // x^2 + b x + c
            let (c, b) = (&rest[0], &rest[1]);
            let p0 = -b / q(2);
            let disc4 = &p0 * &p0 - c;
            let re = RateForm::constant(p0.clone());
            if disc4.is_negative() {
                let q2 = -disc4;
                let w = match rational_sqrt(&q2) {
                    Some(v) => RateForm::constant(v),
                    None => {
                        let name = format!("w_{axis}");
                        out.bindings.set_sym(&name, q_to_f64(&q2).sqrt());
                        out.relations.push(format!("{name}^2 = {q2}"));
                        RateForm::symbol(&name, Q::one())
                    }
                };
                push_generators(&mut out.members, axis, &re, Some(&w), 1);
            } else {
                let name = format!("s_{axis}");
                out.bindings.set_sym(&name, q_to_f64(&disc4).sqrt());
                out.relations.push(format!("{name}^2 = {disc4}"));
                let s = RateForm::symbol(&name, Q::one());
                push_generators(&mut out.members, axis, &re.add(&s), None, 1);
                push_generators(&mut out.members, axis, &re.sub(&s), None, 1);
            }
        }
        _ => numeric_roots(axis, &rest, &mut out)?,
    }
    Ok(out)
}

/// Companion-matrix roots of a monic polynomial, Newton-polished.
fn numeric_roots(axis: Axis, p: &[Q], out: &mut OdeBasis) -> Result<(), SubspaceError> {
    let n = p.len() - 1;
    let c: Vec<f64> = p.iter().map(q_to_f64).collect();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        m[(i, i - 1)] = 1.0;
    }
    for i in 0..n {
        m[(i, n - 1)] = -c[i];
    }
    let eig = m.complex_eigenvalues();
    let mut roots: Vec<nalgebra::Complex<f64>> = eig.iter().copied().collect();
    for z in roots.iter_mut() {
        for _ in 0..4 {
            let (mut f, mut df) = (nalgebra::Complex::new(0.0, 0.0), nalgebra::Complex::new(0.0, 0.0));
            for k in (0..=n).rev() {
                df = df * *z + f;
                f = f * *z + c[k];
            }
            if df.norm() > 0.0 {
                *z -= f / df;
            }
        }
    }
    // cluster repeated roots
    let mut clusters: Vec<(nalgebra::Complex<f64>, u32)> = Vec::new();
    for z in roots {
        match clusters.iter_mut().find(|(w, _)| (*w - z).norm() < ROOT_CLUSTER_TOL) {
            Some(e) => e.1 += 1,
            None => clusters.push((z, 1)),
        }
    }
    clusters.sort_by(|a, b| b.0.re.partial_cmp(&a.0.re).unwrap().then(b.0.im.partial_cmp(&a.0.im).unwrap()));
    let mut k = 0;
    for (z, mult) in clusters {
        if z.im < -ROOT_CLUSTER_TOL {
            continue;
        }
        k += 1;
        let rname = format!("r{k}_{axis}");
        out.bindings.set_sym(&rname, z.re);
        let rate = RateForm::symbol(&rname, Q::one());
        if z.im.abs() <= ROOT_CLUSTER_TOL {
            push_generators(&mut out.members, axis, &rate, None, mult);
        } else {
            let wname = format!("w{k}_{axis}");
            out.bindings.set_sym(&wname, z.im);
            push_generators(&mut out.members, axis, &rate, Some(&RateForm::symbol(&wname, Q::one())), mult);
        }
    }
    if out.members.is_empty() {
        return Err(SubspaceError::Roots("no roots found".into()));
    }
    Ok(())
}

fn check_axes(ode1: &LinearODE, ode2: &LinearODE) -> Result<(), SubspaceError> {
    if ode1.axis != Axis::X1 {
        return Err(SubspaceError::Axis { expected: Axis::X1, got: ode1.axis });
    }
    if ode2.axis != Axis::X2 {
        return Err(SubspaceError::Axis { expected: Axis::X2, got: ode2.axis });
    }
    Ok(())
}

/// Product space `{v_i(x1) ζ_j(x2)}` of dimension n1·n2.
pub fn build_type1(ode1: &LinearODE, ode2: &LinearODE) -> Result<SubspaceBasis, SubspaceError> {
    check_axes(ode1, ode2)?;
    let b1 = ode_basis(ode1)?;
    let b2 = ode_basis(ode2)?;
    let mut members = Vec::with_capacity(b1.members.len() * b2.members.len());
    for v in &b1.members {
        for z in &b2.members {
            members.push(v.mul(z));
        }
    }
    let mut bindings = b1.bindings.clone();
    bindings.extend(&b2.bindings);
    let relations = [b1.relations, b2.relations].concat();
    SubspaceBasis::assemble(members, BasisKind::TypeI, Some((ode1.clone(), ode2.clone())), bindings, relations)
}

/// Sum space `{1} ∪ V1' ∪ V2'` of dimension n1+n2−1.
pub fn build_type2(ode1: &LinearODE, ode2: &LinearODE) -> Result<SubspaceBasis, SubspaceError> {
    check_axes(ode1, ode2)?;
    if !ode1.coeffs[0].is_zero() || !ode2.coeffs[0].is_zero() {
        return Err(SubspaceError::TypeTwoRequirement);
    }
    let b1 = ode_basis(ode1)?;
    let b2 = ode_basis(ode2)?;
    let one = SymExpr::one();
    let mut members = vec![one.clone()];
    members.extend(b1.members.iter().filter(|m| **m != one).cloned());
    members.extend(b2.members.iter().filter(|m| **m != one).cloned());
    let mut bindings = b1.bindings.clone();
    bindings.extend(&b2.bindings);
    let relations = [b1.relations, b2.relations].concat();
    SubspaceBasis::assemble(members, BasisKind::TypeII, Some((ode1.clone(), ode2.clone())), bindings, relations)
}
