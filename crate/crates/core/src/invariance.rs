//! Invariance checks, reduction to fractional ODE systems and determining
//! systems for operator families.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::crdop::{apply_operator, CRDOperator, OperatorError, UPoly};
use crate::funcalg::{AlgebraError, Axis, Bindings, KPoly, SymExpr, Var, Q};
use crate::subspace::{BasisKind, SubspaceBasis};

/// Relative tolerance of the numeric probe.
pub const PROBE_TOL: f64 = 1e-7;
/// Relative zero test for residual coefficients in numeric mode.
pub const NUMERIC_TOL: f64 = 1e-9;
const WITNESS_DRAWS: usize = 100;
const WITNESS_SEED: u64 = 0x1d5e_ed00;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InvarianceError {
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error("subspace is not invariant; residual {residual}")]
    NotInvariant { residual: SymExpr },
    #[error("jet route needs a subspace built from an ODE pair")]
    NoSource,
    #[error("probe failed: {0}")]
    Probe(String),
}

/// How residual coefficients are tested for zero.
#[derive(Clone, Debug, PartialEq)]
pub enum Mode {
    /// Exact symbolic zero.
    Exact,
    /// Zero after evaluating symbols, relative to the size of the summands.
    Numeric { bindings: Bindings, tol: f64 },
}

#[derive(Clone, Debug)]
pub struct InvarianceReport {
    pub invariant: bool,
    pub psi: Vec<KPoly>,
    pub residual: SymExpr,
    /// κ-assignment at which the residual is nonzero.
    pub witness: Option<Vec<Q>>,
    /// Largest relative residual coefficient in numeric mode.
    pub max_residual: f64,
}

fn residual_is_zero(residual: &SymExpr, mode: &Mode) -> Result<(bool, f64), InvarianceError> {
    match mode {
        Mode::Exact => Ok((residual.is_zero(), if residual.is_zero() { 0.0 } else { f64::INFINITY })),
        Mode::Numeric { bindings, tol } => {
            let mut worst: f64 = 0.0;
            for (_, c) in residual.terms() {
                for (_, part) in c.split_by(Var::is_kappa) {
                    let v = part.eval(bindings)?.abs();
                    let scale = part.eval_abs(bindings)?;
                    if scale > 0.0 {
                        worst = worst.max(v / scale);
                    }
                }
            }
            Ok((worst <= *tol, worst))
        }
    }
}

fn find_witness(residual: &SymExpr, n: usize, mode: &Mode) -> Option<Vec<Q>> {
    let mut rng = ChaCha8Rng::seed_from_u64(WITNESS_SEED);
    let nonzero_digit = |rng: &mut ChaCha8Rng| loop {
        let v: i64 = rng.gen_range(-9..=9);
        if v != 0 {
            return v;
        }
    };
    for _ in 0..WITNESS_DRAWS {
        let kappa: Vec<Q> = (0..n)
            .map(|_| {
                let a = nonzero_digit(&mut rng);
                let b = nonzero_digit(&mut rng);
                crate::funcalg::qr(a, b)
            })
            .collect();
        let sub = residual.map_coeffs(|c| {
            c.substitute(&|v| match v {
                Var::Kappa(i) => kappa.get(*i as usize - 1).map(|x| KPoly::constant(x.clone())),
                _ => None,
            })
        });
        let hit = match mode {
            Mode::Exact => !sub.is_zero(),
            Mode::Numeric { .. } => !residual_is_zero(&sub, mode).map(|r| r.0).unwrap_or(true),
        };
        if hit {
            return Some(kappa);
        }
    }
    None
}

/// Decide `K[span] ⊆ span` and extract the coordinates Ψ.
pub fn check_invariance(op: &CRDOperator, basis: &SubspaceBasis) -> Result<InvarianceReport, InvarianceError> {
    check_invariance_mode(op, basis, &Mode::Exact)
}

pub fn check_invariance_mode(
    op: &CRDOperator,
    basis: &SubspaceBasis,
    mode: &Mode,
) -> Result<InvarianceReport, InvarianceError> {
    let u = basis.generic_element();
    let k = apply_operator(op, &u)?;
    let (psi, residual) = basis.solver().project(&k);
    let (invariant, max_residual) = residual_is_zero(&residual, mode)?;
    let witness = if invariant { None } else { find_witness(&residual, basis.dimension(), mode) };
    Ok(InvarianceReport { invariant, psi, residual, witness, max_residual })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub invariant: bool,
    pub relative_residual: f64,
}

/// Independent numeric route: evaluate the operator pointwise on a random
/// element and least-squares project onto sampled basis values.
pub fn numeric_invariance_probe(
    op: &CRDOperator,
    basis: &SubspaceBasis,
    bindings: &Bindings,
    seed: u64,
) -> Result<ProbeResult, InvarianceError> {
    let mut b = basis.bindings.clone();
    b.extend(bindings);
    let n = basis.dimension();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let members = basis.members();
    let derivs: Vec<[SymExpr; 5]> = members
        .iter()
        .map(|m| {
            let d1 = m.diff(Axis::X1);
            let d2 = m.diff(Axis::X2);
            [m.clone(), d1.diff(Axis::X1), d1, d2.diff(Axis::X2), d2]
        })
        .collect();
    let npts = 3 * n + 10;
    let pts: Vec<(f64, f64)> = (0..npts).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    let mut x = DMatrix::<f64>::zeros(npts, n);
    let mut vals = vec![[0.0; 5]; npts * n];
    for (j, (x1, x2)) in pts.iter().enumerate() {
        for (m, d) in derivs.iter().enumerate() {
            let e = |k: usize| d[k].eval(*x1, *x2, &b);
            // order: u, u11, u1, u22, u2
            let v = [e(0)?, e(2)?, e(1)?, e(4)?, e(3)?];
            vals[j * n + m] = v;
            x[(j, m)] = v[0];
        }
    }
    let svd = x.clone().svd(true, true);
    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let kappa: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut kv = DVector::<f64>::zeros(npts);
        for j in 0..npts {
            let mut jet = [0.0; 5];
            for m in 0..n {
                for (s, v) in jet.iter_mut().zip(vals[j * n + m]) {
                    *s += kappa[m] * v;
                }
            }
            kv[j] = op.eval_pointwise(jet, &b)?;
        }
        let norm = kv.norm();
        if norm == 0.0 {
            continue;
        }
        let c = svd.solve(&kv, 1e-13).map_err(|e| InvarianceError::Probe(e.to_string()))?;
        let r = (&x * c - &kv).norm() / norm;
        worst = worst.max(r);
    }
    Ok(ProbeResult { invariant: worst <= PROBE_TOL, relative_residual: worst })
}

/// `D^α Φ_m = Ψ_m(Φ_1..Φ_n)`; the Φ are stored as κ indeterminates.
#[derive(Clone, Debug, PartialEq)]
pub struct FODESystem {
    pub equations: Vec<KPoly>,
}

impl FODESystem {
    pub fn dimension(&self) -> usize {
        self.equations.len()
    }

    pub fn eval_rhs(&self, phi: &[f64], bindings: &Bindings) -> Result<Vec<f64>, AlgebraError> {
        let mut b = bindings.clone();
        b.set_kappas(phi);
        self.equations.iter().map(|e| e.eval(&b)).collect()
    }

    /// Right-hand sides with Φ in place of κ.
    pub fn render(&self) -> Vec<String> {
        self.equations
            .iter()
            .enumerate()
            .map(|(m, e)| format!("D^a Phi{} = {}", m + 1, e.to_string().replace('κ', "Phi")))
            .collect()
    }
}

impl fmt::Display for FODESystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.render().join("\n"))
    }
}

pub fn reduce_to_fode_system(op: &CRDOperator, basis: &SubspaceBasis) -> Result<FODESystem, InvarianceError> {
    reduce_to_fode_system_mode(op, basis, &Mode::Exact)
}

pub fn reduce_to_fode_system_mode(
    op: &CRDOperator,
    basis: &SubspaceBasis,
    mode: &Mode,
) -> Result<FODESystem, InvarianceError> {
    let r = check_invariance_mode(op, basis, mode)?;
    if !r.invariant {
        return Err(InvarianceError::NotInvariant { residual: r.residual });
    }
    Ok(FODESystem { equations: r.psi })
}

/// Polynomial conditions on operator and rate symbols.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct DeterminingSystem {
    pub equations: Vec<KPoly>,
}

impl DeterminingSystem {
    fn from_raw(raw: impl IntoIterator<Item = KPoly>) -> Self {
        let set: BTreeSet<KPoly> = raw.into_iter().filter(|e| !e.is_zero()).map(|e| e.primitive()).collect();
        DeterminingSystem { equations: set.into_iter().collect() }
    }

    pub fn len(&self) -> usize {
        self.equations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.equations.is_empty()
    }

    /// Exact values after substituting rationals for symbols.
    pub fn eval_rational(&self, values: &BTreeMap<String, Q>) -> Vec<KPoly> {
        self.equations.iter().map(|e| e.bind_rational(values)).collect()
    }
}

impl fmt::Display for DeterminingSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.equations {
            writeln!(f, "{e} = 0")?;
        }
        Ok(())
    }
}

/// Jet calculus on the solution manifold of the subspace's ODE pair.
struct Jets {
    kind: BasisKind,
    a: Vec<KPoly>,
    b: Vec<KPoly>,
}

impl Jets {
    fn n1(&self) -> u32 {
        self.a.len() as u32
    }

    fn n2(&self) -> u32 {
        self.b.len() as u32
    }

    /// Express `∂^(i+j)u` through the free jets.
    fn reduce(&self, i: u32, j: u32) -> KPoly {
        let (n1, n2) = (self.n1(), self.n2());
        if self.kind == BasisKind::TypeII && i > 0 && j > 0 {
            return KPoly::zero();
        }
        if i >= n1 {
            let mut out = KPoly::zero();
            for (k, ak) in self.a.iter().enumerate() {
                if !ak.is_zero() {
                    out += &(-&(ak * &self.reduce(i - n1 + k as u32, j)));
                }
            }
            return out;
        }
        if j >= n2 {
            let mut out = KPoly::zero();
            for (k, bk) in self.b.iter().enumerate() {
                if !bk.is_zero() {
                    out += &(-&(bk * &self.reduce(i, j - n2 + k as u32)));
                }
            }
            return out;
        }
        KPoly::var(Var::Jet(i, j))
    }

    fn total_derivative(&self, p: &KPoly, axis: Axis) -> KPoly {
        let mut out = KPoly::zero();
        for v in p.vars() {
            if let Var::Jet(i, j) = v {
                let next = match axis {
                    Axis::X1 => self.reduce(i + 1, j),
                    Axis::X2 => self.reduce(i, j + 1),
                };
                if !next.is_zero() {
                    out += &(&p.derivative(&Var::Jet(i, j)) * &next);
                }
            }
        }
        out
    }

    /// `L[F] = Σ_k c_k D^k F` with monic leading term.
    fn apply_ode(&self, f: &KPoly, axis: Axis) -> KPoly {
        let coeffs = match axis {
            Axis::X1 => &self.a,
            Axis::X2 => &self.b,
        };
        let mut out = KPoly::zero();
        let mut d = f.clone();
        for c in coeffs {
            if !c.is_zero() {
                out += &(c * &d);
            }
            d = self.total_derivative(&d, axis);
        }
        out += &d;
        out
    }
}

fn compose_jet(p: &UPoly, u: &KPoly) -> KPoly {
    let mut out = KPoly::zero();
    for c in p.coeffs().iter().rev() {
        out = &(&out * u) + c;
    }
    out
}

fn operator_in_jets(op: &CRDOperator, jets: &Jets) -> KPoly {
    let u = KPoly::var(Var::Jet(0, 0));
    let mut k = compose_jet(&op.c, &u);
    for (axis, a, b) in [(Axis::X1, &op.a1, &op.b1), (Axis::X2, &op.a2, &op.b2)] {
        let (d1, d2) = match axis {
            Axis::X1 => (jets.reduce(1, 0), jets.reduce(2, 0)),
            Axis::X2 => (jets.reduce(0, 1), jets.reduce(0, 2)),
        };
        k += &(&compose_jet(a, &u) * &d2);
        k += &(&compose_jet(&a.derivative(), &u) * &(&d1 * &d1));
        k += &(&compose_jet(b, &u) * &d1);
    }
    k
}

/// Determining equations of an operator family on an ODE-generated
/// subspace, obtained by forcing the subspace's defining ODEs on `K[u]`.
pub fn determining_system(op: &CRDOperator, basis: &SubspaceBasis) -> Result<DeterminingSystem, InvarianceError> {
    let (ode1, ode2) = basis.source.as_ref().ok_or(InvarianceError::NoSource)?;
    let jets = Jets {
        kind: basis.kind,
        a: ode1.coeffs.iter().map(|c| c.to_kpoly()).collect(),
        b: ode2.coeffs.iter().map(|c| c.to_kpoly()).collect(),
    };
    let k = operator_in_jets(op, &jets);
    let mut conditions = vec![jets.apply_ode(&k, Axis::X1), jets.apply_ode(&k, Axis::X2)];
    if basis.kind == BasisKind::TypeII {
        let mixed = jets.total_derivative(&jets.total_derivative(&k, Axis::X1), Axis::X2);
        conditions.push(mixed);
    }
    let raw = conditions.iter().flat_map(|c| c.split_by(Var::is_jet).into_values());
    Ok(DeterminingSystem::from_raw(raw))
}

/// Coefficient-extraction route: split the out-of-span residual by term and
/// κ-monomial.
pub fn span_determining_system(op: &CRDOperator, basis: &SubspaceBasis) -> Result<DeterminingSystem, InvarianceError> {
    let r = check_invariance(op, basis)?;
    let raw: Vec<KPoly> = r.residual.terms().flat_map(|(_, c)| c.split_by(Var::is_kappa).into_values()).collect();
    Ok(DeterminingSystem::from_raw(raw))
}

/// Scale every monomial so integer content is removed; used when comparing
/// equation lists from different sources.
pub fn normalize_equation(e: &KPoly) -> KPoly {
    e.primitive()
}

/// Short stable hash of a Ψ list for reports.
pub fn psi_digest(psi: &[KPoly]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in psi {
        for byte in p.to_string().bytes().chain(std::iter::once(b';')) {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}
