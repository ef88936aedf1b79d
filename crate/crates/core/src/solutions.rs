//! Closed-form time profiles for reduced systems, assembled space–time
//! solutions, and their numerical verification.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::crdop::{apply_operator, CRDOperator, OperatorError};
use crate::fracnum::{caputo_uniform, FracError, Trajectory, UniformGrid};
use crate::funcalg::{q_to_f64, AlgebraError, Bindings, SymExpr, Var};
use crate::invariance::FODESystem;
use crate::specfun::{gamma, ml2, ml3, SpecFunError};
use crate::subspace::SubspaceBasis;

/// Residuals are taken from this time on by default; the first few nodes
/// carry the O(1) start-up error of the L1 scheme on t^α-type profiles.
pub const DEFAULT_T_MIN: f64 = 0.1;
/// verify_solution refuses coarser grids.
pub const MIN_STEPS: usize = 64;
/// Two quadrature refinements must agree to this.
pub const QUAD_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolutionError {
    #[error("order {0} outside (0, 2]")]
    Alpha(f64),
    #[error("orders above 1 need the initial slope")]
    MissingSlope,
    #[error("an initial slope only applies to orders above 1")]
    UnexpectedSlope,
    #[error("{what}: expected {expected}, got {got}")]
    Length { what: &'static str, expected: usize, got: usize },
    #[error(transparent)]
    SpecFun(#[from] SpecFunError),
    #[error(transparent)]
    Frac(#[from] FracError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("history gives phi(0) = {phi0} but kappa = {kappa}")]
    History { phi0: f64, kappa: f64 },
    #[error("convolution quadrature did not settle at t = {t} (refinements differ by {diff:e})")]
    Quadrature { t: f64, diff: f64 },
    #[error("t = {t} is outside [0, {horizon}]")]
    Horizon { t: f64, horizon: f64 },
    #[error("{0}")]
    Unsupported(String),
}

type Result<T> = std::result::Result<T, SolutionError>;

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 2.0 {
        Ok(())
    } else {
        Err(SolutionError::Alpha(alpha))
    }
}

fn check_slope(alpha: f64, mu: Option<f64>) -> Result<f64> {
    match (alpha > 1.0, mu) {
        (true, Some(m)) => Ok(m),
        (true, None) => Err(SolutionError::MissingSlope),
        (false, Some(_)) => Err(SolutionError::UnexpectedSlope),
        (false, None) => Ok(0.0),
    }
}

/// D^α Φ = γΦ + μΦ(t−τ) with history φ on [−τ, 0].
#[derive(Clone)]
pub struct DelaySpec {
    pub gamma: f64,
    pub mu: f64,
    pub tau: f64,
    pub alpha: f64,
    pub history: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub kappa: f64,
    pub kappa_hat: Option<f64>,
}

impl fmt::Debug for DelaySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DelaySpec")
            .field("gamma", &self.gamma)
            .field("mu", &self.mu)
            .field("tau", &self.tau)
            .field("alpha", &self.alpha)
            .field("kappa", &self.kappa)
            .field("kappa_hat", &self.kappa_hat)
            .finish_non_exhaustive()
    }
}

impl DelaySpec {
    /// Constant history φ ≡ κ.
    pub fn constant_history(gamma: f64, mu: f64, tau: f64, alpha: f64, kappa: f64, kappa_hat: Option<f64>) -> Self {
        DelaySpec { gamma, mu, tau, alpha, history: Arc::new(move |_| kappa), kappa, kappa_hat }
    }
}

/// Delay profile as a finite sum over delay windows plus the history term.
#[derive(Clone, Debug)]
pub struct DelaySeries {
    pub spec: DelaySpec,
    pub horizon: f64,
    /// Set when the smallness heuristic for the series fails.
    pub warning: Option<String>,
}

impl DelaySeries {
    fn windows(&self, t: f64) -> usize {
        // terms with mτ ≤ t
        (t / self.spec.tau).floor() as usize
    }

    fn value(&self, t: f64) -> Result<f64> {
        if t < 0.0 || t > self.horizon * (1.0 + 1e-12) {
            return Err(SolutionError::Horizon { t, horizon: self.horizon });
        }
        let DelaySpec { gamma: g, mu, tau, alpha: a, kappa, kappa_hat, .. } = self.spec;
        let mut v = 0.0;
        for m in 0..=self.windows(t) {
            let s = t - m as f64 * tau;
            let mf = m as f64;
            let z = g * s.powf(a);
            let w = mu.powi(m as i32);
            v += kappa * w * s.powf(a * mf) * ml3(a, a * mf + 1.0, mf + 1.0, z)?;
            if let Some(kh) = kappa_hat {
                v += kh * w * s.powf(a * mf + 1.0) * ml3(a, a * mf + 2.0, mf + 1.0, z)?;
            }
        }
        if mu != 0.0 {
            v += self.history_term(t)?;
        }
        Ok(v)
    }

    /// ∫ over ξ ∈ (max(0, t−τ), t] of Σ_m μ^{m+1} (ξ−mτ)^{α(m+1)−1}
    /// E^{m+1}_{α,α(m+1)}(γ(ξ−mτ)^α) φ(t−τ−ξ).
    fn history_term(&self, t: f64) -> Result<f64> {
        let DelaySpec { gamma: g, mu, tau, alpha: a, .. } = self.spec;
        let phi = &self.spec.history;
        let mut total = 0.0;
        for m in 0..=self.windows(t) {
            let mf = m as f64;
            let start = mf * tau;
            let len = t - start;
            let lo = start.max(t - tau);
            if len <= 0.0 || lo >= t {
                continue;
            }
            // ξ = mτ + L v^{1/α} turns the integrand into v^m E(γ L^α v) φ(…)
            let v_lo = ((lo - start) / len).powf(a);
            let la = len.powf(a);
            let f = |v: f64| -> Result<f64> {
                let xi = start + len * v.powf(1.0 / a);
                Ok(v.powi(m as i32) * ml3(a, a * (mf + 1.0), mf + 1.0, g * la * v)? * phi(t - tau - xi))
            };
            let scale = mu.powi(m as i32 + 1) * len.powf(a * (mf + 1.0)) / a;
            total += scale * integrate(&f, v_lo, 1.0, t)?;
        }
        Ok(total)
    }

    fn slope_at_zero(&self) -> Result<f64> {
        match self.spec.kappa_hat {
            Some(k) => Ok(k),
            None => Err(SolutionError::Unsupported("first-order delay profiles have no initial slope".into())),
        }
    }
}

const GL_NODES: usize = 10;

/// Gauss–Legendre nodes and weights on [−1, 1].
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

fn panels(f: &dyn Fn(f64) -> Result<f64>, a: f64, b: f64, n: usize, rule: &[(f64, f64)]) -> Result<f64> {
    let w = (b - a) / n as f64;
    let mut s = 0.0;
    for p in 0..n {
        let lo = a + p as f64 * w;
        for &(x, wt) in rule {
            s += wt * f(lo + 0.5 * w * (x + 1.0))?;
        }
    }
    Ok(0.5 * w * s)
}

fn integrate(f: &dyn Fn(f64) -> Result<f64>, a: f64, b: f64, t: f64) -> Result<f64> {
    let rule = gauss_legendre(GL_NODES);
    let mut n = 2;
    let mut prev = panels(f, a, b, n, &rule)?;
    let mut diff = f64::INFINITY;
    while n <= 256 {
        n *= 2;
        let next = panels(f, a, b, n, &rule)?;
        diff = (next - prev).abs();
        if diff <= QUAD_TOL * 1e-3 * next.abs().max(1.0) {
            return Ok(next);
        }
        prev = next;
    }
    if diff <= QUAD_TOL {
        Ok(prev)
    } else {
        Err(SolutionError::Quadrature { t, diff })
    }
}

/// Closed-form Φ(t) of one basis coordinate.
#[derive(Clone, Debug)]
pub enum TimeProfile {
    /// νE_{α,1}(γt^α) + μtE_{α,2}(γt^α)
    MLLinear {
        alpha: f64,
        gamma: f64,
        nu: f64,
        mu: f64,
    },
    /// ν + μt + Σ c_j Γ(j+1)/Γ(α+j+1) t^{α+j}
    PowerChain {
        alpha: f64,
        nu: f64,
        mu: f64,
        source: Vec<f64>,
    },
    DelaySeries(DelaySeries),
}

impl TimeProfile {
    pub fn alpha(&self) -> f64 {
        match self {
            TimeProfile::MLLinear { alpha, .. } | TimeProfile::PowerChain { alpha, .. } => *alpha,
            TimeProfile::DelaySeries(d) => d.spec.alpha,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            TimeProfile::MLLinear { .. } => "ml_linear",
            TimeProfile::PowerChain { .. } => "power_chain",
            TimeProfile::DelaySeries(_) => "delay_series",
        }
    }

    pub fn value(&self, t: f64) -> Result<f64> {
        match self {
            TimeProfile::MLLinear { alpha, gamma: g, nu, mu } => {
                let z = g * t.powf(*alpha);
                let mut v = nu * ml2(*alpha, 1.0, z)?;
                if *alpha > 1.0 {
                    v += t * mu * ml2(*alpha, 2.0, z)?;
                }
                Ok(v)
            }
            TimeProfile::PowerChain { alpha, nu, mu, source } => {
                let mut v = nu + mu * t;
                for (j, c) in source.iter().enumerate() {
                    let j = j as f64;
                    v += c * gamma(j + 1.0)? / gamma(alpha + j + 1.0)? * t.powf(alpha + j);
                }
                Ok(v)
            }
            TimeProfile::DelaySeries(d) => d.value(t),
        }
    }

    /// dΦ/dt; at t = 0 only defined for orders above 1.
    pub fn derivative(&self, t: f64) -> Result<f64> {
        match self {
            TimeProfile::MLLinear { alpha, gamma: g, nu, mu } => {
                let z = g * t.powf(*alpha);
                let mut d =
                    if *nu == 0.0 || *g == 0.0 { 0.0 } else { nu * g * t.powf(alpha - 1.0) * ml2(*alpha, *alpha, z)? };
                if *alpha > 1.0 {
                    d += mu * ml2(*alpha, 1.0, z)?;
                }
                Ok(d)
            }
            TimeProfile::PowerChain { alpha, mu, source, .. } => {
                let mut d = *mu;
                for (j, c) in source.iter().enumerate() {
                    let j = j as f64;
                    d += c * gamma(j + 1.0)? / gamma(alpha + j)? * t.powf(alpha + j - 1.0);
                }
                Ok(d)
            }
            TimeProfile::DelaySeries(d) if t == 0.0 => d.slope_at_zero(),
            TimeProfile::DelaySeries(_) => {
                Err(SolutionError::Unsupported("derivative of a delay profile away from t = 0".into()))
            }
        }
    }
}

pub fn solve_linear_fode(gamma: f64, alpha: f64, nu: f64, mu: Option<f64>) -> Result<TimeProfile> {
    check_alpha(alpha)?;
    let mu = check_slope(alpha, mu)?;
    Ok(TimeProfile::MLLinear { alpha, gamma, nu, mu })
}

/// Exact Caputo antiderivative of the polynomial source Σ c_j t^j.
pub fn solve_power_chain(alpha: f64, source: &[f64], nu: f64, mu: Option<f64>) -> Result<TimeProfile> {
    check_alpha(alpha)?;
    let mu = check_slope(alpha, mu)?;
    Ok(TimeProfile::PowerChain { alpha, nu, mu, source: source.to_vec() })
}

/// |μ|τ^α E_{α,α+1}(|γ|τ^α), the smallness heuristic for the delay series.
pub fn delay_smallness(spec: &DelaySpec) -> Result<f64> {
    let ta = spec.tau.powf(spec.alpha);
    Ok(spec.mu.abs() * ta * ml2(spec.alpha, spec.alpha + 1.0, spec.gamma.abs() * ta)?)
}

pub fn solve_delay_linear_fode(spec: DelaySpec, horizon: f64) -> Result<TimeProfile> {
    check_alpha(spec.alpha)?;
    check_slope(spec.alpha, spec.kappa_hat)?;
    if !(spec.tau > 0.0) {
        return Err(SolutionError::Unsupported(format!("delay must be positive, got {}", spec.tau)));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(SolutionError::Unsupported(format!("horizon {horizon}")));
    }
    let phi0 = (spec.history)(0.0);
    if (phi0 - spec.kappa).abs() > 1e-12 * spec.kappa.abs().max(1.0) {
        return Err(SolutionError::History { phi0, kappa: spec.kappa });
    }
    let s = delay_smallness(&spec)?;
    let warning = (s >= 1.0).then(|| {
        format!("heuristic: |mu| tau^alpha E(|gamma| tau^alpha) = {s:.4} >= 1, series convergence not assured")
    });
    Ok(TimeProfile::DelaySeries(DelaySeries { spec, horizon, warning }))
}

/// Closed-form profiles for a reduced system, when it has one of two shapes:
/// every equation diagonal linear (D^αΦ_m = γ_mΦ_m), or a chain where the
/// remaining equations are polynomials in coordinates whose own equation
/// is zero.
pub fn solve_fode_system(
    system: &FODESystem,
    bindings: &Bindings,
    alpha: f64,
    nu: &[f64],
    mu: Option<&[f64]>,
) -> Result<Vec<TimeProfile>> {
    check_alpha(alpha)?;
    let n = system.dimension();
    if nu.len() != n {
        return Err(SolutionError::Length { what: "initial values", expected: n, got: nu.len() });
    }
    if let Some(m) = mu {
        if m.len() != n {
            return Err(SolutionError::Length { what: "initial slopes", expected: n, got: m.len() });
        }
    }
    let slope = |i: usize| mu.map(|m| m[i]);
    let mut linear: Vec<Option<f64>> = vec![None; n];
    for (i, eq) in system.equations.iter().enumerate() {
        let parts = eq.split_by(|v| v.is_kappa());
        if parts.is_empty() {
            linear[i] = Some(0.0);
            continue;
        }
        if parts.len() == 1 {
            let (mono, c) = parts.iter().next().unwrap();
            if mono.powers() == [(Var::Kappa(i as u32 + 1), 1)] {
                linear[i] = Some(c.eval(bindings)?);
            }
        }
    }
    let mut out = Vec::with_capacity(n);
    for (i, eq) in system.equations.iter().enumerate() {
        if let Some(g) = linear[i] {
            out.push(solve_linear_fode(g, alpha, nu[i], slope(i))?);
            continue;
        }
        // chain: a polynomial in coordinates that stay affine in t
        let mut source = vec![0.0];
        for (mono, c) in eq.split_by(|v| v.is_kappa()) {
            let mut poly = vec![c.eval(bindings)?];
            for (v, e) in mono.powers() {
                let j = match v {
                    Var::Kappa(j) => *j as usize - 1,
                    _ => unreachable!(),
                };
                if j >= n || linear[j] != Some(0.0) {
                    return Err(SolutionError::Unsupported(format!(
                        "equation {} has no closed form here: {eq}",
                        i + 1
                    )));
                }
                let affine = [nu[j], slope(j).unwrap_or(0.0)];
                for _ in 0..*e {
                    poly = poly_mul(&poly, &affine);
                }
            }
            if poly.len() > source.len() {
                source.resize(poly.len(), 0.0);
            }
            for (k, v) in poly.iter().enumerate() {
                source[k] += v;
            }
        }
        while source.len() > 1 && *source.last().unwrap() == 0.0 {
            source.pop();
        }
        out.push(solve_power_chain(alpha, &source, nu[i], slope(i))?);
    }
    Ok(out)
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// u(x, t) = Σ Φ_m(t) ξ_m(x).
#[derive(Clone, Debug)]
pub struct SpaceTimeSolution {
    pub basis: SubspaceBasis,
    pub profiles: Vec<TimeProfile>,
    pub alpha: f64,
    /// Values for any symbols left in the basis members.
    pub bindings: Bindings,
}

pub fn assemble_solution(basis: SubspaceBasis, profiles: Vec<TimeProfile>, alpha: f64) -> Result<SpaceTimeSolution> {
    check_alpha(alpha)?;
    if profiles.len() != basis.dimension() {
        return Err(SolutionError::Length { what: "profiles", expected: basis.dimension(), got: profiles.len() });
    }
    if let Some(p) = profiles.iter().find(|p| p.alpha() != alpha) {
        return Err(SolutionError::Unsupported(format!("profile order {} differs from {alpha}", p.alpha())));
    }
    let bindings = basis.bindings.clone();
    Ok(SpaceTimeSolution { basis, profiles, alpha, bindings })
}

impl SpaceTimeSolution {
    pub fn eval(&self, x1: f64, x2: f64, t: f64) -> Result<f64> {
        let mut u = 0.0;
        for (p, xi) in self.profiles.iter().zip(self.basis.members()) {
            u += p.value(t)? * xi.eval(x1, x2, &self.bindings)?;
        }
        Ok(u)
    }

    /// Spatial part of each term, rendered.
    pub fn spatial_parts(&self) -> Vec<String> {
        self.basis.members().iter().map(|m| m.to_string()).collect()
    }

    fn member_values(&self, points: &[(f64, f64)]) -> Result<Vec<Vec<f64>>> {
        self.basis
            .members()
            .iter()
            .map(|xi| points.iter().map(|&(a, b)| Ok(xi.eval(a, b, &self.bindings)?)).collect())
            .collect()
    }
}

/// Residual of D^α_t u − K[u] on a space × time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualReport {
    pub n_points: usize,
    pub h: f64,
    pub n_steps: usize,
    pub t_min: f64,
    pub max_residual: f64,
    /// (x1, x2, t) where the maximum is attained.
    pub argmax: (f64, f64, f64),
    /// `residual_field[k][p]` at the k-th time node ≥ t_min and point p.
    pub residual_field: Vec<Vec<f64>>,
    pub convergence_slope: Option<f64>,
}

/// Evaluates D^α_t u − K[u] on the grid. The Caputo derivative is taken
/// profile by profile; K[u] is formed symbolically once and evaluated with
/// κ_m = Φ_m(t).
pub fn verify_solution(
    op: &CRDOperator,
    sol: &SpaceTimeSolution,
    points: &[(f64, f64)],
    grid: UniformGrid,
    t_min: f64,
) -> Result<ResidualReport> {
    if grid.n_steps < MIN_STEPS {
        return Err(SolutionError::Frac(FracError::Grid(format!(
            "{} steps, at least {MIN_STEPS} needed",
            grid.n_steps
        ))));
    }
    if points.is_empty() {
        return Err(SolutionError::Unsupported("no space points".into()));
    }
    if sol.profiles.iter().any(|p| matches!(p, TimeProfile::DelaySeries(_))) {
        return Err(SolutionError::Unsupported(
            "delay solutions are checked against the delay oracle, not the operator".into(),
        ));
    }
    let alpha = sol.alpha;
    let times = grid.times();
    // D^α Φ_m on the grid
    let mut caputo = Vec::with_capacity(sol.profiles.len());
    let mut values = Vec::with_capacity(sol.profiles.len());
    for p in &sol.profiles {
        let v: Vec<f64> = times.iter().map(|&t| p.value(t)).collect::<Result<_>>()?;
        let d = if alpha > 1.0 {
            let dv: Vec<f64> = times.iter().map(|&t| p.derivative(t)).collect::<Result<_>>()?;
            Some(Trajectory::scalar(grid, dv)?)
        } else {
            None
        };
        let tr = Trajectory::scalar(grid, v.clone())?;
        caputo.push(caputo_uniform(&tr, alpha, d.as_ref())?.component(0));
        values.push(v);
    }
    let k = apply_operator(op, &sol.basis.generic_element())?;
    let terms: Vec<_> = k.terms().collect();
    let term_at: Vec<Vec<f64>> = terms
        .iter()
        .map(|(t, _)| points.iter().map(|&(a, b)| Ok(t.eval(a, b, &sol.bindings)?)).collect())
        .collect::<Result<_>>()?;
    let xi = sol.member_values(points)?;

    let mut field = Vec::new();
    let mut max = 0.0f64;
    let mut argmax = (points[0].0, points[0].1, 0.0);
    let mut b = sol.bindings.clone();
    for (idx, &t) in times.iter().enumerate() {
        if t < t_min - 1e-12 {
            continue;
        }
        let phi: Vec<f64> = values.iter().map(|v| v[idx]).collect();
        b.set_kappas(&phi);
        let coeffs: Vec<f64> = terms.iter().map(|(_, c)| c.eval(&b)).collect::<std::result::Result<_, _>>()?;
        let mut row = Vec::with_capacity(points.len());
        for (p, &(x1, x2)) in points.iter().enumerate() {
            let lhs: f64 = caputo.iter().zip(&xi).map(|(d, x)| d[idx] * x[p]).sum();
            let rhs: f64 = coeffs.iter().zip(&term_at).map(|(c, tv)| c * tv[p]).sum();
            let r = (lhs - rhs).abs();
            if r > max || r.is_nan() {
                max = r;
                argmax = (x1, x2, t);
            }
            row.push(r);
        }
        field.push(row);
    }
    Ok(ResidualReport {
        n_points: points.len(),
        h: grid.h,
        n_steps: grid.n_steps,
        t_min,
        max_residual: max,
        argmax,
        residual_field: field,
        convergence_slope: None,
    })
}

/// [`verify_solution`] at `grid` and `grid.halved()`; the report is the
/// coarse one with the observed order log2(r_h / r_{h/2}).
pub fn verify_with_refinement(
    op: &CRDOperator,
    sol: &SpaceTimeSolution,
    points: &[(f64, f64)],
    grid: UniformGrid,
    t_min: f64,
) -> Result<(ResidualReport, ResidualReport)> {
    let mut coarse = verify_solution(op, sol, points, grid, t_min)?;
    let fine = verify_solution(op, sol, points, grid.halved(), t_min)?;
    coarse.convergence_slope = Some((coarse.max_residual / fine.max_residual).log2());
    Ok((coarse, fine))
}

/// Outcome of comparing u(x, 0) (and ∂u/∂t at 0) with the prescribed data.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialCheck {
    pub exact: bool,
    /// (which condition, basis coordinate, prescribed, from the profile)
    pub mismatches: Vec<(&'static str, usize, f64, f64)>,
    pub max_spot_error: f64,
}

impl InitialCheck {
    pub fn passed(&self) -> bool {
        self.exact && self.max_spot_error <= 1e-10
    }
}

/// Projects the prescribed data onto the basis and compares coordinates
/// with Φ_m(0) (and Φ_m′(0)) for exact equality, then spot-checks values.
pub fn check_initial_conditions(
    sol: &SpaceTimeSolution,
    phi1: &SymExpr,
    phi2: Option<&SymExpr>,
    points: &[(f64, f64)],
) -> Result<InitialCheck> {
    if (sol.alpha > 1.0) != phi2.is_some() {
        return Err(if sol.alpha > 1.0 { SolutionError::MissingSlope } else { SolutionError::UnexpectedSlope });
    }
    let mut mismatches = Vec::new();
    let mut spot = 0.0f64;
    let mut exact = true;
    let xi = sol.member_values(points)?;
    let mut conds: Vec<(&'static str, &SymExpr, Vec<f64>)> = Vec::new();
    let v0 = sol.profiles.iter().map(|p| p.value(0.0)).collect::<Result<Vec<_>>>()?;
    conds.push(("u(x,0)", phi1, v0));
    if let Some(p2) = phi2 {
        let d0 = sol.profiles.iter().map(|p| p.derivative(0.0)).collect::<Result<Vec<_>>>()?;
        conds.push(("du/dt(x,0)", p2, d0));
    }
    for (name, data, got) in conds {
        let (coords, residual) = sol.basis.solver().project(data);
        if !residual.is_zero() {
            exact = false;
            mismatches.push((name, usize::MAX, f64::NAN, f64::NAN));
        }
        for (m, c) in coords.iter().enumerate() {
            let want = match c.as_constant() {
                Some(q) => q_to_f64(&q),
                None => c.eval(&sol.bindings)?,
            };
            if want != got[m] {
                exact = false;
                mismatches.push((name, m, want, got[m]));
            }
        }
        for (p, &(x1, x2)) in points.iter().enumerate() {
            let lhs: f64 = got.iter().zip(&xi).map(|(g, x)| g * x[p]).sum();
            let rhs = data.eval(x1, x2, &sol.bindings)?;
            spot = spot.max((lhs - rhs).abs() / rhs.abs().max(1.0));
        }
    }
    Ok(InitialCheck { exact, mismatches, max_spot_error: spot })
}
