//! Reference numerics for Caputo derivatives and fractional ODEs on
//! uniform grids. Everything here is full-memory and O(N²).

use thiserror::Error;

use crate::funcalg::Bindings;
use crate::invariance::FODESystem;
use crate::specfun::gamma;

/// Trajectories beyond this magnitude abort the integrator.
pub const BLOW_UP: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FracError {
    #[error("order {0} outside (0, 2]")]
    Alpha(f64),
    #[error("orders above 1 need the first derivative samples")]
    MissingDerivative,
    #[error("orders above 1 need the initial slope")]
    MissingSlope,
    #[error("bad grid: {0}")]
    Grid(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("delay {tau} is not a whole number of steps of {h}")]
    DelayAlignment { tau: f64, h: f64 },
    #[error("solution blew up at t = {t} (step {step}, |value| = {value:e})")]
    BlowUp { t: f64, step: usize, value: f64 },
    #[error("right-hand side failed: {0}")]
    Rhs(String),
}

fn check_alpha(alpha: f64) -> Result<(), FracError> {
    if alpha > 0.0 && alpha <= 2.0 {
        Ok(())
    } else {
        Err(FracError::Alpha(alpha))
    }
}

/// t_k = k·h for k = 0..=n_steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformGrid {
    pub h: f64,
    pub n_steps: usize,
}

impl UniformGrid {
    pub fn new(h: f64, n_steps: usize) -> Result<Self, FracError> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(FracError::Grid(format!("step {h}")));
        }
        if n_steps == 0 {
            return Err(FracError::Grid("no steps".into()));
        }
        Ok(UniformGrid { h, n_steps })
    }

    /// Grid on [0, t_final]; t_final must be a whole number of steps.
    pub fn covering(t_final: f64, h: f64) -> Result<Self, FracError> {
        let n =
            whole_steps(t_final, h).ok_or_else(|| FracError::Grid(format!("{t_final} is not a multiple of {h}")))?;
        Self::new(h, n)
    }

    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.h
    }

    pub fn final_time(&self) -> f64 {
        self.t(self.n_steps)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.t(k)).collect()
    }

    pub fn halved(&self) -> Self {
        UniformGrid { h: self.h / 2.0, n_steps: self.n_steps * 2 }
    }

    /// τ/h as a positive integer.
    pub fn steps_for(&self, tau: f64) -> Result<usize, FracError> {
        match whole_steps(tau, self.h) {
            Some(d) if d > 0 => Ok(d),
            _ => Err(FracError::DelayAlignment { tau, h: self.h }),
        }
    }
}

fn whole_steps(len: f64, h: f64) -> Option<usize> {
    let r = len / h;
    let n = r.round();
    ((r - n).abs() <= 1e-9 * n.max(1.0) && n >= 0.0).then_some(n as usize)
}

/// Samples on a grid; `values[k]` is the state at t_k.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: UniformGrid,
    pub values: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(grid: UniformGrid, values: Vec<Vec<f64>>) -> Result<Self, FracError> {
        if values.len() != grid.n_steps + 1 {
            return Err(FracError::Shape(format!("{} samples for {} steps", values.len(), grid.n_steps)));
        }
        let d = values[0].len();
        if values.iter().any(|v| v.len() != d) {
            return Err(FracError::Shape("ragged samples".into()));
        }
        Ok(Trajectory { grid, values })
    }

    pub fn scalar(grid: UniformGrid, values: Vec<f64>) -> Result<Self, FracError> {
        Self::new(grid, values.into_iter().map(|v| vec![v]).collect())
    }

    pub fn sample(grid: UniformGrid, f: impl Fn(f64) -> f64) -> Self {
        Trajectory { grid, values: grid.times().into_iter().map(|t| vec![f(t)]).collect() }
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn component(&self, i: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[i]).collect()
    }

    pub fn last(&self) -> &[f64] {
        self.values.last().unwrap()
    }
}

/// L1 weights b_j = (j+1)^{1−β} − j^{1−β}, j = 0..n.
pub fn l1_weights(beta: f64, n: usize) -> Vec<f64> {
    let p = 1.0 - beta;
    let mut prev = 0.0f64;
    (0..n)
        .map(|j| {
            let next = ((j + 1) as f64).powf(p);
            let w = next - prev;
            prev = next;
            w
        })
        .collect()
}

fn l1(f: &[f64], beta: f64, h: f64) -> Vec<f64> {
    let n = f.len() - 1;
    let w = l1_weights(beta, n);
    let diffs: Vec<f64> = (0..n).map(|i| f[i + 1] - f[i]).collect();
    let scale = h.powf(-beta) / gamma(2.0 - beta).unwrap();
    let mut out = vec![0.0; n + 1];
    for k in 1..=n {
        // Σ_j w_j (f_{k−j} − f_{k−j−1})
        let s: f64 = (0..k).map(|j| w[j] * diffs[k - j - 1]).sum();
        out[k] = scale * s;
    }
    out
}

/// Fourth-order first derivative, one-sided near the ends.
fn derivative(f: &[f64], h: f64) -> Result<Vec<f64>, FracError> {
    let n = f.len();
    if n < 5 {
        return Err(FracError::Grid("finite differences need at least 4 steps".into()));
    }
    let d = |k: usize| -> f64 {
        if k >= 2 && k + 2 < n {
            (f[k - 2] - 8.0 * f[k - 1] + 8.0 * f[k + 1] - f[k + 2]) / (12.0 * h)
        } else if k < 2 {
            let g = &f[0..5];
            if k == 0 {
                (-25.0 * g[0] + 48.0 * g[1] - 36.0 * g[2] + 16.0 * g[3] - 3.0 * g[4]) / (12.0 * h)
            } else {
                (-3.0 * g[0] - 10.0 * g[1] + 18.0 * g[2] - 6.0 * g[3] + g[4]) / (12.0 * h)
            }
        } else {
            let g = &f[n - 5..];
            if k == n - 1 {
                (25.0 * g[4] - 48.0 * g[3] + 36.0 * g[2] - 16.0 * g[1] + 3.0 * g[0]) / (12.0 * h)
            } else {
                (3.0 * g[4] + 10.0 * g[3] - 18.0 * g[2] + 6.0 * g[1] - g[0]) / (12.0 * h)
            }
        }
    };
    Ok((0..n).map(d).collect())
}

/// Caputo derivative of each component on the sample grid.
///
/// Orders in (0, 1) use the L1 scheme. Orders in (1, 2) apply the L1 scheme
/// of order α−1 to `deriv`, the exact first derivative on the same grid.
/// α = 1 and α = 2 use fourth-order differences. The pointwise error away
/// from t = 0 is O(h^{2−β}) for smooth samples, β the fractional part.
pub fn caputo_uniform(samples: &Trajectory, alpha: f64, deriv: Option<&Trajectory>) -> Result<Trajectory, FracError> {
    check_alpha(alpha)?;
    let h = samples.grid.h;
    let base = if alpha > 1.0 {
        let d = deriv.ok_or(FracError::MissingDerivative)?;
        if d.grid != samples.grid || d.dim() != samples.dim() {
            return Err(FracError::Shape("derivative samples on a different grid".into()));
        }
        d
    } else {
        samples
    };
    let beta = if alpha > 1.0 { alpha - 1.0 } else { alpha };
    let mut cols = Vec::with_capacity(base.dim());
    for i in 0..base.dim() {
        let f = base.component(i);
        cols.push(if beta == 1.0 { derivative(&f, h)? } else { l1(&f, beta, h) });
    }
    let values = (0..=samples.grid.n_steps).map(|k| cols.iter().map(|c| c[k]).collect()).collect();
    Ok(Trajectory { grid: samples.grid, values })
}

/// Nominal pointwise error of [`caputo_uniform`] away from t = 0 for
/// profiles behaving like t^β near the origin: h^q/Γ(2−β) with
/// q = min(2−β, 1+β), β the fractional order actually applied. Integer
/// orders use h^4 plus the rounding floor 1e-15/h of difference quotients.
pub fn caputo_error_bound(alpha: f64, h: f64) -> f64 {
    let beta = if alpha > 1.0 { alpha - 1.0 } else { alpha };
    if beta == 1.0 {
        return h.powi(4) + 1e-15 / h;
    }
    let q = (2.0 - beta).min(1.0 + beta);
    h.powf(q) / gamma(2.0 - beta).unwrap()
}

/// Predictor–corrector weights for one order, cached as powers of k.
struct Pece {
    alpha: f64,
    pow_a: Vec<f64>,
    pow_a1: Vec<f64>,
    cp: f64,
    cc: f64,
}

impl Pece {
    fn new(alpha: f64, h: f64, n: usize) -> Self {
        let pow_a = (0..=n + 1).map(|k| (k as f64).powf(alpha)).collect();
        let pow_a1 = (0..=n + 2).map(|k| (k as f64).powf(alpha + 1.0)).collect();
        Pece {
            alpha,
            pow_a,
            pow_a1,
            cp: h.powf(alpha) / gamma(alpha + 1.0).unwrap(),
            cc: h.powf(alpha) / gamma(alpha + 2.0).unwrap(),
        }
    }

    /// b_{j,n+1} = (n+1−j)^α − (n−j)^α
    fn b(&self, n: usize, j: usize) -> f64 {
        self.pow_a[n + 1 - j] - self.pow_a[n - j]
    }

    /// a_{j,n+1} for j ≤ n.
    fn a(&self, n: usize, j: usize) -> f64 {
        if j == 0 {
            let nf = n as f64;
            self.pow_a1[n] - (nf - self.alpha) * self.pow_a[n + 1]
        } else {
            self.pow_a1[n - j + 2] + self.pow_a1[n - j] - 2.0 * self.pow_a1[n - j + 1]
        }
    }
}

/// Shared Adams predictor–corrector core. `rhs(k, t, y, past)` sees the
/// states at t_0..t_{k−1}.
fn pece_core(
    alpha: f64,
    init: &[f64],
    slope: Option<&[f64]>,
    grid: UniformGrid,
    mut rhs: impl FnMut(usize, f64, &[f64], &[Vec<f64>]) -> Result<Vec<f64>, FracError>,
) -> Result<Trajectory, FracError> {
    check_alpha(alpha)?;
    let dim = init.len();
    if alpha > 1.0 {
        match slope {
            Some(s) if s.len() == dim => {}
            Some(_) => return Err(FracError::Shape("initial slope dimension".into())),
            None => return Err(FracError::MissingSlope),
        }
    }
    let n_steps = grid.n_steps;
    let w = Pece::new(alpha, grid.h, n_steps);
    let taylor = |t: f64| -> Vec<f64> {
        match (alpha > 1.0, slope) {
            (true, Some(s)) => init.iter().zip(s).map(|(y, d)| y + t * d).collect(),
            _ => init.to_vec(),
        }
    };
    let mut ys: Vec<Vec<f64>> = vec![init.to_vec()];
    let mut fs: Vec<Vec<f64>> = vec![rhs(0, 0.0, init, &[])?];
    check_len(&fs[0], dim)?;
    for n in 0..n_steps {
        let t1 = grid.t(n + 1);
        let base = taylor(t1);
        let mut pred = base.clone();
        let mut corr = base;
        for i in 0..dim {
            let mut sp = 0.0;
            let mut sc = 0.0;
            for (j, f) in fs.iter().enumerate() {
                sp += w.b(n, j) * f[i];
                sc += w.a(n, j) * f[i];
            }
            pred[i] += w.cp * sp;
            corr[i] += w.cc * sc;
        }
        let fp = rhs(n + 1, t1, &pred, &ys)?;
        check_len(&fp, dim)?;
        for i in 0..dim {
            corr[i] += w.cc * fp[i];
        }
        if let Some(v) = corr.iter().find(|v| !(v.abs() <= BLOW_UP)) {
            return Err(FracError::BlowUp { t: t1, step: n + 1, value: v.abs() });
        }
        let fc = rhs(n + 1, t1, &corr, &ys)?;
        check_len(&fc, dim)?;
        ys.push(corr);
        fs.push(fc);
    }
    Trajectory::new(grid, ys)
}

fn check_len(v: &[f64], dim: usize) -> Result<(), FracError> {
    if v.len() == dim {
        Ok(())
    } else {
        Err(FracError::Shape(format!("right-hand side returned {} values for {dim}", v.len())))
    }
}

/// Solves D^α Φ = rhs(t, Φ) with Φ(0) = init (and Φ′(0) = slope for α > 1)
/// by the fractional Adams–Bashforth–Moulton scheme.
pub fn fode_oracle(
    mut rhs: impl FnMut(f64, &[f64]) -> Vec<f64>,
    alpha: f64,
    init: &[f64],
    slope: Option<&[f64]>,
    grid: UniformGrid,
) -> Result<Trajectory, FracError> {
    pece_core(alpha, init, slope, grid, |_, t, y, _| Ok(rhs(t, y)))
}

/// [`fode_oracle`] for a reduced system with its parameters bound.
pub fn fode_system_oracle(
    system: &FODESystem,
    bindings: &Bindings,
    alpha: f64,
    init: &[f64],
    slope: Option<&[f64]>,
    grid: UniformGrid,
) -> Result<Trajectory, FracError> {
    if init.len() != system.dimension() {
        return Err(FracError::Shape(format!("{} initial values for {} equations", init.len(), system.dimension())));
    }
    pece_core(alpha, init, slope, grid, |_, _, y, _| {
        system.eval_rhs(y, bindings).map_err(|e| FracError::Rhs(e.to_string()))
    })
}

/// Scalar delay problem D^α Φ(t) = γΦ(t) + μΦ(t−τ), Φ = φ on [−τ, 0].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayProblem {
    pub gamma: f64,
    pub mu: f64,
    pub tau: f64,
    pub alpha: f64,
}

/// Method of steps on top of the PECE scheme. The delayed value is read
/// from φ while t ≤ τ and from earlier grid samples afterwards, so τ must
/// be a whole number of steps.
pub fn delay_fode_oracle(
    problem: DelayProblem,
    history: &dyn Fn(f64) -> f64,
    init: f64,
    slope: Option<f64>,
    grid: UniformGrid,
) -> Result<Trajectory, FracError> {
    let d = grid.steps_for(problem.tau)?;
    let DelayProblem { gamma: g, mu, .. } = problem;
    let slope = slope.map(|s| vec![s]);
    pece_core(problem.alpha, &[init], slope.as_deref(), grid, |k, t, y, past| {
        let delayed = if k <= d { history(t - problem.tau) } else { past[k - d][0] };
        Ok(vec![g * y[0] + mu * delayed])
    })
}
