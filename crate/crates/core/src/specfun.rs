//! Real-argument Gamma and Mittag-Leffler functions.
//!
//! The Mittag-Leffler functions are summed from their power series only.
//! Arguments where the series is unreliable are rejected instead of
//! approximated.

use std::f64::consts::PI;

use thiserror::Error;

/// Largest |z| accepted by the series.
pub const ML_Z_MAX: f64 = 50.0;
/// Below this α the series is only used for |z| ≤ 1.
pub const ML_ALPHA_MIN: f64 = 0.3;
/// Give up when Σ|term| exceeds the result magnitude (floored at 1) by this.
/// The relative error grows like 1e-16 times that ratio.
pub const ML_CANCELLATION_LIMIT: f64 = 1e6;
const ML_MAX_TERMS: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecFunError {
    #[error("Gamma has a pole at {0}")]
    Pole(f64),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("argument outside the series domain ({0}); the asymptotic regime is not supported")]
    Domain(String),
}

/// Gamma value with an overflow flag; overflowed values are ±∞.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaValue {
    pub value: f64,
    pub overflow: bool,
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Lanczos approximation, intended for x in [1, 2).
fn lanczos(x: f64) -> f64 {
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (k, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + k as f64);
    }
    (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
}

/// sin(πx) without the rounding error of forming πx for large x.
fn sin_pi(x: f64) -> f64 {
    let n = x.round();
    let r = x - n;
    let s = (PI * r).sin();
    if (n as i64) % 2 == 0 {
        s
    } else {
        -s
    }
}

fn gamma_positive(x: f64) -> GammaValue {
    if x > 171.7 {
        return GammaValue { value: f64::INFINITY, overflow: true };
    }
    if x.fract() == 0.0 {
        let mut v = 1.0;
        for k in 2..(x as u64) {
            v *= k as f64;
        }
        return GammaValue { value: v, overflow: false };
    }
    if x < 1.0 {
        // Γ(x) = Γ(x+1)/x
        return GammaValue { value: lanczos(x + 1.0) / x, overflow: false };
    }
    let n = x.floor() as u64 - 1;
    let f = x - n as f64;
    let mut v = lanczos(f);
    for k in 0..n {
        v *= f + k as f64;
    }
    GammaValue { value: v, overflow: !v.is_finite() }
}

/// Γ(x) with the overflow flag.
pub fn gamma_ext(x: f64) -> Result<GammaValue, SpecFunError> {
    if x.is_nan() {
        return Err(SpecFunError::Parameter("NaN argument".into()));
    }
    if x <= 0.0 && x.fract() == 0.0 {
        return Err(SpecFunError::Pole(x));
    }
    if x >= 0.5 {
        return Ok(gamma_positive(x));
    }
    let g = gamma_positive(1.0 - x);
    let s = sin_pi(x);
    if g.overflow {
        return Ok(GammaValue { value: 0.0 * s.signum(), overflow: false });
    }
    let v = PI / (s * g.value);
    Ok(GammaValue { value: v, overflow: !v.is_finite() })
}

/// Γ(x); overflow gives ±∞.
pub fn gamma(x: f64) -> Result<f64, SpecFunError> {
    gamma_ext(x).map(|g| g.value)
}

/// 1/Γ(x), zero at the poles.
pub fn rgamma(x: f64) -> f64 {
    match gamma_ext(x) {
        Ok(g) if g.overflow => 0.0,
        Ok(g) => 1.0 / g.value,
        Err(_) => 0.0,
    }
}

/// ln Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 15.0 {
        return gamma_positive(x).value.ln();
    }
    let x2 = x * x;
    let series =
        1.0 / (12.0 * x) - 1.0 / (360.0 * x * x2) + 1.0 / (1260.0 * x * x2 * x2) - 1.0 / (1680.0 * x * x2 * x2 * x2);
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * PI).ln() + series
}

/// Parameters of E^ρ_{α,β}; ρ = 1 is the two-parameter function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MLParams {
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
}

impl MLParams {
    pub fn new(alpha: f64, beta: f64, rho: f64) -> Self {
        MLParams { alpha, beta, rho }
    }

    /// Errors for impossible parameters; `Ok(true)` flags α outside (0, 2].
    pub fn validate(&self) -> Result<bool, SpecFunError> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(SpecFunError::Parameter(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(SpecFunError::Parameter(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(SpecFunError::Parameter(format!("rho must be positive, got {}", self.rho)));
        }
        Ok(self.alpha > 2.0)
    }
}

/// Neumaier-compensated accumulator.
#[derive(Default)]
struct Sum {
    s: f64,
    c: f64,
    abs: f64,
}

impl Sum {
    fn add(&mut self, x: f64) {
        let t = self.s + x;
        if self.s.abs() >= x.abs() {
            self.c += (self.s - t) + x;
        } else {
            self.c += (x - t) + self.s;
        }
        self.s = t;
        self.abs += x.abs();
    }

    fn value(&self) -> f64 {
        self.s + self.c
    }
}

/// Series value with its cancellation ratio Σ|term| / |sum|.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MLEval {
    pub value: f64,
    pub condition: f64,
    pub terms: usize,
}

/// [`ml3`] with diagnostics.
pub fn ml_eval(p: MLParams, z: f64) -> Result<MLEval, SpecFunError> {
    ml_series(p, z)
}

fn ml_series(p: MLParams, z: f64) -> Result<MLEval, SpecFunError> {
    p.validate()?;
    if !z.is_finite() {
        return Err(SpecFunError::Domain(format!("z = {z}")));
    }
    if z.abs() > ML_Z_MAX {
        return Err(SpecFunError::Domain(format!("|z| = {} > {ML_Z_MAX}", z.abs())));
    }
    if p.alpha < ML_ALPHA_MIN && z.abs() > 1.0 {
        return Err(SpecFunError::Domain(format!("alpha = {} < {ML_ALPHA_MIN} needs |z| <= 1", p.alpha)));
    }
    let mut sum = Sum::default();
    // c_m = (ρ)_m z^m / m!, held as c · RESCALE^scale so large |z| does not overflow
    const RESCALE: f64 = 1e200;
    let mut c = 1.0f64;
    let mut scale = 0i32;
    let mut small = 0;
    for m in 0..ML_MAX_TERMS {
        let arg = p.alpha * m as f64 + p.beta;
        let term = if arg < 170.0 && scale == 0 {
            c * rgamma(arg)
        } else if c == 0.0 {
            0.0
        } else {
            let ln = c.abs().ln() + scale as f64 * RESCALE.ln() - ln_gamma(arg);
            c.signum() * ln.exp()
        };
        if !term.is_finite() {
            return Err(SpecFunError::Domain(format!("series overflow at z = {z}")));
        }
        sum.add(term);
        let partial = sum.value();
        if term.abs() < 1e-16 * partial.abs() || term == 0.0 && m > 0 {
            small += 1;
            if small == 3 {
                let v = sum.value();
                if !v.is_finite() {
                    return Err(SpecFunError::Domain(format!("overflow at z = {z}")));
                }
                if sum.abs > ML_CANCELLATION_LIMIT * v.abs().max(1.0) {
                    return Err(SpecFunError::Domain(format!(
                        "cancellation: sum of |terms| {:.3e} against value {:.3e} at z = {z}",
                        sum.abs, v
                    )));
                }
                let condition = sum.abs / v.abs().max(f64::MIN_POSITIVE);
                return Ok(MLEval { value: v, condition, terms: m + 1 });
            }
        } else {
            small = 0;
        }
        c *= (p.rho + m as f64) * z / (m as f64 + 1.0);
        if c.abs() > RESCALE {
            c /= RESCALE;
            scale += 1;
        }
    }
    Err(SpecFunError::Domain(format!("no convergence within {ML_MAX_TERMS} terms at z = {z}")))
}

/// E_{α,β}(z) = Σ z^m / Γ(αm+β).
pub fn ml2(alpha: f64, beta: f64, z: f64) -> Result<f64, SpecFunError> {
    ml_series(MLParams::new(alpha, beta, 1.0), z).map(|e| e.value)
}

/// E^ρ_{α,β}(z) = Σ (ρ)_m z^m / (m! Γ(αm+β)).
pub fn ml3(alpha: f64, beta: f64, rho: f64, z: f64) -> Result<f64, SpecFunError> {
    ml_series(MLParams::new(alpha, beta, rho), z).map(|e| e.value)
}
