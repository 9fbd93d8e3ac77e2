//! Special functions shared by the estimators: log-gamma, the Beta weight
//! function and the Student-t distribution (plain and unit-variance).
//!
//! The t CDF goes through the regularized incomplete beta function, evaluated
//! with a modified Lentz continued fraction. The inverse CDF is a bracketed
//! bisection followed by a safeguarded Newton polish.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural logarithm of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1-x) = π / sin(πx)
        let s = (std::f64::consts::PI * x).sin();
        return (std::f64::consts::PI / s).abs().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Shape parameters of the Beta weight function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaWeightParams {
    pub a: f64,
    pub b: f64,
}

impl BetaWeightParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0) {
            return domain(format!("beta weight shapes must be positive, got a={a}, b={b}"));
        }
        Ok(Self { a, b })
    }
}

/// `x^(a-1) (1-x)^(b-1) Γ(a+b) / (Γ(a)Γ(b))`, not normalized over any grid.
///
/// Endpoints use `0^0 = 1`, so `w(0; 1, b) = b` and `w(1; a, 1) = a`.
pub fn beta_weight(x: f64, p: BetaWeightParams) -> Result<f64> {
    let BetaWeightParams { a, b } = p;
    if !(a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0) {
        return domain(format!("beta weight shapes must be positive, got a={a}, b={b}"));
    }
    if !(0.0..=1.0).contains(&x) {
        return domain(format!("beta weight abscissa must lie in [0,1], got {x}"));
    }
    let log_norm = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
    let left = power_term(x, a - 1.0);
    let right = power_term(1.0 - x, b - 1.0);
    let value = left * right * log_norm.exp();
    if !value.is_finite() {
        return domain(format!("beta weight is unbounded at x={x} for a={a}, b={b}"));
    }
    Ok(value)
}

fn power_term(base: f64, exponent: f64) -> f64 {
    if base == 0.0 {
        if exponent == 0.0 {
            1.0
        } else if exponent > 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        base.powf(exponent)
    }
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn inc_beta_reg(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(x, a, b) / a
    } else {
        1.0 - front * beta_cf(1.0 - x, b, a) / b
    }
}

fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    const MAX_ITER: usize = 1000;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Degrees of freedom of a Student-t law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudentTParams {
    pub nu: f64,
}

impl StudentTParams {
    /// Requires `nu > 2` so the unit-variance rescaling exists.
    pub fn new(nu: f64) -> Result<Self> {
        if !(nu.is_finite() && nu > 2.0) {
            return domain(format!("degrees of freedom must exceed 2, got {nu}"));
        }
        Ok(Self { nu })
    }

    /// `sqrt((nu - 2) / nu)`: maps a plain t draw to unit variance.
    pub fn unit_variance_scale(&self) -> f64 {
        ((self.nu - 2.0) / self.nu).sqrt()
    }
}

pub fn student_t_pdf(x: f64, p: StudentTParams) -> f64 {
    let nu = p.nu;
    let log_c = ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI).ln();
    (log_c - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()).exp()
}

pub fn student_t_cdf(x: f64, p: StudentTParams) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    let nu = p.nu;
    let tail = 0.5 * inc_beta_reg(nu / (nu + x * x), 0.5 * nu, 0.5);
    if x < 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

pub fn student_t_inv_cdf(prob: f64, p: StudentTParams) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return domain(format!("probability must lie in (0,1), got {prob}"));
    }
    if prob == 0.5 {
        return Ok(0.0);
    }
    let f = |x: f64| student_t_cdf(x, p) - prob;

    let (mut lo, mut hi) = (-1.0_f64, 1.0_f64);
    while f(lo) > 0.0 {
        hi = lo;
        lo *= 2.0;
        if lo < -1e300 {
            return domain(format!("could not bracket t quantile for p={prob}"));
        }
    }
    while f(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return domain(format!("could not bracket t quantile for p={prob}"));
        }
    }

    while hi - lo > 1e-4 * (1.0 + 0.5 * (lo + hi).abs()) {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let mut x = 0.5 * (lo + hi);
    for _ in 0..100 {
        let fx = f(x);
        if fx == 0.0 {
            break;
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let dens = student_t_pdf(x, p);
        let mut next = x - fx / dens;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        let step = (next - x).abs();
        x = next;
        if step <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    Ok(x)
}

/// Density of the unit-variance t law.
pub fn std_t_pdf(x: f64, p: StudentTParams) -> f64 {
    let s = p.unit_variance_scale();
    student_t_pdf(x / s, p) / s
}

/// CDF of the unit-variance t law.
pub fn std_t_cdf(x: f64, p: StudentTParams) -> f64 {
    student_t_cdf(x / p.unit_variance_scale(), p)
}

/// Quantile of the unit-variance t law.
pub fn std_t_inv_cdf(prob: f64, p: StudentTParams) -> Result<f64> {
    Ok(student_t_inv_cdf(prob, p)? * p.unit_variance_scale())
}

/// `E|e|` for a unit-variance t innovation.
pub fn std_t_abs_mean(p: StudentTParams) -> f64 {
    let nu = p.nu;
    let log_num = ln_gamma(0.5 * (nu + 1.0)) + 0.5 * (nu - 2.0).ln() + 2f64.ln();
    let log_den = ln_gamma(0.5 * nu) + 0.5 * std::f64::consts::PI.ln() + (nu - 1.0).ln();
    (log_num - log_den).exp()
}

/// Lower `alpha` VaR and ES of the unit-variance t law.
///
/// ES uses the closed form `-(g(q)/alpha) ((nu + q^2)/(nu - 1)) sqrt((nu-2)/nu)`
/// with `q` the plain t quantile and `g` the plain t density.
pub fn std_t_var_es(alpha: f64, p: StudentTParams) -> Result<(f64, f64)> {
    let q = student_t_inv_cdf(alpha, p)?;
    let s = p.unit_variance_scale();
    let nu = p.nu;
    let var = q * s;
    let es = -(student_t_pdf(q, p) / alpha) * ((nu + q * q) / (nu - 1.0)) * s;
    Ok((var, es))
}
