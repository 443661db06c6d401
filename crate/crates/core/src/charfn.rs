//! The characteristic function of the closed-loop generator.
//!
//! With `eta^2 = ((lambda+1)^2 sigma^2 - 4 lambda a b) / (4 lambda^2)` the
//! eigenvalues are the zeros of
//!
//! ```text
//! F(sigma) = (k-1) cosh(eta L)
//!          - [(k+1) (lambda+1)/(2 lambda) sigma + (k b / lambda + a)] sinh(eta L) / eta
//! ```
//!
//! Both `cosh(eta L)` and `sinh(eta L)/eta` are even in `eta`, so `F` is an
//! entire function of `sigma` and no branch of the square root needs tracking.
//! Near `eta^2 L^2 = 0` a short even power series is used instead of the
//! exponential formulas.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::params::SystemParams;

/// Complex numbers used throughout: eigenvalues, contour points, `F(sigma)`.
pub type ComplexValue = Complex64;

/// Below this `|eta^2 L^2|` the power series is used.
pub const SERIES_CROSSOVER: f64 = 1e-4;

/// Largest real exponent accepted before reporting overflow.
pub const EXP_LIMIT: f64 = 700.0;

const SERIES_TERMS: usize = 6;

/// Intermediate quantities of the characteristic function at one `sigma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharParts {
    pub eta_sq: ComplexValue,
    pub xi: ComplexValue,
    pub cosh_eta_l: ComplexValue,
    /// `sinh(eta L) / eta`, equal to `L` at `eta = 0`.
    pub sinhc_eta_l: ComplexValue,
}

/// `eta^2` for the given parameters.
pub fn eta_squared(p: &SystemParams, sigma: ComplexValue) -> ComplexValue {
    let lam = p.lambda;
    ((lam + 1.0).powi(2) * sigma * sigma - 4.0 * lam * p.ab()) / (4.0 * lam * lam)
}

/// Even series for `cosh(w)` and `sinh(w)/w` in `z = w^2`.
fn even_series(z: ComplexValue) -> (ComplexValue, ComplexValue) {
    let mut cosh = Complex64::new(0.0, 0.0);
    let mut sinhc = Complex64::new(0.0, 0.0);
    let mut term_c = Complex64::new(1.0, 0.0); // z^n / (2n)!
    let mut term_s = Complex64::new(1.0, 0.0); // z^n / (2n+1)!
    for n in 0..SERIES_TERMS {
        cosh += term_c;
        sinhc += term_s;
        let n = n as f64;
        term_c = term_c * z / ((2.0 * n + 1.0) * (2.0 * n + 2.0));
        term_s = term_s * z / ((2.0 * n + 2.0) * (2.0 * n + 3.0));
    }
    (cosh, sinhc)
}

/// `cosh(eta L)` and `sinh(eta L)/eta` from an explicit square root `eta`.
///
/// The result does not depend on the sign of `eta`.
pub fn cosh_sinhc_from_eta(eta: ComplexValue, length: f64) -> Result<(ComplexValue, ComplexValue)> {
    let w = eta * length;
    if (w * w).norm() < SERIES_CROSSOVER {
        let (c, s) = even_series(w * w);
        return Ok((c, s * length));
    }
    if w.re.abs() > EXP_LIMIT {
        return Err(Error::Overflow(w.re.abs()));
    }
    Ok((w.cosh(), w.sinh() / eta))
}

/// Evaluates `eta^2`, `xi`, `cosh(eta L)` and `sinh(eta L)/eta`.
pub fn char_parts(p: &SystemParams, sigma: ComplexValue) -> Result<CharParts> {
    let eta_sq = eta_squared(p, sigma);
    let xi = -(p.lambda - 1.0) * sigma / (2.0 * p.lambda);
    let z = eta_sq * (p.length * p.length);
    let (cosh_eta_l, sinhc_eta_l) = if z.norm() < SERIES_CROSSOVER {
        let (c, s) = even_series(z);
        (c, s * p.length)
    } else {
        cosh_sinhc_from_eta(eta_sq.sqrt(), p.length)?
    };
    Ok(CharParts {
        eta_sq,
        xi,
        cosh_eta_l,
        sinhc_eta_l,
    })
}

/// Linear coefficient multiplying `sinh(eta L)/eta`.
fn sinhc_coefficient(p: &SystemParams, sigma: ComplexValue) -> ComplexValue {
    let lam = p.lambda;
    (p.k + 1.0) * (lam + 1.0) / (2.0 * lam) * sigma + (p.k * p.b / lam + p.a)
}

/// `F(sigma)`.
pub fn eval_char(p: &SystemParams, sigma: ComplexValue) -> Result<ComplexValue> {
    let parts = char_parts(p, sigma)?;
    Ok((p.k - 1.0) * parts.cosh_eta_l - sinhc_coefficient(p, sigma) * parts.sinhc_eta_l)
}

/// `F(sigma)` as `mantissa * exp(log_scale)`, with `log_scale >= 0` real.
///
/// The scale factor is positive, so `arg F = arg mantissa`; this lets the
/// argument be tracked on contours where `F` itself overflows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledValue {
    pub mantissa: ComplexValue,
    pub log_scale: f64,
}

impl ScaledValue {
    pub fn value(&self) -> Result<ComplexValue> {
        if self.log_scale > EXP_LIMIT {
            return Err(Error::Overflow(self.log_scale));
        }
        Ok(self.mantissa * self.log_scale.exp())
    }

    /// `ln |F|`.
    pub fn ln_abs(&self) -> f64 {
        self.mantissa.norm().ln() + self.log_scale
    }
}

/// `F(sigma)` scaled by `exp(-|Re(eta L)|)`; never overflows.
pub fn eval_char_scaled(p: &SystemParams, sigma: ComplexValue) -> ScaledValue {
    let eta_sq = eta_squared(p, sigma);
    let z = eta_sq * (p.length * p.length);
    let coeff = sinhc_coefficient(p, sigma);
    if z.norm() < SERIES_CROSSOVER {
        let (c, s) = even_series(z);
        return ScaledValue {
            mantissa: (p.k - 1.0) * c - coeff * s * p.length,
            log_scale: 0.0,
        };
    }
    // principal root: Re(eta) >= 0
    let eta = eta_sq.sqrt();
    let w = eta * p.length;
    let s = w.re;
    let rot = Complex64::from_polar(1.0, w.im);
    let damp = (-2.0 * s).exp();
    let cosh = (rot + damp / rot) * 0.5;
    let sinhc = (rot - damp / rot) * 0.5 / eta;
    ScaledValue {
        mantissa: (p.k - 1.0) * cosh - coeff * sinhc,
        log_scale: s,
    }
}

/// The branch `Q(sigma)` of `sqrt(eta^2)` with `Q(sigma)/sigma -> (lambda+1)/(2 lambda)`.
///
/// Requires `Re sigma >= 0`, `sigma != 0` and
/// `|sigma|^2 >= 8 lambda |ab| / (lambda+1)^2`, which keeps the factor under the
/// square root within distance 1/2 of 1 and hence away from the branch cut.
pub fn q_branch(p: &SystemParams, sigma: ComplexValue) -> Result<ComplexValue> {
    let lam = p.lambda;
    let bound = 8.0 * lam * p.ab().abs() / (lam + 1.0).powi(2);
    if sigma.re < 0.0 || sigma.norm_sqr() < bound || sigma.norm_sqr() == 0.0 {
        return Err(Error::BranchPrecondition {
            re: sigma.re,
            im: sigma.im,
        });
    }
    let ratio = 4.0 * lam * p.ab() / ((lam + 1.0).powi(2) * sigma * sigma);
    let mut q = (lam + 1.0) / (2.0 * lam) * sigma * (1.0 - ratio).sqrt();
    if q.re < 0.0 {
        // only reachable through rounding on the imaginary axis
        q.re = 0.0;
    }
    Ok(q)
}

/// `H(sigma) = 2 exp(-Q L) F(sigma)`, the form that stays bounded on large
/// right-half-plane contours.
pub fn eval_char_normalized(p: &SystemParams, sigma: ComplexValue) -> Result<ComplexValue> {
    let q = q_branch(p, sigma)?;
    let lam = p.lambda;
    let k = p.k;
    let e = (-2.0 * q * p.length).exp();
    let bracket = (k + 1.0) * (lam + 1.0) * sigma / (2.0 * lam * q) + (k * p.b + lam * p.a) / (lam * q);
    Ok((k - 1.0) * (1.0 + e) - bracket * (1.0 - e))
}
