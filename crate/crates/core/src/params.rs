//! System parameters and the two-speed reduction.

use crate::error::{Error, Result};

/// Parameters `(a, b, lambda, L, k)` of the closed-loop system
///
/// ```text
/// y1_t + y1_x + a y2 = 0,   y2_t - lambda y2_x + b y1 = 0,
/// y2(t, L) = y1(t, L),      y1(t, 0) = k y2(t, 0).
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    pub a: f64,
    pub b: f64,
    pub lambda: f64,
    pub length: f64,
    pub k: f64,
}

impl SystemParams {
    /// Builds and validates a parameter set.
    pub fn new(a: f64, b: f64, lambda: f64, length: f64, k: f64) -> Result<Self> {
        let p = SystemParams {
            a,
            b,
            lambda,
            length,
            k,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.a, self.b, self.lambda, self.length, self.k];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams(format!("non-finite field in {self:?}")));
        }
        if self.lambda <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.length < 0.0 {
            return Err(Error::InvalidParams(format!(
                "length must be nonnegative, got {}",
                self.length
            )));
        }
        Ok(())
    }

    pub fn with_k(self, k: f64) -> Self {
        SystemParams { k, ..self }
    }

    pub fn with_length(self, length: f64) -> Self {
        SystemParams { length, ..self }
    }

    /// Product `ab`, which selects the marginal-curve regime.
    pub fn ab(&self) -> f64 {
        self.a * self.b
    }
}

/// Reduces a system with rightward speed `lambda1` and leftward speed `lambda2`
/// to the unit-rightward-speed form by rescaling space, `x -> x / lambda1`.
///
/// The gain is not touched: the returned parameters carry `k = 0` and the
/// caller sets it with [`SystemParams::with_k`].
pub fn reduce_general(lambda1: f64, lambda2: f64, a: f64, b: f64, length: f64) -> Result<SystemParams> {
    if !(lambda1 > 0.0) || !(lambda2 > 0.0) {
        return Err(Error::InvalidParams(format!(
            "speeds must be positive, got lambda1 = {lambda1}, lambda2 = {lambda2}"
        )));
    }
    SystemParams::new(a, b, lambda2 / lambda1, length / lambda1, 0.0)
}
