//! Right-half-plane eigenvalue counting and root location.
//!
//! For `|k| < 1` the number of eigenvalues in the open right half-plane is
//! the winding number of `F` along the boundary of a large right half-disk.
//! `F` is real on the real axis and `F(conj s) = conj F(s)`, so only the upper
//! half of the contour is traversed: from `R` along the arc to `iR`, then down
//! the imaginary axis to `0`. The phase change along that path is `N pi`.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;

use crate::charfn::{eval_char, eval_char_scaled, ComplexValue};
use crate::error::{Error, Result};
use crate::params::SystemParams;

/// Sampling of the half-disk contour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourSpec {
    pub radius: f64,
    pub n_arc: usize,
    pub n_axis: usize,
    pub min_modulus_floor: f64,
}

impl ContourSpec {
    pub const MIN_SAMPLES: usize = 64;

    pub fn with_radius(radius: f64) -> Self {
        ContourSpec {
            radius,
            ..ContourSpec::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(Error::Precondition(format!("contour radius must be positive, got {}", self.radius)));
        }
        if self.n_arc < Self::MIN_SAMPLES || self.n_axis < Self::MIN_SAMPLES {
            return Err(Error::Precondition(format!(
                "contour needs at least {} samples per segment",
                Self::MIN_SAMPLES
            )));
        }
        if !(self.min_modulus_floor > 0.0) {
            return Err(Error::Precondition("min_modulus_floor must be positive".into()));
        }
        Ok(())
    }
}

impl Default for ContourSpec {
    fn default() -> Self {
        ContourSpec {
            radius: 1.0,
            n_arc: 256,
            n_axis: 512,
            min_modulus_floor: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Stable,
    Unstable,
    Marginal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralReport {
    /// Zeros of `F` in the open right half-plane.
    pub n_unstable: usize,
    pub radius_used: f64,
    /// Smallest `|F|` met along the contour.
    pub min_abs_on_contour: f64,
    /// Smallest `|H| = 2 |exp(-QL) F|` on the arc.
    pub min_abs_normalized_arc: f64,
    pub verdict: Verdict,
}

const MAX_DOUBLINGS: usize = 8;
const MAX_BISECTION_DEPTH: usize = 60;
/// Radius of the indentation around a root at the origin.
const INDENT_RADIUS: f64 = 1e-6;

/// `|F(0)|` below this marks a point on a marginal curve.
pub fn origin_threshold(p: &SystemParams) -> f64 {
    1e-9 * (1.0 + p.a.abs() + p.b.abs())
}

/// Starting radius combining the branch-point scale and the asymptotic root
/// spacing.
pub fn initial_radius(p: &SystemParams) -> f64 {
    let lam = p.lambda;
    let branch = 2.0 * lam / (lam + 1.0) * (p.ab().abs() / lam).sqrt();
    let spacing = 2.0 * lam / ((lam + 1.0) * p.length) * ((1.0 - p.k.abs()).ln().abs() + 2.0 * PI);
    branch + spacing + 1.0
}

struct PathStats {
    phase: f64,
    min_abs: f64,
    min_abs_normalized: f64,
}

/// Accumulates the continuous argument of `F` along `path(t)`, `t` in `[0, 1]`.
fn track_phase(
    p: &SystemParams,
    path: &dyn Fn(f64) -> ComplexValue,
    samples: usize,
    floor: Option<(f64, &dyn Fn(f64) -> f64)>,
) -> Result<PathStats> {
    let eval = |t: f64| -> Result<(Complex64, f64)> {
        let s = eval_char_scaled(p, path(t));
        let abs = s.ln_abs().exp();
        if let Some((floor, beta_of)) = floor {
            if abs < floor {
                return Err(Error::MarginalDegenerate {
                    beta: beta_of(t),
                    modulus: abs,
                });
            }
        }
        Ok((s.mantissa, abs))
    };

    let mut stats = PathStats {
        phase: 0.0,
        min_abs: f64::INFINITY,
        min_abs_normalized: f64::INFINITY,
    };
    let (mut m0, abs0) = eval(0.0)?;
    stats.min_abs = abs0;
    stats.min_abs_normalized = 2.0 * m0.norm();
    for i in 1..=samples {
        let (t0, t1) = ((i - 1) as f64 / samples as f64, i as f64 / samples as f64);
        let (m1, abs1) = eval(t1)?;
        stats.min_abs = stats.min_abs.min(abs1);
        stats.min_abs_normalized = stats.min_abs_normalized.min(2.0 * m1.norm());
        stats.phase += refine_step(t0, m0, t1, m1, 0, &eval, &mut stats)?;
        m0 = m1;
    }
    Ok(stats)
}

fn refine_step(
    t0: f64,
    m0: Complex64,
    t1: f64,
    m1: Complex64,
    depth: usize,
    eval: &dyn Fn(f64) -> Result<(Complex64, f64)>,
    stats: &mut PathStats,
) -> Result<f64> {
    let step = (m1 / m0).arg();
    if step.abs() < FRAC_PI_2 {
        return Ok(step);
    }
    if depth >= MAX_BISECTION_DEPTH {
        return Err(Error::MarginalDegenerate {
            beta: f64::NAN,
            modulus: m0.norm().min(m1.norm()),
        });
    }
    let tm = 0.5 * (t0 + t1);
    let (mm, abs) = eval(tm)?;
    stats.min_abs = stats.min_abs.min(abs);
    stats.min_abs_normalized = stats.min_abs_normalized.min(2.0 * mm.norm());
    Ok(refine_step(t0, m0, tm, mm, depth + 1, eval, stats)? + refine_step(tm, mm, t1, m1, depth + 1, eval, stats)?)
}

struct Winding {
    count: usize,
    min_abs: f64,
    arc_min_normalized: f64,
}

/// Winding count for one radius; `indent` excludes a root at the origin.
fn winding_at(p: &SystemParams, spec: &ContourSpec, indent: bool) -> Result<Winding> {
    let r = spec.radius;
    let arc = |t: f64| Complex64::from_polar(r, FRAC_PI_2 * t);
    let arc_stats = track_phase(p, &arc, spec.n_arc, None)?;

    let bottom = if indent { INDENT_RADIUS.min(0.5 * r) } else { 0.0 };
    let axis = |t: f64| Complex64::new(0.0, r + (bottom - r) * t);
    let beta_of = |t: f64| r + (bottom - r) * t;
    let axis_stats = track_phase(p, &axis, spec.n_axis, Some((spec.min_modulus_floor, &beta_of)))?;

    let mut phase = arc_stats.phase + axis_stats.phase;
    let mut min_abs = arc_stats.min_abs.min(axis_stats.min_abs);
    if indent {
        let small = |t: f64| Complex64::from_polar(bottom, FRAC_PI_2 * (1.0 - t));
        let s = track_phase(p, &small, ContourSpec::MIN_SAMPLES, None)?;
        phase += s.phase;
        min_abs = min_abs.min(s.min_abs);
    }
    let turns = phase / PI;
    let count = turns.round();
    if (turns - count).abs() > 0.25 || count < 0.0 {
        return Err(Error::MarginalDegenerate {
            beta: f64::NAN,
            modulus: min_abs,
        });
    }
    Ok(Winding {
        count: count as usize,
        min_abs,
        arc_min_normalized: arc_stats.min_abs_normalized,
    })
}

/// Counts eigenvalues in the open right half-plane for `|k| < 1`.
///
/// With `spec = None` the radius starts at [`initial_radius`] and doubles
/// until two consecutive radii give the same count and `|H|` on the arc stays
/// above `(1 - |k|)/2`.
pub fn count_unstable(p: &SystemParams, spec: Option<&ContourSpec>) -> Result<SpectralReport> {
    p.validate()?;
    if p.k.abs() >= 1.0 {
        return Err(Error::Precondition(format!(
            "count_unstable needs |k| < 1, got k = {}; use seed_unstable_roots",
            p.k
        )));
    }
    let f0 = eval_char(p, Complex64::new(0.0, 0.0))?;
    let marginal = f0.norm() < origin_threshold(p);

    if p.length == 0.0 {
        // F is the constant k - 1
        return Ok(SpectralReport {
            n_unstable: 0,
            radius_used: 0.0,
            min_abs_on_contour: (p.k - 1.0).abs(),
            min_abs_normalized_arc: 2.0 * (p.k - 1.0).abs(),
            verdict: Verdict::Stable,
        });
    }

    let report = |w: &Winding, radius: f64| SpectralReport {
        n_unstable: w.count,
        radius_used: radius,
        min_abs_on_contour: w.min_abs,
        min_abs_normalized_arc: w.arc_min_normalized,
        verdict: if marginal {
            Verdict::Marginal
        } else if w.count == 0 {
            Verdict::Stable
        } else {
            Verdict::Unstable
        },
    };

    if let Some(spec) = spec {
        spec.validate()?;
        let w = winding_at(p, spec, marginal)?;
        return Ok(report(&w, spec.radius));
    }

    let bound = 0.5 * (1.0 - p.k.abs());
    let mut spec = ContourSpec::with_radius(initial_radius(p));
    let mut current = winding_at(p, &spec, marginal)?;
    for _ in 0..MAX_DOUBLINGS {
        let next_spec = ContourSpec::with_radius(2.0 * spec.radius);
        let next = winding_at(p, &next_spec, marginal)?;
        if next.count == current.count && current.arc_min_normalized > bound {
            return Ok(report(&current, spec.radius));
        }
        spec = next_spec;
        current = next;
    }
    Err(Error::RadiusExhausted(MAX_DOUBLINGS))
}

/// Asymptotic locations of the right-half-plane roots for `|k| > 1`,
/// `sigma_{k,n} = lambda / ((lambda+1) L) (ln|k| + 2 n' pi i)` with `n' = n`
/// for `k > 1` and `n' = n + 1/2` for `k < -1`.
pub fn seed_unstable_roots(p: &SystemParams, n_min: usize, n_max: usize) -> Result<Vec<ComplexValue>> {
    p.validate()?;
    if p.k.abs() <= 1.0 || p.length <= 0.0 || n_min > n_max {
        return Err(Error::Precondition(format!(
            "seeds need |k| > 1, L > 0 and n_min <= n_max (k = {}, L = {}, n = {n_min}..{n_max})",
            p.k, p.length
        )));
    }
    let lam = p.lambda;
    let scale = lam / ((lam + 1.0) * p.length);
    let shift = if p.k > 0.0 { 0.0 } else { 0.5 };
    Ok((n_min..=n_max)
        .map(|n| scale * Complex64::new(p.k.abs().ln(), 2.0 * (n as f64 + shift) * PI))
        .collect())
}

/// Damped Newton polishing of a root of `F`, with a central-difference
/// derivative.
pub fn refine_root(p: &SystemParams, seed: ComplexValue, tol: f64) -> Result<ComplexValue> {
    if !seed.is_finite() || !(tol > 0.0) {
        return Err(Error::Precondition(format!("refine_root needs a finite seed and tol > 0 (seed = {seed}, tol = {tol})")));
    }
    let f = |s: ComplexValue| eval_char(p, s);
    let mut sigma = seed;
    let mut value = f(sigma)?;
    for _ in 0..100 {
        if value.norm() < tol {
            return Ok(sigma);
        }
        let h = 1e-7 * sigma.norm().max(1.0);
        let deriv = (f(sigma + h)? - f(sigma - h)?) / (2.0 * h);
        if deriv.norm() == 0.0 || !deriv.is_finite() {
            return Err(Error::DerivativeVanishes);
        }
        let step = -value / deriv;
        let mut damping = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = sigma + damping * step;
            match f(trial) {
                Ok(v) if v.norm() < value.norm() => {
                    sigma = trial;
                    value = v;
                    accepted = true;
                    break;
                }
                _ => damping *= 0.5,
            }
        }
        if !accepted {
            return Err(Error::NoConvergence(value.norm()));
        }
    }
    if value.norm() < tol {
        Ok(sigma)
    } else {
        Err(Error::NoConvergence(value.norm()))
    }
}

/// Closed-form roots for `k = 1`:
/// `sigma_n = 2 lambda / (lambda+1) sqrt(ab/lambda - n^2 pi^2 / L^2)`.
///
/// Entries with `n >= 1` zero the factor `exp(2 eta L) - 1`; the `n = 0`
/// entry corresponds to `eta = 0` and is generally not a root.
pub fn k1_imaginary_roots(p: &SystemParams, n_max: usize) -> Result<Vec<ComplexValue>> {
    p.validate()?;
    if p.k != 1.0 || p.length <= 0.0 {
        return Err(Error::Precondition(format!("needs k = 1 and L > 0 (k = {}, L = {})", p.k, p.length)));
    }
    let lam = p.lambda;
    Ok((0..=n_max)
        .map(|n| {
            let radicand = p.ab() / lam - (n as f64 * PI / p.length).powi(2);
            2.0 * lam / (lam + 1.0) * Complex64::new(radicand, 0.0).sqrt()
        })
        .collect())
}
