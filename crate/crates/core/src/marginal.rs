//! Marginal curves, critical length and block indices.
//!
//! For `|k| < 1` the characteristic function has a zero on the imaginary
//! axis only at `sigma = 0`, so the marginal set in the `(k, L)` plane is the
//! zero set of `F(0)`. With `eta_0^2 = -ab/lambda` it splits into three
//! regimes:
//!
//! * `ab = 0`: `L_k = (k - 1) / (k b / lambda + a)`,
//! * `ab > 0`: `L_{k,n} = sqrt(lambda/ab) (arccot(h(k)) + n pi)`,
//! * `ab < 0`: `L_k = sqrt(-lambda/ab) arccoth(h(k))` where `h(k) > 1`,
//!
//! with `h(k) = (k b / lambda + a) / ((k - 1) sqrt(|ab| / lambda))`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::params::SystemParams;

/// Curves closer than this (in `L`) count as passing through the point.
pub const MARGINAL_TOL: f64 = 1e-9;

/// `arccot` with range `(0, pi)`.
pub fn arccot(x: f64) -> f64 {
    PI / 2.0 - x.atan()
}

/// `arccoth(x) = atanh(1/x)` for `|x| > 1`.
pub fn arccoth(x: f64) -> f64 {
    (1.0 / x).atanh()
}

/// Open or half-open interval of admissible gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KDomain {
    pub lo: f64,
    pub hi: f64,
}

impl KDomain {
    pub fn contains(&self, k: f64) -> bool {
        k > self.lo && k < self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum CurveKind {
    /// `ab = 0`
    Rational,
    /// `ab > 0`, branch `n`
    Cot,
    /// `ab < 0`
    Coth,
}

/// One connected component of the marginal set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalCurve {
    pub branch_index: usize,
    pub k_domain: KDomain,
    kind: CurveKind,
    a: f64,
    b: f64,
    lambda: f64,
}

impl MarginalCurve {
    fn h(&self, k: f64) -> f64 {
        let scale = (self.a * self.b / self.lambda).abs().sqrt();
        (k * self.b / self.lambda + self.a) / ((k - 1.0) * scale)
    }

    /// Curve height `L` at gain `k` (meaningful inside `k_domain`).
    pub fn eval(&self, k: f64) -> f64 {
        match self.kind {
            CurveKind::Rational => (k - 1.0) / (k * self.b / self.lambda + self.a),
            CurveKind::Cot => {
                let c = (self.a * self.b / self.lambda).sqrt();
                (arccot(self.h(k)) + self.branch_index as f64 * PI) / c
            }
            CurveKind::Coth => {
                let c = (-self.a * self.b / self.lambda).sqrt();
                arccoth(self.h(k)) / c
            }
        }
    }

    /// Samples `(k, L)` on the domain, skipping points where the curve leaves
    /// `[0, l_max]`.
    pub fn sample(&self, count: usize, l_max: f64) -> Vec<(f64, f64)> {
        let count = count.max(2);
        let d = self.k_domain;
        let pad = 1e-9 * d.width();
        (0..count)
            .map(|i| {
                let t = i as f64 / (count - 1) as f64;
                d.lo + pad + t * (d.width() - 2.0 * pad)
            })
            .map(|k| (k, self.eval(k)))
            .filter(|&(_, l)| l.is_finite() && l >= 0.0 && l <= l_max)
            .collect()
    }

    /// Lowest height on the domain, from a clustered grid.
    fn min_height(&self) -> f64 {
        cluster_grid(self.k_domain, 512)
            .map(|k| self.eval(k))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Grid on the open domain, clustered toward both ends (Chebyshev nodes).
fn cluster_grid(d: KDomain, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| {
        let t = -((PI * (i as f64 + 0.5)) / n as f64).cos();
        0.5 * (d.lo + d.hi) + 0.5 * d.width() * t
    })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("lambda must be positive, got {lambda}")))
    }
}

/// Default height cap for the infinite `ab > 0` family.
pub fn default_height_cap(length: f64) -> f64 {
    10.0 * length.max(1.0)
}

/// Domain of the single curve in the `ab < 0` regime, if any.
fn coth_domain(a: f64, b: f64, lambda: f64) -> Option<KDomain> {
    let k1 = (-lambda * a / b).sqrt() * a.signum();
    let m = -lambda * a;
    if m > b && b > 0.0 {
        Some(KDomain { lo: -1.0, hi: 1.0 })
    } else if 0.0 > m && m > b {
        Some(KDomain { lo: k1, hi: 1.0 })
    } else if b > m && m > 0.0 {
        Some(KDomain { lo: -1.0, hi: k1 })
    } else {
        // 0 > b >= -lambda a, or b = -lambda a where h is identically 1
        None
    }
}

/// The complete marginal curve family for `(a, b, lambda)`.
///
/// In the `ab > 0` regime, branches are returned while their lowest point is
/// at most `max_height`.
pub fn marginal_curves(a: f64, b: f64, lambda: f64, max_height: f64) -> Result<Vec<MarginalCurve>> {
    check_lambda(lambda)?;
    let ab = a * b;
    let curve = |kind, branch_index, k_domain| MarginalCurve {
        branch_index,
        k_domain,
        kind,
        a,
        b,
        lambda,
    };
    let mut out = Vec::new();
    if ab == 0.0 {
        let domain = if a == 0.0 && b > 0.0 {
            Some(KDomain { lo: -1.0, hi: 0.0 })
        } else if a == 0.0 && b < 0.0 {
            Some(KDomain { lo: 0.0, hi: 1.0 })
        } else if a < 0.0 && b == 0.0 {
            Some(KDomain { lo: -1.0, hi: 1.0 })
        } else {
            None
        };
        if let Some(d) = domain {
            out.push(curve(CurveKind::Rational, 0, d));
        }
    } else if ab > 0.0 {
        let full = KDomain { lo: -1.0, hi: 1.0 };
        let base = curve(CurveKind::Cot, 0, full);
        let spacing = (lambda / ab).sqrt() * PI;
        let lowest = base.min_height();
        let mut n = 0;
        while n == 0 || lowest + n as f64 * spacing <= max_height {
            out.push(curve(CurveKind::Cot, n, full));
            n += 1;
        }
    } else if let Some(d) = coth_domain(a, b, lambda) {
        out.push(curve(CurveKind::Coth, 0, d));
    }
    Ok(out)
}

/// Critical length `L_c`; `Infinite` when every length is stabilizable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CriticalLength {
    Finite(f64),
    Infinite,
}

impl CriticalLength {
    pub fn value(&self) -> f64 {
        match self {
            CriticalLength::Finite(v) => *v,
            CriticalLength::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, CriticalLength::Infinite)
    }
}

/// Closed-form critical length.
pub fn critical_length(a: f64, b: f64, lambda: f64) -> Result<CriticalLength> {
    check_lambda(lambda)?;
    let ab = a * b;
    let lc = if a > 0.0 && b > 0.0 {
        (lambda / ab).sqrt() * PI
    } else if a < 0.0 && b < 0.0 {
        (lambda / ab).sqrt() * arccot((b - lambda * a) / (2.0 * (lambda * ab).sqrt()))
    } else if -lambda * a > b && b > 0.0 {
        (-lambda / ab).sqrt() * arccoth((b - lambda * a) / (2.0 * (-lambda * ab).sqrt()))
    } else if b == 0.0 && a < 0.0 {
        -2.0 / a
    } else {
        return Ok(CriticalLength::Infinite);
    };
    Ok(CriticalLength::Finite(lc))
}

/// Number of marginal curves strictly below a point, i.e. the block index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockIndex {
    Count(usize),
    Marginal,
}

/// Block index of `(k, L)`; equals the number of unstable eigenvalues.
pub fn block_index(p: &SystemParams) -> Result<BlockIndex> {
    p.validate()?;
    if p.k.abs() >= 1.0 {
        return Err(Error::Precondition(format!("block_index needs |k| < 1, got k = {}", p.k)));
    }
    let ab = p.ab();
    let length = p.length;
    if ab > 0.0 {
        let curves = marginal_curves(p.a, p.b, p.lambda, 0.0)?;
        let base = curves[0].eval(p.k);
        let spacing = (p.lambda / ab).sqrt() * PI;
        let x = (length - base) / spacing;
        let nearest = x.round();
        if nearest >= 0.0 && (length - base - nearest * spacing).abs() < MARGINAL_TOL {
            return Ok(BlockIndex::Marginal);
        }
        return Ok(BlockIndex::Count(if x > 0.0 { x.ceil() as usize } else { 0 }));
    }
    let mut count = 0;
    for curve in marginal_curves(p.a, p.b, p.lambda, 0.0)? {
        if !curve.k_domain.contains(p.k) {
            continue;
        }
        let h = curve.eval(p.k);
        if (length - h).abs() < MARGINAL_TOL {
            return Ok(BlockIndex::Marginal);
        }
        if h < length {
            count += 1;
        }
    }
    Ok(BlockIndex::Count(count))
}

/// Which side of a threshold gain is stable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StableSide {
    Below,
    Above,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdGain {
    pub k: f64,
    pub stable_side: StableSide,
}

/// Gain where the lowest marginal curve crosses height `length`.
pub fn threshold_k(a: f64, b: f64, lambda: f64, length: f64) -> Result<Option<ThresholdGain>> {
    check_lambda(lambda)?;
    if !(length > 0.0) {
        return Err(Error::Precondition(format!("length must be positive, got {length}")));
    }
    let curves = marginal_curves(a, b, lambda, 0.0)?;
    let Some(curve) = curves.first() else {
        return Ok(None);
    };
    let g = |k: f64| curve.eval(k) - length;
    let grid: Vec<f64> = {
        let d = curve.k_domain;
        let pad = 1e-12 * d.width();
        let n = 4096;
        (0..=n)
            .map(|i| d.lo + pad + (d.width() - 2.0 * pad) * i as f64 / n as f64)
            .collect()
    };
    let bracket = grid.windows(2).find(|w| {
        let (ga, gb) = (g(w[0]), g(w[1]));
        ga.is_finite() && gb.is_finite() && ga.signum() != gb.signum()
    });
    let Some(w) = bracket else {
        return Ok(None);
    };
    let (mut lo, mut hi) = (w[0], w[1]);
    let g_lo = g(lo);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if g(mid).signum() == g_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let k = 0.5 * (lo + hi);
    let dk = 1e-6 * curve.k_domain.width();
    let slope = curve.eval(k + dk) - curve.eval(k - dk);
    // stable where the curve lies above L
    let stable_side = if slope > 0.0 {
        StableSide::Above
    } else {
        StableSide::Below
    };
    Ok(Some(ThresholdGain { k, stable_side }))
}

/// Euclidean distance from `(k, length)` to the nearest marginal curve in the
/// `(k, L)` plane; `+infinity` when the marginal set is empty.
pub fn distance_to_curves(a: f64, b: f64, lambda: f64, k: f64, length: f64) -> Result<f64> {
    let curves = marginal_curves(a, b, lambda, length + 2.0)?;
    let mut best = f64::INFINITY;
    for curve in &curves {
        let d = curve.k_domain;
        let dist = |kk: f64| {
            let l = curve.eval(kk);
            if l.is_finite() {
                ((kk - k).powi(2) + (l - length).powi(2)).sqrt()
            } else {
                f64::INFINITY
            }
        };
        let n = 2000;
        let step = d.width() / n as f64;
        let mut arg = d.lo;
        let mut val = f64::INFINITY;
        for i in 0..=n {
            let kk = (d.lo + i as f64 * step).clamp(d.lo + 1e-12, d.hi - 1e-12);
            let v = dist(kk);
            if v < val {
                val = v;
                arg = kk;
            }
        }
        // golden-section refinement on the neighbouring cells
        let (mut lo, mut hi) = ((arg - step).max(d.lo + 1e-12), (arg + step).min(d.hi - 1e-12));
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..60 {
            let m1 = hi - phi * (hi - lo);
            let m2 = lo + phi * (hi - lo);
            if dist(m1) < dist(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        val = val.min(dist(0.5 * (lo + hi)));
        // the domain endpoints belong to the closure of the curve
        for end in [d.lo, d.hi] {
            if end.abs() < 1.0 {
                val = val.min(dist(end + if end == d.lo { 1e-12 } else { -1e-12 }));
            }
        }
        best = best.min(val);
    }
    Ok(best)
}
