//! Banded LU with partial pivoting, plus a Woodbury wrapper for low-rank
//! corrections. The step matrices of the upwind scheme have two sub- and two
//! super-diagonals; pivoting widens the upper band to `kl + ku`.

use crate::error::{Error, Result};

/// Square band matrix, stored row by row over columns `i - kl ..= i + kl + ku`
/// so the factorization has room for pivoting fill.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku, "({i}, {j}) outside band");
        i * self.width + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.kl + self.ku {
            return 0.0;
        }
        self.data[self.slot(i, j)]
    }

    /// Sets an entry inside the declared band `i - kl ..= i + ku`.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "({i}, {j}) outside band");
        let s = self.slot(i, j);
        self.data[s] = value;
    }

    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let v = self.get(i, j);
        self.set(i, j, v + value);
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    /// In-place LU with row pivoting.
    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let reach = self.kl + self.ku;
        let mut pivots = vec![0usize; n];
        for k in 0..n {
            let last_row = (k + self.kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..=last_row {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::SingularStepMatrix(k));
            }
            pivots[k] = p;
            let last_col = (k + reach).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let (a, b) = (self.slot(k, j), self.slot(p, j));
                    self.data.swap(a, b);
                }
            }
            let diag = self.get(k, k);
            for i in k + 1..=last_row {
                let s = self.slot(i, k);
                let l = self.data[s] / diag;
                self.data[s] = l;
                if l != 0.0 {
                    for j in k + 1..=last_col {
                        let (t, u) = (self.slot(i, j), self.slot(k, j));
                        self.data[t] -= l * self.data[u];
                    }
                }
            }
        }
        Ok(BandLu { lu: self, pivots })
    }
}

#[derive(Debug, Clone)]
pub struct BandLu {
    lu: BandMatrix,
    pivots: Vec<usize>,
}

impl BandLu {
    pub fn dim(&self) -> usize {
        self.lu.n
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let m = &self.lu;
        let n = m.n;
        assert_eq!(x.len(), n);
        for k in 0..n {
            x.swap(k, self.pivots[k]);
            let xk = x[k];
            if xk != 0.0 {
                for i in k + 1..=(k + m.kl).min(n - 1) {
                    x[i] -= m.data[m.slot(i, k)] * xk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..=(k + m.kl + m.ku).min(n - 1) {
                s -= m.data[m.slot(k, j)] * x[j];
            }
            x[k] = s / m.data[m.slot(k, k)];
        }
    }
}

/// Sparse column: `(index, value)` pairs.
pub type SparseVec = Vec<(usize, f64)>;

fn sparse_dot(v: &SparseVec, x: &[f64]) -> f64 {
    v.iter().map(|&(i, c)| c * x[i]).sum()
}

/// Solver for `A + sum_r u_r v_r^T` with `A` banded.
#[derive(Debug, Clone)]
pub struct LowRankSolver {
    base: BandLu,
    right: Vec<SparseVec>,
    /// `A^{-1} u_r`
    z: Vec<Vec<f64>>,
    /// LU of the capacitance matrix `I + V^T A^{-1} U`, row major
    cap: Vec<f64>,
    cap_piv: Vec<usize>,
}

impl LowRankSolver {
    pub fn new(base: BandLu, left: Vec<SparseVec>, right: Vec<SparseVec>) -> Result<Self> {
        assert_eq!(left.len(), right.len());
        let n = base.dim();
        let r = left.len();
        let z: Vec<Vec<f64>> = left
            .iter()
            .map(|u| {
                let mut col = vec![0.0; n];
                for &(i, c) in u {
                    col[i] += c;
                }
                base.solve_in_place(&mut col);
                col
            })
            .collect();
        let mut cap = vec![0.0; r * r];
        for (p, v) in right.iter().enumerate() {
            for (q, zq) in z.iter().enumerate() {
                cap[p * r + q] = sparse_dot(v, zq) + if p == q { 1.0 } else { 0.0 };
            }
        }
        let cap_piv = dense_lu(&mut cap, r).ok_or(Error::SingularStepMatrix(n))?;
        Ok(LowRankSolver {
            base,
            right,
            z,
            cap,
            cap_piv,
        })
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        self.base.solve_in_place(x);
        let r = self.right.len();
        if r == 0 {
            return;
        }
        let mut y: Vec<f64> = self.right.iter().map(|v| sparse_dot(v, x)).collect();
        dense_solve(&self.cap, &self.cap_piv, r, &mut y);
        for (zq, yq) in self.z.iter().zip(&y) {
            for (xi, zi) in x.iter_mut().zip(zq) {
                *xi -= yq * zi;
            }
        }
    }
}

fn dense_lu(a: &mut [f64], n: usize) -> Option<Vec<usize>> {
    let mut piv = vec![0; n];
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i * n + k].abs().total_cmp(&a[j * n + k].abs()))?;
        if a[p * n + k] == 0.0 {
            return None;
        }
        piv[k] = p;
        for j in 0..n {
            a.swap(k * n + j, p * n + j);
        }
        for i in k + 1..n {
            let l = a[i * n + k] / a[k * n + k];
            a[i * n + k] = l;
            for j in k + 1..n {
                a[i * n + j] -= l * a[k * n + j];
            }
        }
    }
    Some(piv)
}

fn dense_solve(lu: &[f64], piv: &[usize], n: usize, x: &mut [f64]) {
    for k in 0..n {
        x.swap(k, piv[k]);
        for i in k + 1..n {
            x[i] -= lu[i * n + k] * x[k];
        }
    }
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| lu[k * n + j] * x[j]).sum();
        x[k] = (x[k] - s) / lu[k * n + k];
    }
}
