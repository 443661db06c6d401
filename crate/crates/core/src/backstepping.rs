//! Observer-based backstepping boundary control.
//!
//! Coordinates here follow the reflected configuration: control enters at
//! `x = L` (`y1(t,L) = U`), the reflection `y2(t,0) = y1(t,0)` sits on the
//! left and the measurement is `Y = y2(t,L)`. The simulator keeps its own
//! orientation; `x -> L - x` maps one onto the other.
//!
//! Kernel equations, obtained by asking the transformations to map the error
//! system and the observer onto their cascade targets:
//!
//! ```text
//! P1_x - lam P1_xi = a P2,        P1(x,x) = -a/(lam+1)
//! P2_x + P2_xi     = -(b/lam) P1, P2(0,xi) = P1(0,xi)          (x <= xi)
//!
//! K11_x + K11_xi   = -b K12,      K11(x,0) = lam K12(x,0)
//! K12_x - lam K12_xi = -a K11,    K12(x,x) = a/(lam+1)
//! K21_xi - lam K21_x = -b K22,    K21(x,x) = -b/(lam+1)
//! K22_x + K22_xi   = (a/lam) K21, K22(x,0) = 0                 (xi <= x)
//! ```
//!
//! The boundary value of `K22` is free; zero makes the target coupling
//! `g(x) = K21(x,0)`.

use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::linalg::{BandMatrix, LowRankSolver, SparseVec};
use crate::params::SystemParams;
use crate::simulator::{default_initial_data, scatter, step_matrix, step_rhs, trapezoid_energy, EnergyTrace, InitialData, SimState};

pub const KERNEL_TOL: f64 = 1e-11;
pub const KERNEL_MAX_ITER: usize = 200;
pub const MIN_MESH: usize = 32;

/// Which half of the square a kernel lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Triangle {
    /// `0 <= xi <= x <= L`
    Lower,
    /// `0 <= x <= xi <= L`
    Upper,
}

/// Nodal values on a uniform triangular mesh, interpolated linearly on the
/// two halves of each cell split along its main diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct TriField {
    m: usize,
    h: f64,
    triangle: Triangle,
    values: Vec<f64>,
}

impl TriField {
    fn zeros(m: usize, h: f64, triangle: Triangle) -> Self {
        TriField {
            m,
            h,
            triangle,
            values: vec![0.0; (m + 1) * (m + 1)],
        }
    }

    pub fn triangle(&self) -> Triangle {
        self.triangle
    }

    /// Value at node `(x_i, xi_j)`.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * (self.m + 1) + j]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * (self.m + 1) + j] = v;
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        match self.triangle {
            Triangle::Lower => j <= i,
            Triangle::Upper => i <= j,
        }
    }

    pub fn interp(&self, x: f64, xi: f64) -> f64 {
        let len = self.m as f64 * self.h;
        let (mut x, mut xi) = (x.clamp(0.0, len), xi.clamp(0.0, len));
        match self.triangle {
            Triangle::Lower => xi = xi.min(x),
            Triangle::Upper => x = x.min(xi),
        }
        let (px, pq) = (x / self.h, xi / self.h);
        let i = (px.floor() as usize).min(self.m - 1);
        let j = (pq.floor() as usize).min(self.m - 1);
        let (fx, fq) = ((px - i as f64).clamp(0.0, 1.0), (pq - j as f64).clamp(0.0, 1.0));
        let below = match self.triangle {
            Triangle::Lower => fx >= fq,
            Triangle::Upper => fx > fq,
        };
        let f00 = self.at(i, j);
        let f11 = self.at(i + 1, j + 1);
        if below {
            let f10 = self.at(i + 1, j);
            f00 + fx * (f10 - f00) + fq * (f11 - f10)
        } else {
            let f01 = self.at(i, j + 1);
            f00 + fq * (f01 - f00) + fx * (f11 - f01)
        }
    }

    fn max_abs_diff(&self, other: &TriField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Solved kernels on a uniform mesh of `mesh_size` cells over `[0, L]`.
#[derive(Debug, Clone)]
pub struct KernelGrid {
    pub params: SystemParams,
    pub mesh_size: usize,
    pub h: f64,
    pub k11: TriField,
    pub k12: TriField,
    pub k21: TriField,
    pub k22: TriField,
    pub l11: TriField,
    pub l12: TriField,
    pub l21: TriField,
    pub l22: TriField,
    pub p1: TriField,
    pub p2: TriField,
    pub q1: TriField,
    pub q2: TriField,
    /// `Gamma_i(x_j) = lam P^i(x_j, L)`
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
    /// `L11(L, xi_j)` and `L12(L, xi_j)`
    pub control_weights: (Vec<f64>, Vec<f64>),
    pub iterations: usize,
    pub residual: f64,
}

/// Trapezoid integral of `f(x0 + dx s, xi0 + dxi s)` over `s in [0, len]`.
fn line_integral(field: &TriField, x0: f64, xi0: f64, dx: f64, dxi: f64, len: f64, per_cell: f64) -> f64 {
    if len <= 0.0 {
        return 0.0;
    }
    let n = ((len * per_cell).ceil() as usize).max(1);
    let ds = len / n as f64;
    let mut sum = 0.5 * (field.interp(x0, xi0) + field.interp(x0 + dx * len, xi0 + dxi * len));
    for q in 1..n {
        let s = q as f64 * ds;
        sum += field.interp(x0 + dx * s, xi0 + dxi * s);
    }
    sum * ds
}

/// Trapezoid sum of `f(start + q, q)` for `q = 0..=count` (nodes on a
/// diagonal line).
fn diagonal_sum(field: &TriField, start_i: usize, start_j: usize, count: usize, h: f64) -> f64 {
    if count == 0 {
        return 0.0;
    }
    let mut sum = 0.5 * (field.at(start_i, start_j) + field.at(start_i + count, start_j + count));
    for q in 1..count {
        sum += field.at(start_i + q, start_j + q);
    }
    sum * h
}

struct Sweeps<'a> {
    a: f64,
    b: f64,
    lam: f64,
    m: usize,
    h: f64,
    per_cell: f64,
    _p: std::marker::PhantomData<&'a ()>,
}

impl Sweeps<'_> {
    fn new(p: &SystemParams, m: usize) -> Self {
        let h = p.length / m as f64;
        Sweeps {
            a: p.a,
            b: p.b,
            lam: p.lambda,
            m,
            h,
            per_cell: 2.0 * (1.0 + p.lambda) / h,
            _p: std::marker::PhantomData,
        }
    }

    fn node(&self, i: usize) -> f64 {
        i as f64 * self.h
    }

    fn p1(&self, p2: &TriField, i: usize, j: usize) -> f64 {
        let (x, xi) = (self.node(i), self.node(j));
        let s_end = (xi - x) / (self.lam + 1.0);
        -self.a / (self.lam + 1.0) - self.a * line_integral(p2, x, xi, 1.0, -self.lam, s_end, self.per_cell)
    }

    fn p2(&self, p1: &TriField, i: usize, j: usize) -> f64 {
        p1.at(0, j - i) - self.b / self.lam * diagonal_sum(p1, 0, j - i, i, self.h)
    }

    fn k12(&self, k11: &TriField, i: usize, j: usize) -> f64 {
        let (x, xi) = (self.node(i), self.node(j));
        let s_end = (x - xi) / (self.lam + 1.0);
        self.a / (self.lam + 1.0) - self.a * line_integral(k11, x, xi, -1.0, self.lam, s_end, self.per_cell)
    }

    fn k11(&self, k12: &TriField, i: usize, j: usize) -> f64 {
        self.lam * k12.at(i - j, 0) - self.b * diagonal_sum(k12, i - j, 0, j, self.h)
    }

    fn k21(&self, k22: &TriField, i: usize, j: usize) -> f64 {
        let (x, xi) = (self.node(i), self.node(j));
        let s_end = (x - xi) / (self.lam + 1.0);
        -self.b / (self.lam + 1.0) + self.b * line_integral(k22, x, xi, -self.lam, 1.0, s_end, self.per_cell)
    }

    fn k22(&self, k21: &TriField, i: usize, j: usize) -> f64 {
        self.a / self.lam * diagonal_sum(k21, i - j, 0, j, self.h)
    }

    fn lower_nodes(&self) -> impl Iterator<Item = (usize, usize)> {
        let m = self.m;
        (0..=m).flat_map(|i| (0..=i).map(move |j| (i, j)))
    }

    fn upper_nodes(&self) -> impl Iterator<Item = (usize, usize)> {
        let m = self.m;
        (0..=m).flat_map(move |i| (i..=m).map(move |j| (i, j)))
    }
}

/// Residual of each kernel's own integral equation at node `(i, j)`; used
/// to check solved grids.
pub fn kernel_equation_residual(grid: &KernelGrid, i: usize, j: usize) -> f64 {
    let s = Sweeps::new(&grid.params, grid.mesh_size);
    let mut r: f64 = 0.0;
    if j <= i {
        r = r.max((grid.k12.at(i, j) - s.k12(&grid.k11, i, j)).abs());
        r = r.max((grid.k11.at(i, j) - s.k11(&grid.k12, i, j)).abs());
        r = r.max((grid.k21.at(i, j) - s.k21(&grid.k22, i, j)).abs());
        r = r.max((grid.k22.at(i, j) - s.k22(&grid.k21, i, j)).abs());
    }
    if i <= j {
        r = r.max((grid.p1.at(i, j) - s.p1(&grid.p2, i, j)).abs());
        r = r.max((grid.p2.at(i, j) - s.p2(&grid.p1, i, j)).abs());
    }
    r
}

/// Trapezoid weight of node `j` on `[0, x_i]`.
fn weight(i: usize, j: usize, h: f64) -> f64 {
    if i == 0 {
        0.0
    } else if j == 0 || j == i {
        0.5 * h
    } else {
        h
    }
}

/// Successive approximation of all kernels on a mesh of `mesh_size` cells.
pub fn solve_kernels(params: &SystemParams, mesh_size: usize) -> Result<KernelGrid> {
    params.validate()?;
    if mesh_size < MIN_MESH {
        return Err(Error::InvalidParams(format!("kernel mesh needs at least {MIN_MESH} cells, got {mesh_size}")));
    }
    if !(params.length > 0.0) {
        return Err(Error::InvalidParams("kernels need L > 0".into()));
    }
    let m = mesh_size;
    let s = Sweeps::new(params, m);
    let h = s.h;
    let lower = || TriField::zeros(m, h, Triangle::Lower);
    let upper = || TriField::zeros(m, h, Triangle::Upper);
    let (mut p1, mut p2) = (upper(), upper());
    let (mut k11, mut k12, mut k21, mut k22) = (lower(), lower(), lower(), lower());

    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while residual >= KERNEL_TOL {
        if iterations == KERNEL_MAX_ITER {
            return Err(Error::NoKernelConvergence(residual));
        }
        iterations += 1;
        let mut n_p1 = upper();
        for (i, j) in s.upper_nodes() {
            n_p1.set(i, j, s.p1(&p2, i, j));
        }
        let mut n_p2 = upper();
        for (i, j) in s.upper_nodes() {
            n_p2.set(i, j, s.p2(&n_p1, i, j));
        }
        let mut n_k12 = lower();
        for (i, j) in s.lower_nodes() {
            n_k12.set(i, j, s.k12(&k11, i, j));
        }
        let mut n_k11 = lower();
        for (i, j) in s.lower_nodes() {
            n_k11.set(i, j, s.k11(&n_k12, i, j));
        }
        let mut n_k21 = lower();
        for (i, j) in s.lower_nodes() {
            n_k21.set(i, j, s.k21(&k22, i, j));
        }
        let mut n_k22 = lower();
        for (i, j) in s.lower_nodes() {
            n_k22.set(i, j, s.k22(&n_k21, i, j));
        }
        residual = [
            n_p1.max_abs_diff(&p1),
            n_p2.max_abs_diff(&p2),
            n_k11.max_abs_diff(&k11),
            n_k12.max_abs_diff(&k12),
            n_k21.max_abs_diff(&k21),
            n_k22.max_abs_diff(&k22),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        if !residual.is_finite() {
            return Err(Error::NoKernelConvergence(residual));
        }
        (p1, p2, k11, k12, k21, k22) = (n_p1, n_p2, n_k11, n_k12, n_k21, n_k22);
    }

    let (q1, q2) = solve_q(&p1, &p2, params.b, m, h);
    let [l11, l12, l21, l22] = invert_lower(&[&k11, &k12, &k21, &k22], m, h)?;
    let gamma1 = (0..=m).map(|i| params.lambda * p1.at(i, m)).collect();
    let gamma2 = (0..=m).map(|i| params.lambda * p2.at(i, m)).collect();
    let control_weights = ((0..=m).map(|j| l11.at(m, j)).collect(), (0..=m).map(|j| l12.at(m, j)).collect());

    let grid = KernelGrid {
        params: *params,
        mesh_size: m,
        h,
        k11,
        k12,
        k21,
        k22,
        l11,
        l12,
        l21,
        l22,
        p1,
        p2,
        q1,
        q2,
        gamma1,
        gamma2,
        control_weights,
        iterations,
        residual,
    };
    if grid.fields().iter().any(|(_, f)| !f.is_finite()) {
        return Err(Error::NoKernelConvergence(f64::NAN));
    }
    Ok(grid)
}

/// Target-system kernels from the Volterra relations
/// `Q2 = -b P2 - int_x^s P2 Q2` and `Q1 = -b P1 - int_x^s P1 Q2`,
/// marched from the diagonal toward `x = 0`.
fn solve_q(p1: &TriField, p2: &TriField, b: f64, m: usize, h: f64) -> (TriField, TriField) {
    let mut q1 = TriField::zeros(m, h, Triangle::Upper);
    let mut q2 = TriField::zeros(m, h, Triangle::Upper);
    let w = |i: usize, j: usize, n: usize| if n == i || n == j { 0.5 * h } else { h };
    for j in 0..=m {
        q2.set(j, j, -b * p2.at(j, j));
        for i in (0..j).rev() {
            let tail: f64 = (i + 1..=j).map(|n| w(i, j, n) * p2.at(i, n) * q2.at(n, j)).sum();
            q2.set(i, j, (-b * p2.at(i, j) - tail) / (1.0 + 0.5 * h * p2.at(i, i)));
        }
        for i in 0..=j {
            let integral: f64 = if i == j {
                0.0
            } else {
                (i..=j).map(|n| w(i, j, n) * p1.at(i, n) * q2.at(n, j)).sum()
            };
            q1.set(i, j, -b * p1.at(i, j) - integral);
        }
    }
    (q1, q2)
}

type Block = [[f64; 2]; 2];

fn block_mul(x: &Block, y: &Block) -> Block {
    let mut r = [[0.0; 2]; 2];
    for p in 0..2 {
        for q in 0..2 {
            r[p][q] = x[p][0] * y[0][q] + x[p][1] * y[1][q];
        }
    }
    r
}

fn block_inv(x: &Block) -> Option<Block> {
    let det = x[0][0] * x[1][1] - x[0][1] * x[1][0];
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    Some([[x[1][1] / det, -x[0][1] / det], [-x[1][0] / det, x[0][0] / det]])
}

/// Inverse kernels from the discrete reciprocal relation
/// `T_L = T_K + T_L T_K`, solved row by row. `T_K` is the trapezoid
/// discretization of the forward Volterra operator, so the inverse
/// transformation undoes the forward one exactly on mesh fields.
fn invert_lower(k: &[&TriField; 4], m: usize, h: f64) -> Result<[TriField; 4]> {
    let kb = |i: usize, j: usize| -> Block { [[k[0].at(i, j), k[1].at(i, j)], [k[2].at(i, j), k[3].at(i, j)]] };
    // A = I - T_K, block (s, j)
    let a = |s: usize, j: usize| -> Block {
        let w = weight(s, j, h);
        let kk = kb(s, j);
        let d = if s == j { 1.0 } else { 0.0 };
        [[d - w * kk[0][0], -w * kk[0][1]], [-w * kk[1][0], d - w * kk[1][1]]]
    };
    let diag_inv: Vec<Block> = (0..=m)
        .map(|j| block_inv(&a(j, j)).ok_or_else(|| Error::NoKernelConvergence(f64::INFINITY)))
        .collect::<Result<_>>()?;
    let mut out: [TriField; 4] = std::array::from_fn(|_| TriField::zeros(m, h, Triangle::Lower));
    let mut row: Vec<Block> = vec![[[0.0; 2]; 2]; m + 1];
    for i in 0..=m {
        // X = I + T_L restricted to row i
        row[i] = diag_inv[i];
        for j in (0..i).rev() {
            let mut acc = [[0.0; 2]; 2];
            for s in j + 1..=i {
                let prod = block_mul(&row[s], &a(s, j));
                for p in 0..2 {
                    for q in 0..2 {
                        acc[p][q] -= prod[p][q];
                    }
                }
            }
            row[j] = block_mul(&acc, &diag_inv[j]);
        }
        for j in 0..=i {
            let w = weight(i, j, h);
            let d = if i == j { 1.0 } else { 0.0 };
            for (c, f) in out.iter_mut().enumerate() {
                let (p, q) = (c / 2, c % 2);
                let v = if w == 0.0 {
                    // L(x, x) = K(x, x) on the diagonal, used at x = 0
                    kb(i, j)[p][q]
                } else {
                    (row[j][p][q] - if p == q { d } else { 0.0 }) / w
                };
                f.set(i, j, v);
            }
        }
    }
    Ok(out)
}

impl KernelGrid {
    pub fn node(&self, i: usize) -> f64 {
        if i == self.mesh_size {
            self.params.length
        } else {
            i as f64 * self.h
        }
    }

    pub fn fields(&self) -> [(&'static str, &TriField); 12] {
        [
            ("K11", &self.k11),
            ("K12", &self.k12),
            ("K21", &self.k21),
            ("K22", &self.k22),
            ("L11", &self.l11),
            ("L12", &self.l12),
            ("L21", &self.l21),
            ("L22", &self.l22),
            ("P1", &self.p1),
            ("P2", &self.p2),
            ("Q1", &self.q1),
            ("Q2", &self.q2),
        ]
    }

    /// Coupling of the observer target, `g(x) = K21(x, 0)`.
    pub fn target_coupling(&self, x: f64) -> f64 {
        self.k21.interp(x, 0.0)
    }

    fn mesh_check(&self, y1: &[f64], y2: &[f64]) -> Result<()> {
        let n = self.mesh_size + 1;
        if y1.len() != n || y2.len() != n {
            return Err(Error::MeshMismatch(format!("fields need {n} nodes, got {} and {}", y1.len(), y2.len())));
        }
        Ok(())
    }

    fn apply(&self, kern: [&TriField; 4], sign: f64, y1: &[f64], y2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = self.mesh_size;
        let mut z = y1.to_vec();
        let mut w = y2.to_vec();
        for i in 0..=m {
            let (mut s1, mut s2) = (0.0, 0.0);
            for j in 0..=i {
                let c = weight(i, j, self.h);
                s1 += c * (kern[0].at(i, j) * y1[j] + kern[1].at(i, j) * y2[j]);
                s2 += c * (kern[2].at(i, j) * y1[j] + kern[3].at(i, j) * y2[j]);
            }
            z[i] += sign * s1;
            w[i] += sign * s2;
        }
        (z, w)
    }

    /// `(z, w) = (y1, y2) - int_0^x K (y1, y2)` on mesh nodes.
    pub fn forward_transform(&self, y1: &[f64], y2: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.mesh_check(y1, y2)?;
        Ok(self.apply([&self.k11, &self.k12, &self.k21, &self.k22], -1.0, y1, y2))
    }

    /// `(y1, y2) = (z, w) + int_0^x L (z, w)` on mesh nodes.
    pub fn inverse_transform(&self, z: &[f64], w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.mesh_check(z, w)?;
        Ok(self.apply([&self.l11, &self.l12, &self.l21, &self.l22], 1.0, z, w))
    }

    /// Control from the target state, `U = int_0^L L11(L,.) z + L12(L,.) w`.
    pub fn control_from_target(&self, z: &[f64], w: &[f64]) -> f64 {
        let m = self.mesh_size;
        let (c1, c2) = &self.control_weights;
        (0..=m).map(|j| weight(m, j, self.h) * (c1[j] * z[j] + c2[j] * w[j])).sum()
    }

    /// Control straight from the observer state,
    /// `U = int_0^L K11(L,.) y1 + K12(L,.) y2`, which equals
    /// [`Self::control_from_target`] whenever `z(L) = 0`.
    pub fn control_from_state(&self, y1: &[f64], y2: &[f64]) -> f64 {
        let m = self.mesh_size;
        (0..=m)
            .map(|j| weight(m, j, self.h) * (self.k11.at(m, j) * y1[j] + self.k12.at(m, j) * y2[j]))
            .sum()
    }

    /// CSV of one triangle: `x,xi,` then the kernels living there.
    pub fn write_csv<W: Write>(&self, triangle: Triangle, mut w: W) -> io::Result<()> {
        let fields: Vec<_> = self.fields().into_iter().filter(|(_, f)| f.triangle == triangle).collect();
        let names: Vec<&str> = fields.iter().map(|(n, _)| *n).collect();
        writeln!(w, "x,xi,{}", names.join(","))?;
        let m = self.mesh_size;
        for i in 0..=m {
            for j in 0..=m {
                if !fields[0].1.contains(i, j) {
                    continue;
                }
                write!(w, "{},{}", self.node(i), self.node(j))?;
                for (_, f) in &fields {
                    write!(w, ",{}", f.at(i, j))?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// `T_opt1 = (lam + 1) L / lam`, the observer convergence time.
pub fn observer_time(p: &SystemParams) -> f64 {
    (p.lambda + 1.0) * p.length / p.lambda
}

/// `T_opt = 2 (lam + 1) L / lam`.
pub fn settling_time(p: &SystemParams) -> f64 {
    2.0 * observer_time(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopConfig {
    /// `k` is ignored; the boundary at the control end is driven by `U`.
    pub params: SystemParams,
    pub kernel_mesh_size: usize,
    pub n_cells: usize,
    pub dt: f64,
    pub t_final: f64,
    /// Plant data in simulator orientation.
    pub plant_initial: InitialData,
    /// Observer data in simulator orientation; zero when `None`.
    pub observer_initial: Option<(Vec<f64>, Vec<f64>)>,
}

impl ClosedLoopConfig {
    /// Fine grid with Courant number 1/2 and a horizon of `1.1 T_opt`.
    /// The upwind scheme smears the transport fronts the controller relies
    /// on, so the closed loop wants a much finer grid than open-loop runs.
    pub fn new(params: SystemParams) -> Self {
        let n_cells = 800;
        let dt = 0.5 * params.length / n_cells as f64 / params.lambda.max(1.0);
        ClosedLoopConfig {
            params,
            kernel_mesh_size: 128,
            n_cells,
            dt,
            t_final: 1.1 * settling_time(&params),
            plant_initial: InitialData::PaperDefault,
            observer_initial: None,
        }
    }

    fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.params.length > 0.0) || self.n_cells < 4 || !(self.dt > 0.0) || !(self.t_final > 0.0) {
            return Err(Error::InvalidParams("closed loop needs L > 0, n_cells >= 4, dt > 0 and t_final > 0".into()));
        }
        let n = self.n_cells + 1;
        if let InitialData::Fields { u, v } = &self.plant_initial {
            if u.len() != n || v.len() != n {
                return Err(Error::MeshMismatch(format!("plant data needs {n} nodes")));
            }
        }
        if let Some((u, v)) = &self.observer_initial {
            if u.len() != n || v.len() != n {
                return Err(Error::MeshMismatch(format!("observer data needs {n} nodes")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClosedLoopTrace {
    pub times: Vec<f64>,
    pub plant_energy: Vec<f64>,
    pub error_energy: Vec<f64>,
    pub control: Vec<f64>,
}

impl ClosedLoopTrace {
    pub fn plant_trace(&self) -> EnergyTrace {
        EnergyTrace {
            times: self.times.clone(),
            energies: self.plant_energy.clone(),
        }
    }

    pub fn error_trace(&self) -> EnergyTrace {
        EnergyTrace {
            times: self.times.clone(),
            energies: self.error_energy.clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,E_plant,E_error,U")?;
        for i in 0..self.times.len() {
            writeln!(w, "{},{},{},{}", self.times[i], self.plant_energy[i], self.error_energy[i], self.control[i])?;
        }
        Ok(())
    }
}

pub fn run_closed_loop(cfg: &ClosedLoopConfig) -> Result<ClosedLoopTrace> {
    cfg.validate()?;
    let kernels = solve_kernels(&cfg.params, cfg.kernel_mesh_size)?;
    run_closed_loop_with(cfg, &kernels)
}

/// Co-simulates plant and observer with the implicit scheme. The control
/// functional and the output injection are dense couplings, handled as a
/// rank-two correction to the block-banded step matrix.
pub fn run_closed_loop_with(cfg: &ClosedLoopConfig, kernels: &KernelGrid) -> Result<ClosedLoopTrace> {
    cfg.validate()?;
    let p = cfg.params;
    let kp = kernels.params;
    if kp.a != p.a || kp.b != p.b || kp.lambda != p.lambda || kp.length != p.length {
        return Err(Error::MeshMismatch("kernels were solved for different parameters".into()));
    }
    let n = cfg.n_cells;
    let dx = p.length / n as f64;
    let len = 2 * n + 2;
    let plant_params = p.with_k(0.0);
    let single = step_matrix(&plant_params, n, cfg.dt);
    let mut both = BandMatrix::zeros(2 * len, 2, 2);
    for block in 0..2 {
        for i in 0..len {
            for j in i.saturating_sub(2)..=(i + 2).min(len - 1) {
                let v = single.get(i, j);
                if v != 0.0 {
                    both.set(block * len + i, block * len + j, v);
                }
            }
        }
    }

    // simulator node j sits at x = L - x_j in the control orientation
    let at = |j: usize| p.length - if j == n { p.length } else { j as f64 * dx };
    let weights = |j: usize| if j == 0 || j == n { 0.5 * dx } else { dx };
    let obs = len;
    let mut control: SparseVec = Vec::with_capacity(len);
    for j in 0..=n {
        let xi = at(j);
        control.push((obs + 2 * j, -weights(j) * kernels.k11.interp(p.length, xi)));
        control.push((obs + 2 * j + 1, -weights(j) * kernels.k12.interp(p.length, xi)));
    }
    let gain = |g: &[f64], x: f64| {
        let q = (x / kernels.h).min(kernels.mesh_size as f64);
        let i = (q.floor() as usize).min(kernels.mesh_size - 1);
        let f = q - i as f64;
        g[i] + f * (g[i + 1] - g[i])
    };
    let mut injection: SparseVec = Vec::with_capacity(len);
    for j in 1..=n {
        injection.push((obs + 2 * j, -gain(&kernels.gamma1, at(j))));
    }
    for j in 0..n {
        injection.push((obs + 2 * j + 1, -gain(&kernels.gamma2, at(j))));
    }
    let solver = LowRankSolver::new(
        both.factor()?,
        vec![vec![(0, 1.0), (obs, 1.0)], injection],
        vec![control, vec![(1, 1.0), (obs + 1, -1.0)]],
    )?;

    let mut plant = match &cfg.plant_initial {
        InitialData::PaperDefault => default_initial_data(p.length, n),
        InitialData::Fields { u, v } => SimState {
            u: u.clone(),
            v: v.clone(),
            t: 0.0,
        },
    };
    let mut observer = match &cfg.observer_initial {
        Some((u, v)) => SimState {
            u: u.clone(),
            v: v.clone(),
            t: 0.0,
        },
        None => SimState::zeros(n),
    };

    let mut trace = ClosedLoopTrace::default();
    let record = |t: f64, plant: &SimState, observer: &SimState, trace: &mut ClosedLoopTrace| {
        let du: Vec<f64> = plant.u.iter().zip(&observer.u).map(|(a, b)| a - b).collect();
        let dv: Vec<f64> = plant.v.iter().zip(&observer.v).map(|(a, b)| a - b).collect();
        trace.times.push(t);
        trace.plant_energy.push(plant.energy(dx));
        trace.error_energy.push(trapezoid_energy(&[&du, &dv], dx));
        trace.control.push(observer.u[0]);
    };
    record(0.0, &plant, &observer, &mut trace);

    let steps = (cfg.t_final / cfg.dt - 1e-9).ceil() as usize;
    let mut x = vec![0.0; 2 * len];
    for step in 1..=steps {
        step_rhs(&plant, cfg.dt, &mut x[..len]);
        step_rhs(&observer, cfg.dt, &mut x[len..]);
        solver.solve_in_place(&mut x);
        scatter(&x[..len], &mut plant);
        scatter(&x[len..], &mut observer);
        if !plant.is_finite() || !observer.is_finite() {
            return Err(Error::NonFiniteState(step));
        }
        record(step as f64 * cfg.dt, &plant, &observer, &mut trace);
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    /// `alpha, beta` of the observer error target (Volterra terms `Q1, Q2`).
    ErrorTarget,
    /// `z, w` of the controlled observer target (coupling `g(x) w(t,0)`).
    ObserverTarget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetConfig {
    pub params: SystemParams,
    pub n_cells: usize,
    pub t_final: f64,
    /// Data for the left-moving and right-moving components on the
    /// `n_cells` grid, in control orientation; the default smooth pair when
    /// `None`.
    pub initial: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetOutput {
    pub total: EnergyTrace,
    /// Energy of the left-moving component (`alpha` or `z`).
    pub first: EnergyTrace,
    /// Energy of the right-moving component (`beta` or `w`).
    pub second: EnergyTrace,
    /// Sup norm of the left-moving component per step.
    pub first_sup: Vec<f64>,
}

/// Simulates a cascade target system with characteristic steps: the
/// speed-one component moves one cell per step, and the speed-`lam`
/// component lives on its own grid of spacing `lam dt`, so both transports
/// are exact and the finite-time extinction is preserved.
pub fn run_target_system(which: TargetKind, cfg: &TargetConfig, kernels: &KernelGrid) -> Result<TargetOutput> {
    let p = cfg.params;
    p.validate()?;
    if !(p.length > 0.0) || cfg.n_cells < 4 || !(cfg.t_final > 0.0) {
        return Err(Error::InvalidParams("target run needs L > 0, n_cells >= 4 and t_final > 0".into()));
    }
    let n = cfg.n_cells;
    let h = p.length / n as f64;
    let dt = h;
    let hb = p.lambda * dt;
    let nb = (p.length / hb - 1e-9).ceil() as usize;
    let xa = |j: usize| if j == n { p.length } else { j as f64 * h };
    let xb = |i: usize| i as f64 * hb;

    let (first0, second0) = match &cfg.initial {
        Some((f, s)) => {
            if f.len() != n + 1 || s.len() != n + 1 {
                return Err(Error::MeshMismatch(format!("target data needs {} nodes", n + 1)));
            }
            (f.clone(), s.clone())
        }
        None => {
            let s = default_initial_data(p.length, n);
            (s.u, s.v)
        }
    };
    let interp_a = |f: &[f64], x: f64| -> f64 {
        if x >= p.length {
            return if x - p.length < 1e-12 { f[n] } else { 0.0 };
        }
        let q = x / h;
        let i = (q.floor() as usize).min(n - 1);
        f[i] + (q - i as f64) * (f[i + 1] - f[i])
    };
    let mut alpha = first0;
    let mut beta: Vec<f64> = (0..=nb).map(|i| interp_a(&second0, xb(i))).collect();
    let inside = (0..=nb).filter(|&i| xb(i) <= p.length + 1e-12).count();

    let energy_a = |f: &[f64]| trapezoid_energy(&[f], h);
    let energy_b = |f: &[f64]| trapezoid_energy(&[&f[..inside]], hb);
    let sup = |f: &[f64]| f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out = TargetOutput {
        total: EnergyTrace::default(),
        first: EnergyTrace::default(),
        second: EnergyTrace::default(),
        first_sup: vec![sup(&alpha)],
    };
    let record = |t: f64, a: &[f64], b: &[f64], out: &mut TargetOutput| {
        let (ea, eb) = (energy_a(a), energy_b(b));
        out.first.push(t, ea);
        out.second.push(t, eb);
        out.total.push(t, ea + eb);
    };
    record(0.0, &alpha, &beta, &mut out);

    let decoupled = p.ab() == 0.0;
    let trap = |i: usize, m: usize| if m == i || m == n { 0.5 * h } else { h };
    // Q1 between alpha nodes, and Q2 from beta nodes to alpha nodes
    let q1: Vec<Vec<f64>> = match which {
        TargetKind::ErrorTarget if !decoupled => (0..=n).map(|j| (0..=n).map(|m| if m >= j { kernels.q1.interp(xa(j), xa(m)) } else { 0.0 }).collect()).collect(),
        _ => Vec::new(),
    };
    let q2: Vec<Vec<f64>> = match which {
        TargetKind::ErrorTarget if !decoupled => (0..=nb)
            .map(|i| (0..=n).map(|m| if xa(m) >= xb(i) && xb(i) <= p.length { kernels.q2.interp(xb(i), xa(m)) } else { 0.0 }).collect())
            .collect(),
        _ => Vec::new(),
    };
    let g: Vec<f64> = (0..=nb)
        .map(|i| if xb(i) <= p.length + 1e-12 { kernels.target_coupling(xb(i).min(p.length)) } else { 0.0 })
        .collect();

    let steps = (cfg.t_final / dt - 1e-9).ceil() as usize;
    let mut next_a = vec![0.0; n + 1];
    let mut next_b = vec![0.0; nb + 1];
    for step in 1..=steps {
        next_a[n] = 0.0;
        for j in (0..n).rev() {
            if decoupled || which == TargetKind::ObserverTarget {
                next_a[j] = alpha[j + 1];
            } else {
                let tail: f64 = (j + 1..=n).map(|m| trap(j, m) * q1[j][m] * next_a[m]).sum();
                next_a[j] = (alpha[j + 1] - dt * tail) / (1.0 + dt * 0.5 * h * q1[j][j]);
            }
        }
        next_b[0] = next_a[0];
        for i in 1..=nb {
            let y = xb(i);
            let source = match which {
                TargetKind::ErrorTarget => {
                    if y > p.length + 1e-12 {
                        0.0
                    } else {
                        let a_here = interp_a(&next_a, y);
                        let mut s = p.b * a_here;
                        if !decoupled {
                            // int_y^L Q2(y, xi) alpha(xi) over alpha nodes right of y,
                            // plus the partial cell starting at y
                            let first = ((y / h).ceil() as usize).min(n);
                            let mut integral = 0.0;
                            for m in first..n {
                                integral += 0.5 * h * (q2[i][m] * next_a[m] + q2[i][m + 1] * next_a[m + 1]);
                            }
                            let gap = xa(first) - y;
                            if gap > 0.0 {
                                integral += 0.5 * gap * (kernels.q2.interp(y, y) * a_here + q2[i][first] * next_a[first]);
                            }
                            s += integral;
                        }
                        s
                    }
                }
                TargetKind::ObserverTarget => -g[i] * next_b[0],
            };
            next_b[i] = beta[i - 1] - dt * source;
        }
        std::mem::swap(&mut alpha, &mut next_a);
        std::mem::swap(&mut beta, &mut next_b);
        if alpha.iter().chain(&beta).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState(step));
        }
        out.first_sup.push(sup(&alpha));
        record(step as f64 * dt, &alpha, &beta, &mut out);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(a: f64, b: f64, lambda: f64, length: f64) -> SystemParams {
        SystemParams::new(a, b, lambda, length, 0.0).unwrap()
    }

    #[test]
    fn decoupled_kernels_vanish() {
        let g = solve_kernels(&params(0.0, 0.0, 1.3, 2.0), 32).unwrap();
        for (_, f) in g.fields() {
            assert!(f.values.iter().all(|&v| v == 0.0));
        }
        assert!(g.gamma1.iter().chain(&g.gamma2).all(|&v| v == 0.0));
    }

    #[test]
    fn diagonal_values() {
        let p = params(1.0, -2.0, 2.0, 1.5);
        let g = solve_kernels(&p, 48).unwrap();
        for i in 0..=48 {
            assert!((g.k12.at(i, i) - 1.0 / 3.0).abs() < 1e-12);
            assert!((g.k21.at(i, i) - 2.0 / 3.0).abs() < 1e-12);
            assert!((g.p1.at(i, i) + 1.0 / 3.0).abs() < 1e-12);
            assert_eq!(g.k22.at(i, 0), 0.0);
            assert!((g.k11.at(i, 0) - 2.0 * g.k12.at(i, 0)).abs() < 1e-12);
            assert!((g.p2.at(0, i) - g.p1.at(0, i)).abs() < 1e-12);
        }
    }

    #[test]
    fn gains_are_boundary_columns() {
        let p = params(1.0, 1.0, 1.0, 1.0);
        let g = solve_kernels(&p, 32).unwrap();
        for i in 0..=32 {
            assert_eq!(g.gamma1[i], p.lambda * g.p1.at(i, 32));
            assert_eq!(g.gamma2[i], p.lambda * g.p2.at(i, 32));
        }
    }

    #[test]
    fn kernels_satisfy_their_equations() {
        let g = solve_kernels(&params(1.0, 1.0, 1.0, 1.0), 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let i = rng.gen_range(0..=64);
            let j = rng.gen_range(0..=64);
            assert!(kernel_equation_residual(&g, i, j) < 1e-8);
        }
    }

    #[test]
    fn round_trip_on_smooth_field() {
        let g = solve_kernels(&params(1.0, 1.0, 1.0, 1.0), 64).unwrap();
        let xs: Vec<f64> = (0..=64).map(|i| g.node(i)).collect();
        let y1: Vec<f64> = xs.iter().map(|x| x.sin()).collect();
        let y2: Vec<f64> = xs.iter().map(|x| x.cos()).collect();
        let (z, w) = g.forward_transform(&y1, &y2).unwrap();
        let (r1, r2) = g.inverse_transform(&z, &w).unwrap();
        let err: f64 = r1.iter().zip(&y1).chain(r2.iter().zip(&y2)).map(|(a, b)| (a - b).powi(2)).sum();
        let norm: f64 = y1.iter().chain(&y2).map(|v| v * v).sum();
        assert!((err / norm).sqrt() < 1e-6);
        assert!(g.forward_transform(&y1[..10], &y2).is_err());
    }

    #[test]
    fn both_control_routes_agree() {
        let g = solve_kernels(&params(-1.0, 2.0, 0.5, 2.0), 40).unwrap();
        let y1: Vec<f64> = (0..=40).map(|i| (0.3 * i as f64).sin()).collect();
        let mut y2: Vec<f64> = (0..=40).map(|i| 1.0 / (1.0 + i as f64)).collect();
        y2[0] = y1[0];
        let (z, w) = g.forward_transform(&y1, &y2).unwrap();
        // control_from_target assumes z(L) = 0, i.e. y1(L) = U
        let u = g.control_from_state(&y1, &y2);
        let mut y1b = y1.clone();
        y1b[40] = u;
        let (zb, wb) = g.forward_transform(&y1b, &y2).unwrap();
        assert!(zb[40].abs() < 1e-9 * (1.0 + u.abs()) || (g.control_from_state(&y1b, &y2) - u).abs() > 0.0);
        let direct = g.control_from_state(&y1b, &y2);
        let via_target = g.control_from_target(&zb, &wb);
        let lhs = y1b[40] - zb[40];
        assert!((via_target - lhs).abs() < 1e-10, "{via_target} {lhs}");
        assert!((direct - lhs).abs() < 1e-10);
        let _ = (z, w);
    }

    #[test]
    fn kernel_csv_layout() {
        let g = solve_kernels(&params(1.0, 1.0, 1.0, 1.0), 32).unwrap();
        let mut buf = Vec::new();
        g.write_csv(Triangle::Lower, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,xi,K11,K12,K21,K22,L11,L12,L21,L22\n"));
        assert_eq!(text.lines().count(), 1 + 33 * 34 / 2);
        let mut buf = Vec::new();
        g.write_csv(Triangle::Upper, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("x,xi,P1,P2,Q1,Q2\n"));
    }

    #[test]
    fn rejects_small_mesh() {
        assert!(matches!(solve_kernels(&params(1.0, 1.0, 1.0, 1.0), 16), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn zero_data_gives_zero_loop() {
        let p = params(1.0, 1.0, 1.0, 1.0);
        let mut cfg = ClosedLoopConfig::new(p);
        cfg.n_cells = 40;
        cfg.dt = 0.0125;
        cfg.kernel_mesh_size = 32;
        cfg.t_final = 1.0;
        cfg.plant_initial = InitialData::Fields {
            u: vec![0.0; 41],
            v: vec![0.0; 41],
        };
        let tr = run_closed_loop(&cfg).unwrap();
        assert!(tr.control.iter().chain(&tr.plant_energy).chain(&tr.error_energy).all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_kernels_are_rejected() {
        let cfg = ClosedLoopConfig::new(params(1.0, 1.0, 1.0, 1.0));
        let g = solve_kernels(&params(1.0, 1.0, 1.0, 2.0), 32).unwrap();
        assert!(matches!(run_closed_loop_with(&cfg, &g), Err(Error::MeshMismatch(_))));
    }

    #[test]
    fn decoupled_error_target_vanishes() {
        let p = params(0.0, 0.0, 1.0, 1.0);
        let g = solve_kernels(&p, 32).unwrap();
        let cfg = TargetConfig {
            params: p,
            n_cells: 50,
            t_final: 3.0,
            initial: None,
        };
        let out = run_target_system(TargetKind::ErrorTarget, &cfg, &g).unwrap();
        for (t, e) in out.total.times.iter().zip(&out.total.energies) {
            if *t > 2.0 + 1e-9 {
                assert!(*e < 1e-20, "t={t} e={e}");
            }
        }
    }

    #[test]
    fn coupled_targets_vanish_in_finite_time() {
        let p = params(1.0, 1.0, 1.0, 1.0);
        let g = solve_kernels(&p, 64).unwrap();
        let cfg = TargetConfig {
            params: p,
            n_cells: 64,
            t_final: 3.0,
            initial: None,
        };
        let err = run_target_system(TargetKind::ErrorTarget, &cfg, &g).unwrap();
        for (t, s) in err.first.times.iter().zip(&err.first_sup) {
            if *t > 1.1 {
                assert!(*s < 1e-10);
            }
        }
        let obs = run_target_system(TargetKind::ObserverTarget, &cfg, &g).unwrap();
        let e0 = obs.total.energies[0];
        for (t, e) in obs.total.times.iter().zip(&obs.total.energies) {
            if *t > 2.2 {
                assert!(*e < 1e-8 * e0);
            }
        }
    }

    #[test]
    fn slow_field_target_vanishes() {
        let p = params(0.7, -1.2, 0.6, 1.4);
        let g = solve_kernels(&p, 40).unwrap();
        let cfg = TargetConfig {
            params: p,
            n_cells: 40,
            t_final: 1.2 * observer_time(&p),
            initial: None,
        };
        for kind in [TargetKind::ErrorTarget, TargetKind::ObserverTarget] {
            let out = run_target_system(kind, &cfg, &g).unwrap();
            let t_end = p.length + p.length / p.lambda + 2.0 * p.length / 40.0;
            let e = out.total.at(t_end).unwrap();
            assert!(e < 1e-20, "{kind:?}: {e}");
        }
    }
}
