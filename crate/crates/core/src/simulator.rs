//! Fully implicit upwind scheme for the open-loop system with proportional
//! boundary feedback, energy traces and decay-rate fitting.
//!
//! Unknowns are interleaved, `u_j -> 2j` and `v_j -> 2j + 1`, which keeps the
//! step matrix inside a band of two sub- and two super-diagonals.

use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::linalg::{BandLu, BandMatrix};
use crate::params::SystemParams;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialData {
    PaperDefault,
    Fields { u: Vec<f64>, v: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub params: SystemParams,
    pub n_cells: usize,
    pub dt: f64,
    pub t_final: f64,
    pub initial: InitialData,
}

impl SimConfig {
    /// Defaults: `dt = 2L/N` and the smooth compatible initial data.
    pub fn new(params: SystemParams, n_cells: usize, t_final: f64) -> Self {
        let dt = 2.0 * params.length / n_cells.max(1) as f64;
        SimConfig {
            params,
            n_cells,
            dt,
            t_final,
            initial: InitialData::PaperDefault,
        }
    }

    pub fn dx(&self) -> f64 {
        self.params.length / self.n_cells as f64
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt - 1e-9).ceil().max(0.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.n_cells < 4 {
            return Err(Error::InvalidParams(format!("n_cells must be at least 4, got {}", self.n_cells)));
        }
        if !(self.params.length > 0.0) {
            return Err(Error::InvalidParams("simulation needs L > 0".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) || !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "dt and t_final must be positive (dt = {}, t_final = {})",
                self.dt, self.t_final
            )));
        }
        if let InitialData::Fields { u, v } = &self.initial {
            if u.len() != self.n_cells + 1 || v.len() != self.n_cells + 1 {
                return Err(Error::InvalidParams(format!(
                    "initial fields need {} nodes, got {} and {}",
                    self.n_cells + 1,
                    u.len(),
                    v.len()
                )));
            }
        }
        Ok(())
    }

    pub fn initial_state(&self) -> SimState {
        match &self.initial {
            InitialData::PaperDefault => default_initial_data(self.params.length, self.n_cells),
            InitialData::Fields { u, v } => SimState {
                u: u.clone(),
                v: v.clone(),
                t: 0.0,
            },
        }
    }
}

/// Nodal values of `y1` (`u`) and `y2` (`v`) at `x_j = j dx`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub t: f64,
}

impl SimState {
    pub fn zeros(n_cells: usize) -> Self {
        SimState {
            u: vec![0.0; n_cells + 1],
            v: vec![0.0; n_cells + 1],
            t: 0.0,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.u.len() - 1
    }

    pub fn energy(&self, dx: f64) -> f64 {
        trapezoid_energy(&[&self.u, &self.v], dx)
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnergyTrace {
    pub times: Vec<f64>,
    pub energies: Vec<f64>,
}

impl EnergyTrace {
    pub fn push(&mut self, t: f64, e: f64) {
        self.times.push(t);
        self.energies.push(e);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Energy at the first recorded time `>= t`.
    pub fn at(&self, t: f64) -> Option<f64> {
        let i = self.times.iter().position(|&s| s >= t - 1e-12)?;
        Some(self.energies[i])
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,energy")?;
        for (t, e) in self.times.iter().zip(&self.energies) {
            writeln!(w, "{t},{e}")?;
        }
        Ok(())
    }
}

/// `int_0^L sum_i f_i^2 dx` by the composite trapezoid rule.
pub fn trapezoid_energy(fields: &[&[f64]], dx: f64) -> f64 {
    fields
        .iter()
        .map(|f| {
            let n = f.len();
            let inner: f64 = f.iter().map(|x| x * x).sum();
            inner - 0.5 * (f[0] * f[0] + f[n - 1] * f[n - 1])
        })
        .sum::<f64>()
        * dx
}

/// `y1(0,x) = x + sin^2 x`, `y2(0,x) = (L + sin^2 L)/(L + L^2) (x^2 + x)`,
/// which agree at `x = L`.
pub fn default_initial_data(length: f64, n_cells: usize) -> SimState {
    let dx = length / n_cells as f64;
    let scale = (length + length.sin().powi(2)) / (length + length * length);
    let xs = (0..=n_cells).map(|j| if j == n_cells { length } else { j as f64 * dx });
    let (u, v) = xs.map(|x| (x + x.sin().powi(2), scale * (x * x + x))).unzip();
    SimState { u, v, t: 0.0 }
}

/// Row of the left boundary condition `u_0 - k v_0 = rhs`.
pub const LEFT_BOUNDARY_ROW: usize = 0;

/// Assembles the constant step matrix. `k` enters row 0; the right boundary
/// row is `u_N - v_N = 0`.
pub fn step_matrix(params: &SystemParams, n_cells: usize, dt: f64) -> BandMatrix {
    let n = n_cells;
    let dx = params.length / n as f64;
    let (a, b, lam) = (params.a, params.b, params.lambda);
    let mut m = BandMatrix::zeros(2 * n + 2, 2, 2);
    m.set(0, 0, 1.0);
    m.set(0, 1, -params.k);
    for j in 1..=n {
        let r = 2 * j;
        m.set(r, 2 * j - 2, -1.0 / dx);
        m.set(r, 2 * j, 1.0 / dt + 1.0 / dx);
        m.set(r, 2 * j + 1, a);
    }
    for j in 0..n {
        let r = 2 * j + 1;
        m.set(r, 2 * j, b);
        m.set(r, 2 * j + 1, 1.0 / dt + lam / dx);
        m.set(r, 2 * j + 3, -lam / dx);
    }
    m.set(2 * n + 1, 2 * n, 1.0);
    m.set(2 * n + 1, 2 * n + 1, -1.0);
    m
}

/// Right-hand side for one step from `state`; boundary rows are zero.
pub fn step_rhs(state: &SimState, dt: f64, out: &mut [f64]) {
    let n = state.n_cells();
    out[0] = 0.0;
    for j in 1..=n {
        out[2 * j] = state.u[j] / dt;
    }
    for j in 0..n {
        out[2 * j + 1] = state.v[j] / dt;
    }
    out[2 * n + 1] = 0.0;
}

pub fn scatter(x: &[f64], state: &mut SimState) {
    for (j, pair) in x.chunks_exact(2).enumerate() {
        state.u[j] = pair[0];
        state.v[j] = pair[1];
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub trace: EnergyTrace,
    pub state: SimState,
}

pub fn run_simulation(cfg: &SimConfig) -> Result<SimOutput> {
    run_simulation_observed(cfg, 0, |_| {})
}

/// As [`run_simulation`], also handing every `every`-th state (and the
/// initial one) to `observe`; `every = 0` disables the callback.
pub fn run_simulation_observed<F: FnMut(&SimState)>(cfg: &SimConfig, every: usize, mut observe: F) -> Result<SimOutput> {
    cfg.validate()?;
    let lu: BandLu = step_matrix(&cfg.params, cfg.n_cells, cfg.dt).factor()?;
    let dx = cfg.dx();
    let mut state = cfg.initial_state();
    let mut trace = EnergyTrace::default();
    trace.push(0.0, state.energy(dx));
    if every > 0 {
        observe(&state);
    }
    let mut x = vec![0.0; 2 * cfg.n_cells + 2];
    for step in 1..=cfg.n_steps() {
        step_rhs(&state, cfg.dt, &mut x);
        lu.solve_in_place(&mut x);
        scatter(&x, &mut state);
        state.t = step as f64 * cfg.dt;
        if !state.is_finite() {
            return Err(Error::NonFiniteState(step));
        }
        let e = state.energy(dx);
        if !e.is_finite() {
            return Err(Error::NonFiniteState(step));
        }
        trace.push(state.t, e);
        if every > 0 && step % every == 0 {
            observe(&state);
        }
    }
    Ok(SimOutput { trace, state })
}

/// Writes `t,x,u,v` rows for every `every`-th step.
pub fn write_snapshots_csv<W: Write>(cfg: &SimConfig, every: usize, mut w: W) -> Result<()> {
    let dx = cfg.dx();
    let mut io_err = None;
    let _ = writeln!(w, "t,x,u,v");
    run_simulation_observed(cfg, every.max(1), |s| {
        for j in 0..s.u.len() {
            if let Err(e) = writeln!(w, "{},{},{},{}", s.t, j as f64 * dx, s.u[j], s.v[j]) {
                io_err.get_or_insert(e);
            }
        }
    })?;
    match io_err {
        Some(e) => Err(Error::Io(e.to_string())),
        None => Ok(()),
    }
}

/// Least-squares slope of `ln E` over the second half of the trace, skipping
/// samples below `1e-30 E_0`. The field decays at half this rate.
///
/// When the energy drops below that floor before the window opens, the fit
/// uses the second half of the samples that are still above it.
pub fn fit_decay_rate(trace: &EnergyTrace) -> Result<f64> {
    if trace.len() < 10 || trace.times.len() != trace.energies.len() {
        return Err(Error::InsufficientData(format!("need at least 10 samples, got {}", trace.len())));
    }
    if trace.energies.iter().all(|&e| e < 1e-300) {
        return Err(Error::InsufficientData("energy vanishes identically".into()));
    }
    let cutoff = 1e-30 * trace.energies[0];
    let usable: Vec<(f64, f64)> = trace
        .times
        .iter()
        .zip(&trace.energies)
        .filter(|&(_, &e)| e > 0.0 && e >= cutoff)
        .map(|(&t, &e)| (t, e.ln()))
        .collect();
    let t0 = trace.times[0];
    let window = |t_end: f64| -> Vec<(f64, f64)> {
        let start = 0.5 * (t0 + t_end);
        usable.iter().copied().filter(|&(t, _)| t >= start && t <= t_end).collect()
    };
    let mut pts = window(*trace.times.last().unwrap());
    if pts.len() < 2 {
        if let Some(&(last, _)) = usable.last() {
            pts = window(last);
        }
    }
    if pts.len() < 2 {
        return Err(Error::InsufficientData("fewer than two usable samples in the fit window".into()));
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("fit window has a single time".into()));
    }
    Ok(sxy / sxx)
}
