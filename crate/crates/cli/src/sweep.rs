use std::fmt::Write as _;
use std::io::{self, Write};

use hstab_core::marginal::distance_to_curves;
use hstab_core::{count_unstable, fit_decay_rate, run_simulation, Error, SimConfig, SystemParams, Verdict};
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Spectral,
    Simulation,
    Both,
}

impl Method {
    pub fn spectral(self) -> bool {
        matches!(self, Method::Spectral | Method::Both)
    }

    pub fn simulation(self) -> bool {
        matches!(self, Method::Simulation | Method::Both)
    }
}

/// `count` equally spaced values from `min` to `max` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Range {
    pub fn new(min: f64, max: f64, count: usize) -> Self {
        Range { min, max, count }
    }

    pub fn values(&self) -> Vec<f64> {
        let step = (self.max - self.min) / (self.count - 1) as f64;
        (0..self.count)
            .map(|i| if i + 1 == self.count { self.max } else { self.min + i as f64 * step })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    pub a: f64,
    pub b: f64,
    pub lambda: f64,
    pub k_range: Range,
    pub l_range: Range,
    pub method: Method,
    /// Cells closer than this to a marginal curve are tagged `Marginal`.
    pub exclusion_margin: f64,
    pub n_cells: usize,
    pub t_final: f64,
}

impl SweepSpec {
    pub fn new(a: f64, b: f64, lambda: f64, k_range: Range, l_range: Range, method: Method) -> Self {
        SweepSpec {
            a,
            b,
            lambda,
            k_range,
            l_range,
            method,
            exclusion_margin: 0.02,
            n_cells: 100,
            t_final: 30.0,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        SystemParams::new(self.a, self.b, self.lambda, 1.0, 0.0)?;
        for (name, r) in [("k", &self.k_range), ("L", &self.l_range)] {
            if r.count < 2 || !(r.min < r.max) || !r.min.is_finite() || !r.max.is_finite() {
                return Err(Error::InvalidParams(format!("{name} range must be ordered with at least 2 points")));
            }
        }
        if self.method.spectral() && (self.k_range.min <= -1.0 || self.k_range.max >= 1.0) {
            return Err(Error::InvalidParams("spectral sweeps need k inside (-1, 1)".into()));
        }
        if self.l_range.min <= 0.0 && self.method.simulation() {
            return Err(Error::InvalidParams("simulation sweeps need L > 0".into()));
        }
        if self.l_range.min < 0.0 || !(self.exclusion_margin >= 0.0) {
            return Err(Error::InvalidParams("L and the exclusion margin must be nonnegative".into()));
        }
        if self.method.simulation() && (self.n_cells < 4 || !(self.t_final > 0.0)) {
            return Err(Error::InvalidParams("simulation needs n_cells >= 4 and t_final > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CellCount {
    Count(usize),
    Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub k: f64,
    #[serde(rename = "L")]
    pub length: f64,
    #[serde(rename = "N")]
    pub count: Option<CellCount>,
    pub rate: Option<f64>,
    /// `(N = 0) == (rate < 0)`, only for non-marginal cells of a `Both` sweep.
    pub flag: Option<bool>,
    pub error: Option<String>,
}

impl Cell {
    pub fn is_marginal(&self) -> bool {
        self.count == Some(CellCount::Marginal)
    }

    fn csv_row(&self, out: &mut String) {
        let n = match (&self.error, self.count) {
            (Some(e), _) => format!("error:{e}"),
            (None, Some(CellCount::Count(n))) => n.to_string(),
            (None, Some(CellCount::Marginal)) => "Marginal".into(),
            (None, None) => String::new(),
        };
        let rate = self.rate.map(|r| r.to_string()).unwrap_or_default();
        let flag = self.flag.map(|f| f.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{n},{rate},{flag}", self.k, self.length);
    }
}

/// Evaluates one grid cell; used both by the sweep and for spot checks.
pub fn evaluate_cell(spec: &SweepSpec, k: f64, length: f64) -> Cell {
    let mut cell = Cell {
        k,
        length,
        count: None,
        rate: None,
        flag: None,
        error: None,
    };
    let params = match SystemParams::new(spec.a, spec.b, spec.lambda, length, k) {
        Ok(p) => p,
        Err(e) => {
            cell.error = Some(e.name().into());
            return cell;
        }
    };
    let near = match distance_to_curves(spec.a, spec.b, spec.lambda, k, length) {
        Ok(d) => d < spec.exclusion_margin,
        Err(e) => {
            cell.error = Some(e.name().into());
            return cell;
        }
    };
    if near {
        cell.count = Some(CellCount::Marginal);
    }
    if spec.method.spectral() && !near {
        match count_unstable(&params, None) {
            Ok(r) if r.verdict == Verdict::Marginal => cell.count = Some(CellCount::Marginal),
            Ok(r) => cell.count = Some(CellCount::Count(r.n_unstable)),
            Err(e) => {
                cell.error = Some(e.name().into());
                return cell;
            }
        }
    }
    if spec.method.simulation() && length > 0.0 {
        let cfg = SimConfig::new(params, spec.n_cells, spec.t_final);
        match run_simulation(&cfg).and_then(|out| fit_decay_rate(&out.trace)) {
            Ok(rate) => cell.rate = Some(rate),
            Err(e) => {
                cell.error = Some(e.name().into());
                return cell;
            }
        }
    }
    if let (Some(CellCount::Count(n)), Some(rate)) = (cell.count, cell.rate) {
        cell.flag = Some((n == 0) == (rate < 0.0));
    }
    cell
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub spec: SweepSpec,
    /// Row-major: `k` outer, `L` inner.
    pub cells: Vec<Cell>,
}

impl SweepResult {
    pub fn cell(&self, ik: usize, il: usize) -> &Cell {
        &self.cells[ik * self.spec.l_range.count + il]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,L,N,rate,flag\n");
        for c in &self.cells {
            c.csv_row(&mut out);
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(self.to_csv().as_bytes())
    }

    /// Cells outside the exclusion margin that carry an agreement flag.
    pub fn agreement(&self) -> (usize, usize) {
        let flagged: Vec<bool> = self.cells.iter().filter_map(|c| c.flag).collect();
        (flagged.iter().filter(|&&f| f).count(), flagged.len())
    }
}

/// Evaluates every cell on a pool of `jobs` workers (0 picks the rayon
/// default). Output order does not depend on the worker count.
pub fn run_sweep(spec: &SweepSpec, jobs: usize) -> Result<SweepResult, Error> {
    spec.validate()?;
    let ks = spec.k_range.values();
    let ls = spec.l_range.values();
    let points: Vec<(f64, f64)> = ks.iter().flat_map(|&k| ls.iter().map(move |&l| (k, l))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidParams(format!("thread pool: {e}")))?;
    let cells = pool.install(|| points.par_iter().map(|&(k, l)| evaluate_cell(spec, k, l)).collect());
    Ok(SweepResult { spec: spec.clone(), cells })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_endpoints_are_exact() {
        let v = Range::new(-0.9, 0.9, 11).values();
        assert_eq!(v.len(), 11);
        assert_eq!((v[0], v[10]), (-0.9, 0.9));
    }

    #[test]
    fn spec_validation() {
        let ok = SweepSpec::new(1.0, 1.0, 1.0, Range::new(-0.5, 0.5, 3), Range::new(0.1, 1.0, 3), Method::Spectral);
        assert!(ok.validate().is_ok());
        let mut bad = ok.clone();
        bad.k_range = Range::new(-1.0, 0.5, 3);
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.l_range = Range::new(1.0, 0.1, 3);
        assert!(bad.validate().is_err());
        let mut bad = ok;
        bad.k_range.count = 1;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_column_below_first_curve_is_stable() {
        let spec = SweepSpec::new(1.0, 1.0, 1.0, Range::new(-0.9, 0.9, 11), Range::new(0.2, 3.0, 11), Method::Spectral);
        let res = run_sweep(&spec, 2).unwrap();
        // k = 0 is the middle row
        for il in 0..11 {
            let c = res.cell(5, il);
            if c.length < 0.75 * std::f64::consts::PI - spec.exclusion_margin {
                assert_eq!(c.count, Some(CellCount::Count(0)), "L = {}", c.length);
            }
        }
    }

    #[test]
    fn empty_marginal_set_is_all_stable() {
        let spec = SweepSpec::new(4.0, -1.0, 1.0, Range::new(-0.9, 0.9, 5), Range::new(0.2, 3.0, 5), Method::Spectral);
        let res = run_sweep(&spec, 1).unwrap();
        assert!(res.cells.iter().all(|c| c.count == Some(CellCount::Count(0))));
    }

    #[test]
    fn csv_header_and_rows() {
        let spec = SweepSpec::new(1.0, 1.0, 1.0, Range::new(-0.5, 0.5, 2), Range::new(0.5, 1.0, 2), Method::Spectral);
        let csv = run_sweep(&spec, 1).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "k,L,N,rate,flag");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1], "-0.5,0.5,0,,");
    }
}
