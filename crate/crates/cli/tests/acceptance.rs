//! Exit criteria. Each criterion prints one PASS/FAIL line; the process
//! fails if any criterion does.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use hstab_cli::sweep::{evaluate_cell, run_sweep, CellCount, Method, Range, SweepSpec};
use hstab_core::backstepping::{observer_time, run_closed_loop, settling_time, solve_kernels, ClosedLoopConfig};
use hstab_core::charfn::{cosh_sinhc_from_eta, eval_char};
use hstab_core::marginal::threshold_k;
use hstab_core::{
    block_index, fit_decay_rate, k1_imaginary_roots, refine_root, run_simulation, seed_unstable_roots, BlockIndex, SimConfig, SystemParams,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed < limit, format!("took {elapsed:.2?}, limit {limit:?}"))
}

fn params(a: f64, b: f64, lambda: f64, length: f64, k: f64) -> SystemParams {
    SystemParams::new(a, b, lambda, length, k).unwrap()
}

fn lc_via_cli(a: f64, b: f64, lambda: f64) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_hstab"))
        .args(["lc", "--a", &a.to_string(), "--b", &b.to_string(), "--lambda", &lambda.to_string()])
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), format!("lc exited with {}", out.status))?;
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    let row = text.lines().nth(1).ok_or("no data row")?;
    Ok(row.rsplit(',').next().unwrap_or_default().to_string())
}

fn critical_lengths() -> Outcome {
    let start = Instant::now();
    let cases: [(f64, f64, f64, Option<f64>); 5] = [
        (1.0, 1.0, 1.0, Some(PI)),
        (-1.0, 0.0, 1.0, Some(2.0)),
        (-1.0, -1.0, 1.0, Some(PI / 2.0)),
        (-4.0, 1.0, 1.0, Some(0.5 * 0.8f64.atanh())),
        (1.0, -4.0, 1.0, None),
    ];
    for (a, b, lambda, expect) in cases {
        let got = lc_via_cli(a, b, lambda)?;
        match expect {
            Some(v) => {
                let x: f64 = got.parse().map_err(|_| format!("({a},{b},{lambda}): not a number: {got}"))?;
                check((x - v).abs() <= 1e-12, format!("({a},{b},{lambda}): {x} vs {v}"))?;
            }
            None => check(got == "Infinite", format!("({a},{b},{lambda}): expected Infinite, got {got}"))?,
        }
    }
    // pi / c with c = sqrt(ab / lambda)
    let c = (2.0f64 * 3.0 / 1.5).sqrt();
    let x: f64 = lc_via_cli(2.0, 3.0, 1.5)?.parse().map_err(|_| "not a number")?;
    check((x - PI / c).abs() <= 1e-12, format!("pi/c: {x}"))?;
    Ok(format!("5 closed forms to 1e-12 via `hstab lc` in {:.2?}", start.elapsed()))
}

fn spectral_marginal_agreement() -> Outcome {
    let start = Instant::now();
    let mut cells = 0;
    let mut marginal = 0;
    for (a, b, lambda) in [(1.0, 1.0, 1.0), (-1.0, -2.0, 1.0), (0.0, 1.0, 1.0), (-1.0, 0.0, 1.0)] {
        let mut spec = SweepSpec::new(a, b, lambda, Range::new(-0.95, 0.95, 21), Range::new(0.1, 3.0, 21), Method::Spectral);
        spec.exclusion_margin = 0.02;
        let result = run_sweep(&spec, 4).map_err(|e| e.to_string())?;
        for c in &result.cells {
            if let Some(e) = &c.error {
                return Err(format!("({a},{b},{lambda}) k={} L={}: {e}", c.k, c.length));
            }
            match c.count {
                Some(CellCount::Marginal) => marginal += 1,
                Some(CellCount::Count(n)) => {
                    let expect = block_index(&params(a, b, lambda, c.length, c.k)).map_err(|e| e.to_string())?;
                    check(
                        expect == BlockIndex::Count(n),
                        format!("({a},{b},{lambda}) k={} L={}: N={n}, block {expect:?}", c.k, c.length),
                    )?;
                    cells += 1;
                }
                None => return Err("cell without a count".into()),
            }
        }
    }
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!("{cells} cells agree, {marginal} marginal excluded, {:.2?}", start.elapsed()))
}

fn imaginary_root_residuals() -> Outcome {
    let start = Instant::now();
    let p = params(1.0, 1.0, 1.0, 1.0, 1.0);
    let roots = k1_imaginary_roots(&p, 5).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (n, s) in roots.iter().enumerate().skip(1) {
        let r = eval_char(&p, *s).map_err(|e| e.to_string())?.norm();
        check(r < 1e-9, format!("n={n}: |F| = {r:e}"))?;
        worst = worst.max(r);
    }
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("max |F(sigma_n)| = {worst:.1e} for n = 1..5"))
}

fn unstable_roots_large_gain() -> Outcome {
    let start = Instant::now();
    let p = params(1.0, 1.0, 1.0, 1.0, 2.0);
    let seeds = seed_unstable_roots(&p, 5, 10).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for seed in seeds {
        let root = refine_root(&p, seed, 1e-10).map_err(|e| format!("seed {seed}: {e}"))?;
        let r = eval_char(&p, root).map_err(|e| e.to_string())?.norm();
        check(root.re > 0.0 && r < 1e-10, format!("root {root}: |F| = {r:e}"))?;
        worst = worst.max(r);
    }
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("6 roots with Re > 0, max |F| = {worst:.1e}, {:.2?}", start.elapsed()))
}

fn threshold_reproduction() -> Outcome {
    const TARGET: f64 = -0.234;
    let start = Instant::now();
    let (a, b, lambda, length) = (-1.0, -2.0, 1.0, 0.9);
    let rate = |k: f64| -> Result<f64, String> {
        let out = run_simulation(&SimConfig::new(params(a, b, lambda, length, k), 100, 30.0)).map_err(|e| e.to_string())?;
        fit_decay_rate(&out.trace).map_err(|e| e.to_string())
    };
    let mut flip = None;
    let mut prev = (-0.30, rate(-0.30)?);
    let mut k = -0.30;
    while k < -0.15 {
        k += 0.005;
        let r = rate(k)?;
        if (r < 0.0) != (prev.1 < 0.0) {
            flip = Some(0.5 * (prev.0 + k));
            break;
        }
        prev = (k, r);
    }
    let flip = flip.ok_or("no sign flip of the fitted rate in [-0.30, -0.15]")?;
    let flip_ok = (flip - TARGET).abs() <= 0.03;

    let kt = threshold_k(a, b, lambda, length).map_err(|e| e.to_string())?.ok_or("no threshold")?.k;
    let detail = format!("bisection k* = {kt:.9}, target {TARGET} +- 1e-6; simulated flip at {flip:.4}");
    within(start.elapsed(), Duration::from_secs(30))?;
    check(flip_ok, format!("{detail}: flip outside +-0.03"))?;
    check((kt - TARGET).abs() <= 1e-6, format!("{detail}: bisection value misses the target"))?;
    Ok(detail)
}

fn decay_sign_dichotomy() -> Outcome {
    let start = Instant::now();
    let rate = |length: f64| -> Result<f64, String> {
        let out = run_simulation(&SimConfig::new(params(1.0, 1.0, 1.0, length, 0.0), 100, 30.0)).map_err(|e| e.to_string())?;
        fit_decay_rate(&out.trace).map_err(|e| e.to_string())
    };
    let (short, long) = (rate(1.0)?, rate(4.0)?);
    check(short < -0.01, format!("rate at L=1 is {short}"))?;
    check(long >= -0.001, format!("rate at L=4 is {long}"))?;
    within(start.elapsed(), Duration::from_secs(20))?;
    Ok(format!("rate {short:.4} at L=1, {long:.4} at L=4"))
}

fn backstepping_finite_time() -> Outcome {
    let start = Instant::now();
    let p = params(1.0, 1.0, 1.0, 4.0, 0.0);
    let cfg = ClosedLoopConfig::new(p);
    let trace = run_closed_loop(&cfg).map_err(|e| e.to_string())?;
    let (t_plant, t_obs) = (1.1 * settling_time(&p), 1.1 * observer_time(&p));
    check((t_plant - 17.6).abs() < 1e-12 && (t_obs - 8.8).abs() < 1e-12, "settling times")?;
    let plant = trace.plant_trace().at(t_plant).ok_or("trace too short")? / trace.plant_energy[0];
    let error = trace.error_trace().at(t_obs).ok_or("trace too short")? / trace.error_energy[0];
    check(plant < 1e-4, format!("plant energy ratio {plant:e} at t = {t_plant}"))?;
    check(error < 1e-4, format!("error energy ratio {error:e} at t = {t_obs}"))?;
    within(start.elapsed(), Duration::from_secs(120))?;
    Ok(format!("E(17.6)/E0 = {plant:.1e}, error(8.8)/error0 = {error:.1e}, {:.2?}", start.elapsed()))
}

fn property_suites() -> Outcome {
    let start = Instant::now();
    let draws = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let close = |a: Complex64, b: Complex64| (a - b).norm() <= 1e-12 * (1.0 + a.norm().max(b.norm()));

    for _ in 0..draws {
        let p = params(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(0.1..5.0), rng.gen_range(0.0..4.0), rng.gen_range(-3.0..3.0));
        let s = Complex64::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0));
        let (f, g) = (eval_char(&p, s).map_err(|e| e.to_string())?, eval_char(&p, s.conj()).map_err(|e| e.to_string())?);
        check(close(f.conj(), g), format!("conjugate symmetry at {s} for {p:?}"))?;

        let eta = Complex64::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
        let length = rng.gen_range(0.0..5.0);
        let (c1, s1) = cosh_sinhc_from_eta(eta, length).map_err(|e| e.to_string())?;
        let (c2, s2) = cosh_sinhc_from_eta(-eta, length).map_err(|e| e.to_string())?;
        check(close(c1, c2) && close(s1, s2), format!("evenness at eta = {eta}"))?;

        let z = p.with_length(0.0);
        check(eval_char(&z, s).map_err(|e| e.to_string())? == Complex64::new(z.k - 1.0, 0.0), "L = 0 constancy")?;
    }

    for _ in 0..draws {
        let p = params(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.5..2.0), rng.gen_range(0.3..2.0), 0.0);
        let g = solve_kernels(&p, 32).map_err(|e| format!("{p:?}: {e}"))?;
        let modes: Vec<(f64, f64, f64)> = (0..3).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(0.0..5.0), rng.gen_range(0.0..6.0))).collect();
        let field = |x: f64, shift: f64| modes.iter().map(|(c, w, ph)| c * (w * x + ph + shift).cos()).sum::<f64>();
        let y1: Vec<f64> = (0..=32).map(|i| field(g.node(i), 0.0)).collect();
        let y2: Vec<f64> = (0..=32).map(|i| field(g.node(i), 2.0)).collect();
        let (zf, wf) = g.forward_transform(&y1, &y2).map_err(|e| e.to_string())?;
        let (r1, r2) = g.inverse_transform(&zf, &wf).map_err(|e| e.to_string())?;
        let err: f64 = r1.iter().zip(&y1).chain(r2.iter().zip(&y2)).map(|(a, b)| (a - b).powi(2)).sum();
        let norm: f64 = y1.iter().chain(&y2).map(|v| v * v).sum();
        check((err / norm).sqrt() < 1e-6, format!("round trip error {:e} for {p:?}", (err / norm).sqrt()))?;
    }

    for _ in 0..draws {
        let (a, b, lambda) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(0.3..3.0));
        let spec = SweepSpec::new(a, b, lambda, Range::new(-0.9, 0.9, 3), Range::new(0.2, 3.0, 3), Method::Spectral);
        let one = run_sweep(&spec, 1).map_err(|e| e.to_string())?;
        let four = run_sweep(&spec, 4).map_err(|e| e.to_string())?;
        check(one.to_csv() == four.to_csv(), format!("sweep output depends on workers for ({a},{b},{lambda})"))?;
        let pick = rng.gen_range(0..one.cells.len());
        let c = &one.cells[pick];
        check(evaluate_cell(&spec, c.k, c.length) == *c, "cell recomputed in isolation differs")?;
    }
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!(
        "{draws} draws each: conjugate symmetry, evenness, L=0 constancy, round trip, sweep determinism; {:.2?}",
        start.elapsed()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("critical-length exactness", critical_lengths),
        ("spectral/marginal agreement", spectral_marginal_agreement),
        ("imaginary-root residuals", imaginary_root_residuals),
        ("unstable roots for |k| > 1", unstable_roots_large_gain),
        ("threshold reproduction", threshold_reproduction),
        ("decay-sign dichotomy", decay_sign_dichotomy),
        ("backstepping finite time", backstepping_finite_time),
        ("property suites", property_suites),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
