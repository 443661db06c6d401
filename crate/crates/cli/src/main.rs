use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use hstab_cli::config;
use hstab_cli::sweep::{run_sweep, Method, Range, SweepSpec};
use hstab_cli::render_heatmap;
use hstab_core::backstepping::{settling_time, solve_kernels, ClosedLoopConfig, Triangle};
use hstab_core::charfn::eval_char_normalized;
use hstab_core::marginal::{default_height_cap, marginal_curves, CriticalLength};
use hstab_core::simulator::{run_simulation, write_snapshots_csv};
use hstab_core::{count_unstable, critical_length, eval_char, fit_decay_rate, ContourSpec, Error, SimConfig, SystemParams};
use num_complex::Complex64;
use serde_json::json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// Stabilizability of 2x2 hyperbolic systems under boundary feedback.
#[derive(Debug, Parser)]
#[command(name = "hstab", version, args_override_self = true)]
struct Cli {
    /// Output format for emitting commands.
    #[arg(long, value_enum, default_value = "csv", global = true)]
    format: Format,

    /// `key=value` file supplying defaults for the subcommand's flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Copy)]
struct Coupling {
    /// Coupling coefficient of y2 in the first equation.
    #[arg(long)]
    a: f64,
    /// Coupling coefficient of y1 in the second equation.
    #[arg(long)]
    b: f64,
    /// Speed ratio of the second component.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
}

#[derive(Debug, Args, Clone, Copy)]
struct Point {
    #[command(flatten)]
    coupling: Coupling,
    /// Interval length.
    #[arg(long)]
    length: f64,
    /// Proportional feedback gain.
    #[arg(long, default_value_t = 0.0)]
    k: f64,
}

impl Point {
    fn params(&self) -> Result<SystemParams, Error> {
        let c = self.coupling;
        SystemParams::new(c.a, c.b, c.lambda, self.length, self.k)
    }
}

#[derive(Debug, Args, Clone)]
struct SweepArgs {
    #[command(flatten)]
    coupling: Coupling,
    #[arg(long, default_value_t = -0.95)]
    k_min: f64,
    #[arg(long, default_value_t = 0.95)]
    k_max: f64,
    #[arg(long, default_value_t = 21)]
    k_count: usize,
    #[arg(long, default_value_t = 0.1)]
    l_min: f64,
    #[arg(long, default_value_t = 3.0)]
    l_max: f64,
    #[arg(long, default_value_t = 21)]
    l_count: usize,
    #[arg(long, value_enum, default_value = "spectral")]
    method: Method,
    /// Distance to a marginal curve below which a cell is tagged Marginal.
    #[arg(long, default_value_t = 0.02)]
    margin: f64,
    #[arg(long, default_value_t = 100)]
    n_cells: usize,
    #[arg(long, default_value_t = 30.0)]
    t_final: f64,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

impl SweepArgs {
    fn spec(&self) -> SweepSpec {
        let c = self.coupling;
        let mut spec = SweepSpec::new(
            c.a,
            c.b,
            c.lambda,
            Range::new(self.k_min, self.k_max, self.k_count),
            Range::new(self.l_min, self.l_max, self.l_count),
            self.method,
        );
        spec.exclusion_margin = self.margin;
        spec.n_cells = self.n_cells;
        spec.t_final = self.t_final;
        spec
    }
}

#[derive(Debug, Subcommand)]
#[command(allow_negative_numbers = true)]
enum Command {
    /// Critical length L_c for (a, b, lambda).
    #[command(allow_negative_numbers = true)]
    Lc {
        #[command(flatten)]
        coupling: Coupling,
    },
    /// Evaluates the characteristic function at sigma = re + i im.
    #[command(allow_negative_numbers = true)]
    CharEval {
        #[command(flatten)]
        point: Point,
        #[arg(long)]
        re: f64,
        #[arg(long, default_value_t = 0.0)]
        im: f64,
        /// Evaluate H = 2 exp(-QL) F instead of F.
        #[arg(long)]
        normalized: bool,
    },
    /// Counts right-half-plane eigenvalues (|k| < 1).
    #[command(allow_negative_numbers = true)]
    Count {
        #[command(flatten)]
        point: Point,
        /// Fixed contour radius instead of automatic doubling.
        #[arg(long)]
        radius: Option<f64>,
    },
    /// Samples the marginal curves.
    #[command(allow_negative_numbers = true)]
    Marginal {
        #[command(flatten)]
        coupling: Coupling,
        /// Highest curve height to include.
        #[arg(long, default_value_t = 3.0)]
        l_max: f64,
        #[arg(long, default_value_t = 200)]
        samples: usize,
    },
    /// Runs the implicit upwind scheme and emits the energy trace.
    #[command(allow_negative_numbers = true)]
    Simulate {
        #[command(flatten)]
        point: Point,
        #[arg(long, default_value_t = 100)]
        n_cells: usize,
        /// Time step; defaults to 2L/N.
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, default_value_t = 30.0)]
        t_final: f64,
        /// Emit only the fitted decay rate of the energy.
        #[arg(long)]
        rate_only: bool,
        /// Also write `t,x,u,v` snapshots to this file.
        #[arg(long)]
        snapshots: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        every: usize,
    },
    /// Observer-based backstepping closed loop; emits `t,E_plant,E_error,U`.
    #[command(allow_negative_numbers = true)]
    Backstep {
        #[command(flatten)]
        coupling: Coupling,
        #[arg(long)]
        length: f64,
        #[arg(long, default_value_t = 800)]
        n_cells: usize,
        #[arg(long, default_value_t = 128)]
        mesh: usize,
        /// Defaults to 1.1 times the settling time.
        #[arg(long)]
        t_final: Option<f64>,
        /// Record every m-th step.
        #[arg(long, default_value_t = 1)]
        every: usize,
        /// Write kernel tables to PREFIX_lower.csv and PREFIX_upper.csv.
        #[arg(long)]
        kernels: Option<PathBuf>,
    },
    /// Stability sweep over a (k, L) grid; emits `k,L,N,rate,flag`.
    #[command(allow_negative_numbers = true)]
    Sweep(SweepArgs),
    /// Sweep rendered as an SVG heat map.
    #[command(allow_negative_numbers = true)]
    Heatmap {
        #[command(flatten)]
        sweep: SweepArgs,
        #[arg(long, short)]
        output: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Numerical(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(msg) => Failure::Usage(msg),
            e => Failure::Numerical(e),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let args = match with_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let result = run(cli, &mut out).and_then(|()| out.flush().map_err(Failure::from));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("{}: {e}", e.name());
            ExitCode::from(2)
        }
    }
}

/// Expands `--config FILE` into flags placed before the user's own.
fn with_config(args: Vec<String>) -> Result<Vec<String>, String> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        if a == "--config" {
            path = args.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{path}: {e}"))?;
    let entries = config::parse(&text).map_err(|e| e.to_string())?;
    let cmd = Cli::command();
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    let Some(pos) = args.iter().position(|a| names.contains(a)) else {
        return Ok(args);
    };
    let sub = cmd.find_subcommand(&args[pos]).expect("listed above");
    let known: Vec<String> = sub
        .get_arguments()
        .filter_map(|a| a.get_long().map(str::to_string))
        .filter(|n| n != "config")
        .collect();
    Ok(config::splice_args(&args, pos, &entries, &known))
}

fn format_f64(v: f64) -> String {
    if v.is_infinite() {
        "Infinite".into()
    } else {
        v.to_string()
    }
}

fn run(cli: Cli, out: &mut impl Write) -> Result<(), Failure> {
    let format = cli.format;
    match cli.command {
        Command::Lc { coupling: c } => {
            let lc = critical_length(c.a, c.b, c.lambda)?;
            let value = match lc {
                CriticalLength::Finite(v) => json!(v),
                CriticalLength::Infinite => json!("Infinite"),
            };
            match format {
                Format::Csv => writeln!(out, "a,b,lambda,L_c\n{},{},{},{}", c.a, c.b, c.lambda, format_f64(lc.value()))?,
                Format::Json => writeln!(out, "{}", json!({"a": c.a, "b": c.b, "lambda": c.lambda, "L_c": value}))?,
            }
        }
        Command::CharEval { point, re, im, normalized } => {
            let p = point.params()?;
            let sigma = Complex64::new(re, im);
            let f = if normalized { eval_char_normalized(&p, sigma)? } else { eval_char(&p, sigma)? };
            match format {
                Format::Csv => writeln!(out, "re,im\n{},{}", f.re, f.im)?,
                Format::Json => writeln!(out, "{}", json!({"re": f.re, "im": f.im}))?,
            }
        }
        Command::Count { point, radius } => {
            let p = point.params()?;
            let spec = radius.map(ContourSpec::with_radius);
            let r = count_unstable(&p, spec.as_ref())?;
            let verdict = format!("{:?}", r.verdict);
            match format {
                Format::Csv => writeln!(out, "N,verdict,radius,min_abs\n{},{verdict},{},{}", r.n_unstable, r.radius_used, r.min_abs_on_contour)?,
                Format::Json => writeln!(
                    out,
                    "{}",
                    json!({"N": r.n_unstable, "verdict": verdict, "radius": r.radius_used, "min_abs": r.min_abs_on_contour})
                )?,
            }
        }
        Command::Marginal { coupling: c, l_max, samples } => {
            let cap = default_height_cap(l_max).min(l_max.max(0.0));
            let curves = marginal_curves(c.a, c.b, c.lambda, cap)?;
            let rows: Vec<(usize, f64, f64)> = curves
                .iter()
                .flat_map(|cv| cv.sample(samples, l_max).into_iter().map(move |(k, l)| (cv.branch_index, k, l)))
                .collect();
            match format {
                Format::Csv => {
                    writeln!(out, "branch,k,L")?;
                    for (n, k, l) in rows {
                        writeln!(out, "{n},{k},{l}")?;
                    }
                }
                Format::Json => {
                    let v: Vec<_> = rows.iter().map(|&(n, k, l)| json!({"branch": n, "k": k, "L": l})).collect();
                    writeln!(out, "{}", serde_json::Value::Array(v))?;
                }
            }
        }
        Command::Simulate {
            point,
            n_cells,
            dt,
            t_final,
            rate_only,
            snapshots,
            every,
        } => {
            let mut cfg = SimConfig::new(point.params()?, n_cells, t_final);
            if let Some(dt) = dt {
                cfg.dt = dt;
            }
            let sim = run_simulation(&cfg)?;
            if let Some(path) = snapshots {
                write_snapshots_csv(&cfg, every, BufWriter::new(File::create(path)?))?;
            }
            let rate = fit_decay_rate(&sim.trace);
            if rate_only {
                let rate = rate?;
                match format {
                    Format::Csv => writeln!(out, "rate\n{rate}")?,
                    Format::Json => writeln!(out, "{}", json!({ "rate": rate }))?,
                }
            } else {
                match format {
                    Format::Csv => sim.trace.write_csv(&mut *out)?,
                    Format::Json => writeln!(
                        out,
                        "{}",
                        json!({"t": sim.trace.times, "energy": sim.trace.energies, "rate": rate.ok()})
                    )?,
                }
            }
        }
        Command::Backstep {
            coupling: c,
            length,
            n_cells,
            mesh,
            t_final,
            every,
            kernels,
        } => {
            let p = SystemParams::new(c.a, c.b, c.lambda, length, 0.0)?;
            let mut cfg = ClosedLoopConfig::new(p);
            cfg.n_cells = n_cells;
            cfg.dt *= 800.0 / n_cells.max(1) as f64;
            cfg.kernel_mesh_size = mesh;
            cfg.t_final = t_final.unwrap_or(1.1 * settling_time(&p));
            let grid = solve_kernels(&p, mesh)?;
            if let Some(prefix) = kernels {
                let stem = prefix.to_string_lossy().into_owned();
                grid.write_csv(Triangle::Lower, BufWriter::new(File::create(format!("{stem}_lower.csv"))?))?;
                grid.write_csv(Triangle::Upper, BufWriter::new(File::create(format!("{stem}_upper.csv"))?))?;
            }
            let trace = hstab_core::backstepping::run_closed_loop_with(&cfg, &grid)?;
            let keep: Vec<usize> = (0..trace.times.len()).filter(|i| i % every.max(1) == 0).collect();
            match format {
                Format::Csv => {
                    writeln!(out, "t,E_plant,E_error,U")?;
                    for &i in &keep {
                        writeln!(out, "{},{},{},{}", trace.times[i], trace.plant_energy[i], trace.error_energy[i], trace.control[i])?;
                    }
                }
                Format::Json => {
                    let pick = |v: &[f64]| keep.iter().map(|&i| v[i]).collect::<Vec<_>>();
                    writeln!(
                        out,
                        "{}",
                        json!({
                            "t": pick(&trace.times),
                            "E_plant": pick(&trace.plant_energy),
                            "E_error": pick(&trace.error_energy),
                            "U": pick(&trace.control),
                        })
                    )?
                }
            }
        }
        Command::Sweep(args) => {
            let result = run_sweep(&args.spec(), args.jobs)?;
            match format {
                Format::Csv => result.write_csv(&mut *out)?,
                Format::Json => writeln!(out, "{}", serde_json::to_string(&result.cells).expect("cells serialize"))?,
            }
        }
        Command::Heatmap { sweep, output } => {
            let result = run_sweep(&sweep.spec(), sweep.jobs)?;
            render_heatmap(&result, &output)?;
        }
    }
    Ok(())
}
