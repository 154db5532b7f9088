mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use semiprop::classical::{shoot, SolverOptions};
use semiprop::diagram::{enumerate_connected, enumerate_topologies, MarkedDiagram};
use semiprop::evaluate::{evaluate, EvalOptions};
use semiprop::jacobi::{jacobi_frame, mixed_hessian, GreenKernel};
use semiprop::series::{compute_v, propagator_parts, DiagramSet, SeriesOptions};
use semiprop::verify::{
    default_fd_step, hamilton_jacobi_residual, schrodinger_residual, semigroup_leading_check, short_time_suite,
    FdStep,
};
use semiprop::{Error, Potential, PotentialSpec, Result};

use config::RunConfig;
use output::{float, matrix, to_csv, to_json, SCHEMA};

#[derive(Parser, Debug)]
#[command(name = "semiprop", version, about = "Semiclassical hbar-series of propagators via Feynman diagrams")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "SEMIPROP_THREADS")]
    threads: Option<usize>,

    /// Output format; CSV is available for flat tables only.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the classical boundary value problem.
    Solve(ProbeArgs),
    /// Green's function and its derivatives at one time pair.
    Kernel {
        #[command(flatten)]
        probe: ProbeArgs,
        /// `s,u` in [0, t].
        #[arg(long, value_delimiter = ',', num_args = 1)]
        at: Vec<f64>,
    },
    /// List connected diagrams up to a loop order.
    Diagrams {
        #[arg(long, default_value_t = 2)]
        loops: usize,
        /// Include every inequivalent marking.
        #[arg(long)]
        marked: bool,
    },
    /// Evaluate one diagram on a classical path.
    Eval {
        #[command(flatten)]
        probe: ProbeArgs,
        /// Diagram key such as `0-1,0-1,0-1` or `0*-0,0-0`.
        #[arg(long)]
        diagram: String,
    },
    /// Coefficients v_0 .. v_L of the series.
    Series {
        #[command(flatten)]
        probe: ProbeArgs,
        #[arg(long)]
        loops: Option<usize>,
    },
    /// Numerical checks with pass/fail budgets.
    Verify(VerifyArgs),
}

#[derive(Args, Debug, Clone)]
struct ProbeArgs {
    /// System file, or a run file with a `system` field.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    t: Option<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    q0: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    q1: Option<Vec<f64>>,
    /// Initial velocity guess for shooting.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    guess: Option<Vec<f64>>,
    /// Integrator tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Relative quadrature tolerance.
    #[arg(long)]
    quad_tol: Option<f64>,
    /// Gauss-Legendre nodes per time variable.
    #[arg(long)]
    gauss_nodes: Option<usize>,
    /// Seed of the lattice-rule shifts.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Suite {
    Sev,
    Hj,
    ShortTime,
    Semigroup,
}

#[derive(Args, Debug, Clone)]
struct VerifyArgs {
    #[command(flatten)]
    probe: ProbeArgs,
    #[arg(long, value_enum, default_value_t = Suite::Sev)]
    suite: Suite,
    #[arg(long)]
    loops: Option<usize>,
    /// Finite-difference step (default 1e-3 max(1, |q1|, t)).
    #[arg(long)]
    fd_step: Option<f64>,
    /// Combine steps h and h/2 by Richardson extrapolation.
    #[arg(long)]
    richardson: bool,
    /// Residual budget for the Hamilton-Jacobi suite.
    #[arg(long, default_value_t = 1e-6)]
    hj_budget: f64,
    /// Durations for the short-time suite.
    #[arg(long, value_delimiter = ',', default_values_t = [0.2, 0.1, 0.05, 0.025])]
    times: Vec<f64>,
    /// First leg of the semigroup split; the second is t - t0.
    #[arg(long)]
    t0: Option<f64>,
}

/// A fully resolved probe.
struct Run {
    system: PotentialSpec,
    t: f64,
    q0: Vec<f64>,
    q1: Vec<f64>,
    guess: Option<Vec<f64>>,
    loops: usize,
    fd_step: Option<f64>,
    opts: SeriesOptions,
}

fn invalid(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

impl ProbeArgs {
    fn resolve(&self, loops: Option<usize>, fd_step: Option<f64>) -> Result<Run> {
        let cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let system = cfg.system.ok_or_else(|| invalid("--config", "a system file is required"))?;
        let n = system.dim();
        let t = self.t.or(cfg.t).ok_or_else(|| invalid("t", "duration is required"))?;
        let q0 = self.q0.clone().or(cfg.q0).unwrap_or_else(|| vec![0.0; n]);
        let q1 = self.q1.clone().or(cfg.q1).ok_or_else(|| invalid("q1", "target point is required"))?;
        let loops = loops.or(cfg.loops).unwrap_or(2);
        let tol = self.tol.or(cfg.tol);
        let quad_tol = self.quad_tol.or(cfg.quad_tol);
        let fd_step = fd_step.or(cfg.fd_step);
        if !(t > 0.0 && t.is_finite()) {
            return Err(invalid("t", "expected a positive duration"));
        }
        for (name, q) in [("q0", &q0), ("q1", &q1)] {
            if q.len() != n {
                return Err(invalid(name, format!("expected {n} components, got {}", q.len())));
            }
        }
        if let Some(g) = &self.guess {
            if g.len() != n {
                return Err(invalid("guess", format!("expected {n} components, got {}", g.len())));
            }
        }
        if loops > 4 {
            return Err(invalid("loops", "expected a loop order in 0..=4"));
        }
        for (name, v) in [("tol", tol), ("quad_tol", quad_tol), ("fd_step", fd_step)] {
            if matches!(v, Some(x) if !(x > 0.0)) {
                return Err(invalid(name, "expected a positive number"));
            }
        }
        let solver = tol.map(SolverOptions::with_tol).unwrap_or_default();
        let mut eval = EvalOptions::default();
        if let Some(x) = quad_tol {
            eval.tol = x;
        }
        if let Some(k) = self.gauss_nodes {
            eval.gauss_nodes = k;
        }
        if let Some(s) = self.seed.or(cfg.seed) {
            eval.seed = s;
        }
        Ok(Run {
            system,
            t,
            q0,
            q1,
            guess: self.guess.clone(),
            loops,
            fd_step,
            opts: SeriesOptions { solver, eval },
        })
    }
}

impl Run {
    fn probe_json(&self) -> Value {
        json!({ "t": self.t, "q0": self.q0, "q1": self.q1 })
    }
}

enum Outcome {
    Report(String),
    /// Report plus a failed budget.
    Failed(String),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Dimension { .. } | Error::InvalidArgument(_) | Error::OrderExceeded { .. } => 2,
        _ => 3,
    }
}

fn json_only(format: Format) -> Result<()> {
    match format {
        Format::Json => Ok(()),
        Format::Csv => Err(invalid("--format", "csv is available for diagram tables and residual sweeps only")),
    }
}

fn with_schema(command: &str, mut body: Value) -> Value {
    let obj = body.as_object_mut().expect("reports are objects");
    obj.insert("schema".into(), SCHEMA.into());
    obj.insert("command".into(), command.into());
    body
}

fn run(cli: &Cli) -> Result<Outcome> {
    let format = cli.format;
    match &cli.command {
        Command::Solve(probe) => {
            json_only(format)?;
            let r = probe.resolve(None, None)?;
            let path = shoot(&r.system, r.t, &r.q0, &r.q1, r.guess.as_deref(), &r.opts.solver)?;
            Ok(Outcome::Report(to_json(&with_schema(
                "solve",
                json!({
                    "probe": r.probe_json(),
                    "v0": path.v0.as_slice(),
                    "v1": path.v1().as_slice(),
                    "S": path.action(),
                    "iterations": path.iterations,
                    "terminal_error": path.terminal_error,
                }),
            ))))
        }
        Command::Kernel { probe, at } => {
            json_only(format)?;
            let r = probe.resolve(None, None)?;
            let [s, u] = at[..] else {
                return Err(invalid("at", "expected two times `s,u`"));
            };
            if !(0.0..=r.t).contains(&s) || !(0.0..=r.t).contains(&u) {
                return Err(invalid("at", format!("times must lie in [0, {}]", r.t)));
            }
            let path = shoot(&r.system, r.t, &r.q0, &r.q1, r.guess.as_deref(), &r.opts.solver)?;
            let frame = jacobi_frame(&path, r.opts.solver.singular_tol)?;
            let blocks = mixed_hessian(&r.system, &frame)?;
            let kernel = GreenKernel::new(frame);
            let d = kernel.green_derivatives(s, u);
            Ok(Outcome::Report(to_json(&with_schema(
                "kernel",
                json!({
                    "probe": r.probe_json(),
                    "at": [s, u],
                    "G": matrix(&kernel.green(s, u)),
                    "dG": { "ds": matrix(&d.d1), "du": matrix(&d.d2) },
                    "d2G_smooth": matrix(&d.d11_smooth),
                    "jump": matrix(&d.jump),
                    "S01": matrix(&blocks.s01),
                    "cond": blocks.cond,
                }),
            ))))
        }
        Command::Diagrams { loops, marked } => {
            let list: Vec<MarkedDiagram> = if *marked {
                enumerate_connected(*loops)?
            } else {
                enumerate_topologies(*loops)?
            };
            let rows: Vec<_> = list.iter().map(MarkedDiagram::summary).collect();
            match format {
                Format::Json => Ok(Outcome::Report(to_json(&with_schema(
                    "diagrams",
                    json!({ "loops": loops, "marked": marked, "diagrams": rows }),
                )))),
                Format::Csv => Ok(Outcome::Report(to_csv(
                    &["key", "vertices", "edges", "lambda", "marks", "aut"],
                    &rows
                        .iter()
                        .map(|d| {
                            vec![
                                d.key.clone(),
                                d.vertices.to_string(),
                                d.edges.to_string(),
                                d.lambda.to_string(),
                                d.marks.to_string(),
                                d.aut.to_string(),
                            ]
                        })
                        .collect::<Vec<_>>(),
                ))),
            }
        }
        Command::Eval { probe, diagram } => {
            json_only(format)?;
            let r = probe.resolve(None, None)?;
            let d: MarkedDiagram = diagram.parse()?;
            let path = shoot(&r.system, r.t, &r.q0, &r.q1, r.guess.as_deref(), &r.opts.solver)?;
            let kernel = GreenKernel::new(jacobi_frame(&path, r.opts.solver.singular_tol)?);
            let v = evaluate(&r.system, &kernel, &d, &r.opts.eval)?;
            Ok(Outcome::Report(to_json(&with_schema(
                "eval",
                json!({
                    "probe": r.probe_json(),
                    "diagram": d.canonical_key(),
                    "aut": d.automorphism_order(),
                    "value": v.value,
                    "est_error": v.est_error,
                    "n_labelings": v.n_labelings,
                    "n_simplices": v.n_simplices,
                }),
            ))))
        }
        Command::Series { probe, loops } => {
            json_only(format)?;
            let r = probe.resolve(*loops, None)?;
            let set = DiagramSet::new(r.loops)?;
            let res = compute_v(&r.system, r.t, &r.q0, &r.q1, r.loops, r.guess.as_deref(), &set, &r.opts)?;
            let parts = propagator_parts(&res.series);
            let diagrams: Vec<Value> = res
                .diagrams
                .iter()
                .map(|d| {
                    json!({
                        "key": d.key,
                        "lambda": d.lambda,
                        "value": d.value,
                        "est_error": d.est_error,
                        "aut": d.aut,
                        "contribution": d.contribution,
                    })
                })
                .collect();
            Ok(Outcome::Report(to_json(&with_schema(
                "series",
                json!({
                    "probe": r.probe_json(),
                    "loops": r.loops,
                    "v": res.series.coeffs(),
                    "S": res.action,
                    "logdet": res.logdet,
                    "propagator": {
                        "phase": parts.phase,
                        "vanvleck": parts.vanvleck,
                        "correction": parts.correction.coeffs(),
                    },
                    "diagrams": diagrams,
                }),
            ))))
        }
        Command::Verify(args) => verify(args, format),
    }
}

fn verify(args: &VerifyArgs, format: Format) -> Result<Outcome> {
    let r = args.probe.resolve(args.loops, args.fd_step)?;
    let done = |passed: bool, text: String| {
        if passed {
            Outcome::Report(text)
        } else {
            Outcome::Failed(text)
        }
    };
    match args.suite {
        Suite::Sev => {
            let set = DiagramSet::new(r.loops)?;
            let h = r.fd_step.unwrap_or_else(|| default_fd_step(r.t, &r.q1));
            let step = if args.richardson {
                FdStep::richardson(h)
            } else {
                FdStep::central(h)
            };
            let rep = schrodinger_residual(&r.system, r.t, &r.q0, &r.q1, r.loops, r.guess.as_deref(), &set, &r.opts, step)?;
            let passed = rep.passed();
            let text = match format {
                Format::Json => to_json(&with_schema(
                    "verify",
                    json!({ "suite": "sev", "probe": r.probe_json(), "richardson": args.richardson, "report": rep, "passed": passed }),
                )),
                Format::Csv => to_csv(
                    &["order", "residual", "budget"],
                    &rep.orders
                        .iter()
                        .zip(&rep.budgets)
                        .enumerate()
                        .map(|(k, (x, b))| vec![k.to_string(), float(*x), float(*b)])
                        .collect::<Vec<_>>(),
                ),
            };
            Ok(done(passed, text))
        }
        Suite::Hj => {
            json_only(format)?;
            let path = shoot(&r.system, r.t, &r.q0, &r.q1, r.guess.as_deref(), &r.opts.solver)?;
            let h = r.fd_step.unwrap_or_else(|| default_fd_step(r.t, &r.q1));
            let step = if args.richardson {
                FdStep::richardson(h)
            } else {
                FdStep::central(h)
            };
            let rep = hamilton_jacobi_residual(&r.system, &path, step, &r.opts.solver)?;
            let passed = rep.source < args.hj_budget && rep.target < args.hj_budget;
            Ok(done(
                passed,
                to_json(&with_schema(
                    "verify",
                    json!({ "suite": "hj", "probe": r.probe_json(), "richardson": args.richardson, "budget": args.hj_budget, "report": rep, "passed": passed }),
                )),
            ))
        }
        Suite::ShortTime => {
            if args.times.iter().any(|&t| !(t > 0.0)) {
                return Err(invalid("times", "durations must be positive"));
            }
            let set = if r.loops >= 2 { Some(DiagramSet::new(2)?) } else { None };
            let rep = short_time_suite(&r.system, &r.q1, &args.times, set.as_ref(), &r.opts)?;
            // lower bounds on the rates: (a) O(t), (b) O(t), (c) O(t²); a missing slope means an exact zero
            let bounds = [(rep.slope_hessian, 1.0), (rep.slope_action, 1.0), (rep.slope_drift, 2.0)];
            let passed = rep.ratio_monotone && bounds.iter().all(|(s, b)| s.is_none_or(|s| s >= 0.8 * b));
            let text = match format {
                Format::Json => to_json(&with_schema(
                    "verify",
                    json!({ "suite": "short-time", "q1": r.q1, "report": rep, "passed": passed }),
                )),
                Format::Csv => to_csv(
                    &["t", "hessian_deviation", "action", "drift", "ratio", "v2"],
                    &rep.rows
                        .iter()
                        .map(|row| {
                            vec![
                                float(row.t),
                                float(row.hessian_deviation),
                                float(row.action),
                                float(row.drift),
                                float(row.ratio),
                                row.v2.map(float).unwrap_or_default(),
                            ]
                        })
                        .collect::<Vec<_>>(),
                ),
            };
            Ok(done(passed, text))
        }
        Suite::Semigroup => {
            json_only(format)?;
            let t0 = args.t0.unwrap_or(0.5 * r.t);
            if !(t0 > 0.0 && t0 < r.t) {
                return Err(invalid("t0", format!("expected a split point in (0, {})", r.t)));
            }
            let rep = semigroup_leading_check(&r.system, t0, r.t - t0, &r.q0, &r.q1, r.guess.as_deref(), &r.opts.solver)?;
            let passed = rep.action_defect < 1e-8 && rep.vanvleck_defect < 1e-6 && rep.morse_additive;
            Ok(done(
                passed,
                to_json(&with_schema(
                    "verify",
                    json!({ "suite": "semigroup", "probe": r.probe_json(), "t0": t0, "t1": r.t - t0, "report": rep, "passed": passed }),
                )),
            ))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("semiprop: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(Outcome::Report(text)) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Ok(Outcome::Failed(text)) => {
            print!("{text}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("semiprop: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
