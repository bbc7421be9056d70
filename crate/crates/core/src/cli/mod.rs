//! The `pcons` command line: `solve`, `oracle` and `matrix`.
//!
//! Exit codes: 0 converged, 1 usage or parse error, 2 time limit reached,
//! 3 divergence, 4 I/O failure.

pub mod expr;
pub mod file;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dynamics::{
    brute_force_solve, write_trajectory_csv, Dynamics, IntegrateOptions, Method, OracleOptions,
    SolverState, StopReason, Trajectory, REFERENCE_TOL,
};
use crate::error::{Error, Result};
use crate::network::{run_decentralized, write_message_log, DecentralizedOptions};
use crate::pcmatrix::build_partial_consensus_matrix;

pub use expr::{parse_expr, ExprError};
pub use file::{
    parse_init_file, parse_matrix_file, parse_matrix_str, parse_problem, parse_problem_str,
    serialize_problem, InitSpec, MatrixFile, ProblemFile, SolverSettings,
};

pub const EXIT_CONVERGED: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_TIME_LIMIT: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "pcons",
    version,
    about = "Partial-consensus optimization by projected primal-dual dynamics"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate the flow for a problem file.
    Solve(SolveArgs),
    /// Brute-force grid optimum of a small bounded problem.
    Oracle(OracleArgs),
    /// Print the partial-consensus matrix for a matrix or problem file.
    Matrix(MatrixArgs),
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Args)]
struct SolveArgs {
    problem: PathBuf,
    #[arg(long, default_value = "pcons-out")]
    out: PathBuf,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    kkt_tol: Option<f64>,
    /// Simulate the agents exchanging messages instead of the stacked system.
    #[arg(long)]
    decentralized: bool,
    /// Write every exchanged message to messages.csv (with --decentralized).
    #[arg(long)]
    log_messages: bool,
    /// zeros, random (uniform in the local sets) or a JSON file with x, lambda, mu.
    #[arg(long)]
    init: Option<String>,
    #[arg(long, env = "PCONS_SEED")]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    record_every: usize,
    /// Independent runs, each in <out>/start_<k>; starts after the first use
    /// random initial points.
    #[arg(long, default_value_t = 1)]
    starts: usize,
    /// Append a V column measured against the converged final state.
    #[arg(long)]
    lyapunov: bool,
}

#[derive(Debug, Args)]
struct OracleArgs {
    problem: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    grid: f64,
    /// Extra local refinement passes, each ten times finer.
    #[arg(long, default_value_t = 0)]
    refine: usize,
    /// A solve summary.txt to compare against.
    #[arg(long)]
    compare: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MatrixArgs {
    file: PathBuf,
    /// Write the matrix as CSV here instead of printing it.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::Divergence { .. } | Error::NonFinite { .. } => EXIT_DIVERGENCE,
        _ => EXIT_USAGE,
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
        }
    };
    let r = match cli.command {
        Command::Solve(a) => cmd_solve(&a),
        Command::Oracle(a) => cmd_oracle(&a),
        Command::Matrix(a) => cmd_matrix(&a),
    };
    match r {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.16e}"))
        .collect::<Vec<_>>()
        .join(", ")
}

struct RunOutcome {
    code: i32,
    objective: Option<f64>,
    stop: String,
}

fn initial_state(
    a: &SolveArgs,
    pf: &ProblemFile,
    d: &Dynamics,
    start: usize,
) -> Result<SolverState> {
    let seed = a.seed.unwrap_or(0).wrapping_add(start as u64);
    let mode = match (&a.init, start) {
        (_, k) if k > 0 => "random",
        (Some(s), _) => s.as_str(),
        (None, _) => {
            if let Some(init) = &pf.init {
                return Ok(init.to_state(pf.instance.total_constraints()));
            }
            "zeros"
        }
    };
    let s = match mode {
        "zeros" => d.zero_state(),
        "random" => d.random_state(&mut ChaCha8Rng::seed_from_u64(seed))?,
        path => parse_init_file(Path::new(path))?.to_state(pf.instance.total_constraints()),
    };
    d.check_state(&s)?;
    Ok(s)
}

fn write_summary(
    path: &Path,
    a: &SolveArgs,
    opts: &IntegrateOptions,
    d: &Dynamics,
    stop: &str,
    state: &SolverState,
    steps: usize,
    messages: Option<usize>,
    max_set_violation: f64,
    wall: f64,
) -> Result<f64> {
    let p = d.problem();
    let objective = p.objective(&state.x)?;
    let res = d.kkt_residual(state)?;
    let g = p.constraints(&state.x)?;
    let dims = p.dims();
    let spread = (0..p.depth())
        .map(|k| {
            let vals: Vec<f64> = (0..dims.agents())
                .map(|i| state.x[dims.offset(i) + k])
                .collect();
            vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - vals.iter().cloned().fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);

    let mut s = String::new();
    let _ = writeln!(s, "problem = {}", a.problem.display());
    let _ = writeln!(
        s,
        "mode = {}",
        if a.decentralized {
            "decentralized"
        } else {
            "centralized"
        }
    );
    let _ = writeln!(s, "method = {}", opts.method);
    let _ = writeln!(s, "h = {}", opts.h);
    let _ = writeln!(s, "stop = {stop}");
    let _ = writeln!(s, "t = {}", state.t);
    let _ = writeln!(s, "steps = {steps}");
    let _ = writeln!(s, "wall_time_s = {wall:.6}");
    let _ = writeln!(s, "objective = {objective:.16e}");
    let _ = writeln!(s, "x = {}", fmt_vec(&state.x));
    let _ = writeln!(s, "lambda = {}", fmt_vec(&state.lambda));
    let _ = writeln!(s, "mu = {}", fmt_vec(&state.mu));
    let _ = writeln!(s, "res_stationarity = {:.6e}", res.stationarity);
    let _ = writeln!(s, "res_consensus = {:.6e}", res.consensus);
    let _ = writeln!(s, "res_complementarity = {:.6e}", res.complementarity);
    let _ = writeln!(s, "res_feasibility = {:.6e}", res.feasibility);
    let _ = writeln!(s, "consensus_spread = {spread:.6e}");
    let _ = writeln!(
        s,
        "max_constraint = {:.6e}",
        g.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    );
    let _ = writeln!(s, "set_violation = {:.6e}", d.set_violation(&state.x));
    let _ = writeln!(s, "max_set_violation = {max_set_violation:.6e}");
    if let Some(m) = messages {
        let _ = writeln!(s, "messages = {m}");
    }
    fs::write(path, s)?;
    Ok(objective)
}

fn solve_once(
    a: &SolveArgs,
    pf: &ProblemFile,
    opts: &IntegrateOptions,
    out: &Path,
    start: usize,
) -> Result<RunOutcome> {
    let d = Dynamics::new(pf.instance.clone())?;
    let init = initial_state(a, pf, &d, start)?;
    fs::create_dir_all(out)?;
    let t0 = Instant::now();
    let result: Result<(Trajectory, Vec<_>)> = if a.decentralized {
        run_decentralized(
            &pf.instance,
            &init,
            opts,
            DecentralizedOptions {
                log_messages: a.log_messages,
                parallel: false,
            },
        )
    } else {
        d.integrate(&init, opts).map(|t| (t, Vec::new()))
    };
    let wall = t0.elapsed().as_secs_f64();
    let summary = out.join("summary.txt");
    let (traj, log) = match result {
        Ok(r) => r,
        Err(Error::Divergence {
            t,
            norm,
            last_state,
        }) => {
            log::error!("diverged at t = {t} (norm {norm:e})");
            write_summary(
                &summary,
                a,
                opts,
                &d,
                "divergence",
                &last_state,
                0,
                None,
                f64::NAN,
                wall,
            )?;
            return Ok(RunOutcome {
                code: EXIT_DIVERGENCE,
                objective: None,
                stop: "divergence".into(),
            });
        }
        Err(e) => return Err(e),
    };

    let lyapunov = if a.lyapunov {
        let reference = traj.final_state();
        if d.kkt_residual(reference)?.max() <= REFERENCE_TOL {
            Some(
                traj.records
                    .iter()
                    .map(|r| d.eval_lyapunov(&r.state, reference).map(|v| v.v))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            log::warn!("final state is not an equilibrium; omitting the V column");
            None
        }
    } else {
        None
    };
    let mut w = BufWriter::new(fs::File::create(out.join("trajectory.csv"))?);
    write_trajectory_csv(&mut w, &traj, lyapunov.as_deref())?;
    w.flush()?;
    if a.decentralized && a.log_messages {
        let mut w = BufWriter::new(fs::File::create(out.join("messages.csv"))?);
        write_message_log(&mut w, &log, pf.instance.depth())?;
        w.flush()?;
    }
    let messages = a.decentralized.then(|| traj.message_counts.iter().sum());
    let stop = traj.stop.to_string();
    let objective = write_summary(
        &summary,
        a,
        opts,
        &d,
        &stop,
        traj.final_state(),
        traj.steps,
        messages,
        traj.max_set_violation,
        wall,
    )?;
    Ok(RunOutcome {
        code: match traj.stop {
            StopReason::Converged => EXIT_CONVERGED,
            StopReason::TimeLimit => EXIT_TIME_LIMIT,
        },
        objective: Some(objective),
        stop,
    })
}

fn cmd_solve(a: &SolveArgs) -> Result<i32> {
    let pf = parse_problem(&a.problem)?;
    let mut opts = IntegrateOptions::default();
    pf.solver.apply(&mut opts)?;
    if let Some(h) = a.h {
        opts.h = h;
    }
    if let Some(m) = a.method {
        opts.method = m;
    }
    if let Some(t) = a.t_max {
        opts.t_max = t;
    }
    if let Some(k) = a.kkt_tol {
        opts.kkt_tol = k;
    }
    opts.record_every = a.record_every;
    opts.validate()?;
    if a.log_messages && !a.decentralized {
        log::warn!("--log-messages has no effect without --decentralized");
    }
    if a.starts == 0 {
        return Err(Error::InvalidInput("--starts must be at least 1".into()));
    }

    if a.starts == 1 {
        let r = solve_once(a, &pf, &opts, &a.out, 0)?;
        match r.objective {
            Some(f) => println!(
                "{}: objective {f:.10}, results in {}",
                r.stop,
                a.out.display()
            ),
            None => println!("{}: see {}", r.stop, a.out.join("summary.txt").display()),
        }
        return Ok(r.code);
    }

    let outcomes: Vec<Result<RunOutcome>> = (0..a.starts)
        .into_par_iter()
        .map(|k| solve_once(a, &pf, &opts, &a.out.join(format!("start_{k}")), k))
        .collect();
    let mut report = String::new();
    let mut code = EXIT_CONVERGED;
    let mut objectives = Vec::new();
    for (k, o) in outcomes.into_iter().enumerate() {
        let o = o?;
        code = code.max(o.code);
        let f = o.objective.map_or("-".to_string(), |f| format!("{f:.16e}"));
        let _ = writeln!(report, "start_{k} = {} {f}", o.stop);
        objectives.extend(o.objective);
    }
    if let (Some(lo), Some(hi)) = (
        objectives.iter().cloned().reduce(f64::min),
        objectives.iter().cloned().reduce(f64::max),
    ) {
        let _ = writeln!(report, "objective_spread = {:.6e}", hi - lo);
    }
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("multistart.txt"), &report)?;
    print!("{report}");
    Ok(code)
}

/// Reads `objective = ...` from a solve summary.
pub fn summary_objective(path: &Path) -> Result<f64> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter_map(|l| l.split_once('='))
        .find(|(k, _)| k.trim() == "objective")
        .ok_or_else(|| Error::Parse(format!("{}: no `objective = ` line", path.display())))?
        .1
        .trim()
        .parse()
        .map_err(|e| Error::Parse(format!("{}: bad objective: {e}", path.display())))
}

fn cmd_oracle(a: &OracleArgs) -> Result<i32> {
    let pf = parse_problem(&a.problem)?;
    let sol = brute_force_solve(
        &pf.instance,
        &OracleOptions {
            step: a.grid,
            refine: a.refine,
        },
    )?;
    println!("oracle_objective = {:.16e}", sol.value);
    println!("shared = {}", fmt_vec(&sol.shared));
    println!("x = {}", fmt_vec(&sol.x));
    println!("grid = {:e}", sol.resolution);
    if let Some(path) = &a.compare {
        let f = summary_objective(path)?;
        println!("solver_objective = {f:.16e}");
        println!("gap = {:.6e}", f - sol.value);
    }
    Ok(EXIT_CONVERGED)
}

fn cmd_matrix(a: &MatrixArgs) -> Result<i32> {
    let m = parse_matrix_file(&a.file)?;
    let k = build_partial_consensus_matrix(&m.laplacian, &m.dims, m.depth)?;
    let sets = k.index_sets();
    let one_based = |v: &[usize]| {
        v.iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    let mut text = String::new();
    for i in 0..k.order() {
        let row: Vec<String> = k.matrix().row(i).iter().map(|v| format!("{v}")).collect();
        let _ = writeln!(text, "{}", row.join(","));
    }
    match &a.out {
        Some(p) => fs::write(p, &text)?,
        None => {
            println!("consensus = {}", one_based(sets.consensus.as_slice()));
            println!("complement = {}", one_based(sets.complement.as_slice()));
            print!("{text}");
        }
    }
    Ok(EXIT_CONVERGED)
}
