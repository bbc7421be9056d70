//! JSON problem files.
//!
//! ```json
//! {
//!   "agents": [
//!     { "dim": 1, "objective": "(x1 - 1.5)^2 + abs(x1 - 0.5)",
//!       "constraints": ["x1 - 2"], "box": [[1, 2]] }
//!   ],
//!   "laplacian": [[0]],
//!   "consensus_depth": 1,
//!   "init": { "x": [1.0], "lambda": [0.0], "mu": [0.0] },
//!   "solver": { "h": 0.001, "method": "rk4", "t_max": 100, "kkt_tol": 1e-6 }
//! }
//! ```
//!
//! Box sides may be `null`, `"inf"` or `"-inf"` for an unbounded side; a
//! missing `box` means the whole space.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::expr::parse_expr;
use crate::convex::{ConvexExpr, LocalSet};
use crate::dynamics::{AgentProblem, IntegrateOptions, Method, ProblemInstance, SolverState};
use crate::error::{Error, Result};
use crate::pcmatrix::AgentDims;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kkt_tol: Option<f64>,
}

impl SolverSettings {
    /// Fills `opts` with whatever the file specifies.
    pub fn apply(&self, opts: &mut IntegrateOptions) -> Result<()> {
        if let Some(h) = self.h {
            opts.h = h;
        }
        if let Some(m) = &self.method {
            opts.method = m.parse::<Method>()?;
        }
        if let Some(t) = self.t_max {
            opts.t_max = t;
        }
        if let Some(k) = self.kkt_tol {
            opts.kkt_tol = k;
        }
        Ok(())
    }
}

/// Initial state given in a file. Missing `lambda` / `mu` default to zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
}

impl InitSpec {
    pub fn to_state(&self, n_mu: usize) -> SolverState {
        SolverState {
            x: self.x.clone(),
            lambda: self
                .lambda
                .clone()
                .unwrap_or_else(|| vec![0.0; self.x.len()]),
            mu: self.mu.clone().unwrap_or_else(|| vec![0.0; n_mu]),
            t: 0.0,
        }
    }
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct AgentEntry {
    dim: usize,
    objective: String,
    #[serde(default)]
    constraints: Vec<String>,
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    bounds: Option<Vec<(Value, Value)>>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    agents: Vec<AgentEntry>,
    laplacian: Vec<Vec<f64>>,
    consensus_depth: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    init: Option<InitSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    solver: Option<SolverSettings>,
}

/// A parsed problem file.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemFile {
    pub instance: ProblemInstance,
    pub init: Option<InitSpec>,
    pub solver: SolverSettings,
}

fn json_error(e: serde_json::Error) -> Error {
    Error::Parse(format!("line {}, column {}: {e}", e.line(), e.column()))
}

fn bound(v: &Value, default: f64, what: &str) -> Result<f64> {
    match v {
        Value::Null => Ok(default),
        Value::Number(n) => n
            .as_f64()
            .ok_or_else(|| Error::Parse(format!("{what}: number out of range"))),
        Value::String(s) => match s.trim() {
            "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
            "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
            other => Err(Error::Parse(format!(
                "{what}: expected a number, null or \"inf\", got \"{other}\""
            ))),
        },
        other => Err(Error::Parse(format!(
            "{what}: expected a number, null or \"inf\", got {other}"
        ))),
    }
}

fn bound_value(v: f64) -> Value {
    if v == f64::INFINITY {
        Value::String("inf".into())
    } else if v == f64::NEG_INFINITY {
        Value::String("-inf".into())
    } else {
        serde_json::json!(v)
    }
}

fn square_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if let Some(r) = rows.iter().position(|r| r.len() != n) {
        return Err(Error::Parse(format!(
            "{what}: row {} has {} entries, expected {n}",
            r + 1,
            rows[r].len()
        )));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn build(raw: RawProblem) -> Result<ProblemFile> {
    let mut agents = Vec::with_capacity(raw.agents.len());
    for (i, a) in raw.agents.iter().enumerate() {
        let id = i + 1;
        let expr = |src: &str, what: String| -> Result<ConvexExpr> {
            parse_expr(src, a.dim)
                .map_err(|e| Error::Parse(format!("agent {id} {what}: {e} in `{src}`")))
        };
        let objective = expr(&a.objective, "objective".into())?;
        let constraints = a
            .constraints
            .iter()
            .enumerate()
            .map(|(k, c)| expr(c, format!("constraint {}", k + 1)))
            .collect::<Result<Vec<_>>>()?;
        let set = match &a.bounds {
            None => LocalSet::whole(a.dim),
            Some(b) => {
                if b.len() != a.dim {
                    return Err(Error::Parse(format!(
                        "agent {id} box: {} intervals for dimension {}",
                        b.len(),
                        a.dim
                    )));
                }
                let mut lo = Vec::with_capacity(a.dim);
                let mut hi = Vec::with_capacity(a.dim);
                for (k, (l, h)) in b.iter().enumerate() {
                    let what = format!("agent {id} box x{}", k + 1);
                    lo.push(bound(l, f64::NEG_INFINITY, &what)?);
                    hi.push(bound(h, f64::INFINITY, &what)?);
                }
                LocalSet::new_box(lo, hi)
                    .map_err(|e| Error::Parse(format!("agent {id} box: {e}")))?
            }
        };
        agents.push(
            AgentProblem::new(objective, constraints, set)
                .map_err(|e| Error::Parse(format!("agent {id}: {e}")))?,
        );
    }
    let l = square_matrix(&raw.laplacian, "laplacian")?;
    let instance = ProblemInstance::new(agents, l, raw.consensus_depth)?;
    Ok(ProblemFile {
        instance,
        init: raw.init,
        solver: raw.solver.unwrap_or_default(),
    })
}

pub fn parse_problem_str(text: &str) -> Result<ProblemFile> {
    build(serde_json::from_str(text).map_err(json_error)?)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

pub fn parse_problem(path: &Path) -> Result<ProblemFile> {
    let text = read(path)?;
    parse_problem_str(&text).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        e => e,
    })
}

/// Writes a problem file that parses back to the same instance. The
/// Laplacian is written in its normalized sign.
pub fn serialize_problem(p: &ProblemFile) -> Result<String> {
    let agents = p
        .instance
        .agents()
        .iter()
        .map(|a| AgentEntry {
            dim: a.dim(),
            objective: a.objective.to_string(),
            constraints: a
                .constraints
                .components()
                .iter()
                .map(|c| c.to_string())
                .collect(),
            bounds: match &a.local_set {
                LocalSet::Whole { .. } => None,
                LocalSet::Box { lo, hi } => Some(
                    lo.iter()
                        .zip(hi)
                        .map(|(l, h)| (bound_value(*l), bound_value(*h)))
                        .collect(),
                ),
            },
        })
        .collect();
    let raw = RawProblem {
        agents,
        laplacian: matrix_rows(p.instance.laplacian()),
        consensus_depth: p.instance.depth(),
        init: p.init.clone(),
        solver: (p.solver != SolverSettings::default()).then(|| p.solver.clone()),
    };
    serde_json::to_string_pretty(&raw).map_err(|e| Error::Parse(e.to_string()))
}

/// Matrix-only input for the `matrix` command: dimensions, Laplacian and
/// depth, no objectives.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMatrixFile {
    dims: Vec<usize>,
    laplacian: Vec<Vec<f64>>,
    consensus_depth: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixFile {
    pub dims: AgentDims,
    pub laplacian: DMatrix<f64>,
    pub depth: usize,
}

pub fn parse_matrix_str(text: &str) -> Result<MatrixFile> {
    let raw: RawMatrixFile = serde_json::from_str(text).map_err(json_error)?;
    Ok(MatrixFile {
        dims: AgentDims::new(raw.dims)?,
        laplacian: square_matrix(&raw.laplacian, "laplacian")?,
        depth: raw.consensus_depth,
    })
}

/// Reads either a matrix-only file or a full problem file.
pub fn parse_matrix_file(path: &Path) -> Result<MatrixFile> {
    let text = read(path)?;
    let probe: Value = serde_json::from_str(&text).map_err(json_error)?;
    let r = if probe.get("agents").is_some() {
        parse_problem_str(&text).map(|p| MatrixFile {
            dims: p.instance.dims().clone(),
            laplacian: p.instance.laplacian().clone(),
            depth: p.instance.depth(),
        })
    } else {
        parse_matrix_str(&text)
    };
    r.map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        e => e,
    })
}

pub fn parse_init_file(path: &Path) -> Result<InitSpec> {
    let text = read(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {}", path.display(), json_error(e))))
}
