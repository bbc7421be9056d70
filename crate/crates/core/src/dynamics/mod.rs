//! The projected primal-dual flow
//!
//! ```text
//! ẋ = 2δ (P_Ω(x − ∂F(x) − ∂G(x) P⁺ − K λ − K x) − x)
//! λ̇ = K x
//! μ̇ = δ (P⁺ − μ),        P⁺ = max(μ + G(x), 0)
//! ```
//!
//! with `δ = δ_max(K) + 1`, its fixed-step discretizations, KKT residuals,
//! and Lyapunov diagnostics.

mod export;
mod lyapunov;
mod oracle;
mod problem;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::convex::KINK_TOL;
use crate::error::{Error, Result};
use crate::pcmatrix::{
    build_partial_consensus_matrix, norm, spectral_summary, PartialConsensusMatrix,
};

pub use export::{write_trajectory_csv, TRAJECTORY_PRECISION};
pub use lyapunov::{LyapunovValue, REFERENCE_TOL};
pub use oracle::{brute_force_solve, OracleOptions, OracleSolution, MAX_REDUCED_DIM};
pub use problem::{AgentProblem, LocalProblem, ProblemInstance};

/// A state whose norm exceeds this is reported as divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Clone, Debug, PartialEq)]
pub struct SolverState {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    /// Virtual flow time.
    pub t: f64,
}

impl SolverState {
    pub fn zeros(n_x: usize, n_mu: usize) -> Self {
        Self {
            x: vec![0.0; n_x],
            lambda: vec![0.0; n_x],
            mu: vec![0.0; n_mu],
            t: 0.0,
        }
    }

    pub fn norm(&self) -> f64 {
        self.x
            .iter()
            .chain(&self.lambda)
            .chain(&self.mu)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x
            .iter()
            .chain(&self.lambda)
            .chain(&self.mu)
            .all(|v| v.is_finite())
    }

    /// Largest coordinate difference in `x`, `λ` or `μ`.
    pub fn max_abs_diff(&self, other: &SolverState) -> f64 {
        let d = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f64::max)
        };
        d(&self.x, &other.x)
            .max(d(&self.lambda, &other.lambda))
            .max(d(&self.mu, &other.mu))
    }
}

/// Time derivative of a [`SolverState`].
#[derive(Clone, Debug, PartialEq)]
pub struct Derivative {
    pub dx: Vec<f64>,
    pub dlambda: Vec<f64>,
    pub dmu: Vec<f64>,
}

impl Derivative {
    pub fn norm(&self) -> f64 {
        norm(&self.dx)
            .hypot(norm(&self.dlambda))
            .hypot(norm(&self.dmu))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Method {
    Euler,
    #[default]
    Rk4,
}

impl Method {
    /// Right-hand-side evaluations per step.
    pub fn stages(self) -> usize {
        match self {
            Method::Euler => 1,
            Method::Rk4 => 4,
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Ok(Method::Euler),
            "rk4" => Ok(Method::Rk4),
            other => Err(Error::invalid(format!(
                "unknown method `{other}` (expected euler or rk4)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Euler => "euler",
            Method::Rk4 => "rk4",
        })
    }
}

/// Norms of the four KKT conditions. All zero exactly at an equilibrium of
/// the flow.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KktResidual {
    /// `‖x − P_Ω(x − ∂F(x) − ∂G(x)P⁺ − Kλ − Kx)‖`
    pub stationarity: f64,
    /// `‖K x‖`
    pub consensus: f64,
    /// `‖P⁺ − μ‖`
    pub complementarity: f64,
    /// `‖max(G(x), 0)‖`
    pub feasibility: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.consensus)
            .max(self.complementarity)
            .max(self.feasibility)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegrateOptions {
    pub h: f64,
    pub method: Method,
    pub t_max: f64,
    pub kkt_tol: f64,
    /// Keep every `record_every`-th state (the final state is always kept).
    pub record_every: usize,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            h: 1e-3,
            method: Method::Rk4,
            t_max: 100.0,
            kkt_tol: 1e-6,
            record_every: 1,
        }
    }
}

impl IntegrateOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::invalid(format!(
                "step size must be positive, got {}",
                self.h
            )));
        }
        if !(self.t_max > 0.0) {
            return Err(Error::invalid(format!(
                "t_max must be positive, got {}",
                self.t_max
            )));
        }
        if !(self.kkt_tol > 0.0) {
            return Err(Error::invalid(format!(
                "kkt_tol must be positive, got {}",
                self.kkt_tol
            )));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    TimeLimit,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::Converged => "kkt-converged",
            StopReason::TimeLimit => "t_max reached",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub state: SolverState,
    pub objective: f64,
    pub residual: KktResidual,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
    pub stop: StopReason,
    pub steps: usize,
    /// Largest distance of `x` from `Ω` seen after any step.
    pub max_set_violation: f64,
    /// Directed payloads exchanged per step; empty for centralized runs.
    pub message_counts: Vec<usize>,
}

impl Trajectory {
    pub fn final_record(&self) -> &TrajectoryRecord {
        self.records
            .last()
            .expect("trajectory always holds the final state")
    }

    pub fn final_state(&self) -> &SolverState {
        &self.final_record().state
    }
}

/// `δ = δ_max(K) + 1`.
pub fn delta(k: &PartialConsensusMatrix) -> Result<f64> {
    Ok(spectral_summary(k)?.max + 1.0)
}

/// Projection target, constraint values and `P⁺` for one agent.
pub(crate) struct LocalTerms {
    pub proj: Vec<f64>,
    pub g: Vec<f64>,
    pub pplus: Vec<f64>,
}

/// Evaluates the agent-local pieces of the flow given the agent's block of
/// `K x` and `K λ`. Both execution modes call this with identical inputs.
pub(crate) fn local_terms<P: LocalProblem + ?Sized>(
    p: &P,
    x: &[f64],
    mu: &[f64],
    kx: &[f64],
    klam: &[f64],
) -> LocalTerms {
    let mut g = vec![0.0; p.constraint_count()];
    p.constraint_values(x, &mut g);
    let pplus: Vec<f64> = mu.iter().zip(&g).map(|(m, gk)| (m + gk).max(0.0)).collect();
    let mut grad = vec![0.0; x.len()];
    let mut width = vec![0.0; x.len()];
    p.add_objective_subgradient(x, 1.0, &mut grad);
    p.add_objective_kink_weight(x, 1.0, &mut width);
    for (k, &w) in pplus.iter().enumerate() {
        if w != 0.0 {
            p.add_constraint_subgradient(k, x, w, &mut grad);
            p.add_constraint_kink_weight(k, x, w, &mut width);
        }
    }
    let proj = (0..x.len())
        .map(|c| {
            let r = grad[c] + klam[c] + kx[c];
            p.project_coord(c, x[c] - shrink(r, width[c]))
        })
        .collect();
    LocalTerms { proj, g, pplus }
}

/// Minimal-norm element of `r + [-w, w]`. On a kink the whole
/// subdifferential of the coordinate is available, not just the zero choice
/// for the kinked atom; picking its smallest element makes the kink a rest
/// point whenever it is one for the inclusion.
fn shrink(r: f64, w: f64) -> f64 {
    if w == 0.0 {
        r
    } else if r > w {
        r - w
    } else if r < -w {
        r + w
    } else {
        0.0
    }
}

pub(crate) fn local_derivative(
    t: &LocalTerms,
    x: &[f64],
    mu: &[f64],
    delta: f64,
) -> (Vec<f64>, Vec<f64>) {
    let dx = t
        .proj
        .iter()
        .zip(x)
        .map(|(p, xc)| 2.0 * delta * (p - xc))
        .collect();
    let dmu = t
        .pplus
        .iter()
        .zip(mu)
        .map(|(p, m)| delta * (p - m))
        .collect();
    (dx, dmu)
}

/// `a + h d`, elementwise.
pub(crate) fn euler_update(a: &[f64], d: &[f64], h: f64) -> Vec<f64> {
    a.iter().zip(d).map(|(ai, di)| ai + h * di).collect()
}

/// `a + h/6 (k1 + 2 k2 + 2 k3 + k4)`, elementwise.
pub(crate) fn rk4_update(a: &[f64], k: [&[f64]; 4], h: f64) -> Vec<f64> {
    (0..a.len())
        .map(|i| a[i] + h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]))
        .collect()
}

/// Moves coordinates that stepped across the kink of an absolute-value atom
/// onto the kink. A crossing counts if either the accepted update `new` or
/// the Euler predictor `pred = old + h k1` lands on the far side. Without
/// this an explicit step chatters around a kink at amplitude `O(h)`, and rk4
/// can even stall a finite distance from it when its stages straddle the
/// kink and their slopes cancel.
pub(crate) fn snap_kinks(kinks: &[(usize, f64)], old: &[f64], pred: &[f64], new: &mut [f64]) {
    for c in 0..new.len() {
        let before = old[c];
        let mut target: Option<f64> = None;
        for &(var, a) in kinks {
            if var != c || (before - a).abs() < KINK_TOL {
                continue;
            }
            let crossed = (before - a) * (new[c] - a) < 0.0 || (before - a) * (pred[c] - a) < 0.0;
            if crossed && target.map_or(true, |t| (before - a).abs() < (before - t).abs()) {
                target = Some(a);
            }
        }
        if let Some(a) = target {
            new[c] = a;
        }
    }
}

/// The centralized solver for one [`ProblemInstance`].
#[derive(Clone, Debug)]
pub struct Dynamics {
    problem: ProblemInstance,
    k: PartialConsensusMatrix,
    delta: f64,
    mu_offsets: Vec<usize>,
    kinks: Vec<Vec<(usize, f64)>>,
}

impl Dynamics {
    pub fn new(problem: ProblemInstance) -> Result<Self> {
        let k =
            build_partial_consensus_matrix(problem.laplacian(), problem.dims(), problem.depth())?;
        let delta = delta(&k)?;
        let mu_offsets = problem.constraint_offsets();
        let kinks = problem.agents().iter().map(|a| a.kinks()).collect();
        Ok(Self {
            problem,
            k,
            delta,
            mu_offsets,
            kinks,
        })
    }

    pub fn problem(&self) -> &ProblemInstance {
        &self.problem
    }

    pub fn consensus_matrix(&self) -> &PartialConsensusMatrix {
        &self.k
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn zero_state(&self) -> SolverState {
        SolverState::zeros(
            self.problem.dims().total(),
            self.problem.total_constraints(),
        )
    }

    /// `x` uniform in `Ω`, zero multipliers.
    pub fn random_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SolverState> {
        let mut s = self.zero_state();
        for (i, a) in self.problem.agents().iter().enumerate() {
            let xi = a.local_set.sample(rng)?;
            s.x[self.problem.dims().block(i)].copy_from_slice(&xi);
        }
        Ok(s)
    }

    pub fn check_state(&self, s: &SolverState) -> Result<()> {
        let n = self.problem.dims().total();
        let m = self.problem.total_constraints();
        if s.x.len() != n || s.lambda.len() != n || s.mu.len() != m {
            return Err(Error::invalid(format!(
                "state has dimensions (x {}, λ {}, μ {}), expected ({n}, {n}, {m})",
                s.x.len(),
                s.lambda.len(),
                s.mu.len()
            )));
        }
        Ok(())
    }

    fn mu_block(&self, agent: usize) -> std::ops::Range<usize> {
        let start = self.mu_offsets[agent];
        start..start + self.problem.agents()[agent].constraints.len()
    }

    /// Per-agent terms plus `Kx`.
    fn all_terms(&self, s: &SolverState) -> Result<(Vec<LocalTerms>, Vec<f64>)> {
        self.check_state(s)?;
        let kx = self.k.mul_vec(&s.x)?;
        let klam = self.k.mul_vec(&s.lambda)?;
        let dims = self.problem.dims();
        let terms = self
            .problem
            .agents()
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let b = dims.block(i);
                local_terms(
                    a,
                    &s.x[b.clone()],
                    &s.mu[self.mu_block(i)],
                    &kx[b.clone()],
                    &klam[b],
                )
            })
            .collect();
        Ok((terms, kx))
    }

    pub fn rhs(&self, s: &SolverState) -> Result<Derivative> {
        let (terms, kx) = self.all_terms(s)?;
        let dims = self.problem.dims();
        let mut dx = Vec::with_capacity(s.x.len());
        let mut dmu = Vec::with_capacity(s.mu.len());
        for (i, t) in terms.iter().enumerate() {
            let (dxi, dmui) =
                local_derivative(t, &s.x[dims.block(i)], &s.mu[self.mu_block(i)], self.delta);
            dx.extend(dxi);
            dmu.extend(dmui);
        }
        let d = Derivative {
            dx,
            dlambda: kx,
            dmu,
        };
        if !(d
            .dx
            .iter()
            .chain(&d.dlambda)
            .chain(&d.dmu)
            .all(|v| v.is_finite()))
        {
            return Err(Error::NonFinite {
                t: s.t,
                what: "right-hand side".into(),
            });
        }
        Ok(d)
    }

    pub fn kkt_residual(&self, s: &SolverState) -> Result<KktResidual> {
        let (terms, kx) = self.all_terms(s)?;
        let dims = self.problem.dims();
        let (mut st, mut co, mut fe) = (0.0, 0.0, 0.0);
        for (i, t) in terms.iter().enumerate() {
            let xi = &s.x[dims.block(i)];
            let mui = &s.mu[self.mu_block(i)];
            st += t
                .proj
                .iter()
                .zip(xi)
                .map(|(p, x)| (x - p) * (x - p))
                .sum::<f64>();
            co += t
                .pplus
                .iter()
                .zip(mui)
                .map(|(p, m)| (p - m) * (p - m))
                .sum::<f64>();
            fe += t.g.iter().map(|g| g.max(0.0).powi(2)).sum::<f64>();
        }
        Ok(KktResidual {
            stationarity: st.sqrt(),
            consensus: norm(&kx),
            complementarity: co.sqrt(),
            feasibility: fe.sqrt(),
        })
    }

    fn shifted(s: &SolverState, d: &Derivative, h: f64) -> SolverState {
        SolverState {
            x: euler_update(&s.x, &d.dx, h),
            lambda: euler_update(&s.lambda, &d.dlambda, h),
            mu: euler_update(&s.mu, &d.dmu, h),
            t: s.t + h,
        }
    }

    /// One fixed step of size `h`.
    pub fn step(&self, s: &SolverState, h: f64, method: Method) -> Result<SolverState> {
        if !(h > 0.0) {
            return Err(Error::invalid(format!(
                "step size must be positive, got {h}"
            )));
        }
        let k1 = self.rhs(s)?;
        let pred = euler_update(&s.x, &k1.dx, h);
        let mut next = match method {
            Method::Euler => Self::shifted(s, &k1, h),
            Method::Rk4 => {
                let k2 = self.rhs(&Self::shifted(s, &k1, h / 2.0))?;
                let k3 = self.rhs(&Self::shifted(s, &k2, h / 2.0))?;
                let k4 = self.rhs(&Self::shifted(s, &k3, h))?;
                SolverState {
                    x: rk4_update(&s.x, [&k1.dx, &k2.dx, &k3.dx, &k4.dx], h),
                    lambda: rk4_update(
                        &s.lambda,
                        [&k1.dlambda, &k2.dlambda, &k3.dlambda, &k4.dlambda],
                        h,
                    ),
                    mu: rk4_update(&s.mu, [&k1.dmu, &k2.dmu, &k3.dmu, &k4.dmu], h),
                    t: s.t + h,
                }
            }
        };
        let dims = self.problem.dims();
        for i in 0..dims.agents() {
            let b = dims.block(i);
            snap_kinks(
                &self.kinks[i],
                &s.x[b.clone()],
                &pred[b.clone()],
                &mut next.x[b],
            );
        }
        if !next.is_finite() {
            return Err(Error::NonFinite {
                t: next.t,
                what: "state after step".into(),
            });
        }
        Ok(next)
    }

    /// Distance of `x` from `Ω`.
    pub fn set_violation(&self, x: &[f64]) -> f64 {
        let dims = self.problem.dims();
        self.problem
            .agents()
            .iter()
            .enumerate()
            .map(|(i, a)| a.local_set.distance(&x[dims.block(i)]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn integrate(&self, init: &SolverState, opts: &IntegrateOptions) -> Result<Trajectory> {
        self.drive(init, opts, |s| Ok((self.step(s, opts.h, opts.method)?, 0)))
    }

    /// Termination loop shared by the centralized and decentralized runs.
    /// `advance` returns the next state and the number of messages it took.
    pub(crate) fn drive<F>(
        &self,
        init: &SolverState,
        opts: &IntegrateOptions,
        mut advance: F,
    ) -> Result<Trajectory>
    where
        F: FnMut(&SolverState) -> Result<(SolverState, usize)>,
    {
        opts.validate()?;
        self.check_state(init)?;
        let t0 = init.t;
        let t_end = t0 + opts.t_max;
        let mut s = init.clone();
        let mut records = Vec::new();
        let mut message_counts = Vec::new();
        let mut max_set_violation: f64 = 0.0;
        let mut steps = 0usize;
        let stop = loop {
            let residual = self.kkt_residual(&s)?;
            let converged = residual.max() <= opts.kkt_tol;
            let timed_out = s.t >= t_end - 1e-12 * t_end.abs().max(1.0);
            if steps % opts.record_every == 0 || converged || timed_out {
                records.push(TrajectoryRecord {
                    objective: self.problem.objective(&s.x)?,
                    state: s.clone(),
                    residual,
                });
            }
            if converged {
                break StopReason::Converged;
            }
            if timed_out {
                break StopReason::TimeLimit;
            }
            let (mut next, msgs) = advance(&s)?;
            steps += 1;
            next.t = t0 + steps as f64 * opts.h;
            let n = next.norm();
            if n > DIVERGENCE_NORM {
                return Err(Error::Divergence {
                    t: next.t,
                    norm: n,
                    last_state: Box::new(s),
                });
            }
            max_set_violation = max_set_violation.max(self.set_violation(&next.x));
            if msgs > 0 {
                message_counts.push(msgs);
            }
            s = next;
        };
        Ok(Trajectory {
            records,
            stop,
            steps,
            max_set_violation,
            message_counts,
        })
    }
}
