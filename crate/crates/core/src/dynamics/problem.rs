use nalgebra::DMatrix;
use rand::Rng;

use crate::convex::{ConstraintMap, ConvexExpr, LocalSet};
use crate::error::{Error, Result};
use crate::pcmatrix::{normalize_laplacian, AgentDims};

/// Everything one agent knows: its objective, constraints and local set.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentProblem {
    pub objective: ConvexExpr,
    pub constraints: ConstraintMap,
    pub local_set: LocalSet,
}

impl AgentProblem {
    pub fn new(
        objective: ConvexExpr,
        constraints: Vec<ConvexExpr>,
        local_set: LocalSet,
    ) -> Result<Self> {
        let p = Self {
            objective,
            constraints: ConstraintMap(constraints),
            local_set,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.local_set.dim()
    }

    fn validate(&self) -> Result<()> {
        let dim = self.dim();
        if dim == 0 {
            return Err(Error::invalid("agent dimension must be positive"));
        }
        let check = |e: &ConvexExpr, what: &str| -> Result<()> {
            e.validate()
                .map_err(|err| Error::invalid(format!("{what} `{e}`: {err}")))?;
            if e.arity() > dim {
                return Err(Error::invalid(format!(
                    "{what} `{e}` uses x{} but the agent has dimension {dim}",
                    e.arity()
                )));
            }
            Ok(())
        };
        check(&self.objective, "objective")?;
        for (k, g) in self.constraints.components().iter().enumerate() {
            check(g, &format!("constraint {}", k + 1))?;
        }
        Ok(())
    }
}

/// The per-agent view used by the right-hand side. Everything the flow needs
/// from `f_i`, `g_i` and `Ω_i` goes through this trait, which lets the
/// decentralized simulator hand each agent nothing but its own data.
pub trait LocalProblem: Send + Sync {
    fn dim(&self) -> usize;
    fn constraint_count(&self) -> usize;
    fn objective_value(&self, x: &[f64]) -> f64;
    fn add_objective_subgradient(&self, x: &[f64], scale: f64, out: &mut [f64]);
    fn constraint_values(&self, x: &[f64], out: &mut [f64]);
    fn add_constraint_subgradient(&self, k: usize, x: &[f64], scale: f64, out: &mut [f64]);
    /// Width of the objective's subdifferential per coordinate at `x` (see
    /// [`ConvexExpr`]'s kink handling); zero away from kinks.
    fn add_objective_kink_weight(&self, x: &[f64], scale: f64, out: &mut [f64]);
    fn add_constraint_kink_weight(&self, k: usize, x: &[f64], scale: f64, out: &mut [f64]);
    /// Projection of coordinate `k` onto the local set.
    fn project_coord(&self, k: usize, v: f64) -> f64;
    /// Kink locations `(coordinate, value)` of all absolute-value atoms.
    fn kinks(&self) -> Vec<(usize, f64)>;
}

impl LocalProblem for AgentProblem {
    fn dim(&self) -> usize {
        self.local_set.dim()
    }

    fn constraint_count(&self) -> usize {
        self.constraints.len()
    }

    fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.eval_unchecked(x)
    }

    fn add_objective_subgradient(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        self.objective.add_subgradient(x, scale, out)
    }

    fn constraint_values(&self, x: &[f64], out: &mut [f64]) {
        for (o, g) in out.iter_mut().zip(self.constraints.components()) {
            *o = g.eval_unchecked(x);
        }
    }

    fn add_constraint_subgradient(&self, k: usize, x: &[f64], scale: f64, out: &mut [f64]) {
        self.constraints.components()[k].add_subgradient(x, scale, out)
    }

    fn add_objective_kink_weight(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        self.objective.add_kink_weight(x, scale, out)
    }

    fn add_constraint_kink_weight(&self, k: usize, x: &[f64], scale: f64, out: &mut [f64]) {
        self.constraints.components()[k].add_kink_weight(x, scale, out)
    }

    fn project_coord(&self, k: usize, v: f64) -> f64 {
        self.local_set.project_coord(k, v)
    }

    fn kinks(&self) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        self.objective.kinks(&mut out);
        for g in self.constraints.components() {
            g.kinks(&mut out);
        }
        out
    }
}

/// `min Σ f_i(x_i)` subject to partial consensus of the first `depth`
/// components, `g_i(x_i) ≤ 0` and `x_i ∈ Ω_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemInstance {
    agents: Vec<AgentProblem>,
    laplacian: DMatrix<f64>,
    depth: usize,
    dims: AgentDims,
}

impl ProblemInstance {
    /// Validates the instance. The Laplacian is stored in positive
    /// semi-definite sign convention.
    pub fn new(agents: Vec<AgentProblem>, laplacian: DMatrix<f64>, depth: usize) -> Result<Self> {
        for a in &agents {
            a.validate()?;
        }
        let dims = AgentDims::new(agents.iter().map(|a| a.dim()).collect())?;
        let (laplacian, flipped) = normalize_laplacian(&laplacian)?;
        if flipped {
            log::info!("Laplacian given with negative diagonal; using its negation");
        }
        if laplacian.nrows() != agents.len() {
            return Err(Error::invalid(format!(
                "Laplacian is {0}x{0} but there are {1} agents",
                laplacian.nrows(),
                agents.len()
            )));
        }
        if depth == 0 || depth > dims.min() {
            return Err(Error::invalid(format!(
                "consensus depth {depth} must lie in 1..={}",
                dims.min()
            )));
        }
        Ok(Self {
            agents,
            laplacian,
            depth,
            dims,
        })
    }

    pub fn agents(&self) -> &[AgentProblem] {
        &self.agents
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dims(&self) -> &AgentDims {
        &self.dims
    }

    pub fn constraint_dims(&self) -> Vec<usize> {
        self.agents.iter().map(|a| a.constraints.len()).collect()
    }

    /// Start of each agent's block in the stacked multiplier vector.
    pub fn constraint_offsets(&self) -> Vec<usize> {
        self.agents
            .iter()
            .scan(0, |acc, a| {
                let start = *acc;
                *acc += a.constraints.len();
                Some(start)
            })
            .collect()
    }

    pub fn total_constraints(&self) -> usize {
        self.agents.iter().map(|a| a.constraints.len()).sum()
    }

    /// `F(x) = Σ f_i(x_i)`.
    pub fn objective(&self, x: &[f64]) -> Result<f64> {
        self.check_x(x)?;
        Ok(self
            .agents
            .iter()
            .enumerate()
            .map(|(i, a)| a.objective.eval_unchecked(&x[self.dims.block(i)]))
            .sum())
    }

    /// Stacked `G(x)`.
    pub fn constraints(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_x(x)?;
        Ok(self
            .agents
            .iter()
            .enumerate()
            .flat_map(|(i, a)| {
                let xi = &x[self.dims.block(i)];
                a.constraints
                    .components()
                    .iter()
                    .map(move |g| g.eval_unchecked(xi))
            })
            .collect())
    }

    pub(crate) fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dims.total() {
            return Err(Error::invalid(format!(
                "stacked vector has length {}, expected {}",
                x.len(),
                self.dims.total()
            )));
        }
        Ok(())
    }

    /// Samples for a point with consensus components shared, every `x_i`
    /// strictly inside `Ω_i` and `g_i(x_i) < 0`. Returns the first such
    /// point, or `None` (with a warning) when none was found. A miss is not
    /// proof that the instance violates the constraint qualification.
    pub fn slater_probe<R: Rng + ?Sized>(&self, samples: usize, rng: &mut R) -> Option<Vec<f64>> {
        let n = self.depth;
        let interval = |lo: f64, hi: f64, rng: &mut R| -> Option<f64> {
            let (a, b) = match (lo.is_finite(), hi.is_finite()) {
                (true, true) => (lo, hi),
                (true, false) => (lo, lo + 2.0),
                (false, true) => (hi - 2.0, hi),
                (false, false) => (-1.0, 1.0),
            };
            if a >= b {
                return None;
            }
            let v = rng.gen_range(a..b);
            (v > lo && v < hi).then_some(v)
        };
        'outer: for _ in 0..samples {
            let mut shared = Vec::with_capacity(n);
            for p in 0..n {
                let lo = self
                    .agents
                    .iter()
                    .map(|a| a.local_set.bounds(p).0)
                    .fold(f64::NEG_INFINITY, f64::max);
                let hi = self
                    .agents
                    .iter()
                    .map(|a| a.local_set.bounds(p).1)
                    .fold(f64::INFINITY, f64::min);
                match interval(lo, hi, rng) {
                    Some(v) => shared.push(v),
                    None => continue 'outer,
                }
            }
            let mut x = Vec::with_capacity(self.dims.total());
            for a in &self.agents {
                let start = x.len();
                x.extend_from_slice(&shared);
                for k in n..a.dim() {
                    let (lo, hi) = a.local_set.bounds(k);
                    match interval(lo, hi, rng) {
                        Some(v) => x.push(v),
                        None => continue 'outer,
                    }
                }
                let xi = &x[start..];
                if a.constraints
                    .components()
                    .iter()
                    .any(|g| g.eval_unchecked(xi) >= 0.0)
                {
                    continue 'outer;
                }
            }
            return Some(x);
        }
        log::warn!("no strictly feasible interior point found in {samples} samples; convergence is not guaranteed");
        None
    }
}
