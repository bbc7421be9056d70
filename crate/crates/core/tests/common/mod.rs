#![allow(dead_code)]

use std::cell::Cell;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use pcons::cli::parse_problem;
use pcons::convex::{ConvexExpr, LocalSet};
use pcons::dynamics::{AgentProblem, Dynamics, LocalProblem, ProblemInstance, SolverState};
use pcons::network::{build_agents_with, Message, Network};
use pcons::pcmatrix::AgentDims;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

pub fn example2() -> ProblemInstance {
    parse_problem(&fixture("example2.json")).unwrap().instance
}

pub fn complete_laplacian(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if i == j { n as f64 - 1.0 } else { -1.0 })
}

pub fn example1_k3() -> DMatrix<f64> {
    #[rustfmt::skip]
    let rows: [[i8; 12]; 12] = [
        [ 2, 0, 0,-1, 0, 0, 0,-1, 0, 0, 0, 0],
        [ 0, 2, 0, 0,-1, 0, 0, 0,-1, 0, 0, 0],
        [ 0, 0, 2, 0, 0,-1, 0, 0, 0,-1, 0, 0],
        [-1, 0, 0, 2, 0, 0, 0,-1, 0, 0, 0, 0],
        [ 0,-1, 0, 0, 2, 0, 0, 0,-1, 0, 0, 0],
        [ 0, 0,-1, 0, 0, 2, 0, 0, 0,-1, 0, 0],
        [ 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0],
        [-1, 0, 0,-1, 0, 0, 0, 2, 0, 0, 0, 0],
        [ 0,-1, 0, 0,-1, 0, 0, 0, 2, 0, 0, 0],
        [ 0, 0,-1, 0, 0,-1, 0, 0, 0, 2, 0, 0],
        [ 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0],
        [ 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0],
    ];
    DMatrix::from_fn(12, 12, |i, j| rows[i][j] as f64)
}

/// Random connected graph: a random spanning tree plus extra edges. Weights
/// are small integers when `integer`, otherwise reals in [0.5, 3].
pub fn random_laplacian<R: Rng>(rng: &mut R, n: usize, integer: bool) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n, n);
    let weight = |rng: &mut R| {
        if integer {
            rng.gen_range(1..=3) as f64
        } else {
            rng.gen_range(0.5..3.0)
        }
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let add = |l: &mut DMatrix<f64>, a: usize, b: usize, w: f64| {
        l[(a, b)] -= w;
        l[(b, a)] -= w;
        l[(a, a)] += w;
        l[(b, b)] += w;
    };
    for k in 1..n {
        let parent = order[rng.gen_range(0..k)];
        let w = weight(rng);
        add(&mut l, order[k], parent, w);
    }
    for a in 0..n {
        for b in a + 1..n {
            if l[(a, b)] == 0.0 && rng.gen_bool(0.3) {
                let w = weight(rng);
                add(&mut l, a, b, w);
            }
        }
    }
    l
}

pub fn random_dims<R: Rng>(rng: &mut R, agents: usize, max_dim: usize) -> AgentDims {
    AgentDims::new((0..agents).map(|_| rng.gen_range(1..=max_dim)).collect()).unwrap()
}

fn random_atom<R: Rng>(rng: &mut R, dim: usize) -> ConvexExpr {
    let k = rng.gen_range(0..dim);
    match rng.gen_range(0..4) {
        0 => ConvexExpr::quadratic(k, rng.gen_range(-1.0..2.0), rng.gen_range(0.2..2.0)).unwrap(),
        1 => ConvexExpr::abs(k, rng.gen_range(-1.0..2.0)),
        2 => ConvexExpr::exp(k, 0.0),
        _ => ConvexExpr::affine([(k, rng.gen_range(-1.0..1.0))], rng.gen_range(-1.0..1.0)),
    }
}

fn random_constraint<R: Rng>(rng: &mut R, dim: usize) -> ConvexExpr {
    let k = rng.gen_range(0..dim);
    match rng.gen_range(0..3) {
        0 => ConvexExpr::exp(k, rng.gen_range(1.0..8.0)),
        1 => ConvexExpr::sum(vec![
            (1.0, ConvexExpr::abs(k, rng.gen_range(-0.5..0.5))),
            (1.0, ConvexExpr::constant(-1.0)),
        ])
        .unwrap(),
        _ => {
            let j = rng.gen_range(0..dim);
            ConvexExpr::affine(
                [(k, 1.0), (j, -rng.gen_range(0.0..1.0))],
                -rng.gen_range(0.0..1.0),
            )
        }
    }
}

/// A random bounded instance: up to `max_agents` agents of dimension at most
/// `max_dim`, objectives summing two or three atoms, up to two constraints
/// that hold strictly at the origin.
pub fn random_instance<R: Rng>(rng: &mut R, max_agents: usize, max_dim: usize) -> ProblemInstance {
    let n_agents = rng.gen_range(1..=max_agents);
    let dims = random_dims(rng, n_agents, max_dim);
    let depth = rng.gen_range(1..=dims.min());
    let agents = dims
        .as_slice()
        .iter()
        .map(|&d| {
            let terms = (0..rng.gen_range(2..=3))
                .map(|_| (rng.gen_range(0.5..2.0), random_atom(rng, d)))
                .collect();
            let objective = ConvexExpr::sum(terms).unwrap();
            let constraints = (0..rng.gen_range(0..=2))
                .map(|_| random_constraint(rng, d))
                .collect();
            // every box and constraint admits x = 0, so the instance is feasible
            let lo: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..-0.1)).collect();
            let hi: Vec<f64> = (0..d).map(|_| rng.gen_range(0.1..2.5)).collect();
            AgentProblem::new(objective, constraints, LocalSet::new_box(lo, hi).unwrap()).unwrap()
        })
        .collect();
    let integer = rng.gen_bool(0.5);
    let l = random_laplacian(rng, n_agents, integer);
    ProblemInstance::new(agents, l, depth).unwrap()
}

pub fn stack(x: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| x[i]).collect()
}

thread_local! {
    static READER: Cell<usize> = const { Cell::new(0) };
}

/// Wraps an agent's data and records `(owner, reader)` for every access
/// made while some agent's right-hand side is being computed.
struct Spy {
    inner: AgentProblem,
    owner: usize,
    log: Arc<Mutex<Vec<(usize, usize)>>>,
}

impl Spy {
    fn touch(&self) {
        let reader = READER.with(Cell::get);
        if reader != 0 {
            self.log.lock().unwrap().push((self.owner, reader));
        }
    }
}

impl LocalProblem for Spy {
    fn dim(&self) -> usize {
        self.touch();
        self.inner.dim()
    }
    fn constraint_count(&self) -> usize {
        self.touch();
        self.inner.constraint_count()
    }
    fn objective_value(&self, x: &[f64]) -> f64 {
        self.touch();
        self.inner.objective_value(x)
    }
    fn add_objective_subgradient(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        self.touch();
        self.inner.add_objective_subgradient(x, scale, out)
    }
    fn constraint_values(&self, x: &[f64], out: &mut [f64]) {
        self.touch();
        self.inner.constraint_values(x, out)
    }
    fn add_constraint_subgradient(&self, k: usize, x: &[f64], scale: f64, out: &mut [f64]) {
        self.touch();
        self.inner.add_constraint_subgradient(k, x, scale, out)
    }
    fn add_objective_kink_weight(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        self.touch();
        self.inner.add_objective_kink_weight(x, scale, out)
    }
    fn add_constraint_kink_weight(&self, k: usize, x: &[f64], scale: f64, out: &mut [f64]) {
        self.touch();
        self.inner.add_constraint_kink_weight(k, x, scale, out)
    }
    fn project_coord(&self, k: usize, v: f64) -> f64 {
        self.touch();
        self.inner.project_coord(k, v)
    }
    fn kinks(&self) -> Vec<(usize, f64)> {
        self.touch();
        self.inner.kinks()
    }
}

/// Every agent computes its right-hand side from its own data and its
/// inbox; the spies show no agent touches anyone else's `f`, `g` or `Ω`, and
/// the result matches the stacked right-hand side block by block.
pub fn check_locality(p: &ProblemInstance, s: &SolverState) {
    let log = Arc::new(Mutex::new(Vec::new()));
    let spies: Vec<Box<dyn LocalProblem>> = p
        .agents()
        .iter()
        .enumerate()
        .map(|(i, a)| {
            Box::new(Spy {
                inner: a.clone(),
                owner: i + 1,
                log: log.clone(),
            }) as Box<dyn LocalProblem>
        })
        .collect();
    let mut net = Network::new(build_agents_with(p, spies).unwrap());
    net.scatter(s).unwrap();
    let d = Dynamics::new(p.clone()).unwrap();
    let full = d.rhs(s).unwrap();
    let depth = p.depth();
    let agents = net.agents();
    for (i, a) in agents.iter().enumerate() {
        let inbox: Vec<Message> = a
            .neighbor_ids()
            .into_iter()
            .map(|j| {
                let st = agents[j - 1].state();
                Message {
                    sender: j,
                    receiver: a.id(),
                    round: 0,
                    x: st.x[..depth].to_vec(),
                    lambda: st.lambda[..depth].to_vec(),
                }
            })
            .collect();
        READER.with(|r| r.set(a.id()));
        let local = a.local_rhs(a.state(), &inbox).unwrap();
        READER.with(|r| r.set(0));
        let b = p.dims().block(i);
        assert_eq!(local.dx, full.dx[b.clone()]);
        assert_eq!(local.dlambda, full.dlambda[b]);
    }
    let log = log.lock().unwrap();
    for i in 1..=agents.len() {
        assert!(
            log.iter().any(|&(o, r)| o == i && r == i),
            "agent {i} never read its own data"
        );
    }
    assert!(
        log.iter().all(|&(owner, reader)| owner == reader),
        "cross-agent access: {log:?}"
    );
}
