//! In-process simulation of the flow as `N` agents exchanging messages.
//!
//! Each agent owns its objective, constraints and local set and sees the
//! rest of the network only through the consensus components `(x_j^(v_n),
//! λ_j^(v_n))` its neighbors send it. Every right-hand-side evaluation is
//! one synchronous exchange: all agents publish, then all agents compute.
//! Accumulation order matches the centralized matrix product, so both
//! modes produce bit-identical states.

use std::io::{self, Write};

use rayon::prelude::*;

use crate::dynamics::{
    euler_update, local_derivative, local_terms, rk4_update, snap_kinks, AgentProblem, Dynamics,
    IntegrateOptions, LocalProblem, Method, ProblemInstance, SolverState, Trajectory,
};
use crate::error::{Error, Result};
use crate::pcmatrix::is_connected;

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    /// 1-based agent ids.
    pub sender: usize,
    pub receiver: usize,
    /// Exchange counter, one per right-hand-side evaluation.
    pub round: usize,
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
}

/// Agent-local `(x_i, λ_i, μ_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalState {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalDerivative {
    pub dx: Vec<f64>,
    pub dlambda: Vec<f64>,
    pub dmu: Vec<f64>,
}

pub struct Agent {
    id: usize,
    local: Box<dyn LocalProblem>,
    depth: usize,
    delta: f64,
    self_weight: f64,
    /// `(neighbor id, L_ij)`, ascending by id.
    neighbors: Vec<(usize, f64)>,
    kinks: Vec<(usize, f64)>,
    state: LocalState,
}

impl std::fmt::Debug for Agent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Agent")
            .field("id", &self.id)
            .field("neighbors", &self.neighbors)
            .field("state", &self.state)
            .finish_non_exhaustive()
    }
}

impl Agent {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn neighbor_ids(&self) -> Vec<usize> {
        self.neighbors.iter().map(|(j, _)| *j).collect()
    }

    pub fn state(&self) -> &LocalState {
        &self.state
    }

    pub fn set_state(&mut self, state: LocalState) -> Result<()> {
        if state.x.len() != self.local.dim()
            || state.lambda.len() != self.local.dim()
            || state.mu.len() != self.local.constraint_count()
        {
            return Err(Error::invalid(format!(
                "state for agent {} has wrong dimensions",
                self.id
            )));
        }
        self.state = state;
        Ok(())
    }

    fn payload(&self, s: &LocalState, receiver: usize, round: usize) -> Message {
        Message {
            sender: self.id,
            receiver,
            round,
            x: s.x[..self.depth].to_vec(),
            lambda: s.lambda[..self.depth].to_vec(),
        }
    }

    /// Local right-hand side at `s` given one message from every neighbor.
    pub fn local_rhs(&self, s: &LocalState, inbox: &[Message]) -> Result<LocalDerivative> {
        let n = self.depth;
        let mut from = Vec::with_capacity(self.neighbors.len());
        for &(j, w) in &self.neighbors {
            let msg = inbox.iter().find(|m| m.sender == j).ok_or_else(|| {
                Error::Protocol(format!("agent {} missing message from agent {j}", self.id))
            })?;
            if msg.x.len() != n || msg.lambda.len() != n {
                return Err(Error::Protocol(format!("malformed payload from agent {j}")));
            }
            from.push((j, w, msg));
        }
        if let Some(stray) = inbox
            .iter()
            .find(|m| !self.neighbors.iter().any(|(j, _)| *j == m.sender))
        {
            return Err(Error::Protocol(format!(
                "agent {} received a message from non-neighbor {}",
                self.id, stray.sender
            )));
        }

        let dim = self.local.dim();
        let mut kx = vec![0.0; dim];
        let mut klam = vec![0.0; dim];
        for p in 0..n {
            let (mut ax, mut al) = (0.0, 0.0);
            let mut own_done = self.self_weight == 0.0;
            for &(j, w, msg) in &from {
                if !own_done && self.id < j {
                    ax += self.self_weight * s.x[p];
                    al += self.self_weight * s.lambda[p];
                    own_done = true;
                }
                ax += w * msg.x[p];
                al += w * msg.lambda[p];
            }
            if !own_done {
                ax += self.self_weight * s.x[p];
                al += self.self_weight * s.lambda[p];
            }
            kx[p] = ax;
            klam[p] = al;
        }
        let terms = local_terms(self.local.as_ref(), &s.x, &s.mu, &kx, &klam);
        let (dx, dmu) = local_derivative(&terms, &s.x, &s.mu, self.delta);
        Ok(LocalDerivative {
            dx,
            dlambda: kx,
            dmu,
        })
    }
}

/// Builds one agent per block, each owning only its own problem data.
pub fn build_agents(p: &ProblemInstance) -> Result<Vec<Agent>> {
    let locals = p
        .agents()
        .iter()
        .map(|a| Box::new(a.clone()) as Box<dyn LocalProblem>)
        .collect();
    build_agents_with(p, locals)
}

/// Like [`build_agents`] with caller-supplied local problems, one per agent,
/// in agent order. They must describe the same functions as `p`.
pub fn build_agents_with(
    p: &ProblemInstance,
    locals: Vec<Box<dyn LocalProblem>>,
) -> Result<Vec<Agent>> {
    let l = p.laplacian();
    if !is_connected(l) {
        return Err(Error::invalid("communication graph is disconnected"));
    }
    if locals.len() != p.agents().len() {
        return Err(Error::invalid("one local problem per agent is required"));
    }
    // δ needs the global spectrum; it is computed once and handed out.
    let delta = Dynamics::new(p.clone())?.delta();
    let n = p.depth();
    locals
        .into_iter()
        .zip(p.agents())
        .enumerate()
        .map(
            |(i, (local, a)): (usize, (Box<dyn LocalProblem>, &AgentProblem))| {
                if local.dim() != a.dim() || local.constraint_count() != a.constraints.len() {
                    return Err(Error::invalid(format!(
                        "local problem {} does not match the instance",
                        i + 1
                    )));
                }
                let neighbors = (0..l.nrows())
                    .filter(|&j| j != i && l[(i, j)] != 0.0)
                    .map(|j| (j + 1, l[(i, j)]))
                    .collect();
                let kinks = local.kinks();
                let dim = local.dim();
                let m = local.constraint_count();
                Ok(Agent {
                    id: i + 1,
                    local,
                    depth: n,
                    delta,
                    self_weight: l[(i, i)],
                    neighbors,
                    kinks,
                    state: LocalState {
                        x: vec![0.0; dim],
                        lambda: vec![0.0; dim],
                        mu: vec![0.0; m],
                    },
                })
            },
        )
        .collect()
}

/// Driver for a set of agents: rounds, message accounting and the
/// optional message log.
pub struct Network {
    agents: Vec<Agent>,
    exchanges: usize,
    parallel: bool,
    log: Option<Vec<Message>>,
    logging: bool,
}

impl Network {
    pub fn new(agents: Vec<Agent>) -> Self {
        Self {
            agents,
            exchanges: 0,
            parallel: false,
            log: None,
            logging: false,
        }
    }

    /// Evaluate agents concurrently between exchanges. Results are identical
    /// to the sequential schedule.
    pub fn parallel(mut self, on: bool) -> Self {
        self.parallel = on;
        self
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn agents_mut(&mut self) -> &mut [Agent] {
        &mut self.agents
    }

    /// Directed payloads sent in one exchange: `2 |E|`.
    pub fn messages_per_exchange(&self) -> usize {
        self.agents.iter().map(|a| a.neighbors.len()).sum()
    }

    pub fn set_logging(&mut self, on: bool) {
        self.logging = on;
        if on && self.log.is_none() {
            self.log = Some(Vec::new());
        }
    }

    pub fn take_log(&mut self) -> Vec<Message> {
        self.log.take().unwrap_or_default()
    }

    /// Splits a stacked state across the agents.
    pub fn scatter(&mut self, s: &SolverState) -> Result<()> {
        let (mut xo, mut mo) = (0, 0);
        for a in &mut self.agents {
            let d = a.local.dim();
            let m = a.local.constraint_count();
            if s.x.len() < xo + d || s.lambda.len() < xo + d || s.mu.len() < mo + m {
                return Err(Error::invalid("stacked state is too short for the network"));
            }
            a.state = LocalState {
                x: s.x[xo..xo + d].to_vec(),
                lambda: s.lambda[xo..xo + d].to_vec(),
                mu: s.mu[mo..mo + m].to_vec(),
            };
            xo += d;
            mo += m;
        }
        if xo != s.x.len() || mo != s.mu.len() {
            return Err(Error::invalid("stacked state is too long for the network"));
        }
        Ok(())
    }

    pub fn gather(&self, t: f64) -> SolverState {
        let mut s = SolverState::zeros(0, 0);
        s.t = t;
        for a in &self.agents {
            s.x.extend_from_slice(&a.state.x);
            s.lambda.extend_from_slice(&a.state.lambda);
            s.mu.extend_from_slice(&a.state.mu);
        }
        s
    }

    /// One exchange at the given per-agent stage states followed by every
    /// agent's local evaluation. Returns the derivatives and the number of
    /// messages sent.
    fn exchange(&mut self, stage: &[LocalState]) -> Result<(Vec<LocalDerivative>, usize)> {
        let round = self.exchanges;
        self.exchanges += 1;
        let mut inboxes: Vec<Vec<Message>> = vec![Vec::new(); self.agents.len()];
        let mut sent = 0;
        for (a, s) in self.agents.iter().zip(stage) {
            for &(j, _) in &a.neighbors {
                let msg = a.payload(s, j, round);
                if self.logging {
                    if let Some(log) = self.log.as_mut() {
                        log.push(msg.clone());
                    }
                }
                inboxes[j - 1].push(msg);
                sent += 1;
            }
        }
        // barrier: every payload is delivered before anyone computes
        let compute =
            |(a, (s, inbox)): (&Agent, (&LocalState, &Vec<Message>))| a.local_rhs(s, inbox);
        let derivs: Result<Vec<_>> = if self.parallel {
            self.agents
                .par_iter()
                .zip(stage.par_iter().zip(inboxes.par_iter()))
                .map(compute)
                .collect()
        } else {
            self.agents
                .iter()
                .zip(stage.iter().zip(inboxes.iter()))
                .map(compute)
                .collect()
        };
        Ok((derivs?, sent))
    }

    /// One synchronous step of size `h`. Euler takes one exchange, rk4 four.
    pub fn round(&mut self, h: f64, method: Method) -> Result<usize> {
        if !(h > 0.0) {
            return Err(Error::invalid(format!(
                "step size must be positive, got {h}"
            )));
        }
        let base: Vec<LocalState> = self.agents.iter().map(|a| a.state.clone()).collect();
        let shift = |s: &LocalState, d: &LocalDerivative, h: f64| LocalState {
            x: euler_update(&s.x, &d.dx, h),
            lambda: euler_update(&s.lambda, &d.dlambda, h),
            mu: euler_update(&s.mu, &d.dmu, h),
        };
        let (k1, m1) = self.exchange(&base)?;
        let pred: Vec<Vec<f64>> = base
            .iter()
            .zip(&k1)
            .map(|(s, d)| euler_update(&s.x, &d.dx, h))
            .collect();
        let (next, sent): (Vec<LocalState>, usize) = match method {
            Method::Euler => (
                base.iter().zip(&k1).map(|(s, d)| shift(s, d, h)).collect(),
                m1,
            ),
            Method::Rk4 => {
                let s2: Vec<_> = base
                    .iter()
                    .zip(&k1)
                    .map(|(s, d)| shift(s, d, h / 2.0))
                    .collect();
                let (k2, m2) = self.exchange(&s2)?;
                let s3: Vec<_> = base
                    .iter()
                    .zip(&k2)
                    .map(|(s, d)| shift(s, d, h / 2.0))
                    .collect();
                let (k3, m3) = self.exchange(&s3)?;
                let s4: Vec<_> = base.iter().zip(&k3).map(|(s, d)| shift(s, d, h)).collect();
                let (k4, m4) = self.exchange(&s4)?;
                let next = (0..base.len())
                    .map(|i| {
                        let s = &base[i];
                        LocalState {
                            x: rk4_update(&s.x, [&k1[i].dx, &k2[i].dx, &k3[i].dx, &k4[i].dx], h),
                            lambda: rk4_update(
                                &s.lambda,
                                [
                                    &k1[i].dlambda,
                                    &k2[i].dlambda,
                                    &k3[i].dlambda,
                                    &k4[i].dlambda,
                                ],
                                h,
                            ),
                            mu: rk4_update(
                                &s.mu,
                                [&k1[i].dmu, &k2[i].dmu, &k3[i].dmu, &k4[i].dmu],
                                h,
                            ),
                        }
                    })
                    .collect();
                (next, m1 + m2 + m3 + m4)
            }
        };
        for (((a, old), pred), mut new) in self.agents.iter_mut().zip(&base).zip(&pred).zip(next) {
            snap_kinks(&a.kinks, &old.x, pred, &mut new.x);
            a.state = new;
        }
        Ok(sent)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DecentralizedOptions {
    pub log_messages: bool,
    pub parallel: bool,
}

/// Runs the network from `init` with the same termination rules as
/// [`Dynamics::integrate`]. Convergence is monitored on the gathered state;
/// the agents themselves never see it.
pub fn run_decentralized(
    p: &ProblemInstance,
    init: &SolverState,
    opts: &IntegrateOptions,
    net_opts: DecentralizedOptions,
) -> Result<(Trajectory, Vec<Message>)> {
    let monitor = Dynamics::new(p.clone())?;
    monitor.check_state(init)?;
    let mut net = Network::new(build_agents(p)?).parallel(net_opts.parallel);
    net.scatter(init)?;
    let mut step = 0usize;
    let traj = monitor.drive(init, opts, |s| {
        net.set_logging(net_opts.log_messages && step % opts.record_every == 0);
        step += 1;
        let sent = net.round(opts.h, opts.method)?;
        let next = net.gather(s.t + opts.h);
        if !next.is_finite() {
            return Err(Error::NonFinite {
                t: next.t,
                what: "agent state after round".into(),
            });
        }
        Ok((next, sent))
    })?;
    Ok((traj, net.take_log()))
}

/// Message log as CSV: `round,sender,receiver,x_1..x_n,lambda_1..lambda_n`.
pub fn write_message_log<W: Write>(w: &mut W, log: &[Message], depth: usize) -> io::Result<()> {
    let mut header = vec!["round".to_string(), "sender".into(), "receiver".into()];
    header.extend((1..=depth).map(|i| format!("x_{i}")));
    header.extend((1..=depth).map(|i| format!("lambda_{i}")));
    writeln!(w, "{}", header.join(","))?;
    for m in log {
        write!(w, "{},{},{}", m.round, m.sender, m.receiver)?;
        for v in m.x.iter().chain(&m.lambda) {
            write!(w, ",{:.16e}", v)?;
        }
        writeln!(w)?;
    }
    Ok(())
}
