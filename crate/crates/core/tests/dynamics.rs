mod common;

use common::*;
use nalgebra::DMatrix;
use pcons::convex::{ConvexExpr, LocalSet};
use pcons::dynamics::*;
use pcons::pcmatrix::{build_partial_consensus_matrix, consensus_components_agree, AgentDims};
use pcons::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn single(objective: ConvexExpr, constraints: Vec<ConvexExpr>, set: LocalSet) -> Dynamics {
    let a = AgentProblem::new(objective, constraints, set).unwrap();
    Dynamics::new(ProblemInstance::new(vec![a], DMatrix::zeros(1, 1), 1).unwrap()).unwrap()
}

fn quad() -> Dynamics {
    single(
        ConvexExpr::quadratic(0, 1.5, 1.0).unwrap(),
        vec![],
        LocalSet::whole(1),
    )
}

fn at(x: f64) -> SolverState {
    SolverState {
        x: vec![x],
        lambda: vec![0.0],
        mu: vec![],
        t: 0.0,
    }
}

fn opts(kkt_tol: f64) -> IntegrateOptions {
    IntegrateOptions {
        kkt_tol,
        record_every: 1,
        ..Default::default()
    }
}

fn converged(d: &Dynamics, kkt_tol: f64) -> Trajectory {
    let t = d.integrate(&d.zero_state(), &opts(kkt_tol)).unwrap();
    assert_eq!(t.stop, StopReason::Converged);
    t
}

#[test]
fn delta_examples() {
    let k = build_partial_consensus_matrix(
        &complete_laplacian(3),
        &AgentDims::new(vec![3, 4, 5]).unwrap(),
        3,
    )
    .unwrap();
    assert!((delta(&k).unwrap() - 4.0).abs() < 1e-12);
    let d = Dynamics::new(example2()).unwrap();
    assert!((d.delta() - 4.0).abs() < 1e-12);
    assert_eq!(quad().delta(), 1.0);
}

#[test]
fn rhs_and_step_on_a_single_quadratic() {
    let d = quad();
    assert_eq!(d.rhs(&at(1.5)).unwrap().dx, vec![0.0]);
    assert_eq!(d.rhs(&at(0.0)).unwrap().dx, vec![6.0]);
    let s = d.step(&at(0.0), 0.1, Method::Euler).unwrap();
    assert!((s.x[0] - 0.6).abs() < 1e-15);
    assert!((s.t - 0.1).abs() < 1e-15);
    for m in [Method::Euler, Method::Rk4] {
        assert_eq!(d.step(&at(1.5), 0.1, m).unwrap().x, vec![1.5]);
    }
    assert!(d.rhs(&SolverState::zeros(2, 0)).is_err());
    assert!(d.step(&at(0.0), 0.0, Method::Euler).is_err());
}

#[test]
fn euler_and_rk4_differ_at_second_order() {
    let d = quad();
    let gap = |h: f64| {
        let e = d.step(&at(0.0), h, Method::Euler).unwrap().x[0];
        let r = d.step(&at(0.0), h, Method::Rk4).unwrap().x[0];
        (e - r).abs()
    };
    for h in [0.02, 0.01, 0.005] {
        let ratio = gap(h) / gap(h / 2.0);
        assert!((3.6..4.4).contains(&ratio), "h={h}: ratio {ratio}");
    }
}

#[test]
fn single_quadratic_converges() {
    let t = converged(&quad(), 1e-6);
    assert!((t.final_state().x[0] - 1.5).abs() < 1e-6);
}

/// The minimizer sits on a kink where the other atom's slope does not
/// vanish; zero for the kinked atom alone would keep kicking the state off.
#[test]
fn weighted_kinks_settle_exactly() {
    let f = ConvexExpr::sum(vec![
        (1.96, ConvexExpr::abs(0, -0.604)),
        (1.23, ConvexExpr::abs(0, 0.62)),
    ])
    .unwrap();
    let d = single(f, vec![], LocalSet::whole(1));
    for method in [Method::Euler, Method::Rk4] {
        let o = IntegrateOptions {
            method,
            kkt_tol: 1e-12,
            ..Default::default()
        };
        let t = d.integrate(&at(2.0), &o).unwrap();
        assert_eq!(t.stop, StopReason::Converged);
        assert_eq!(t.final_state().x, vec![-0.604]);
        assert_eq!(d.rhs(t.final_state()).unwrap().dx, vec![0.0]);
    }
}

#[test]
fn time_limit_stops_after_one_step() {
    let d = Dynamics::new(example2()).unwrap();
    let o = IntegrateOptions {
        t_max: 0.001,
        ..Default::default()
    };
    let t = d.integrate(&d.zero_state(), &o).unwrap();
    assert_eq!(t.stop, StopReason::TimeLimit);
    assert_eq!(t.steps, 1);
    assert_eq!(t.stop.to_string(), "t_max reached");
}

#[test]
fn example_converges_to_consensus_and_feasibility() {
    let d = Dynamics::new(example2()).unwrap();
    let tol = 1e-6;
    let t = converged(&d, tol);
    let s = t.final_state();
    let r = t.final_record().residual;
    assert!(r.max() <= tol);
    assert!(d
        .consensus_matrix()
        .mul_vec(&s.x)
        .unwrap()
        .iter()
        .all(|v| v.abs() <= 10.0 * tol));
    assert!(consensus_components_agree(d.problem().dims(), 1, &s.x, 10.0 * tol).unwrap());
    assert!((s.x[0] - s.x[1]).abs() <= 1e-6 && (s.x[0] - s.x[3]).abs() <= 1e-6);
    assert!(d
        .problem()
        .constraints(&s.x)
        .unwrap()
        .iter()
        .all(|g| *g <= tol));
    assert_eq!(d.set_violation(&s.x), 0.0);
    // residual recorded with the state matches a fresh evaluation
    assert_eq!(d.kkt_residual(s).unwrap(), r);
}

#[test]
fn residual_examples() {
    // stationary, interior, inactive constraint
    let d = single(
        ConvexExpr::quadratic(0, 1.5, 1.0).unwrap(),
        vec![ConvexExpr::affine([(0, 1.0)], -5.0)],
        LocalSet::uniform_box(1, 0.0, 3.0).unwrap(),
    );
    let s = SolverState {
        x: vec![1.5],
        lambda: vec![0.0],
        mu: vec![0.0],
        t: 0.0,
    };
    let r = d.kkt_residual(&s).unwrap();
    assert_eq!(
        (
            r.stationarity,
            r.consensus,
            r.complementarity,
            r.feasibility
        ),
        (0.0, 0.0, 0.0, 0.0)
    );

    let agents = (0..3)
        .map(|_| AgentProblem::new(ConvexExpr::constant(0.0), vec![], LocalSet::whole(1)).unwrap())
        .collect();
    let d = Dynamics::new(ProblemInstance::new(agents, complete_laplacian(3), 1).unwrap()).unwrap();
    let s = SolverState {
        x: vec![0.0, 1.0, 0.0],
        lambda: vec![0.0; 3],
        mu: vec![],
        t: 0.0,
    };
    let expected = (1.0f64 + 4.0 + 1.0).sqrt();
    assert!((d.kkt_residual(&s).unwrap().consensus - expected).abs() < 1e-15);
}

#[test]
fn equilibrium_iff_zero_residual() {
    let d = Dynamics::new(example2()).unwrap();
    let t = converged(&d, 1e-10);
    let s = t.final_state();
    assert!(d.rhs(s).unwrap().norm() <= 1e-8);
    assert!(d.kkt_residual(s).unwrap().max() <= 1e-8);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let mut p = s.clone();
        for v in
            p.x.iter_mut()
                .chain(p.lambda.iter_mut())
                .chain(p.mu.iter_mut())
        {
            *v += rng.gen_range(-1e-3..1e-3);
        }
        assert!(d.kkt_residual(&p).unwrap().max() > 0.0);
        assert!(d.rhs(&p).unwrap().norm() > 0.0);
    }
}

#[test]
fn lyapunov_examples() {
    let d = Dynamics::new(example2()).unwrap();
    let reference = converged(&d, 1e-10).final_state().clone();
    let v = d.eval_lyapunov(&reference, &reference).unwrap();
    assert!(v.v2.abs() < 1e-12 && v.v3 == 0.0 && v.v4 == 0.0);
    assert_eq!(v.v, v.v1 + v.v2 + v.v3 + v.v4);

    let mut s = reference.clone();
    s.mu[1] += 1.0;
    assert!((d.eval_lyapunov(&s, &reference).unwrap().v4 - 0.5).abs() < 1e-15);

    // shift every shared coordinate and one free coordinate: K(x − x̂) = 0
    let mut s = reference.clone();
    let dx = [0.01, 0.01, -0.02, 0.01, 0.0];
    for (x, e) in s.x.iter_mut().zip(dx) {
        *x += e;
    }
    let half_sq = 0.5 * dx.iter().map(|e| e * e).sum::<f64>();
    assert!((d.eval_lyapunov(&s, &reference).unwrap().v3 - half_sq).abs() < 1e-15);

    assert!(matches!(
        d.eval_lyapunov(&reference, &d.zero_state()),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn lyapunov_descends_along_the_example_trajectory() {
    let d = Dynamics::new(example2()).unwrap();
    let t = converged(&d, 1e-10);
    let reference = t.final_state();
    let h = 1e-3;
    let vs: Vec<LyapunovValue> = t
        .records
        .iter()
        .map(|r| d.eval_lyapunov(&r.state, reference).unwrap())
        .collect();
    let worst = vs
        .windows(2)
        .map(|w| w[1].v - w[0].v)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(worst <= 10.0 * h * h, "largest increase {worst}");
    assert!(vs
        .iter()
        .all(|v| v.v2 >= -1e-12 && v.v3 >= 0.0 && v.v4 >= 0.0));
    assert!((vs.last().unwrap().v - vs.last().unwrap().v1).abs() < 1e-12);
}

#[test]
fn trajectories_stay_bounded() {
    let d = Dynamics::new(example2()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut inits = vec![d.zero_state()];
    for _ in 0..3 {
        let mut s = d.random_state(&mut rng).unwrap();
        s.lambda
            .iter_mut()
            .for_each(|l| *l = rng.gen_range(-1.0..1.0));
        inits.push(s);
    }
    let reference = converged(&d, 1e-10).final_state().clone();
    for init in inits {
        let t = d.integrate(&init, &opts(1e-6)).unwrap();
        let v0 = d.eval_lyapunov(&init, &reference).unwrap().v;
        let sup = t.records.iter().map(|r| r.state.norm()).fold(0.0, f64::max);
        assert!(sup <= 10.0 * (1.0 + init.norm() + v0.abs()), "sup {sup}");
    }
}

#[test]
fn lambda_complement_never_moves() {
    let d = Dynamics::new(example2()).unwrap();
    let mut init = d.zero_state();
    init.lambda = vec![0.1, -0.2, 0.37, 0.4, -1.3];
    let t = d.integrate(&init, &opts(1e-6)).unwrap();
    for r in &t.records {
        assert_eq!(r.state.lambda[2].to_bits(), init.lambda[2].to_bits());
        assert_eq!(r.state.lambda[4].to_bits(), init.lambda[4].to_bits());
    }
}

#[test]
fn halving_the_step_barely_moves_the_limit() {
    let d = Dynamics::new(example2()).unwrap();
    let a = d
        .integrate(
            &d.zero_state(),
            &IntegrateOptions {
                record_every: usize::MAX,
                ..opts(1e-8)
            },
        )
        .unwrap();
    let b = d
        .integrate(
            &d.zero_state(),
            &IntegrateOptions {
                h: 5e-4,
                record_every: usize::MAX,
                ..opts(1e-8)
            },
        )
        .unwrap();
    let diff = a
        .final_state()
        .x
        .iter()
        .zip(&b.final_state().x)
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    assert!(diff <= 1e-4, "{diff}");
}

#[test]
fn oracle_examples_and_consistency() {
    let p = example2();
    let o = brute_force_solve(&p, &OracleOptions::default()).unwrap();
    assert!((o.value - 0.75).abs() < 1e-6);
    assert!((o.shared[0] - 1.0).abs() < 1e-9);
    assert!((o.x[2] - 1.5).abs() < 1e-9 && (o.x[4] - 1.5).abs() < 1e-9);

    let reported = [1.0536, 1.0536, 1.5858, 1.0536, 1.5];
    assert!((p.objective(&reported).unwrap() - 0.8675).abs() < 1e-3);

    let d = Dynamics::new(p).unwrap();
    let f = converged(&d, 1e-6).final_record().objective;
    // grid resolution bound below, KKT-tolerance bound above
    assert!(
        f >= o.value - 2e-3 && f <= o.value + 1e-4,
        "{f} vs {}",
        o.value
    );

    let q = single(
        ConvexExpr::quadratic(0, 1.5, 1.0).unwrap(),
        vec![],
        LocalSet::uniform_box(1, 1.0, 2.0).unwrap(),
    );
    let o = brute_force_solve(q.problem(), &OracleOptions::default()).unwrap();
    assert!((o.x[0] - 1.5).abs() < 1e-9 && o.value.abs() < 1e-12);

    assert!(brute_force_solve(quad().problem(), &OracleOptions::default()).is_err());
    let wide = single(
        ConvexExpr::constant(0.0),
        vec![],
        LocalSet::uniform_box(5, 0.0, 1.0).unwrap(),
    );
    assert!(brute_force_solve(wide.problem(), &OracleOptions::default()).is_err());
}

#[test]
fn explicit_blow_up_is_reported_as_divergence() {
    let d = single(
        ConvexExpr::quadratic(0, 0.0, 1000.0).unwrap(),
        vec![],
        LocalSet::whole(1),
    );
    let o = IntegrateOptions {
        h: 0.1,
        method: Method::Euler,
        ..Default::default()
    };
    match d.integrate(&at(1.0), &o) {
        Err(Error::Divergence {
            last_state, norm, ..
        }) => {
            assert!(norm > DIVERGENCE_NORM);
            assert!(last_state.is_finite() && last_state.norm() <= DIVERGENCE_NORM);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn trajectory_csv_layout() {
    let d = Dynamics::new(example2()).unwrap();
    let t = d
        .integrate(
            &d.zero_state(),
            &IntegrateOptions {
                t_max: 0.003,
                ..Default::default()
            },
        )
        .unwrap();
    let mut out = Vec::new();
    write_trajectory_csv(&mut out, &t, None).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("t,x_1,x_2,x_3,x_4,x_5,lambda_1,"));
    assert!(header.ends_with(
        "mu_3,objective,res_stationarity,res_consensus,res_complementarity,res_feasibility"
    ));
    assert_eq!(lines.count(), t.records.len());

    let vs = vec![0.5; t.records.len()];
    let mut out = Vec::new();
    write_trajectory_csv(&mut out, &t, Some(&vs)).unwrap();
    assert!(String::from_utf8(out)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .ends_with(",V"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Random bounded instances: converged states certify as equilibria.
    #[test]
    fn random_instances_reach_certified_equilibria(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_instance(&mut rng, 3, 2);
        let d = Dynamics::new(p).unwrap();
        let init = d.random_state(&mut rng).unwrap();
        let o = IntegrateOptions { t_max: 60.0, record_every: usize::MAX, ..Default::default() };
        let t = d.integrate(&init, &o).unwrap();
        prop_assume!(t.stop == StopReason::Converged);
        let s = t.final_state();
        prop_assert!(d.kkt_residual(s).unwrap().max() <= 1e-6);
        prop_assert!(d.rhs(s).unwrap().norm() <= 1e-4);
    }
}
