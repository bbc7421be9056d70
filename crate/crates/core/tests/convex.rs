use pcons::convex::*;
use proptest::prelude::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn evaluation_examples() {
    let f1 = ConvexExpr::sum(vec![
        (1.0, ConvexExpr::quadratic(0, 1.5, 1.0).unwrap()),
        (1.0, ConvexExpr::abs(0, 0.5)),
    ])
    .unwrap();
    assert_eq!(f1.eval(&[1.5]).unwrap(), 1.0);
    let g2 = ConvexExpr::exp(1, 5.0);
    assert!(close(g2.eval(&[0.0, 5f64.ln()]).unwrap(), 0.0, 1e-15));
    let g3 = ConvexExpr::affine([(0, 1.0), (1, -1.0)], -0.4);
    assert!(close(g3.eval(&[1.0536, 1.5]).unwrap(), -0.8464, 1e-12));
    assert!(g3.eval(&[1.0]).is_err());
}

#[test]
fn subgradient_examples() {
    let a = ConvexExpr::abs(0, 1.0);
    assert_eq!(a.subgradient(&[2.0]).unwrap(), vec![1.0]);
    assert_eq!(a.subgradient(&[1.0]).unwrap(), vec![0.0]);
    assert_eq!(a.subgradient(&[1.0 + 1e-13]).unwrap(), vec![0.0]);
    assert_eq!(a.subgradient(&[0.0]).unwrap(), vec![-1.0]);
    let q = ConvexExpr::quadratic(0, 1.5, 1.0).unwrap();
    assert!(close(q.subgradient(&[1.0536]).unwrap()[0], -0.8928, 1e-12));
    assert!(q.subgradient(&[]).is_err());
    assert!(ConvexExpr::quadratic(0, 0.0, -1.0).is_err());
}

#[test]
fn projection_examples() {
    let s = LocalSet::uniform_box(1, 1.0, 2.0).unwrap();
    assert_eq!(project_box(&[0.5], &s).unwrap(), vec![1.0]);
    assert_eq!(project_box(&[1.7], &s).unwrap(), vec![1.7]);
    let s2 = LocalSet::uniform_box(2, 1.0, 2.0).unwrap();
    assert_eq!(project_box(&[3.0, 1.5], &s2).unwrap(), vec![2.0, 1.5]);
    assert!(project_box(&[3.0], &s2).is_err());

    assert_eq!(project_nonneg(&[-3.0, 2.0]), vec![0.0, 2.0]);
    assert_eq!(project_nonneg(&[0.0, 0.0]), vec![0.0, 0.0]);
    let g3 = ConvexExpr::affine([(0, 1.0), (1, -1.0)], -0.4)
        .eval(&[1.0536, 1.5])
        .unwrap();
    assert_eq!(project_nonneg(&[0.0 + g3]), vec![0.0]);

    let unbounded =
        LocalSet::new_box(vec![f64::NEG_INFINITY, 0.0], vec![1.0, f64::INFINITY]).unwrap();
    assert_eq!(unbounded.project(&[-1e9, -1.0]), vec![-1e9, 0.0]);
    assert!(LocalSet::new_box(vec![2.0], vec![1.0]).is_err());
}

#[test]
fn normal_cone_examples() {
    let s = LocalSet::uniform_box(1, 1.0, 2.0).unwrap();
    assert!(in_normal_cone(&s, &[1.0], &[-5.0], 1e-12).unwrap());
    assert!(!in_normal_cone(&s, &[1.5], &[0.1], 1e-12).unwrap());
    assert!(in_normal_cone(&s, &[1.5], &[0.0], 1e-12).unwrap());
    assert!(in_normal_cone(&s, &[3.0], &[0.0], 1e-12).is_err());
}

fn atom() -> impl Strategy<Value = ConvexExpr> {
    prop_oneof![
        (0usize..3, -3.0..3.0f64, 0.0..3.0f64)
            .prop_map(|(k, a, c)| ConvexExpr::quadratic(k, a, c).unwrap()),
        (0usize..3, -3.0..3.0f64).prop_map(|(k, a)| ConvexExpr::abs(k, a)),
        (0usize..3, 0.0..10.0f64).prop_map(|(k, c)| ConvexExpr::exp(k, c)),
        (prop::collection::vec(-3.0..3.0f64, 3), -3.0..3.0f64)
            .prop_map(|(c, b)| ConvexExpr::affine(c.into_iter().enumerate(), b)),
    ]
}

fn expr() -> impl Strategy<Value = ConvexExpr> {
    prop_oneof![
        atom(),
        prop::collection::vec((0.0..3.0f64, atom()), 1..4)
            .prop_map(|t| ConvexExpr::sum(t).unwrap()),
    ]
}

/// Mixes generic points with points sitting exactly on a kink.
fn point(e: &ConvexExpr) -> impl Strategy<Value = Vec<f64>> {
    let mut kinks = Vec::new();
    e.kinks(&mut kinks);
    (
        prop::collection::vec(-4.0..4.0f64, 3),
        any::<bool>(),
        any::<prop::sample::Index>(),
    )
        .prop_map(move |(mut x, snap, i)| {
            if snap && !kinks.is_empty() {
                let (k, a) = kinks[i.index(kinks.len())];
                x[k] = a;
            }
            x
        })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn subgradient_inequality((e, x) in expr().prop_flat_map(|e| (Just(e.clone()), point(&e))),
                              y in prop::collection::vec(-4.0..4.0f64, 3)) {
        let g = e.subgradient(&x).unwrap();
        let d: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
        let slack = e.eval(&y).unwrap() - e.eval(&x).unwrap() - dot(&g, &d);
        prop_assert!(slack >= -1e-10, "slack {slack} for {e} at {x:?}");
    }

    #[test]
    fn subgradient_is_gradient_away_from_kinks(e in expr(), x in prop::collection::vec(-4.0..4.0f64, 3)) {
        let mut kinks = Vec::new();
        e.kinks(&mut kinks);
        prop_assume!(kinks.iter().all(|&(k, a)| (x[k] - a).abs() >= 1e-3));
        let g = e.subgradient(&x).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[k] += h;
            m[k] -= h;
            let fd = (e.eval(&p).unwrap() - e.eval(&m).unwrap()) / (2.0 * h);
            prop_assert!((fd - g[k]).abs() <= 1e-5 * g[k].abs().max(1.0), "{e}: fd {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn box_projection_properties(
        bounds in prop::collection::vec((-5.0..5.0f64, 0.0..4.0f64), 1..5),
        seed in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64, 0.0..1.0f64), 5),
    ) {
        let lo: Vec<f64> = bounds.iter().map(|b| b.0).collect();
        let hi: Vec<f64> = bounds.iter().map(|b| b.0 + b.1).collect();
        let s = LocalSet::new_box(lo.clone(), hi.clone()).unwrap();
        let n = lo.len();
        let x: Vec<f64> = seed[..n].iter().map(|v| v.0).collect();
        let y: Vec<f64> = seed[..n].iter().map(|v| v.1).collect();
        let inside: Vec<f64> = (0..n).map(|k| lo[k] + seed[k].2 * (hi[k] - lo[k])).collect();

        let px = s.project(&x);
        prop_assert_eq!(s.project(&px), px.clone());
        let py = s.project(&y);
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        prop_assert!(dist(&px, &py) <= dist(&x, &y) + 1e-15);
        let r: Vec<f64> = px.iter().zip(&x).map(|(p, q)| p - q).collect();
        let t: Vec<f64> = px.iter().zip(&inside).map(|(p, q)| p - q).collect();
        prop_assert!(dot(&r, &t) <= 1e-12);
    }

    #[test]
    fn normal_cone_is_a_cone(
        lo in -3.0..3.0f64, width in 0.1..3.0f64,
        place in 0usize..3, w in -5.0..5.0f64, gamma in 0.0..20.0f64,
    ) {
        let s = LocalSet::uniform_box(1, lo, lo + width).unwrap();
        let x = [lo, lo + width / 2.0, lo + width][place];
        if in_normal_cone(&s, &[x], &[w], 1e-12).unwrap() {
            prop_assert!(in_normal_cone(&s, &[x], &[gamma * w], 1e-12).unwrap());
        }
    }
}
