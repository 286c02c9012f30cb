use bregest::bregman::{
    bregman_distance, cm_cost, map_cost, CmPreset, ConvexFunctional, CostFunctional, Functional,
};
use bregest::model::{Fidelity, FidelityKind, ForwardOperator, Posterior, Prior};
use proptest::prelude::*;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn blur(n: usize) -> impl Strategy<Value = ForwardOperator> {
    prop::collection::vec(0.01..1.0f64, 1..=n).prop_map(move |taps| {
        let s: f64 = taps.iter().sum();
        ForwardOperator::convolution1d(n, taps.iter().map(|t| t / s).collect()).unwrap()
    })
}

fn vector(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05..5.0f64, n)
}

/// Every implemented functional, with points drawn from the positive orthant
/// so the Poisson domain is respected.
fn functional(n: usize, smooth_only: bool) -> BoxedStrategy<Functional> {
    let fidelity = |kind: FidelityKind| {
        (blur(n), prop::collection::vec(0.0..6.0f64, n)).prop_map(move |(op, f)| {
            let f = if kind == FidelityKind::Poisson {
                f.iter().map(|x| x.round()).collect()
            } else {
                f
            };
            Functional::Fidelity(Fidelity::new(kind, op, f).unwrap())
        })
    };
    let mut options: Vec<BoxedStrategy<Functional>> = vec![
        fidelity(FidelityKind::Gaussian).boxed(),
        fidelity(FidelityKind::Poisson).boxed(),
        Just(Functional::Prior(Prior::tikhonov())).boxed(),
        (0.05..1.0f64)
            .prop_map(|d| Functional::Prior(Prior::huber_tv(d).unwrap()))
            .boxed(),
    ];
    if !smooth_only {
        options.push(fidelity(FidelityKind::Laplace).boxed());
        options.push(Just(Functional::Prior(Prior::l1())).boxed());
    }
    prop::strategy::Union::new(options).boxed()
}

fn functional_with_points(
    smooth_only: bool,
    count: usize,
) -> impl Strategy<Value = (Functional, Vec<Vec<f64>>)> {
    (1usize..=5).prop_flat_map(move |n| {
        (
            functional(n, smooth_only),
            prop::collection::vec(vector(n), count),
        )
    })
}

fn scale(f: &Functional, pts: &[&[f64]]) -> f64 {
    1.0 + pts.iter().map(|p| f.value(p).unwrap().abs()).sum::<f64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn distance_is_nonnegative((f, pts) in functional_with_points(false, 2)) {
        prop_assert!(bregman_distance(&f, &pts[0], &pts[1]).unwrap() >= -1e-12);
    }

    #[test]
    fn identity_of_indiscernibles(
        u in vector(3),
        dir in prop::collection::vec(-1.0..1.0f64, 3),
        step in prop_oneof![Just(0.0), Just(1e-7), Just(1e-5), Just(1e-3), Just(0.1), Just(1.0)],
        poisson in any::<bool>(),
        f in prop::collection::vec(1.0..5.0f64, 3),
    ) {
        let functional = if poisson {
            Functional::Fidelity(
                Fidelity::new(FidelityKind::Poisson, ForwardOperator::identity(3).unwrap(), f.iter().map(|x| x.round()).collect()).unwrap(),
            )
        } else {
            Functional::Prior(Prior::tikhonov())
        };
        let v: Vec<f64> = u.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
        let d = bregman_distance(&functional, &v, &u).unwrap();
        if d < 1e-9 {
            let gap = u.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(gap < 1e-4, "D = {d} with ‖a − b‖∞ = {gap}");
        }
        if step == 0.0 {
            prop_assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn convex_in_first_argument((f, pts) in functional_with_points(false, 3)) {
        let mid: Vec<f64> = pts[0].iter().zip(&pts[1]).map(|(a, b)| 0.5 * (a + b)).collect();
        let d0 = bregman_distance(&f, &pts[0], &pts[2]).unwrap();
        let d1 = bregman_distance(&f, &pts[1], &pts[2]).unwrap();
        let dm = bregman_distance(&f, &mid, &pts[2]).unwrap();
        prop_assert!(dm <= 0.5 * (d0 + d1) + 1e-10 * scale(&f, &[&pts[0], &pts[1], &pts[2]]));
    }

    #[test]
    fn three_point_identity((f, pts) in functional_with_points(true, 3)) {
        let (a, b, u) = (&pts[0], &pts[1], &pts[2]);
        let qb = f.subgradient(b).unwrap();
        let qu = f.subgradient(u).unwrap();
        let dq: Vec<f64> = qb.iter().zip(&qu).map(|(x, y)| x - y).collect();
        let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let lhs = bregman_distance(&f, a, u).unwrap();
        let rhs = bregman_distance(&f, a, b).unwrap() + bregman_distance(&f, b, u).unwrap() + dot(&dq, &ab);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * scale(&f, &[a, b, u]), "{lhs} vs {rhs}");
    }

    #[test]
    fn costs_vanish_on_the_diagonal(u in vector(2), f in vector(2), preset in prop_oneof![Just(CmPreset::C1), Just(CmPreset::C2), Just(CmPreset::C3)]) {
        let fid = Fidelity::new(FidelityKind::Poisson, ForwardOperator::identity(2).unwrap(), f.iter().map(|x| x.round()).collect()).unwrap();
        let post = Posterior::new(fid, Prior::huber_tv(0.1).unwrap(), 1.5).unwrap();
        prop_assert_eq!(map_cost(&post, &u, &u).unwrap(), 0.0);
        prop_assert_eq!(cm_cost(&CostFunctional::cm_preset(&post, preset), &u, &u).unwrap(), 0.0);
    }

    #[test]
    fn quadratic_costs_are_symmetric(est in vector(3), u in vector(3), f in vector(3)) {
        let fid = Fidelity::new(FidelityKind::Gaussian, ForwardOperator::identity(3).unwrap(), f).unwrap();
        let post = Posterior::new(fid, Prior::tikhonov(), 1.0).unwrap();
        let c3 = CostFunctional::cm_preset(&post, CmPreset::C3);
        let swapped = map_cost(&post, &u, &est).unwrap();
        let cm = cm_cost(&c3, &est, &u).unwrap();
        prop_assert!((cm - swapped).abs() <= 1e-12 * (1.0 + cm));
        // ‖û − u‖² + ½‖û − u‖²
        let sq: f64 = est.iter().zip(&u).map(|(a, b)| (a - b) * (a - b)).sum();
        prop_assert!((map_cost(&post, &est, &u).unwrap() - 1.5 * sq).abs() <= 1e-12 * (1.0 + sq));
        let c2 = CostFunctional::cm_preset(&post, CmPreset::C2);
        prop_assert!((cm_cost(&c2, &est, &u).unwrap() - 0.5 * sq).abs() <= 1e-12 * (1.0 + sq));
    }
}

#[test]
fn documented_distances() {
    let t = Prior::tikhonov();
    assert_eq!(bregman_distance(&t, &[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
    let l1 = Prior::l1();
    assert_eq!(bregman_distance(&l1, &[3.0], &[2.0]).unwrap(), 0.0);
    assert_eq!(bregman_distance(&l1, &[-1.0], &[2.0]).unwrap(), 2.0);

    // D_E(û = 1, u = 2) for Poisson f = 2: 1 − 2 − 2 log(1/2) − 0·(1 − 2)
    let fid = Fidelity::new(
        FidelityKind::Poisson,
        ForwardOperator::identity(1).unwrap(),
        vec![2.0],
    )
    .unwrap();
    let expected = 1.0 - 2.0 - 2.0 * (0.5f64).ln();
    let d = bregman_distance(&fid, &[1.0], &[2.0]).unwrap();
    assert!((d - expected).abs() < 1e-14 && (d - 0.386_294_361_119_890_6).abs() < 1e-12);
    assert_eq!(
        bregman_distance(&fid, &[1.0], &[-1.0]).unwrap(),
        f64::INFINITY
    );
    assert_eq!(
        bregman_distance(&fid, &[-1.0], &[1.0]).unwrap(),
        f64::INFINITY
    );
}
