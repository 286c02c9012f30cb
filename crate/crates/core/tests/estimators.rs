mod common;

use std::time::{Duration, Instant};

use bregest::bayes_cost::{
    average_subgradient, estimate_bayes_cost, minimize_bayes_cost, EmpiricalCost, MinimizeConfig,
    SampleSource,
};
use bregest::bregman::{CmPreset, CostFunctional};
use bregest::cm_estimator::{
    cm_estimate, quadrature_posterior, sample_posterior, Chain, QuadratureConfig,
    QuadratureMeasure, SamplerConfig, SamplerMethod,
};
use bregest::map_solver::{optimality_residual, solve_map, SolverConfig};
use bregest::model::{FidelityKind, ForwardOperator, Posterior, Prior};
use bregest::rng::StreamSeed;
use bregest::Error;
use common::*;

fn chains(post: &Posterior, method: SamplerMethod, master: u64) -> Vec<Chain> {
    (0..4)
        .map(|k| {
            sample_posterior(
                post,
                method,
                &SamplerConfig::default(),
                StreamSeed::new(master, k),
            )
            .unwrap()
        })
        .collect()
}

fn quad(post: &Posterior) -> QuadratureMeasure {
    quadrature_posterior(post, &QuadratureConfig::default()).unwrap()
}

#[test]
fn scalar_closed_forms() {
    for (post, expected) in [
        (gaussian_scalar(), 2.0),
        (poisson_scalar(), 1.0),
        (laplace_scalar(), 1.0),
    ] {
        let start = Instant::now();
        let r = solve_map(&post, &SolverConfig::default()).unwrap();
        assert!(start.elapsed() < Duration::from_secs(1));
        assert!(r.converged && r.residual <= 1e-8);
        assert!((r.estimate[0] - expected).abs() < 1e-8, "{:?}", r.estimate);
        assert!(
            (r.objective - post.objective(&r.estimate).unwrap()).abs()
                <= 1e-12 * (1.0 + r.objective.abs())
        );
    }
}

#[test]
fn residual_examples() {
    let post = gaussian_scalar();
    assert!((optimality_residual(&post, &[2.1]).unwrap() - 0.3).abs() < 1e-12);
    let zero = posterior(
        FidelityKind::Gaussian,
        ForwardOperator::identity(1).unwrap(),
        vec![0.0],
        Prior::l1(),
        1.0,
    );
    assert_eq!(optimality_residual(&zero, &[0.0]).unwrap(), 0.0);
}

#[test]
fn solver_is_monotone_and_reaches_stationarity_on_blurred_fixtures() {
    for post in [
        gaussian_blur2(),
        poisson_blur2(),
        gaussian_huber(),
        poisson_huber(),
        laplace_huber(),
        poisson_blur4(),
    ] {
        let cfg = SolverConfig {
            track_objective: true,
            ..SolverConfig::default()
        };
        let r = solve_map(&post, &cfg).unwrap();
        assert!(r.converged, "{r:?}");
        assert!(r.residual <= cfg.tolerance);
        for w in r.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * (1.0 + w[0].abs()));
        }
        if post.is_smooth() {
            let g = post.log_density_gradient(&r.estimate).unwrap().gradient;
            assert!(g.iter().all(|x| x.abs() <= 1e-8), "{g:?}");
        }
    }
}

#[test]
fn chains_are_deterministic_and_stay_in_the_domain() {
    let post = poisson_scalar();
    let cfg = SamplerConfig {
        iterations: 5_000,
        burn_in: 1_000,
        ..SamplerConfig::default()
    };
    for method in [SamplerMethod::Rwm, SamplerMethod::Mala] {
        let a = sample_posterior(&post, method, &cfg, StreamSeed::new(9, 2)).unwrap();
        let b = sample_posterior(&post, method, &cfg, StreamSeed::new(9, 2)).unwrap();
        let c = sample_posterior(&post, method, &cfg, StreamSeed::new(9, 3)).unwrap();
        assert_eq!(a.raw(), b.raw());
        assert_ne!(a.raw(), c.raw());
        assert!(a
            .samples()
            .all(|u| u[0] >= bregest::model::DEFAULT_POISSON_FLOOR));
        assert!(a
            .samples()
            .all(|u| post.log_density(u).unwrap().is_finite()));
        assert_eq!(a.acceptance_rate, a.accepted as f64 / a.proposed as f64);
    }
}

#[test]
fn sampler_configuration_is_validated() {
    let zero = SamplerConfig {
        initial_scale: 0.0,
        ..SamplerConfig::default()
    };
    assert!(sample_posterior(&gaussian_scalar(), SamplerMethod::Mala, &zero, 0.into()).is_err());
    let err = sample_posterior(
        &laplace_scalar(),
        SamplerMethod::Mala,
        &SamplerConfig::default(),
        0.into(),
    );
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn samplers_recover_the_gaussian_mean() {
    let post = gaussian_scalar();
    let rwm = cm_estimate(&chains(&post, SamplerMethod::Rwm, 1), true).unwrap();
    let mala = cm_estimate(&chains(&post, SamplerMethod::Mala, 2), true).unwrap();
    for est in [&rwm, &mala] {
        assert!((est.mean[0] - 2.0).abs() <= 3.0 * est.stderr[0], "{est:?}");
        assert!(est.diagnostics.max_r_hat().unwrap() <= 1.05);
    }
    let combined = rwm.stderr[0].hypot(mala.stderr[0]);
    assert!((rwm.mean[0] - mala.mean[0]).abs() <= 3.0 * combined);
}

#[test]
fn symmetric_posterior_has_zero_mean() {
    let post = posterior(
        FidelityKind::Gaussian,
        ForwardOperator::identity(2).unwrap(),
        vec![0.0; 2],
        Prior::tikhonov(),
        1.0,
    );
    let est = cm_estimate(&chains(&post, SamplerMethod::Rwm, 4), true).unwrap();
    for (m, s) in est.mean.iter().zip(&est.stderr) {
        assert!(m.abs() <= 3.0 * s);
    }
    let q = quad(&post);
    let p = q.expectation(|u| Prior::tikhonov().subgradient(u)).unwrap();
    assert!(p.value.iter().all(|x| x.abs() < 1e-8));
}

#[test]
fn gaussian_map_and_cm_coincide() {
    for post in [gaussian_scalar(), gaussian_blur2()] {
        let m = map(&post);
        let est = cm_estimate(&chains(&post, SamplerMethod::Mala, 5), true).unwrap();
        for i in 0..m.len() {
            assert!(
                (m[i] - est.mean[i]).abs() <= 3.0 * est.stderr[i],
                "{m:?} vs {est:?}"
            );
        }
    }
}

#[test]
fn mcmc_matches_quadrature() {
    let fixtures = [
        (gaussian_scalar(), SamplerMethod::Mala),
        (poisson_scalar(), SamplerMethod::Mala),
        (laplace_scalar(), SamplerMethod::Rwm),
        (gaussian_blur2(), SamplerMethod::Mala),
        (poisson_blur2(), SamplerMethod::Mala),
        (laplace_identity2(), SamplerMethod::Rwm),
        (gaussian_huber(), SamplerMethod::Mala),
        (poisson_huber(), SamplerMethod::Mala),
        (laplace_huber(), SamplerMethod::Rwm),
    ];
    for (k, (post, method)) in fixtures.into_iter().enumerate() {
        let est = cm_estimate(&chains(&post, method, 100 + k as u64), true).unwrap();
        let q = quad(&post).mean();
        for i in 0..q.len() {
            assert!(
                (est.mean[i] - q[i]).abs() <= 3.0 * est.stderr[i],
                "fixture {k}: {:?} vs {q:?}",
                est.mean
            );
        }
    }
}

#[test]
fn quadrature_is_self_consistent() {
    for post in [gaussian_scalar(), poisson_scalar(), laplace_scalar()] {
        let coarse = quad(&post).mean();
        let fine = quadrature_posterior(
            &post,
            &QuadratureConfig {
                nodes_per_dim: 513,
                ..QuadratureConfig::default()
            },
        )
        .unwrap()
        .mean();
        assert!((coarse[0] - fine[0]).abs() < 1e-8);
    }
    // kinks and domain edges that no grid axis is aligned with
    for post in [
        poisson_blur2(),
        poisson_huber(),
        laplace_huber(),
        laplace_identity2(),
    ] {
        let at = |nodes| {
            quadrature_posterior(
                &post,
                &QuadratureConfig {
                    nodes_per_dim: nodes,
                    ..QuadratureConfig::default()
                },
            )
            .unwrap()
            .mean()
        };
        let (coarse, fine) = (at(129), at(257));
        for i in 0..2 {
            assert!((coarse[i] - fine[i]).abs() < 1e-8, "{coarse:?} vs {fine:?}");
        }
    }
    let q = quad(&gaussian_scalar());
    assert!((q.mean()[0] - 2.0).abs() < 1e-6);
    assert!((q.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let (a, b) = q.bounds()[0];
    assert!(a < 2.0 && 2.0 < b);
}

#[test]
fn bayes_cost_identities() {
    let post = poisson_scalar();
    let q = quad(&post);
    let source = SampleSource::Quadrature(&q);
    let mean = q.mean();
    let var = q.variance()[0];

    let mse = estimate_bayes_cost(&CostFunctional::mean_squared(), &mean, &source).unwrap();
    assert!((mse.value - var).abs() < 1e-12 && mse.stderr == 0.0);

    let c2 = CostFunctional::cm_preset(&post, CmPreset::C2);
    assert!((estimate_bayes_cost(&c2, &mean, &source).unwrap().value - 0.5 * var).abs() < 1e-12);

    let single = Chain::from_samples(1, vec![1.3], 0.into()).unwrap();
    let point = [single];
    let at_point = SampleSource::Chains(&point);
    for cost in [
        CostFunctional::map_cost(&post),
        CostFunctional::cm_preset(&post, CmPreset::C3),
    ] {
        assert_eq!(
            estimate_bayes_cost(&cost, &[1.3], &at_point).unwrap().value,
            0.0
        );
    }
}

#[test]
fn minimizers_match_closed_forms() {
    let post = gaussian_scalar();
    let q = quad(&post);
    let source = SampleSource::Quadrature(&q);
    let mean = q.mean();
    let cfg = MinimizeConfig::default();

    for cost in [
        CostFunctional::mean_squared(),
        CostFunctional::cm_preset(&post, CmPreset::C2),
    ] {
        let emp = EmpiricalCost::new(&cost, source).unwrap();
        let r = minimize_bayes_cost(&emp, &[0.0], &cfg).unwrap();
        assert!((r.estimate[0] - mean[0]).abs() < 1e-6);
    }
    let map_cost = CostFunctional::map_cost(&post);
    let emp = EmpiricalCost::new(&map_cost, source).unwrap();
    let r = minimize_bayes_cost(&emp, &[0.0], &cfg).unwrap();
    assert!((r.estimate[0] - 2.0).abs() < 1e-4);

    // grid scan of the Poisson C¹ cost agrees with the compass search
    let post = poisson_scalar();
    let q = quad(&post);
    let source = SampleSource::Quadrature(&q);
    let c1 = CostFunctional::cm_preset(&post, CmPreset::C1);
    let emp = EmpiricalCost::new(&c1, source).unwrap();
    let r = minimize_bayes_cost(&emp, &[1.0], &cfg).unwrap();
    let best = (1..4000)
        .map(|k| 0.5 + k as f64 * 5e-4)
        .min_by(|a, b| {
            emp.value(&[*a])
                .unwrap()
                .total_cmp(&emp.value(&[*b]).unwrap())
        })
        .unwrap();
    assert!((r.estimate[0] - best).abs() <= 5e-4);
    assert!((r.estimate[0] - q.mean()[0]).abs() < 1e-6);
}

#[test]
fn minimizer_beats_nearby_points() {
    let post = poisson_blur2();
    let q = quadrature_posterior(
        &post,
        &QuadratureConfig {
            nodes_per_dim: 129,
            ..QuadratureConfig::default()
        },
    )
    .unwrap();
    let source = SampleSource::Quadrature(&q);
    let mut rng = StreamSeed::new(21, 0).rng();
    for preset in [CmPreset::C1, CmPreset::C2, CmPreset::C3] {
        let cost = CostFunctional::cm_preset(&post, preset);
        let emp = EmpiricalCost::new(&cost, source).unwrap();
        let r = minimize_bayes_cost(&emp, &map(&post), &MinimizeConfig::default()).unwrap();
        for _ in 0..20 {
            use rand::Rng;
            let mut d: Vec<f64> = (0..2).map(|_| rng.random_range(-0.05..=0.05)).collect();
            let j = rng.random_range(0..2);
            d[j] = if rng.random::<bool>() { 0.05 } else { -0.05 };
            let p: Vec<f64> = r.estimate.iter().zip(&d).map(|(a, b)| a + b).collect();
            assert!(r.value <= emp.value(&p).unwrap() - 1e-9);
        }
    }
}

#[test]
fn empirical_cm_costs_are_midpoint_convex_where_expected() {
    use rand::Rng;
    let mut rng = StreamSeed::new(22, 0).rng();
    // Gaussian: every preset is a convex quadratic in û
    let post = gaussian_blur2();
    let q = quadrature_posterior(
        &post,
        &QuadratureConfig {
            nodes_per_dim: 65,
            ..QuadratureConfig::default()
        },
    )
    .unwrap();
    for preset in [CmPreset::C1, CmPreset::C2, CmPreset::C3] {
        let cost = CostFunctional::cm_preset(&post, preset);
        let emp = EmpiricalCost::new(&cost, SampleSource::Quadrature(&q)).unwrap();
        for _ in 0..50 {
            let a: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..5.0)).collect();
            let b: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..5.0)).collect();
            let m: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let (va, vb) = (emp.value(&a).unwrap(), emp.value(&b).unwrap());
            assert!(
                emp.value(&m).unwrap() <= 0.5 * (va + vb) + 1e-10 * (1.0 + va.abs() + vb.abs())
            );
        }
    }
    // Poisson C¹ with K = 1: the second derivative f(2ū − û)/û³ is positive only for û < 2ū
    let post = poisson_scalar();
    let q = quad(&post);
    let ubar = q.mean()[0];
    let c1 = CostFunctional::cm_preset(&post, CmPreset::C1);
    let emp = EmpiricalCost::new(&c1, SampleSource::Quadrature(&q)).unwrap();
    for _ in 0..50 {
        let a = rng.random_range(0.1 * ubar..1.95 * ubar);
        let b = rng.random_range(0.1 * ubar..1.95 * ubar);
        let (va, vb) = (emp.value(&[a]).unwrap(), emp.value(&[b]).unwrap());
        assert!(emp.value(&[0.5 * (a + b)]).unwrap() <= 0.5 * (va + vb) + 1e-12);
    }
    let (a, b) = (2.5 * ubar, 5.0 * ubar);
    let (va, vb) = (emp.value(&[a]).unwrap(), emp.value(&[b]).unwrap());
    assert!(emp.value(&[0.5 * (a + b)]).unwrap() > 0.5 * (va + vb));
}

#[test]
fn average_subgradients() {
    let post = poisson_scalar();
    let q = quad(&post);
    let qs = SampleSource::Quadrature(&q);
    let t = average_subgradient(&Prior::tikhonov(), &qs).unwrap();
    assert!((t.mean[0] - q.mean()[0]).abs() < 1e-14);
    // Poisson samples are positive
    assert_eq!(
        average_subgradient(&Prior::l1(), &qs).unwrap().mean,
        vec![1.0]
    );

    let ch = chains(&post, SamplerMethod::Mala, 31);
    let mc = average_subgradient(post.fidelity(), &SampleSource::Chains(&ch)).unwrap();
    let exact = average_subgradient(post.fidelity(), &qs).unwrap();
    assert!(
        (mc.mean[0] - exact.mean[0]).abs() <= 3.0 * mc.stderr[0],
        "{mc:?} vs {exact:?}"
    );
}

#[test]
fn mcmc_and_quadrature_bayes_costs_agree_in_one_dimension() {
    for (k, (post, method)) in [
        (gaussian_scalar(), SamplerMethod::Mala),
        (poisson_scalar(), SamplerMethod::Mala),
        (laplace_scalar(), SamplerMethod::Rwm),
    ]
    .into_iter()
    .enumerate()
    {
        let q = quad(&post);
        let ch = chains(&post, method, 40 + k as u64);
        let m = map(&post);
        for cost in [
            CostFunctional::map_cost(&post),
            CostFunctional::cm_preset(&post, CmPreset::C3),
        ] {
            let exact = estimate_bayes_cost(&cost, &m, &SampleSource::Quadrature(&q)).unwrap();
            let mc = estimate_bayes_cost(&cost, &m, &SampleSource::Chains(&ch)).unwrap();
            assert!(
                (exact.value - mc.value).abs() <= 3.0 * mc.stderr,
                "fixture {k}: {exact:?} vs {mc:?}"
            );
        }
    }
}

#[test]
fn infinite_costs_are_excluded_or_fatal() {
    let post = poisson_scalar();
    // a Poisson D_E(u, û) is infinite once u leaves the domain; at û itself it must be finite
    let samples = Chain::from_samples(1, vec![1.0, 2.0, -1.0, 1.5], 0.into()).unwrap();
    let chains = [samples];
    let c1 = CostFunctional::cm_preset(&post, CmPreset::C1);
    let est = estimate_bayes_cost(&c1, &[1.0], &SampleSource::Chains(&chains)).unwrap();
    assert_eq!((est.sample_count, est.excluded_count), (3, 1));
    assert!(est.exclusion_warning.is_some());

    let all_bad = [Chain::from_samples(1, vec![-1.0, -2.0], 0.into()).unwrap()];
    assert_eq!(
        estimate_bayes_cost(&c1, &[1.0], &SampleSource::Chains(&all_bad)),
        Err(Error::EmptySamples)
    );
    // an estimate outside the domain has infinite cost
    assert_eq!(
        estimate_bayes_cost(&c1, &[-1.0], &SampleSource::Chains(&chains))
            .unwrap()
            .value,
        f64::INFINITY
    );
}
