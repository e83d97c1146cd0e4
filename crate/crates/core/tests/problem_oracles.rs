use cpsgd::problems::{
    make_classification_problem, make_quadratic_problem, solve_reference_optimum, Problem,
    ProblemData, QuadraticSpec,
};
use cpsgd::rng::Streams;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn central_difference(p: &Problem, x: &DVector<f64>) -> DVector<f64> {
    let h = 1e-6;
    DVector::from_fn(x.len(), |s, _| {
        let mut a = x.clone();
        let mut b = x.clone();
        a[s] += h;
        b[s] -= h;
        (p.value(&a) - p.value(&b)) / (2.0 * h)
    })
}

fn quad_spec(shared: bool) -> QuadraticSpec {
    QuadraticSpec {
        eigen_min: 0.5,
        eigen_max: 4.0,
        heterogeneity: 1.0,
        shared_curvature: shared,
    }
}

/// Average Hessian, rebuilt from gradients of the affine map `x ↦ ∇f(x)`.
fn hessian_by_probing(p: &Problem) -> DMatrix<f64> {
    let d = p.d();
    let g0 = p.gradient(&DVector::zeros(d));
    let mut h = DMatrix::zeros(d, d);
    for s in 0..d {
        let e = DVector::from_fn(d, |t, _| if t == s { 1.0 } else { 0.0 });
        h.set_column(s, &(p.gradient(&e) - &g0));
    }
    h
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn classification_gradient_is_derivative_of_value(
        seed in 0u64..1000,
        lambda in 0.0f64..0.5,
        alpha in 0.0f64..3.0,
        x in proptest::collection::vec(-3.0f64..3.0, 5),
    ) {
        let p = make_classification_problem(3, 15, 5, lambda, alpha, &Streams::new(seed)).unwrap();
        let x = DVector::from_column_slice(&x);
        let err = (p.gradient(&x) - central_difference(&p, &x)).amax();
        prop_assert!(err < 1e-6, "max deviation {err}");
    }

    #[test]
    fn quadratic_gradient_is_derivative_of_value(seed in 0u64..1000, x in proptest::collection::vec(-3.0f64..3.0, 4)) {
        let p = make_quadratic_problem(4, 4, &quad_spec(false), &Streams::new(seed)).unwrap();
        let x = DVector::from_column_slice(&x);
        prop_assert!((p.gradient(&x) - central_difference(&p, &x)).amax() < 1e-6);
    }

    #[test]
    fn quadratic_gap_sandwiches_gradient(seed in 0u64..1000, x in proptest::collection::vec(-5.0f64..5.0, 4)) {
        // 2μ(f − f*) ≤ ‖∇f‖² ≤ 2L(f − f*) with μ, L the extreme eigenvalues of the average Hessian
        let p = make_quadratic_problem(5, 4, &quad_spec(false), &Streams::new(seed)).unwrap();
        let r = p.closed_form_optimum().unwrap().unwrap();
        let ev = hessian_by_probing(&p).symmetric_eigenvalues();
        let (mu, l) = (ev.min(), ev.max());
        prop_assert!((mu - p.pl_constant().unwrap()).abs() < 1e-9);
        let x = DVector::from_column_slice(&x);
        let gap = p.value(&x) - r.f_star;
        let g2 = p.gradient(&x).norm_squared();
        prop_assert!(gap >= -1e-12);
        prop_assert!(g2 <= 2.0 * l * gap * (1.0 + 1e-9) + 1e-12);
        prop_assert!(g2 >= 2.0 * mu * gap * (1.0 - 1e-9) - 1e-12);
    }

    #[test]
    fn relabeling_agents_keeps_the_global_cost(seed in 0u64..1000, x in proptest::collection::vec(-2.0f64..2.0, 3)) {
        let p = make_classification_problem(4, 10, 3, 0.01, 1.0, &Streams::new(seed)).unwrap();
        let q = p.permuted(&[2, 0, 3, 1]);
        let x = DVector::from_column_slice(&x);
        prop_assert!((p.value(&x) - q.value(&x)).abs() < 1e-12);
        prop_assert!((p.gradient(&x) - q.gradient(&x)).amax() < 1e-12);
        prop_assert_eq!(q.local_value(2, &x), p.local_value(0, &x));
    }
}

#[test]
fn quadratic_optimum_solves_normal_equations() {
    let p = make_quadratic_problem(6, 5, &quad_spec(false), &Streams::new(11)).unwrap();
    let r = p.closed_form_optimum().unwrap().unwrap();
    assert!(p.gradient(&r.x()).amax() < 1e-12);
    // average of local minimizers is not the optimum when curvatures differ
    let ProblemData::Quadratic(q) = p.data() else {
        unreachable!()
    };
    let naive = q.centers.iter().fold(DVector::zeros(5), |a, c| a + c) / 6.0;
    assert!(p.value(&naive) > r.f_star);
}

#[test]
fn shared_curvature_optimum_is_independent_of_agent_count() {
    let streams = Streams::new(4);
    let refs: Vec<_> = [2, 5, 9]
        .iter()
        .map(|&n| {
            make_quadratic_problem(n, 3, &quad_spec(true), &streams)
                .unwrap()
                .closed_form_optimum()
                .unwrap()
                .unwrap()
        })
        .collect();
    for r in &refs[1..] {
        assert!((r.x() - refs[0].x()).amax() < 1e-10);
    }
}

#[test]
fn classification_reference_is_a_local_minimum() {
    for seed in 0..3 {
        let p = make_classification_problem(6, 200, 10, 0.001, 1.0, &Streams::new(seed)).unwrap();
        let r = p.reference(1e-9, 200_000).unwrap();
        let x = r.x();
        assert!(p.gradient(&x).norm() <= 1e-9);
        assert!((p.value(&x) - r.f_star).abs() < 1e-15);
        let mut rng = Streams::new(seed).stream(cpsgd::rng::Domain::Probe, 0, 0);
        for _ in 0..50 {
            use rand::Rng;
            let dir = DVector::from_fn(10, |_, _| rng.gen_range(-1.0..1.0));
            assert!(p.value(&(&x + dir * 1e-3)) >= r.f_star);
        }
        // labels carry no signal, so the optimum sits near the origin and f* near log 2
        assert!(r.f_star < std::f64::consts::LN_2 && r.f_star > 0.5);
    }
}

#[test]
fn solver_start_does_not_change_the_answer() {
    let p = make_classification_problem(6, 50, 4, 0.01, 1.0, &Streams::new(8)).unwrap();
    let a = solve_reference_optimum(&p, &DVector::zeros(4), 1e-10, 200_000).unwrap();
    let b = solve_reference_optimum(&p, &DVector::from_element(4, 0.8), 1e-10, 200_000).unwrap();
    assert!((a.x() - b.x()).amax() < 1e-8);
    assert!((a.f_star - b.f_star).abs() < 1e-14);
}
