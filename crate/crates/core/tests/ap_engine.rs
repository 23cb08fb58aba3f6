use std::sync::Arc;

use nlap_core::ap::*;
use nlap_core::grid::{assemble_operator, build_grid, Field};
use nlap_core::linear::{solve_dirichlet, PotentialField};
use nlap_core::bernstein::BernsteinSpec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn canonical(rho: f64) -> ApProblem {
    ApProblem::canonical(99, rho).unwrap()
}

/// `f = slope·u` with the envelope potentials matched to the slope.
fn linear_problem(slope: f64, rho: f64) -> ApProblem {
    let p = canonical(rho);
    let n = p.n();
    let h = Field::from_fn(p.grid(), |x| 0.3 * (3.0 * x).sin() + 0.2);
    ApProblem::new(
        p.op.clone(),
        Nonlinearity::linear(n, slope),
        h,
        rho,
        PotentialField::constant(n, -slope),
        PotentialField::constant(n, -slope - 2.0 * p.lambda_star),
        0.0,
    )
    .unwrap()
}

#[test]
fn canonical_solutions_are_the_two_eigenfunction_multiples() {
    let p = canonical(-0.8);
    let l = p.lambda_star;
    let lower = p.phi1.scaled(2.0 * p.rho / l);
    let upper = p.phi1.scaled(-p.rho / l);
    assert!(p.residual_norm(&lower).unwrap() < 1e-10);
    assert!(p.residual_norm(&upper).unwrap() < 1e-10);
}

#[test]
fn monotone_iteration_reaches_minimal_solution_with_ordered_barriers() {
    let p = canonical(0.0);
    let sup = build_supersolution(&p).unwrap();
    let p = p.with_rho(sup.rho1);
    let sub = build_subsolution(&p).unwrap();
    let opts = IterationOptions { keep_iterates: true, ..Default::default() };
    let t = monotone_iterate(&p, &sub.u, Some(&sup.u), opts).unwrap();
    assert_eq!(t.status, IterationStatus::Converged);
    for w in t.iterates.windows(2) {
        assert!(w[0].values.iter().zip(&w[1].values).all(|(a, b)| a <= b));
    }
    assert!(t.final_residual() <= 1e-8);
    let exact = p.phi1.scaled(2.0 * p.rho / p.lambda_star);
    assert!(t.solution.distance(&exact) < 1e-8);
}

#[test]
fn linear_nonlinearity_matches_direct_solve() {
    for slope in [0.5, -0.7] {
        let p = linear_problem(slope, -0.4);
        let sub = build_subsolution(&p).unwrap();
        let opts = IterationOptions { ceiling: 1e6, ..Default::default() };
        let t = monotone_iterate(&p, &sub.u, None, opts).unwrap();
        assert_eq!(t.status, IterationStatus::Converged);
        let direct = solve_dirichlet(&p.op, &PotentialField::constant(p.n(), -slope), &p.forcing()).unwrap();
        assert!(t.solution.distance(&direct) <= 1e-7, "slope {slope}");
        // Linear problems have one solution.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let second = find_second_solution(&p, &t.solution, 50, &mut rng, &NewtonOptions::default()).unwrap();
        assert!(second.solution.is_none());
    }
}

#[test]
fn linear_subsolution_closed_form() {
    // f ≡ 0, U1 ≡ 1, ρ = 0, h = 0, C = 0: u̲ = −C1 (L + 1)⁻¹ 1.
    let p = canonical(0.0);
    let n = p.n();
    let q = ApProblem::new(
        p.op.clone(),
        Nonlinearity::linear(n, 0.0),
        Field::zeros(n),
        0.0,
        PotentialField::constant(n, 1.0),
        PotentialField::constant(n, -2.0 * p.lambda_star),
        0.0,
    )
    .unwrap();
    let sub = build_subsolution(&q).unwrap();
    let torsion = solve_dirichlet(&q.op, &PotentialField::constant(n, 1.0), &Field::constant(n, 1.0)).unwrap();
    assert!(sub.u.distance(&torsion.scaled(-sub.c1)) < 1e-12);
}

#[test]
fn minimal_solution_is_symmetric() {
    let p = canonical(-1.3);
    let sub = build_subsolution(&p).unwrap();
    let t = monotone_iterate(&p, &sub.u, None, IterationOptions { ceiling: 1e4, ..Default::default() }).unwrap();
    let v = &t.solution.values;
    let asym = (0..v.len()).map(|i| (v[i] - v[v.len() - 1 - i]).abs()).fold(0.0, f64::max);
    assert!(asym < 1e-10, "{asym:e}");
}

#[test]
fn second_solution_and_minimality() {
    for rho in [-0.3, -1.0, -2.5] {
        let p = canonical(rho);
        let sub = build_subsolution(&p).unwrap();
        let t = monotone_iterate(&p, &sub.u, None, IterationOptions { ceiling: 1e4, ..Default::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let opts = NewtonOptions::default();
        let second = find_second_solution(&p, &t.solution, 50, &mut rng, &opts).unwrap();
        let s = second.solution.expect("second solution");
        let want = p.phi1.scaled(-rho / p.lambda_star);
        assert!(s.distance(&want) < 1e-8);
        assert!(second.separation.unwrap() >= 0.05);
        let report = minimality_check(&p, &t.solution, 20, &mut rng, &opts).unwrap();
        assert!(report.min_gap >= -1e-8);
    }
}

#[test]
fn apriori_domination_and_barrier_closed_form() {
    let p = canonical(0.0);
    // Linear case at ρ = 0: v = −ρ̂ (L + U1)⁻¹ Φ1 = −(2ρ̂/λ*) Φ1.
    let v = apriori_barrier(&p, 10.0).unwrap();
    assert!(v.distance(&p.phi1.scaled(-20.0 / p.lambda_star)) < 1e-9);
    let r = apriori_bounds(&p, &Field::zeros(p.n()), 10.0).unwrap();
    assert!(r.domination_gap > 0.0 && r.growth_ratio == 0.0);
    let low = p.with_rho(-3.0);
    let below = v.scaled(1.1);
    assert!(apriori_bounds(&low, &below, 10.0).is_err());
}

#[test]
fn canonical_scan_brackets_threshold() {
    let template = canonical(0.0);
    let opts = ScanOptions { n_starts: 30, ..Default::default() };
    let scan = scan_rho(&template, -10.0, 2.0, &opts).unwrap();
    let (lo, hi) = scan.rho_star_bracket;
    assert!(hi - lo <= 0.01 && lo <= 0.0 && 0.0 < hi, "{lo} {hi}");
    assert!(scan.minimal_monotone);
    assert!(scan.rho1 < 0.0);
    for o in &scan.outcomes {
        if o.is_solvable() {
            assert!(o.residual.unwrap() <= 1e-8);
            assert!(o.apriori.unwrap().domination_gap >= -1e-8);
            assert!(o.boundary_ratios.iter().all(|(a, b)| a.is_finite() && b.is_finite()));
            if o.rho < -0.1 {
                assert!(o.second.is_some(), "rho {}", o.rho);
            }
        } else {
            let d = o.diagnostics.unwrap();
            assert!(d.iteration_max_norm > d.ceiling);
        }
    }
    let csv = std::env::temp_dir().join("nlap_branch_test.csv");
    scan.write_csv(&csv).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("rho,solvable,u_min_norm,second_found,separation,residual"));
}

#[test]
fn unsolvable_level_fails_every_start() {
    let o = classify_rho(&canonical(0.0), 1.0, &ScanOptions::default()).unwrap();
    assert_eq!(o.classification, Classification::NoSolutionFound);
    let d = o.diagnostics.unwrap();
    assert_eq!(d.newton_starts, 50);
    assert_eq!(d.iteration_status, IterationStatus::Diverged);
}

#[test]
fn scan_rejects_bad_endpoints() {
    let t = canonical(0.0);
    let opts = ScanOptions { n_starts: 4, search_second: false, ..Default::default() };
    assert!(matches!(scan_rho(&t, 0.5, 2.0, &opts), Err(nlap_core::Error::Usage(_))));
    assert!(matches!(scan_rho(&t, -2.0, -1.0, &opts), Err(nlap_core::Error::Usage(_))));
}

#[test]
fn slope_crossing_on_other_families() {
    let g = build_grid(-1.0, 1.0, 49).unwrap();
    for spec in [BernsteinSpec::relativistic(1.0, 1.0).unwrap(), BernsteinSpec::local()] {
        let op = Arc::new(assemble_operator(&g, &spec).unwrap());
        let p = ApProblem::slope_crossing(op, -0.5).unwrap();
        validate_ap(&p, &default_q_grid(), ValidateOptions::default()).unwrap();
        let sub = build_subsolution(&p).unwrap();
        let t = monotone_iterate(&p, &sub.u, None, IterationOptions { ceiling: 1e4, ..Default::default() }).unwrap();
        assert!(t.solution.distance(&p.phi1.scaled(-1.0 / p.lambda_star)) < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn barrier_slacks_have_the_right_sign(rho in -8.0f64..1.0, amp in 0.0f64..2.0, k in 1.0f64..4.0) {
        let base = ApProblem::canonical(49, rho).unwrap();
        let h = Field::from_fn(base.grid(), |x| amp * (k * x).cos());
        let p = ApProblem::new(base.op.clone(), base.f.clone(), h, rho, base.u1.clone(), base.u2.clone(), 0.0).unwrap();
        let sub = build_subsolution(&p).unwrap();
        prop_assert!(sub.slack.max() <= 1e-10);
        prop_assert!(sub.u.max() < 0.0);
        let sup = build_supersolution(&p).unwrap();
        prop_assert!(sup.slack.min() >= -1e-10);
        prop_assert!(sup.u.min() > 0.0 && sup.rho1 < 0.0);
    }

    #[test]
    fn chain_holds_from_subsolution(rho in -6.0f64..-0.05) {
        let p = ApProblem::canonical(49, rho).unwrap();
        let sub = build_subsolution(&p).unwrap();
        let opts = IterationOptions { keep_iterates: true, ceiling: 1e4, ..Default::default() };
        let t = monotone_iterate(&p, &sub.u, None, opts).unwrap();
        prop_assert_eq!(t.status, IterationStatus::Converged);
        prop_assert!(t.final_residual() <= 1e-8);
        for w in t.iterates.windows(2) {
            let scale = w[1].sup_norm().max(1.0);
            prop_assert!(w[0].values.iter().zip(&w[1].values).all(|(a, b)| *a <= b + 1e-12 * scale));
        }
    }
}
