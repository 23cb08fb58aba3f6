use std::f64::consts::PI;

use nlap_core::bernstein::*;
use nlap_core::quad::{integrate, QuadOptions};

fn all_families() -> Vec<BernsteinSpec> {
    vec![
        BernsteinSpec::stable(1.0).unwrap(),
        BernsteinSpec::stable(1.5).unwrap(),
        BernsteinSpec::relativistic(1.0, 1.0).unwrap(),
        BernsteinSpec::sum_stable(1.0, 0.5).unwrap(),
        BernsteinSpec::log_damped(1.0, 0.5).unwrap(),
        BernsteinSpec::log_boosted(1.0, 0.5).unwrap(),
    ]
}

/// `∫_R (1 − cos(yz)) j(|y|) dy`: second-moment expansion below `ε`,
/// period-by-period quadrature up to `R`, one integration by parts beyond.
fn symbol_from_density(kernel: &LevyKernel, z: f64) -> f64 {
    let eps = 1e-3;
    let r = 2e3;
    let near = 0.5 * z * z * kernel.second_moment(eps).unwrap();
    let period = 2.0 * PI / z;
    let mut mid = 0.0;
    let mut lo = eps;
    while lo < r {
        let hi = (lo + period).min(r);
        mid += integrate(
            |y| (1.0 - (y * z).cos()) * kernel.density(y).unwrap(),
            lo,
            hi,
            QuadOptions::rel(1e-10),
        )
        .unwrap()
        .value;
        lo = hi;
    }
    let far = kernel.tail_mass(r).unwrap() + (z * r).sin() * kernel.density(r).unwrap() / z;
    2.0 * (near + mid + far)
}

#[test]
fn stable_symbol_consistency() {
    for alpha in [1.0, 1.5] {
        let spec = BernsteinSpec::stable(alpha).unwrap();
        let kernel = LevyKernel::new(spec).unwrap();
        for z in [0.5, 1.0, 2.0, 5.0] {
            let psi = spec.psi(z * z).unwrap();
            let sym = symbol_from_density(&kernel, z);
            assert!((sym - psi).abs() <= 1e-6 * psi, "alpha={alpha} z={z}: {sym} vs {psi}");
        }
    }
}

#[test]
fn quadrature_families_symbol_consistency() {
    for spec in all_families().into_iter().skip(2) {
        let kernel = LevyKernel::new(spec).unwrap();
        for z in [0.5, 2.0] {
            let psi = spec.psi(z * z).unwrap();
            let sym = symbol_from_density(&kernel, z);
            assert!((sym - psi).abs() <= 1e-6 * psi, "{spec} z={z}: {sym} vs {psi}");
        }
    }
}

#[test]
fn routes_agree() {
    let probes = [0.01, 0.3, 1.0, 20.0];
    for spec in all_families() {
        let routes: Vec<LevyKernel> =
            [KernelRoute::Closed, KernelRoute::Subordination, KernelRoute::Spectral]
                .into_iter()
                .filter_map(|r| LevyKernel::with_route(spec, r).ok())
                .collect();
        let reference = LevyKernel::new(spec).unwrap();
        for k in &routes {
            for &r in &probes {
                let close = |a: f64, b: f64| (a - b).abs() <= 1e-7 * b.abs();
                assert!(close(k.density(r).unwrap(), reference.density(r).unwrap()), "{spec} {:?} j({r})", k.route);
                assert!(close(k.tail_mass(r).unwrap(), reference.tail_mass(r).unwrap()), "{spec} {:?} T({r})", k.route);
                assert!(close(k.second_moment(r).unwrap(), reference.second_moment(r).unwrap()), "{spec} {:?} M2({r})", k.route);
            }
            for kk in [1, 2, 7] {
                let (a, b) = (k.hat_weight(kk, 0.01).unwrap(), reference.hat_weight(kk, 0.01).unwrap());
                assert!((a - b).abs() <= 1e-7 * b, "{spec} {:?} w{kk}", k.route);
            }
        }
    }
}

#[test]
fn stable_density_matches_subordination_oracle() {
    let spec = BernsteinSpec::stable(1.0).unwrap();
    let oracle = LevyKernel::with_route(spec, KernelRoute::Subordination).unwrap();
    let primary = LevyKernel::new(spec).unwrap();
    assert_eq!(primary.route, KernelRoute::Closed);
    for (r, want) in [(1.0, 1.0 / PI), (2.0, 0.25 / PI)] {
        assert!((oracle.density(r).unwrap() - want).abs() < 1e-8 * want);
        assert!((levy_density(&primary, r).unwrap() - want).abs() < 1e-14);
    }
}

#[test]
fn densities_positive_and_nonincreasing() {
    let radii = logspace(1e-3, 50.0, 40);
    for spec in all_families() {
        let k = LevyKernel::new(spec).unwrap();
        let vals: Vec<f64> = radii.iter().map(|&r| k.density(r).unwrap()).collect();
        assert!(vals.iter().all(|&v| v > 0.0), "{spec}");
        assert!(vals.windows(2).all(|w| w[1] <= w[0]), "{spec}");
    }
}

#[test]
fn levy_measure_tail_and_small_jumps_match_closed_forms() {
    // For the relativistic family the spectral formulas give an independent route.
    let spec = BernsteinSpec::relativistic(1.0, 1.0).unwrap();
    let quad_tail = |t: f64| {
        integrate(|s| spec.cut_imag(s) * (-t * s).exp() / s, 1.0, 1e4 / t, QuadOptions::rel(1e-11))
            .unwrap()
            .value
            / PI
    };
    for t in [1e-3, 0.1, 1.0] {
        let a = spec.levy_tail(t).unwrap();
        let b = quad_tail(t);
        assert!((a - b).abs() <= 1e-6 * b, "t={t}: {a} vs {b}");
    }
    let stable = BernsteinSpec::stable(1.0).unwrap();
    // 1/2-stable subordinator: μ((t,∞)) = t^{-1/2}/Γ(1/2), ∫_0^ε t μ(dt) = ε^{1/2}/Γ(1/2).
    assert!((stable.levy_tail(0.25).unwrap() - 2.0 / PI.sqrt()).abs() < 1e-14);
    assert!((stable.small_jump_mean(0.25).unwrap() - 0.5 / PI.sqrt()).abs() < 1e-14);
}

#[test]
fn assumption_ratio_reported_for_every_family() {
    for spec in all_families() {
        let k = LevyKernel::new(spec).unwrap();
        let rho = check_assumption_a21(&k, 50.0, 50).unwrap();
        assert!(rho.is_some_and(|r| r > 0.0 && r < 1.0), "{spec}: {rho:?}");
    }
}

#[test]
fn reference_certificates_hold_on_default_grid() {
    let mut specs = all_families();
    specs.extend([
        BernsteinSpec::stable(2.0).unwrap(),
        BernsteinSpec::relativistic(0.5, 2.0).unwrap(),
        BernsteinSpec::sum_stable(2.0, 1.0).unwrap(),
        BernsteinSpec::log_damped(2.0, 1.0).unwrap(),
        BernsteinSpec::log_damped(1.5, 0.0).unwrap(),
        BernsteinSpec::log_boosted(0.5, 1.2).unwrap(),
        BernsteinSpec::local(),
        BernsteinSpec::new(Family::Stable { alpha: 1.0 }, 0.5).unwrap(),
    ]);
    for spec in specs {
        let (lower, upper) = spec.reference_certificates();
        for cert in [lower, upper] {
            let rep = check_scaling(&spec, &cert, &ScalingGrid::default()).unwrap();
            assert!(rep.holds, "{spec} {cert:?}: {rep:?}");
        }
    }
}
