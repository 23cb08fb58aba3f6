//! Acceptance suite. Each test covers one criterion, writes a single
//! `PASS`/`FAIL` line to stderr (bypassing output capture) and then
//! asserts. Criteria run one at a time so their runtime budgets are
//! measured without interference.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use nlap_cli::{run_config, ExperimentConfig, RunOptions};
use nlap_core::ap::*;
use nlap_core::bernstein::BernsteinSpec;
use nlap_core::grid::{assemble_operator, build_grid, Field, NonlocalOperator};
use nlap_core::linear::*;
use nlap_core::stochastic::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

struct Criterion {
    id: u8,
    name: &'static str,
    budget: Duration,
    started: Instant,
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Criterion {
    fn new(id: u8, name: &'static str, budget_secs: u64) -> Self {
        Criterion {
            id,
            name,
            budget: Duration::from_secs(budget_secs),
            started: Instant::now(),
            failures: vec![],
            notes: vec![],
        }
    }

    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    fn note(&mut self, what: impl Into<String>) {
        self.notes.push(what.into());
    }

    fn finish(mut self) {
        let elapsed = self.started.elapsed();
        self.check(
            elapsed <= self.budget,
            format!("runtime {:.1} s over the {} s budget", elapsed.as_secs_f64(), self.budget.as_secs()),
        );
        let verdict = if self.failures.is_empty() { "PASS" } else { "FAIL" };
        let mut line = format!(
            "acceptance criterion {} [{}]: {verdict} in {:.1} s",
            self.id,
            self.name,
            elapsed.as_secs_f64()
        );
        if !self.notes.is_empty() {
            line += &format!("; {}", self.notes.join("; "));
        }
        if !self.failures.is_empty() {
            line += &format!("; failed: {}", self.failures.join("; "));
        }
        let _ = writeln!(std::io::stderr(), "{line}");
        assert!(self.failures.is_empty(), "{line}");
    }
}

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn operator(spec: &BernsteinSpec, n: usize) -> NonlocalOperator {
    assemble_operator(&build_grid(-1.0, 1.0, n).unwrap(), spec).unwrap()
}

fn stable1() -> BernsteinSpec {
    BernsteinSpec::stable(1.0).unwrap()
}

fn torsion_of(op: &NonlocalOperator) -> Field {
    let n = op.n();
    solve_dirichlet(op, &PotentialField::zeros(n), &Field::constant(n, 1.0)).unwrap()
}

fn lambda(op: &NonlocalOperator, pot: &PotentialField) -> f64 {
    principal_eigenpair(op, pot, 1e-12).unwrap().lambda_star
}

#[test]
fn criterion_1_torsion_oracle() {
    let _g = serial();
    let mut c = Criterion::new(1, "torsion oracle", 10);
    let spec = stable1();
    let error_at = |n: usize| {
        let op = operator(&spec, n);
        torsion_of(&op).distance(&exact_torsion(&spec, &op.grid).unwrap())
    };
    let e199 = error_at(199);
    c.check(e199 <= 0.02, format!("n=199 error {e199:.5} > 0.02"));
    let errs: Vec<f64> = [25, 50, 100, 200].into_iter().map(error_at).collect();
    c.check(
        errs.windows(2).all(|w| w[1] < w[0]),
        format!("errors not decreasing: {errs:?}"),
    );
    c.note(format!("n=199 error {e199:.5}"));
    c.note(format!("errors n=25,50,100,200: {}", errs.iter().map(|e| format!("{e:.4}")).collect::<Vec<_>>().join(", ")));
    c.finish();
}

#[test]
fn criterion_2_eigenvalue_oracles() {
    let _g = serial();
    let mut c = Criterion::new(2, "eigenvalue oracles", 30);
    let local = lambda(&operator(&BernsteinSpec::local(), 199), &PotentialField::zeros(199));
    let want = PI * PI / 4.0;
    c.check((local - want).abs() <= 1e-3, format!("local {local:.6} vs {want:.6}"));

    // h halves along n = 99, 199, 399.
    let ls: Vec<f64> = [99, 199, 399]
        .into_iter()
        .map(|n| lambda(&operator(&stable1(), n), &PotentialField::zeros(n)))
        .collect();
    let order = ((ls[0] - ls[1]) / (ls[1] - ls[2])).log2();
    let extrapolated = ls[2] + (ls[2] - ls[1]) / (2f64.powf(order) - 1.0);
    let gap = (ls[1] - extrapolated).abs();
    c.check(order.is_finite() && order > 0.0, format!("refinement order {order:.3}"));
    c.check(gap <= 0.01, format!("n=199 stable eigenvalue {:.6} is {gap:.4} from {extrapolated:.6}", ls[1]));
    c.note(format!("local {local:.6}; stable n=199 {:.6}, extrapolated {extrapolated:.6} (order {order:.2})", ls[1]));

    let op = operator(&stable1(), 99);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_shift = 0.0f64;
    let mut worst_curv = f64::NEG_INFINITY;
    for _ in 0..5 {
        let u = PotentialField::new((0..99).map(|_| rng.random_range(-1.0..3.0)).collect());
        let base = lambda(&op, &u);
        let shift = rng.random_range(-2.0..2.0);
        worst_shift = worst_shift.max((lambda(&op, &u.shifted(shift)) - base - shift).abs());
        let mus: Vec<f64> = (0..9).map(|k| -2.0 + 0.5 * k as f64).collect();
        let vals: Vec<f64> = mus.iter().map(|&m| lambda(&op, &u.scaled(m))).collect();
        for w in vals.windows(3) {
            worst_curv = worst_curv.max(w[0] + w[2] - 2.0 * w[1]);
        }
    }
    c.check(worst_shift <= 1e-10, format!("shift identity off by {worst_shift:.2e}"));
    c.check(worst_curv <= 1e-10, format!("second difference {worst_curv:.2e} > 0"));
    c.note(format!("shift error {worst_shift:.1e}; max second difference {worst_curv:.1e}"));
    c.finish();
}

#[test]
fn criterion_3_comparison_suite() {
    let _g = serial();
    let mut c = Criterion::new(3, "comparison and maximum principle", 60);
    let n = 99;
    let specs = [
        stable1(),
        BernsteinSpec::relativistic(1.0, 1.0).unwrap(),
        "log_damped:alpha=1,beta=0.5".parse().unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut strict = 0;
    for spec in &specs {
        let op = operator(spec, n);
        for k in 0..100 {
            let pot = PotentialField::new((0..n).map(|_| rng.random_range(0.0..2.0)).collect());
            let g1 = Field::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
            let g2 = if k % 10 == 0 {
                g1.clone()
            } else {
                let bump: Vec<f64> = (0..n)
                    .map(|_| if rng.random_bool(0.3) { rng.random_range(0.0..1.0) } else { 0.0 })
                    .collect();
                g1.add(&Field::new(bump))
            };
            match compare_solutions(&op, &pot, &g1, &g2) {
                Ok(Comparison::StrictlyLess) => strict += 1,
                Ok(Comparison::Identical) => c.check(g1 == g2, format!("{spec}: pair {k} reported identical")),
                Err(e) => c.check(false, format!("{spec}: pair {k}: {e}")),
            }
            let solver = DirichletSolver::new(&op, &pot).unwrap();
            let (u1, u2) = (solver.solve(&g1).unwrap(), solver.solve(&g2).unwrap());
            let order = u1.values.iter().zip(&u2.values).all(|(a, b)| *a <= b + 1e-10);
            c.check(order, format!("{spec}: pair {k} not ordered"));
            let pos = solver.solve(&g2.sub(&g1)).unwrap();
            c.check(pos.min() >= -1e-10, format!("{spec}: pair {k}: nonnegative data gave {:.2e}", pos.min()));
        }
    }
    c.note(format!("{strict} strictly ordered pairs out of 300"));
    c.finish();
}

#[test]
fn criterion_4_stochastic_cross_validation() {
    let _g = serial();
    let mut c = Criterion::new(4, "stochastic cross-validation", 300);
    let families = [
        "stable:alpha=1",
        "stable:alpha=0.5",
        "relativistic:alpha=1,m=1",
        "sum_stable:alpha=1.5,beta=0.5",
        "log_damped:alpha=1,beta=0.5",
        "log_boosted:alpha=1,beta=0.5",
    ];
    let mut worst_z = 0.0f64;
    for (k, s) in families.iter().enumerate() {
        let spec: BernsteinSpec = s.parse().unwrap();
        let sampler = SubordinatorSampler::new(&spec, Scheme::ExactStable, 1e-4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(400 + k as u64);
        let draws: Vec<f64> = (0..1_000_000).map(|_| sampler.sample(1.0, &mut rng)).collect();
        for u in [0.5, 1.0, 2.0] {
            let est = MCEstimate::from_samples(&draws.iter().map(|x| (-u * x).exp()).collect::<Vec<_>>());
            let want = (-spec.psi(u).unwrap()).exp();
            let z = (est.mean - want) / est.std_error;
            worst_z = worst_z.max(z.abs());
            c.check(z.abs() <= 3.0, format!("Laplace law {s} at u={u}: z = {z:.2}"));
        }
    }
    c.note(format!("Laplace law max |z| {worst_z:.2}"));

    let grid = build_grid(-1.0, 1.0, 199).unwrap();
    let g = Field::from_fn(&grid, |x| 1.0 + 0.5 * (2.0 * x).cos());
    let cfg = PathConfig { dt: 5e-4, n_paths: 10_000, seed: 4, t_max: 60.0, ..Default::default() };
    let mut worst_green = 0.0f64;
    for s in ["stable:alpha=1", "relativistic:alpha=1,m=1", "log_damped:alpha=1,beta=0.5"] {
        let spec: BernsteinSpec = s.parse().unwrap();
        let op = assemble_operator(&grid, &spec).unwrap();
        let det = solve_dirichlet(&op, &PotentialField::zeros(199), &g).unwrap();
        for x0 in [-0.6, -0.3, 0.0, 0.3, 0.6] {
            let est = mc_green_potential(&grid, &spec, &g, x0, &cfg).unwrap();
            let z = (est.mean - det.interpolate(&grid, x0)) / est.std_error;
            worst_green = worst_green.max(z.abs());
            c.check(z.abs() <= 3.0, format!("Green potential {s} at x0={x0}: z = {z:.2}"));
        }
    }
    c.note(format!("Green potential max |z| {worst_green:.2}"));

    let spec = stable1();
    let op = assemble_operator(&grid, &spec).unwrap();
    let zero = PotentialField::zeros(199);
    let pair = principal_eigenpair(&op, &zero, 1e-12).unwrap();
    let ecfg = PathConfig { n_paths: 20_000, ..cfg };
    let t_grid: Vec<f64> = (1..=8).map(|k| 0.5 * k as f64).collect();
    let fit = mc_eigenvalue(&grid, &spec, &zero, &t_grid, &ecfg).unwrap();
    let rel = (fit.lambda - pair.lambda_star).abs() / pair.lambda_star;
    c.check(rel <= 0.1, format!("MC eigenvalue {:.4} vs {:.4}", fit.lambda, pair.lambda_star));
    c.note(format!("MC eigenvalue {:.4} vs {:.4} ({:.1}%)", fit.lambda, pair.lambda_star, 100.0 * rel));

    let scaled: Vec<MCEstimate> = [0.25, 0.5, 1.0]
        .iter()
        .map(|&t| {
            let e = fk_expectation(&grid, &spec, &zero, &pair.phi, t, 0.0, &ecfg).unwrap();
            let s = (pair.lambda_star * t).exp();
            MCEstimate { mean: s * e.mean, std_error: s * e.std_error, ..e }
        })
        .collect();
    let mut worst_pair = 0.0f64;
    for i in 0..3 {
        for j in i + 1..3 {
            let (a, b) = (scaled[i], scaled[j]);
            let z = (a.mean - b.mean) / a.std_error.hypot(b.std_error);
            worst_pair = worst_pair.max(z.abs());
            c.check(z.abs() <= 3.0, format!("eigen identity t-dependence z = {z:.2}"));
        }
    }
    c.note(format!("eigen identity max pairwise |z| {worst_pair:.2}"));
    c.finish();
}

#[test]
fn criterion_5_monotone_iteration() {
    let _g = serial();
    let mut c = Criterion::new(5, "monotone iteration", 30);
    let template = ApProblem::canonical(199, 0.0).unwrap();
    let sup = build_supersolution(&template).unwrap();
    for rho in [sup.rho1, -2.0, -0.5] {
        let p = template.with_rho(rho);
        let sub = build_subsolution(&p).unwrap();
        let opts = IterationOptions { keep_iterates: true, ceiling: 1e4, ..Default::default() };
        let upper = (rho <= sup.rho1).then_some(&sup.u);
        match monotone_iterate(&p, &sub.u, upper, opts) {
            Ok(t) => {
                c.check(t.status == IterationStatus::Converged, format!("rho={rho}: {:?}", t.status));
                let chain = t.iterates.windows(2).all(|w| {
                    let scale = w[1].sup_norm().max(1.0);
                    w[0].values.iter().zip(&w[1].values).all(|(a, b)| *a <= b + 1e-12 * scale)
                });
                c.check(chain, format!("rho={rho}: chain broken"));
                if let Some(up) = upper {
                    let below = t.iterates.iter().all(|u| u.values.iter().zip(&up.values).all(|(a, b)| *a <= b + 1e-12));
                    c.check(below, format!("rho={rho}: iterate above the supersolution"));
                }
                let r = p.residual_norm(&t.solution).unwrap();
                c.check(r <= 1e-8, format!("rho={rho}: residual {r:.2e}"));
                c.note(format!("rho={rho:.3}: {} iterations, residual {r:.1e}", t.iterations()));
            }
            Err(e) => c.check(false, format!("rho={rho}: {e}")),
        }
    }
    for slope in [0.5, -0.7] {
        let n = template.n();
        let h = Field::from_fn(template.grid(), |x| 0.3 * (3.0 * x).sin() + 0.2);
        let p = ApProblem::new(
            template.op.clone(),
            Nonlinearity::linear(n, slope),
            h,
            -0.4,
            PotentialField::constant(n, -slope),
            PotentialField::constant(n, -slope - 2.0 * template.lambda_star),
            0.0,
        )
        .unwrap();
        let sub = build_subsolution(&p).unwrap();
        let t = monotone_iterate(&p, &sub.u, None, IterationOptions { ceiling: 1e6, ..Default::default() }).unwrap();
        let direct = solve_dirichlet(&p.op, &PotentialField::constant(n, -slope), &p.forcing()).unwrap();
        let d = t.solution.distance(&direct);
        c.check(d <= 1e-7, format!("linear slope {slope}: distance {d:.2e}"));
    }
    c.finish();
}

fn canonical_scan() -> (ApProblem, ScanOptions, BranchScan) {
    let template = ApProblem::canonical(99, 0.0).unwrap();
    let opts = ScanOptions { seed: 6, ..Default::default() };
    let scan = scan_rho(&template, -10.0, 2.0, &opts).unwrap();
    (template, opts, scan)
}

#[test]
fn criterion_6_bifurcation_structure() {
    let _g = serial();
    let mut c = Criterion::new(6, "bifurcation structure", 600);
    let (template, opts, scan) = canonical_scan();
    let (lo, hi) = scan.rho_star_bracket;
    c.check(hi - lo <= 0.01, format!("bracket width {:.4}", hi - lo));
    c.check(lo >= 0.0, format!("bracket [{lo}, {hi}] contradicts rho* >= 0"));
    c.check(scan.minimal_monotone, "minimal solutions not nondecreasing in rho");
    let solvable = scan.outcomes.iter().filter(|o| o.is_solvable()).count();
    let with_minimal = scan.outcomes.iter().filter(|o| o.minimal().is_some()).count();
    c.check(solvable == with_minimal, "a solvable level lacks a minimal solution");

    let mid = 0.5 * (lo + hi) - 0.5;
    let o = classify_rho(&template, mid, &opts).unwrap();
    match (o.minimal(), &o.second, o.separation) {
        (Some(u_min), Some(second), Some(sep)) => {
            c.check(sep >= 0.05, format!("separation {sep:.4} at rho={mid:.4}"));
            let above = second.values.iter().zip(&u_min.values).all(|(a, b)| *a >= b - 1e-8);
            c.check(above, "second solution dips below the minimal one");
            c.note(format!("second solution at rho={mid:.4}, separation {sep:.3}"));
        }
        _ => c.check(false, format!("no second solution at rho={mid:.4}")),
    }

    let beyond = hi + 1.0;
    let o = classify_rho(&template, beyond, &opts).unwrap();
    match o.diagnostics {
        Some(d) if o.classification == Classification::NoSolutionFound => {
            c.check(d.newton_starts >= 50, format!("only {} starts", d.newton_starts));
            c.check(
                d.iteration_max_norm > d.ceiling,
                format!("iterates peaked at {:.2} under the ceiling {:.2}", d.iteration_max_norm, d.ceiling),
            );
            c.note(format!(
                "no solution at rho={beyond:.4} after {} starts; iterates reached {:.3e} over ceiling {:.1}",
                d.newton_starts, d.iteration_max_norm, d.ceiling
            ));
        }
        _ => c.check(false, format!("a solution was found at rho={beyond:.4}")),
    }
    c.note(format!("bracket [{lo:.4}, {hi:.4}] over {} levels", scan.outcomes.len()));
    c.finish();
}

#[test]
fn criterion_7_apriori_bounds() {
    let _g = serial();
    let mut c = Criterion::new(7, "a priori bounds", 120);
    let (_, opts, scan) = canonical_scan();
    c.check(opts.rho_hat == 10.0, "rho_hat must be 10");
    for o in scan.outcomes.iter().filter(|o| o.is_solvable()) {
        match o.apriori {
            Some(a) => c.check(a.domination_gap >= -1e-8, format!("rho={}: u below v by {:.2e}", o.rho, -a.domination_gap)),
            None => c.check(o.rho < -opts.rho_hat, format!("rho={} has no a priori report", o.rho)),
        }
    }
    c.note(format!("growth ratio bound over the branch {:.3e}", scan.max_growth_ratio));

    let spec = stable1();
    let mut constants = vec![];
    for n in [49, 99, 199] {
        let op = operator(&spec, n);
        let phi = principal_eigenpair(&op, &PotentialField::zeros(n), 1e-12).unwrap().phi;
        for (what, field) in [("Phi1", phi), ("torsion", torsion_of(&op))] {
            let (lo, hi) = boundary_ratio(&field, &op.grid, &spec).unwrap();
            constants.push((n, what, lo.min(1.0 / hi)));
        }
    }
    let fitted = constants.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
    c.check(fitted > 0.0, format!("fitted constant {fitted}"));
    for what in ["Phi1", "torsion"] {
        let cs: Vec<f64> = constants.iter().filter(|c| c.1 == what).map(|c| c.2).collect();
        let spread = cs.iter().fold(0.0f64, |m, v| m.max(*v)) / cs.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        c.check(spread <= 1.2, format!("{what} boundary constant moves by {spread:.3}x under refinement"));
    }
    c.note(format!(
        "boundary ratios within [c, 1/c] for c = {fitted:.3}; per grid {}",
        constants.iter().map(|(n, w, v)| format!("{w}@{n}={v:.3}")).collect::<Vec<_>>().join(", ")
    ));
    c.finish();
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_8_determinism() {
    let _g = serial();
    let mut c = Criterion::new(8, "determinism", 300);
    let base = "spec = \"stable:alpha=1\"\nseed = 17\n[domain]\na = -1.0\nb = 1.0\nn = 99\n";
    let configs = [
        ("validate", ""),
        ("solve_linear", "[linear]\npotential = 0.3\nrhs = 2.0\n"),
        ("eigen", ""),
        ("torsion", ""),
        ("mc_crosscheck", "[mc]\ndt = 1e-3\nn_paths = 2000\npoints = [0.0, 0.4]\neigenvalue = true\n"),
        ("ap_scan", "[scan]\nn_starts = 20\n"),
        ("second_solution", "[problem]\nrho = -0.7\n"),
    ];
    let tmp = tempfile::tempdir().unwrap();
    for (pipeline, extra) in configs {
        let text = format!("pipeline = \"{pipeline}\"\n{base}{extra}");
        let cfg = ExperimentConfig::from_toml_str(&text, pipeline).unwrap();
        let out = Some(tmp.path().to_path_buf());
        let first = run_config(cfg.clone(), &RunOptions { output: out.clone(), threads: Some(1), seed: None });
        let second = run_config(cfg, &RunOptions { output: out, threads: Some(3), seed: None });
        match (first, second) {
            (Ok(a), Ok(b)) => {
                let (ta, tb) = (read_tree(&a.dir), read_tree(&b.dir));
                c.check(ta.len() >= 2, format!("{pipeline}: only {} files", ta.len()));
                c.check(ta == tb, format!("{pipeline}: artifacts differ between runs"));
            }
            (a, b) => c.check(false, format!("{pipeline}: {:?} / {:?}", a.err(), b.err())),
        }
    }
    c.note("7 pipelines rerun with 1 and 3 worker threads, artifacts byte-identical");
    c.finish();
}

#[test]
fn canonical_problem_is_valid() {
    let _g = serial();
    let p = ApProblem::canonical(99, 0.0).unwrap();
    let r = validate_ap(&p, &default_q_grid(), ValidateOptions::default()).unwrap();
    assert!((r.margin_u1 - 0.5 * p.lambda_star).abs() < 1e-9);
    assert!((r.margin_u2 - p.lambda_star).abs() < 1e-9);
}
