//! One function per pipeline. Each writes its artifacts into the run
//! directory and returns headline numbers for the manifest.

use std::path::Path;
use std::sync::Arc;

use nlap_core::ap::{
    classify_rho, default_q_grid, scan_rho, validate_ap, ApProblem, BranchScan, IterationOptions, NewtonOptions,
    Nonlinearity, ScanOptions, ValidateOptions,
};
use nlap_core::grid::{assemble_operator, build_grid, DomainGrid, Field, NonlocalOperator};
use nlap_core::linear::{
    boundary_ratio, exact_torsion, principal_eigenpair, solve_dirichlet, write_solution_csv, DirichletSolver,
    PotentialField,
};
use nlap_core::stochastic::{mc_eigenvalue, mc_green_potential};
use serde::Serialize;

use crate::config::{ExperimentConfig, NonlinearityConfig, Pipeline, Units};
use crate::error::{CliError, Result};
use crate::manifest::{Headline, Headlines};
use crate::svg::Figure;

pub struct PipelineOutput {
    pub headline: Headlines,
    pub artifacts: Vec<String>,
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    dir: &'a Path,
    grid: DomainGrid,
    headline: Headlines,
    artifacts: Vec<String>,
}

impl Run<'_> {
    fn path(&mut self, name: &str) -> std::path::PathBuf {
        self.artifacts.push(name.to_string());
        self.dir.join(name)
    }

    fn put(&mut self, key: &str, value: f64) {
        if value.is_finite() {
            self.headline.insert(key.to_string(), Headline::exact(value));
        }
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value)? + "\n";
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    fn operator(&self) -> Result<NonlocalOperator> {
        Ok(assemble_operator(&self.grid, &self.cfg.spec)?)
    }
}

pub fn execute(cfg: &ExperimentConfig, dir: &Path) -> Result<PipelineOutput> {
    let d = cfg.domain;
    let mut run = Run {
        cfg,
        dir,
        grid: build_grid(d.a, d.b, d.n)?,
        headline: Headlines::new(),
        artifacts: vec![],
    };
    match cfg.pipeline {
        Pipeline::Validate => validate(&mut run)?,
        Pipeline::SolveLinear => solve_linear(&mut run)?,
        Pipeline::Eigen => eigen(&mut run)?,
        Pipeline::Torsion => torsion(&mut run)?,
        Pipeline::McCrosscheck => mc_crosscheck(&mut run)?,
        Pipeline::ApScan => ap_scan(&mut run)?,
        Pipeline::SecondSolution => second_solution(&mut run)?,
    }
    Ok(PipelineOutput {
        headline: run.headline,
        artifacts: run.artifacts,
    })
}

/// Builds the semilinear problem described by the `[problem]` block.
pub fn build_problem(cfg: &ExperimentConfig, op: Arc<NonlocalOperator>) -> Result<ApProblem> {
    let n = op.n();
    let p = &cfg.problem;
    let scale = match p.units {
        Units::LambdaStar => principal_eigenpair(&op, &PotentialField::zeros(n), 1e-12)?.lambda_star,
        Units::Absolute => 1.0,
    };
    let f = match p.nonlinearity {
        NonlinearityConfig::PiecewiseLinear { slope_neg, slope_pos } => {
            Nonlinearity::piecewise_linear(n, scale * slope_neg, scale * slope_pos)
        }
        NonlinearityConfig::Quadratic { coefficient } => {
            Nonlinearity::pointwise(move |_, q| coefficient * q * q, move |_, q| 2.0 * coefficient * q)
        }
    };
    Ok(ApProblem::new(
        op,
        f,
        Field::constant(n, p.h),
        p.rho,
        PotentialField::constant(n, scale * p.u1),
        PotentialField::constant(n, scale * p.u2),
        p.c,
    )?)
}

fn scan_options(cfg: &ExperimentConfig) -> ScanOptions {
    let s = &cfg.scan;
    ScanOptions {
        coarse_points: s.coarse_points,
        bisection_tol: s.bisection_tol,
        max_bisections: s.max_bisections,
        n_starts: s.n_starts,
        rho_hat: s.rho_hat,
        ceiling_factor: s.ceiling_factor,
        seed: cfg.seed,
        search_second: s.search_second,
        iteration: IterationOptions {
            tol: s.tol,
            max_iters: s.max_iters,
            ..Default::default()
        },
        newton: NewtonOptions {
            separation: s.separation,
            ..Default::default()
        },
    }
}

fn validate(run: &mut Run) -> Result<()> {
    let problem = build_problem(run.cfg, Arc::new(run.operator()?))?;
    let opts = ValidateOptions {
        relax_ordering: run.cfg.problem.relax_ordering,
    };
    let report = validate_ap(&problem, &default_q_grid(), opts)?;
    run.put("margin_u1", report.margin_u1);
    run.put("margin_u2", report.margin_u2);
    run.put("growth_constant", report.growth_constant);
    run.put("lambda_star", problem.lambda_star);
    run.write_json("report.json", &report)
}

#[derive(Serialize)]
struct LinearSummary {
    sup_norm: f64,
    residual: f64,
    lambda_star: Option<f64>,
}

fn solve_linear(run: &mut Run) -> Result<()> {
    let op = run.operator()?;
    let n = op.n();
    let pot = PotentialField::constant(n, run.cfg.linear.potential);
    let g = Field::constant(n, run.cfg.linear.rhs);
    let solver = DirichletSolver::new(&op, &pot)?;
    let u = solver.solve(&g)?;
    let summary = LinearSummary {
        sup_norm: u.sup_norm(),
        residual: solver.residual(&u, &g),
        lambda_star: solver.lambda_star,
    };
    run.put("sup_norm", summary.sup_norm);
    run.put("residual", summary.residual);
    let csv = run.path("solution.csv");
    write_solution_csv(&u, &run.grid, &run.cfg.spec, csv)?;
    run.write_json("summary.json", &summary)
}

fn eigen(run: &mut Run) -> Result<()> {
    let op = run.operator()?;
    let pot = PotentialField::constant(op.n(), run.cfg.linear.potential);
    let pair = principal_eigenpair(&op, &pot, run.cfg.linear.eigen_tol)?;
    let (lo, hi) = boundary_ratio(&pair.phi, &run.grid, &run.cfg.spec)?;
    run.put("lambda", pair.lambda_star);
    run.put("residual", pair.residual);
    run.put("boundary_ratio_min", lo);
    run.put("boundary_ratio_max", hi);
    let csv = run.path("eigenfunction.csv");
    write_solution_csv(&pair.phi, &run.grid, &run.cfg.spec, csv)?;
    let json = run.path("eigen.json");
    pair.write_json(json)?;
    Ok(())
}

fn torsion(run: &mut Run) -> Result<()> {
    let op = run.operator()?;
    let n = op.n();
    let u = solve_dirichlet(&op, &PotentialField::zeros(n), &Field::constant(n, 1.0))?;
    let exact = exact_torsion(&run.cfg.spec, &run.grid);
    run.put("u_max", u.max());
    let (lo, hi) = boundary_ratio(&u, &run.grid, &run.cfg.spec)?;
    run.put("boundary_ratio_min", lo);
    run.put("boundary_ratio_max", hi);
    let path = run.path("torsion.csv");
    let mut w = csv::Writer::from_path(&path)?;
    match &exact {
        Some(ex) => {
            w.write_record(["x", "u", "exact", "abs_error"])?;
            for i in 0..n {
                let (x, v, e) = (run.grid.nodes[i], u.values[i], ex.values[i]);
                w.write_record([x.to_string(), v.to_string(), e.to_string(), (v - e).abs().to_string()])?;
            }
        }
        None => {
            w.write_record(["x", "u"])?;
            for (x, v) in run.grid.nodes.iter().zip(&u.values) {
                w.write_record([x.to_string(), v.to_string()])?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    if let Some(ex) = exact {
        run.put("max_error", u.distance(&ex));
    }
    Ok(())
}

#[derive(Serialize)]
struct GreenRow {
    x0: f64,
    mc_mean: f64,
    mc_std_error: f64,
    deterministic: f64,
    z: f64,
}

fn mc_crosscheck(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let op = run.operator()?;
    let n = op.n();
    let paths = cfg.mc.path_config(cfg.seed);
    let g = Field::constant(n, cfg.linear.rhs);
    let zero = PotentialField::zeros(n);
    let det = solve_dirichlet(&op, &zero, &g)?;
    let mut rows = vec![];
    for &x0 in &cfg.mc.points {
        let est = mc_green_potential(&run.grid, &cfg.spec, &g, x0, &paths)?;
        let d = det.interpolate(&run.grid, x0);
        rows.push(GreenRow {
            x0,
            mc_mean: est.mean,
            mc_std_error: est.std_error,
            deterministic: d,
            z: (est.mean - d) / est.std_error,
        });
        run.headline
            .insert(format!("green[x0={x0}]"), Headline::estimate(est.mean, est.std_error));
        run.put(&format!("deterministic[x0={x0}]"), d);
    }
    run.put("max_abs_z", rows.iter().fold(0.0f64, |m, r| m.max(r.z.abs())));
    let path = run.path("green.csv");
    let mut w = csv::Writer::from_path(&path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    if cfg.mc.eigenvalue {
        let fit = mc_eigenvalue(&run.grid, &cfg.spec, &zero, &cfg.mc.t_grid, &paths)?;
        let det_lambda = principal_eigenpair(&op, &zero, cfg.linear.eigen_tol)?.lambda_star;
        run.put("lambda_mc", fit.lambda);
        run.put("lambda_deterministic", det_lambda);
        run.put("lambda_relative_error", (fit.lambda - det_lambda).abs() / det_lambda);
        run.write_json("eigenvalue_fit.json", &fit)?;
    }
    Ok(())
}

fn branch_svg(scan: &BranchScan) -> String {
    let minimal: Vec<(f64, f64)> = scan
        .outcomes
        .iter()
        .filter_map(|o| o.minimal().map(|u| (o.rho, u.sup_norm())))
        .collect();
    let second: Vec<(f64, f64)> = scan
        .outcomes
        .iter()
        .filter_map(|o| o.second.as_ref().map(|u| (o.rho, u.sup_norm())))
        .collect();
    let unsolvable: Vec<(f64, f64)> = scan
        .outcomes
        .iter()
        .filter(|o| !o.is_solvable())
        .map(|o| (o.rho, 0.0))
        .collect();
    let rho_lo = scan.rho_values.first().copied().unwrap_or(0.0);
    let rho_hi = scan.rho_values.last().copied().unwrap_or(1.0);
    let y_max = minimal.iter().chain(&second).fold(0.0f64, |m, p| m.max(p.1));
    let mut fig = Figure::new(720.0, 480.0, (rho_lo, rho_hi), (0.0, 1.05 * y_max.max(1e-3)));
    let (b0, b1) = scan.rho_star_bracket;
    fig.band(b0, b1, "#d62728", 0.25);
    fig.polyline(&minimal, "#1f77b4");
    fig.points(&minimal, "#1f77b4", 3.0);
    fig.polyline(&second, "#ff7f0e");
    fig.points(&second, "#ff7f0e", 3.0);
    fig.points(&unsolvable, "#7f7f7f", 2.5);
    fig.axes("rho", "sup-norm of solution", 5);
    fig.render()
}

fn ap_scan(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let template = build_problem(cfg, Arc::new(run.operator()?))?;
    let scan = scan_rho(&template, cfg.scan.rho_lo, cfg.scan.rho_hi, &scan_options(cfg))?;
    run.put("rho_star_lo", scan.rho_star_bracket.0);
    run.put("rho_star_hi", scan.rho_star_bracket.1);
    run.put("resolution", scan.resolution);
    run.put("rho1", scan.rho1);
    run.put("max_growth_ratio", scan.max_growth_ratio);
    run.put("minimal_monotone", f64::from(u8::from(scan.minimal_monotone)));
    run.put("levels", scan.outcomes.len() as f64);
    let csv = run.path("branch.csv");
    scan.write_csv(csv)?;
    let json = run.path("bracket.json");
    scan.write_bracket_json(json)?;
    let svg = run.path("branch.svg");
    std::fs::write(&svg, branch_svg(&scan)).map_err(|e| CliError::io(&svg, e))
}

#[derive(Serialize)]
struct SecondSummary {
    rho: f64,
    solvable: bool,
    u_min_norm: Option<f64>,
    second_norm: Option<f64>,
    separation: Option<f64>,
    residual: Option<f64>,
}

fn second_solution(run: &mut Run) -> Result<()> {
    let cfg = run.cfg;
    let template = build_problem(cfg, Arc::new(run.operator()?))?;
    let opts = ScanOptions {
        search_second: true,
        ..scan_options(cfg)
    };
    let o = classify_rho(&template, cfg.problem.rho, &opts)?;
    let summary = SecondSummary {
        rho: o.rho,
        solvable: o.is_solvable(),
        u_min_norm: o.minimal().map(Field::sup_norm),
        second_norm: o.second.as_ref().map(Field::sup_norm),
        separation: o.separation,
        residual: o.residual,
    };
    run.put("solvable", f64::from(u8::from(summary.solvable)));
    run.put("second_found", f64::from(u8::from(o.second.is_some())));
    for (k, v) in [
        ("u_min_norm", summary.u_min_norm),
        ("second_norm", summary.second_norm),
        ("separation", summary.separation),
        ("residual", summary.residual),
    ] {
        if let Some(v) = v {
            run.put(k, v);
        }
    }
    let path = run.path("solutions.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["x", "u_min", "u_second"])?;
    let cell = |f: Option<&Field>, i: usize| f.map(|u| u.values[i].to_string()).unwrap_or_default();
    for (i, x) in run.grid.nodes.iter().enumerate() {
        w.write_record([x.to_string(), cell(o.minimal(), i), cell(o.second.as_ref(), i)])?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    run.write_json("summary.json", &summary)
}
