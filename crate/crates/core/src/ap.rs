//! Semilinear problems `L u = f(x, u) + ρΦ1 + h` with zero exterior data,
//! where `L` discretizes `Ψ(−Δ)` and `Φ1` is its principal eigenfunction.
//!
//! Solvability in `ρ` has a threshold `ρ*`: below it a minimal solution is
//! reached by monotone iteration from a subsolution and a second one is
//! searched for by deflated Newton; above it every search fails. The scan
//! reports what was found and never claims non-existence as a proof.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::bernstein::{logspace, BernsteinSpec};
use crate::error::{Error, Result};
use crate::grid::{apply_operator, assemble_operator, build_grid, DomainGrid, Field, NonlocalOperator};
use crate::linear::{boundary_ratio, principal_eigenpair, DirichletSolver, PotentialField};

/// `(x, q) ↦ value`.
pub type ScalarFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Offset added to the subsolution constant so that `u̲ < 0` in the
/// interior even when `ρ`, `h` and `C` all vanish.
const SUBSOLUTION_OFFSET: f64 = 1.0;
/// Points per node when sampling `∂_q f` for the Lipschitz shift.
const LIPSCHITZ_SAMPLES: usize = 1024;
const THETA_SAFETY: f64 = 1.1;

#[derive(Clone)]
pub enum Nonlinearity {
    /// `f(x_i, q) = slope_neg[i]·q` for `q ≤ 0` and `slope_pos[i]·q` for `q ≥ 0`.
    PiecewiseLinear { slope_neg: Vec<f64>, slope_pos: Vec<f64> },
    /// Arbitrary `f(x, q)` with its `q`-derivative.
    Pointwise { value: ScalarFn, derivative: ScalarFn },
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Nonlinearity::PiecewiseLinear { slope_neg, slope_pos } => f
                .debug_struct("PiecewiseLinear")
                .field("slope_neg", slope_neg)
                .field("slope_pos", slope_pos)
                .finish(),
            Nonlinearity::Pointwise { .. } => f.write_str("Pointwise(..)"),
        }
    }
}

impl Nonlinearity {
    pub fn piecewise_linear(n: usize, slope_neg: f64, slope_pos: f64) -> Self {
        Nonlinearity::PiecewiseLinear {
            slope_neg: vec![slope_neg; n],
            slope_pos: vec![slope_pos; n],
        }
    }

    /// `f(x, q) = slope·q`.
    pub fn linear(n: usize, slope: f64) -> Self {
        Self::piecewise_linear(n, slope, slope)
    }

    pub fn pointwise(
        value: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Nonlinearity::Pointwise {
            value: Arc::new(value),
            derivative: Arc::new(derivative),
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        if let Nonlinearity::PiecewiseLinear { slope_neg, slope_pos } = self {
            if slope_neg.len() != n || slope_pos.len() != n {
                return Err(Error::Usage(format!(
                    "nonlinearity has {}/{} slopes, grid has {n} nodes",
                    slope_neg.len(),
                    slope_pos.len()
                )));
            }
            if slope_neg.iter().chain(slope_pos).any(|s| !s.is_finite()) {
                return Err(Error::Usage("nonlinearity has non-finite slopes".into()));
            }
        }
        Ok(())
    }

    pub fn value(&self, i: usize, x: f64, q: f64) -> f64 {
        match self {
            Nonlinearity::PiecewiseLinear { slope_neg, slope_pos } => {
                if q <= 0.0 {
                    slope_neg[i] * q
                } else {
                    slope_pos[i] * q
                }
            }
            Nonlinearity::Pointwise { value, .. } => value(x, q),
        }
    }

    /// `∂_q f`; at the kink of a piecewise linear `f` the average slope.
    pub fn derivative(&self, i: usize, x: f64, q: f64) -> f64 {
        match self {
            Nonlinearity::PiecewiseLinear { slope_neg, slope_pos } => {
                if q < 0.0 {
                    slope_neg[i]
                } else if q > 0.0 {
                    slope_pos[i]
                } else {
                    0.5 * (slope_neg[i] + slope_pos[i])
                }
            }
            Nonlinearity::Pointwise { derivative, .. } => derivative(x, q),
        }
    }

    pub fn apply(&self, grid: &DomainGrid, u: &Field) -> Field {
        Field::new(
            grid.nodes
                .iter()
                .zip(&u.values)
                .enumerate()
                .map(|(i, (&x, &q))| self.value(i, x, q))
                .collect(),
        )
    }

    pub fn derivative_at(&self, grid: &DomainGrid, u: &Field) -> Vec<f64> {
        grid.nodes
            .iter()
            .zip(&u.values)
            .enumerate()
            .map(|(i, (&x, &q))| self.derivative(i, x, q))
            .collect()
    }

    /// `sup |∂_q f|` over the nodes and `q ∈ [lo, hi]`.
    pub fn lipschitz(&self, grid: &DomainGrid, lo: f64, hi: f64) -> f64 {
        match self {
            Nonlinearity::PiecewiseLinear { slope_neg, slope_pos } => {
                let mut m = 0.0f64;
                if lo <= 0.0 {
                    m = slope_neg.iter().fold(m, |m, s| m.max(s.abs()));
                }
                if hi >= 0.0 {
                    m = slope_pos.iter().fold(m, |m, s| m.max(s.abs()));
                }
                m
            }
            Nonlinearity::Pointwise { derivative, .. } => {
                let qs: Vec<f64> = (0..LIPSCHITZ_SAMPLES)
                    .map(|k| lo + (hi - lo) * k as f64 / (LIPSCHITZ_SAMPLES - 1) as f64)
                    .collect();
                grid.nodes
                    .iter()
                    .flat_map(|&x| qs.iter().map(move |&q| (x, q)))
                    .fold(0.0f64, |m, (x, q)| m.max(derivative(x, q).abs()))
            }
        }
    }
}

/// One instance of the problem at a fixed `ρ`.
#[derive(Debug, Clone)]
pub struct ApProblem {
    pub op: Arc<NonlocalOperator>,
    pub f: Nonlinearity,
    pub h: Field,
    pub rho: f64,
    pub u1: PotentialField,
    pub u2: PotentialField,
    /// Constant in the lower envelopes of `f`.
    pub c: f64,
    /// Principal eigenfunction of `L`, `‖Φ1‖_∞ = 1`.
    pub phi1: Field,
    pub lambda_star: f64,
}

impl ApProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        op: Arc<NonlocalOperator>,
        f: Nonlinearity,
        h: Field,
        rho: f64,
        u1: PotentialField,
        u2: PotentialField,
        c: f64,
    ) -> Result<Self> {
        let n = op.n();
        f.check(n)?;
        h.check_len(&op.grid, "h")?;
        for (name, u) in [("U1", &u1), ("U2", &u2)] {
            if u.len() != n {
                return Err(Error::Usage(format!("{name} has {} values, grid has {n}", u.len())));
            }
        }
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::Usage(format!("envelope constant must be finite and >= 0, got {c}")));
        }
        if !rho.is_finite() {
            return Err(Error::Usage(format!("rho must be finite, got {rho}")));
        }
        let pair = principal_eigenpair(&op, &PotentialField::zeros(n), 1e-12)?;
        Ok(ApProblem {
            op,
            f,
            h,
            rho,
            u1,
            u2,
            c,
            phi1: pair.phi,
            lambda_star: pair.lambda_star,
        })
    }

    /// `f(u) = (λ*/2)u` for `u ≤ 0`, `2λ*u` for `u ≥ 0`, `U1 = −λ*/2`,
    /// `U2 = −2λ*`, `C = 0`, `h = 0` on `(−1, 1)` with the α = 1 stable
    /// operator. The threshold is exactly `ρ* = 0`, and for `ρ < 0` the two
    /// solutions are `(2ρ/λ*)Φ1` and `(−ρ/λ*)Φ1`.
    pub fn canonical(n: usize, rho: f64) -> Result<Self> {
        let grid = build_grid(-1.0, 1.0, n)?;
        let op = Arc::new(assemble_operator(&grid, &BernsteinSpec::stable(1.0)?)?);
        Self::slope_crossing(op, rho)
    }

    /// The canonical slopes and potentials on an arbitrary operator.
    pub fn slope_crossing(op: Arc<NonlocalOperator>, rho: f64) -> Result<Self> {
        let n = op.n();
        let pair = principal_eigenpair(&op, &PotentialField::zeros(n), 1e-12)?;
        let l = pair.lambda_star;
        Ok(ApProblem {
            f: Nonlinearity::piecewise_linear(n, 0.5 * l, 2.0 * l),
            h: Field::zeros(n),
            rho,
            u1: PotentialField::constant(n, -0.5 * l),
            u2: PotentialField::constant(n, -2.0 * l),
            c: 0.0,
            phi1: pair.phi,
            lambda_star: l,
            op,
        })
    }

    pub fn grid(&self) -> &DomainGrid {
        &self.op.grid
    }

    pub fn n(&self) -> usize {
        self.op.n()
    }

    pub fn with_rho(&self, rho: f64) -> Self {
        ApProblem { rho, ..self.clone() }
    }

    /// `ρΦ1 + h`.
    pub fn forcing(&self) -> Field {
        self.phi1.scaled(self.rho).add(&self.h)
    }

    /// `Lu − f(·, u) − ρΦ1 − h`.
    pub fn residual(&self, u: &Field) -> Result<Field> {
        let lu = apply_operator(&self.op, u)?;
        Ok(lu.sub(&self.f.apply(self.grid(), u)).sub(&self.forcing()))
    }

    pub fn residual_norm(&self, u: &Field) -> Result<f64> {
        Ok(self.residual(u)?.sup_norm())
    }
}

/// `min_i (a_i − b_i)`.
fn min_gap(a: &Field, b: &Field) -> f64 {
    a.values
        .iter()
        .zip(&b.values)
        .fold(f64::INFINITY, |m, (x, y)| m.min(x - y))
}

fn scale_of(fields: &[&Field]) -> f64 {
    fields.iter().fold(1.0f64, |m, f| m.max(f.sup_norm()))
}

/// `0` and `±q` for `q` log-spaced over `[1e−3, 1e6]`.
pub fn default_q_grid() -> Vec<f64> {
    let pos = logspace(1e-3, 1e6, 91);
    let mut q: Vec<f64> = pos.iter().rev().map(|v| -v).collect();
    q.push(0.0);
    q.extend(pos);
    q
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ValidateOptions {
    /// Record instead of enforce `U1 ≥ U2`.
    pub relax_ordering: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ApReport {
    pub lambda_u1: f64,
    pub lambda_u2: f64,
    /// `λ*_{U1}`; positive when the condition holds.
    pub margin_u1: f64,
    /// `−λ*_{U2}`; positive when the condition holds.
    pub margin_u2: f64,
    pub ordering_holds: bool,
    /// `min (f(x, q) + U1 q + C)` over sampled `q ≤ 0`.
    pub envelope_slack_neg: f64,
    /// `min (f(x, q) + U2 q + C)` over sampled `q ≥ 0`.
    pub envelope_slack_pos: f64,
    /// `sup |f(x, q)| / (1 + |q|)` over the sample.
    pub growth_constant: f64,
    /// Growth ratio of the top decade of `|q|` against the one below it.
    pub growth_decade_ratio: f64,
}

fn violation(condition: &str, detail: String) -> Error {
    Error::Validation {
        condition: condition.into(),
        detail,
    }
}

/// `sup |f(x, q)| / (1 + |q|)` over nodes and `q_grid`.
pub fn growth_constant(problem: &ApProblem, q_grid: &[f64]) -> f64 {
    growth_over(problem, q_grid.iter().copied())
}

fn growth_over(problem: &ApProblem, qs: impl Iterator<Item = f64> + Clone) -> f64 {
    let grid = problem.grid();
    let mut m = 0.0f64;
    for (i, &x) in grid.nodes.iter().enumerate() {
        for q in qs.clone() {
            m = m.max(problem.f.value(i, x, q).abs() / (1.0 + q.abs()));
        }
    }
    m
}

/// Checks the structural conditions on a problem over a sample of `q`:
/// normalization `f(x, 0) = 0`, ordering `U1 ≥ U2`, the sign conditions on
/// the principal eigenvalues of `L + U1` and `L + U2`, the two lower
/// envelopes, and at most linear growth. The growth check compares
/// `|f|/(1 + |q|)` over the top decade of the sample with the decade below
/// and fails when it more than doubles.
pub fn validate_ap(problem: &ApProblem, q_grid: &[f64], opts: ValidateOptions) -> Result<ApReport> {
    let grid = problem.grid();
    let n = problem.n();
    if q_grid.iter().any(|q| !q.is_finite()) {
        return Err(Error::Usage("q sample has non-finite entries".into()));
    }
    for (i, &x) in grid.nodes.iter().enumerate() {
        let f0 = problem.f.value(i, x, 0.0);
        if f0.abs() > 1e-12 {
            return Err(violation("normalization", format!("f(x, 0) = {f0:.3e} at x = {x}")));
        }
    }
    let ordering_holds = (0..n).all(|i| problem.u1.values[i] >= problem.u2.values[i]);
    if !ordering_holds && !opts.relax_ordering {
        let i = (0..n).find(|&i| problem.u1.values[i] < problem.u2.values[i]).unwrap_or(0);
        return Err(violation(
            "ordering",
            format!(
                "U1 < U2 at x = {}: {} < {}",
                grid.nodes[i], problem.u1.values[i], problem.u2.values[i]
            ),
        ));
    }
    let lambda_u1 = principal_eigenpair(&problem.op, &problem.u1, 1e-10)?.lambda_star;
    let lambda_u2 = principal_eigenpair(&problem.op, &problem.u2, 1e-10)?.lambda_star;
    if !(lambda_u1 > 0.0) {
        return Err(violation("AP1", format!("principal eigenvalue with U1 is {lambda_u1:.6e}, needs > 0")));
    }
    if !(lambda_u2 < 0.0) {
        return Err(violation("AP1", format!("principal eigenvalue with U2 is {lambda_u2:.6e}, needs < 0")));
    }

    let mut slack_neg = f64::INFINITY;
    let mut slack_pos = f64::INFINITY;
    for (i, &x) in grid.nodes.iter().enumerate() {
        for &q in q_grid {
            let fq = problem.f.value(i, x, q);
            let tol = 1e-10 * (1.0 + q.abs()) * (1.0 + problem.lambda_star);
            if q <= 0.0 {
                let s = fq + problem.u1.values[i] * q + problem.c;
                slack_neg = slack_neg.min(s);
                if s < -tol {
                    return Err(violation("AP2", format!("f({x}, {q}) = {fq} below the lower envelope by {:.3e}", -s)));
                }
            }
            if q >= 0.0 {
                let s = fq + problem.u2.values[i] * q + problem.c;
                slack_pos = slack_pos.min(s);
                if s < -tol {
                    return Err(violation("AP3", format!("f({x}, {q}) = {fq} below the lower envelope by {:.3e}", -s)));
                }
            }
        }
    }

    let q_max = q_grid.iter().fold(0.0f64, |m, q| m.max(q.abs()));
    let top = q_grid.iter().copied().filter(|q| q.abs() >= q_max / 10.0 && q.abs() > 0.0);
    let below = q_grid
        .iter()
        .copied()
        .filter(|q| q.abs() >= q_max / 100.0 && q.abs() < q_max / 10.0);
    if below.clone().next().is_none() || top.clone().next().is_none() {
        return Err(Error::Usage("q sample must cover at least two decades of |q|".into()));
    }
    let r_top = growth_over(problem, top);
    let r_below = growth_over(problem, below);
    let growth_decade_ratio = if r_below > 0.0 { r_top / r_below } else if r_top > 0.0 { f64::INFINITY } else { 1.0 };
    if growth_decade_ratio > 2.0 {
        return Err(violation(
            "growth",
            format!("|f|/(1+|q|) grows from {r_below:.3e} to {r_top:.3e} over the top decade of the sample"),
        ));
    }

    Ok(ApReport {
        lambda_u1,
        lambda_u2,
        margin_u1: lambda_u1,
        margin_u2: -lambda_u2,
        ordering_holds,
        envelope_slack_neg: slack_neg,
        envelope_slack_pos: slack_pos,
        growth_constant: growth_constant(problem, q_grid),
        growth_decade_ratio,
    })
}

#[derive(Debug, Clone)]
pub struct Subsolution {
    pub u: Field,
    /// `−f(·, u̲) − U1 u̲ − C1`, nonpositive.
    pub slack: Field,
    pub c1: f64,
}

/// Solves `(L + U1)u̲ = −C1 + h + ρΦ1` with `C1 = 2‖h‖_∞ + 2|ρ| + C + 1`.
/// Then `u̲ ≤ 0`, and the lower envelope on `q ≤ 0` makes it a
/// subsolution.
pub fn build_subsolution(problem: &ApProblem) -> Result<Subsolution> {
    let c1 = 2.0 * problem.h.sup_norm() + 2.0 * problem.rho.abs() + problem.c + SUBSOLUTION_OFFSET;
    let rhs = problem.forcing().map(|v| v - c1);
    let u = DirichletSolver::new(&problem.op, &problem.u1)?.solve(&rhs)?;
    let scale = scale_of(&[&u]);
    if u.max() > 1e-12 * scale {
        return Err(Error::InvariantViolation(format!(
            "subsolution is positive somewhere: max = {:.3e}",
            u.max()
        )));
    }
    let fu = problem.f.apply(problem.grid(), &u);
    let slack = Field::new(
        (0..u.len())
            .map(|i| -fu.values[i] - problem.u1.values[i] * u.values[i] - c1)
            .collect(),
    );
    let worst = slack.max();
    if worst > 1e-10 * scale.max(c1) {
        return Err(Error::InvariantViolation(format!(
            "subsolution slack is positive ({worst:.3e}); the lower envelope on q <= 0 fails along u"
        )));
    }
    Ok(Subsolution { u, slack, c1 })
}

#[derive(Debug, Clone)]
pub struct Supersolution {
    pub u: Field,
    /// `C1 − f(·, ū) − ρ1 Φ1 + h⁻`, nonnegative.
    pub slack: Field,
    /// Largest level at which `ū` is a supersolution.
    pub rho1: f64,
    pub c1: f64,
}

/// Solves `L ū = h⁺ + C1` with `C1` the linear growth constant of `f`
/// (at least 1), then `ρ1 = −C1 · max_i ū_i/Φ1_i`. For every `ρ ≤ ρ1`,
/// `ū` is a supersolution.
pub fn build_supersolution(problem: &ApProblem) -> Result<Supersolution> {
    let c1 = growth_constant(problem, &default_q_grid()).max(1.0);
    let rhs = problem.h.map(|v| v.max(0.0) + c1);
    let u = DirichletSolver::new(&problem.op, &PotentialField::zeros(problem.n()))?.solve(&rhs)?;
    let mut ratio = f64::INFINITY;
    for (p, v) in problem.phi1.values.iter().zip(&u.values) {
        if !(*v > 0.0) {
            return Err(Error::InvariantViolation(format!("supersolution is not positive: {v:.3e}")));
        }
        ratio = ratio.min(p / v);
    }
    if !(ratio > 1e-12) {
        return Err(Error::InvariantViolation(format!(
            "min Phi1/u_bar = {ratio:.3e}: the eigenfunction no longer controls the supersolution near the boundary"
        )));
    }
    let rho1 = -c1 / ratio;
    let fu = problem.f.apply(problem.grid(), &u);
    let slack = Field::new(
        (0..u.len())
            .map(|i| c1 - fu.values[i] - rho1 * problem.phi1.values[i] + (-problem.h.values[i]).max(0.0))
            .collect(),
    );
    let worst = slack.min();
    if worst < -1e-10 * c1 * scale_of(&[&u]) {
        return Err(Error::InvariantViolation(format!(
            "supersolution slack is negative ({worst:.3e}) at rho1 = {rho1}"
        )));
    }
    Ok(Supersolution { u, slack, rho1, c1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationStatus {
    Converged,
    /// The iterate norm passed the ceiling.
    Diverged,
    MaxIters,
}

#[derive(Debug, Clone, Copy)]
pub struct IterationOptions {
    /// Stop when `‖u^{(n+1)} − u^{(n)}‖_∞ ≤ tol`.
    pub tol: f64,
    pub max_iters: usize,
    /// Stop as diverged when `‖u^{(n)}‖_∞` exceeds this.
    pub ceiling: f64,
    pub keep_iterates: bool,
}

impl Default for IterationOptions {
    fn default() -> Self {
        IterationOptions {
            tol: 1e-10,
            max_iters: 5000,
            ceiling: f64::INFINITY,
            keep_iterates: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IterationTrace {
    /// Every iterate starting from `u^{(0)}`, when requested.
    pub iterates: Vec<Field>,
    pub norms: Vec<f64>,
    pub increments: Vec<f64>,
    /// Nonlinear residual `‖Lu − F(u)‖_∞` of each iterate after the first.
    pub residuals: Vec<f64>,
    pub theta: f64,
    pub status: IterationStatus,
    pub solution: Field,
}

impl IterationTrace {
    pub fn iterations(&self) -> usize {
        self.increments.len()
    }

    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(f64::NAN)
    }

    pub fn max_norm(&self) -> f64 {
        self.norms.iter().fold(0.0f64, |m, v| m.max(*v))
    }
}

/// Iterates `(L + θ)u^{(n+1)} = f(·, u^{(n)}) + ρΦ1 + h + θu^{(n)}` from
/// `u^{(0)} = lower` with `θ = 1.1 · sup |∂_q f|` over `[min lower, max upper]`
/// (up to the ceiling when there is no upper barrier). Checks
/// `u^{(n)} ≤ u^{(n+1)} ≤ upper` at every step.
pub fn monotone_iterate(
    problem: &ApProblem,
    lower: &Field,
    upper: Option<&Field>,
    opts: IterationOptions,
) -> Result<IterationTrace> {
    let grid = problem.grid();
    lower.check_len(grid, "lower barrier")?;
    if !(opts.tol > 0.0) {
        return Err(Error::Usage(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let q_hi = match upper {
        Some(up) => {
            up.check_len(grid, "upper barrier")?;
            let gap = min_gap(up, lower);
            if gap < -1e-12 * scale_of(&[up, lower]) {
                return Err(Error::Usage(format!("barriers are not ordered: min(upper - lower) = {gap:.3e}")));
            }
            up.max()
        }
        None if opts.ceiling.is_finite() => opts.ceiling,
        None => 10.0 * lower.sup_norm() + 1.0,
    };
    let q_lo = lower.min().min(q_hi);
    let theta = THETA_SAFETY * problem.f.lipschitz(grid, q_lo, q_hi);
    let solver = DirichletSolver::new(&problem.op, &PotentialField::constant(problem.n(), theta))?;
    let forcing = problem.forcing();

    let mut u = lower.clone();
    let mut trace = IterationTrace {
        iterates: if opts.keep_iterates { vec![u.clone()] } else { vec![] },
        norms: vec![u.sup_norm()],
        increments: vec![],
        residuals: vec![],
        theta,
        status: IterationStatus::MaxIters,
        solution: Field::zeros(0),
    };
    for _ in 0..opts.max_iters {
        let rhs = problem
            .f
            .apply(grid, &u)
            .add(&forcing)
            .zip_map(&u, |a, b| a + theta * b);
        let next = solver.solve(&rhs)?;
        let scale = scale_of(&[&u, &next]);
        let step = min_gap(&next, &u);
        if step < -1e-12 * scale {
            return Err(Error::InvariantViolation(format!(
                "monotone chain broken at iteration {}: iterate decreased by {:.3e}",
                trace.increments.len() + 1,
                -step
            )));
        }
        if let Some(up) = upper {
            let over = -min_gap(up, &next);
            if over > 1e-12 * scale {
                return Err(Error::InvariantViolation(format!(
                    "iterate {} exceeds the upper barrier by {over:.3e}",
                    trace.increments.len() + 1
                )));
            }
        }
        let increment = next.distance(&u);
        u = next;
        trace.increments.push(increment);
        trace.norms.push(u.sup_norm());
        trace.residuals.push(problem.residual_norm(&u)?);
        if opts.keep_iterates {
            trace.iterates.push(u.clone());
        }
        if u.sup_norm() > opts.ceiling {
            trace.status = IterationStatus::Diverged;
            break;
        }
        if increment <= opts.tol {
            trace.status = IterationStatus::Converged;
            break;
        }
    }
    trace.solution = u;
    Ok(trace)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct AprioriReport {
    pub rho: f64,
    pub rho_hat: f64,
    /// `‖v‖_∞` for the lower barrier `v`.
    pub v_norm: f64,
    /// `min (u − v)`; nonnegative.
    pub domination_gap: f64,
    /// `ρ⁺ / (1 + ‖u⁺‖_∞)`.
    pub growth_ratio: f64,
}

/// Solves `(L + U1)v = −ρ̂Φ1 − ‖h‖_∞ − C`. Every solution at a level
/// `ρ ≥ −ρ̂` lies above `v`.
pub fn apriori_barrier(problem: &ApProblem, rho_hat: f64) -> Result<Field> {
    if !(rho_hat >= 0.0) {
        return Err(Error::Usage(format!("rho_hat must be >= 0, got {rho_hat}")));
    }
    let shift = problem.h.sup_norm() + problem.c;
    let rhs = problem.phi1.map(|p| -rho_hat * p - shift);
    DirichletSolver::new(&problem.op, &problem.u1)?.solve(&rhs)
}

pub fn apriori_bounds(problem: &ApProblem, u: &Field, rho_hat: f64) -> Result<AprioriReport> {
    if problem.rho < -rho_hat {
        return Err(Error::Usage(format!(
            "a priori bound needs rho >= -rho_hat, got rho = {} and rho_hat = {rho_hat}",
            problem.rho
        )));
    }
    u.check_len(problem.grid(), "solution")?;
    let v = apriori_barrier(problem, rho_hat)?;
    let gap = min_gap(u, &v);
    if gap < -1e-8 * scale_of(&[u, &v]) {
        return Err(Error::InvariantViolation(format!(
            "solution at rho = {} falls below the a priori barrier by {:.3e}",
            problem.rho, -gap
        )));
    }
    let u_plus = u.values.iter().fold(0.0f64, |m, v| m.max(*v));
    Ok(AprioriReport {
        rho: problem.rho,
        rho_hat,
        v_norm: v.sup_norm(),
        domination_gap: gap,
        growth_ratio: problem.rho.max(0.0) / (1.0 + u_plus),
    })
}

/// Heuristic sup-norm ceiling for solutions: `factor · max(‖v‖, ‖u̲‖, 1)`
/// with `v` the a priori barrier. Iterates beyond it count as divergence.
pub fn ceiling_estimate(problem: &ApProblem, lower: &Field, rho_hat: f64, factor: f64) -> Result<f64> {
    let v = apriori_barrier(problem, rho_hat)?;
    Ok(factor * v.sup_norm().max(lower.sup_norm()).max(1.0))
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    /// Accept when `‖R(u)‖_∞ ≤ tol`.
    pub tol: f64,
    pub max_iters: usize,
    /// Minimum sup-norm distance from known solutions for a new one.
    pub separation: f64,
    /// Abandon a start whose iterates exceed this sup norm.
    pub blowup: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-9,
            max_iters: 60,
            separation: 0.05,
            blowup: 1e8,
        }
    }
}

struct NewtonRun {
    solution: Option<Field>,
    max_norm: f64,
}

/// `M(u) = Π_k (‖u − u_k‖⁻² + 1)` in the `h`-weighted L² norm, with
/// `∇ ln M`.
fn deflation(u: &DVector<f64>, known: &[DVector<f64>], h: f64) -> (f64, DVector<f64>) {
    let mut m = 1.0;
    let mut grad = DVector::zeros(u.len());
    for k in known {
        let d = u - k;
        let r2 = h * d.norm_squared();
        m *= 1.0 / r2 + 1.0;
        grad.axpy(-2.0 * h / (r2 * r2 + r2), &d, 1.0);
    }
    (m, grad)
}

/// Newton on the deflated residual `M(u)R(u)`. The step is the plain
/// Newton step for `R` rescaled by `1/(1 − ∇ln M · δ)`, followed by a
/// backtracking line search on `M‖R‖₂`.
fn deflated_newton(problem: &ApProblem, start: &Field, known: &[DVector<f64>], opts: &NewtonOptions) -> Result<NewtonRun> {
    let grid = problem.grid();
    let h = grid.h;
    let mut u = start.clone();
    let mut max_norm = u.sup_norm();
    let merit = |u: &Field| -> Result<(f64, Field)> {
        let r = problem.residual(u)?;
        let (m, _) = deflation(&u.to_dvector(), known, h);
        Ok((m * r.to_dvector().norm(), r))
    };
    let (mut phi, mut r) = merit(&u)?;
    for _ in 0..=opts.max_iters {
        if !phi.is_finite() {
            break;
        }
        if r.sup_norm() <= opts.tol {
            return Ok(NewtonRun { solution: Some(u), max_norm });
        }
        let mut jac = problem.op.matrix.clone();
        for (i, d) in problem.f.derivative_at(grid, &u).into_iter().enumerate() {
            jac[(i, i)] -= d;
        }
        let Some(delta) = jac.lu().solve(&(-r.to_dvector())) else {
            break;
        };
        let uv = u.to_dvector();
        let (_, grad) = deflation(&uv, known, h);
        let denom = 1.0 - grad.dot(&delta);
        let tau = if denom.is_finite() && denom > 1e-12 { 1.0 / denom } else { 1.0 };
        let mut s = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial = Field::from_dvector(&(&uv + (s * tau) * &delta));
            let (phi_t, r_t) = merit(&trial)?;
            if phi_t < (1.0 - 1e-4 * s) * phi {
                accepted = Some((trial, phi_t, r_t));
                break;
            }
            s *= 0.5;
        }
        let Some((next, phi_next, r_next)) = accepted else {
            break;
        };
        u = next;
        phi = phi_next;
        r = r_next;
        max_norm = max_norm.max(u.sup_norm());
        if u.sup_norm() > opts.blowup {
            break;
        }
    }
    Ok(NewtonRun { solution: None, max_norm })
}

/// Start points `base + tΦ1 + ξ`: half on a deterministic log grid
/// `t ∈ [1e−2, 1e2]`, the rest with random `t` and a smooth random
/// perturbation `ξ`. With `both_signs`, random `t` may be negative.
fn start_points<R: Rng + ?Sized>(problem: &ApProblem, base: &Field, n_starts: usize, rng: &mut R, both_signs: bool) -> Vec<Field> {
    let grid = problem.grid();
    let n_det = n_starts / 2;
    let mut starts: Vec<Field> = logspace(1e-2, 1e2, n_det)
        .into_iter()
        .map(|t| base.add(&problem.phi1.scaled(t)))
        .collect();
    let len = grid.b - grid.a;
    while starts.len() < n_starts {
        let mut t = 10f64.powf(rng.random_range(-2.0..2.0));
        if both_signs && rng.random_bool(0.5) {
            t = -t;
        }
        let amps: Vec<f64> = (0..3)
            .map(|_| 0.1 * (1.0 + t.abs()) * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let xi = Field::from_fn(grid, |x| {
            let s = (x - grid.a) / len;
            amps.iter()
                .enumerate()
                .map(|(m, a)| a * ((m + 1) as f64 * std::f64::consts::PI * s).sin())
                .sum()
        });
        starts.push(base.add(&problem.phi1.scaled(t)).add(&xi));
    }
    starts
}

#[derive(Debug, Clone)]
pub struct SolutionSearch {
    /// Distinct solutions, separated from each other and from the known ones.
    pub solutions: Vec<Field>,
    pub starts: usize,
    pub converged_starts: usize,
    /// Largest sup norm of any Newton iterate.
    pub max_iterate_norm: f64,
}

/// Deflated Newton from `n_starts` points around `base`, deflating
/// `known`. Starts run in parallel; results are gathered in start order.
pub fn multistart_search<R: Rng + ?Sized>(
    problem: &ApProblem,
    base: &Field,
    known: &[Field],
    n_starts: usize,
    rng: &mut R,
    opts: &NewtonOptions,
    both_signs: bool,
) -> Result<SolutionSearch> {
    base.check_len(problem.grid(), "search base")?;
    let starts = start_points(problem, base, n_starts, rng, both_signs);
    let deflate: Vec<DVector<f64>> = known.iter().map(Field::to_dvector).collect();
    let runs: Vec<NewtonRun> = starts
        .par_iter()
        .map(|s| deflated_newton(problem, s, &deflate, opts))
        .collect::<Result<_>>()?;
    let mut search = SolutionSearch {
        solutions: vec![],
        starts: n_starts,
        converged_starts: 0,
        max_iterate_norm: 0.0,
    };
    for run in runs {
        search.max_iterate_norm = search.max_iterate_norm.max(run.max_norm);
        let Some(u) = run.solution else { continue };
        search.converged_starts += 1;
        let distinct = known
            .iter()
            .chain(&search.solutions)
            .all(|k| k.distance(&u) >= opts.separation);
        if distinct {
            search.solutions.push(u);
        }
    }
    Ok(search)
}

#[derive(Debug, Clone)]
pub struct SecondSolution {
    pub solution: Option<Field>,
    /// `‖û − u_min‖_∞`.
    pub separation: Option<f64>,
    pub search: SolutionSearch,
}

/// Looks for a solution other than `u_min`. Absence after `n_starts` is
/// reported, not asserted.
pub fn find_second_solution<R: Rng + ?Sized>(
    problem: &ApProblem,
    u_min: &Field,
    n_starts: usize,
    rng: &mut R,
    opts: &NewtonOptions,
) -> Result<SecondSolution> {
    let search = multistart_search(problem, u_min, std::slice::from_ref(u_min), n_starts, rng, opts, false)?;
    let solution = search.solutions.first().cloned();
    Ok(SecondSolution {
        separation: solution.as_ref().map(|s| s.distance(u_min)),
        solution,
        search,
    })
}

#[derive(Debug, Clone)]
pub struct MinimalityReport {
    pub solutions: Vec<Field>,
    /// `min (û − u_min)` over every solution found; `+∞` when none.
    pub min_gap: f64,
}

/// Searches for solutions from `trials` starts on both sides of `u_min`
/// and fails if any lies below it.
pub fn minimality_check<R: Rng + ?Sized>(
    problem: &ApProblem,
    u_min: &Field,
    trials: usize,
    rng: &mut R,
    opts: &NewtonOptions,
) -> Result<MinimalityReport> {
    let search = multistart_search(problem, u_min, std::slice::from_ref(u_min), trials, rng, opts, true)?;
    let mut worst = f64::INFINITY;
    for s in &search.solutions {
        let gap = min_gap(s, u_min);
        if gap < -1e-8 * scale_of(&[s, u_min]) {
            return Err(Error::InvariantViolation(format!(
                "found a solution below the minimal one by {:.3e}",
                -gap
            )));
        }
        worst = worst.min(gap);
    }
    Ok(MinimalityReport {
        solutions: search.solutions,
        min_gap: worst,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct ScanOptions {
    pub coarse_points: usize,
    pub bisection_tol: f64,
    pub max_bisections: usize,
    pub n_starts: usize,
    pub rho_hat: f64,
    pub ceiling_factor: f64,
    pub seed: u64,
    /// Run the second-solution search at every solvable level.
    pub search_second: bool,
    pub iteration: IterationOptions,
    pub newton: NewtonOptions,
}

impl Default for ScanOptions {
    fn default() -> Self {
        ScanOptions {
            coarse_points: 13,
            bisection_tol: 0.01,
            max_bisections: 40,
            n_starts: 50,
            rho_hat: 10.0,
            ceiling_factor: 10.0,
            seed: 0,
            search_second: true,
            iteration: IterationOptions::default(),
            newton: NewtonOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Solvable,
    /// Monotone iteration diverged and every deflated start failed.
    NoSolutionFound,
}

/// How a level was shown solvable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Certificate {
    /// Monotone iteration between a subsolution and a supersolution.
    OrderedPair,
    /// Monotone iteration from the subsolution alone.
    Subsolution,
    /// Deflated Newton; the solution is not known to be minimal.
    Newton,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct NonexistenceDiagnostics {
    pub iteration_status: IterationStatus,
    pub iteration_max_norm: f64,
    pub ceiling: f64,
    pub newton_starts: usize,
    pub newton_max_norm: f64,
}

#[derive(Debug, Clone)]
pub struct RhoOutcome {
    pub rho: f64,
    pub classification: Classification,
    pub certificate: Option<Certificate>,
    /// Minimal solution, or the Newton solution under `Certificate::Newton`.
    pub solution: Option<Field>,
    pub residual: Option<f64>,
    pub iterations: usize,
    pub second: Option<Field>,
    pub separation: Option<f64>,
    pub apriori: Option<AprioriReport>,
    /// `(min, max)` of `u/V̂(δ)` over the nodes for each accepted solution.
    pub boundary_ratios: Vec<(f64, f64)>,
    pub diagnostics: Option<NonexistenceDiagnostics>,
}

impl RhoOutcome {
    pub fn is_solvable(&self) -> bool {
        self.classification == Classification::Solvable
    }

    pub fn minimal(&self) -> Option<&Field> {
        match self.certificate {
            Some(Certificate::OrderedPair | Certificate::Subsolution) => self.solution.as_ref(),
            _ => None,
        }
    }

    /// Sup norms of every solution found at this level.
    pub fn solution_norms(&self) -> Vec<f64> {
        self.solution.iter().chain(&self.second).map(Field::sup_norm).collect()
    }
}

fn level_rng(seed: u64, rho: f64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rho.to_bits());
    rng
}

/// Classifies one level: monotone iteration from the subsolution (bounded
/// by the supersolution when `ρ ≤ ρ1`), then deflated multistart Newton if
/// the iteration fails.
pub fn classify_rho(template: &ApProblem, rho: f64, opts: &ScanOptions) -> Result<RhoOutcome> {
    let problem = template.with_rho(rho);
    let grid = problem.grid();
    let spec = problem.op.spec;
    let mut rng = level_rng(opts.seed, rho);
    let sub = build_subsolution(&problem)?;
    let sup = build_supersolution(&problem)?;
    let ceiling = ceiling_estimate(&problem, &sub.u, opts.rho_hat, opts.ceiling_factor)?;

    let (trace, certificate) = if rho <= sup.rho1 {
        let t = monotone_iterate(&problem, &sub.u, Some(&sup.u), opts.iteration)?;
        if t.status != IterationStatus::Converged {
            return Err(Error::numerical(
                "monotone iteration",
                format!("no convergence between ordered barriers at rho = {rho}: {:?}", t.status),
            ));
        }
        (t, Certificate::OrderedPair)
    } else {
        let it = IterationOptions { ceiling, ..opts.iteration };
        (monotone_iterate(&problem, &sub.u, None, it)?, Certificate::Subsolution)
    };

    let mut outcome = RhoOutcome {
        rho,
        classification: Classification::Solvable,
        certificate: None,
        solution: None,
        residual: None,
        iterations: trace.iterations(),
        second: None,
        separation: None,
        apriori: None,
        boundary_ratios: vec![],
        diagnostics: None,
    };
    if trace.status == IterationStatus::Converged {
        outcome.certificate = Some(certificate);
        outcome.solution = Some(trace.solution);
    } else {
        let search = multistart_search(&problem, &sub.u, &[], opts.n_starts, &mut rng, &opts.newton, true)?;
        match search.solutions.into_iter().next() {
            Some(u) => {
                outcome.certificate = Some(Certificate::Newton);
                outcome.solution = Some(u);
            }
            None => {
                outcome.classification = Classification::NoSolutionFound;
                outcome.diagnostics = Some(NonexistenceDiagnostics {
                    iteration_status: trace.status,
                    iteration_max_norm: trace.max_norm(),
                    ceiling,
                    newton_starts: search.starts,
                    newton_max_norm: search.max_iterate_norm,
                });
                return Ok(outcome);
            }
        }
    }

    let u = outcome.solution.clone().expect("solvable outcome carries a solution");
    outcome.residual = Some(problem.residual_norm(&u)?);
    outcome.boundary_ratios.push(boundary_ratio(&u, grid, &spec)?);
    if rho >= -opts.rho_hat {
        outcome.apriori = Some(apriori_bounds(&problem, &u, opts.rho_hat)?);
    }
    if opts.search_second && outcome.minimal().is_some() {
        let second = find_second_solution(&problem, &u, opts.n_starts, &mut rng, &opts.newton)?;
        if let Some(s) = &second.solution {
            outcome.boundary_ratios.push(boundary_ratio(s, grid, &spec)?);
        }
        outcome.separation = second.separation;
        outcome.second = second.solution;
    }
    Ok(outcome)
}

#[derive(Debug, Clone)]
pub struct BranchScan {
    pub rho_values: Vec<f64>,
    /// Sorted by `ρ`.
    pub outcomes: Vec<RhoOutcome>,
    /// Largest level classified solvable and smallest classified unsolvable.
    pub rho_star_bracket: (f64, f64),
    pub resolution: f64,
    pub rho1: f64,
    /// Minimal solutions are componentwise nondecreasing in `ρ`.
    pub minimal_monotone: bool,
    /// Largest `ρ⁺/(1 + ‖u⁺‖_∞)` over the solvable levels.
    pub max_growth_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchRecord {
    pub rho: f64,
    pub solvable: bool,
    pub u_min_norm: Option<f64>,
    pub second_found: bool,
    pub separation: Option<f64>,
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Bracket {
    pub rho_star_lo: f64,
    pub rho_star_hi: f64,
    pub resolution: f64,
}

fn check_down_set(outcomes: &[RhoOutcome]) -> Result<()> {
    if let Some(first_bad) = outcomes.iter().position(|o| !o.is_solvable()) {
        if let Some(o) = outcomes[first_bad..].iter().find(|o| o.is_solvable()) {
            return Err(Error::InvariantViolation(format!(
                "solvable set is not a down-set: rho = {} has no solution but rho = {} does",
                outcomes[first_bad].rho, o.rho
            )));
        }
    }
    Ok(())
}

/// Classifies a coarse grid of levels in parallel, then bisects the first
/// solvable/unsolvable transition down to `bisection_tol`.
pub fn scan_rho(template: &ApProblem, rho_lo: f64, rho_hi: f64, opts: &ScanOptions) -> Result<BranchScan> {
    if !(rho_lo < rho_hi) || opts.coarse_points < 2 || !(opts.bisection_tol > 0.0) {
        return Err(Error::Usage(format!(
            "scan needs rho_lo < rho_hi, at least 2 coarse points and a positive tolerance; got [{rho_lo}, {rho_hi}], {} points, tol {}",
            opts.coarse_points, opts.bisection_tol
        )));
    }
    let rho1 = build_supersolution(template)?.rho1;
    let m = opts.coarse_points - 1;
    let coarse: Vec<f64> = (0..=m)
        .map(|i| rho_lo + (rho_hi - rho_lo) * i as f64 / m as f64)
        .collect();
    let mut outcomes: Vec<RhoOutcome> = coarse
        .par_iter()
        .map(|&r| classify_rho(template, r, opts))
        .collect::<Result<_>>()?;
    if !outcomes[0].is_solvable() {
        return Err(Error::Usage(format!("rho_lo = {rho_lo} was not classified solvable")));
    }
    if outcomes[m].is_solvable() {
        return Err(Error::Usage(format!("rho_hi = {rho_hi} was classified solvable")));
    }
    check_down_set(&outcomes)?;
    let j = outcomes.iter().position(|o| !o.is_solvable()).expect("last level is unsolvable");
    let (mut lo, mut hi) = (coarse[j - 1], coarse[j]);
    for _ in 0..opts.max_bisections {
        if hi - lo <= opts.bisection_tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let o = classify_rho(template, mid, opts)?;
        if o.is_solvable() {
            lo = mid;
        } else {
            hi = mid;
        }
        outcomes.push(o);
    }
    outcomes.sort_by(|a, b| a.rho.total_cmp(&b.rho));
    check_down_set(&outcomes)?;

    let minimal: Vec<&Field> = outcomes.iter().filter_map(RhoOutcome::minimal).collect();
    let minimal_monotone = minimal
        .windows(2)
        .all(|w| min_gap(w[1], w[0]) >= -1e-8 * scale_of(&[w[0], w[1]]));
    let max_growth_ratio = outcomes
        .iter()
        .filter_map(|o| o.apriori.map(|a| a.growth_ratio))
        .fold(0.0f64, f64::max);
    Ok(BranchScan {
        rho_values: outcomes.iter().map(|o| o.rho).collect(),
        outcomes,
        rho_star_bracket: (lo, hi),
        resolution: hi - lo,
        rho1,
        minimal_monotone,
        max_growth_ratio,
    })
}

impl BranchScan {
    pub fn records(&self) -> Vec<BranchRecord> {
        self.outcomes
            .iter()
            .map(|o| BranchRecord {
                rho: o.rho,
                solvable: o.is_solvable(),
                u_min_norm: o.minimal().map(Field::sup_norm),
                second_found: o.second.is_some(),
                separation: o.separation,
                residual: o.residual,
            })
            .collect()
    }

    pub fn bracket(&self) -> Bracket {
        Bracket {
            rho_star_lo: self.rho_star_bracket.0,
            rho_star_hi: self.rho_star_bracket.1,
            resolution: self.resolution,
        }
    }

    /// Columns `rho,solvable,u_min_norm,second_found,separation,residual`;
    /// missing values are empty.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in self.records() {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_bracket_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(f, &self.bracket())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canonical() -> ApProblem {
        ApProblem::canonical(49, -0.5).unwrap()
    }

    #[test]
    fn canonical_passes_validation_with_shift_margins() {
        let p = canonical();
        let r = validate_ap(&p, &default_q_grid(), ValidateOptions::default()).unwrap();
        assert!((r.margin_u1 - 0.5 * p.lambda_star).abs() < 1e-9);
        assert!((r.margin_u2 - p.lambda_star).abs() < 1e-9);
        assert!(r.envelope_slack_neg.abs() < 1e-9 && r.envelope_slack_pos.abs() < 1e-9);
    }

    #[test]
    fn zero_potentials_fail_ap1() {
        let mut p = canonical();
        p.u1 = PotentialField::zeros(p.n());
        p.u2 = PotentialField::zeros(p.n());
        let e = validate_ap(&p, &default_q_grid(), ValidateOptions::default()).unwrap_err();
        assert!(matches!(e, Error::Validation { ref condition, .. } if condition == "AP1"), "{e}");
    }

    #[test]
    fn quadratic_fails_growth() {
        let mut p = canonical();
        p.f = Nonlinearity::pointwise(|_, q| q * q, |_, q| 2.0 * q);
        p.u1 = PotentialField::zeros(p.n());
        p.u2 = PotentialField::constant(p.n(), -2.0 * p.lambda_star);
        p.c = 4.0;
        let e = validate_ap(&p, &default_q_grid(), ValidateOptions::default()).unwrap_err();
        assert!(matches!(e, Error::Validation { ref condition, .. } if condition == "growth"), "{e}");
    }

    #[test]
    fn ordering_can_be_relaxed() {
        let mut p = canonical();
        p.u1.values[3] = -3.0 * p.lambda_star;
        let strict = validate_ap(&p, &default_q_grid(), ValidateOptions::default());
        assert!(matches!(strict, Err(Error::Validation { ref condition, .. }) if condition == "ordering"));
        let relaxed = validate_ap(&p, &default_q_grid(), ValidateOptions { relax_ordering: true }).unwrap();
        assert!(!relaxed.ordering_holds);
    }

    #[test]
    fn subsolution_is_negative_with_nonpositive_slack() {
        let s = build_subsolution(&canonical().with_rho(0.0)).unwrap();
        assert!(s.u.max() < 0.0);
        assert!(s.slack.max() <= 1e-10);
    }

    #[test]
    fn supersolution_level_formula() {
        let p = canonical();
        let s = build_supersolution(&p).unwrap();
        let torsion = DirichletSolver::new(&p.op, &PotentialField::zeros(p.n()))
            .unwrap()
            .solve(&Field::constant(p.n(), 1.0))
            .unwrap();
        assert!(s.u.distance(&torsion.scaled(s.c1)) < 1e-10 * s.c1);
        let want = -s.c1 * (0..p.n()).map(|i| s.u.values[i] / p.phi1.values[i]).fold(0.0, f64::max);
        assert!((s.rho1 - want).abs() < 1e-10 * want.abs());
        assert!(s.rho1 < 0.0 && s.slack.min() >= -1e-10);
    }

    #[test]
    fn fixed_point_start_converges_in_one_step() {
        let p = canonical();
        let exact = p.phi1.scaled(2.0 * p.rho / p.lambda_star);
        let t = monotone_iterate(&p, &exact, None, IterationOptions::default()).unwrap();
        assert_eq!(t.status, IterationStatus::Converged);
        assert_eq!(t.iterations(), 1);
    }

    #[test]
    fn deflation_gradient_matches_finite_difference() {
        let h = 0.1;
        let u = DVector::from_vec(vec![0.3, -0.2, 0.5]);
        let known = vec![DVector::from_vec(vec![0.1, 0.0, 0.2]), DVector::from_vec(vec![-0.4, 0.3, 0.0])];
        let (m, g) = deflation(&u, &known, h);
        for i in 0..3 {
            let mut up = u.clone();
            up[i] += 1e-6;
            let (mp, _) = deflation(&up, &known, h);
            assert!(((mp.ln() - m.ln()) / 1e-6 - g[i]).abs() < 1e-4);
        }
    }

    #[test]
    fn kink_uses_average_slope() {
        let f = Nonlinearity::piecewise_linear(2, 1.0, 3.0);
        assert_eq!(f.derivative(0, 0.0, 0.0), 2.0);
        assert_eq!(f.value(1, 0.0, -2.0), -2.0);
        assert_eq!(f.value(1, 0.0, 2.0), 6.0);
    }
}
