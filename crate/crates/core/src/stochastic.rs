//! Monte Carlo for subordinate Brownian motion `X_t = B_{S_t}`, where `B`
//! has generator `Δ` (variance `2t`) and `S` is the subordinator with
//! Laplace exponent `Ψ`.
//!
//! Paths are simulated on a fixed time grid and killed at the first grid
//! time outside the interval. Every path draws from its own ChaCha stream
//! keyed by `(seed, path index)`, so ensemble results do not depend on the
//! thread count.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bernstein::{BernsteinSpec, Family};
use crate::error::{Error, Result};
use crate::grid::{DomainGrid, Field, NonlocalOperator};
use crate::linear::{solve_dirichlet, PotentialField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Exact increments where the family allows it; compound Poisson
    /// otherwise.
    ExactStable,
    /// Compound Poisson above the cutoff for every family with jumps.
    CompoundPoissonDrift,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    pub dt: f64,
    pub t_max: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub scheme: Scheme,
    /// Subordinator jumps below this size are replaced by their mean.
    #[serde(default = "default_cutoff")]
    pub small_jump_cutoff: f64,
}

fn default_cutoff() -> f64 {
    1e-4
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            dt: 1e-3,
            t_max: 10.0,
            n_paths: 10_000,
            seed: 1,
            scheme: Scheme::ExactStable,
            small_jump_cutoff: default_cutoff(),
        }
    }
}

impl PathConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Usage(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_max >= self.dt) || !self.t_max.is_finite() {
            return Err(Error::Usage(format!("t_max = {} must be at least dt", self.t_max)));
        }
        if self.n_paths == 0 {
            return Err(Error::Usage("n_paths must be at least 1".into()));
        }
        if !(self.small_jump_cutoff > 0.0) {
            return Err(Error::Usage("small_jump_cutoff must be positive".into()));
        }
        Ok(())
    }

    fn steps_for(&self, t: f64) -> usize {
        (t / self.dt).round() as usize
    }

    /// Generator for path `index`.
    pub fn path_rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_effective: usize,
}

impl MCEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return MCEstimate {
                mean: f64::NAN,
                std_error: f64::NAN,
                n_effective: 0,
            };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        MCEstimate {
            mean,
            std_error: (var / n as f64).sqrt(),
            n_effective: n,
        }
    }

    pub fn exact(value: f64) -> Self {
        MCEstimate {
            mean: value,
            std_error: 0.0,
            n_effective: 0,
        }
    }

    /// `mean ± 2·std_error`.
    pub fn interval(&self) -> (f64, f64) {
        (self.mean - 2.0 * self.std_error, self.mean + 2.0 * self.std_error)
    }

    /// `|mean − value| ≤ k·std_error` (with `value` exact).
    pub fn agrees_with(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.std_error
    }
}

// ---------------------------------------------------------------------------
// Subordinator increments

/// Positive `a`-stable variable with `E e^{-uS} = e^{-u^a}` (Kanter).
fn positive_stable<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    let u = loop {
        let u = PI * rng.random::<f64>();
        if u > 0.0 {
            break u;
        }
    };
    let e: f64 = Exp1.sample(rng);
    let lead = (a * u).sin() / u.sin().powf(1.0 / a);
    lead * (((1.0 - a) * u).sin() / e).powf((1.0 - a) / a)
}

#[derive(Debug, Clone)]
enum JumpPart {
    None,
    /// Sum of independent stable components with these exponents `a = α/2`.
    Stable(Vec<f64>),
    /// Stable draw accepted with probability `e^{-λ S}`.
    Tempered { a: f64, lambda: f64 },
    CompoundPoisson(JumpTable),
}

/// Tail `μ((t,∞))` on a log grid, inverted by log-log interpolation with a
/// power-law continuation past the last node.
#[derive(Debug, Clone)]
struct JumpTable {
    rate: f64,
    ln_t: Vec<f64>,
    ln_tail: Vec<f64>,
}

impl JumpTable {
    const PER_DECADE: usize = 32;
    const DECADES: usize = 12;

    fn build(spec: &BernsteinSpec, eps: f64) -> Result<Self> {
        let rate = spec.levy_tail(eps)?;
        let mut ln_t = Vec::new();
        let mut ln_tail = Vec::new();
        for k in 0..=Self::PER_DECADE * Self::DECADES {
            let t = eps * 10f64.powf(k as f64 / Self::PER_DECADE as f64);
            let tail = spec.levy_tail(t)?;
            if !(tail > 0.0) {
                break;
            }
            ln_t.push(t.ln());
            ln_tail.push(tail.ln());
            if tail < 1e-14 * rate {
                break;
            }
        }
        if ln_t.len() < 2 {
            return Err(Error::numerical("jump table", "tail vanishes immediately above the cutoff"));
        }
        Ok(JumpTable { rate, ln_t, ln_tail })
    }

    /// Jump size with `μ((size,∞)) = target`, `0 < target ≤ rate`.
    fn invert(&self, target: f64) -> f64 {
        let y = target.ln();
        let n = self.ln_t.len();
        if y <= self.ln_tail[n - 1] {
            let slope = (self.ln_tail[n - 1] - self.ln_tail[n - 2]) / (self.ln_t[n - 1] - self.ln_t[n - 2]);
            return (self.ln_t[n - 1] + (y - self.ln_tail[n - 1]) / slope).exp();
        }
        // ln_tail is decreasing.
        let i = self.ln_tail.partition_point(|&v| v > y).max(1);
        let (y0, y1) = (self.ln_tail[i - 1], self.ln_tail[i]);
        let w = if y1 == y0 { 0.0 } else { (y - y0) / (y1 - y0) };
        (self.ln_t[i - 1] + w * (self.ln_t[i] - self.ln_t[i - 1])).exp()
    }

    fn sample<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> f64 {
        let mean = self.rate * dt;
        let count = if mean > 0.0 {
            Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
        } else {
            0
        };
        (0..count)
            .map(|_| {
                let u = 1.0 - rng.random::<f64>();
                self.invert(u * self.rate)
            })
            .sum()
    }
}

/// Draws increments `S_{t+dt} − S_t`.
#[derive(Debug, Clone)]
pub struct SubordinatorSampler {
    pub spec: BernsteinSpec,
    /// Deterministic rate: drift plus, under compound Poisson, the mean of
    /// the discarded small jumps.
    pub drift_rate: f64,
    jumps: JumpPart,
    /// Set when increments follow the compound Poisson approximation.
    pub approximate: bool,
}

impl SubordinatorSampler {
    pub fn new(spec: &BernsteinSpec, scheme: Scheme, small_jump_cutoff: f64) -> Result<Self> {
        spec.validate()?;
        let exact = match (scheme, spec.family) {
            _ if !spec.has_jumps() => Some(JumpPart::None),
            (Scheme::CompoundPoissonDrift, _) => None,
            (_, Family::Stable { alpha }) => Some(JumpPart::Stable(vec![alpha / 2.0])),
            (_, Family::SumStable { alpha, beta }) => Some(JumpPart::Stable(
                [alpha, beta].iter().filter(|&&x| x < 2.0).map(|x| x / 2.0).collect(),
            )),
            (_, Family::LogDamped { alpha, beta: 0.0 }) => {
                Some(JumpPart::Stable(vec![alpha / 2.0]))
            }
            (_, Family::Relativistic { alpha, m }) => {
                let a = alpha / 2.0;
                Some(JumpPart::Tempered {
                    a,
                    lambda: m.powf(1.0 / a),
                })
            }
            _ => None,
        };
        match exact {
            Some(jumps) => Ok(SubordinatorSampler {
                spec: *spec,
                drift_rate: spec.diffusion_coefficient(),
                jumps,
                approximate: false,
            }),
            None => Ok(SubordinatorSampler {
                spec: *spec,
                drift_rate: spec.diffusion_coefficient() + spec.small_jump_mean(small_jump_cutoff)?,
                jumps: JumpPart::CompoundPoisson(JumpTable::build(spec, small_jump_cutoff)?),
                approximate: true,
            }),
        }
    }

    pub fn has_jumps(&self) -> bool {
        !matches!(self.jumps, JumpPart::None)
    }

    pub fn sample<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> f64 {
        let jumps = match &self.jumps {
            JumpPart::None => 0.0,
            JumpPart::Stable(exps) => exps
                .iter()
                .map(|&a| dt.powf(1.0 / a) * positive_stable(a, rng))
                .sum(),
            JumpPart::Tempered { a, lambda } => loop {
                let s = dt.powf(1.0 / a) * positive_stable(*a, rng);
                if rng.random::<f64>() < (-lambda * s).exp() {
                    break s;
                }
            },
            JumpPart::CompoundPoisson(table) => table.sample(dt, rng),
        };
        self.drift_rate * dt + jumps
    }
}

/// One draw of `S_{dt}`. Builds a sampler per call; use
/// [`SubordinatorSampler`] directly in loops.
pub fn sample_subordinator_increment<R: Rng + ?Sized>(
    spec: &BernsteinSpec,
    dt: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::Usage(format!("dt must be positive, got {dt}")));
    }
    Ok(SubordinatorSampler::new(spec, Scheme::ExactStable, default_cutoff())?.sample(dt, rng))
}

// ---------------------------------------------------------------------------
// Paths

/// Killed path simulator on a fixed time grid.
#[derive(Debug, Clone)]
pub struct PathSimulator {
    pub a: f64,
    pub b: f64,
    pub dt: f64,
    pub sampler: SubordinatorSampler,
    /// Brownian-bridge crossing test between grid times; valid only when
    /// the subordinator is a pure drift.
    bridge: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitRecord {
    /// First grid time outside the interval; `None` when censored.
    pub exit_time: Option<f64>,
    pub exit_position: Option<f64>,
    pub steps: usize,
    pub censored: bool,
}

impl PathSimulator {
    pub fn new(grid: &DomainGrid, spec: &BernsteinSpec, cfg: &PathConfig) -> Result<Self> {
        cfg.validate()?;
        let sampler = SubordinatorSampler::new(spec, cfg.scheme, cfg.small_jump_cutoff)?;
        let bridge = !sampler.has_jumps();
        Ok(PathSimulator {
            a: grid.a,
            b: grid.b,
            dt: cfg.dt,
            sampler,
            bridge,
        })
    }

    fn bridge_exit<R: Rng + ?Sized>(&self, x: f64, y: f64, s: f64, rng: &mut R) -> Option<f64> {
        if !self.bridge || s <= 0.0 {
            return None;
        }
        let pa = (-(x - self.a) * (y - self.a) / s).exp();
        let pb = (-(self.b - x) * (self.b - y) / s).exp();
        let p = 1.0 - (1.0 - pa) * (1.0 - pb);
        if rng.random::<f64>() < p {
            Some(if rng.random::<f64>() * (pa + pb) < pa { self.a } else { self.b })
        } else {
            None
        }
    }

    /// Runs up to `max_steps`, calling `visit(k, X_{k dt})` for `k = 0` and
    /// every later step at which the path is still inside. Returns the exit
    /// step and position, or `None` if the path survives.
    pub fn walk<R: Rng + ?Sized>(
        &self,
        x0: f64,
        max_steps: usize,
        rng: &mut R,
        mut visit: impl FnMut(usize, f64),
    ) -> Option<(usize, f64)> {
        let mut x = x0;
        visit(0, x);
        for k in 1..=max_steps {
            let s = self.sampler.sample(self.dt, rng);
            let z: f64 = StandardNormal.sample(rng);
            let y = x + (2.0 * s).sqrt() * z;
            if !(y > self.a && y < self.b) {
                return Some((k, y));
            }
            if let Some(edge) = self.bridge_exit(x, y, s, rng) {
                return Some((k, edge));
            }
            x = y;
            visit(k, x);
        }
        None
    }
}

fn check_start(grid: &DomainGrid, x0: f64) -> Result<()> {
    if !grid.contains(x0) {
        return Err(Error::Domain(format!(
            "starting point {x0} outside ({}, {})",
            grid.a, grid.b
        )));
    }
    Ok(())
}

/// One killed path from `x0`, censored at `cfg.t_max`.
pub fn simulate_exit<R: Rng + ?Sized>(
    grid: &DomainGrid,
    spec: &BernsteinSpec,
    x0: f64,
    cfg: &PathConfig,
    rng: &mut R,
) -> Result<ExitRecord> {
    check_start(grid, x0)?;
    let sim = PathSimulator::new(grid, spec, cfg)?;
    Ok(exit_record(&sim, x0, cfg.steps_for(cfg.t_max), rng))
}

fn exit_record<R: Rng + ?Sized>(sim: &PathSimulator, x0: f64, max_steps: usize, rng: &mut R) -> ExitRecord {
    match sim.walk(x0, max_steps, rng, |_, _| {}) {
        Some((k, y)) => ExitRecord {
            exit_time: Some(k as f64 * sim.dt),
            exit_position: Some(y),
            steps: k,
            censored: false,
        },
        None => ExitRecord {
            exit_time: None,
            exit_position: None,
            steps: max_steps,
            censored: true,
        },
    }
}

fn ensemble<T: Send>(cfg: &PathConfig, f: impl Fn(&mut ChaCha8Rng) -> T + Sync) -> Vec<T> {
    (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| f(&mut cfg.path_rng(i)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitStatistics {
    pub exit_time: MCEstimate,
    pub left_exits: usize,
    pub right_exits: usize,
    pub censored: usize,
}

/// Mean exit time and exit-side counts over `cfg.n_paths` paths.
pub fn exit_statistics(grid: &DomainGrid, spec: &BernsteinSpec, x0: f64, cfg: &PathConfig) -> Result<ExitStatistics> {
    check_start(grid, x0)?;
    let sim = PathSimulator::new(grid, spec, cfg)?;
    let max_steps = cfg.steps_for(cfg.t_max);
    let records = ensemble(cfg, |rng| exit_record(&sim, x0, max_steps, rng));
    let times: Vec<f64> = records.iter().filter_map(|r| r.exit_time).collect();
    let mid = grid.midpoint();
    Ok(ExitStatistics {
        exit_time: MCEstimate::from_samples(&times),
        left_exits: records.iter().filter(|r| r.exit_position.is_some_and(|y| y <= mid)).count(),
        right_exits: records.iter().filter(|r| r.exit_position.is_some_and(|y| y > mid)).count(),
        censored: records.iter().filter(|r| r.censored).count(),
    })
}

/// Potential at `x`, held constant beyond the outermost nodes.
fn potential_at(grid: &DomainGrid, pot: &PotentialField, x: f64) -> f64 {
    let s = ((x - grid.a) / grid.h).clamp(1.0, grid.n as f64);
    let i = s.floor() as usize;
    if i >= grid.n {
        return pot.values[grid.n - 1];
    }
    let t = s - i as f64;
    (1.0 - t) * pot.values[i - 1] + t * pot.values[i]
}

/// Trapezoid integral of `U` along the path, updated step by step.
struct PotentialIntegral<'a> {
    grid: &'a DomainGrid,
    pot: Option<&'a PotentialField>,
    dt: f64,
    last: f64,
    value: f64,
}

impl<'a> PotentialIntegral<'a> {
    fn new(grid: &'a DomainGrid, pot: Option<&'a PotentialField>, dt: f64) -> Self {
        PotentialIntegral {
            grid,
            pot,
            dt,
            last: 0.0,
            value: 0.0,
        }
    }

    fn visit(&mut self, k: usize, x: f64) {
        if let Some(p) = self.pot {
            let u = potential_at(self.grid, p, x);
            if k > 0 {
                self.value += 0.5 * self.dt * (self.last + u);
            }
            self.last = u;
        }
    }
}

fn check_potential(grid: &DomainGrid, pot: &PotentialField) -> Result<()> {
    if pot.len() != grid.n {
        return Err(Error::Usage(format!(
            "potential has {} values, grid has {} nodes",
            pot.len(),
            grid.n
        )));
    }
    Ok(())
}

/// `E^{x0}[e^{-∫_0^t U(X_s) ds} f(X_t) 1_{t<τ}]`.
pub fn fk_expectation(
    grid: &DomainGrid,
    spec: &BernsteinSpec,
    potential: &PotentialField,
    f: &Field,
    t: f64,
    x0: f64,
    cfg: &PathConfig,
) -> Result<MCEstimate> {
    check_start(grid, x0)?;
    check_potential(grid, potential)?;
    f.check_len(grid, "f")?;
    if !(t >= 0.0) {
        return Err(Error::Usage(format!("time must be nonnegative, got {t}")));
    }
    if t == 0.0 {
        return Ok(MCEstimate::exact(f.interpolate(grid, x0)));
    }
    let sim = PathSimulator::new(grid, spec, cfg)?;
    let steps = cfg.steps_for(t).max(1);
    let samples = ensemble(cfg, |rng| {
        let mut integral = PotentialIntegral::new(grid, Some(potential), cfg.dt);
        let mut last_x = x0;
        let exit = sim.walk(x0, steps, rng, |k, x| {
            integral.visit(k, x);
            last_x = x;
        });
        match exit {
            Some(_) => 0.0,
            None => (-integral.value).exp() * f.interpolate(grid, last_x),
        }
    });
    Ok(MCEstimate::from_samples(&samples))
}

/// Survival fraction at `cfg.t_max` above which Green-potential estimates
/// are refused.
const MAX_CENSORED_FRACTION: f64 = 1e-3;

/// `E^{x0}[∫_0^τ g(X_s) ds]` with the left-point rule on the time grid.
pub fn mc_green_potential(
    grid: &DomainGrid,
    spec: &BernsteinSpec,
    g: &Field,
    x0: f64,
    cfg: &PathConfig,
) -> Result<MCEstimate> {
    check_start(grid, x0)?;
    g.check_len(grid, "g")?;
    let sim = PathSimulator::new(grid, spec, cfg)?;
    let max_steps = cfg.steps_for(cfg.t_max);
    let results = ensemble(cfg, |rng| {
        let mut acc = 0.0;
        let exit = sim.walk(x0, max_steps, rng, |_, x| acc += g.interpolate(grid, x) * cfg.dt);
        (acc, exit.is_none())
    });
    let censored = results.iter().filter(|r| r.1).count();
    if censored as f64 > MAX_CENSORED_FRACTION * cfg.n_paths as f64 {
        return Err(Error::InsufficientStatistics(format!(
            "{censored} of {} paths still alive at t_max = {}; raise t_max",
            cfg.n_paths, cfg.t_max
        )));
    }
    let samples: Vec<f64> = results.into_iter().map(|r| r.0).collect();
    Ok(MCEstimate::from_samples(&samples))
}

/// `E^{x0}[e^{-∫_0^t U} 1_{τ>t}]` at every time of `t_grid` from one
/// ensemble.
pub fn mc_survival(
    grid: &DomainGrid,
    spec: &BernsteinSpec,
    potential: &PotentialField,
    t_grid: &[f64],
    x0: f64,
    cfg: &PathConfig,
) -> Result<Vec<MCEstimate>> {
    check_start(grid, x0)?;
    check_potential(grid, potential)?;
    if t_grid.is_empty() || t_grid.windows(2).any(|w| !(w[1] > w[0])) || !(t_grid[0] > 0.0) {
        return Err(Error::Usage("time grid must be positive and increasing".into()));
    }
    let sim = PathSimulator::new(grid, spec, cfg)?;
    let marks: Vec<usize> = t_grid.iter().map(|&t| cfg.steps_for(t).max(1)).collect();
    let last = *marks.last().unwrap();
    let per_path = ensemble(cfg, |rng| {
        let mut integral = PotentialIntegral::new(grid, Some(potential), cfg.dt);
        let mut out = vec![0.0; marks.len()];
        let mut next = 0;
        sim.walk(x0, last, rng, |k, x| {
            integral.visit(k, x);
            while next < marks.len() && marks[next] == k {
                out[next] = (-integral.value).exp();
                next += 1;
            }
        });
        out
    });
    Ok((0..marks.len())
        .map(|j| {
            let col: Vec<f64> = per_path.iter().map(|v| v[j]).collect();
            MCEstimate::from_samples(&col)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenvalueFit {
    pub lambda: f64,
    /// Times used in the fit.
    pub window: Vec<f64>,
    pub survival: Vec<MCEstimate>,
}

/// Estimates below this many standard errors are noise.
const NOISE_FLOOR_SE: f64 = 10.0;

/// `−d/dt log E^{x}[e^{-∫U} 1_{τ>t}]` by least squares over the largest
/// times whose estimates clear the noise floor; `x` is the midpoint.
pub fn mc_eigenvalue(
    grid: &DomainGrid,
    spec: &BernsteinSpec,
    potential: &PotentialField,
    t_grid: &[f64],
    cfg: &PathConfig,
) -> Result<EigenvalueFit> {
    if t_grid.len() < 3 {
        return Err(Error::Usage("eigenvalue fit needs at least 3 times".into()));
    }
    let survival = mc_survival(grid, spec, potential, t_grid, grid.midpoint(), cfg)?;
    let usable: Vec<usize> = (0..t_grid.len())
        .filter(|&j| survival[j].mean > NOISE_FLOOR_SE * survival[j].std_error && survival[j].mean > 0.0)
        .collect();
    if usable.len() < 2 {
        return Err(Error::InsufficientStatistics(format!(
            "only {} of {} survival estimates above the noise floor",
            usable.len(),
            t_grid.len()
        )));
    }
    // Largest-time window: the upper half of the usable points, at least 2.
    let take = (usable.len() / 2).max(2).min(usable.len());
    let idx = &usable[usable.len() - take..];
    let xs: Vec<f64> = idx.iter().map(|&j| t_grid[j]).collect();
    let ys: Vec<f64> = idx.iter().map(|&j| -survival[j].mean.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(EigenvalueFit {
        lambda: sxy / sxx,
        window: xs,
        survival,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FkCheck {
    /// `|mean(D)| / std_error(D)`.
    pub residual: f64,
    pub discrepancy: MCEstimate,
}

/// Checks
/// `u(x0) = E[∫_0^{t∧τ} e^{-∫_0^s U} g(X_s) ds + e^{-∫_0^t U} u(X_t) 1_{t<τ}]`
/// for `u` solving `(L + U)u = g`, path by path. The residual is in units
/// of the standard error of the per-path discrepancy.
pub fn verify_fk_identity(
    op: &NonlocalOperator,
    potential: &PotentialField,
    g: &Field,
    x0: f64,
    t: f64,
    cfg: &PathConfig,
) -> Result<FkCheck> {
    let grid = &op.grid;
    check_start(grid, x0)?;
    if !(t >= 0.0) {
        return Err(Error::Usage(format!("time must be nonnegative, got {t}")));
    }
    let u = solve_dirichlet(op, potential, g)?;
    let u0 = u.interpolate(grid, x0);
    let sim = PathSimulator::new(grid, &op.spec, cfg)?;
    let steps = cfg.steps_for(t);
    let samples = ensemble(cfg, |rng| {
        if steps == 0 {
            return 0.0;
        }
        let mut integral = PotentialIntegral::new(grid, Some(potential), cfg.dt);
        let mut running = 0.0;
        let mut last_x = x0;
        let exit = sim.walk(x0, steps, rng, |k, x| {
            integral.visit(k, x);
            if k < steps {
                running += (-integral.value).exp() * g.interpolate(grid, x) * cfg.dt;
            }
            last_x = x;
        });
        let terminal = match exit {
            Some(_) => 0.0,
            None => (-integral.value).exp() * u.interpolate(grid, last_x),
        };
        running + terminal - u0
    });
    let est = MCEstimate::from_samples(&samples);
    let residual = if est.mean == 0.0 {
        0.0
    } else {
        est.mean.abs() / est.std_error
    };
    Ok(FkCheck {
        residual,
        discrepancy: est,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRefinement {
    pub config: PathConfig,
    /// `(dt, E^{x0}[τ])` for each step size tried.
    pub history: Vec<(f64, MCEstimate)>,
    pub converged: bool,
}

/// Halves `dt` until the mean exit time from `x0` moves by less than
/// `rel_tol` (or by less than two combined standard errors, whichever is
/// larger).
pub fn refine_time_step(
    grid: &DomainGrid,
    spec: &BernsteinSpec,
    x0: f64,
    cfg: &PathConfig,
    rel_tol: f64,
    max_halvings: usize,
) -> Result<StepRefinement> {
    let ones = Field::constant(grid.n, 1.0);
    let mut current = *cfg;
    let mut prev = mc_green_potential(grid, spec, &ones, x0, &current)?;
    let mut history = vec![(current.dt, prev)];
    for _ in 0..max_halvings {
        let next_cfg = PathConfig {
            dt: current.dt / 2.0,
            ..current
        };
        let next = mc_green_potential(grid, spec, &ones, x0, &next_cfg)?;
        history.push((next_cfg.dt, next));
        let moved = (next.mean - prev.mean).abs();
        let noise = 2.0 * prev.std_error.hypot(next.std_error);
        current = next_cfg;
        if moved <= (rel_tol * next.mean.abs()).max(noise) {
            return Ok(StepRefinement {
                config: current,
                history,
                converged: true,
            });
        }
        prev = next;
    }
    Ok(StepRefinement {
        config: current,
        history,
        converged: false,
    })
}
