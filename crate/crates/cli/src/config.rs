//! Experiment configuration. One TOML file describes a whole run; every
//! field other than `pipeline`, `spec` and the domain has a default, and
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use nlap_core::bernstein::BernsteinSpec;
use nlap_core::stochastic::{PathConfig, Scheme};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Validate,
    SolveLinear,
    Eigen,
    Torsion,
    McCrosscheck,
    ApScan,
    SecondSolution,
}

impl Pipeline {
    pub fn name(&self) -> &'static str {
        match self {
            Pipeline::Validate => "validate",
            Pipeline::SolveLinear => "solve_linear",
            Pipeline::Eigen => "eigen",
            Pipeline::Torsion => "torsion",
            Pipeline::McCrosscheck => "mc_crosscheck",
            Pipeline::ApScan => "ap_scan",
            Pipeline::SecondSolution => "second_solution",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub pipeline: Pipeline,
    pub spec: BernsteinSpec,
    pub domain: DomainConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub linear: LinearConfig,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub scan: ScanConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub a: f64,
    pub b: f64,
    /// Interior nodes.
    pub n: usize,
}

/// Constant potential and right-hand side for the linear pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearConfig {
    pub potential: f64,
    pub rhs: f64,
    pub eigen_tol: f64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            potential: 0.0,
            rhs: 1.0,
            eigen_tol: 1e-12,
        }
    }
}

/// Whether slopes and potentials are multiples of the principal
/// eigenvalue of the operator or absolute numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    LambdaStar,
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NonlinearityConfig {
    PiecewiseLinear { slope_neg: f64, slope_pos: f64 },
    /// `coefficient · q²`, never scaled by the units.
    Quadratic { coefficient: f64 },
}

/// Defaults describe the canonical slope-crossing problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub units: Units,
    pub nonlinearity: NonlinearityConfig,
    pub u1: f64,
    pub u2: f64,
    pub c: f64,
    /// Constant forcing `h`.
    pub h: f64,
    pub rho: f64,
    pub relax_ordering: bool,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            units: Units::LambdaStar,
            nonlinearity: NonlinearityConfig::PiecewiseLinear {
                slope_neg: 0.5,
                slope_pos: 2.0,
            },
            u1: -0.5,
            u2: -2.0,
            c: 0.0,
            h: 0.0,
            rho: -0.5,
            relax_ordering: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub dt: f64,
    pub t_max: f64,
    pub n_paths: usize,
    pub scheme: Scheme,
    pub small_jump_cutoff: f64,
    /// Starting points for the Green potential cross-check.
    pub points: Vec<f64>,
    /// Also fit the principal eigenvalue from survival probabilities.
    pub eigenvalue: bool,
    pub t_grid: Vec<f64>,
}

impl Default for McConfig {
    fn default() -> Self {
        let p = PathConfig::default();
        McConfig {
            dt: 5e-4,
            t_max: p.t_max,
            n_paths: p.n_paths,
            scheme: p.scheme,
            small_jump_cutoff: p.small_jump_cutoff,
            points: vec![-0.6, -0.3, 0.0, 0.3, 0.6],
            eigenvalue: false,
            t_grid: (1..=8).map(|k| 0.5 * k as f64).collect(),
        }
    }
}

impl McConfig {
    pub fn path_config(&self, seed: u64) -> PathConfig {
        PathConfig {
            dt: self.dt,
            t_max: self.t_max,
            n_paths: self.n_paths,
            seed,
            scheme: self.scheme,
            small_jump_cutoff: self.small_jump_cutoff,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub rho_lo: f64,
    pub rho_hi: f64,
    pub coarse_points: usize,
    pub bisection_tol: f64,
    pub max_bisections: usize,
    pub n_starts: usize,
    pub rho_hat: f64,
    pub ceiling_factor: f64,
    pub search_second: bool,
    pub tol: f64,
    pub max_iters: usize,
    pub separation: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            rho_lo: -10.0,
            rho_hi: 2.0,
            coarse_points: 13,
            bisection_tol: 0.01,
            max_bisections: 40,
            n_starts: 50,
            rho_hat: 10.0,
            ceiling_factor: 10.0,
            search_second: true,
            tol: 1e-10,
            max_iters: 5000,
            separation: 0.05,
        }
    }
}

impl ExperimentConfig {
    /// Parses and checks a config; `origin` names the source in messages.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config {
            origin: origin.to_string(),
            detail: e.to_string(),
        })?;
        cfg.check().map_err(|detail| CliError::Config {
            origin: origin.to_string(),
            detail,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    fn check(&self) -> std::result::Result<(), String> {
        self.spec.validate().map_err(|e| format!("spec: {e}"))?;
        let d = &self.domain;
        if !(d.a < d.b) || !d.a.is_finite() || !d.b.is_finite() {
            return Err(format!("domain: need finite a < b, got ({}, {})", d.a, d.b));
        }
        if d.n < 3 {
            return Err(format!("domain: need n >= 3 interior nodes, got {}", d.n));
        }
        if !(self.linear.eigen_tol > 0.0) {
            return Err("linear.eigen_tol must be positive".into());
        }
        match self.pipeline {
            Pipeline::McCrosscheck => {
                self.mc
                    .path_config(self.seed)
                    .validate()
                    .map_err(|e| format!("mc: {e}"))?;
                if let Some(x) = self.mc.points.iter().find(|&&x| !(x > d.a && x < d.b)) {
                    return Err(format!("mc.points: {x} is not inside ({}, {})", d.a, d.b));
                }
                if self.mc.eigenvalue && !self.mc.t_grid.windows(2).all(|w| w[0] < w[1]) {
                    return Err("mc.t_grid must be strictly increasing".into());
                }
            }
            Pipeline::ApScan => {
                let s = &self.scan;
                if !(s.rho_lo < s.rho_hi) || s.coarse_points < 2 || !(s.bisection_tol > 0.0) {
                    return Err("scan: need rho_lo < rho_hi, coarse_points >= 2 and bisection_tol > 0".into());
                }
            }
            _ => {}
        }
        Ok(())
    }
}
