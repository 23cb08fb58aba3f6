//! Uniform grids on an interval, fields with zero exterior values, and the
//! monotone discretization of `Ψ(−Δ)` restricted to the interval.
//!
//! The operator acts on interior values with `u ≡ 0` outside `(a, b)`:
//!
//! ```text
//! (Lu)_i = (c/h² + b/h²)(2u_i − u_{i−1} − u_{i+1})
//!        + Σ_{k≠0} w_|k| (u_i − u_{i+k})
//! ```
//!
//! where `c = ∫_0^h y² j(y) dy` absorbs jumps shorter than one cell and
//! `w_k` integrates `j` against the hat function centred at `k·h` over
//! `|y| ≥ h`. Jumps that land outside the interval only feed the diagonal,
//! whose far part is the full tail `2∫_h^∞ j`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bernstein::{BernsteinSpec, LevyKernel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainGrid {
    pub a: f64,
    pub b: f64,
    pub n: usize,
    pub h: f64,
    pub nodes: Vec<f64>,
    /// Distance of each node to the complement of `(a, b)`.
    pub delta: Vec<f64>,
}

pub fn build_grid(a: f64, b: f64, n: usize) -> Result<DomainGrid> {
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Usage(format!("interval requires a < b, got ({a}, {b})")));
    }
    if n < 3 {
        return Err(Error::Usage(format!("need at least 3 interior nodes, got {n}")));
    }
    let h = (b - a) / (n + 1) as f64;
    // Nodes are indexed from the nearer endpoint so that δ is exactly
    // symmetric on a symmetric grid.
    let delta: Vec<f64> = (1..=n).map(|i| i.min(n + 1 - i) as f64 * h).collect();
    let nodes = (1..=n).map(|i| a + i as f64 * h).collect();
    Ok(DomainGrid {
        a,
        b,
        n,
        h,
        nodes,
        delta,
    })
}

impl DomainGrid {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.a + self.b)
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.a && x < self.b
    }
}

/// Values on the interior nodes; zero on the complement of the interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(values: Vec<f64>) -> Self {
        Field { values }
    }

    pub fn zeros(n: usize) -> Self {
        Field { values: vec![0.0; n] }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Field { values: vec![c; n] }
    }

    pub fn from_fn(grid: &DomainGrid, f: impl Fn(f64) -> f64) -> Self {
        Field {
            values: grid.nodes.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        debug_assert_eq!(self.len(), other.len());
        Field {
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    pub fn add(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.zip_map(other, |a, b| a - b)
    }

    /// `‖self − other‖_∞`.
    pub fn distance(&self, other: &Field) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }

    pub fn from_dvector(v: &DVector<f64>) -> Self {
        Field {
            values: v.iter().copied().collect(),
        }
    }

    /// Piecewise-linear interpolant through the nodes and the zero
    /// endpoint values; zero outside `(a, b)`.
    pub fn interpolate(&self, grid: &DomainGrid, x: f64) -> f64 {
        if !grid.contains(x) {
            return 0.0;
        }
        let s = (x - grid.a) / grid.h;
        let i = (s.floor() as usize).min(grid.n);
        let t = s - i as f64;
        let at = |k: usize| {
            if k == 0 || k > grid.n {
                0.0
            } else {
                self.values[k - 1]
            }
        };
        (1.0 - t) * at(i) + t * at(i + 1)
    }

    pub fn check_len(&self, grid: &DomainGrid, what: &str) -> Result<()> {
        if self.len() != grid.n {
            return Err(Error::Usage(format!(
                "{what} has {} values but the grid has {} nodes",
                self.len(),
                grid.n
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Usage(format!("{what} has non-finite values")));
        }
        Ok(())
    }

    /// CSV with columns `node,x,value`.
    pub fn write_csv(&self, grid: &DomainGrid, path: impl AsRef<Path>) -> Result<()> {
        self.check_len(grid, "field")?;
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["node", "x", "value"])?;
        for (i, (x, v)) in grid.nodes.iter().zip(&self.values).enumerate() {
            w.write_record([(i + 1).to_string(), x.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Dense discretization of `Ψ(−Δ)` with zero exterior condition.
#[derive(Debug, Clone)]
pub struct NonlocalOperator {
    pub grid: DomainGrid,
    pub spec: BernsteinSpec,
    pub kernel: LevyKernel,
    pub matrix: DMatrix<f64>,
    /// Coefficient of `−u''` (explicit drift plus local components).
    pub drift_b: f64,
    /// Jumps shorter than `near_field_cells · h` are absorbed into the
    /// second difference.
    pub near_field_cells: usize,
    /// `∫_0^h y² j(y) dy`.
    pub near_field_moment: f64,
    /// `∫_h^∞ j(y) dy`; twice this sits on the diagonal.
    pub tail_mass: f64,
    /// Far-field hat weights `w_k`, `k = 1..n−1`.
    pub weights: Vec<f64>,
}

pub fn assemble_operator(grid: &DomainGrid, spec: &BernsteinSpec) -> Result<NonlocalOperator> {
    spec.validate()?;
    let kernel = LevyKernel::new(*spec)?;
    let h = grid.h;
    let n = grid.n;
    let (near, tail) = if spec.has_jumps() {
        (kernel.second_moment(h)?, kernel.tail_mass(h)?)
    } else {
        (0.0, 0.0)
    };
    let weights: Vec<f64> = if spec.has_jumps() {
        (1..n)
            .into_par_iter()
            .map(|k| kernel.hat_weight(k, h))
            .collect::<Result<_>>()?
    } else {
        vec![0.0; n.saturating_sub(1)]
    };
    let drift = spec.diffusion_coefficient();
    let local = (near + drift) / (h * h);
    let diag = 2.0 * local + 2.0 * tail;
    let off = |k: usize| -> f64 {
        let far = weights[k - 1];
        if k == 1 {
            -(local + far)
        } else {
            -far
        }
    };
    let matrix = DMatrix::from_fn(n, n, |i, j| if i == j { diag } else { off(i.abs_diff(j)) });
    let op = NonlocalOperator {
        grid: grid.clone(),
        spec: *spec,
        kernel,
        matrix,
        drift_b: drift,
        near_field_cells: 1,
        near_field_moment: near,
        tail_mass: tail,
        weights,
    };
    op.check_m_matrix()?;
    Ok(op)
}

pub fn apply_operator(op: &NonlocalOperator, u: &Field) -> Result<Field> {
    if u.len() != op.grid.n {
        return Err(Error::Usage(format!(
            "field of length {} applied to operator of size {}",
            u.len(),
            op.grid.n
        )));
    }
    Ok(Field::from_dvector(&(&op.matrix * u.to_dvector())))
}

impl NonlocalOperator {
    pub fn n(&self) -> usize {
        self.grid.n
    }

    /// Positive diagonal, nonpositive off-diagonal, nonnegative row sums
    /// with at least one strictly positive, symmetric.
    pub fn check_m_matrix(&self) -> Result<()> {
        let m = &self.matrix;
        let n = m.nrows();
        let mut strict = false;
        for i in 0..n {
            if !(m[(i, i)] > 0.0) {
                return Err(Error::InvariantViolation(format!(
                    "diagonal entry {i} is {}",
                    m[(i, i)]
                )));
            }
            let mut row = 0.0;
            for j in 0..n {
                let v = m[(i, j)];
                if !v.is_finite() {
                    return Err(Error::InvariantViolation(format!("entry ({i},{j}) not finite")));
                }
                if i != j && v > 0.0 {
                    return Err(Error::InvariantViolation(format!(
                        "off-diagonal entry ({i},{j}) = {v} > 0"
                    )));
                }
                if m[(j, i)] != v {
                    return Err(Error::InvariantViolation(format!("asymmetry at ({i},{j})")));
                }
                row += v;
            }
            let scale = m[(i, i)] * f64::EPSILON * n as f64;
            if row < -scale {
                return Err(Error::InvariantViolation(format!("row {i} sum {row} < 0")));
            }
            strict |= row > scale;
        }
        if !strict {
            return Err(Error::InvariantViolation("no strictly dominant row".into()));
        }
        Ok(())
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.matrix.row_iter().map(|r| r.sum()).collect()
    }

    /// JSON dump of the assembled matrix and its metadata.
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        #[derive(Serialize)]
        struct Dump<'a> {
            spec: String,
            a: f64,
            b: f64,
            n: usize,
            h: f64,
            drift_b: f64,
            near_field_cells: usize,
            near_field_moment: f64,
            tail_mass: f64,
            weights: &'a [f64],
            rows: Vec<Vec<f64>>,
        }
        let dump = Dump {
            spec: self.spec.to_string(),
            a: self.grid.a,
            b: self.grid.b,
            n: self.grid.n,
            h: self.grid.h,
            drift_b: self.drift_b,
            near_field_cells: self.near_field_cells,
            near_field_moment: self.near_field_moment,
            tail_mass: self.tail_mass,
            weights: &self.weights,
            rows: self
                .matrix
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        };
        let f = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(f), &dump)?;
        Ok(())
    }
}
