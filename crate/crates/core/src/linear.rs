//! Linear Dirichlet problems `(L + U)u = g`, principal eigenpairs of
//! `L + U`, and the comparison principle.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bernstein::{renewal_surrogate, BernsteinSpec, Family};
use crate::error::{Error, Result};
use crate::grid::{DomainGrid, Field, NonlocalOperator};

/// Potential `U` on the interior nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialField {
    pub values: Vec<f64>,
}

impl PotentialField {
    pub fn new(values: Vec<f64>) -> Self {
        PotentialField { values }
    }

    pub fn zeros(n: usize) -> Self {
        PotentialField { values: vec![0.0; n] }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        PotentialField { values: vec![c; n] }
    }

    pub fn shifted(&self, c: f64) -> Self {
        PotentialField {
            values: self.values.iter().map(|v| v + c).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        PotentialField {
            values: self.values.iter().map(|v| v * c).collect(),
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

    fn check(&self, n: usize) -> Result<()> {
        if self.len() != n {
            return Err(Error::Usage(format!(
                "potential has {} values, operator has {n} nodes",
                self.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Usage("potential has non-finite values".into()));
        }
        Ok(())
    }
}

impl From<Field> for PotentialField {
    fn from(f: Field) -> Self {
        PotentialField { values: f.values }
    }
}

/// `L + diag(U)`.
pub fn shifted_matrix(op: &NonlocalOperator, potential: &PotentialField) -> Result<DMatrix<f64>> {
    potential.check(op.n())?;
    let mut m = op.matrix.clone();
    for (i, u) in potential.values.iter().enumerate() {
        m[(i, i)] += u;
    }
    Ok(m)
}

/// Row sums nonnegative with one strictly positive: with nonpositive
/// irreducible off-diagonals this makes `A` a nonsingular M-matrix.
fn certifies_positive_spectrum(a: &DMatrix<f64>) -> bool {
    let mut strict = false;
    for row in a.row_iter() {
        let s: f64 = row.sum();
        let scale = row.iter().fold(0.0f64, |m, v| m.max(v.abs())) * 1e-12;
        if s < 0.0 {
            return false;
        }
        strict |= s > scale;
    }
    strict
}

/// LU factorization of `L + diag(U)` after the solvability check.
#[derive(Debug, Clone)]
pub struct DirichletSolver {
    matrix: DMatrix<f64>,
    lu: LU<f64, Dyn, Dyn>,
    /// Principal eigenvalue when it had to be computed for the check.
    pub lambda_star: Option<f64>,
}

impl DirichletSolver {
    pub fn new(op: &NonlocalOperator, potential: &PotentialField) -> Result<Self> {
        let matrix = shifted_matrix(op, potential)?;
        let lambda_star = if certifies_positive_spectrum(&matrix) {
            None
        } else {
            let pair = eigenpair_of(&matrix, 1e-10)?;
            if pair.lambda_star <= 0.0 {
                return Err(Error::Solvability {
                    lambda_star: pair.lambda_star,
                });
            }
            Some(pair.lambda_star)
        };
        let lu = matrix.clone().lu();
        Ok(DirichletSolver {
            matrix,
            lu,
            lambda_star,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn solve(&self, g: &Field) -> Result<Field> {
        let n = self.matrix.nrows();
        if g.len() != n {
            return Err(Error::Usage(format!(
                "right-hand side has {} values, operator has {n} nodes",
                g.len()
            )));
        }
        let rhs = g.to_dvector();
        let mut u = self
            .lu
            .solve(&rhs)
            .ok_or_else(|| Error::numerical("dirichlet solve", "singular system"))?;
        // One step of iterative refinement.
        let r = &rhs - &self.matrix * &u;
        if let Some(du) = self.lu.solve(&r) {
            u += du;
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("dirichlet solve", "non-finite solution"));
        }
        Ok(Field::from_dvector(&u))
    }

    /// Solves for several right-hand sides in parallel.
    pub fn solve_many(&self, rhs: &[Field]) -> Result<Vec<Field>> {
        rhs.par_iter().map(|g| self.solve(g)).collect()
    }

    /// `‖A u − g‖_∞`.
    pub fn residual(&self, u: &Field, g: &Field) -> f64 {
        let r = &self.matrix * u.to_dvector() - g.to_dvector();
        r.amax()
    }
}

/// Solves `(L + diag(U))u = g`, `u = 0` outside the interval. Refuses when
/// the principal eigenvalue of `L + U` is not positive.
pub fn solve_dirichlet(op: &NonlocalOperator, potential: &PotentialField, g: &Field) -> Result<Field> {
    g.check_len(&op.grid, "right-hand side")?;
    DirichletSolver::new(op, potential)?.solve(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub lambda_star: f64,
    /// Positive, `‖φ‖_∞ = 1`.
    pub phi: Field,
    /// `‖Aφ − λφ‖_∞ / ‖A‖_∞`.
    pub residual: f64,
    pub iterations: usize,
}

/// Principal eigenpair of `L + diag(U)` by shifted inverse iteration.
pub fn principal_eigenpair(op: &NonlocalOperator, potential: &PotentialField, tol: f64) -> Result<EigenPair> {
    if !(tol > 0.0) {
        return Err(Error::Usage(format!("tolerance must be positive, got {tol}")));
    }
    eigenpair_of(&shifted_matrix(op, potential)?, tol)
}

fn rayleigh(a: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(a * x)) / x.dot(x)
}

fn normalized_positive(x: &DVector<f64>) -> DVector<f64> {
    let (imax, _) = x.iamax_full();
    let s = x[imax];
    x / s
}

fn eigenpair_of(a: &DMatrix<f64>, tol: f64) -> Result<EigenPair> {
    const PHASE1_ITERS: usize = 2000;
    const PHASE2_ITERS: usize = 60;
    let n = a.nrows();
    let norm = a.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let residual_of = |x: &DVector<f64>, lam: f64| (a * x - x * lam).amax() / norm.max(f64::MIN_POSITIVE);

    // Gershgorin lower bound, nudged so the shifted matrix is nonsingular.
    let gersh = (0..n)
        .map(|i| a[(i, i)] - (0..n).filter(|&j| j != i).map(|j| a[(i, j)].abs()).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    let shift = gersh - 1e-8 * norm.max(1.0);
    let lu = (a - DMatrix::identity(n, n) * shift).lu();

    let mut x = DVector::from_element(n, 1.0);
    let mut lam = rayleigh(a, &x);
    let mut iterations = 0;
    let mut last_res = f64::INFINITY;
    for _ in 0..PHASE1_ITERS {
        iterations += 1;
        let y = lu
            .solve(&x)
            .ok_or_else(|| Error::numerical("eigen solve", "singular shifted matrix"))?;
        let y = normalized_positive(&y);
        let next = rayleigh(a, &y);
        let moved = (next - lam).abs();
        x = y;
        lam = next;
        last_res = residual_of(&x, lam);
        if last_res <= tol || moved <= 1e-6 * lam.abs().max(1.0) {
            break;
        }
    }
    // Rayleigh quotient refinement.
    for _ in 0..PHASE2_ITERS {
        if last_res <= tol {
            break;
        }
        iterations += 1;
        let lu = (a - DMatrix::identity(n, n) * lam).lu();
        let y = match lu.solve(&x) {
            Some(y) if y.iter().all(|v| v.is_finite()) => y,
            // Exactly singular: the shift is the eigenvalue.
            _ => break,
        };
        x = normalized_positive(&y);
        lam = rayleigh(a, &x);
        let res = residual_of(&x, lam);
        if res >= last_res && res <= 1e3 * tol {
            last_res = res;
            break;
        }
        last_res = res;
    }
    if !(last_res <= tol) {
        return Err(Error::numerical(
            "principal eigenpair",
            format!("stagnated after {iterations} iterations with residual {last_res:.3e}"),
        ));
    }
    if let Some(i) = x.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::numerical(
            "principal eigenpair",
            format!("eigenvector not positive at node {i} (value {:.3e})", x[i]),
        ));
    }
    Ok(EigenPair {
        lambda_star: lam,
        phi: Field::from_dvector(&x),
        residual: last_res,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    StrictlyLess,
    Identical,
}

/// Solves with `g1 ≤ g2` and classifies the pair of solutions: equal when
/// the data agree, strictly ordered at every node otherwise.
pub fn compare_solutions(
    op: &NonlocalOperator,
    potential: &PotentialField,
    g1: &Field,
    g2: &Field,
) -> Result<Comparison> {
    g1.check_len(&op.grid, "g1")?;
    g2.check_len(&op.grid, "g2")?;
    if let Some(i) = (0..g1.len()).find(|&i| g1.values[i] > g2.values[i]) {
        return Err(Error::Usage(format!(
            "comparison requires g1 <= g2; node {i} has {} > {}",
            g1.values[i], g2.values[i]
        )));
    }
    let solver = DirichletSolver::new(op, potential)?;
    let sols = solver.solve_many(&[g1.clone(), g2.clone()])?;
    let (u, v) = (&sols[0], &sols[1]);
    let scale = u.sup_norm().max(v.sup_norm()).max(1.0);
    if g1 == g2 {
        let d = u.distance(v);
        if d > 1e-10 * scale {
            return Err(Error::InvariantViolation(format!(
                "equal data produced solutions {d:.3e} apart"
            )));
        }
        return Ok(Comparison::Identical);
    }
    // The difference solves the problem with data g2 − g1 ≥ 0, g2 ≠ g1.
    let gap = solver.solve(&g2.sub(g1))?;
    for i in 0..gap.len() {
        let ordered = u.values[i] <= v.values[i] + 1e-10 * scale;
        if !(gap.values[i] > 0.0) || !ordered {
            return Err(Error::InvariantViolation(format!(
                "comparison not strict at node {i}: u = {}, v = {}, gap = {:.3e}",
                u.values[i], v.values[i], gap.values[i]
            )));
        }
    }
    Ok(Comparison::StrictlyLess)
}

/// `(min, max)` over nodes of `u(x_i) / V̂(δ(x_i))`.
pub fn boundary_ratio(u: &Field, grid: &DomainGrid, spec: &BernsteinSpec) -> Result<(f64, f64)> {
    u.check_len(grid, "field")?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (v, &d) in u.values.iter().zip(&grid.delta) {
        let r = v / renewal_surrogate(spec, d)?;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok((lo, hi))
}

/// Exact torsion `E^x[τ]` of the interval when `Ψ(u) = u^{α/2}` with no
/// extra drift: `Γ(1/2) / (2^α Γ(1 + α/2) Γ((1 + α)/2)) · (r² − (x − c)²)^{α/2}`.
/// `None` for other symbols.
pub fn exact_torsion(spec: &BernsteinSpec, grid: &DomainGrid) -> Option<Field> {
    let alpha = match spec.family {
        Family::Stable { alpha } => alpha,
        Family::Local => 2.0,
        _ => return None,
    };
    if spec.drift_b != 0.0 || spec.dimension_d != 1 {
        return None;
    }
    let k = PI.sqrt()
        / (2f64.powf(alpha) * libm::tgamma(1.0 + alpha / 2.0) * libm::tgamma(0.5 + alpha / 2.0));
    let (c, r) = (grid.midpoint(), 0.5 * (grid.b - grid.a));
    Some(Field::from_fn(grid, |x| k * (r * r - (x - c) * (x - c)).max(0.0).powf(alpha / 2.0)))
}

/// CSV with columns `x,u,v_hat,ratio`.
pub fn write_solution_csv(
    u: &Field,
    grid: &DomainGrid,
    spec: &BernsteinSpec,
    path: impl AsRef<Path>,
) -> Result<()> {
    u.check_len(grid, "field")?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "u", "v_hat", "ratio"])?;
    for ((&x, &v), &d) in grid.nodes.iter().zip(&u.values).zip(&grid.delta) {
        let vh = renewal_surrogate(spec, d)?;
        w.write_record([x.to_string(), v.to_string(), vh.to_string(), (v / vh).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct EigenSummary {
    pub lambda: f64,
    pub residual: f64,
    pub n: usize,
}

impl EigenPair {
    pub fn summary(&self) -> EigenSummary {
        EigenSummary {
            lambda: self.lambda_star,
            residual: self.residual,
            n: self.phi.len(),
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(f, &self.summary())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{assemble_operator, build_grid};

    #[test]
    fn exact_torsion_special_cases() {
        let g = build_grid(-1.0, 3.0, 9).unwrap();
        let local = exact_torsion(&BernsteinSpec::local(), &g).unwrap();
        let stable1 = exact_torsion(&BernsteinSpec::stable(1.0).unwrap(), &g).unwrap();
        for (i, &x) in g.nodes.iter().enumerate() {
            let q = 4.0 - (x - 1.0) * (x - 1.0);
            assert!((local.values[i] - q / 2.0).abs() < 1e-12);
            assert!((stable1.values[i] - q.sqrt()).abs() < 1e-12);
        }
        assert!(exact_torsion(&BernsteinSpec::relativistic(1.0, 1.0).unwrap(), &g).is_none());
    }

    #[test]
    fn local_torsion_and_eigenvalue() {
        let g = build_grid(-1.0, 1.0, 199).unwrap();
        let op = assemble_operator(&g, &BernsteinSpec::local()).unwrap();
        let u = solve_dirichlet(&op, &PotentialField::zeros(199), &Field::constant(199, 1.0)).unwrap();
        let err = g
            .nodes
            .iter()
            .zip(&u.values)
            .map(|(x, v)| (v - (1.0 - x * x) / 2.0).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-3, "{err}");
        let pair = principal_eigenpair(&op, &PotentialField::zeros(199), 1e-12).unwrap();
        let want = std::f64::consts::PI.powi(2) / 4.0;
        assert!((pair.lambda_star - want).abs() <= 1e-3, "{}", pair.lambda_star);
        let cos_err = g
            .nodes
            .iter()
            .zip(&pair.phi.values)
            .map(|(x, p)| (p - (std::f64::consts::FRAC_PI_2 * x).cos()).abs())
            .fold(0.0, f64::max);
        assert!(cos_err < 1e-3);
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let g = build_grid(-1.0, 1.0, 31).unwrap();
        let op = assemble_operator(&g, &BernsteinSpec::stable(1.0).unwrap()).unwrap();
        let u = solve_dirichlet(&op, &PotentialField::zeros(31), &Field::zeros(31)).unwrap();
        assert!(u.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn refuses_nonpositive_principal_eigenvalue() {
        let g = build_grid(-1.0, 1.0, 41).unwrap();
        let op = assemble_operator(&g, &BernsteinSpec::stable(1.0).unwrap()).unwrap();
        let lam = principal_eigenpair(&op, &PotentialField::zeros(41), 1e-12).unwrap().lambda_star;
        let pot = PotentialField::constant(41, -(lam + 0.1));
        match solve_dirichlet(&op, &pot, &Field::constant(41, 1.0)) {
            Err(Error::Solvability { lambda_star }) => assert!((lambda_star + 0.1).abs() < 1e-8),
            other => panic!("expected solvability error, got {other:?}"),
        }
    }

    #[test]
    fn compare_examples() {
        let g = build_grid(-1.0, 1.0, 31).unwrap();
        let op = assemble_operator(&g, &BernsteinSpec::stable(1.0).unwrap()).unwrap();
        let z = PotentialField::zeros(31);
        let one = Field::constant(31, 1.0);
        assert_eq!(compare_solutions(&op, &z, &one, &one).unwrap(), Comparison::Identical);
        assert_eq!(
            compare_solutions(&op, &z, &Field::zeros(31), &one).unwrap(),
            Comparison::StrictlyLess
        );
        assert!(matches!(
            compare_solutions(&op, &z, &one, &Field::zeros(31)),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn boundary_ratio_of_zero() {
        let g = build_grid(-1.0, 1.0, 11).unwrap();
        let s = BernsteinSpec::stable(1.0).unwrap();
        assert_eq!(boundary_ratio(&Field::zeros(11), &g, &s).unwrap(), (0.0, 0.0));
    }
}
