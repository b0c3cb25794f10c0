//! Least squares on the probability simplex.
//!
//! The sum constraint is handled by reparameterization: with `C` the row of
//! `1/c` we build `A` whose rows are orthonormal and orthogonal to `C`, so
//! `G = [C; A]` is invertible and `X = Z A + W C` with `[W Z] = X G^{-1}`.
//! Under `C beta = 1` the model becomes `Y - W = Z gamma`, an unconstrained
//! regression in `gamma = A beta`. Nonnegativity is imposed by stepwise
//! deletion: while some coefficient is negative, the one with the largest
//! `|t|` among the negatives is fixed at zero and its column dropped.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::data::SimplexVector;
use crate::error::{Error, Result};

/// `Z^T Z` with reciprocal condition number below this is treated as singular.
pub const RCOND_THRESHOLD: f64 = 1e-12;

/// Lattice size limit for [`brute_force_simplex`].
pub const GRID_POINT_LIMIT: u128 = 50_000_000;

/// Which coefficients are known in advance, and hence the total `c` left for
/// the free ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstraintSpec {
    fixed: BTreeMap<usize, f64>,
}

impl ConstraintSpec {
    /// No fixed coefficients, `c = 1`.
    pub fn free() -> Self {
        ConstraintSpec::default()
    }

    pub fn with_fixed(fixed: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, v) in fixed {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("fixed proportion {v} for cause {i} not in [0, 1)")));
            }
            if map.insert(i, v).is_some() {
                return Err(Error::InvalidConfig(format!("cause {i} fixed twice")));
            }
        }
        let spec = ConstraintSpec { fixed: map };
        if spec.total() <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "fixed proportions sum to {} (must be < 1)",
                1.0 - spec.total()
            )));
        }
        Ok(spec)
    }

    pub fn fixed(&self) -> &BTreeMap<usize, f64> {
        &self.fixed
    }

    /// `c = 1 - sum of fixed values`.
    pub fn total(&self) -> f64 {
        1.0 - self.fixed.values().sum::<f64>()
    }

    pub(crate) fn check(&self, j: usize) -> Result<()> {
        if let Some((&i, _)) = self.fixed.iter().find(|(&i, _)| i >= j) {
            return Err(Error::InvalidConfig(format!("fixed cause {i} out of range for J = {j}")));
        }
        if self.fixed.len() >= j {
            return Err(Error::InvalidConfig("every cause is fixed".into()));
        }
        Ok(())
    }
}

/// `G = [C; A]` for the constraint `C beta = 1`.
#[derive(Debug, Clone)]
pub struct ReparamBasis {
    total: f64,
    /// `1 x J`, every entry `1/c`.
    pub c: DMatrix<f64>,
    /// `(J-1) x J`, orthonormal rows orthogonal to `C`.
    pub a: DMatrix<f64>,
    /// `J x J`.
    pub g: DMatrix<f64>,
}

impl ReparamBasis {
    pub fn dim(&self) -> usize {
        self.g.ncols()
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// `G^{-1} = [C^T / |C|^2, A^T]`, exact because `C` is orthogonal to
    /// the rows of `A` and those rows are orthonormal.
    pub fn g_inverse(&self) -> DMatrix<f64> {
        let j = self.dim();
        let c_norm2 = j as f64 / (self.total * self.total);
        let mut inv = DMatrix::zeros(j, j);
        for r in 0..j {
            inv[(r, 0)] = self.c[(0, r)] / c_norm2;
            for k in 1..j {
                inv[(r, k)] = self.a[(k - 1, r)];
            }
        }
        inv
    }
}

/// Gram-Schmidt on `C` followed by the standard basis vectors.
pub fn build_basis(j: usize, total: f64) -> Result<ReparamBasis> {
    if j < 2 {
        return Err(Error::InvalidConfig(format!("basis needs J >= 2, got {j}")));
    }
    if !(total > 0.0 && total <= 1.0) {
        return Err(Error::InvalidConfig(format!("constraint total {total} not in (0, 1]")));
    }
    let mut rows: Vec<DVector<f64>> = vec![DVector::from_element(j, 1.0 / (j as f64).sqrt())];
    for e in 0..j {
        if rows.len() == j {
            break;
        }
        let mut w = DVector::zeros(j);
        w[e] = 1.0;
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for u in &rows {
                let proj = u.dot(&w);
                w.axpy(-proj, u, 1.0);
            }
        }
        let norm = w.norm();
        if norm > 1e-8 {
            rows.push(w / norm);
        }
    }
    debug_assert_eq!(rows.len(), j);
    let c = DMatrix::from_element(1, j, 1.0 / total);
    let a = DMatrix::from_fn(j - 1, j, |r, k| rows[r + 1][k]);
    let mut g = DMatrix::zeros(j, j);
    g.row_mut(0).copy_from(&c.row(0));
    g.rows_mut(1, j - 1).copy_from(&a);
    Ok(ReparamBasis { total, c, a, g })
}

/// Equality-constrained least squares estimate.
#[derive(Debug, Clone)]
pub struct EqualitySolution {
    /// Satisfies `C beta = 1`; entries may be negative.
    pub beta: DVector<f64>,
    /// `sigma^2 A^T (Z^T Z)^{-1} A`, i.e. `G^{-1} Cov(gamma*) G^{-T}`.
    pub covariance: DMatrix<f64>,
    /// Diagonal of `A^T (Z^T Z)^{-1} A` (covariance without the `sigma^2` factor).
    pub unit_variance: Vec<f64>,
    pub rss: f64,
    pub sigma2: f64,
}

pub fn solve_equality(y: &DVector<f64>, x: &DMatrix<f64>, basis: &ReparamBasis) -> Result<EqualitySolution> {
    let (n, j) = x.shape();
    if y.len() != n {
        return Err(Error::InvalidConfig(format!("Y has {} rows, X has {n}", y.len())));
    }
    if j != basis.dim() {
        return Err(Error::InvalidConfig(format!("X has {j} columns, basis is for {}", basis.dim())));
    }
    let g_inv = basis.g_inverse();
    let c_part = g_inv.column(0).into_owned();
    let a_t = basis.a.transpose();
    let w = x * &c_part;
    let z = x * &a_t;
    let rhs = y - &w;

    let ztz = z.tr_mul(&z);
    let eig = SymmetricEigen::new(ztz);
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    let rcond = if lmax > 0.0 { lmin / lmax } else { 0.0 };
    if !(rcond >= RCOND_THRESHOLD) {
        return Err(Error::Singular { rcond });
    }
    let inv_diag = eig.eigenvalues.map(|l| 1.0 / l);
    let ztz_inv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_diag) * eig.eigenvectors.transpose();
    let gamma = &ztz_inv * z.tr_mul(&rhs);

    let beta = &c_part + &a_t * &gamma;
    let resid = rhs - &z * &gamma;
    let rss = resid.norm_squared();
    let df = n as f64 - (j as f64 - 1.0);
    let sigma2 = if df > 0.0 { rss / df } else { 0.0 };
    let unit_cov = &a_t * &ztz_inv * &basis.a;
    let unit_variance = (0..j).map(|i| unit_cov[(i, i)]).collect();
    Ok(EqualitySolution { beta, covariance: unit_cov * sigma2, unit_variance, rss, sigma2 })
}

/// Simplex-constrained estimate.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub beta: SimplexVector,
    /// Causes coerced to zero by deletion, in deletion order.
    pub active_zero_set: Vec<usize>,
    /// `J x J`; rows and columns of fixed or deleted causes are zero.
    pub covariance: DMatrix<f64>,
    /// Deletion steps taken.
    pub iterations: usize,
    pub objective: f64,
}

/// `|| y - x beta ||^2`.
pub fn objective(y: &DVector<f64>, x: &DMatrix<f64>, beta: &[f64]) -> f64 {
    (y - x * DVector::from_column_slice(beta)).norm_squared()
}

fn select_columns(x: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), cols.len(), |r, c| x[(r, cols[c])])
}

/// Removes the fixed causes' contribution from `y`.
fn adjusted_response(y: &DVector<f64>, x: &DMatrix<f64>, spec: &ConstraintSpec) -> DVector<f64> {
    let mut y_adj = y.clone();
    for (&i, &v) in spec.fixed() {
        y_adj.axpy(-v, &x.column(i), 1.0);
    }
    y_adj
}

/// Reparameterized least squares with stepwise deletion of negative
/// coefficients. Among negative coefficients the one with the largest
/// `|beta_j| / se_j` is deleted first; ties go to the lower cause index.
/// When a single column remains it takes the whole total `c`.
pub fn solve_simplex(y: &DVector<f64>, x: &DMatrix<f64>, spec: &ConstraintSpec) -> Result<SolveResult> {
    let j = x.ncols();
    spec.check(j)?;
    if y.len() != x.nrows() {
        return Err(Error::InvalidConfig(format!("Y has {} rows, X has {}", y.len(), x.nrows())));
    }
    let total = spec.total();
    let y_adj = adjusted_response(y, x, spec);
    let mut active: Vec<usize> = (0..j).filter(|i| !spec.fixed().contains_key(i)).collect();
    let mut deleted = Vec::new();

    let (coef, cov) = loop {
        if active.len() == 1 {
            break (vec![total], DMatrix::zeros(1, 1));
        }
        let basis = build_basis(active.len(), total)?;
        let sol = solve_equality(&y_adj, &select_columns(x, &active), &basis)?;
        // sigma^2 is common to all t-values, so the ordering uses unit variances
        let worst = (0..active.len())
            .filter(|&i| sol.beta[i] < 0.0)
            .map(|i| {
                let se = sol.unit_variance[i].max(0.0).sqrt();
                let t = if se > 0.0 { sol.beta[i].abs() / se } else { f64::INFINITY };
                (i, t)
            })
            .fold(None, |best: Option<(usize, f64)>, (i, t)| match best {
                Some((_, bt)) if bt >= t => best,
                _ => Some((i, t)),
            });
        match worst {
            None => break (sol.beta.iter().copied().collect(), sol.covariance),
            Some((i, _)) => deleted.push(active.remove(i)),
        }
    };

    let mut beta = vec![0.0; j];
    for (&i, &v) in spec.fixed() {
        beta[i] = v;
    }
    let mut covariance = DMatrix::zeros(j, j);
    for (a, &i) in active.iter().enumerate() {
        beta[i] = coef[a];
        for (b, &k) in active.iter().enumerate() {
            covariance[(i, k)] = cov[(a, b)];
        }
    }
    let objective = objective(y, x, &beta);
    Ok(SolveResult {
        beta: SimplexVector::new(beta)?,
        iterations: deleted.len(),
        active_zero_set: deleted,
        covariance,
        objective,
    })
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Minimizes `|| y - x beta ||^2` over the lattice of simplex points whose
/// free coordinates are multiples of `c * resolution`. A verification oracle;
/// cost is `C(N + J - 1, J - 1)` objective evaluations with `N = 1/resolution`.
pub fn brute_force_simplex(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    spec: &ConstraintSpec,
    resolution: f64,
) -> Result<Vec<f64>> {
    let j = x.ncols();
    spec.check(j)?;
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(Error::InvalidConfig(format!("grid resolution {resolution} not in (0, 1]")));
    }
    let steps = (1.0 / resolution).round() as usize;
    let free: Vec<usize> = (0..j).filter(|i| !spec.fixed().contains_key(i)).collect();
    let m = free.len();
    let points = binomial((steps + m - 1) as u128, (m - 1) as u128);
    if points > GRID_POINT_LIMIT {
        return Err(Error::GridTooLarge { points, limit: GRID_POINT_LIMIT });
    }
    let y_adj = adjusted_response(y, x, spec);
    let xf = select_columns(x, &free);
    let scale = spec.total() / steps as f64;
    // objective in lattice units u: |y|^2 - 2 s b.u + s^2 u'Qu
    let q = xf.tr_mul(&xf) * (scale * scale);
    let b = xf.tr_mul(&y_adj) * (2.0 * scale);
    let q: Vec<f64> = q.iter().copied().collect();

    let mut best = (f64::INFINITY, vec![0usize; m]);
    let mut u = vec![0usize; m];
    enumerate(0, steps, &mut u, &mut |u: &[usize]| {
        let mut val = 0.0;
        for a in 0..m {
            if u[a] == 0 {
                continue;
            }
            let ua = u[a] as f64;
            let mut row = 0.0;
            for c in 0..m {
                row += q[a + c * m] * u[c] as f64;
            }
            val += ua * (row - b[a]);
        }
        if val < best.0 {
            best = (val, u.to_vec());
        }
    });

    let mut beta = vec![0.0; j];
    for (&i, &v) in spec.fixed() {
        beta[i] = v;
    }
    for (a, &i) in free.iter().enumerate() {
        beta[i] = best.1[a] as f64 * scale;
    }
    Ok(beta)
}

fn enumerate(pos: usize, remaining: usize, u: &mut [usize], visit: &mut impl FnMut(&[usize])) {
    if pos == u.len() - 1 {
        u[pos] = remaining;
        visit(u);
        return;
    }
    for v in 0..=remaining {
        u[pos] = v;
        enumerate(pos + 1, remaining - v, u, visit);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_cause_basis_by_hand() {
        let b = build_basis(2, 1.0).unwrap();
        assert_eq!(b.c.as_slice(), &[1.0, 1.0]);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((b.a[(0, 0)].abs() - h).abs() < 1e-15);
        assert!((b.a[(0, 0)] + b.a[(0, 1)]).abs() < 1e-15);
    }

    #[test]
    fn half_total_basis() {
        let b = build_basis(3, 0.5).unwrap();
        assert_eq!(b.c.as_slice(), &[2.0, 2.0, 2.0]);
        let ggt = &b.g * b.g.transpose();
        // block structure: [|C|^2, 0; 0, I]
        assert!((ggt[(0, 0)] - 12.0).abs() < 1e-12);
        for r in 0..3 {
            for c in 0..3 {
                if (r, c) != (0, 0) {
                    let expect = if r == c { 1.0 } else { 0.0 };
                    assert!((ggt[(r, c)] - expect).abs() < 1e-12);
                }
            }
        }
        let id = &b.g * b.g_inverse();
        assert!((id - DMatrix::<f64>::identity(3, 3)).abs().max() < 1e-12);
    }

    #[test]
    fn basis_rejects_bad_dims() {
        assert!(build_basis(1, 1.0).is_err());
        assert!(build_basis(3, 0.0).is_err());
        assert!(build_basis(3, 1.5).is_err());
    }

    #[test]
    fn exact_two_cause_fit() {
        let x = DMatrix::from_row_slice(3, 2, &[0.5, 0.1, 0.3, 0.2, 0.2, 0.7]);
        let y = &x * DVector::from_column_slice(&[0.3, 0.7]);
        let b = build_basis(2, 1.0).unwrap();
        let s = solve_equality(&y, &x, &b).unwrap();
        assert!((s.beta[0] - 0.3).abs() < 1e-12 && (s.beta[1] - 0.7).abs() < 1e-12);
        assert!(s.rss < 1e-25);
    }

    #[test]
    fn identity_design_returns_y() {
        let x = DMatrix::<f64>::identity(4, 4);
        let y = DVector::from_column_slice(&[0.1, 0.2, 0.3, 0.4]);
        let s = solve_equality(&y, &x, &build_basis(4, 1.0).unwrap()).unwrap();
        assert!((s.beta - &y).abs().max() < 1e-12);
    }

    #[test]
    fn singular_design_is_reported() {
        let x = DMatrix::from_row_slice(3, 3, &[0.5, 0.5, 0.1, 0.3, 0.3, 0.2, 0.2, 0.2, 0.7]);
        let y = DVector::from_column_slice(&[0.3, 0.3, 0.4]);
        assert!(matches!(
            solve_equality(&y, &x, &build_basis(3, 1.0).unwrap()),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn no_deletion_when_nonnegative() {
        let x = DMatrix::from_row_slice(4, 3, &[0.5, 0.1, 0.2, 0.3, 0.2, 0.1, 0.1, 0.6, 0.2, 0.1, 0.1, 0.5]);
        let y = &x * DVector::from_column_slice(&[0.2, 0.5, 0.3]);
        let r = solve_simplex(&y, &x, &ConstraintSpec::free()).unwrap();
        let e = solve_equality(&y, &x, &build_basis(3, 1.0).unwrap()).unwrap();
        assert_eq!(r.iterations, 0);
        for i in 0..3 {
            assert!((r.beta[i] - e.beta[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn fixed_cause_is_pinned() {
        let x = DMatrix::from_row_slice(4, 3, &[0.5, 0.1, 0.2, 0.3, 0.2, 0.1, 0.1, 0.6, 0.2, 0.1, 0.1, 0.5]);
        let y = &x * DVector::from_column_slice(&[0.2, 0.5, 0.3]);
        let spec = ConstraintSpec::with_fixed([(2, 0.1)]).unwrap();
        assert!((spec.total() - 0.9).abs() < 1e-15);
        let r = solve_simplex(&y, &x, &spec).unwrap();
        assert_eq!(r.beta[2], 0.1);
        assert!((r.beta[0] + r.beta[1] - 0.9).abs() < 1e-12);
        // the true value for the pinned cause gives back the rest exactly
        let r = solve_simplex(&y, &x, &ConstraintSpec::with_fixed([(2, 0.3)]).unwrap()).unwrap();
        assert!((r.beta[0] - 0.2).abs() < 1e-12 && (r.beta[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constraint_spec_validation() {
        assert!(ConstraintSpec::with_fixed([(0, 1.0)]).is_err());
        assert!(ConstraintSpec::with_fixed([(0, 0.6), (1, 0.5)]).is_err());
        assert!(ConstraintSpec::with_fixed([(0, -0.1)]).is_err());
        let x = DMatrix::from_element(3, 2, 0.5);
        let y = DVector::from_element(3, 0.3);
        let spec = ConstraintSpec::with_fixed([(5, 0.1)]).unwrap();
        assert!(solve_simplex(&y, &x, &spec).is_err());
    }

    #[test]
    fn grid_guard() {
        let x = DMatrix::from_element(3, 6, 0.2);
        let y = DVector::from_element(3, 0.3);
        assert!(matches!(
            brute_force_simplex(&y, &x, &ConstraintSpec::free(), 1e-3),
            Err(Error::GridTooLarge { .. })
        ));
    }

    #[test]
    fn grid_finds_exact_lattice_point() {
        let x = DMatrix::from_row_slice(3, 2, &[0.5, 0.1, 0.3, 0.2, 0.2, 0.7]);
        let y = &x * DVector::from_column_slice(&[0.3, 0.7]);
        let g = brute_force_simplex(&y, &x, &ConstraintSpec::free(), 1e-3).unwrap();
        assert!((g[0] - 0.3).abs() < 1e-12 && (g[1] - 0.7).abs() < 1e-12);
        let r = solve_simplex(&y, &x, &ConstraintSpec::free()).unwrap();
        assert!((r.beta[0] - 0.3).abs() < 1e-12);
    }
}
