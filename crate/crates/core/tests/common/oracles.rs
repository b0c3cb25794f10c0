//! Reference computations that share no code with the library solver.

use nalgebra::{DMatrix, DVector};

/// Equality-constrained least squares through the KKT system
/// `[X'X 1; 1' 0] [beta; lambda] = [X'y; total]`.
pub fn kkt_equality(y: &DVector<f64>, x: &DMatrix<f64>, total: f64) -> Option<DVector<f64>> {
    let j = x.ncols();
    let mut k = DMatrix::zeros(j + 1, j + 1);
    k.view_mut((0, 0), (j, j)).copy_from(&x.tr_mul(x));
    for i in 0..j {
        k[(i, j)] = 1.0;
        k[(j, i)] = 1.0;
    }
    let mut rhs = DVector::zeros(j + 1);
    rhs.rows_mut(0, j).copy_from(&x.tr_mul(y));
    rhs[j] = total;
    let sol = k.lu().solve(&rhs)?;
    Some(sol.rows(0, j).into_owned())
}

/// Global simplex least squares by enumerating every support set, solving the
/// equality problem on it and keeping the best feasible candidate.
pub fn exhaustive_simplex(y: &DVector<f64>, x: &DMatrix<f64>, total: f64) -> (Vec<f64>, f64) {
    let j = x.ncols();
    let mut best = (vec![0.0; j], f64::INFINITY);
    for mask in 1u32..(1 << j) {
        let cols: Vec<usize> = (0..j).filter(|c| mask >> c & 1 == 1).collect();
        let sub = DMatrix::from_fn(x.nrows(), cols.len(), |r, c| x[(r, cols[c])]);
        let Some(b) = kkt_equality(y, &sub, total) else { continue };
        if b.iter().any(|&v| v < -1e-12) {
            continue;
        }
        let mut beta = vec![0.0; j];
        for (a, &c) in cols.iter().enumerate() {
            beta[c] = b[a].max(0.0);
        }
        let obj = (y - x * DVector::from_column_slice(&beta)).norm_squared();
        if obj < best.1 {
            best = (beta, obj);
        }
    }
    best
}
