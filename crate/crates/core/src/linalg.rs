//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance used to declare a column linearly dependent on the ones before it.
pub const COLLINEARITY_TOL: f64 = 1e-9;

/// Relative norm below which a demeaned column counts as absorbed by the groups.
const ABSORBED_TOL: f64 = 1e-12;

/// Indices of columns whose component orthogonal to all preceding columns is
/// negligible relative to the column norm (`|R_ii| <= tol * ||x_i||` in a QR factorisation).
///
/// Columns flagged this way are dropped before later columns are tested, so
/// the returned set leaves a full-column-rank remainder.
pub fn collinear_columns(x: &DMatrix<f64>, tol: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    let mut dropped = Vec::new();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let norm = col.norm();
        if norm == 0.0 || !norm.is_finite() {
            dropped.push(j);
            continue;
        }
        // Two passes of modified Gram-Schmidt for stability.
        let mut v = col.clone();
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let rn = v.norm();
        if rn <= tol * norm {
            dropped.push(j);
        } else {
            basis.push(v / rn);
            kept.push(j);
        }
    }
    dropped
}

/// Keep only the listed columns.
pub fn select_columns(x: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), cols.len(), |i, j| x[(i, cols[j])])
}

/// Horizontal concatenation; empty blocks are skipped.
pub fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let nrows = blocks.iter().map(|b| b.nrows()).max().unwrap_or(0);
    let ncols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(nrows, ncols);
    let mut c = 0;
    for b in blocks {
        if b.ncols() == 0 {
            continue;
        }
        out.columns_mut(c, b.ncols()).copy_from(b);
        c += b.ncols();
    }
    out
}

/// Least-squares coefficients of `y` on full-column-rank `x` via thin QR. Columns
/// are scaled to unit norm first, so the rank check does not depend on units.
pub fn least_squares(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != y.nrows() {
        return Err(Error::dim("least-squares rows", x.nrows(), y.nrows()));
    }
    if x.ncols() == 0 {
        return Ok(DMatrix::zeros(0, y.ncols()));
    }
    if x.nrows() < x.ncols() {
        return Err(Error::Singular("least squares (fewer rows than columns)"));
    }
    let norms: Vec<f64> = x.column_iter().map(|c| c.norm()).collect();
    if norms.iter().any(|&n| n == 0.0 || !n.is_finite()) {
        return Err(Error::Singular("least squares"));
    }
    let mut xs = x.clone();
    for (j, &n) in norms.iter().enumerate() {
        xs.column_mut(j).scale_mut(1.0 / n);
    }
    let qr = xs.qr();
    let r = qr.r();
    if r.diagonal().iter().any(|v| v.abs() <= 1e-13) {
        return Err(Error::Singular("least squares"));
    }
    let qty = qr.q().transpose() * y;
    let mut b = r.solve_upper_triangular(&qty).ok_or(Error::Singular("least squares"))?;
    for (j, &n) in norms.iter().enumerate() {
        b.row_mut(j).scale_mut(1.0 / n);
    }
    Ok(b)
}

/// Residuals of each column of `y` after projection on the column space of `x`.
/// An `x` with zero columns leaves `y` unchanged.
pub fn residualize(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() == 0 {
        return Ok(y.clone());
    }
    let b = least_squares(x, y)?;
    Ok(y - x * b)
}

/// Fitted values of each column of `y` projected on `x`.
pub fn project(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() == 0 {
        return Ok(DMatrix::zeros(y.nrows(), y.ncols()));
    }
    let b = least_squares(x, y)?;
    Ok(x * b)
}

/// Subtract group means from every column (the within transformation). A column
/// that is constant within every group comes back as exact zeros rather than
/// rounding noise, so later rank checks drop it.
pub fn demean_by_group(m: &DMatrix<f64>, groups: &[usize]) -> DMatrix<f64> {
    assert_eq!(m.nrows(), groups.len());
    let n_groups = groups.iter().copied().max().map_or(0, |g| g + 1);
    let mut sums = DMatrix::<f64>::zeros(n_groups, m.ncols());
    let mut counts = vec![0usize; n_groups];
    for (i, &g) in groups.iter().enumerate() {
        counts[g] += 1;
        for j in 0..m.ncols() {
            sums[(g, j)] += m[(i, j)];
        }
    }
    let mut out = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
        let g = groups[i];
        m[(i, j)] - sums[(g, j)] / counts[g] as f64
    });
    for j in 0..m.ncols() {
        if out.column(j).norm() <= ABSORBED_TOL * m.column(j).norm() {
            out.column_mut(j).fill(0.0);
        }
    }
    out
}

/// Solve a symmetric positive-definite system, adding a small ridge if Cholesky fails.
/// Returns the solution and whether a ridge was needed.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64) -> Result<(DVector<f64>, bool)> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok((ch.solve(b), false));
    }
    let scale = a.diagonal().iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let mut regularised = a.clone();
    for i in 0..a.nrows() {
        regularised[(i, i)] += ridge * scale;
    }
    regularised
        .cholesky()
        .map(|ch| (ch.solve(b), true))
        .ok_or(Error::Singular("symmetric solve"))
}

/// `(X'X)^-1` for full-column-rank `x`, from the triangular factor of a thin QR so
/// that the condition number is not squared.
pub fn gram_inverse(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = x.ncols();
    if x.nrows() < p {
        return Err(Error::Singular("Gram inverse (fewer rows than columns)"));
    }
    let norms: Vec<f64> = x.column_iter().map(|c| c.norm()).collect();
    if norms.iter().any(|&n| n == 0.0 || !n.is_finite()) {
        return Err(Error::Singular("Gram inverse"));
    }
    let mut xs = x.clone();
    for (j, &n) in norms.iter().enumerate() {
        xs.column_mut(j).scale_mut(1.0 / n);
    }
    let r = xs.qr().r();
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or(Error::Singular("Gram inverse"))?;
    let g = &r_inv * r_inv.transpose();
    let g = DMatrix::from_fn(p, p, |a, b| g[(a, b)] / (norms[a] * norms[b]));
    Ok((&g + g.transpose()) * 0.5)
}

/// Column standard deviations (population form).
pub fn column_sd(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows() as f64;
    (0..m.ncols())
        .map(|j| {
            let c = m.column(j);
            let mean = c.sum() / n;
            (c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gram_inverse_matches_direct_inverse() {
        let x = DMatrix::from_fn(30, 3, |i, j| ((i * (j + 2)) as f64 * 0.37).sin() + j as f64);
        let direct = (x.transpose() * &x).try_inverse().unwrap();
        assert!((gram_inverse(&x).unwrap() - direct).amax() < 1e-10);
    }

    #[test]
    fn duplicate_column_is_flagged() {
        let x = DMatrix::from_row_slice(4, 3, &[1.0, 2.0, 2.0, 1.0, 3.0, 3.0, 1.0, 5.0, 5.0, 1.0, 7.0, 7.0]);
        assert_eq!(collinear_columns(&x, COLLINEARITY_TOL), vec![2]);
    }

    #[test]
    fn least_squares_recovers_exact_fit() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DMatrix::from_column_slice(4, 1, &[1.0, 3.0, 5.0, 7.0]);
        let b = least_squares(&x, &y).unwrap();
        assert!((b[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((b[(1, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn least_squares_accepts_columns_on_very_different_scales() {
        let n = 50;
        let x = DMatrix::from_fn(n, 3, |i, j| {
            let t = i as f64 / n as f64;
            [1.0e3 * (1.0 + t), 1.0e-9 * t * t, (3.0 * t).sin()][j]
        });
        let beta = DMatrix::from_column_slice(3, 1, &[0.5, 2.0e8, -1.0]);
        let y = &x * &beta;
        let b = least_squares(&x, &y).unwrap();
        for j in 0..3 {
            assert!((b[(j, 0)] / beta[(j, 0)] - 1.0).abs() < 1e-8, "{j}: {}", b[(j, 0)]);
        }
        let g = gram_inverse(&x).unwrap();
        let direct = (x.transpose() * &x).try_inverse().unwrap();
        assert!(((g[(1, 1)] - direct[(1, 1)]) / direct[(1, 1)]).abs() < 1e-6);
    }

    #[test]
    fn demeaning_zeroes_group_means() {
        let m = DMatrix::from_column_slice(4, 1, &[1.0, 3.0, 10.0, 20.0]);
        let d = demean_by_group(&m, &[0, 0, 1, 1]);
        assert_eq!(d.as_slice(), &[-1.0, 1.0, -5.0, 5.0]);
    }

    #[test]
    fn within_constant_column_demeans_to_exact_zero() {
        // 0.1 + 0.2 + 0.7 is not exactly representable, so naive demeaning leaves noise
        let m = DMatrix::from_column_slice(6, 1, &[0.1, 0.1, 0.1, 0.7, 0.7, 0.7]);
        let d = demean_by_group(&m, &[0, 0, 0, 1, 1, 1]);
        assert!(d.iter().all(|&v| v == 0.0));
        assert_eq!(collinear_columns(&d, COLLINEARITY_TOL), vec![0]);
    }
}
