//! Identification check: after removing what the selection controls explain, the
//! fitted endogenous regressors and the exogenous characteristics must still vary
//! independently.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::linalg::{collinear_columns, column_sd, demean_by_group, hstack, project, residualize, select_columns, COLLINEARITY_TOL};

/// Largest residual eigenvalue, relative to the unit-variance columns, that still
/// counts as no variation at all.
const NO_VARIATION: f64 = 1e-12;

fn centered(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows() as f64;
    let mut out = m.clone();
    for mut c in out.column_iter_mut() {
        let mean = c.sum() / n;
        c.add_scalar_mut(-mean);
    }
    out
}

/// Smallest over largest eigenvalue of `Z~'Z~ / n`, where `Z = [fitted_endog, exog]`
/// with columns centered and scaled to unit standard deviation and `Z~` is its
/// residual on the centered controls. Zero when a column has no variation or the
/// controls explain every column.
pub fn identification_ratio(fitted_endog: &DMatrix<f64>, exog: &DMatrix<f64>, controls: &DMatrix<f64>) -> Result<f64> {
    let z = hstack(&[fitted_endog, exog]);
    let n = z.nrows();
    if n == 0 || z.ncols() == 0 {
        return Ok(0.0);
    }
    let sd = column_sd(&z);
    if sd.iter().any(|&s| !(s > 0.0)) {
        return Ok(0.0);
    }
    let z = centered(&z);
    let scaled = DMatrix::from_fn(n, z.ncols(), |i, j| z[(i, j)] / sd[j]);
    let controls = centered(controls);
    let keep: Vec<usize> = {
        let bad = collinear_columns(&controls, COLLINEARITY_TOL);
        (0..controls.ncols()).filter(|c| !bad.contains(c)).collect()
    };
    let resid = residualize(&select_columns(&controls, &keep), &scaled)?;
    let m = resid.transpose() * &resid / n as f64;
    let m = (&m + m.transpose()) * 0.5;
    let eig = m.symmetric_eigen().eigenvalues;
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(if max > NO_VARIATION { (min / max).max(0.0) } else { 0.0 })
}

/// Full diagnostic from raw blocks: absorb group effects (or include an intercept
/// without groups), form the first-stage fitted values of `endog` from instruments
/// and included regressors (dropping collinear columns instead of failing), then
/// compute [`identification_ratio`].
pub fn identification_diagnostic(
    endog: &DMatrix<f64>,
    exog: &DMatrix<f64>,
    controls: &DMatrix<f64>,
    instruments: &DMatrix<f64>,
    groups: Option<&[usize]>,
) -> Result<f64> {
    let within = |m: &DMatrix<f64>| match groups {
        Some(g) => demean_by_group(m, g),
        None => m.clone(),
    };
    let (endog, exog, controls, instruments) = (within(endog), within(exog), within(controls), within(instruments));
    let constant = DMatrix::from_element(endog.nrows(), usize::from(groups.is_none()), 1.0);
    let z = hstack(&[&constant, &instruments, &exog, &controls]);
    let bad = collinear_columns(&z, COLLINEARITY_TOL);
    let keep: Vec<usize> = (0..z.ncols()).filter(|c| !bad.contains(c)).collect();
    let fitted = project(&select_columns(&z, &keep), &endog)?;
    identification_ratio(&fitted, &exog, &controls)
}
