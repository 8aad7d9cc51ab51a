//! Linear 2SLS with absorbed group effects and robust covariance.

use nalgebra::{DMatrix, DVector};

use super::diagnostic::identification_ratio;
use crate::error::{Error, Result};
use crate::linalg::{collinear_columns, demean_by_group, hstack, least_squares, project, residualize, select_columns, gram_inverse, COLLINEARITY_TOL};

/// Weak-instrument threshold on the first-stage partial F.
pub const WEAK_F: f64 = 10.0;

/// Inputs to [`tsls_estimate`]. All blocks have one row per observation.
#[derive(Clone, Copy, Debug)]
pub struct IvInput<'a> {
    pub y: &'a DVector<f64>,
    pub endog: &'a DMatrix<f64>,
    pub endog_names: &'a [String],
    pub exog: &'a DMatrix<f64>,
    pub exog_names: &'a [String],
    pub controls: &'a DMatrix<f64>,
    pub control_names: &'a [String],
    /// Excluded instruments.
    pub instruments: &'a DMatrix<f64>,
    pub instrument_names: &'a [String],
    /// Group labels for absorbed fixed effects; `None` adds an intercept instead.
    pub groups: Option<&'a [usize]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IvFit {
    /// Coefficients on `[endog, exog, kept controls]`.
    pub coef: Vec<f64>,
    pub names: Vec<String>,
    /// Heteroskedasticity-robust covariance of `coef`.
    pub cov: DMatrix<f64>,
    pub kept_controls: Vec<usize>,
    pub dropped_controls: Vec<String>,
    pub dropped_instruments: Vec<String>,
    pub n_instruments: usize,
    pub first_stage_f: Vec<f64>,
    pub cragg_donald: f64,
    pub identification_ratio: f64,
    pub residuals: Vec<f64>,
    pub n_obs: usize,
}

fn names_of(names: &[String], idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&i| names.get(i).cloned().unwrap_or_else(|| format!("column {i}"))).collect()
}

/// 2SLS of `y` on `[endog, exog, controls]` with excluded instruments, after
/// absorbing group effects by the within transformation.
///
/// Control columns collinear with the fixed effects, the exogenous regressors or
/// earlier controls are dropped and reported; collinear instruments likewise.
/// Collinearity among the exogenous regressors, an endogenous regressor in the span
/// of the rest, or fewer usable instruments than endogenous regressors is an error.
/// Passing the endogenous block as its own instrument gives OLS.
pub fn tsls_estimate(input: &IvInput<'_>) -> Result<IvFit> {
    let n = input.y.len();
    for (what, m) in [
        ("endogenous rows", input.endog),
        ("exogenous rows", input.exog),
        ("control rows", input.controls),
        ("instrument rows", input.instruments),
    ] {
        if m.nrows() != n {
            return Err(Error::dim(what, n, m.nrows()));
        }
    }
    let y = DMatrix::from_column_slice(n, 1, input.y.as_slice());
    let (y, endog, exog0, controls, instruments, absorbed) = match input.groups {
        Some(g) => {
            if g.len() != n {
                return Err(Error::dim("group labels", n, g.len()));
            }
            let mut distinct = g.to_vec();
            distinct.sort_unstable();
            distinct.dedup();
            (
                demean_by_group(&y, g),
                demean_by_group(input.endog, g),
                demean_by_group(input.exog, g),
                demean_by_group(input.controls, g),
                demean_by_group(input.instruments, g),
                distinct.len(),
            )
        }
        None => (
            y,
            input.endog.clone(),
            input.exog.clone(),
            input.controls.clone(),
            input.instruments.clone(),
            0,
        ),
    };
    let mut exog_names: Vec<String> = input.exog_names.to_vec();
    let exog = if input.groups.is_none() {
        exog_names.insert(0, "const".into());
        hstack(&[&DMatrix::from_element(n, 1, 1.0), &exog0])
    } else {
        exog0
    };
    let n_endog = endog.ncols();
    let n_exog = exog.ncols();

    // controls that add nothing beyond the fixed effects and exogenous regressors
    let w_all = hstack(&[&exog, &controls]);
    let flagged = collinear_columns(&w_all, COLLINEARITY_TOL);
    let bad_exog: Vec<usize> = flagged.iter().copied().filter(|&c| c < n_exog).collect();
    if !bad_exog.is_empty() {
        return Err(Error::RankDeficient { columns: names_of(&exog_names, &bad_exog) });
    }
    let dropped_ctrl: Vec<usize> = flagged.iter().map(|&c| c - n_exog).collect();
    let kept_controls: Vec<usize> = (0..controls.ncols()).filter(|c| !dropped_ctrl.contains(c)).collect();
    let controls_kept = select_columns(&controls, &kept_controls);
    let w = hstack(&[&exog, &controls_kept]);

    let zw = hstack(&[&w, &instruments]);
    let flagged_z = collinear_columns(&zw, COLLINEARITY_TOL);
    let dropped_inst: Vec<usize> = flagged_z.iter().map(|&c| c - w.ncols()).collect();
    let kept_inst: Vec<usize> = (0..instruments.ncols()).filter(|c| !dropped_inst.contains(c)).collect();
    let z_ex = select_columns(&instruments, &kept_inst);
    let q = z_ex.ncols();
    if q < n_endog {
        let mut columns = names_of(input.instrument_names, &dropped_inst);
        columns.push(format!("{q} usable instruments for {n_endog} endogenous regressors"));
        return Err(Error::RankDeficient { columns });
    }

    let x = hstack(&[&endog, &w]);
    let bad_x = collinear_columns(&x, COLLINEARITY_TOL);
    if !bad_x.is_empty() {
        let mut all_names: Vec<String> = input.endog_names.to_vec();
        all_names.extend(exog_names.iter().cloned());
        all_names.extend(names_of(input.control_names, &kept_controls));
        return Err(Error::RankDeficient { columns: names_of(&all_names, &bad_x) });
    }
    let z = hstack(&[&z_ex, &w]);
    let x_hat = project(&z, &x)?;
    let b = least_squares(&x_hat, &y)?;
    let u = &y - &x * &b;

    let p = x.ncols();
    let bread = gram_inverse(&x_hat)?;
    let mut meat = DMatrix::<f64>::zeros(p, p);
    for i in 0..n {
        let xi = x_hat.row(i);
        let u2 = u[(i, 0)] * u[(i, 0)];
        for a in 0..p {
            let va = u2 * xi[a];
            for c in a..p {
                meat[(a, c)] += va * xi[c];
            }
        }
    }
    for a in 0..p {
        for c in 0..a {
            meat[(a, c)] = meat[(c, a)];
        }
    }
    let dof = n as f64 / (n as f64 - (p + absorbed) as f64).max(1.0);
    let mut cov = &bread * meat * &bread * dof;
    cov = (&cov + cov.transpose()) * 0.5;

    // first stage after partialling out the included regressors
    let e_t = residualize(&w, &endog)?;
    let z_t = residualize(&w, &z_ex)?;
    let e_fit = project(&z_t, &e_t)?;
    let df2 = (n as f64 - (q + w.ncols() + absorbed) as f64).max(1.0);
    let first_stage_f = (0..n_endog)
        .map(|k| {
            let tss = e_t.column(k).norm_squared();
            let ess = e_fit.column(k).norm_squared();
            if tss <= 0.0 {
                return 0.0;
            }
            let r2 = (ess / tss).min(1.0);
            (r2 / q as f64) / ((1.0 - r2).max(f64::MIN_POSITIVE) / df2)
        })
        .collect();
    let v = &e_t - &e_fit;
    let sigma_vv = v.transpose() * &v / df2;
    let s = e_fit.transpose() * &e_fit;
    let cragg_donald = match sigma_vv.clone().cholesky() {
        Some(ch) => {
            let l = ch.l();
            let linv = l.try_inverse().ok_or(Error::Singular("first-stage residual covariance"))?;
            let m = &linv * s * linv.transpose() / q as f64;
            let m = (&m + m.transpose()) * 0.5;
            m.symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
        }
        None => f64::INFINITY,
    };

    let fitted_endog = x_hat.columns(0, n_endog).into_owned();
    // all controls, including those dropped for collinearity with the regressors
    let ratio = identification_ratio(&fitted_endog, &exog_input(&exog, input.groups.is_none()), &controls)?;

    let mut names: Vec<String> = input.endog_names.to_vec();
    names.extend(exog_names);
    names.extend(names_of(input.control_names, &kept_controls));
    Ok(IvFit {
        coef: b.column(0).iter().copied().collect(),
        names,
        cov,
        kept_controls,
        dropped_controls: names_of(input.control_names, &dropped_ctrl),
        dropped_instruments: names_of(input.instrument_names, &dropped_inst),
        n_instruments: q,
        first_stage_f,
        cragg_donald,
        identification_ratio: ratio,
        residuals: u.column(0).iter().copied().collect(),
        n_obs: n,
    })
}

/// Exogenous block for the diagnostic: the intercept column (if any) carries no
/// information about the slopes and is left out.
fn exog_input(exog: &DMatrix<f64>, has_const: bool) -> DMatrix<f64> {
    if has_const {
        exog.columns(1, exog.ncols() - 1).into_owned()
    } else {
        exog.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(prefix: &str, k: usize) -> Vec<String> {
        (0..k).map(|i| format!("{prefix}{i}")).collect()
    }

    /// Noiseless data: exactly identified 2SLS must recover the coefficients.
    #[test]
    fn exact_identification_recovers_coefficients() {
        let n = 60;
        let f = |i: usize, a: f64| ((i as f64 + 1.0) * a).sin();
        let z = DMatrix::from_fn(n, 2, |i, c| f(i, 0.7 + c as f64 * 0.31));
        let xg = DMatrix::from_fn(n, 1, |i, _| f(i, 1.9));
        let ctrl = DMatrix::from_fn(n, 1, |i, _| f(i, 2.3));
        let groups: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let endog = DMatrix::from_fn(n, 2, |i, c| z[(i, c)] + 0.5 * z[(i, 1 - c)] + 0.2 * xg[(i, 0)] + f(i, 3.1 + c as f64));
        let fe = [1.0, -2.0, 0.5];
        let y = DVector::from_fn(n, |i, _| {
            -1.5 * endog[(i, 0)] + 0.4 * endog[(i, 1)] + 0.8 * xg[(i, 0)] - 0.3 * ctrl[(i, 0)] + fe[groups[i]]
        });
        let fit = tsls_estimate(&IvInput {
            y: &y,
            endog: &endog,
            endog_names: &names("e", 2),
            exog: &xg,
            exog_names: &names("x", 1),
            controls: &ctrl,
            control_names: &names("c", 1),
            instruments: &z,
            instrument_names: &names("z", 2),
            groups: Some(&groups),
        })
        .unwrap();
        for (got, want) in fit.coef.iter().zip([-1.5, 0.4, 0.8, -0.3]) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
        let c = &fit.cov;
        assert!((c - c.transpose()).abs().max() < 1e-14);
    }

    #[test]
    fn duplicate_control_is_dropped() {
        let n = 40;
        let a = DMatrix::from_fn(n, 1, |i, _| (i as f64 * 0.37).sin());
        let ctrl = DMatrix::from_fn(n, 2, |i, _| (i as f64 * 0.91).cos());
        let y = DVector::from_fn(n, |i, _| 2.0 * a[(i, 0)] + ctrl[(i, 0)]);
        let fit = tsls_estimate(&IvInput {
            y: &y,
            endog: &a,
            endog_names: &names("e", 1),
            exog: &DMatrix::zeros(n, 0),
            exog_names: &[],
            controls: &ctrl,
            control_names: &names("c", 2),
            instruments: &a,
            instrument_names: &names("z", 1),
            groups: None,
        })
        .unwrap();
        assert_eq!(fit.dropped_controls, vec!["c1".to_string()]);
        assert!((fit.coef[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn under_identified_is_an_error() {
        let n = 30;
        let a = DMatrix::from_fn(n, 2, |i, c| (i as f64 * (0.3 + c as f64)).sin());
        let z = DMatrix::from_fn(n, 1, |i, _| (i as f64 * 0.77).cos());
        let y = DVector::from_fn(n, |i, _| a[(i, 0)]);
        let r = tsls_estimate(&IvInput {
            y: &y,
            endog: &a,
            endog_names: &names("e", 2),
            exog: &DMatrix::zeros(n, 0),
            exog_names: &[],
            controls: &DMatrix::zeros(n, 0),
            control_names: &[],
            instruments: &z,
            instrument_names: &names("z", 1),
            groups: None,
        });
        assert!(matches!(r, Err(Error::RankDeficient { .. })));
    }
}
