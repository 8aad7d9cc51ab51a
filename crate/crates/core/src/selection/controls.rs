//! Selection-control regressors from first-stage entry probabilities.
//!
//! All three families are polynomials in `Euler - ln P`, which is the conditional
//! mean of a Gumbel shock given that it exceeds `-ln P`; the Heckman family is the
//! first power of the one-type term.

use nalgebra::DMatrix;

use super::data::DemandRows;
use super::{ControlFamily, ControlSpec};
use crate::error::{Error, Result};
use crate::mixture::{EntryData, MixtureModel, PROB_CLIP};
use crate::EULER;

#[derive(Clone, Debug, PartialEq)]
pub struct ControlMatrix {
    /// One row per entrant row.
    pub values: DMatrix<f64>,
    pub names: Vec<String>,
    /// Probabilities clipped into `[PROB_CLIP, 1 - PROB_CLIP]`.
    pub clipped: usize,
}

/// Build the control block `h_jt` for every entrant row.
///
/// `first_stage` must have one type for the Heckman and semiparametric families.
/// With constant type weights the zero-power mixture terms `f_k` are constants and
/// are absorbed by the firm effects; with `x`-dependent weights they are added for
/// types `2..=K`.
pub fn build_controls(
    first_stage: Option<&MixtureModel>,
    data: &EntryData,
    rows: &DemandRows,
    spec: &ControlSpec,
) -> Result<ControlMatrix> {
    spec.validate()?;
    let n = rows.len();
    if spec.family == ControlFamily::None {
        return Ok(ControlMatrix { values: DMatrix::zeros(n, 0), names: Vec::new(), clipped: 0 });
    }
    let model = first_stage.ok_or_else(|| Error::InvalidParameter("selection controls need a first-stage fit".into()))?;
    if model.basis.n_covariates != data.covariates.ncols() {
        return Err(Error::dim("first-stage covariates", model.basis.n_covariates, data.covariates.ncols()));
    }
    if model.n_firms() != data.n_firms() {
        return Err(Error::dim("first-stage firms", model.n_firms(), data.n_firms()));
    }
    if spec.family != ControlFamily::Mixture && model.k != 1 {
        return Err(Error::InvalidParameter(format!(
            "{:?} controls need a one-type first stage, got K = {}",
            spec.family, model.k
        )));
    }
    let k = model.k;
    let powers = spec.powers();
    let with_level = spec.family == ControlFamily::Mixture && model.basis.n_mixing_terms() > 1 && k > 1;
    let level_terms = if with_level { k - 1 } else { 0 };
    let per_block = k * powers + level_terms;
    let n_firms = model.n_firms();
    let blocks = if spec.per_firm { n_firms } else { 1 };

    let mut names = Vec::with_capacity(per_block * blocks);
    for b in 0..blocks {
        let prefix = if spec.per_firm { format!("firm{}_", b + 1) } else { String::new() };
        for kk in 0..k {
            for l in 1..=powers {
                names.push(format!("{prefix}type{}_pow{l}", kk + 1));
            }
        }
        for kk in 1..=level_terms {
            names.push(format!("{prefix}type{}_weight", kk + 1));
        }
    }

    let mut values = DMatrix::zeros(n, per_block * blocks);
    let mut clipped = 0;
    let mut cache: Option<(usize, crate::mixture::Prediction)> = None;
    for r in 0..n {
        let t = rows.market[r];
        let j = rows.firm[r];
        if cache.as_ref().is_none_or(|(ct, _)| *ct != t) {
            cache = Some((t, model.predict(&data.covariate_row(t))?));
        }
        let pred = &cache.as_ref().expect("filled above").1;
        let offset = if spec.per_firm { j * per_block } else { 0 };
        for kk in 0..k {
            let mut p = pred.probs[j][kk];
            if p < PROB_CLIP || p > 1.0 - PROB_CLIP {
                clipped += 1;
                p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            }
            let term = EULER - p.ln();
            let w = pred.weights[kk];
            for l in 1..=powers {
                values[(r, offset + kk * powers + l - 1)] = w * term.powi(l as i32);
            }
        }
        for kk in 1..=level_terms {
            values[(r, offset + k * powers + kk - 1)] = pred.weights[kk];
        }
    }
    Ok(ControlMatrix { values, names, clipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::{Basis, BasisSpec};

    fn setup() -> (EntryData, DemandRows) {
        let entries = vec![vec![true, true, false], vec![false, true, true]];
        let cov = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let data = EntryData::new(entries, cov, vec!["z".into()]).unwrap();
        let rows = DemandRows {
            market: vec![0, 0, 1, 1],
            firm: vec![0, 1, 1, 2],
            price: vec![1.0; 4],
            share: vec![0.2; 4],
            s0: vec![0.6; 4],
            y: vec![0.0; 4],
            within: vec![0.0; 4],
        };
        (data, rows)
    }

    #[test]
    fn heckman_at_half() {
        let (data, rows) = setup();
        let basis = Basis::fit(&BasisSpec::default(), &data).unwrap();
        let model = MixtureModel::zeros(1, 3, basis);
        let c = build_controls(Some(&model), &data, &rows, &ControlSpec::new(ControlFamily::HeckmanLogit, 3)).unwrap();
        assert_eq!(c.values.ncols(), 3);
        assert!((c.values[(0, 0)] - (crate::EULER + 2f64.ln())).abs() < 1e-12);
        assert_eq!(c.values[(0, 1)], 0.0);
        assert!((c.values[(3, 2)] - (EULER + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn one_type_mixture_equals_semiparametric() {
        let (data, rows) = setup();
        let basis = Basis::fit(&BasisSpec::default(), &data).unwrap();
        let mut model = MixtureModel::zeros(1, 3, basis);
        model.gamma_p[1][0] = vec![0.4, -1.1];
        let semi = build_controls(Some(&model), &data, &rows, &ControlSpec::new(ControlFamily::Semiparametric, 3)).unwrap();
        let mix = build_controls(Some(&model), &data, &rows, &ControlSpec::new(ControlFamily::Mixture, 3)).unwrap();
        assert_eq!(semi.values, mix.values);
    }

    #[test]
    fn control_count_matches_spec_arithmetic() {
        let spec = ControlSpec::new(ControlFamily::Mixture, 3);
        assert_eq!(spec.n_controls(3, 6), 54);
        assert_eq!(ControlSpec::new(ControlFamily::Semiparametric, 3).n_controls(1, 6), 18);
        assert_eq!(ControlSpec::new(ControlFamily::HeckmanLogit, 3).n_controls(1, 6), 6);
    }

    #[test]
    fn heckman_needs_one_type() {
        let (data, rows) = setup();
        let basis = Basis::fit(&BasisSpec::default(), &data).unwrap();
        let model = MixtureModel::zeros(2, 3, basis);
        assert!(build_controls(Some(&model), &data, &rows, &ControlSpec::new(ControlFamily::HeckmanLogit, 3)).is_err());
        assert!(build_controls(None, &data, &rows, &ControlSpec::new(ControlFamily::Mixture, 3)).is_err());
    }
}
