//! Second step end to end: rows, controls, instruments, 2SLS.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::controls::{build_controls, ControlMatrix};
use super::data::{build_dependent, DemandRows};
use super::diagnostic::identification_diagnostic;
use super::instruments::{build_instruments, InstrumentSet};
use super::iv::{tsls_estimate, IvInput, WEAK_F};
use super::{ControlFamily, ControlSpec, GmmResult};
use crate::error::{Error, Result};
use crate::mixture::{EntryData, MixtureModel};
use crate::simulate::MarketObservation;

/// Identification ratio below which estimates carry a warning.
pub const IDENTIFICATION_WARN: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Price and within share treated as exogenous.
    Ols,
    Tsls,
}

fn default_instruments() -> InstrumentSet {
    InstrumentSet::RivalCharacteristics
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSpec {
    pub estimator: Estimator,
    pub controls: ControlSpec,
    #[serde(default = "default_instruments")]
    pub instruments: InstrumentSet,
    /// Characteristics (0-based columns of `x`) that enter mean utility.
    pub demand_vars: Vec<usize>,
    /// Absorb firm fixed effects.
    #[serde(default = "yes")]
    pub firm_effects: bool,
}

impl DemandSpec {
    pub fn needs_first_stage(&self) -> bool {
        self.controls.family != ControlFamily::None
    }
}

pub fn theta_names(demand_vars: &[usize]) -> Vec<String> {
    let mut names = vec!["alpha".to_string(), "sigma".to_string()];
    names.extend(demand_vars.iter().map(|v| format!("beta_x_{}", v + 1)));
    names
}

/// Estimate the demand equation on entrant rows with the given first stage.
pub fn estimate_demand(
    observations: &[MarketObservation],
    first_stage: Option<&MixtureModel>,
    spec: &DemandSpec,
) -> Result<GmmResult> {
    let rows = build_dependent(observations)?;
    estimate_on_rows(observations, &rows, first_stage, spec)
}

/// Regressor blocks of the demand equation on entrant rows.
struct Blocks {
    y: DVector<f64>,
    endog: DMatrix<f64>,
    endog_names: Vec<String>,
    exog: DMatrix<f64>,
    exog_names: Vec<String>,
    controls: ControlMatrix,
    instruments: DMatrix<f64>,
    instrument_names: Vec<String>,
}

fn blocks(
    observations: &[MarketObservation],
    rows: &DemandRows,
    first_stage: Option<&MixtureModel>,
    spec: &DemandSpec,
) -> Result<Blocks> {
    if rows.is_empty() {
        return Err(Error::Data("no entrant observations".into()));
    }
    let n = rows.len();
    let n_d = spec.demand_vars.len();
    let controls = if spec.needs_first_stage() {
        let data = EntryData::from_observations(observations)?;
        build_controls(first_stage, &data, rows, &spec.controls)?
    } else {
        ControlMatrix { values: DMatrix::zeros(n, 0), names: Vec::new(), clipped: 0 }
    };
    let endog = DMatrix::from_fn(n, 2, |r, c| if c == 0 { rows.price[r] } else { rows.within[r] });
    let endog_names = vec!["price".to_string(), "within_share".to_string()];
    let (instruments, instrument_names) = match spec.estimator {
        Estimator::Ols => (endog.clone(), endog_names.clone()),
        Estimator::Tsls => build_instruments(observations, rows, spec.instruments, &spec.demand_vars)?,
    };
    Ok(Blocks {
        y: DVector::from_column_slice(&rows.y),
        endog,
        endog_names,
        exog: DMatrix::from_fn(n, n_d, |r, c| observations[rows.market[r]].x[rows.firm[r]][spec.demand_vars[c]]),
        exog_names: spec.demand_vars.iter().map(|v| format!("x_{}", v + 1)).collect(),
        controls,
        instruments,
        instrument_names,
    })
}

/// Identification ratio of a specification without estimating it: the normalized
/// smallest eigenvalue of the fitted endogenous regressors and exogenous
/// characteristics after partialling out the selection controls. Unlike
/// [`estimate_demand`] this never fails on collinearity; near zero means the
/// demand parameters are not separately identified from the selection term.
pub fn identification_check(
    observations: &[MarketObservation],
    first_stage: Option<&MixtureModel>,
    spec: &DemandSpec,
) -> Result<f64> {
    let rows = build_dependent(observations)?;
    let b = blocks(observations, &rows, first_stage, spec)?;
    let groups = spec.firm_effects.then_some(rows.firm.as_slice());
    identification_diagnostic(&b.endog, &b.exog, &b.controls.values, &b.instruments, groups)
}

pub(crate) fn estimate_on_rows(
    observations: &[MarketObservation],
    rows: &DemandRows,
    first_stage: Option<&MixtureModel>,
    spec: &DemandSpec,
) -> Result<GmmResult> {
    let n_d = spec.demand_vars.len();
    let Blocks { y, endog, endog_names, exog, exog_names, controls, instruments, instrument_names } =
        blocks(observations, rows, first_stage, spec)?;
    let groups = spec.firm_effects.then_some(rows.firm.as_slice());
    let fit = tsls_estimate(&IvInput {
        y: &y,
        endog: &endog,
        endog_names: &endog_names,
        exog: &exog,
        exog_names: &exog_names,
        controls: &controls.values,
        control_names: &controls.names,
        instruments: &instruments,
        instrument_names: &instrument_names,
        groups,
    })?;

    // coefficient layout: [endog (2), optional const, exog, controls]
    let offset = if groups.is_none() { 1 } else { 0 };
    let mut idx: Vec<usize> = vec![0, 1];
    idx.extend((0..n_d).map(|c| 2 + offset + c));
    let theta: Vec<f64> = idx.iter().map(|&i| fit.coef[i]).collect();
    let cov: Vec<Vec<f64>> = idx.iter().map(|&a| idx.iter().map(|&b| fit.cov[(a, b)]).collect()).collect();
    let se = idx.iter().map(|&i| fit.cov[(i, i)].max(0.0).sqrt()).collect();
    let ctrl_start = 2 + offset + n_d;
    let control_coefs = fit.coef[ctrl_start..].to_vec();
    let control_names = fit.names[ctrl_start..].to_vec();

    // OLS instruments the regressors with themselves; first-stage statistics are meaningless
    let (first_stage_f, cragg_donald) = match spec.estimator {
        Estimator::Ols => (vec![f64::NAN; fit.first_stage_f.len()], f64::NAN),
        Estimator::Tsls => (fit.first_stage_f.clone(), fit.cragg_donald),
    };
    let weak = spec.estimator == Estimator::Tsls && first_stage_f.iter().any(|&f| f < WEAK_F);
    let mut warnings = Vec::new();
    if weak {
        warnings.push(format!("weak instruments: first-stage F = {first_stage_f:?}"));
    }
    if !fit.dropped_controls.is_empty() {
        warnings.push(format!("dropped {} collinear control columns", fit.dropped_controls.len()));
    }
    if !fit.dropped_instruments.is_empty() {
        warnings.push(format!("dropped collinear instruments {:?}", fit.dropped_instruments));
    }
    if fit.identification_ratio < IDENTIFICATION_WARN {
        warnings.push(format!(
            "regressors nearly collinear with the selection controls (identification ratio {:.3e})",
            fit.identification_ratio
        ));
    }
    if controls.clipped > 0 {
        warnings.push(format!("{} first-stage probabilities clipped", controls.clipped));
    }
    Ok(GmmResult {
        theta,
        theta_names: theta_names(&spec.demand_vars),
        cov,
        se,
        n_controls: control_coefs.len(),
        control_coefs,
        control_names,
        dropped_controls: fit.dropped_controls,
        dropped_instruments: fit.dropped_instruments,
        n_instruments: fit.n_instruments,
        first_stage_f,
        cragg_donald,
        weak_instruments: weak,
        identification_ratio: fit.identification_ratio,
        residuals: fit.residuals,
        n_obs: fit.n_obs,
        clipped_probabilities: controls.clipped,
        warnings,
    })
}
